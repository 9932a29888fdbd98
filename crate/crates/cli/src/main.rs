use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use targetsearch_core::config::ConfigError;
use targetsearch_core::corpus::CorpusError;
use targetsearch_core::jsonl::{parse_record, read_jsonl, write_jsonl, JsonlError, Strictness};
use targetsearch_core::mcts::SearchResult;
use targetsearch_core::pipeline::PipelineError;
use targetsearch_core::runtime::{HttpConfig, TemplateError};
use targetsearch_core::similarity::hit_records;
use targetsearch_core::trace::TraceRecord;
use targetsearch_core::{
    build_baseline_dataset, build_instances, evaluate_run, load_corpus, run_search,
    run_single_shot, validate_instance, AgentEnv, Backend, BaselineInstance, BuilderRules, Corpus,
    HttpBackend, MockBackend, ProblemInstance, RewardMode, ScriptedBackend, SearchConfig,
    SelectionPool, SingleShotMode, TemplateSet, TopkMode,
};

#[derive(Parser)]
#[command(
    name = "targetsearch",
    version,
    about = "Search for protein targets of a query molecule"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus and, optionally, problem instances against it.
    Validate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        instances: Option<PathBuf>,
    },
    /// Build problem instances from a corpus.
    BuildDataset {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write baseline.jsonl (instances without candidate molecules).
        #[arg(long)]
        baseline: bool,
        /// JSON file with builder rules; flags below override it.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        max_candidates: Option<usize>,
        #[arg(long)]
        max_ground_truth_percent: Option<usize>,
    },
    /// Print the ranked similarity hits behind one query's candidate molecules.
    Retrieve {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        query: String,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the search (or a single-shot comparison) for every instance.
    Search(SearchArgs),
    /// Score search results against ground truth.
    Evaluate {
        /// Directory of result JSON files written by `search`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, default_value = "gt", value_parser = parse_topk)]
        topk: TopkMode,
        /// Directory for report.json and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory holding molecules.jsonl, proteins.jsonl and interactions.jsonl.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    molecules: Option<PathBuf>,
    #[arg(long)]
    proteins: Option<PathBuf>,
    #[arg(long)]
    interactions: Option<PathBuf>,
    /// Warn about unknown fields instead of rejecting them.
    #[arg(long)]
    lenient: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Mcts,
    Baseline,
    Enhanced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Scripted,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RewardArg {
    Combined,
    RelativeOnly,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    Reference,
    Candidates,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    instances: PathBuf,
    /// Output directory for results, trees and traces.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mcts")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// JSON document with search settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    k_samples: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    no_molecule_analysis: bool,
    #[arg(long)]
    no_interaction_analysis: bool,
    #[arg(long, value_enum)]
    reward: Option<RewardArg>,
    /// Children per protein-selection expansion.
    #[arg(long)]
    ps_branching: Option<usize>,
    #[arg(long, value_enum)]
    selection_pool: Option<PoolArg>,
    /// Directory of `<template_id>.txt` files overriding the built-in prompts.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Instances searched in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Chat-completions endpoint root for the http backend.
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// JSON array of replies for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
}

fn parse_topk(s: &str) -> Result<TopkMode, String> {
    match s {
        "gt" => Ok(TopkMode::Gt),
        "gt+3" | "gt_plus_3" | "gt-plus-3" => Ok(TopkMode::GtPlus3),
        _ => Err(format!("expected gt or gt+3, got {s:?}")),
    }
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Io(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
            Failure::Backend(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Io(m) | Failure::Backend(m) => f.write_str(m),
        }
    }
}

impl From<JsonlError> for Failure {
    fn from(e: JsonlError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Io(format!("config: {e}"))
    }
}

impl From<TemplateError> for Failure {
    fn from(e: TemplateError) -> Self {
        Failure::Io(e.to_string())
    }
}

fn io_failure(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn pipeline_failure(e: &PipelineError) -> Failure {
    match e {
        PipelineError::Backend(_) | PipelineError::EmptyCompletion(_) => {
            Failure::Backend(e.to_string())
        }
        _ => Failure::Invalid(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Validate { corpus, instances } => cmd_validate(&corpus, instances.as_deref()),
        Command::BuildDataset {
            corpus,
            out,
            baseline,
            rules,
            max_candidates,
            max_ground_truth_percent,
        } => cmd_build_dataset(
            &corpus,
            &out,
            baseline,
            rules.as_deref(),
            max_candidates,
            max_ground_truth_percent,
        ),
        Command::Retrieve { corpus, query, out } => cmd_retrieve(&corpus, &query, out.as_deref()),
        Command::Search(args) => cmd_search(&args),
        Command::Evaluate {
            results,
            instances,
            topk,
            out,
        } => cmd_evaluate(&results, &instances, topk, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

impl CorpusArgs {
    fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        }
    }

    fn path(&self, explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf, Failure> {
        match (explicit, &self.corpus) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(file)),
            (None, None) => Err(Failure::Io(format!(
                "no path for {file}: pass --corpus DIR or the file explicitly"
            ))),
        }
    }

    fn load(&self) -> Result<Corpus, Failure> {
        let corpus = load_corpus(
            &self.path(&self.molecules, "molecules.jsonl")?,
            &self.path(&self.proteins, "proteins.jsonl")?,
            &self.path(&self.interactions, "interactions.jsonl")?,
            self.strictness(),
        )?;
        log::info!(
            "loaded {} molecules, {} proteins, {} interactions",
            corpus.molecules().len(),
            corpus.proteins().len(),
            corpus.interactions().len()
        );
        Ok(corpus)
    }
}

/// Instances from a file of full or baseline records.
fn read_instances(path: &Path, strictness: Strictness) -> Result<Vec<ProblemInstance>, Failure> {
    match read_jsonl::<ProblemInstance>(path, strictness) {
        Ok(v) => Ok(v),
        Err(e) if e.is_io() => Err(e.into()),
        Err(full) => match read_jsonl::<BaselineInstance>(path, strictness) {
            Ok(v) => Ok(v
                .into_iter()
                .map(|b| ProblemInstance {
                    query_molecule_id: b.query_molecule_id,
                    candidate_molecule_ids: Default::default(),
                    candidate_protein_ids: b.candidate_protein_ids,
                    ground_truth_protein_ids: b.ground_truth_protein_ids,
                })
                .collect()),
            Err(_) => Err(full.into()),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

/// File-name-safe form of an id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_validate(args: &CorpusArgs, instances: Option<&Path>) -> Result<(), Failure> {
    let corpus = args.load()?;
    let mut summary = format!(
        "{} molecules, {} proteins, {} interactions",
        corpus.molecules().len(),
        corpus.proteins().len(),
        corpus.interactions().len()
    );
    let mut bad = 0;
    if let Some(path) = instances {
        let instances: Vec<ProblemInstance> = read_jsonl(path, args.strictness())?;
        for (i, inst) in instances.iter().enumerate() {
            for v in validate_instance(inst, &corpus) {
                bad += 1;
                println!(
                    "{}:{}: {}: {}",
                    path.display(),
                    i + 1,
                    serde_json::to_string(&v.rule).unwrap().trim_matches('"'),
                    v.message
                );
            }
        }
        summary.push_str(&format!(", {} instances", instances.len()));
    }
    if bad > 0 {
        return Err(Failure::Invalid(format!("{bad} violation(s) found")));
    }
    println!("ok: {summary}");
    Ok(())
}

fn cmd_build_dataset(
    args: &CorpusArgs,
    out: &Path,
    baseline: bool,
    rules_path: Option<&Path>,
    max_candidates: Option<usize>,
    max_gt_percent: Option<usize>,
) -> Result<(), Failure> {
    let corpus = args.load()?;
    let mut rules = match rules_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            parse_record::<BuilderRules>(&text, Strictness::Strict).map_err(|e| io_failure(p, e))?
        }
        None => BuilderRules::default(),
    };
    if let Some(n) = max_candidates {
        rules.max_candidate_molecules = n;
    }
    if let Some(n) = max_gt_percent {
        rules.max_ground_truth_percent = n;
    }
    let (instances, report) = build_instances(&corpus, &rules);
    create_dir(out)?;
    write_jsonl(&out.join("instances.jsonl"), &instances)?;
    if baseline {
        write_jsonl(
            &out.join("baseline.jsonl"),
            &build_baseline_dataset(&instances),
        )?;
    }
    write_json(&out.join("build_report.json"), &report)?;
    println!(
        "{} of {} queries accepted, {} rejected",
        report.accepted,
        report.queries,
        report.rejected_total()
    );
    for (rule, n) in &report.rejected {
        println!(
            "  {}: {n}",
            serde_json::to_string(rule).unwrap().trim_matches('"')
        );
    }
    Ok(())
}

fn cmd_retrieve(args: &CorpusArgs, query: &str, out: Option<&Path>) -> Result<(), Failure> {
    let corpus = args.load()?;
    let q = corpus
        .molecule(query)
        .ok_or_else(|| Failure::Invalid(format!("unknown query molecule {query:?}")))?;
    let hits = hit_records(q, &corpus);
    match out {
        Some(path) => write_jsonl(path, &hits)?,
        None => {
            for h in &hits {
                println!("{}", serde_json::to_string(h).expect("serializable"));
            }
        }
    }
    Ok(())
}

fn search_config(args: &SearchArgs) -> Result<SearchConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            parse_record::<SearchConfig>(&text, Strictness::Strict).map_err(|e| io_failure(p, e))?
        }
        None => SearchConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.rollouts {
        cfg.rollouts = r;
    }
    if let Some(k) = args.k_samples {
        cfg.k_samples = k;
    }
    if let Some(t) = args.temperature {
        cfg.temperature = t;
    }
    if args.no_molecule_analysis {
        cfg.ablation.enable_molecule_analysis = false;
    }
    if args.no_interaction_analysis {
        cfg.ablation.enable_interaction_analysis = false;
    }
    if let Some(r) = args.reward {
        cfg.reward_mode = match r {
            RewardArg::Combined => RewardMode::Combined,
            RewardArg::RelativeOnly => RewardMode::RelativeOnly,
        };
    }
    if let Some(b) = args.ps_branching {
        cfg.branching.protein_selection = b;
    }
    if let Some(p) = args.selection_pool {
        cfg.selection_pool = match p {
            PoolArg::Reference => SelectionPool::Reference,
            PoolArg::Candidates => SelectionPool::Candidates,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn make_backend(args: &SearchArgs, cfg: &SearchConfig) -> Result<Arc<dyn Backend>, Failure> {
    Ok(match args.backend {
        BackendKind::Mock => Arc::new(MockBackend::new(cfg.seed)),
        BackendKind::Scripted => {
            let path = args
                .script
                .as_deref()
                .ok_or_else(|| Failure::Io("--backend scripted needs --script FILE".into()))?;
            Arc::new(ScriptedBackend::from_file(path).map_err(|e| Failure::Io(e.to_string()))?)
        }
        BackendKind::Http => {
            let mut http = HttpConfig::default();
            if let Some(u) = &args.base_url {
                http.base_url = u.clone();
            }
            if let Some(m) = &args.model {
                http.model = m.clone();
            }
            Arc::new(HttpBackend::from_env(http))
        }
    })
}

struct InstanceOutput {
    result: SearchResult,
    snapshot: Option<targetsearch_core::TreeSnapshot>,
    traces: Vec<Vec<TraceRecord>>,
    failure: Option<Failure>,
}

fn search_one(
    inst: &ProblemInstance,
    env: &AgentEnv<'_>,
    mode: Mode,
) -> Result<InstanceOutput, Failure> {
    match mode {
        Mode::Mcts => match run_search(inst, env) {
            Ok(run) => Ok(InstanceOutput {
                snapshot: Some(run.tree.snapshot()),
                result: run.result,
                traces: run.traces,
                failure: None,
            }),
            Err(abort) => {
                let failure = pipeline_failure(&abort.error);
                let run = *abort.partial;
                Ok(InstanceOutput {
                    snapshot: Some(run.tree.snapshot()),
                    result: run.result,
                    traces: run.traces,
                    failure: Some(failure),
                })
            }
        },
        Mode::Baseline | Mode::Enhanced => {
            let single = if mode == Mode::Baseline {
                SingleShotMode::Baseline
            } else {
                SingleShotMode::Enhanced
            };
            let base = &build_baseline_dataset(std::slice::from_ref(inst))[0];
            let (result, trace) =
                run_single_shot(base, env, single).map_err(|e| pipeline_failure(&e))?;
            Ok(InstanceOutput {
                result,
                snapshot: None,
                traces: vec![trace],
                failure: None,
            })
        }
    }
}

fn persist(out: &Path, o: &InstanceOutput) -> Result<(), Failure> {
    let stem = file_stem(&o.result.query_molecule_id);
    write_json(&out.join("results").join(format!("{stem}.json")), &o.result)?;
    if let Some(s) = &o.snapshot {
        write_json(&out.join("trees").join(format!("{stem}.json")), s)?;
    }
    let dir = out.join("traces").join(&stem);
    create_dir(&dir)?;
    for (i, records) in o.traces.iter().enumerate() {
        write_jsonl(&dir.join(format!("rollout_{i}.jsonl")), records)?;
    }
    Ok(())
}

fn cmd_search(args: &SearchArgs) -> Result<(), Failure> {
    let cfg = search_config(args)?;
    let corpus = args.corpus.load()?;
    let instances = read_instances(&args.instances, args.corpus.strictness())?;
    if args.mode == Mode::Mcts
        && instances
            .iter()
            .any(|i| i.candidate_molecule_ids.is_empty())
    {
        return Err(Failure::Invalid(
            "mcts mode needs instances with candidate molecules".into(),
        ));
    }
    let templates = match &args.templates {
        Some(dir) => TemplateSet::with_overrides(dir)?,
        None => TemplateSet::builtin(),
    };
    let backend = make_backend(args, &cfg)?;
    for sub in ["results", "trees", "traces"] {
        create_dir(&args.out.join(sub))?;
    }
    write_json(&args.out.join("config.json"), &cfg)?;
    let env = AgentEnv {
        corpus: &corpus,
        backend: backend.as_ref(),
        templates: &templates,
        config: &cfg,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Failure::Io(e.to_string()))?;
    let outputs: Vec<Result<InstanceOutput, Failure>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                let o = search_one(inst, &env, args.mode)?;
                persist(&args.out, &o)?;
                Ok(o)
            })
            .collect()
    });
    let mut worst: Option<Failure> = None;
    for (inst, o) in instances.iter().zip(outputs) {
        match o {
            Ok(o) => {
                let top = o.result.ranked_answers.first();
                println!(
                    "{}: {} rollouts, top {} ({:.3}), {} tokens",
                    inst.query_molecule_id,
                    o.result.rollout_outcomes.len(),
                    top.map_or("-", |a| a.protein_id.as_str()),
                    top.map_or(0.0, |a| a.aggregate_score),
                    o.result.total_tokens
                );
                if let Some(f) = o.failure {
                    eprintln!("{}: aborted: {f}", inst.query_molecule_id);
                    worst = Some(worse(worst, f));
                }
            }
            Err(f) => {
                eprintln!("{}: {f}", inst.query_molecule_id);
                worst = Some(worse(worst, f));
            }
        }
    }
    match worst {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn worse(a: Option<Failure>, b: Failure) -> Failure {
    match a {
        Some(a) if a.code() >= b.code() => a,
        _ => b,
    }
}

fn cmd_evaluate(
    results_dir: &Path,
    instances: &Path,
    topk: TopkMode,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let entries = fs::read_dir(results_dir).map_err(|e| io_failure(results_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut results = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
        results.push(
            parse_record::<SearchResult>(&text, Strictness::Strict)
                .map_err(|e| io_failure(p, e))?,
        );
    }
    let instances = read_instances(instances, Strictness::Strict)?;
    let report =
        evaluate_run(&results, &instances, topk).map_err(|e| Failure::Invalid(e.to_string()))?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        let csv_path = dir.join("report.csv");
        let file = fs::File::create(&csv_path).map_err(|e| io_failure(&csv_path, e))?;
        report
            .write_csv(file)
            .map_err(|e| io_failure(&csv_path, e))?;
    }
    let label = match topk {
        TopkMode::Gt => "gt",
        TopkMode::GtPlus3 => "gt+3",
    };
    println!(
        "mean recall (topk={label}): {:.4} over {} instances, {} tokens",
        report.mean_recall, report.instances, report.total_tokens
    );
    Ok(())
}
