use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{approx_usage, Backend, BackendError, ResponseHint, SamplingRequest, SamplingResponse};

/// Offline backend whose output depends only on its seed and the request.
///
/// Sample `j` of a request is drawn from a generator keyed by the seed, the
/// request content (messages, temperature, token limit, hint) and
/// `sample_offset + j`, so batches continue a stream and never depend on
/// call order. At temperature 0 every sample equals sample 0.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    variants: Option<usize>,
    yes_rate: f64,
}

#[derive(Serialize)]
struct Key<'a> {
    messages: &'a [super::PromptMessage],
    temperature: f64,
    max_tokens: Option<u32>,
    hint: &'a ResponseHint,
}

const OPENINGS: &[&str] = &[
    "The evidence points to",
    "Taken together, the data suggest",
    "On balance there is",
    "The profile indicates",
    "Structural comparison reveals",
    "Key observation:",
];
const OBSERVATIONS: &[&str] = &[
    "a rigid aromatic scaffold with moderate lipophilicity",
    "several hydrogen bond donors positioned for polar contacts",
    "a compact hydrophobic core suited to a buried pocket",
    "limited flexibility that favours a preorganised binding pose",
    "an ionisable group likely to form a salt bridge",
    "polar surface area compatible with membrane permeability",
    "a pharmacophore shared with known ligands of this family",
];
const CONCLUSIONS: &[&str] = &[
    "This supports engagement with pockets lined by aromatic residues.",
    "Binding would likely rely on hydrogen bonding near the pocket entrance.",
    "Hydrophobic enclosure should dominate the interaction.",
    "Selectivity will depend on subtle differences in pocket shape.",
    "A similar binding mode to the reference ligands is plausible.",
];
const SUBSET_LEADS: &[&str] = &[
    "Selected reference molecules:",
    "I select",
    "The most informative references are",
    "Keep:",
];
const CHOICE_LEADS: &[&str] = &[
    "is the most promising target",
    "is the best supported candidate",
    "shows the strongest evidence of binding",
    "is my selection",
];

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            variants: None,
            yes_rate: 0.6,
        }
    }

    /// Restrict every prompt to `variants` possible answers, so repeated
    /// sampling collides.
    pub fn with_variants(mut self, variants: usize) -> Self {
        self.variants = Some(variants.max(1));
        self
    }

    pub fn with_yes_rate(mut self, rate: f64) -> Self {
        self.yes_rate = rate.clamp(0.0, 1.0);
        self
    }

    fn request_key(&self, request: &SamplingRequest) -> [u8; 32] {
        let key = Key {
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            hint: &request.hint,
        };
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(serde_json::to_vec(&key).expect("request serializes"));
        h.finalize().into()
    }

    fn stream(key: &[u8; 32], tag: &[u8], index: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(key);
        h.update(tag);
        h.update(index.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn draw(&self, key: &[u8; 32], hint: &ResponseHint, index: u64) -> String {
        let mut rng = match self.variants {
            Some(v) => {
                let variant = Self::stream(key, b"variant", index).random_range(0..v as u64);
                Self::stream(key, b"text", variant)
            }
            None => Self::stream(key, b"text", index),
        };
        match hint {
            ResponseHint::FreeText => free_text(&mut rng),
            ResponseHint::Subset(options) if !options.is_empty() => {
                let size = rng.random_range(1..=options.len().min(4));
                let mut picked: Vec<&String> = options.iter().collect();
                picked.shuffle(&mut rng);
                picked.truncate(size);
                picked.sort();
                let ids: Vec<&str> = picked.iter().map(|s| s.as_str()).collect();
                format!(
                    "{} {}. {}",
                    SUBSET_LEADS.choose(&mut rng).unwrap(),
                    ids.join(", "),
                    CONCLUSIONS.choose(&mut rng).unwrap()
                )
            }
            ResponseHint::Choice(options) if !options.is_empty() => {
                let id = options.choose(&mut rng).unwrap();
                format!(
                    "{id} {}. {}",
                    CHOICE_LEADS.choose(&mut rng).unwrap(),
                    CONCLUSIONS.choose(&mut rng).unwrap()
                )
            }
            ResponseHint::YesNo => {
                let yes = rng.random_bool(self.yes_rate);
                format!(
                    "{} {}",
                    if yes { "Yes." } else { "No." },
                    CONCLUSIONS.choose(&mut rng).unwrap()
                )
            }
            _ => free_text(&mut rng),
        }
    }
}

fn free_text(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {}. {}",
        OPENINGS.choose(rng).unwrap(),
        OBSERVATIONS.choose(rng).unwrap(),
        CONCLUSIONS.choose(rng).unwrap()
    )
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &SamplingRequest) -> Result<SamplingResponse, BackendError> {
        let key = self.request_key(request);
        let texts: Vec<String> = (0..request.n)
            .map(|j| {
                let index = if request.temperature == 0.0 {
                    0
                } else {
                    (request.sample_offset + j) as u64
                };
                self.draw(&key, &request.hint, index)
            })
            .collect();
        let (prompt_tokens, completion_tokens) = approx_usage(request, &texts);
        Ok(SamplingResponse {
            texts,
            prompt_tokens,
            completion_tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{
        parse_id_list, parse_yes_no, sample, PromptMessage, Verdict, YesNoLexicon,
    };
    use std::collections::BTreeSet;

    fn req(n: usize, hint: ResponseHint) -> SamplingRequest {
        SamplingRequest::new(vec![PromptMessage::user("question")], 0.8, n).with_hint(hint)
    }

    #[test]
    fn same_seed_same_request_same_texts() {
        let r = req(4, ResponseHint::FreeText);
        let a = sample(&MockBackend::new(7), &r).unwrap();
        let b = sample(&MockBackend::new(7), &r).unwrap();
        assert_eq!(a, b);
        let c = sample(&MockBackend::new(8), &r).unwrap();
        assert_ne!(a.texts, c.texts);
    }

    #[test]
    fn offsets_continue_the_stream() {
        let m = MockBackend::new(3);
        let whole = sample(&m, &req(4, ResponseHint::FreeText)).unwrap().texts;
        let tail = sample(&m, &req(2, ResponseHint::FreeText).with_offset(2))
            .unwrap()
            .texts;
        assert_eq!(&whole[2..], &tail[..]);
    }

    #[test]
    fn hinted_answers_parse() {
        let m = MockBackend::new(11);
        let options: Vec<String> = ["P1", "P2", "P3"].iter().map(|s| s.to_string()).collect();
        let valid: BTreeSet<String> = options.iter().cloned().collect();
        for t in sample(&m, &req(8, ResponseHint::Choice(options.clone())))
            .unwrap()
            .texts
        {
            assert_eq!(parse_id_list(&t, &valid).len(), 1, "{t}");
        }
        for t in sample(&m, &req(8, ResponseHint::Subset(options)))
            .unwrap()
            .texts
        {
            assert!(!parse_id_list(&t, &valid).is_empty(), "{t}");
        }
        let lex = YesNoLexicon::default();
        for t in sample(&m, &req(8, ResponseHint::YesNo)).unwrap().texts {
            assert_ne!(parse_yes_no(&t, &lex), Verdict::Indeterminate, "{t}");
        }
    }

    #[test]
    fn variants_limit_distinct_answers() {
        let m = MockBackend::new(5).with_variants(2);
        let texts = sample(&m, &req(16, ResponseHint::FreeText)).unwrap().texts;
        let distinct: BTreeSet<&String> = texts.iter().collect();
        assert!(distinct.len() <= 2);
    }

    #[test]
    fn zero_temperature_repeats_first_sample() {
        let mut r = req(3, ResponseHint::FreeText);
        r.temperature = 0.0;
        let texts = sample(&MockBackend::new(1), &r).unwrap().texts;
        assert!(texts.iter().all(|t| t == &texts[0]));
    }
}
