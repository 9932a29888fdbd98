use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::PromptMessage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?}: no binding for placeholder {{{{{placeholder}}}}}")]
    MissingBinding {
        template: String,
        placeholder: String,
    },
    #[error("template {template:?}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template:?}: {message}")]
    Malformed { template: String, message: String },
    #[error("reading templates from {path}: {message}")]
    Io { path: String, message: String },
}

/// A system/user prompt pair with `{{placeholder}}` slots.
///
/// On disk a template is plain text. An optional `[system]` section comes
/// first, then `[user]`; a file without section markers is all user text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub system: Option<String>,
    pub user: String,
}

impl Template {
    pub fn parse(id: &str, text: &str) -> Result<Self, TemplateError> {
        let malformed = |message: &str| TemplateError::Malformed {
            template: id.to_string(),
            message: message.to_string(),
        };
        let trimmed = text.trim_start();
        if !trimmed.starts_with("[system]") && !trimmed.starts_with("[user]") {
            return Ok(Self {
                id: id.to_string(),
                system: None,
                user: text.trim().to_string(),
            });
        }
        let mut system = None;
        let mut user = None;
        let mut current: Option<(&str, String)> = None;
        let mut flush = |cur: Option<(&str, String)>| match cur {
            Some(("system", body)) => system = Some(body.trim().to_string()),
            Some((_, body)) => user = Some(body.trim().to_string()),
            None => {}
        };
        for line in trimmed.lines() {
            match line.trim() {
                "[system]" => flush(current.replace(("system", String::new()))),
                "[user]" => flush(current.replace(("user", String::new()))),
                _ => {
                    if let Some((_, body)) = current.as_mut() {
                        body.push_str(line);
                        body.push('\n');
                    }
                }
            }
        }
        flush(current);
        let user = user.ok_or_else(|| malformed("missing [user] section"))?;
        if user.is_empty() {
            return Err(malformed("empty [user] section"));
        }
        Ok(Self {
            id: id.to_string(),
            system: system.filter(|s| !s.is_empty()),
            user,
        })
    }

    pub fn placeholders(&self) -> Result<Vec<String>, TemplateError> {
        let mut out = Vec::new();
        for part in self.system.iter().chain(std::iter::once(&self.user)) {
            scan(&self.id, part, |name| {
                if !out.iter().any(|o| o == name) {
                    out.push(name.to_string());
                }
                Ok(String::new())
            })?;
        }
        Ok(out)
    }

    pub fn render(
        &self,
        bindings: &BTreeMap<String, String>,
    ) -> Result<Vec<PromptMessage>, TemplateError> {
        let fill = |text: &str| {
            scan(&self.id, text, |name| {
                bindings
                    .get(name)
                    .cloned()
                    .ok_or_else(|| TemplateError::MissingBinding {
                        template: self.id.clone(),
                        placeholder: name.to_string(),
                    })
            })
        };
        let mut out = Vec::with_capacity(2);
        if let Some(system) = &self.system {
            out.push(PromptMessage::system(fill(system)?));
        }
        out.push(PromptMessage::user(fill(&self.user)?));
        Ok(out)
    }
}

fn scan(
    id: &str,
    text: &str,
    mut replace: impl FnMut(&str) -> Result<String, TemplateError>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(TemplateError::Unterminated {
            template: id.to_string(),
            offset: offset + start,
        })?;
        out.push_str(&replace(after[..end].trim())?);
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Prompt templates keyed by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

const BUILTIN: &[(&str, &str)] = &[
    (
        "molecule_analysis",
        include_str!("../../templates/molecule_analysis.txt"),
    ),
    (
        "molecule_selection",
        include_str!("../../templates/molecule_selection.txt"),
    ),
    (
        "interaction_analysis",
        include_str!("../../templates/interaction_analysis.txt"),
    ),
    (
        "protein_selection",
        include_str!("../../templates/protein_selection.txt"),
    ),
    (
        "interaction_judgement",
        include_str!("../../templates/interaction_judgement.txt"),
    ),
    (
        "baseline_selection",
        include_str!("../../templates/baseline_selection.txt"),
    ),
    (
        "enhanced_selection",
        include_str!("../../templates/enhanced_selection.txt"),
    ),
];

impl TemplateSet {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut set = Self::empty();
        for (id, text) in BUILTIN {
            set.insert(Template::parse(id, text).expect("builtin templates parse"));
        }
        set
    }

    /// Built-in templates overridden by every `<id>.txt` file in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let io = |e: std::io::Error| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut set = Self::builtin();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(io)?;
            set.insert(Template::parse(id, &text)?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: Template) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn render_prompt(
        &self,
        template_id: &str,
        bindings: &BTreeMap<String, String>,
    ) -> Result<Vec<PromptMessage>, TemplateError> {
        self.get(template_id)
            .ok_or_else(|| TemplateError::UnknownTemplate(template_id.to_string()))?
            .render(bindings)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
