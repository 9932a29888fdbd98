use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{approx_usage, Backend, BackendError, SamplingRequest, SamplingResponse};

type Rule = Box<dyn FnMut(&SamplingRequest, usize) -> String + Send>;

enum Script {
    Replies(VecDeque<String>),
    Rule(Rule),
}

/// Replays canned replies in order, or answers every sample with a rule.
pub struct ScriptedBackend {
    script: Mutex<Script>,
    served: AtomicUsize,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn from_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_script(Script::Replies(
            replies.into_iter().map(Into::into).collect(),
        ))
    }

    /// `rule(request, j)` answers sample `j` of `request`.
    pub fn from_fn<F>(rule: F) -> Self
    where
        F: FnMut(&SamplingRequest, usize) -> String + Send + 'static,
    {
        Self::with_script(Script::Rule(Box::new(rule)))
    }

    /// Reads a JSON array of reply strings.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let replies: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Ok(Self::from_replies(replies))
    }

    fn with_script(script: Script) -> Self {
        Self {
            script: Mutex::new(script),
            served: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Requests answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &SamplingRequest) -> Result<SamplingResponse, BackendError> {
        let mut script = self.script.lock().expect("script lock poisoned");
        let texts: Vec<String> = match &mut *script {
            Script::Replies(queue) => {
                if queue.len() < request.n {
                    return Err(BackendError::FixtureExhausted {
                        served: self.served.load(Ordering::SeqCst),
                    });
                }
                queue.drain(..request.n).collect()
            }
            Script::Rule(rule) => (0..request.n).map(|j| rule(request, j)).collect(),
        };
        self.served.fetch_add(texts.len(), Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (prompt_tokens, completion_tokens) = approx_usage(request, &texts);
        Ok(SamplingResponse {
            texts,
            prompt_tokens,
            completion_tokens,
        })
    }
}
