//! Deterministic stand-ins for the planning model.

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::llm::{LlmClient, LlmError};

/// Shared record of every prompt a stand-in received.
#[derive(Debug, Clone, Default)]
pub struct PromptLog(Arc<Mutex<Vec<String>>>);

impl PromptLog {
    pub fn push(&self, p: &str) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(p.to_string());
    }

    pub fn prompts(&self) -> Vec<String> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub contains: String,
    pub reply: String,
}

/// Rules are tried first, in order; otherwise replies are handed out in
/// sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmScript {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub replies: Vec<String>,
}

impl LlmScript {
    pub fn sequence<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        LlmScript { rules: Vec::new(), replies: replies.into_iter().map(Into::into).collect() }
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text).map_err(|e| LlmError::Protocol(format!("llm script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Transport(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedLlm {
    script: LlmScript,
    next: usize,
    pub log: PromptLog,
}

impl ScriptedLlm {
    pub fn new(script: LlmScript) -> Self {
        ScriptedLlm { script, next: 0, log: PromptLog::default() }
    }

    pub fn with_log(mut self, log: PromptLog) -> Self {
        self.log = log;
        self
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.log.push(prompt);
        if let Some(r) = self.script.rules.iter().find(|r| prompt.contains(&r.contains)) {
            return Ok(r.reply.clone());
        }
        let reply = self.script.replies.get(self.next).ok_or(LlmError::ScriptExhausted(self.next))?;
        self.next += 1;
        Ok(reply.clone())
    }
}

/// Answers the first `per_step` queries of every step with a reply naming
/// an element that is not on screen, then defers to the inner client.
pub struct InjectInvalid<L> {
    pub inner: L,
    pub per_step: usize,
    pub invalid_reply: String,
    seen: usize,
    pub log: PromptLog,
}

impl<L: LlmClient> InjectInvalid<L> {
    pub fn new(inner: L, per_step: usize) -> Self {
        InjectInvalid {
            inner,
            per_step,
            invalid_reply: "Tap the My Wallet button".into(),
            seen: 0,
            log: PromptLog::default(),
        }
    }
}

impl<L: LlmClient> LlmClient for InjectInvalid<L> {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        if !prompt.contains("\n\nReassess:") {
            self.seen = 0;
        }
        if self.seen < self.per_step {
            self.seen += 1;
            self.log.push(prompt);
            return Ok(self.invalid_reply.clone());
        }
        self.inner.complete(prompt)
    }
}

/// Always taps element 1, which never advances any scenario.
#[derive(Debug, Clone, Default)]
pub struct NeverCorrectLlm {
    pub log: PromptLog,
}

impl LlmClient for NeverCorrectLlm {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.log.push(prompt);
        Ok("Tap [1]".into())
    }
}

/// Replays the solution of the prompt's example, one step per history entry.
#[derive(Debug, Clone, Default)]
pub struct ExampleFollowerLlm {
    pub log: PromptLog,
}

fn section<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let start = prompt.find(header)? + header.len();
    let rest = &prompt[start..];
    Some(rest.find("\n\n").map_or(rest, |end| &rest[..end]))
}

impl LlmClient for ExampleFollowerLlm {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.log.push(prompt);
        let solution = section(prompt, "Example:\n")
            .and_then(|ex| ex.lines().find_map(|l| l.strip_prefix("Solution: ")))
            .ok_or_else(|| LlmError::Protocol("prompt carries no example".into()))?;
        let steps: Vec<&str> = solution.split(" -> ").collect();
        let done = section(prompt, "Action history: ").map_or(0, |h| h.split(" -> ").count());
        Ok(match steps.get(done) {
            Some(s) => s.trim_end_matches(crate::pbd::UNCERTAIN_MARK).to_string(),
            None => "Task complete".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_rules_and_exhaustion() {
        let mut llm = ScriptedLlm::new(LlmScript {
            rules: vec![ScriptRule { contains: "Music".into(), reply: "Tap Library".into() }],
            replies: vec!["Tap WLAN button".into()],
        });
        assert_eq!(llm.complete("Task: a").unwrap(), "Tap WLAN button");
        assert_eq!(llm.complete("Section \"Music\"").unwrap(), "Tap Library");
        assert_eq!(llm.complete("Task: b"), Err(LlmError::ScriptExhausted(1)));
        assert_eq!(llm.log.prompts().len(), 3);
    }

    #[test]
    fn follower_tracks_history() {
        let mut llm = ExampleFollowerLlm::default();
        let p = "Task: x\n\nAction history: Tap a\n\nUI semantics:\n...\n\nExample:\nTask: x\nSolution: Tap a -> Tap b (uncertain)";
        assert_eq!(llm.complete(p).unwrap(), "Tap b");
        let p = "Task: x\n\nUI semantics:\n...\n\nExample:\nTask: x\nSolution: Tap a";
        assert_eq!(llm.complete(p).unwrap(), "Tap a");
    }

    #[test]
    fn invalid_injection_resets_per_step() {
        let mut llm = InjectInvalid::new(ScriptedLlm::new(LlmScript::sequence(["Tap ok"])), 2);
        assert_eq!(llm.complete("base").unwrap(), "Tap the My Wallet button");
        assert_eq!(llm.complete("base\n\nReassess: x").unwrap(), "Tap the My Wallet button");
        assert_eq!(llm.complete("base\n\nReassess: x").unwrap(), "Tap ok");
    }
}
