//! Single-shot text completion clients.

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("llm transport error: {0}")]
    Transport(String),
    #[error("llm reply malformed: {0}")]
    Protocol(String),
    #[error("script exhausted after {0} replies")]
    ScriptExhausted(usize),
}

/// One request, one reply. No conversation state is kept between calls.
pub trait LlmClient {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

#[cfg(feature = "http")]
pub use http::HttpLlm;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{LlmClient, LlmError};

    #[derive(Serialize)]
    struct Request<'a> {
        prompt: &'a str,
    }

    #[derive(Deserialize)]
    struct Response {
        text: String,
    }

    /// Posts `{"prompt": ...}` and reads `{"text": ...}`.
    #[derive(Debug)]
    pub struct HttpLlm {
        url: String,
        retries: u32,
        agent: ureq::Agent,
    }

    impl HttpLlm {
        pub fn new(url: impl Into<String>, retries: u32, timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into();
            HttpLlm { url: url.into(), retries, agent }
        }

        fn once(&self, prompt: &str) -> Result<String, LlmError> {
            let mut resp = self
                .agent
                .post(&self.url)
                .send_json(Request { prompt })
                .map_err(|e| LlmError::Transport(e.to_string()))?;
            let body: Response = resp
                .body_mut()
                .read_json()
                .map_err(|e| LlmError::Protocol(e.to_string()))?;
            Ok(body.text)
        }
    }

    impl LlmClient for HttpLlm {
        fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
            let mut last = None;
            for _ in 0..=self.retries {
                match self.once(prompt) {
                    Ok(t) => return Ok(t),
                    Err(e @ LlmError::Transport(_)) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("at least one attempt"))
        }
    }
}
