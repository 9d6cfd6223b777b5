use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attempts per item before an augmentation is given up.
pub const GENERATOR_ATTEMPTS: usize = 3;

/// Produces a sentence that should contain `answer`.
pub trait SentenceGenerator: Send + Sync {
    fn generate(&self, answer: &str, context: &str) -> Result<String>;

    fn name(&self) -> &str;
}

/// Fixed-template generator; output depends only on the answer.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateStub;

impl SentenceGenerator for TemplateStub {
    fn generate(&self, answer: &str, _context: &str) -> Result<String> {
        Ok(format!("The word {answer} appeared in a sentence unrelated to this story."))
    }

    fn name(&self) -> &str {
        "template_stub"
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    answer: &'a str,
    context: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    sentence: String,
}

/// Client for a completion endpoint speaking
/// `POST {"answer", "context"} -> {"sentence"}`.
#[derive(Clone, Debug)]
pub struct HttpGenerator {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpGenerator {
            endpoint: endpoint.into(),
            client,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl SentenceGenerator for HttpGenerator {
    fn generate(&self, answer: &str, context: &str) -> Result<String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&CompletionRequest { answer, context })
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Error::Transport(format!("generator returned {status}")));
        }
        if !status.is_success() {
            return Err(Error::Format(format!("generator returned {status}")));
        }
        let body: CompletionResponse = resp
            .json()
            .map_err(|e| Error::Format(format!("generator response: {e}")))?;
        Ok(body.sentence)
    }

    fn name(&self) -> &str {
        "http_completion"
    }
}

/// Generator selection as given on the command line: `none`, `stub` or
/// `http:URL`.
#[derive(Clone, Debug)]
pub enum GeneratorClient {
    TemplateStub(TemplateStub),
    Http(HttpGenerator),
}

impl GeneratorClient {
    /// Parses an `--aug` value; `none` yields `Ok(None)`.
    pub fn parse(spec: &str, timeout: Duration) -> Result<Option<Self>> {
        match spec {
            "none" => Ok(None),
            "stub" => Ok(Some(GeneratorClient::TemplateStub(TemplateStub))),
            _ => {
                // both `http:https://host/x` and a bare `http://host/x` are accepted
                let url = match spec.strip_prefix("http:") {
                    Some(rest) if rest.starts_with("//") => spec,
                    Some(rest) => rest,
                    None => "",
                };
                if url.is_empty() {
                    return Err(Error::Config(format!("unknown generator `{spec}`")));
                }
                Ok(Some(GeneratorClient::Http(HttpGenerator::new(url, timeout)?)))
            }
        }
    }

    pub fn as_generator(&self) -> &dyn SentenceGenerator {
        match self {
            GeneratorClient::TemplateStub(g) => g,
            GeneratorClient::Http(g) => g,
        }
    }
}
