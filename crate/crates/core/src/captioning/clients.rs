//! Captioner (image + multi-turn text) and refiner (text only) contracts,
//! with HTTP implementations and scripted mocks.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::client::{ClientError, Endpoint, JsonHttp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
}

pub trait Captioner: Sync {
    fn id(&self) -> &str;
    /// Answers `question` about the image given the earlier turns.
    fn ask(&self, image_png: &[u8], history: &[Turn], question: &str) -> Result<String, ClientError>;
}

pub trait Refiner: Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_png_base64: String,
    pub history: Vec<Turn>,
    pub question: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub answer: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RefineRequest {
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RefineResponse {
    pub text: String,
}

pub struct HttpCaptioner {
    transport: JsonHttp,
    id: String,
}

impl HttpCaptioner {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Result<Self, ClientError> {
        let id = format!("http-captioner:{}", endpoint.url);
        Ok(Self { transport: JsonHttp::new(endpoint, timeout)?, id })
    }
}

impl Captioner for HttpCaptioner {
    fn id(&self) -> &str {
        &self.id
    }

    fn ask(&self, image_png: &[u8], history: &[Turn], question: &str) -> Result<String, ClientError> {
        let req = CaptionRequest {
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(image_png),
            history: history.to_vec(),
            question: question.to_string(),
        };
        let resp: CaptionResponse = self.transport.post(&req)?;
        Ok(resp.answer)
    }
}

pub struct HttpRefiner {
    transport: JsonHttp,
    id: String,
}

impl HttpRefiner {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Result<Self, ClientError> {
        let id = format!("http-refiner:{}", endpoint.url);
        Ok(Self { transport: JsonHttp::new(endpoint, timeout)?, id })
    }
}

impl Refiner for HttpRefiner {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let resp: RefineResponse = self.transport.post(&RefineRequest { prompt: prompt.to_string() })?;
        Ok(resp.text)
    }
}

/// Replies with a fixed answer to every question.
pub struct EchoCaptioner {
    pub reply: String,
}

impl Captioner for EchoCaptioner {
    fn id(&self) -> &str {
        "mock-echo"
    }

    fn ask(&self, _: &[u8], _: &[Turn], _: &str) -> Result<String, ClientError> {
        Ok(self.reply.clone())
    }
}

/// Pops scripted replies in call order; `Err` entries simulate failures.
/// Once the script runs out, `fallback` is returned.
pub struct ScriptedRefiner {
    replies: Mutex<VecDeque<Result<String, ClientError>>>,
    fallback: Result<String, ClientError>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedRefiner {
    pub fn new(replies: Vec<Result<String, ClientError>>, fallback: Result<String, ClientError>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            fallback,
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Always answers `text`.
    pub fn constant(text: &str) -> Self {
        Self::new(Vec::new(), Ok(text.to_string()))
    }

    /// Always fails as if the service were down.
    pub fn unreachable() -> Self {
        Self::new(Vec::new(), Err(ClientError::Transport("connection refused".into())))
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl Refiner for ScriptedRefiner {
    fn id(&self) -> &str {
        "mock-scripted"
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.replies.lock().unwrap().pop_front().unwrap_or_else(|| self.fallback.clone())
    }
}
