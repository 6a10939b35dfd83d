//! Line-delimited JSON scoring protocol for external decoders.
//!
//! An external harness runs the positive and counterfactual streams itself
//! and sends one `step` message per generated token carrying both logit
//! vectors; the engine answers with the combined scores and the chosen
//! token. Messages are tagged by `type`:
//!
//! ```text
//! -> {"type":"hello"}
//! <- {"type":"hello","protocol":1,"config":{...}}
//! -> {"type":"step","z_plus":[2,1],"z_minus":[1,3]}
//! <- {"type":"step","step":0,"token_id":0,"s":[3.0,-1.0]}
//! -> {"type":"end"}
//! <- {"type":"end","steps":1}
//! ```
//!
//! Malformed lines produce an `error` response and the session continues.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::vat::{combine_scores, select_token, LogitsPair, TokenSampler};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        protocol: Option<u32>,
    },
    Step {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<usize>,
        z_plus: Vec<f32>,
        z_minus: Vec<f32>,
    },
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Hello {
        protocol: u32,
        config: PipelineConfig,
    },
    Step {
        step: usize,
        token_id: usize,
        s: Vec<f32>,
    },
    End {
        steps: usize,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<usize>,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("input closed after {steps} steps without an end message")]
    UnexpectedEof { steps: usize },
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("protocol stream error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-session state: the step counter and the seeded sampler.
#[derive(Debug, Clone)]
pub struct ScoringSession {
    config: PipelineConfig,
    sampler: TokenSampler,
    steps: usize,
}

impl ScoringSession {
    pub fn new(config: PipelineConfig) -> Result<Self, ProtocolError> {
        config.validate().map_err(|e| ProtocolError::Config(e.to_string()))?;
        let sampler = TokenSampler::new(config.seed);
        Ok(Self { config, sampler, steps: 0 })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Handles one request line. Returns `None` for blank lines.
    pub fn handle_line(&mut self, line: &str) -> Option<Response> {
        if line.trim().is_empty() {
            return None;
        }
        Some(match serde_json::from_str::<Request>(line) {
            Ok(request) => self.handle(request),
            Err(e) => Response::Error { step: None, message: format!("malformed message: {e}") },
        })
    }

    pub fn handle(&mut self, request: Request) -> Response {
        match request {
            Request::Hello { .. } => Response::Hello { protocol: PROTOCOL_VERSION, config: self.config.clone() },
            Request::End => Response::End { steps: self.steps },
            Request::Step { step, z_plus, z_minus } => {
                let index = step.unwrap_or(self.steps);
                self.steps += 1;
                let scored = LogitsPair::new(index, z_plus, z_minus)
                    .and_then(|pair| combine_scores(&pair, self.config.alpha as f32));
                match scored {
                    Ok(scored) => {
                        let token_id =
                            select_token(&scored.s, self.config.decode_mode, self.config.temperature, &mut self.sampler);
                        Response::Step { step: index, token_id, s: scored.s }
                    }
                    Err(e) => Response::Error { step: Some(index), message: e.to_string() },
                }
            }
        }
    }
}

/// Summary of a completed session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub steps: usize,
    pub errors: usize,
}

/// Serves requests from `input` until an `end` message, writing one response
/// line per request and flushing after each.
pub fn run_scoring_session<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    config: PipelineConfig,
) -> Result<SessionSummary, ProtocolError> {
    let mut session = ScoringSession::new(config)?;
    let mut errors = 0;
    for line in input.lines() {
        let line = line?;
        let Some(response) = session.handle_line(&line) else { continue };
        if matches!(response, Response::Error { .. }) {
            errors += 1;
        }
        let done = matches!(response, Response::End { .. });
        serde_json::to_writer(&mut output, &response).map_err(std::io::Error::from)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if done {
            return Ok(SessionSummary { steps: session.steps(), errors });
        }
    }
    Err(ProtocolError::UnexpectedEof { steps: session.steps() })
}
