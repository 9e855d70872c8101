//! Wire client for an external controller. The exchange is plain text:
//! one prompt in, one response out. Transports are pluggable so tests run
//! on recorded fixtures.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::heuristic::{weakest_expert, HeuristicController};
use super::repair::repair;
use super::{Controller, ControllerOutput, Proposal};
use crate::arch::parse_value;
use crate::experts::ExpertKey;
use crate::protocol::{ControllerSummary, RepairNote};
use crate::validation::{Rejection, Rejections, RULE_MISSING};

pub const PROMPT_TEMPLATE: &str = include_str!("prompt.txt");
/// Overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "EXPERT_NAS_ENDPOINT";
pub const REPAIR_ATTEMPTS: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("transport failed: {0}")]
    Failed(String),
    #[error("transport timed out after {0:?}")]
    Timeout(Duration),
    #[error("unsupported endpoint `{0}`")]
    Unsupported(String),
}

pub trait Transport: Send {
    fn exchange(&mut self, prompt: &str, timeout: Duration) -> Result<String, TransportError>;
}

/// Replays recorded responses in order, wrapping around.
pub struct FixtureTransport {
    responses: Vec<String>,
    next: usize,
    /// Every prompt received, for inspection.
    pub prompts: Vec<String>,
}

impl FixtureTransport {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            next: 0,
            prompts: Vec::new(),
        }
    }

    /// A JSON array of strings is a response list; anything else is a
    /// single response.
    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let responses = match serde_json::from_str::<Vec<String>>(&text) {
            Ok(list) if !list.is_empty() => list,
            _ => vec![text],
        };
        Ok(Self::new(responses))
    }
}

impl Transport for FixtureTransport {
    fn exchange(&mut self, prompt: &str, _timeout: Duration) -> Result<String, TransportError> {
        self.prompts.push(prompt.to_string());
        if self.responses.is_empty() {
            return Err(TransportError::Failed("no recorded responses".into()));
        }
        let r = self.responses[self.next % self.responses.len()].clone();
        self.next += 1;
        Ok(r)
    }
}

pub struct FailingTransport;

impl Transport for FailingTransport {
    fn exchange(&mut self, _prompt: &str, _timeout: Duration) -> Result<String, TransportError> {
        Err(TransportError::Failed("endpoint unreachable".into()))
    }
}

/// Runs a program with the prompt on stdin and takes stdout as the response.
pub struct CommandTransport {
    pub program: String,
    pub args: Vec<String>,
}

impl Transport for CommandTransport {
    fn exchange(&mut self, prompt: &str, timeout: Duration) -> Result<String, TransportError> {
        let fail = |e: std::io::Error| TransportError::Failed(e.kind().to_string());
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(fail)?;
        let mut stdin = child.stdin.take().unwrap();
        let input = prompt.as_bytes().to_vec();
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let mut stdout = child.stdout.take().unwrap();
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let start = Instant::now();
        loop {
            if let Some(status) = child.try_wait().map_err(fail)? {
                let _ = writer.join();
                let out = reader
                    .join()
                    .map_err(|_| TransportError::Failed("reader panicked".into()))?
                    .map_err(fail)?;
                return if status.success() {
                    Ok(out)
                } else {
                    Err(TransportError::Failed(format!("exit status {status}")))
                };
            }
            if start.elapsed() > timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(TransportError::Timeout(timeout));
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

/// `fixture:<path>`, `command:<program> [args..]` or `fail`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Fixture(PathBuf),
    Command(Vec<String>),
    Fail,
}

impl std::str::FromStr for Endpoint {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = s.strip_prefix("fixture:") {
            Ok(Endpoint::Fixture(PathBuf::from(p)))
        } else if let Some(c) = s.strip_prefix("command:") {
            let parts: Vec<String> = c.split_whitespace().map(String::from).collect();
            if parts.is_empty() {
                return Err(TransportError::Unsupported(s.into()));
            }
            Ok(Endpoint::Command(parts))
        } else if s == "fail" {
            Ok(Endpoint::Fail)
        } else {
            Err(TransportError::Unsupported(s.into()))
        }
    }
}

impl Endpoint {
    pub fn transport(&self) -> Result<Box<dyn Transport>, TransportError> {
        Ok(match self {
            Endpoint::Fixture(p) => {
                Box::new(FixtureTransport::from_file(p).map_err(|e| TransportError::Failed(e.kind().to_string()))?)
            }
            Endpoint::Command(parts) => Box::new(CommandTransport {
                program: parts[0].clone(),
                args: parts[1..].to_vec(),
            }),
            Endpoint::Fail => Box::new(FailingTransport),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_seconds: f64,
    /// Transport attempts per exchange.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "fail".into(),
            timeout_seconds: 120.0,
            retries: 3,
            backoff_ms: 200,
        }
    }
}

pub fn render_prompt(summary: &ControllerSummary, manifest: &str, feedback: Option<&Rejections>) -> String {
    let feedback = feedback.map_or(String::new(), |r| {
        let mut s = String::from("\n## Your previous descriptor was rejected\n");
        for x in r.iter() {
            s.push_str(&format!("- {}: {}\n", x.path, x.rule));
        }
        s
    });
    PROMPT_TEMPLATE
        .replace("{{summary}}", &summary.to_text())
        .replace("{{manifest}}", manifest)
        .replace("{{feedback}}", &feedback)
}

/// A response that did not yield a valid proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRejected {
    pub targets: Vec<ExpertKey>,
    pub rationale: String,
    pub descriptor_text: String,
    pub rejections: Rejections,
}

fn extract_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    if let Ok(Value::Object(m)) = serde_json::from_str(text) {
        return Some(m);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    match serde_json::from_str(text.get(start..=end)?) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

/// Parses a response. Missing or out-of-range targets default to the
/// weakest expert.
pub fn parse_response(text: &str, summary: &ControllerSummary) -> Result<Proposal, ResponseRejected> {
    let obj = extract_object(text).unwrap_or_default();
    let (m, c) = (summary.dataset.modalities, summary.dataset.classes);
    let mut targets: Vec<ExpertKey> = obj
        .get("targets")
        .and_then(|t| serde_json::from_value::<Vec<ExpertKey>>(t.clone()).ok())
        .unwrap_or_default()
        .into_iter()
        .filter(|k| k.modality < m && k.class < c)
        .collect();
    targets.sort();
    targets.dedup();
    if targets.is_empty() {
        targets.push(weakest_expert(summary).map_or(ExpertKey::new(0, 0), |w| w.0));
    }
    let rationale = obj
        .get("rationale")
        .and_then(Value::as_str)
        .unwrap_or("remote proposal")
        .to_string();
    let (descriptor_text, parsed) = match obj.get("descriptor") {
        Some(d) => (d.to_string(), parse_value(d)),
        None => (
            "{}".to_string(),
            Err(Rejections(vec![Rejection::new("descriptor", RULE_MISSING)])),
        ),
    };
    match parsed {
        Ok(descriptor) => Ok(Proposal {
            targets,
            descriptor,
            rationale,
            operator: None,
        }),
        Err(mut rejections) => {
            if descriptor_text == "{}" {
                rejections = parse_value(&Value::Object(Default::default())).unwrap_err();
            }
            Err(ResponseRejected {
                targets,
                rationale,
                descriptor_text,
                rejections,
            })
        }
    }
}

pub struct RemoteController {
    transport: Box<dyn Transport>,
    config: RemoteConfig,
    fallback: HeuristicController,
}

impl RemoteController {
    pub fn new(transport: Box<dyn Transport>, config: RemoteConfig) -> Self {
        Self {
            transport,
            config,
            fallback: HeuristicController::default(),
        }
    }

    fn exchange(&mut self, prompt: &str) -> Result<String, TransportError> {
        let timeout = Duration::from_secs_f64(self.config.timeout_seconds.max(0.001));
        let mut last = TransportError::Failed("no attempts".into());
        for attempt in 0..self.config.retries.max(1) {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.transport.exchange(prompt, timeout) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("controller exchange attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }

    fn fall_back(
        &self,
        summary: &ControllerSummary,
        seed: u64,
        why: &str,
        repairs: Vec<RepairNote>,
    ) -> ControllerOutput {
        log::warn!("falling back to the heuristic controller: {why}");
        let mut proposal = self.fallback.propose_heuristic(summary, seed);
        proposal.rationale = format!("fallback ({why}): {}", proposal.rationale);
        ControllerOutput {
            proposal,
            controller: "fallback".into(),
            repairs,
            repaired_texts: Vec::new(),
        }
    }
}

impl Controller for RemoteController {
    fn kind(&self) -> &'static str {
        "remote"
    }

    fn propose(&mut self, summary: &ControllerSummary, manifest: &str, seed: u64) -> ControllerOutput {
        let mut text = match self.exchange(&render_prompt(summary, manifest, None)) {
            Ok(t) => t,
            Err(_) => return self.fall_back(summary, seed, "transport failure", Vec::new()),
        };
        let mut repairs = Vec::new();
        for attempt in 1..=REPAIR_ATTEMPTS + 1 {
            let rejected = match parse_response(&text, summary) {
                Ok(p) => {
                    return ControllerOutput {
                        proposal: p,
                        controller: "remote".into(),
                        repairs,
                        repaired_texts: Vec::new(),
                    }
                }
                Err(r) => r,
            };
            if attempt > REPAIR_ATTEMPTS {
                break;
            }
            repairs.push(RepairNote {
                attempt,
                rejections: rejected.rejections.0.clone(),
            });
            // An absent descriptor is re-requested rather than rebuilt from the baseline.
            let repaired = match rejected.descriptor_text.as_str() {
                "{}" => None,
                text => repair(text, &rejected.rejections).ok(),
            };
            if let Some(fixed) = repaired {
                let repaired = fixed.descriptor.canonical_text();
                return ControllerOutput {
                    proposal: Proposal {
                        targets: rejected.targets,
                        descriptor: fixed.descriptor,
                        rationale: format!("{} (repaired: {})", rejected.rationale, fixed.actions.join("; ")),
                        operator: None,
                    },
                    controller: "remote".into(),
                    repairs,
                    repaired_texts: vec![repaired],
                };
            }
            let prompt = render_prompt(summary, manifest, Some(&rejected.rejections));
            text = match self.exchange(&prompt) {
                Ok(t) => t,
                Err(_) => return self.fall_back(summary, seed, "transport failure", repairs),
            };
        }
        self.fall_back(summary, seed, "repair attempts exhausted", repairs)
    }
}
