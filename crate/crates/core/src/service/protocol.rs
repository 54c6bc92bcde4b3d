//! Message layer shared by every transport. A [`Connection`] turns client
//! envelopes into server envelopes; transports only move bytes.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::monitor::{EventKind, EventTarget, HandSample};
use crate::planner::PlanMode;
use crate::sim::{Scenario, ScenarioFlags};

use super::session::{Command, Output, Session};
use super::ServiceError;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: &str, seq: u64, payload: Value) -> Self {
        Envelope { kind: kind.to_string(), seq, payload }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }

    pub fn error_code(&self) -> Option<&str> {
        (self.kind == "error").then(|| self.payload.get("code").and_then(Value::as_str)).flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedMessage,
    UnknownType,
    HelloRequired,
    VersionMismatch,
    SeqOutOfOrder,
    SessionNotLoaded,
    ScenarioInvalid,
    NoPendingCandidates,
    IndexOutOfRange,
    Internal,
}

#[derive(Deserialize)]
struct HelloPayload {
    schema_version: u32,
}

#[derive(Deserialize)]
struct LoadPayload {
    scenario: Scenario,
}

#[derive(Deserialize)]
struct TickPayload {
    #[serde(default = "one")]
    frames: u64,
}

fn one() -> u64 {
    1
}

#[derive(Deserialize)]
struct HandPayload {
    sample: HandSample,
}

#[derive(Deserialize)]
struct SelectPayload {
    index: usize,
}

#[derive(Deserialize)]
struct ModeFlagsPayload {
    #[serde(default)]
    mode: Option<PlanMode>,
    #[serde(default)]
    flags: Option<ScenarioFlags>,
}

struct Reject(ErrorCode, String);

impl From<ServiceError> for Reject {
    fn from(e: ServiceError) -> Self {
        let code = match e {
            ServiceError::ScenarioInvalid(_) => ErrorCode::ScenarioInvalid,
            ServiceError::NoPendingCandidates => ErrorCode::NoPendingCandidates,
            ServiceError::IndexOutOfRange { .. } => ErrorCode::IndexOutOfRange,
            _ => ErrorCode::Internal,
        };
        Reject(code, e.to_string())
    }
}

fn payload<T: serde::de::DeserializeOwned>(v: &Value) -> Result<T, Reject> {
    serde_json::from_value(v.clone()).map_err(|e| Reject(ErrorCode::MalformedMessage, e.to_string()))
}

/// Server side of one client connection.
#[derive(Default)]
pub struct Connection {
    session: Option<Session>,
    greeted: bool,
    last_seq: Option<u64>,
    next_seq: u64,
    close: bool,
    metrics_sent: bool,
    /// Finished logs of sessions replaced by a later `load_scenario`.
    finished: Vec<String>,
}

impl Connection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// The transport should hang up after sending the replies.
    pub fn should_close(&self) -> bool {
        self.close
    }

    /// Finishes the live session and returns every session log of this connection.
    pub fn close(&mut self) -> Vec<String> {
        if let Some(s) = &mut self.session {
            self.finished.push(s.finish());
        }
        self.session = None;
        std::mem::take(&mut self.finished)
    }

    fn reply(&mut self, out: &mut Vec<Envelope>, kind: &str, payload: Value) {
        out.push(Envelope::new(kind, self.next_seq, payload));
        self.next_seq += 1;
    }

    fn error(&mut self, out: &mut Vec<Envelope>, code: ErrorCode, message: String, seq: Option<u64>) {
        self.reply(out, "error", json!({ "code": code, "message": message, "seq": seq }));
    }

    pub fn handle_text(&mut self, text: &str) -> Vec<Envelope> {
        match serde_json::from_str::<Envelope>(text) {
            Ok(env) => self.handle(env),
            Err(e) => {
                let mut out = Vec::new();
                self.error(&mut out, ErrorCode::MalformedMessage, e.to_string(), None);
                out
            }
        }
    }

    pub fn handle(&mut self, env: Envelope) -> Vec<Envelope> {
        let mut out = Vec::new();
        let expected = self.last_seq.map_or(0, |s| s + 1);
        if env.seq != expected {
            let msg = format!("expected seq {expected}, got {}", env.seq);
            self.error(&mut out, ErrorCode::SeqOutOfOrder, msg, Some(env.seq));
            return out;
        }
        self.last_seq = Some(env.seq);
        if let Err(Reject(code, message)) = self.dispatch(&env, &mut out) {
            self.error(&mut out, code, message, Some(env.seq));
        }
        out
    }

    fn dispatch(&mut self, env: &Envelope, out: &mut Vec<Envelope>) -> Result<(), Reject> {
        if env.kind == "hello" {
            let hello: HelloPayload = payload(&env.payload)?;
            if hello.schema_version != PROTOCOL_VERSION {
                self.close = true;
                return Err(Reject(
                    ErrorCode::VersionMismatch,
                    format!("server speaks schema_version {PROTOCOL_VERSION}, client {}", hello.schema_version),
                ));
            }
            self.greeted = true;
            self.reply(
                out,
                "hello",
                json!({ "schema_version": PROTOCOL_VERSION, "server": "assembly-engine", "version": env!("CARGO_PKG_VERSION") }),
            );
            return Ok(());
        }
        if !matches!(
            env.kind.as_str(),
            "load_scenario" | "tick" | "hand" | "select_candidate" | "mode_flags"
        ) {
            return Err(Reject(ErrorCode::UnknownType, format!("unknown message type `{}`", env.kind)));
        }
        if !self.greeted {
            return Err(Reject(ErrorCode::HelloRequired, "send hello first".into()));
        }
        if env.kind == "load_scenario" {
            let load: LoadPayload = payload(&env.payload)?;
            let session = Session::new(load.scenario)?;
            if let Some(mut old) = self.session.replace(session) {
                self.finished.push(old.finish());
            }
            self.metrics_sent = false;
            self.send_state(out, true)?;
            return Ok(());
        }
        let command = match env.kind.as_str() {
            "tick" => Command::Tick { frames: payload::<TickPayload>(&env.payload)?.frames },
            "hand" => Command::Hand { sample: payload::<HandPayload>(&env.payload)?.sample },
            "select_candidate" => Command::SelectCandidate { index: payload::<SelectPayload>(&env.payload)?.index },
            _ => {
                let p: ModeFlagsPayload = payload(&env.payload)?;
                Command::ModeFlags { mode: p.mode, flags: p.flags }
            }
        };
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| Reject(ErrorCode::SessionNotLoaded, "load a scenario first".into()))?;
        let outputs = session.execute(command.clone())?;
        self.send_outputs(out, &outputs)?;
        self.send_state(out, matches!(command, Command::Tick { .. }))?;
        Ok(())
    }

    fn send_outputs(&mut self, out: &mut Vec<Envelope>, outputs: &[Output]) -> Result<(), Reject> {
        let mut structure_changed = false;
        for o in outputs {
            match o {
                Output::Event { event } => {
                    structure_changed |= matches!(
                        (event.kind, event.target),
                        (EventKind::PlaceCorrect, _) | (EventKind::PlaceDeviation, EventTarget::Placement { .. })
                    );
                    self.reply(out, "feedback", json!({ "event": event }));
                }
                Output::Replan { frame, deviation, candidates, truncated, error } => {
                    let session = self.session.as_ref().expect("outputs come from a session");
                    let plans = session.candidates();
                    self.reply(
                        out,
                        "candidates",
                        json!({
                            "frame": frame,
                            "deviation": deviation,
                            "candidates": candidates,
                            "truncated": truncated,
                            "error": error,
                            "pending": !plans.is_empty(),
                            "plans": plans,
                        }),
                    );
                }
                Output::Select { index, state_hash, steps } => {
                    self.reply(out, "selected", json!({ "index": index, "state_hash": state_hash, "steps": steps }));
                }
                Output::Notice { frame, message } => {
                    self.reply(out, "notice", json!({ "frame": frame, "message": message }));
                }
            }
        }
        if structure_changed {
            let session = self.session.as_ref().expect("outputs come from a session");
            let report = session.stability()?;
            let frame = session.twin().frame;
            self.reply(out, "stability_report", json!({ "frame": frame, "report": report }));
        }
        Ok(())
    }

    fn send_state(&mut self, out: &mut Vec<Envelope>, with_twin: bool) -> Result<(), Reject> {
        let session = self.session.as_ref().expect("state needs a session");
        let twin = json!({
            "session_id": session.id(),
            "frame": session.twin().frame,
            "tracks": session.twin().tracks,
        });
        let instruction = serde_json::to_value(session.instruction()).expect("instructions serialize");
        let done = session.complete() || session.exhausted();
        let metrics = if done && !self.metrics_sent { Some(session.metrics()?) } else { None };
        if with_twin {
            self.reply(out, "twin_snapshot", twin);
        }
        self.reply(out, "step_instruction", instruction);
        if let Some(m) = metrics {
            self.metrics_sent = true;
            self.reply(out, "metrics", serde_json::to_value(m).expect("metrics serialize"));
        }
        Ok(())
    }
}
