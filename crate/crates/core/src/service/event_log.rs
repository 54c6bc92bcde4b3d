//! JSON-lines session log: a header with the scenario, every command with
//! the outputs it produced, and a footer with the final state hash.
//!
//! Consecutive ticks collapse into one command line, so ticking one frame
//! at a time and ticking many at once log the same text.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::Scenario;
use crate::twin::Frame;

use super::session::{Command, Output};
use super::ServiceError;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    session_id: String,
    scenario: Scenario,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    commands: u64,
    events: u64,
    frames: Frame,
    state_hash: String,
}

/// `body` serialized as an object with a leading `"type"` field.
fn tagged<T: Serialize>(kind: &str, body: &T) -> String {
    let s = serde_json::to_string(body).expect("log entries serialize");
    let rest = s.strip_prefix('{').expect("log entries are objects");
    if rest == "}" {
        format!("{{\"type\":\"{kind}\"}}")
    } else {
        format!("{{\"type\":\"{kind}\",{rest}")
    }
}

#[derive(Serialize)]
struct CommandLine<'a> {
    command: &'a Command,
}

#[derive(Debug, Clone)]
pub struct EventLog {
    lines: Vec<String>,
    pending_ticks: u64,
    /// Outputs of the pending ticks, written after their command line.
    pending: Vec<String>,
    commands: u64,
    events: u64,
    finished: bool,
}

impl EventLog {
    pub fn new(scenario: &Scenario, session_id: &str) -> Self {
        let header = Header {
            schema_version: LOG_SCHEMA_VERSION,
            session_id: session_id.to_string(),
            scenario: scenario.clone(),
        };
        EventLog {
            lines: vec![tagged("header", &header)],
            pending_ticks: 0,
            pending: Vec::new(),
            commands: 0,
            events: 0,
            finished: false,
        }
    }

    fn flush_ticks(&mut self) {
        if self.pending_ticks == 0 {
            return;
        }
        let tick = Command::Tick { frames: self.pending_ticks };
        self.lines.push(tagged("command", &CommandLine { command: &tick }));
        self.commands += 1;
        self.lines.append(&mut self.pending);
        self.pending_ticks = 0;
    }

    pub fn command(&mut self, command: &Command) {
        if let Command::Tick { frames } = command {
            self.pending_ticks += frames;
            return;
        }
        self.flush_ticks();
        self.lines.push(tagged("command", &CommandLine { command }));
        self.commands += 1;
    }

    pub fn output(&mut self, output: &Output) {
        if matches!(output, Output::Event { .. }) {
            self.events += 1;
        }
        let line = serde_json::to_string(output).expect("outputs serialize");
        if self.pending_ticks > 0 {
            self.pending.push(line);
        } else {
            self.lines.push(line);
        }
    }

    pub fn finish(&mut self, frames: Frame, state_hash: &str) {
        if self.finished {
            return;
        }
        self.flush_ticks();
        let footer = Footer {
            commands: self.commands,
            events: self.events,
            frames,
            state_hash: state_hash.to_string(),
        };
        self.lines.push(tagged("footer", &footer));
        self.finished = true;
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Lines written so far, newline terminated.
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

fn diverged(line: usize, reason: impl Into<String>) -> ServiceError {
    ServiceError::ReplayDiverged { line, reason: reason.into() }
}

/// Scenario and commands of a log, with 1-based line numbers.
pub(super) fn parse(text: &str) -> Result<(Scenario, Vec<(usize, Command)>), ServiceError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| diverged(1, "empty log"))?;
    let header: Value = serde_json::from_str(first).map_err(|e| diverged(1, format!("malformed header: {e}")))?;
    if header.get("type").and_then(Value::as_str) != Some("header") {
        return Err(diverged(1, "first line is not a header"));
    }
    let header: Header = serde_json::from_value(header).map_err(|e| diverged(1, format!("malformed header: {e}")))?;
    if header.schema_version != LOG_SCHEMA_VERSION {
        return Err(diverged(1, format!("unsupported log schema_version {}", header.schema_version)));
    }
    let mut commands = Vec::new();
    let mut footer = false;
    for (n, line) in lines {
        if footer {
            return Err(diverged(n, "content after the footer"));
        }
        let v: Value = serde_json::from_str(line).map_err(|e| diverged(n, format!("malformed line: {e}")))?;
        match v.get("type").and_then(Value::as_str) {
            Some("command") => {
                let c = v.get("command").cloned().ok_or_else(|| diverged(n, "command line without a command"))?;
                let c: Command = serde_json::from_value(c).map_err(|e| diverged(n, format!("malformed command: {e}")))?;
                commands.push((n, c));
            }
            Some("footer") => footer = true,
            Some(_) => {}
            None => return Err(diverged(n, "line without a type")),
        }
    }
    if !footer {
        return Err(diverged(text.lines().count() + 1, "missing footer"));
    }
    Ok((header.scenario, commands))
}

fn clip(s: &str) -> &str {
    let end = s.char_indices().nth(160).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

pub(super) fn compare(original: &str, replayed: &str) -> Result<(), ServiceError> {
    let a: Vec<&str> = original.lines().filter(|l| !l.trim().is_empty()).collect();
    let b: Vec<&str> = replayed.lines().collect();
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if x != y {
            return Err(diverged(i + 1, format!("logged `{}`, replayed `{}`", clip(x), clip(y))));
        }
    }
    if a.len() != b.len() {
        return Err(diverged(a.len().min(b.len()) + 1, format!("logged {} lines, replayed {}", a.len(), b.len())));
    }
    Ok(())
}
