//! Wire frames. Every WebSocket text frame carries exactly one JSON object
//! with a `type` field.

use std::collections::BTreeMap;

use broom_core::sim::{Stimulus, StimulusKind, TraceValue};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

/// A client request, applied by the simulation owner at the next tick
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetAttr {
        instance: String,
        attr: String,
        value: Json,
    },
    /// Delivered during the next tick that runs.
    Inject {
        target: String,
        port: String,
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kind: Option<StimulusKind>,
        #[serde(default)]
        args: Vec<Json>,
    },
    Pause,
    Resume,
    Step {
        n: u64,
    },
    SetSpeed {
        speed: f64,
    },
    /// Replace the sampled signal set. An empty list restores the default.
    Subscribe {
        signals: Vec<String>,
    },
    Shutdown,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetAttr { .. } => "set_attr",
            Command::Inject { .. } => "inject",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Step { .. } => "step",
            Command::SetSpeed { .. } => "set_speed",
            Command::Subscribe { .. } => "subscribe",
            Command::Shutdown => "shutdown",
        }
    }

    /// The stimulus an `inject` stands for, due at `tick`.
    pub fn stimulus(&self, tick: u64) -> Option<Stimulus> {
        match self {
            Command::Inject { target, port, name, kind, args } => Some(Stimulus {
                at_tick: tick,
                target: target.clone(),
                port: port.clone(),
                name: name.clone(),
                kind: *kind,
                args: args.clone(),
            }),
            _ => None,
        }
    }
}

/// A command plus the optional client-chosen id echoed in its reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Json>,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// The tick whose end state this is.
    pub tick: u64,
    pub time: f64,
    /// How far the paced clock lags behind wall time, 0 when stepping.
    pub behind_ms: f64,
    pub signals: BTreeMap<String, Json>,
    pub fsm_states: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    /// First frame on every connection.
    Hello {
        model: String,
        version: String,
        dt: f64,
        snapshot_every: u64,
        /// Next tick to run.
        tick: u64,
        paused: bool,
        speed: f64,
        instances: Vec<String>,
        signals: Vec<String>,
        tunables: Vec<String>,
    },
    Snapshot(Snapshot),
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Json>,
        command: String,
        /// Next tick to run once the command took effect.
        tick: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Json>,
        code: String,
        message: String,
    },
    Bye,
}

impl Frame {
    pub fn error(id: Option<Json>, code: &str, message: impl Into<String>) -> Frame {
        Frame::Error { id, code: code.into(), message: message.into() }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|e| format!("{{\"type\":\"error\",\"code\":\"E_PROTOCOL\",\"message\":\"{e}\"}}"))
    }
}

/// Unparseable or ill-typed frame.
pub const E_PROTOCOL: &str = "E_PROTOCOL";
/// `set_attr` on an attribute not declared `tunable`.
pub const E_TUNABLE: &str = "E_TUNABLE";
/// `inject` naming an unknown target, port or signature.
pub const E_STIMULUS: &str = "E_STIMULUS";
/// Unknown signal selector in `subscribe`.
pub const E_SELECTOR: &str = "E_SELECTOR";
/// Out-of-range `step` or `set_speed` argument.
pub const E_ARGUMENT: &str = "E_ARGUMENT";
/// The run stopped on a runtime error and cannot advance.
pub const E_HALTED: &str = "E_HALTED";

/// Parse a client frame. The error is the text of an `E_PROTOCOL` reply.
pub fn parse_request(text: &str) -> Result<Request, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

/// JSON form of a trace value. Non-finite reals become the strings `nan`,
/// `inf` and `-inf`, as in traces.
pub fn json_of(v: &TraceValue) -> Json {
    match v {
        TraceValue::Bool(b) => Json::Bool(*b),
        TraceValue::Int(i) => Json::from(*i),
        TraceValue::Real(r) if r.is_finite() => Json::from(*r),
        TraceValue::Real(r) if r.is_nan() => Json::from("nan"),
        TraceValue::Real(r) => Json::from(if *r > 0.0 { "inf" } else { "-inf" }),
        TraceValue::Str(s) => Json::from(s.as_str()),
    }
}
