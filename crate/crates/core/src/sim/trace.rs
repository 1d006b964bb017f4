//! Trace events and their NDJSON form.
//!
//! The writer is hand-rolled so that the interpreter and the generated C
//! program can agree byte for byte: reals go through [`format_real`], which
//! reproduces C's `%.17g` and then marks the value as a real.

use std::fmt::{self, Write as _};
use std::io::{self, BufRead, Write};

use serde_json::Value as Json;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Call,
    CallReturn,
    MsgSend,
    MsgRecv,
    Transition,
    Sample,
    TimerFire,
    RuntimeError,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::Call,
        EventKind::CallReturn,
        EventKind::MsgSend,
        EventKind::MsgRecv,
        EventKind::Transition,
        EventKind::Sample,
        EventKind::TimerFire,
        EventKind::RuntimeError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Call => "call",
            EventKind::CallReturn => "call_return",
            EventKind::MsgSend => "msg_send",
            EventKind::MsgRecv => "msg_recv",
            EventKind::Transition => "transition",
            EventKind::Sample => "sample",
            EventKind::TimerFire => "timer_fire",
            EventKind::RuntimeError => "runtime_error",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A payload literal. Enum values travel as `"Enum.Variant"` strings.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl TraceValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            TraceValue::Real(r) => Some(*r),
            TraceValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            TraceValue::Int(i) => Some(*i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub tick: u64,
    /// Seconds, always `tick as f64 * dt`.
    pub time: f64,
    pub kind: EventKind,
    /// Instance path, or `env` for stimuli.
    pub src: String,
    pub dst: String,
    pub name: String,
    pub payload: Vec<TraceValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub model: String,
    pub dt: f64,
    pub duration: f64,
    pub tool_version: String,
    /// Every instance path in preorder.
    pub instances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// The runtime error that halted the run, if any.
    pub fn runtime_error(&self) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.kind == EventKind::RuntimeError)
    }

    pub fn to_ndjson(&self) -> String {
        let mut s = header_line(&self.header);
        s.push('\n');
        for e in &self.events {
            s.push_str(&event_line(e));
            s.push('\n');
        }
        s
    }

    pub fn write_ndjson(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{}", header_line(&self.header))?;
        for e in &self.events {
            writeln!(w, "{}", event_line(e))?;
        }
        Ok(())
    }

    pub fn from_ndjson(text: &str) -> Result<Trace, TraceParseError> {
        read_ndjson(text.as_bytes())
    }
}

/// C `printf("%.17g", x)`, with NaN and infinities spelled `nan`, `inf`, `-inf`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let prec = (16 - exp) as usize;
        strip_zeros(&format!("{x:.prec$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// JSON spelling of a real: `%.17g` plus `.0` when the text would otherwise
/// read back as an integer. Non-finite values become strings.
pub fn format_real(x: f64) -> String {
    let g = format_g17(x);
    if x.is_nan() || x.is_infinite() {
        format!("\"{g}\"")
    } else if g.contains(['.', 'e']) {
        g
    } else {
        g + ".0"
    }
}

fn push_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).unwrap_or_else(|_| "\"\"".into()));
}

fn push_value(out: &mut String, v: &TraceValue) {
    match v {
        TraceValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        TraceValue::Int(i) => {
            let _ = write!(out, "{i}");
        }
        TraceValue::Real(r) => out.push_str(&format_real(*r)),
        TraceValue::Str(s) => push_str(out, s),
    }
}

pub fn header_line(h: &TraceHeader) -> String {
    let mut s = String::from("{\"model\":");
    push_str(&mut s, &h.model);
    s.push_str(",\"dt\":");
    s.push_str(&format_real(h.dt));
    s.push_str(",\"duration\":");
    s.push_str(&format_real(h.duration));
    s.push_str(",\"tool_version\":");
    push_str(&mut s, &h.tool_version);
    s.push_str(",\"instances\":[");
    for (i, p) in h.instances.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        push_str(&mut s, p);
    }
    s.push_str("]}");
    s
}

pub fn event_line(e: &TraceEvent) -> String {
    let mut s = String::with_capacity(128);
    let _ = write!(s, "{{\"tick\":{},\"time\":{},\"kind\":\"{}\",\"src\":", e.tick, format_real(e.time), e.kind);
    push_str(&mut s, &e.src);
    s.push_str(",\"dst\":");
    push_str(&mut s, &e.dst);
    s.push_str(",\"name\":");
    push_str(&mut s, &e.name);
    s.push_str(",\"payload\":[");
    for (i, v) in e.payload.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        push_value(&mut s, v);
    }
    s.push_str("]}");
    s
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("empty trace file")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn field<'a>(obj: &'a serde_json::Map<String, Json>, key: &str, line: usize) -> Result<&'a Json, TraceParseError> {
    obj.get(key).ok_or_else(|| TraceParseError::Syntax { line, message: format!("missing `{key}`") })
}

fn string(v: &Json, key: &str, line: usize) -> Result<String, TraceParseError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| TraceParseError::Syntax { line, message: format!("`{key}` must be a string") })
}

fn real(v: &Json, key: &str, line: usize) -> Result<f64, TraceParseError> {
    v.as_f64().ok_or_else(|| TraceParseError::Syntax { line, message: format!("`{key}` must be a number") })
}

fn payload_value(v: &Json, line: usize) -> Result<TraceValue, TraceParseError> {
    Ok(match v {
        Json::Bool(b) => TraceValue::Bool(*b),
        Json::Number(n) if n.is_i64() => TraceValue::Int(n.as_i64().unwrap_or(0)),
        Json::Number(n) => TraceValue::Real(n.as_f64().unwrap_or(f64::NAN)),
        Json::String(s) => TraceValue::Str(s.clone()),
        _ => {
            return Err(TraceParseError::Syntax { line, message: "unsupported payload value".into() });
        }
    })
}

/// Read a trace written by [`Trace::write_ndjson`] or by a generated program.
pub fn read_ndjson(r: impl BufRead) -> Result<Trace, TraceParseError> {
    let mut header = None;
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let json: Json = serde_json::from_str(&line)
            .map_err(|e| TraceParseError::Syntax { line: line_no, message: e.to_string() })?;
        let Json::Object(obj) = json else {
            return Err(TraceParseError::Syntax { line: line_no, message: "expected an object".into() });
        };
        if header.is_none() {
            let instances = match field(&obj, "instances", line_no)? {
                Json::Array(a) => a
                    .iter()
                    .map(|v| string(v, "instances", line_no))
                    .collect::<Result<Vec<_>, _>>()?,
                _ => {
                    return Err(TraceParseError::Syntax { line: line_no, message: "`instances` must be a list".into() })
                }
            };
            header = Some(TraceHeader {
                model: string(field(&obj, "model", line_no)?, "model", line_no)?,
                dt: real(field(&obj, "dt", line_no)?, "dt", line_no)?,
                duration: real(field(&obj, "duration", line_no)?, "duration", line_no)?,
                tool_version: string(field(&obj, "tool_version", line_no)?, "tool_version", line_no)?,
                instances,
            });
            continue;
        }
        let kind_text = string(field(&obj, "kind", line_no)?, "kind", line_no)?;
        let kind = EventKind::parse(&kind_text).ok_or_else(|| TraceParseError::Syntax {
            line: line_no,
            message: format!("unknown event kind `{kind_text}`"),
        })?;
        let tick = field(&obj, "tick", line_no)?
            .as_u64()
            .ok_or_else(|| TraceParseError::Syntax { line: line_no, message: "`tick` must be a count".into() })?;
        let payload = match field(&obj, "payload", line_no)? {
            Json::Array(a) => a.iter().map(|v| payload_value(v, line_no)).collect::<Result<Vec<_>, _>>()?,
            _ => return Err(TraceParseError::Syntax { line: line_no, message: "`payload` must be a list".into() }),
        };
        events.push(TraceEvent {
            tick,
            time: real(field(&obj, "time", line_no)?, "time", line_no)?,
            kind,
            src: string(field(&obj, "src", line_no)?, "src", line_no)?,
            dst: string(field(&obj, "dst", line_no)?, "dst", line_no)?,
            name: string(field(&obj, "name", line_no)?, "name", line_no)?,
            payload,
        });
    }
    Ok(Trace { header: header.ok_or(TraceParseError::Empty)?, events })
}
