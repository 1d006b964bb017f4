//! Scripted environment actions.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::model::ir::{Prim, Program, Value};
use crate::model::{Direction, InstanceTree, SigKind};

use super::trace::TraceValue;

/// One environment action as written in a stimulus file.
///
/// `target` is the instance path that owns `port`, a provided port. If the
/// port is a relay, delivery goes to the instance that implements it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub at_tick: u64,
    pub target: String,
    pub port: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<StimulusKind>,
    #[serde(default)]
    pub args: Vec<Json>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimulusKind {
    Message,
    Method,
}

impl Stimulus {
    pub fn message(at_tick: u64, target: &str, port: &str, name: &str, args: Vec<Json>) -> Self {
        Self {
            at_tick,
            target: target.into(),
            port: port.into(),
            name: name.into(),
            kind: Some(StimulusKind::Message),
            args,
        }
    }

    pub fn method(at_tick: u64, target: &str, port: &str, name: &str, args: Vec<Json>) -> Self {
        Self { kind: Some(StimulusKind::Method), ..Self::message(at_tick, target, port, name, args) }
    }
}

/// Parse a stimulus file: a JSON list of stimulus objects.
pub fn parse_stimuli(text: &str) -> Result<Vec<Stimulus>, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

/// A stimulus checked against the instance tree.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub at_tick: u64,
    /// Implementing instance.
    pub instance: usize,
    pub kind: SigKind,
    pub name: String,
    pub args: Vec<Value>,
    pub prims: Vec<Prim>,
}

pub fn resolve(tree: &InstanceTree, s: &Stimulus) -> Result<Resolved, String> {
    let inst = tree.find(&s.target).ok_or_else(|| format!("no instance `{}`", s.target))?;
    let class = tree.class(inst);
    let port = class
        .port(&s.port)
        .ok_or_else(|| format!("`{}` has no port `{}`", s.target, s.port))?;
    if class.ports[port].direction != Direction::Provided {
        return Err(format!("`{}.{}` is not a provided port", s.target, s.port));
    }
    let proto = &tree.program.protocols[class.ports[port].protocol];
    let sig = proto
        .sig(&s.name)
        .map(|i| &proto.sigs[i])
        .ok_or_else(|| format!("protocol `{}` has no signature `{}`", proto.name, s.name))?;
    let want = match sig.kind {
        SigKind::Message => StimulusKind::Message,
        SigKind::Method => StimulusKind::Method,
    };
    if s.kind.is_some_and(|k| k != want) {
        return Err(format!("`{}` is a {}", s.name, sig.kind.as_str()));
    }
    if s.args.len() != sig.params.len() {
        return Err(format!("`{}` takes {} argument(s), {} given", s.name, sig.params.len(), s.args.len()));
    }
    let prims: Vec<Prim> = sig.params.iter().map(|p| p.1).collect();
    let args = s
        .args
        .iter()
        .zip(&prims)
        .map(|(j, &p)| json_value(&tree.program, j, p))
        .collect::<Result<Vec<_>, _>>()?;
    let callee = tree.resolve_provided(inst, port);
    Ok(Resolved { at_tick: s.at_tick, instance: callee.instance, kind: sig.kind, name: s.name.clone(), args, prims })
}

/// Convert a JSON literal to a typed value.
pub fn json_value(p: &Program, j: &Json, ty: Prim) -> Result<Value, String> {
    match (ty, j) {
        (Prim::Bool, Json::Bool(b)) => Ok(Value::Bool(*b)),
        (Prim::Int, Json::Number(n)) if n.is_i64() => Ok(Value::Int(n.as_i64().unwrap_or(0))),
        (Prim::Real, Json::Number(n)) => n.as_f64().map(Value::Real).ok_or_else(|| "bad number".into()),
        (Prim::Enum(e), Json::String(s)) => {
            let decl = &p.enums[e];
            let variant = s
                .strip_prefix(&format!("{}.", decl.name))
                .and_then(|v| decl.variants.iter().position(|x| x == v))
                .ok_or_else(|| format!("`{s}` is not a value of enum `{}`", decl.name))?;
            Ok(Value::Enum(variant))
        }
        _ => Err(format!("`{j}` does not fit type {}", prim_name(p, ty))),
    }
}

pub(crate) fn prim_name(p: &Program, ty: Prim) -> String {
    match ty {
        Prim::Enum(e) => p.enums[e].name.clone(),
        other => other.to_string(),
    }
}

/// Trace spelling of a typed value.
pub fn trace_value(p: &Program, ty: Prim, v: Value) -> TraceValue {
    match (ty, v) {
        (Prim::Enum(e), Value::Enum(x)) => TraceValue::Str(p.enum_name(e, x)),
        (_, Value::Bool(b)) => TraceValue::Bool(b),
        (_, Value::Int(i)) => TraceValue::Int(i),
        (_, Value::Real(r)) => TraceValue::Real(r),
        (_, Value::Enum(x)) => TraceValue::Int(x as i64),
    }
}
