//! Resolved, type-checked form of a flattened model.
//!
//! Names are replaced by indices and every implicit int-to-real promotion is
//! explicit. The interpreter and the C emitter both execute this form, which is
//! what keeps their traces identical.

use std::fmt;

use super::{BlockKind, Direction, SigKind};
use crate::diag::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prim {
    Bool,
    Int,
    Real,
    Enum(usize),
}

/// A runtime value. Enum values are variant indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Enum(usize),
}

impl Value {
    pub fn zero(ty: Prim) -> Value {
        match ty {
            Prim::Bool => Value::Bool(false),
            Prim::Int => Value::Int(0),
            Prim::Real => Value::Real(0.0),
            Prim::Enum(_) => Value::Enum(0),
        }
    }

    pub fn as_real(self) -> f64 {
        match self {
            Value::Real(r) => r,
            Value::Int(i) => i as f64,
            Value::Bool(b) => f64::from(u8::from(b)),
            Value::Enum(e) => e as f64,
        }
    }

    pub fn as_int(self) -> i64 {
        match self {
            Value::Int(i) => i,
            Value::Real(r) => r as i64,
            Value::Bool(b) => i64::from(b),
            Value::Enum(e) => e as i64,
        }
    }

    pub fn as_bool(self) -> bool {
        match self {
            Value::Bool(b) => b,
            Value::Int(i) => i != 0,
            Value::Real(r) => r != 0.0,
            Value::Enum(e) => e != 0,
        }
    }

    /// Bitwise identity; distinguishes `0.0` from `-0.0` and compares NaNs by payload.
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Slot {
    /// Attribute name followed by nested data field names.
    pub path: Vec<String>,
    pub ty: Prim,
    pub init: Value,
    pub tunable: bool,
}

impl Slot {
    pub fn dotted(&self) -> String {
        self.path.join(".")
    }
}

/// A data object embedded in a layout, located by its first slot.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub path: Vec<String>,
    pub data: usize,
    pub base: usize,
}

/// Flattened storage of an actor or data class: every primitive reachable
/// through attributes and nested data fields, in declaration order.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub objects: Vec<Embedded>,
}

impl Layout {
    pub fn slot(&self, path: &[String]) -> Option<usize> {
        self.slots.iter().position(|s| s.path == path)
    }

    pub fn object(&self, path: &[String]) -> Option<&Embedded> {
        self.objects.iter().find(|o| o.path == path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arith {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Operand type of a numeric operation after promotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Num {
    Int,
    Real,
}

#[derive(Debug, Clone)]
pub enum RExpr {
    Const(Value),
    /// Slot of the current object, relative to the frame base.
    Slot(usize),
    Param(usize),
    /// Block output of the enclosing actor.
    Out,
    PortCall { port: usize, sig: usize, args: Vec<RExpr>, span: Span },
    DataCall { base: usize, data: usize, method: usize, args: Vec<RExpr> },
    ToReal(Box<RExpr>),
    Neg(Num, Box<RExpr>),
    Not(Box<RExpr>),
    Arith(Arith, Num, Box<RExpr>, Box<RExpr>, Span),
    /// Operands have the same type; `Prim` says which.
    Cmp(Cmp, Prim, Box<RExpr>, Box<RExpr>),
    And(Box<RExpr>, Box<RExpr>),
    Or(Box<RExpr>, Box<RExpr>),
}

#[derive(Debug, Clone)]
pub enum RStmt {
    Assign { slot: usize, value: RExpr },
    /// An expression evaluated for its effects (a call whose result is dropped).
    Eval(RExpr),
    Send { port: usize, sig: usize, args: Vec<RExpr> },
    SetTimer { timer: usize, ticks: RExpr, span: Span },
    CancelTimer { timer: usize },
    Return(RExpr),
}

#[derive(Debug, Clone)]
pub struct RMethod {
    pub name: String,
    pub span: Span,
    pub params: Vec<(String, Prim)>,
    pub ret: Option<Prim>,
    pub body: Vec<RStmt>,
}

#[derive(Debug, Clone)]
pub struct RSig {
    pub kind: SigKind,
    pub name: String,
    pub params: Vec<(String, Prim)>,
    pub ret: Option<Prim>,
}

#[derive(Debug, Clone)]
pub struct RProtocol {
    pub name: String,
    pub sigs: Vec<RSig>,
}

impl RProtocol {
    pub fn sig(&self, name: &str) -> Option<usize> {
        self.sigs.iter().position(|s| s.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct RPort {
    pub name: String,
    pub direction: Direction,
    pub protocol: usize,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct REnd {
    /// `None` is `self`.
    pub part: Option<usize>,
    pub port: usize,
}

#[derive(Debug, Clone)]
pub struct RChannel {
    pub a: REnd,
    pub b: REnd,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct RTransition {
    pub from: usize,
    pub to: usize,
    pub trigger: String,
    pub guard: Option<RExpr>,
    pub actions: Vec<RStmt>,
}

#[derive(Debug, Clone)]
pub struct RMachine {
    pub states: Vec<String>,
    pub initial: usize,
    pub transitions: Vec<RTransition>,
}

#[derive(Debug, Clone)]
pub struct RBlock {
    pub kind: BlockKind,
    pub input: RExpr,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct RActor {
    pub name: String,
    pub layout: Layout,
    pub ports: Vec<RPort>,
    pub timers: Vec<String>,
    pub methods: Vec<RMethod>,
    pub parts: Vec<(String, usize)>,
    pub channels: Vec<RChannel>,
    pub machine: Option<RMachine>,
    pub block: Option<RBlock>,
    pub deadline: Option<u64>,
    pub span: Span,
}

impl RActor {
    pub fn method(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m.name == name)
    }

    pub fn port(&self, name: &str) -> Option<usize> {
        self.ports.iter().position(|p| p.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct RData {
    pub name: String,
    pub layout: Layout,
    pub methods: Vec<RMethod>,
}

#[derive(Debug, Clone)]
pub struct REnum {
    pub name: String,
    pub variants: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub name: String,
    pub enums: Vec<REnum>,
    pub protocols: Vec<RProtocol>,
    pub data: Vec<RData>,
    pub actors: Vec<RActor>,
    pub root: usize,
}

impl Program {
    pub fn actor(&self, name: &str) -> Option<usize> {
        self.actors.iter().position(|a| a.name == name)
    }

    /// `Mode.Heat` style name of an enum value.
    pub fn enum_name(&self, ty: usize, v: usize) -> String {
        let e = &self.enums[ty];
        format!("{}.{}", e.name, e.variants.get(v).map(String::as_str).unwrap_or("?"))
    }
}

impl fmt::Display for Prim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prim::Bool => f.write_str("bool"),
            Prim::Int => f.write_str("int"),
            Prim::Real => f.write_str("real"),
            Prim::Enum(i) => write!(f, "enum#{i}"),
        }
    }
}
