//! The static model: actor classes, data classes, protocols and enums.
//!
//! Everything here is plain data produced by the parser. Well-formedness is
//! checked by [`validate`], inheritance is removed by [`flatten_inheritance`],
//! and [`instantiate`] builds the runtime [`InstanceTree`].

mod flatten;
pub mod instance;
pub mod ir;
mod typeck;
mod validate;

pub use flatten::flatten_inheritance;
pub use instance::{instantiate, Binding, Callee, Instance, InstanceTree, ABSENT};
pub use validate::validate;

use crate::diag::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelUnit {
    pub name: String,
    pub enums: Vec<EnumDecl>,
    pub protocols: Vec<Protocol>,
    pub data_classes: Vec<DataClass>,
    pub actor_classes: Vec<ActorClass>,
    pub root: String,
    pub root_span: Span,
    pub span: Span,
}

impl ModelUnit {
    pub fn actor(&self, name: &str) -> Option<&ActorClass> {
        self.actor_classes.iter().find(|a| a.name == name)
    }

    pub fn data(&self, name: &str) -> Option<&DataClass> {
        self.data_classes.iter().find(|d| d.name == name)
    }

    pub fn protocol(&self, name: &str) -> Option<&Protocol> {
        self.protocols.iter().find(|p| p.name == name)
    }

    pub fn enum_decl(&self, name: &str) -> Option<&EnumDecl> {
        self.enums.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumDecl {
    pub name: String,
    pub variants: Vec<String>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub name: String,
    pub signatures: Vec<Signature>,
    pub span: Span,
}

impl Protocol {
    pub fn signature(&self, name: &str) -> Option<&Signature> {
        self.signatures.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigKind {
    Method,
    Message,
}

impl SigKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SigKind::Method => "method",
            SigKind::Message => "message",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub kind: SigKind,
    pub name: String,
    pub params: Vec<Param>,
    /// Always `None` for messages.
    pub ret: Option<Type>,
    pub span: Span,
}

impl Signature {
    /// Same kind, parameter types and return type. Parameter names may differ.
    pub fn same_shape(&self, other: &Signature) -> bool {
        self.kind == other.kind
            && self.ret == other.ret
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.ty == b.ty)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Type {
    Bool,
    Int,
    Real,
    /// An enum or data class; which one is decided during type checking.
    Named(String),
}

impl std::fmt::Display for Type {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Type::Bool => f.write_str("bool"),
            Type::Int => f.write_str("int"),
            Type::Real => f.write_str("real"),
            Type::Named(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Real(f64),
    Enum(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataClass {
    pub name: String,
    pub fields: Vec<Attribute>,
    pub methods: Vec<Method>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorClass {
    pub name: String,
    /// More than one entry is a validation error; the grammar accepts a list so
    /// the mistake can be reported with a location.
    pub superclasses: Vec<Reference>,
    pub ports: Vec<Port>,
    pub attributes: Vec<Attribute>,
    pub timers: Vec<Timer>,
    pub methods: Vec<Method>,
    pub parts: Vec<Part>,
    pub channels: Vec<Channel>,
    pub machine: Option<StateMachine>,
    pub block: Option<Block>,
    pub deadline: Option<Deadline>,
    pub span: Span,
}

impl ActorClass {
    pub fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            superclasses: Vec::new(),
            ports: Vec::new(),
            attributes: Vec::new(),
            timers: Vec::new(),
            methods: Vec::new(),
            parts: Vec::new(),
            channels: Vec::new(),
            machine: None,
            block: None,
            deadline: None,
            span: Span::default(),
        }
    }

    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    pub fn part(&self, name: &str) -> Option<&Part> {
        self.parts.iter().find(|p| p.name == name)
    }

    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Names of all members that share the inheritance namespace.
    pub fn member_names(&self) -> impl Iterator<Item = (&str, Span)> {
        self.ports
            .iter()
            .map(|p| (p.name.as_str(), p.span))
            .chain(self.attributes.iter().map(|a| (a.name.as_str(), a.span)))
            .chain(self.timers.iter().map(|t| (t.name.as_str(), t.span)))
            .chain(self.methods.iter().map(|m| (m.name.as_str(), m.span)))
            .chain(self.parts.iter().map(|p| (p.name.as_str(), p.span)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Provided,
    Required,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Port {
    pub name: String,
    pub direction: Direction,
    pub protocol: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub ty: Type,
    pub init: Option<Literal>,
    pub tunable: bool,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timer {
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub name: String,
    pub class: String,
    pub span: Span,
}

/// `None` stands for `self`.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub part: Option<String>,
    pub port: String,
    pub span: Span,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.part {
            Some(p) => write!(f, "{p}.{}", self.port),
            None => write!(f, "self.{}", self.port),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub a: Endpoint,
    pub b: Endpoint,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateMachine {
    pub states: Vec<Reference>,
    pub initial: Reference,
    pub transitions: Vec<Transition>,
    pub span: Span,
}

impl StateMachine {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: Reference,
    pub to: Reference,
    pub trigger: Reference,
    pub guard: Option<Expr>,
    pub actions: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockKind {
    Pt1 { gain: f64, time_constant: f64 },
    Pi { kp: f64, ki: f64, lo: f64, hi: f64 },
    Limiter { lo: f64, hi: f64 },
}

impl BlockKind {
    /// Blocks whose output does not depend on the same-tick input are allowed
    /// inside dataflow cycles.
    pub fn is_stateful(&self) -> bool {
        !matches!(self, BlockKind::Limiter { .. })
    }

    pub fn keyword(&self) -> &'static str {
        match self {
            BlockKind::Pt1 { .. } => "pt1",
            BlockKind::Pi { .. } => "pi",
            BlockKind::Limiter { .. } => "limiter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub input: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deadline {
    pub ticks: u64,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "&&",
            BinaryOp::Or => "||",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Lt
            | BinaryOp::Le
            | BinaryOp::Gt
            | BinaryOp::Ge
            | BinaryOp::Eq
            | BinaryOp::Ne => 3,
            BinaryOp::Add | BinaryOp::Sub => 4,
            BinaryOp::Mul | BinaryOp::Div => 5,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Lit(Literal),
    /// A bare name: attribute, parameter or data field.
    Name(String),
    /// `a.b`: data field access or enum variant.
    Field(Box<Expr>, String),
    /// `target.method(args)`: a call through a required port or on a data attribute.
    Call { target: Vec<String>, method: String, args: Vec<Expr> },
    /// The block output of the enclosing actor.
    Out,
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `a.b.c := e`
    Assign { target: Vec<String>, value: Expr },
    /// Synchronous call whose result (if any) is discarded.
    Call { target: Vec<String>, method: String, args: Vec<Expr> },
    /// `send port.msg(args)`
    Send { port: String, message: String, args: Vec<Expr> },
    /// `set timer(ticks)`
    SetTimer { timer: String, ticks: Expr },
    CancelTimer { timer: String },
    Return(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}
