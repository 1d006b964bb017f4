//! C89 code generation.
//!
//! [`flatten`] lowers an instance tree into a [`FlatProgram`]: every port
//! binding becomes a direct call to a per-instance C function, every message
//! queue a ring buffer of `drain_cap` entries, every state machine a
//! transition table shared by all instances of its class. [`render`] turns
//! that into `model.h`, `model.c`, `SCHEDULE.txt` and, when tracing is on,
//! `trace_shim.c`, a `main` that replays a stimulus script and prints the
//! same NDJSON trace as the interpreter.
//!
//! Names are mangled from instance paths: path segments are joined with `_`
//! and an underscore inside a name is written `_0`. Attribute fields start
//! their member part with `_1`, so `root.plant`'s attribute `gain` is
//! `root_plant_1gain` while its block output is `root_plant_y`. Identifiers
//! never start with a digit, so every mangled name decodes one way only.
//!
//! The generated code evaluates operands strictly left to right. Any operand
//! that is followed by a call is computed into a temporary first, because C
//! leaves the order of operand evaluation unspecified. Runtime errors leave
//! the tick through `longjmp`; there is no recursion and no heap.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

use crate::blocks::BlockState;
use crate::model::ir::*;
use crate::model::{Direction, InstanceTree, SigKind};
use crate::sim::{format_g17, header_line, resolve_stimulus, SimConfig, Stimulus, TraceHeader};

pub const E_UNSUPPORTED: &str = "E_UNSUPPORTED";
pub const E_IO: &str = "E_IO";
pub const E_STIMULUS: &str = "E_STIMULUS";
pub const E_CONFIG: &str = "E_CONFIG";

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{code}: {message}")]
pub struct CodegenError {
    pub code: &'static str,
    pub message: String,
}

fn unsupported(message: impl Into<String>) -> CodegenError {
    CodegenError { code: E_UNSUPPORTED, message: message.into() }
}

type R<T> = Result<T, CodegenError>;

#[derive(Debug, Clone, Default)]
pub struct CodegenConfig {
    /// Compile trace hooks into `model.c` and emit `trace_shim.c`.
    pub emit_trace: bool,
    pub out_dir: PathBuf,
    /// Script replayed by `trace_shim.c`.
    pub stimuli: Vec<Stimulus>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct FlatInstance {
    pub path: String,
    pub mangled: String,
    pub class: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Attr,
    State,
    BlockOut,
    Integral,
}

/// One member of `struct model_state`.
#[derive(Debug, Clone)]
pub struct StateField {
    pub name: String,
    pub ctype: &'static str,
    pub instance: usize,
    pub kind: FieldKind,
    /// Dotted attribute path, state, `out` or `integral`.
    pub member: String,
    init: String,
}

/// A primitive step of the tick function, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TickStep {
    /// Deliver stimuli injected since the previous tick.
    Stimuli,
    /// Fire due timers, as `(instance, timer)` in preorder.
    Timers(Vec<(usize, usize)>),
    /// Update one block; skipped on tick 0.
    Block(usize),
    /// Drain the queues of these instances, in preorder, until all are empty.
    Drain(Vec<usize>),
}

/// A generated `model_inject_*` function.
#[derive(Debug, Clone)]
pub struct Injector {
    pub function: String,
    /// Instance, port and signature named by a stimulus.
    pub target: usize,
    pub port: String,
    pub sig: String,
    pub kind: SigKind,
    /// Instance that implements the port.
    pub receiver: usize,
    pub prims: Vec<Prim>,
}

#[derive(Debug, Clone)]
struct CFunc {
    /// Helper functions that must precede this one.
    pre: String,
    proto: String,
    body: String,
}

#[derive(Debug, Clone)]
struct ClassTable {
    class: usize,
    /// `(from, trigger id, to, guarded)`.
    rows: Vec<(usize, usize, usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct FlatProgram {
    pub model: String,
    pub config: SimConfig,
    pub instances: Vec<FlatInstance>,
    pub fields: Vec<StateField>,
    pub steps: Vec<TickStep>,
    /// Instances sampled as `out`, then instances sampled as `state`.
    pub sampled_blocks: Vec<usize>,
    pub sampled_machines: Vec<usize>,
    pub injectors: Vec<Injector>,
    /// Message kinds: name and parameter types.
    pub kinds: Vec<(String, Vec<Prim>)>,
    pub triggers: Vec<String>,
    tree: InstanceTree,
    header: TraceHeader,
    funcs: Vec<CFunc>,
    tables: Vec<ClassTable>,
    timers: Vec<(usize, usize)>,
    queues: Vec<usize>,
    helpers: BTreeSet<&'static str>,
    enums: BTreeSet<usize>,
    max_args: usize,
}

/// Escape a declared name for use inside a C identifier.
pub fn esc(name: &str) -> String {
    name.replace('_', "_0")
}

pub fn mangle_path(path: &str) -> String {
    path.split('.').map(esc).collect::<Vec<_>>().join("_")
}

fn ctype(p: Prim) -> &'static str {
    match p {
        Prim::Real => "double",
        Prim::Int => "br_int",
        Prim::Bool | Prim::Enum(_) => "int",
    }
}

/// Field of a `br_val` that carries a value of type `p`.
fn member(p: Prim) -> &'static str {
    if p == Prim::Real {
        "r"
    } else {
        "i"
    }
}

fn lit_uint(v: u64) -> String {
    if v <= u64::from(u32::MAX) {
        format!("((br_uint){v}UL)")
    } else {
        format!("((((br_uint){}UL) << 32) | (br_uint){}UL)", v >> 32, v & 0xffff_ffff)
    }
}

fn lit_int(v: i64) -> String {
    if (-2_147_483_647..=2_147_483_647).contains(&v) {
        format!("((br_int)({v}L))")
    } else {
        format!("((br_int){})", lit_uint(v as u64))
    }
}

fn lit_real(x: f64) -> R<String> {
    if !x.is_finite() {
        return Err(unsupported(format!("non-finite constant {x}")));
    }
    let mut s = format_g17(x);
    if !s.contains(['.', 'e']) {
        s.push_str(".0");
    }
    Ok(if s.starts_with('-') { format!("({s})") } else { s })
}

fn c_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if c.is_ascii_graphic() || c == ' ' => out.push(c),
            c => {
                let mut buf = [0u8; 4];
                for b in c.encode_utf8(&mut buf).bytes() {
                    let _ = write!(out, "\\{b:03o}");
                }
            }
        }
    }
    out.push('"');
    out
}

fn impure(e: &RExpr) -> bool {
    match e {
        RExpr::PortCall { .. } | RExpr::DataCall { .. } => true,
        RExpr::Const(_) | RExpr::Slot(_) | RExpr::Param(_) | RExpr::Out => false,
        RExpr::ToReal(x) | RExpr::Neg(_, x) | RExpr::Not(x) => impure(x),
        RExpr::Arith(_, _, a, b, _) | RExpr::Cmp(_, _, a, b) | RExpr::And(a, b) | RExpr::Or(a, b) => {
            impure(a) || impure(b)
        }
    }
}

/// Statements of one C function, with its temporaries.
struct Body {
    decls: Vec<String>,
    code: String,
    depth: usize,
    temps: usize,
}

impl Body {
    fn new(depth: usize) -> Self {
        Body { decls: Vec::new(), code: String::new(), depth, temps: 0 }
    }

    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.code.push_str("    ");
        }
        self.code.push_str(s);
        self.code.push('\n');
    }

    fn temp(&mut self, ty: &str) -> String {
        let n = format!("t{}", self.temps);
        self.temps += 1;
        self.decls.push(format!("{ty} {n};"));
        n
    }

    fn array(&mut self, len: usize) -> String {
        let n = format!("a{}", self.temps);
        self.temps += 1;
        self.decls.push(format!("br_val {n}[{len}];"));
        n
    }

    fn finish(self) -> String {
        let mut s = String::new();
        let pad = "    ".repeat(self.depth);
        for d in &self.decls {
            let _ = writeln!(s, "{pad}{d}");
        }
        s.push_str(&self.code);
        s
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ret {
    Value,
    Void,
    /// Store into `r` and leave the enclosing `do { } while (0)`.
    Break,
}

struct Frame<'a> {
    /// Name of the C function being generated.
    func: &'a str,
    inst: usize,
    base: usize,
    params: &'a [Prim],
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum Key {
    Invoke(usize, String),
    /// Transitions of one instance on one trigger.
    Dispatch(usize, String),
    Data(usize, usize, usize, usize),
}

struct Cx<'t> {
    tree: &'t InstanceTree,
    prog: &'t Program,
    mangled: Vec<String>,
    fields: HashMap<(usize, usize), String>,
    keys: HashMap<Key, usize>,
    names: Vec<String>,
    funcs: Vec<Option<CFunc>>,
    work: Vec<(usize, Key)>,
    edges: Vec<(usize, usize)>,
    invoke_prims: HashMap<(usize, String), Vec<Prim>>,
    helpers: BTreeSet<&'static str>,
    kinds: Vec<(String, Vec<Prim>)>,
    triggers: Vec<String>,
    receivers: BTreeSet<usize>,
    timer_ix: HashMap<(usize, usize), usize>,
    /// Enums whose names appear in traces.
    enums: BTreeSet<usize>,
}

impl<'t> Cx<'t> {
    fn trig(&mut self, name: &str) -> usize {
        if let Some(i) = self.triggers.iter().position(|t| t == name) {
            return i;
        }
        self.triggers.push(name.to_string());
        self.triggers.len() - 1
    }

    fn kind(&mut self, name: &str, prims: &[Prim]) -> usize {
        self.trig(name);
        if let Some(i) = self.kinds.iter().position(|(n, p)| n == name && p == prims) {
            return i;
        }
        self.kinds.push((name.to_string(), prims.to_vec()));
        self.kinds.len() - 1
    }

    fn path(&self, inst: usize) -> &str {
        &self.tree.instances[inst].path
    }

    /// Name of the C function for `key`, queueing its generation.
    fn func(&mut self, key: Key, from: Option<usize>) -> String {
        let ix = match self.keys.get(&key) {
            Some(&ix) => ix,
            None => {
                let name = match &key {
                    Key::Invoke(i, n) => format!("inv_{}_{}", self.mangled[*i], esc(n)),
                    Key::Dispatch(i, t) => format!("dsp_{}_{}", self.mangled[*i], esc(t)),
                    Key::Data(i, base, data, m) => {
                        format!("dm{base}_{}_{}_{}", self.mangled[*i], esc(&self.prog.data[*data].name), esc(&self.prog.data[*data].methods[*m].name))
                    }
                };
                let ix = self.names.len();
                self.names.push(name);
                self.funcs.push(None);
                self.keys.insert(key.clone(), ix);
                self.work.push((ix, key));
                ix
            }
        };
        if let Some(from) = from {
            self.edges.push((from, ix));
        }
        self.names[ix].clone()
    }

    fn func_ix(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn has_dispatch(&self, inst: usize, trigger: &str) -> bool {
        self.tree
            .class(inst)
            .machine
            .as_ref()
            .is_some_and(|m| m.transitions.iter().any(|t| t.trigger == trigger))
    }

    /// Parameter types a trigger delivers to guards and actions.
    fn trigger_prims(&self, class: &RActor, trigger: &str) -> Vec<Prim> {
        for p in class.ports.iter().filter(|p| p.direction == Direction::Provided) {
            if let Some(s) = self.prog.protocols[p.protocol].sigs.iter().find(|s| s.name == trigger) {
                return s.params.iter().map(|p| p.1).collect();
            }
        }
        class.method(trigger).map(|m| class.methods[m].params.iter().map(|p| p.1).collect()).unwrap_or_default()
    }

    fn ty(&self, f: &Frame<'_>, e: &RExpr) -> Prim {
        match e {
            RExpr::Const(v) => match v {
                Value::Bool(_) => Prim::Bool,
                Value::Int(_) => Prim::Int,
                Value::Real(_) => Prim::Real,
                Value::Enum(_) => Prim::Enum(0),
            },
            RExpr::Slot(s) => self.tree.class(f.inst).layout.slots[f.base + s].ty,
            RExpr::Param(p) => f.params.get(*p).copied().unwrap_or(Prim::Int),
            RExpr::Out | RExpr::ToReal(_) | RExpr::Neg(Num::Real, _) | RExpr::Arith(_, Num::Real, ..) => Prim::Real,
            RExpr::Neg(Num::Int, _) | RExpr::Arith(_, Num::Int, ..) => Prim::Int,
            RExpr::PortCall { port, sig, .. } => self.tree.signature(f.inst, *port, *sig).ret.unwrap_or(Prim::Bool),
            RExpr::DataCall { data, method, .. } => self.prog.data[*data].methods[*method].ret.unwrap_or(Prim::Bool),
            RExpr::Not(_) | RExpr::Cmp(..) | RExpr::And(..) | RExpr::Or(..) => Prim::Bool,
        }
    }

    fn val(&mut self, p: Prim, s: &str) -> String {
        if p == Prim::Real {
            self.helpers.insert("vr");
            format!("br_vr({s})")
        } else {
            self.helpers.insert("vi");
            format!("br_vi({s})")
        }
    }

    fn lit(&self, v: Value) -> R<String> {
        Ok(match v {
            Value::Bool(b) => u8::from(b).to_string(),
            Value::Int(i) => lit_int(i),
            Value::Real(r) => lit_real(r)?,
            Value::Enum(e) => e.to_string(),
        })
    }

    fn payload(&mut self, b: &mut Body, prims: &[Prim], get: impl Fn(usize) -> String) {
        self.enums.extend(prims.iter().filter_map(|p| if let Prim::Enum(e) = p { Some(*e) } else { None }));
        payload_lines(b, prims, get);
    }

    fn hoist(&mut self, b: &mut Body, p: Prim, s: String) -> String {
        let t = b.temp(ctype(p));
        b.line(&format!("{t} = {s};"));
        t
    }

    fn pair(&mut self, b: &mut Body, f: &Frame<'_>, x: &RExpr, y: &RExpr) -> R<(String, String)> {
        let xs = self.expr(b, f, x)?;
        let xs = if impure(y) { self.hoist(b, self.ty(f, x), xs) } else { xs };
        let ys = self.expr(b, f, y)?;
        Ok((xs, ys))
    }

    /// Evaluate call arguments, in order, into a fresh array.
    fn args(&mut self, b: &mut Body, f: &Frame<'_>, args: &[RExpr]) -> R<String> {
        if args.is_empty() {
            return Ok("0".into());
        }
        let arr = b.array(args.len());
        for (i, a) in args.iter().enumerate() {
            let p = self.ty(f, a);
            let s = self.expr(b, f, a)?;
            let v = self.val(p, &s);
            b.line(&format!("{arr}[{i}] = {v};"));
        }
        Ok(arr)
    }

    fn from(&self, f: &Frame<'_>) -> Option<usize> {
        self.func_ix(f.func)
    }

    fn expr(&mut self, b: &mut Body, f: &Frame<'_>, e: &RExpr) -> R<String> {
        Ok(match e {
            RExpr::Const(v) => self.lit(*v)?,
            RExpr::Slot(s) => {
                let name = self.fields.get(&(f.inst, f.base + s)).ok_or_else(|| unsupported("slot outside the layout"))?;
                format!("model_s.{name}")
            }
            RExpr::Param(p) => match f.params.get(*p) {
                Some(&t) => format!("a[{p}].{}", member(t)),
                None => return Err(unsupported(format!("parameter {p} outside the trigger signature"))),
            },
            RExpr::Out => {
                if self.tree.instances[f.inst].block.is_some() {
                    format!("model_s.{}_y", self.mangled[f.inst])
                } else {
                    "0.0".into()
                }
            }
            RExpr::PortCall { port, sig, args, .. } => {
                let arr = self.args(b, f, args)?;
                let callee = self.tree.callee(f.inst, *port, *sig).map_or(f.inst, |c| c.instance);
                let rs = self.tree.signature(f.inst, *port, *sig);
                let prims: Vec<Prim> = rs.params.iter().map(|p| p.1).collect();
                let (name, ret) = (rs.name.clone(), rs.ret);
                self.invoke_prims.entry((callee, name.clone())).or_insert(prims);
                let from = self.from(f);
                let func = self.func(Key::Invoke(callee, name), from);
                let r = b.temp("br_val");
                b.line(&format!("{r} = {func}({}, {arr});", f.inst));
                format!("{r}.{}", member(ret.unwrap_or(Prim::Bool)))
            }
            RExpr::DataCall { base, data, method, args } => {
                let arr = self.args(b, f, args)?;
                let from = self.from(f);
                let func = self.func(Key::Data(f.inst, f.base + base, *data, *method), from);
                let ret = self.prog.data[*data].methods[*method].ret;
                let r = b.temp("br_val");
                b.line(&format!("{r} = {func}({arr});"));
                format!("{r}.{}", member(ret.unwrap_or(Prim::Bool)))
            }
            RExpr::ToReal(x) => format!("((double)({}))", self.expr(b, f, x)?),
            RExpr::Neg(Num::Int, x) => {
                self.helpers.insert("neg");
                format!("br_neg({})", self.expr(b, f, x)?)
            }
            RExpr::Neg(Num::Real, x) => format!("(-({}))", self.expr(b, f, x)?),
            RExpr::Not(x) => format!("(!({}))", self.expr(b, f, x)?),
            RExpr::Arith(op, num, x, y, _) => {
                let (x, y) = self.pair(b, f, x, y)?;
                match (num, op) {
                    (Num::Int, Arith::Add) => self.call2("add", &x, &y),
                    (Num::Int, Arith::Sub) => self.call2("sub", &x, &y),
                    (Num::Int, Arith::Mul) => self.call2("mul", &x, &y),
                    (Num::Int, Arith::Div) => {
                        self.helpers.insert("idiv");
                        self.helpers.insert("neg");
                        self.helpers.insert("fault");
                        format!("br_idiv({x}, {y}, {})", f.inst)
                    }
                    (Num::Real, Arith::Add) => format!("({x} + {y})"),
                    (Num::Real, Arith::Sub) => format!("({x} - {y})"),
                    (Num::Real, Arith::Mul) => format!("({x} * {y})"),
                    (Num::Real, Arith::Div) => {
                        self.helpers.insert("rdiv");
                        self.helpers.insert("fault");
                        format!("br_rdiv({x}, {y}, {})", f.inst)
                    }
                }
            }
            RExpr::Cmp(op, _, x, y) => {
                let (x, y) = self.pair(b, f, x, y)?;
                let op = match op {
                    Cmp::Lt => "<",
                    Cmp::Le => "<=",
                    Cmp::Gt => ">",
                    Cmp::Ge => ">=",
                    Cmp::Eq => "==",
                    Cmp::Ne => "!=",
                };
                format!("({x} {op} {y})")
            }
            RExpr::And(x, y) | RExpr::Or(x, y) => {
                let and = matches!(e, RExpr::And(..));
                if impure(y) {
                    let xs = self.expr(b, f, x)?;
                    let t = b.temp("int");
                    b.line(&format!("{t} = ({xs}) != 0;"));
                    b.line(&format!("if ({}{t}) {{", if and { "" } else { "!" }));
                    b.depth += 1;
                    let ys = self.expr(b, f, y)?;
                    b.line(&format!("{t} = ({ys}) != 0;"));
                    b.depth -= 1;
                    b.line("}");
                    t
                } else {
                    let xs = self.expr(b, f, x)?;
                    let ys = self.expr(b, f, y)?;
                    format!("({xs} {} {ys})", if and { "&&" } else { "||" })
                }
            }
        })
    }

    fn call2(&mut self, helper: &'static str, x: &str, y: &str) -> String {
        self.helpers.insert(helper);
        format!("br_{helper}({x}, {y})")
    }

    fn stmts(&mut self, b: &mut Body, f: &Frame<'_>, body: &[RStmt], ret: Ret) -> R<()> {
        for s in body {
            match s {
                RStmt::Assign { slot, value } => {
                    let v = self.expr(b, f, value)?;
                    let name = self.fields.get(&(f.inst, f.base + slot)).ok_or_else(|| unsupported("slot outside the layout"))?;
                    b.line(&format!("model_s.{name} = {v};"));
                }
                RStmt::Eval(e) => {
                    let v = self.expr(b, f, e)?;
                    b.line(&format!("(void)({v});"));
                }
                RStmt::Send { port, sig, args } => {
                    let arr = self.args(b, f, args)?;
                    let to = self.tree.callee(f.inst, *port, *sig).map_or(f.inst, |c| c.instance);
                    let rs = self.tree.signature(f.inst, *port, *sig);
                    let prims: Vec<Prim> = rs.params.iter().map(|p| p.1).collect();
                    let name = rs.name.clone();
                    let kind = self.kind(&name, &prims);
                    self.receivers.insert(to);
                    self.helpers.insert("enqueue");
                    self.helpers.insert("fault");
                    b.line(&format!("TR_BEGIN(\"msg_send\", br_path[{}], br_path[{to}], {});", f.inst, c_string(&name)));
                    self.payload(b, &prims, |i| format!("{arr}[{i}].{}", member(prims[i])));
                    b.line("TR_END();");
                    b.line(&format!("br_enqueue({to}, {kind}, {}, {arr});", f.inst));
                }
                RStmt::SetTimer { timer, ticks, .. } => {
                    let p = self.ty(f, ticks);
                    let mut n = self.expr(b, f, ticks)?;
                    if p == Prim::Real {
                        self.helpers.insert("r2i");
                        n = format!("br_r2i({n})");
                    }
                    self.helpers.insert("timer");
                    self.helpers.insert("fault");
                    let k = self.timer_ix[&(f.inst, *timer)];
                    b.line(&format!("br_set_timer({k}, {n}, {});", f.inst));
                }
                RStmt::CancelTimer { timer } => {
                    let k = self.timer_ix[&(f.inst, *timer)];
                    b.line(&format!("br_tarm[{k}] = 0;"));
                }
                RStmt::Return(e) => {
                    let p = self.ty(f, e);
                    let v = self.expr(b, f, e)?;
                    match ret {
                        Ret::Value => {
                            let v = self.val(p, &v);
                            b.line(&format!("return {v};"));
                        }
                        Ret::Break => {
                            let v = self.val(p, &v);
                            b.line(&format!("r = {v};"));
                            b.line("break;");
                        }
                        Ret::Void => {
                            b.line(&format!("(void)({v});"));
                            b.line("return;");
                        }
                    }
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn gen(&mut self, ix: usize, key: Key) -> R<CFunc> {
        let name = self.names[ix].clone();
        match key {
            Key::Invoke(inst, method) => self.gen_invoke(&name, inst, &method),
            Key::Dispatch(inst, trigger) => self.gen_dispatch(&name, inst, &trigger),
            Key::Data(inst, base, data, m) => {
                let prog = self.prog;
                let method = &prog.data[data].methods[m];
                let params: Vec<Prim> = method.params.iter().map(|p| p.1).collect();
                let mut b = Body::new(1);
                b.line("(void)a;");
                let f = Frame { func: &name, inst, base, params: &params };
                self.stmts(&mut b, &f, &method.body, Ret::Value)?;
                self.helpers.insert("zero");
                b.line("return br_zero();");
                Ok(CFunc { pre: String::new(), proto: format!("static br_val {name}(const br_val *a)"), body: b.finish() })
            }
        }
    }

    fn gen_invoke(&mut self, name: &str, inst: usize, method: &str) -> R<CFunc> {
        let prog = self.prog;
        let class = &prog.actors[self.tree.instances[inst].class];
        let prims = self.invoke_prims.get(&(inst, method.to_string())).cloned().unwrap_or_default();
        let path = c_string(self.path(inst));
        let mut b = Body::new(1);
        b.decls.push("br_val r;".into());
        self.helpers.insert("zero");
        b.line("(void)src;");
        b.line("(void)a;");
        b.line("r = br_zero();");
        b.line(&format!("TR_BEGIN(\"call\", br_src(src), {path}, {});", c_string(method)));
        self.payload(&mut b, &prims, |i| format!("a[{i}].{}", member(prims[i])));
        b.line("TR_END();");
        let mut ret = None;
        if let Some(m) = class.method(method) {
            let m = &class.methods[m];
            let params: Vec<Prim> = m.params.iter().map(|p| p.1).collect();
            // `return` leaves the loop, not the function: dispatch and the
            // call_return event still follow
            let mut inner = Body::new(2);
            let f = Frame { func: name, inst, base: 0, params: &params };
            self.stmts(&mut inner, &f, &m.body, Ret::Break)?;
            b.line("do {");
            b.code.push_str(&inner.finish());
            b.line("} while (0);");
            if m.body.iter().any(|s| matches!(s, RStmt::Return(_))) {
                ret = m.ret;
            }
        }
        if self.has_dispatch(inst, method) {
            let ix = self.func_ix(name);
            let d = self.func(Key::Dispatch(inst, method.to_string()), ix);
            b.line(&format!("{d}(a);"));
        }
        b.line(&format!("TR_BEGIN(\"call_return\", {path}, br_src(src), {});", c_string(method)));
        if let Some(p) = ret {
            self.payload(&mut b, &[p], |_| format!("r.{}", member(p)));
        }
        b.line("TR_END();");
        b.line("return r;");
        Ok(CFunc { pre: String::new(), proto: format!("static br_val {name}(int src, const br_val *a)"), body: b.finish() })
    }

    fn gen_dispatch(&mut self, name: &str, inst: usize, trigger: &str) -> R<CFunc> {
        let prog = self.prog;
        let class = &prog.actors[self.tree.instances[inst].class];
        let machine = class.machine.as_ref().ok_or_else(|| unsupported("dispatch without a state machine"))?;
        let rows: Vec<(usize, &RTransition)> = machine.transitions.iter().enumerate().filter(|(_, t)| t.trigger == trigger).collect();
        let suffix = &name["dsp_".len()..];
        let cname = esc(&class.name);
        let path = c_string(self.path(inst));
        let trig = self.trig(trigger);
        let params = self.trigger_prims(class, trigger);
        let guarded = rows.iter().any(|(_, t)| t.guard.is_some());
        let acted = rows.iter().any(|(_, t)| !t.actions.is_empty());
        let mut out = String::new();

        if guarded {
            let mut b = Body::new(1);
            b.line("(void)a;");
            b.line("switch (k) {");
            for &(k, t) in &rows {
                let Some(g) = &t.guard else { continue };
                b.line(&format!("case {k}:"));
                b.depth += 1;
                let f = Frame { func: name, inst, base: 0, params: &params };
                let v = self.expr(&mut b, &f, g)?;
                b.line(&format!("return ({v}) != 0;"));
                b.depth -= 1;
            }
            b.line("}");
            b.line("return 1;");
            let _ = write!(out, "static int grd_{suffix}(int k, const br_val *a)\n{{\n{}}}\n\n", b.finish());
        }
        if acted {
            let mut b = Body::new(1);
            b.line("(void)a;");
            b.line("switch (k) {");
            for &(k, t) in &rows {
                if t.actions.is_empty() {
                    continue;
                }
                b.line(&format!("case {k}:"));
                b.depth += 1;
                let f = Frame { func: name, inst, base: 0, params: &params };
                self.stmts(&mut b, &f, &t.actions, Ret::Void)?;
                b.line("break;");
                b.depth -= 1;
            }
            b.line("}");
            let _ = write!(out, "static void act_{suffix}(int k, const br_val *a)\n{{\n{}}}\n\n", b.finish());
        }

        let m = &self.mangled[inst];
        let n = machine.transitions.len();
        let mut b = Body::new(1);
        b.decls.push("int k;".into());
        b.decls.push("const br_tr *t;".into());
        b.line(&format!("for (k = 0; k < {n}; k++) {{"));
        b.depth += 1;
        b.line(&format!("t = &br_tr_{cname}[k];"));
        b.line(&format!("if (t->from != model_s.{m}_state || t->trig != {trig}) continue;"));
        if guarded {
            b.line(&format!("if (t->guarded && !grd_{suffix}(k, a)) continue;"));
        }
        b.line(&format!(
            "TR_BEGIN(\"transition\", {path}, {path}, br_st_{cname}[t->to]); TR_STR(br_st_{cname}[t->from]); TR_STR(br_trig[{trig}]); TR_END();"
        ));
        b.line(&format!("model_s.{m}_state = t->to;"));
        if acted {
            b.line(&format!("act_{suffix}(k, a);"));
        } else {
            b.line("(void)a;");
        }
        b.line("return;");
        b.depth -= 1;
        b.line("}");
        Ok(CFunc { pre: out, proto: format!("static void {name}(const br_val *a)"), body: b.finish() })
    }

    /// Route a queued message to the dispatcher of its trigger.
    fn router(&mut self, inst: usize) -> CFunc {
        let machine = self.tree.class(inst).machine.as_ref();
        let mut triggers: Vec<String> = machine.map(|m| m.transitions.iter().map(|t| t.trigger.clone()).collect()).unwrap_or_default();
        let mut seen = BTreeSet::new();
        triggers.retain(|t| seen.insert(t.clone()));
        let mut b = Body::new(1);
        b.line("switch (trig) {");
        for t in &triggers {
            let id = self.trig(t);
            let d = self.func(Key::Dispatch(inst, t.clone()), None);
            b.line(&format!("case {id}:"));
            b.line(&format!("    {d}(a);"));
            b.line("    break;");
        }
        b.line("}");
        CFunc { pre: String::new(), proto: format!("static void rt_{}(int trig, const br_val *a)", self.mangled[inst]), body: b.finish() }
    }
}

/// Lower an instance tree to a static C program.
pub fn flatten(tree: &InstanceTree, config: SimConfig) -> Result<FlatProgram, CodegenError> {
    config.check().map_err(|e| CodegenError { code: E_CONFIG, message: e.to_string() })?;
    let prog: &Program = &tree.program;
    let mangled: Vec<String> = tree.instances.iter().map(|i| mangle_path(&i.path)).collect();

    let mut fields = Vec::new();
    let mut field_names = HashMap::new();
    for (ix, inst) in tree.instances.iter().enumerate() {
        let class = tree.class(ix);
        let m = &mangled[ix];
        for (s, slot) in class.layout.slots.iter().enumerate() {
            let name = format!("{m}_1{}", slot.path.iter().map(|p| esc(p)).collect::<Vec<_>>().join("_"));
            let init = match inst.attrs[s] {
                Value::Bool(b) => u8::from(b).to_string(),
                Value::Int(i) => lit_int(i),
                Value::Real(r) => lit_real(r)?,
                Value::Enum(e) => e.to_string(),
            };
            field_names.insert((ix, s), name.clone());
            fields.push(StateField { name, ctype: ctype(slot.ty), instance: ix, kind: FieldKind::Attr, member: slot.dotted(), init });
        }
        if let Some(st) = inst.state {
            fields.push(StateField {
                name: format!("{m}_state"),
                ctype: "int",
                instance: ix,
                kind: FieldKind::State,
                member: "state".into(),
                init: st.to_string(),
            });
        }
        if let Some(block) = inst.block {
            fields.push(StateField {
                name: format!("{m}_y"),
                ctype: "double",
                instance: ix,
                kind: FieldKind::BlockOut,
                member: "out".into(),
                init: lit_real(block.out())?,
            });
            if let BlockState::Pi { state, .. } = block {
                fields.push(StateField {
                    name: format!("{m}_i"),
                    ctype: "double",
                    instance: ix,
                    kind: FieldKind::Integral,
                    member: "integral".into(),
                    init: lit_real(state.integral)?,
                });
            }
        }
    }

    let mut timers = Vec::new();
    let mut timer_ix = HashMap::new();
    for (ix, _) in tree.instances.iter().enumerate() {
        for t in 0..tree.class(ix).timers.len() {
            timer_ix.insert((ix, t), timers.len());
            timers.push((ix, t));
        }
    }

    let mut cx = Cx {
        tree,
        prog,
        mangled: mangled.clone(),
        fields: field_names,
        keys: HashMap::new(),
        names: Vec::new(),
        funcs: Vec::new(),
        work: Vec::new(),
        edges: Vec::new(),
        invoke_prims: HashMap::new(),
        helpers: BTreeSet::new(),
        kinds: Vec::new(),
        triggers: Vec::new(),
        receivers: BTreeSet::new(),
        timer_ix,
        enums: BTreeSet::new(),
    };

    // timers message their own actor
    for &(ix, t) in &timers {
        let name = tree.class(ix).timers[t].clone();
        cx.kind(&name, &[]);
        cx.receivers.insert(ix);
    }

    let mut injectors = Vec::new();
    for (ix, _) in tree.instances.iter().enumerate() {
        let class = tree.class(ix);
        for (p, port) in class.ports.iter().enumerate() {
            if port.direction != Direction::Provided {
                continue;
            }
            let receiver = tree.resolve_provided(ix, p).instance;
            for sig in &prog.protocols[port.protocol].sigs {
                let prims: Vec<Prim> = sig.params.iter().map(|p| p.1).collect();
                match sig.kind {
                    SigKind::Message => {
                        cx.kind(&sig.name, &prims);
                        cx.receivers.insert(receiver);
                    }
                    SigKind::Method => {
                        cx.invoke_prims.entry((receiver, sig.name.clone())).or_insert(prims.clone());
                        cx.func(Key::Invoke(receiver, sig.name.clone()), None);
                    }
                }
                injectors.push(Injector {
                    function: format!("model_inject_{}_{}_{}", mangled[ix], esc(&port.name), esc(&sig.name)),
                    target: ix,
                    port: port.name.clone(),
                    sig: sig.name.clone(),
                    kind: sig.kind,
                    receiver,
                    prims,
                });
            }
        }
    }


    // block updates are generated inline in the tick function
    let mut block_code = Vec::new();
    for &ix in &tree.continuous_order {
        let class = tree.class(ix);
        let (Some(block), Some(state)) = (&class.block, tree.instances[ix].block) else { continue };
        let fname = format!("blk_{}", mangled[ix]);
        cx.names.push(fname.clone());
        cx.funcs.push(None);
        let slot = cx.names.len() - 1;
        let mut b = Body::new(1);
        b.decls.push("double u;".into());
        let f = Frame { func: &fname, inst: ix, base: 0, params: &[] };
        let p = cx.ty(&f, &block.input);
        let v = cx.expr(&mut b, &f, &block.input)?;
        if p == Prim::Real {
            b.line(&format!("u = {v};"));
        } else {
            b.line(&format!("u = (double)({v});"));
        }
        block_step(&mut b, &mangled[ix], state, config.dt)?;
        cx.funcs[slot] = Some(CFunc { pre: String::new(), proto: format!("static void {fname}(void)"), body: b.finish() });
        block_code.push(ix);
    }

    // queued messages reach their dispatcher through a router
    let mut routers = Vec::new();
    for &ix in &cx.receivers.clone() {
        if tree.instances[ix].state.is_some() && tree.class(ix).machine.as_ref().is_some_and(|m| !m.transitions.is_empty()) {
            routers.push(cx.router(ix));
        }
    }

    while let Some((ix, key)) = cx.work.pop() {
        let f = cx.gen(ix, key)?;
        cx.funcs[ix] = Some(f);
    }

    // invocations feed the dispatcher of the same instance
    let mut g = DiGraph::<usize, ()>::new();
    let nodes: Vec<NodeIndex> = (0..cx.names.len()).map(|i| g.add_node(i)).collect();
    for &(a, b) in &cx.edges {
        g.add_edge(nodes[a], nodes[b], ());
    }
    for scc in tarjan_scc(&g) {
        let looped = scc.len() > 1 || g.contains_edge(scc[0], scc[0]);
        if looped {
            let mut names: Vec<&str> = scc.iter().map(|&n| cx.names[g[n]].as_str()).collect();
            names.sort_unstable();
            return Err(unsupported(format!("calls triggered through state machines form a cycle: {}", names.join(", "))));
        }
    }

    let mut tables = Vec::new();
    let mut seen = BTreeSet::new();
    for (ix, inst) in tree.instances.iter().enumerate() {
        if inst.state.is_none() || !seen.insert(inst.class) {
            continue;
        }
        let machine = tree.class(ix).machine.as_ref().ok_or_else(|| unsupported("state without a state machine"))?;
        let rows = machine.transitions.iter().map(|t| (t.from, cx.trig(&t.trigger), t.to, t.guard.is_some())).collect();
        tables.push(ClassTable { class: inst.class, rows });
    }

    let queues: Vec<usize> = cx.receivers.iter().copied().collect();
    let mut steps = Vec::new();
    if !injectors.is_empty() {
        steps.push(TickStep::Stimuli);
    }
    if !timers.is_empty() {
        steps.push(TickStep::Timers(timers.clone()));
    }
    steps.extend(block_code.iter().map(|&i| TickStep::Block(i)));
    if !queues.is_empty() {
        steps.push(TickStep::Drain(queues.clone()));
    }

    let max_args = prog
        .protocols
        .iter()
        .flat_map(|p| p.sigs.iter().map(|s| s.params.len()))
        .chain(prog.actors.iter().flat_map(|a| a.methods.iter().map(|m| m.params.len())))
        .max()
        .unwrap_or(0)
        .max(1);

    let mut enums = cx.enums.clone();
    for p in cx.kinds.iter().flat_map(|k| &k.1).chain(injectors.iter().flat_map(|j| &j.prims)) {
        if let Prim::Enum(e) = p {
            enums.insert(*e);
        }
    }
    let mut funcs = cx.funcs.into_iter().map(|f| f.ok_or_else(|| unsupported("function left ungenerated"))).collect::<R<Vec<_>>>()?;
    funcs.extend(routers);
    Ok(FlatProgram {
        model: prog.name.clone(),
        config,
        instances: tree
            .instances
            .iter()
            .enumerate()
            .map(|(ix, i)| FlatInstance { path: i.path.clone(), mangled: mangled[ix].clone(), class: prog.actors[i.class].name.clone() })
            .collect(),
        fields,
        steps,
        sampled_blocks: (0..tree.instances.len()).filter(|&i| tree.instances[i].block.is_some()).collect(),
        sampled_machines: (0..tree.instances.len()).filter(|&i| tree.instances[i].state.is_some()).collect(),
        injectors,
        kinds: cx.kinds,
        triggers: cx.triggers,
        header: TraceHeader {
            model: prog.name.clone(),
            dt: config.dt,
            duration: config.duration,
            tool_version: crate::TOOL_VERSION.to_string(),
            instances: tree.instances.iter().map(|i| i.path.clone()).collect(),
        },
        tree: tree.clone(),
        funcs,
        tables,
        timers,
        queues,
        helpers: cx.helpers,
        enums,
        max_args,
    })
}

/// The same operation sequence as [`crate::blocks`], one C statement each.
fn block_step(b: &mut Body, m: &str, state: BlockState, dt: f64) -> R<()> {
    let dt = lit_real(dt)?;
    match state {
        BlockState::Pt1(s) => {
            b.decls.push("double rate, target, delta, inc;".into());
            b.line(&format!("rate = {dt} / {};", lit_real(s.time_constant)?));
            b.line(&format!("target = {} * u;", lit_real(s.gain)?));
            b.line(&format!("delta = target - model_s.{m}_y;"));
            b.line("inc = rate * delta;");
            b.line(&format!("model_s.{m}_y = model_s.{m}_y + inc;"));
        }
        BlockState::Pi { state: s, .. } => {
            let (kp, ki, lo, hi) = (lit_real(s.kp)?, lit_real(s.ki)?, lit_real(s.lo)?, lit_real(s.hi)?);
            b.decls.push("double p, it, pre, push, de, raw;".into());
            b.line(&format!("p = {kp} * u;"));
            b.line(&format!("it = {ki} * model_s.{m}_i;"));
            b.line("pre = p + it;");
            b.line(&format!("push = {ki} * u;"));
            b.line(&format!("if (!((pre > {hi} && push > 0.0) || (pre < {lo} && push < 0.0))) {{"));
            b.line(&format!("    de = u * {dt};"));
            b.line(&format!("    model_s.{m}_i = model_s.{m}_i + de;"));
            b.line("}");
            b.line(&format!("it = {ki} * model_s.{m}_i;"));
            b.line("raw = p + it;");
            b.line(&format!("model_s.{m}_y = raw < {lo} ? {lo} : (raw > {hi} ? {hi} : raw);"));
        }
        BlockState::Limiter { lo, hi, .. } => {
            let (lo, hi) = (lit_real(lo)?, lit_real(hi)?);
            b.line(&format!("model_s.{m}_y = u < {lo} ? {lo} : (u > {hi} ? {hi} : u);"));
        }
    }
    Ok(())
}

const PRELUDE: &str = r#"#include <setjmp.h>
#include "model.h"

#ifdef MODEL_TRACE
#define TR_BEGIN(k, s, d, n) model_trace_begin((k), (s), (d), (n))
#define TR_INT(x) model_trace_int(x)
#define TR_REAL(x) model_trace_real(x)
#define TR_BOOL(x) model_trace_bool(x)
#define TR_STR(x) model_trace_str(x)
#define TR_END() model_trace_end()
#define TR_KPAYLOAD(k, a) br_kpayload((k), (a))
#else
#define TR_BEGIN(k, s, d, n) ((void)0)
#define TR_INT(x) ((void)0)
#define TR_REAL(x) ((void)0)
#define TR_BOOL(x) ((void)0)
#define TR_STR(x) ((void)0)
#define TR_END() ((void)0)
#define TR_KPAYLOAD(k, a) ((void)0)
#endif

typedef struct {
    br_int i;
    double r;
} br_val;

typedef struct {
    int from;
    int trig;
    int to;
    int guarded;
} br_tr;
"#;

/// Helper definitions, in dependency order.
const HELPERS: &[(&str, &str)] = &[
    (
        "fault",
        "static void br_fault(int inst, const char *code, const char *msg)
{
    br_fault_inst = inst;
    br_fault_code = code;
    br_fault_msg = msg;
    longjmp(br_jmp, 1);
}
",
    ),
    ("zero", "static br_val br_zero(void)\n{\n    br_val v;\n    v.i = 0;\n    v.r = 0.0;\n    return v;\n}\n"),
    ("vr", "static br_val br_vr(double x)\n{\n    br_val v;\n    v.i = 0;\n    v.r = x;\n    return v;\n}\n"),
    ("vi", "static br_val br_vi(br_int x)\n{\n    br_val v;\n    v.i = x;\n    v.r = 0.0;\n    return v;\n}\n"),
    ("add", "static br_int br_add(br_int x, br_int y)\n{\n    return (br_int)((br_uint)x + (br_uint)y);\n}\n"),
    ("sub", "static br_int br_sub(br_int x, br_int y)\n{\n    return (br_int)((br_uint)x - (br_uint)y);\n}\n"),
    ("mul", "static br_int br_mul(br_int x, br_int y)\n{\n    return (br_int)((br_uint)x * (br_uint)y);\n}\n"),
    ("neg", "static br_int br_neg(br_int x)\n{\n    return (br_int)((br_uint)0 - (br_uint)x);\n}\n"),
    (
        "idiv",
        "static br_int br_idiv(br_int x, br_int y, int inst)
{
    if (y == 0) br_fault(inst, \"E_RUNTIME\", \"division by zero\");
    /* the most negative value divided by -1 wraps to itself */
    if (y == -1) return br_neg(x);
    return x / y;
}
",
    ),
    (
        "rdiv",
        "static double br_rdiv(double x, double y, int inst)
{
    if (y == 0.0) br_fault(inst, \"E_RUNTIME\", \"division by zero\");
    return x / y;
}
",
    ),
    (
        "r2i",
        "static br_int br_r2i(double x)
{
    br_int top = (br_int)((((br_uint)1) << 63) - 1);
    if (x != x) return 0;
    if (x >= 9223372036854775808.0) return top;
    if (x <= -9223372036854775808.0) return -top - 1;
    return (br_int)x;
}
",
    ),
];

const TIMER_HELPER: &str = "static void br_set_timer(int k, br_int n, int inst)
{
    br_uint top = ~(br_uint)0;
    if (n < 1) br_fault(inst, \"E_RUNTIME\", \"timer duration must be at least 1 tick\");
    br_tarm[k] = 1;
    br_tdue[k] = (br_uint)n > top - model_s.tick ? top : model_s.tick + (br_uint)n;
}
";

const ENQUEUE_HELPER: &str = "static void br_enqueue(int inst, int kind, int src, const br_val *a)
{
    int q = br_qof[inst];
    int k;
    br_msg *m;
    if (br_qlen[q] >= MODEL_DRAIN_CAP) br_fault(inst, \"E_LIVELOCK\", \"message queue full\");
    m = &br_qbuf[q][(br_qhead[q] + br_qlen[q]) % MODEL_DRAIN_CAP];
    m->kind = kind;
    m->src = src;
    for (k = 0; k < br_kargc[kind]; k++) m->a[k] = a[k];
    br_qlen[q]++;
}
";

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl FlatProgram {
    fn path(&self, inst: usize) -> &str {
        &self.instances[inst].path
    }

    fn class_of(&self, inst: usize) -> &RActor {
        self.tree.class(inst)
    }

    fn header_file(&self, cfg: &CodegenConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "/* Generated from model {}. */", self.model);
        s.push_str("#ifndef MODEL_H\n#define MODEL_H\n\n");
        s.push_str("#ifdef __GNUC__\n__extension__ typedef long long br_int;\n__extension__ typedef unsigned long long br_uint;\n");
        s.push_str("#else\ntypedef long long br_int;\ntypedef unsigned long long br_uint;\n#endif\n\n");
        let c = &self.config;
        let _ = writeln!(s, "/* seconds per tick */\n#define MODEL_DT {}", lit_real(c.dt).unwrap_or_default());
        let _ = writeln!(s, "#define MODEL_SNAPSHOT_EVERY {}", lit_uint(c.snapshot_every));
        let _ = writeln!(s, "#define MODEL_DRAIN_CAP {}UL", c.drain_cap);
        let _ = writeln!(s, "/* stimuli that can wait for the next tick */\n#define MODEL_PENDING_CAP {}UL\n", pending_cap(c, &cfg.stimuli));
        s.push_str("struct model_state {\n    br_uint tick;\n");
        for f in &self.fields {
            let _ = writeln!(s, "    {} {}; /* {}.{} */", f.ctype, f.name, self.path(f.instance), f.member);
        }
        s.push_str("};\n\nextern struct model_state model_s;\n\n");
        s.push_str("void model_init(void);\nvoid model_tick(void);\n/* nonzero once a runtime error stopped the model */\nint model_halted(void);\n\n");
        if !self.injectors.is_empty() {
            s.push_str("/* Queue a stimulus for the next tick; -1 when too many are pending. */\n");
        }
        for j in &self.injectors {
            let _ = writeln!(s, "int {}({});", j.function, inject_params(&j.prims));
        }
        if cfg.emit_trace {
            s.push_str("\n/* Trace sink, supplied by the embedding program. */\n");
            s.push_str("void model_trace_begin(const char *kind, const char *src, const char *dst, const char *name);\n");
            s.push_str("void model_trace_int(br_int v);\nvoid model_trace_real(double v);\nvoid model_trace_bool(int v);\n");
            s.push_str("void model_trace_str(const char *v);\nvoid model_trace_end(void);\n");
        }
        s.push_str("\n#endif\n");
        s
    }

    fn source_file(&self, cfg: &CodegenConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "/* Generated from model {}. */", self.model);
        if cfg.emit_trace {
            s.push_str("#define MODEL_TRACE 1\n");
        }
        s.push_str(PRELUDE);
        let n = self.instances.len();
        let _ = writeln!(s, "\ntypedef struct {{\n    int kind;\n    int src;\n    br_val a[{}];\n}} br_msg;\n", self.max_args);
        s.push_str("struct model_state model_s;\n");
        s.push_str("static int br_halted;\nstatic jmp_buf br_jmp;\nstatic int br_fault_inst;\nstatic const char *br_fault_code;\nstatic const char *br_fault_msg;\n");

        s.push_str("\n#ifdef MODEL_TRACE\n");
        let _ = writeln!(s, "static const char *const br_path[{n}] = {{\n    {}\n}};", self.instances.iter().map(|i| c_string(&i.path)).collect::<Vec<_>>().join(",\n    "));
        if !self.queues.is_empty() || self.funcs.iter().any(|f| f.proto.starts_with("static br_val inv_")) {
            s.push_str("static const char *br_src(int src)\n{\n    return src < 0 ? \"env\" : br_path[src];\n}\n");
        }
        for (k, e) in self.tree.program.enums.iter().enumerate().filter(|(k, _)| self.enums.contains(k)) {
            let names = e.variants.iter().map(|v| c_string(&format!("{}.{v}", e.name)));
            let _ = writeln!(s, "static const char *const br_en{k}[{}] = {{ {} }};", e.variants.len().max(1), join(names));
        }
        if !self.triggers.is_empty() {
            let _ = writeln!(s, "static const char *const br_trig[{}] = {{ {} }};", self.triggers.len(), join(self.triggers.iter().map(|t| c_string(t))));
        }
        if !self.kinds.is_empty() {
            let _ = writeln!(s, "static const char *const br_kname[{}] = {{ {} }};", self.kinds.len(), join(self.kinds.iter().map(|k| c_string(&k.0))));
        }
        for t in &self.tables {
            let m = self.tree.program.actors[t.class].machine.as_ref();
            let states = m.map(|m| m.states.clone()).unwrap_or_default();
            let _ = writeln!(
                s,
                "static const char *const br_st_{}[{}] = {{ {} }};",
                esc(&self.tree.program.actors[t.class].name),
                states.len().max(1),
                join(states.iter().map(|x| c_string(x)))
            );
        }
        s.push_str("#endif\n\n");

        for t in &self.tables {
            if t.rows.is_empty() {
                continue;
            }
            let rows = t.rows.iter().map(|&(f, g, to, guarded)| format!("    {{ {f}, {g}, {to}, {} }}", u8::from(guarded)));
            let _ = writeln!(
                s,
                "static const br_tr br_tr_{}[{}] = {{\n{}\n}};",
                esc(&self.tree.program.actors[t.class].name),
                t.rows.len(),
                rows.collect::<Vec<_>>().join(",\n")
            );
        }
        if !self.kinds.is_empty() {
            let trig = self.kinds.iter().map(|k| self.triggers.iter().position(|t| *t == k.0).unwrap_or(0));
            let _ = writeln!(s, "static const int br_ktrig[{}] = {{ {} }};", self.kinds.len(), join(trig));
            let _ = writeln!(s, "static const int br_kargc[{}] = {{ {} }};", self.kinds.len(), join(self.kinds.iter().map(|k| k.1.len())));
        }
        if !self.timers.is_empty() {
            let _ = writeln!(s, "static int br_tarm[{0}];\nstatic br_uint br_tdue[{0}];", self.timers.len());
        }
        if !self.queues.is_empty() {
            let nq = self.queues.len();
            let qof = (0..n).map(|i| self.queues.iter().position(|&q| q == i).map_or(-1, |q| q as i64));
            let _ = writeln!(s, "static const int br_qof[{n}] = {{ {} }};", join(qof));
            let _ = writeln!(s, "static br_msg br_qbuf[{nq}][MODEL_DRAIN_CAP];");
            let _ = writeln!(s, "static unsigned long br_qhead[{nq}];\nstatic unsigned long br_qlen[{nq}];");
        }
        if !self.sampled_machines.is_empty() {
            let _ = writeln!(s, "static int br_sampled[{}];", self.sampled_machines.len());
        }
        if !self.injectors.is_empty() {
            s.push_str("\ntypedef struct {\n    int inj;\n");
            let _ = writeln!(s, "    br_val a[{}];\n}} br_pend;\n", self.max_args);
            s.push_str("static br_pend br_pendq[MODEL_PENDING_CAP];\nstatic unsigned long br_npend;\n");
        }

        // helpers
        let mut need = self.helpers.clone();
        if !self.queues.is_empty() {
            need.insert("fault");
        }
        for p in self.injectors.iter().flat_map(|j| &j.prims) {
            need.insert(if *p == Prim::Real { "vr" } else { "vi" });
        }
        s.push('\n');
        for (name, text) in HELPERS {
            if need.contains(name) {
                s.push_str(text);
                s.push('\n');
            }
        }
        if need.contains("timer") {
            s.push_str(TIMER_HELPER);
            s.push('\n');
        }
        if !self.queues.is_empty() {
            s.push_str(ENQUEUE_HELPER);
            s.push('\n');
        }
        if !self.kinds.is_empty() {
            s.push_str("#ifdef MODEL_TRACE\nstatic void br_kpayload(int kind, const br_val *a)\n{\n    (void)a;\n    switch (kind) {\n");
            for (k, (_, prims)) in self.kinds.iter().enumerate() {
                if prims.is_empty() {
                    continue;
                }
                let _ = writeln!(s, "    case {k}:");
                let mut b = Body::new(2);
                payload_lines(&mut b, prims, |i| format!("a[{i}].{}", member(prims[i])));
                s.push_str(&b.finish());
                s.push_str("        break;\n");
            }
            s.push_str("    }\n}\n#endif\n\n");
        }

        for f in &self.funcs {
            let _ = writeln!(s, "{};", f.proto);
        }
        s.push('\n');
        for f in &self.funcs {
            s.push_str(&f.pre);
            let _ = write!(s, "{}\n{{\n{}}}\n\n", f.proto, f.body);
        }

        self.tick_functions(&mut s);
        s
    }

    fn tick_functions(&self, s: &mut String) {
        // blocks sit between timers and the drain
        let blocks: Vec<usize> = self.steps.iter().filter_map(|s| if let TickStep::Block(i) = s { Some(*i) } else { None }).collect();
        let mut order = Body::new(1);
        for step in &self.steps {
            match step {
                TickStep::Stimuli => order.line("br_stimuli();"),
                TickStep::Timers(_) => order.line("br_timers();"),
                TickStep::Block(i) if Some(i) == blocks.first() => {
                    order.line("if (model_s.tick > 0) {");
                    for b in &blocks {
                        order.line(&format!("    blk_{}();", self.instances[*b].mangled));
                    }
                    order.line("}");
                }
                TickStep::Block(_) => {}
                TickStep::Drain(_) => order.line("br_drain();"),
            }
        }
        if !self.sampled_blocks.is_empty() || !self.sampled_machines.is_empty() {
            order.line("if (model_s.tick % MODEL_SNAPSHOT_EVERY == 0) br_samples();");
        }

        for step in &self.steps {
            match step {
                TickStep::Stimuli => self.stimuli_fn(s),
                TickStep::Timers(t) => self.timers_fn(s, t),
                TickStep::Drain(q) => self.drain_fn(s, q),
                TickStep::Block(_) => {}
            }
        }
        if !self.sampled_blocks.is_empty() || !self.sampled_machines.is_empty() {
            self.samples_fn(s);
        }

        let _ = write!(s, "static void br_run(void)\n{{\n{}}}\n\n", order.finish());

        s.push_str("void model_init(void)\n{\n");
        if !self.timers.is_empty() || !self.queues.is_empty() || !self.sampled_machines.is_empty() {
            s.push_str("    int k;\n");
        }
        s.push_str("    model_s.tick = 0;\n");
        for f in &self.fields {
            let _ = writeln!(s, "    model_s.{} = {};", f.name, f.init);
        }
        if !self.timers.is_empty() {
            let _ = writeln!(s, "    for (k = 0; k < {}; k++) br_tarm[k] = 0;", self.timers.len());
        }
        if !self.queues.is_empty() {
            let _ = writeln!(s, "    for (k = 0; k < {}; k++) {{\n        br_qhead[k] = 0;\n        br_qlen[k] = 0;\n    }}", self.queues.len());
        }
        if !self.sampled_machines.is_empty() {
            let _ = writeln!(s, "    for (k = 0; k < {}; k++) br_sampled[k] = -1;", self.sampled_machines.len());
        }
        if !self.injectors.is_empty() {
            s.push_str("    br_npend = 0;\n");
        }
        s.push_str("    br_halted = 0;\n}\n\n");

        s.push_str(
            "void model_tick(void)
{
    if (br_halted) return;
    if (setjmp(br_jmp) == 0) {
        br_run();
    } else {
        br_halted = 1;
        TR_BEGIN(\"runtime_error\", br_path[br_fault_inst], br_path[br_fault_inst], br_fault_code);
        TR_STR(br_fault_msg);
        TR_END();
    }
    model_s.tick++;
}

int model_halted(void)
{
    return br_halted;
}
",
        );

        for (k, j) in self.injectors.iter().enumerate() {
            let _ = write!(s, "\nint {}({})\n{{\n", j.function, inject_params(&j.prims));
            s.push_str("    if (br_npend >= MODEL_PENDING_CAP) return -1;\n");
            let _ = writeln!(s, "    br_pendq[br_npend].inj = {k};");
            for (i, p) in j.prims.iter().enumerate() {
                let ctor = if *p == Prim::Real { "br_vr" } else { "br_vi" };
                let _ = writeln!(s, "    br_pendq[br_npend].a[{i}] = {ctor}(p{i});");
            }
            s.push_str("    br_npend++;\n    return 0;\n}\n");
        }
    }

    fn stimuli_fn(&self, s: &mut String) {
        let mut b = Body::new(1);
        b.decls.push("unsigned long k;".into());
        b.decls.push("const br_val *a;".into());
        b.line("for (k = 0; k < br_npend; k++) {");
        b.depth += 1;
        b.line("a = br_pendq[k].a;");
        b.line("(void)a;");
        b.line("switch (br_pendq[k].inj) {");
        for (k, j) in self.injectors.iter().enumerate() {
            b.line(&format!("case {k}:"));
            b.depth += 1;
            match j.kind {
                SigKind::Message => {
                    let kind = self.kinds.iter().position(|(n, p)| *n == j.sig && *p == j.prims).unwrap_or(0);
                    b.line(&format!("TR_BEGIN(\"msg_send\", \"env\", br_path[{}], {});", j.receiver, c_string(&j.sig)));
                    payload_lines(&mut b, &j.prims, |i| format!("a[{i}].{}", member(j.prims[i])));
                    b.line("TR_END();");
                    b.line(&format!("br_enqueue({}, {kind}, -1, a);", j.receiver));
                }
                SigKind::Method => {
                    b.line(&format!("(void)inv_{}_{}(-1, a);", self.instances[j.receiver].mangled, esc(&j.sig)));
                }
            }
            b.line("break;");
            b.depth -= 1;
        }
        b.line("}");
        b.depth -= 1;
        b.line("}");
        b.line("br_npend = 0;");
        let _ = write!(s, "static void br_stimuli(void)\n{{\n{}}}\n\n", b.finish());
    }

    fn timers_fn(&self, s: &mut String, timers: &[(usize, usize)]) {
        let mut b = Body::new(1);
        for (k, &(inst, t)) in timers.iter().enumerate() {
            let name = c_string(&self.class_of(inst).timers[t]);
            let kind = self.kinds.iter().position(|(n, p)| *n == self.class_of(inst).timers[t] && p.is_empty()).unwrap_or(0);
            b.line(&format!("if (br_tarm[{k}] && br_tdue[{k}] == model_s.tick) {{"));
            b.line(&format!("    br_tarm[{k}] = 0;"));
            b.line(&format!("    TR_BEGIN(\"timer_fire\", br_path[{inst}], br_path[{inst}], {name}); TR_END();"));
            b.line(&format!("    br_enqueue({inst}, {kind}, {inst}, 0);"));
            b.line("}");
        }
        let _ = write!(s, "static void br_timers(void)\n{{\n{}}}\n\n", b.finish());
    }

    fn drain_fn(&self, s: &mut String, queues: &[usize]) {
        let mut b = Body::new(1);
        b.decls.push("unsigned long processed = 0;".into());
        b.decls.push("int any;".into());
        b.decls.push("br_msg m;".into());
        b.line("do {");
        b.line("    any = 0;");
        for (q, &inst) in queues.iter().enumerate() {
            let dispatch = self.class_of(inst).machine.as_ref().is_some_and(|m| !m.transitions.is_empty())
                && self.tree.instances[inst].state.is_some();
            b.line(&format!("    while (br_qlen[{q}] > 0) {{"));
            b.line(&format!("        m = br_qbuf[{q}][br_qhead[{q}]];"));
            b.line(&format!("        br_qhead[{q}] = (br_qhead[{q}] + 1) % MODEL_DRAIN_CAP;"));
            b.line(&format!("        br_qlen[{q}]--;"));
            b.line("        any = 1;");
            b.line("        processed++;");
            b.line(&format!("        if (processed > MODEL_DRAIN_CAP) br_fault({inst}, \"E_LIVELOCK\", \"drain cap exceeded\");"));
            b.line(&format!(
                "        TR_BEGIN(\"msg_recv\", br_src(m.src), br_path[{inst}], br_kname[m.kind]); TR_KPAYLOAD(m.kind, m.a); TR_END();"
            ));
            if dispatch {
                b.line(&format!("        rt_{}(br_ktrig[m.kind], m.a);", self.instances[inst].mangled));
            } else {
                b.line("        (void)m;");
            }
            b.line("    }");
        }
        b.line("} while (any);");
        let _ = write!(s, "static void br_drain(void)\n{{\n{}}}\n\n", b.finish());
    }

    fn samples_fn(&self, s: &mut String) {
        let mut b = Body::new(1);
        for &i in &self.sampled_blocks {
            let m = &self.instances[i].mangled;
            b.line(&format!("TR_BEGIN(\"sample\", br_path[{i}], br_path[{i}], \"out\"); TR_REAL(model_s.{m}_y); TR_END();"));
        }
        for (k, &i) in self.sampled_machines.iter().enumerate() {
            let m = &self.instances[i].mangled;
            let cname = esc(&self.class_of(i).name);
            b.line(&format!("if (model_s.{m}_state != br_sampled[{k}]) {{"));
            b.line(&format!("    br_sampled[{k}] = model_s.{m}_state;"));
            b.line(&format!(
                "    TR_BEGIN(\"sample\", br_path[{i}], br_path[{i}], \"state\"); TR_STR(br_st_{cname}[model_s.{m}_state]); TR_END();"
            ));
            b.line("}");
        }
        let _ = write!(s, "static void br_samples(void)\n{{\n{}}}\n\n", b.finish());
    }

    /// Human-readable listing of the tick function.
    pub fn schedule(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "model {}", self.model);
        let _ = writeln!(
            s,
            "dt {} s, snapshot every {} tick(s), drain cap {} messages\n",
            format_g17(c.dt),
            c.snapshot_every,
            c.drain_cap
        );
        s.push_str("Every call of model_tick() runs, in this order:\n\n");
        let mut n = 0;
        let mut blocks_listed = false;
        for step in &self.steps {
            match step {
                TickStep::Stimuli => {
                    n += 1;
                    let _ = writeln!(s, "{n}. stimuli injected since the previous tick, in injection order");
                }
                TickStep::Timers(t) => {
                    n += 1;
                    let _ = writeln!(s, "{n}. due timers");
                    for &(i, k) in t {
                        let _ = writeln!(s, "     {} {}", self.path(i), self.class_of(i).timers[k]);
                    }
                }
                TickStep::Block(_) if blocks_listed => {}
                TickStep::Block(_) => {
                    blocks_listed = true;
                    n += 1;
                    let _ = writeln!(s, "{n}. block updates, from tick 1 on");
                    for step in &self.steps {
                        if let TickStep::Block(i) = step {
                            let kind = match self.tree.instances[*i].block {
                                Some(BlockState::Pt1(_)) => "pt1",
                                Some(BlockState::Pi { .. }) => "pi",
                                _ => "limiter",
                            };
                            let _ = writeln!(s, "     {} ({kind})", self.path(*i));
                        }
                    }
                }
                TickStep::Drain(q) => {
                    n += 1;
                    let _ = writeln!(s, "{n}. queue drain, sweeping until every queue is empty");
                    for &i in q {
                        let _ = writeln!(s, "     {}", self.path(i));
                    }
                }
            }
        }
        if !self.sampled_blocks.is_empty() || !self.sampled_machines.is_empty() {
            n += 1;
            let _ = writeln!(s, "{n}. samples, on ticks divisible by {}", c.snapshot_every);
            for &i in &self.sampled_blocks {
                let _ = writeln!(s, "     {}.out", self.path(i));
            }
            for &i in &self.sampled_machines {
                let _ = writeln!(s, "     {}.state, when changed", self.path(i));
            }
        }
        s.push_str("\nState fields:\n\n");
        let width = self.fields.iter().map(|f| f.name.len()).max().unwrap_or(0);
        for f in &self.fields {
            let _ = writeln!(s, "  {:width$}  {:6}  {}.{}", f.name, f.ctype, self.path(f.instance), f.member);
        }
        s
    }

    fn shim(&self, cfg: &CodegenConfig) -> R<String> {
        let mut s = String::new();
        let _ = writeln!(s, "/* Generated from model {}. Replays a stimulus script and prints the trace. */", self.model);
        s.push_str("#include <float.h>\n#include <stdio.h>\n#include <string.h>\n#include \"model.h\"\n\n");
        s.push_str(SHIM_IO);

        let mut script: Vec<(u64, String)> = Vec::new();
        for (index, st) in cfg.stimuli.iter().enumerate() {
            let bad = |message: String| CodegenError { code: E_STIMULUS, message: format!("stimulus {index}: {message}") };
            let r = resolve_stimulus(&self.tree, st).map_err(bad)?;
            let target = self.tree.find(&st.target).ok_or_else(|| bad(format!("no instance `{}`", st.target)))?;
            let j = self
                .injectors
                .iter()
                .find(|j| j.target == target && j.port == st.port && j.sig == st.name)
                .ok_or_else(|| bad("no injection function".into()))?;
            let mut args = Vec::new();
            for (v, p) in r.args.iter().zip(&r.prims) {
                args.push(match (p, v) {
                    (Prim::Real, v) => lit_real(v.as_real()).map_err(|e| bad(e.message))?,
                    (_, v) => lit_int(v.as_int()),
                });
            }
            script.push((st.at_tick, format!("(void){}({});", j.function, args.join(", "))));
        }
        script.sort_by_key(|x| x.0);
        s.push_str("static void script(br_uint t)\n{\n");
        if script.is_empty() {
            s.push_str("    (void)t;\n");
        }
        let mut i = 0;
        while i < script.len() {
            let tick = script[i].0;
            let _ = writeln!(s, "    if (t == {}) {{", lit_uint(tick));
            while i < script.len() && script[i].0 == tick {
                let _ = writeln!(s, "        {}", script[i].1);
                i += 1;
            }
            s.push_str("    }\n");
        }
        s.push_str("}\n\nint main(void)\n{\n    br_uint t;\n");
        // C89 compilers need only accept string literals of 509 characters
        let header = header_line(&self.header);
        let mut chunk = String::new();
        for ch in header.chars() {
            chunk.push(ch);
            if chunk.len() >= 200 {
                let _ = writeln!(s, "    fputs({}, stdout);", c_string(&chunk));
                chunk.clear();
            }
        }
        if !chunk.is_empty() {
            let _ = writeln!(s, "    fputs({}, stdout);", c_string(&chunk));
        }
        s.push_str("    putchar('\\n');\n    model_init();\n");
        let _ = writeln!(s, "    for (t = 0; t <= {}; t++) {{", lit_uint(self.config.last_tick()));
        s.push_str("        script(t);\n        model_tick();\n        if (model_halted()) break;\n        if (t == ~(br_uint)0) break;\n    }\n");
        s.push_str("    return fflush(stdout) == 0 ? 0 : 1;\n}\n");
        Ok(s)
    }
}

const SHIM_IO: &str = r#"static int first_value;

static void put_str(const char *s)
{
    putchar('"');
    for (; *s; s++) {
        if (*s == '"' || *s == '\\') putchar('\\');
        putchar(*s);
    }
    putchar('"');
}

static void put_uint(br_uint v)
{
    char buf[24];
    int n = 0;
    do {
        buf[n++] = (char)('0' + (int)(v % 10));
        v /= 10;
    } while (v != 0);
    while (n > 0) putchar(buf[--n]);
}

static void put_real(double x)
{
    char buf[40];
    if (x != x) {
        fputs("\"nan\"", stdout);
        return;
    }
    if (x > DBL_MAX) {
        fputs("\"inf\"", stdout);
        return;
    }
    if (x < -DBL_MAX) {
        fputs("\"-inf\"", stdout);
        return;
    }
    sprintf(buf, "%.17g", x);
    fputs(buf, stdout);
    if (strchr(buf, '.') == NULL && strchr(buf, 'e') == NULL) fputs(".0", stdout);
}

static void next_value(void)
{
    if (!first_value) putchar(',');
    first_value = 0;
}

void model_trace_begin(const char *kind, const char *src, const char *dst, const char *name)
{
    fputs("{\"tick\":", stdout);
    put_uint(model_s.tick);
    fputs(",\"time\":", stdout);
    put_real((double)model_s.tick * MODEL_DT);
    fputs(",\"kind\":", stdout);
    put_str(kind);
    fputs(",\"src\":", stdout);
    put_str(src);
    fputs(",\"dst\":", stdout);
    put_str(dst);
    fputs(",\"name\":", stdout);
    put_str(name);
    fputs(",\"payload\":[", stdout);
    first_value = 1;
}

void model_trace_int(br_int v)
{
    next_value();
    if (v < 0) {
        putchar('-');
        put_uint((br_uint)0 - (br_uint)v);
    } else {
        put_uint((br_uint)v);
    }
}

void model_trace_real(double v)
{
    next_value();
    put_real(v);
}

void model_trace_bool(int v)
{
    next_value();
    fputs(v ? "true" : "false", stdout);
}

void model_trace_str(const char *v)
{
    next_value();
    put_str(v);
}

void model_trace_end(void)
{
    fputs("]}\n", stdout);
}

"#;

/// The drain cap, or more when the script injects more in a single tick.
fn pending_cap(c: &SimConfig, stimuli: &[Stimulus]) -> usize {
    let mut per_tick: HashMap<u64, usize> = HashMap::new();
    for s in stimuli {
        *per_tick.entry(s.at_tick).or_default() += 1;
    }
    per_tick.values().copied().max().unwrap_or(0).max(c.drain_cap)
}

fn inject_params(prims: &[Prim]) -> String {
    if prims.is_empty() {
        return "void".into();
    }
    join(prims.iter().enumerate().map(|(i, p)| format!("{} p{i}", ctype(*p))))
}

fn payload_lines(b: &mut Body, prims: &[Prim], get: impl Fn(usize) -> String) {
    for (i, p) in prims.iter().enumerate() {
        let v = get(i);
        match p {
            Prim::Real => b.line(&format!("TR_REAL({v});")),
            Prim::Int => b.line(&format!("TR_INT({v});")),
            Prim::Bool => b.line(&format!("TR_BOOL({v});")),
            Prim::Enum(e) => b.line(&format!("TR_STR(br_en{e}[{v}]);")),
        }
    }
}

/// Generate the source files without touching the file system.
pub fn render(prog: &FlatProgram, cfg: &CodegenConfig) -> Result<Vec<SourceFile>, CodegenError> {
    let mut files = vec![
        SourceFile { name: "model.h".into(), text: prog.header_file(cfg) },
        SourceFile { name: "model.c".into(), text: prog.source_file(cfg) },
    ];
    if cfg.emit_trace {
        files.push(SourceFile { name: "trace_shim.c".into(), text: prog.shim(cfg)? });
    }
    files.push(SourceFile { name: "SCHEDULE.txt".into(), text: prog.schedule() });
    Ok(files)
}

/// Generate the source files into `cfg.out_dir`.
pub fn emit(prog: &FlatProgram, cfg: &CodegenConfig) -> Result<Vec<SourceFile>, CodegenError> {
    let files = render(prog, cfg)?;
    write_files(&cfg.out_dir, &files)?;
    Ok(files)
}

fn write_files(dir: &Path, files: &[SourceFile]) -> Result<(), CodegenError> {
    let io = |e: std::io::Error, what: &Path| CodegenError { code: E_IO, message: format!("{}: {e}", what.display()) };
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    for f in files {
        let path = dir.join(&f.name);
        std::fs::write(&path, &f.text).map_err(|e| io(e, &path))?;
    }
    Ok(())
}
