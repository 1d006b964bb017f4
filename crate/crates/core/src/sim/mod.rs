//! Fixed-step hybrid simulation.
//!
//! A [`World`] advances one tick per [`World::step`]. Every tick runs the
//! same five phases:
//!
//! 1. stimuli due this tick, in script order;
//! 2. expired timers, in preorder then timer declaration order, each
//!    enqueuing a message named after the timer to its own actor;
//! 3. the continuous pass over block-bearing actors in dataflow order
//!    (skipped on tick 0, so that after tick `k` every block has taken
//!    exactly `k` steps);
//! 4. the discrete pass: instances are swept in preorder, each queue drained
//!    completely, until every queue is empty;
//! 5. on ticks divisible by `snapshot_every`, a `sample` of every block
//!    output and of every state machine whose state changed since it was
//!    last sampled.
//!
//! Method calls run inline and are traced as `call`/`call_return` pairs.
//! Messages are traced on send and on receipt. A runtime error records a
//! `runtime_error` event and halts the world.

mod stimulus;
mod timeliness;
mod trace;

use std::collections::VecDeque;
use std::sync::Arc;

use thiserror::Error;

pub use stimulus::{json_value, parse_stimuli, resolve as resolve_stimulus, trace_value, Resolved, Stimulus, StimulusKind};
pub use timeliness::{check_timeliness, TimelinessReport, Violation};
pub use trace::{
    event_line, format_g17, format_real, header_line, read_ndjson, EventKind, Trace, TraceEvent, TraceHeader,
    TraceParseError, TraceValue,
};

use crate::blocks::BlockState;
use crate::model::ir::*;
use crate::model::{Callee, InstanceTree};

/// Runtime error codes recorded in traces.
pub const E_RUNTIME: &str = "E_RUNTIME";
pub const E_LIVELOCK: &str = "E_LIVELOCK";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Seconds per tick.
    pub dt: f64,
    /// Seconds; the run covers ticks `0..=round(duration / dt)`.
    pub duration: f64,
    pub snapshot_every: u64,
    /// Most messages processed in one tick; also the capacity of every queue.
    pub drain_cap: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.010, duration: 1.0, snapshot_every: 1, drain_cap: 10_000 }
    }
}

impl SimConfig {
    pub fn new(dt: f64, duration: f64) -> Self {
        Self { dt, duration, ..Self::default() }
    }

    /// Index of the last tick of a run.
    pub fn last_tick(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be a positive number of seconds");
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad("duration must be a non-negative number of seconds");
        }
        if self.duration / self.dt >= u64::MAX as f64 / 2.0 {
            return bad("duration / dt does not fit the tick counter");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be positive");
        }
        if self.drain_cap == 0 {
            return bad("drain_cap must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stimulus {index}: {message}")]
    Stimulus { index: usize, message: String },
    #[error("engine halted by {code} at tick {tick}")]
    Halted { code: String, tick: u64 },
    #[error("{0}")]
    Tunable(String),
}

#[derive(Debug, Clone)]
struct Message {
    src: String,
    name: String,
    args: Vec<Value>,
    prims: Vec<Prim>,
}

/// Why execution of a tick stopped early.
struct Fault {
    code: &'static str,
    instance: usize,
    message: String,
}

type Exec<T> = Result<T, Fault>;

/// Execution context of one method body, guard or block input.
#[derive(Clone, Copy)]
struct Frame<'a> {
    inst: usize,
    /// Offset of slot 0 within the instance's attribute storage.
    base: usize,
    params: &'a [Value],
}

/// A running simulation. Owns its instance state; the program is shared.
#[derive(Debug, Clone)]
pub struct World {
    tree: InstanceTree,
    program: Arc<Program>,
    config: SimConfig,
    tick: u64,
    queues: Vec<VecDeque<Message>>,
    timers: Vec<Vec<Option<u64>>>,
    pending: VecDeque<Resolved>,
    sampled_states: Vec<Option<usize>>,
    halted: Option<(String, u64)>,
    events: Vec<TraceEvent>,
}

impl World {
    pub fn new(tree: InstanceTree, config: SimConfig, stimuli: &[Stimulus]) -> Result<World, SimError> {
        config.check()?;
        let mut pending = Vec::with_capacity(stimuli.len());
        for (index, s) in stimuli.iter().enumerate() {
            let r = stimulus::resolve(&tree, s).map_err(|message| SimError::Stimulus { index, message })?;
            pending.push(r);
        }
        pending.sort_by_key(|r| r.at_tick);
        let program = tree.program.clone();
        let n = tree.instances.len();
        let timers = tree.instances.iter().map(|i| vec![None; program.actors[i.class].timers.len()]).collect();
        Ok(World {
            program,
            config,
            tick: 0,
            queues: vec![VecDeque::new(); n],
            timers,
            pending: pending.into(),
            sampled_states: vec![None; n],
            halted: None,
            events: Vec::new(),
            tree,
        })
    }

    pub fn tree(&self) -> &InstanceTree {
        &self.tree
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// The tick the next [`World::step`] will execute.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_halted(&self) -> bool {
        self.halted.is_some()
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            model: self.program.name.clone(),
            dt: self.config.dt,
            duration: self.config.duration,
            tool_version: crate::TOOL_VERSION.to_string(),
            instances: self.tree.instances.iter().map(|i| i.path.clone()).collect(),
        }
    }

    /// Schedule a stimulus for the next tick, after any already due then.
    pub fn inject(&mut self, s: &Stimulus) -> Result<(), SimError> {
        let mut r = stimulus::resolve(&self.tree, s).map_err(|message| SimError::Stimulus { index: 0, message })?;
        r.at_tick = self.tick;
        let at = self.pending.partition_point(|p| p.at_tick <= self.tick);
        self.pending.insert(at, r);
        Ok(())
    }

    /// Execute one tick and return its events.
    pub fn step(&mut self) -> Result<Vec<TraceEvent>, SimError> {
        if let Some((code, tick)) = &self.halted {
            return Err(SimError::Halted { code: code.clone(), tick: *tick });
        }
        if let Err(f) = self.run_tick() {
            let path = self.tree.instances[f.instance].path.clone();
            self.emit(EventKind::RuntimeError, path.clone(), path, f.code.to_string(), vec![TraceValue::Str(f.message)]);
            self.halted = Some((f.code.to_string(), self.tick));
        }
        self.tick += 1;
        Ok(std::mem::take(&mut self.events))
    }

    fn run_tick(&mut self) -> Exec<()> {
        let prog = self.program.clone();

        while self.pending.front().is_some_and(|s| s.at_tick <= self.tick) {
            let Some(s) = self.pending.pop_front() else { break };
            let payload = self.payload(&s.prims, &s.args);
            let dst = self.tree.instances[s.instance].path.clone();
            match s.kind {
                crate::model::SigKind::Message => {
                    self.emit(EventKind::MsgSend, "env".into(), dst, s.name.clone(), payload);
                    self.enqueue(s.instance, Message { src: "env".into(), name: s.name, args: s.args, prims: s.prims })?;
                }
                crate::model::SigKind::Method => {
                    self.invoke(None, s.instance, &s.name, &s.args, &s.prims)?;
                }
            }
        }

        for i in 0..self.timers.len() {
            for t in 0..self.timers[i].len() {
                if self.timers[i][t] == Some(self.tick) {
                    self.timers[i][t] = None;
                    let name = prog.actors[self.tree.instances[i].class].timers[t].clone();
                    let path = self.tree.instances[i].path.clone();
                    self.emit(EventKind::TimerFire, path.clone(), path.clone(), name.clone(), Vec::new());
                    self.enqueue(i, Message { src: path, name, args: Vec::new(), prims: Vec::new() })?;
                }
            }
        }

        if self.tick > 0 {
            for &i in &self.tree.continuous_order.clone() {
                let class = &prog.actors[self.tree.instances[i].class];
                let Some(block) = &class.block else { continue };
                let u = self.eval(Frame { inst: i, base: 0, params: &[] }, &block.input)?.as_real();
                if let Some(state) = &self.tree.instances[i].block {
                    self.tree.instances[i].block = Some(state.step(u, self.config.dt));
                }
            }
        }

        let mut processed = 0usize;
        loop {
            let mut any = false;
            for i in 0..self.queues.len() {
                while let Some(m) = self.queues[i].pop_front() {
                    any = true;
                    processed += 1;
                    if processed > self.config.drain_cap {
                        return Err(Fault {
                            code: E_LIVELOCK,
                            instance: i,
                            message: "drain cap exceeded".into(),
                        });
                    }
                    let payload = self.payload(&m.prims, &m.args);
                    let path = self.tree.instances[i].path.clone();
                    self.emit(EventKind::MsgRecv, m.src, path, m.name.clone(), payload);
                    self.dispatch(i, &m.name, &m.args)?;
                }
            }
            if !any {
                break;
            }
        }

        if self.tick.is_multiple_of(self.config.snapshot_every) {
            for i in 0..self.tree.instances.len() {
                if let Some(b) = self.tree.instances[i].block {
                    let path = self.tree.instances[i].path.clone();
                    self.emit(EventKind::Sample, path.clone(), path, "out".into(), vec![TraceValue::Real(b.out())]);
                }
            }
            for i in 0..self.tree.instances.len() {
                let state = self.tree.instances[i].state;
                if state.is_some() && state != self.sampled_states[i] {
                    self.sampled_states[i] = state;
                    let class = &prog.actors[self.tree.instances[i].class];
                    let name = class.machine.as_ref().map(|m| m.states[state.unwrap_or(0)].clone()).unwrap_or_default();
                    let path = self.tree.instances[i].path.clone();
                    self.emit(EventKind::Sample, path.clone(), path, "state".into(), vec![TraceValue::Str(name)]);
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, kind: EventKind, src: String, dst: String, name: String, payload: Vec<TraceValue>) {
        self.events.push(TraceEvent {
            tick: self.tick,
            time: self.tick as f64 * self.config.dt,
            kind,
            src,
            dst,
            name,
            payload,
        });
    }

    fn payload(&self, prims: &[Prim], values: &[Value]) -> Vec<TraceValue> {
        prims.iter().zip(values).map(|(&p, &v)| trace_value(&self.program, p, v)).collect()
    }

    fn enqueue(&mut self, inst: usize, m: Message) -> Exec<()> {
        if self.queues[inst].len() >= self.config.drain_cap {
            return Err(Fault { code: E_LIVELOCK, instance: inst, message: "message queue full".into() });
        }
        self.queues[inst].push_back(m);
        Ok(())
    }

    /// Synchronous call of method `name` on `callee`, traced. `caller` is
    /// `None` for the environment.
    fn invoke(&mut self, caller: Option<usize>, callee: usize, name: &str, args: &[Value], prims: &[Prim]) -> Exec<Option<Value>> {
        let prog = self.program.clone();
        let class = &prog.actors[self.tree.instances[callee].class];
        let src = caller.map_or_else(|| "env".to_string(), |c| self.tree.instances[c].path.clone());
        let dst = self.tree.instances[callee].path.clone();
        let payload = self.payload(prims, args);
        self.emit(EventKind::Call, src.clone(), dst.clone(), name.to_string(), payload);
        let mut ret = None;
        let mut ret_ty = None;
        if let Some(m) = class.method(name) {
            let method = &class.methods[m];
            ret = self.exec(Frame { inst: callee, base: 0, params: args }, &method.body)?;
            ret_ty = method.ret;
        }
        self.dispatch(callee, name, args)?;
        let payload = match (ret_ty, ret) {
            (Some(t), Some(v)) => vec![trace_value(&prog, t, v)],
            _ => Vec::new(),
        };
        self.emit(EventKind::CallReturn, dst, src, name.to_string(), payload);
        Ok(ret)
    }

    /// Fire the first enabled transition for `trigger`, if any.
    fn dispatch(&mut self, inst: usize, trigger: &str, args: &[Value]) -> Exec<()> {
        let prog = self.program.clone();
        let class = &prog.actors[self.tree.instances[inst].class];
        let (Some(machine), Some(current)) = (&class.machine, self.tree.instances[inst].state) else {
            return Ok(());
        };
        let frame = Frame { inst, base: 0, params: args };
        for t in &machine.transitions {
            if t.from != current || t.trigger != trigger {
                continue;
            }
            if let Some(g) = &t.guard {
                if !self.eval(frame, g)?.as_bool() {
                    continue;
                }
            }
            let path = self.tree.instances[inst].path.clone();
            self.emit(
                EventKind::Transition,
                path.clone(),
                path,
                machine.states[t.to].clone(),
                vec![TraceValue::Str(machine.states[t.from].clone()), TraceValue::Str(trigger.to_string())],
            );
            self.tree.instances[inst].state = Some(t.to);
            self.exec(frame, &t.actions)?;
            return Ok(());
        }
        Ok(())
    }

    fn exec(&mut self, f: Frame<'_>, body: &[RStmt]) -> Exec<Option<Value>> {
        for s in body {
            match s {
                RStmt::Assign { slot, value } => {
                    let v = self.eval(f, value)?;
                    self.tree.instances[f.inst].attrs[f.base + slot] = v;
                }
                RStmt::Eval(e) => {
                    self.eval(f, e)?;
                }
                RStmt::Send { port, sig, args } => {
                    let mut values = Vec::with_capacity(args.len());
                    for a in args {
                        values.push(self.eval(f, a)?);
                    }
                    let Callee { instance: to, .. } = self.callee(f.inst, *port, *sig);
                    let rs = self.tree.signature(f.inst, *port, *sig);
                    let prims: Vec<Prim> = rs.params.iter().map(|p| p.1).collect();
                    let name = rs.name.clone();
                    let payload = self.payload(&prims, &values);
                    let src = self.tree.instances[f.inst].path.clone();
                    let dst = self.tree.instances[to].path.clone();
                    self.emit(EventKind::MsgSend, src.clone(), dst, name.clone(), payload);
                    self.enqueue(to, Message { src, name, args: values, prims })?;
                }
                RStmt::SetTimer { timer, ticks, .. } => {
                    let n = self.eval(f, ticks)?.as_int();
                    if n < 1 {
                        return Err(Fault {
                            code: E_RUNTIME,
                            instance: f.inst,
                            message: "timer duration must be at least 1 tick".into(),
                        });
                    }
                    self.timers[f.inst][*timer] = Some(self.tick.saturating_add(n as u64));
                }
                RStmt::CancelTimer { timer } => self.timers[f.inst][*timer] = None,
                RStmt::Return(e) => return Ok(Some(self.eval(f, e)?)),
            }
        }
        Ok(None)
    }

    fn callee(&self, inst: usize, port: usize, sig: usize) -> Callee {
        // instantiation guarantees a binding for every required signature
        self.tree.callee(inst, port, sig).unwrap_or(Callee { instance: inst, port })
    }

    fn eval(&mut self, f: Frame<'_>, e: &RExpr) -> Exec<Value> {
        Ok(match e {
            RExpr::Const(v) => *v,
            RExpr::Slot(s) => self.tree.instances[f.inst].attrs[f.base + s],
            RExpr::Param(p) => f.params[*p],
            RExpr::Out => Value::Real(self.tree.instances[f.inst].block.map_or(0.0, |b| b.out())),
            RExpr::PortCall { port, sig, args, .. } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    values.push(self.eval(f, a)?);
                }
                let callee = self.callee(f.inst, *port, *sig);
                let rs = self.tree.signature(f.inst, *port, *sig);
                let prims: Vec<Prim> = rs.params.iter().map(|p| p.1).collect();
                let name = rs.name.clone();
                let ret = self.invoke(Some(f.inst), callee.instance, &name, &values, &prims)?;
                ret.unwrap_or(Value::Bool(false))
            }
            RExpr::DataCall { base, data, method, args } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    values.push(self.eval(f, a)?);
                }
                let prog = self.program.clone();
                let m = &prog.data[*data].methods[*method];
                let inner = Frame { inst: f.inst, base: f.base + base, params: &values };
                self.exec(inner, &m.body)?.unwrap_or(Value::Bool(false))
            }
            RExpr::ToReal(x) => Value::Real(self.eval(f, x)?.as_real()),
            RExpr::Neg(Num::Int, x) => Value::Int(self.eval(f, x)?.as_int().wrapping_neg()),
            RExpr::Neg(Num::Real, x) => Value::Real(-self.eval(f, x)?.as_real()),
            RExpr::Not(x) => Value::Bool(!self.eval(f, x)?.as_bool()),
            RExpr::Arith(op, num, a, b, _) => {
                let x = self.eval(f, a)?;
                let y = self.eval(f, b)?;
                let div0 = || Fault { code: E_RUNTIME, instance: f.inst, message: "division by zero".into() };
                match num {
                    Num::Int => {
                        let (x, y) = (x.as_int(), y.as_int());
                        Value::Int(match op {
                            Arith::Add => x.wrapping_add(y),
                            Arith::Sub => x.wrapping_sub(y),
                            Arith::Mul => x.wrapping_mul(y),
                            Arith::Div if y == 0 => return Err(div0()),
                            Arith::Div => x.wrapping_div(y),
                        })
                    }
                    Num::Real => {
                        let (x, y) = (x.as_real(), y.as_real());
                        Value::Real(match op {
                            Arith::Add => x + y,
                            Arith::Sub => x - y,
                            Arith::Mul => x * y,
                            Arith::Div if y == 0.0 => return Err(div0()),
                            Arith::Div => x / y,
                        })
                    }
                }
            }
            RExpr::Cmp(op, ty, a, b) => {
                let x = self.eval(f, a)?;
                let y = self.eval(f, b)?;
                Value::Bool(compare(*op, *ty, x, y))
            }
            RExpr::And(a, b) => Value::Bool(self.eval(f, a)?.as_bool() && self.eval(f, b)?.as_bool()),
            RExpr::Or(a, b) => Value::Bool(self.eval(f, a)?.as_bool() || self.eval(f, b)?.as_bool()),
        })
    }

    /// Current value of a signal selector: `<instance path>.out`,
    /// `<instance path>.state` or `<instance path>.<attribute path>`.
    pub fn signal(&self, selector: &str) -> Option<TraceValue> {
        let (inst, rest) = self.split_selector(selector)?;
        let i = &self.tree.instances[inst];
        let class = self.tree.class(inst);
        match rest {
            "out" if i.block.is_some() => Some(TraceValue::Real(i.block.map_or(0.0, |b| b.out()))),
            "state" if i.state.is_some() => {
                class.machine.as_ref().map(|m| TraceValue::Str(m.states[i.state.unwrap_or(0)].clone()))
            }
            attr => {
                let path: Vec<String> = attr.split('.').map(str::to_string).collect();
                let slot = class.layout.slot(&path)?;
                Some(trace_value(&self.program, class.layout.slots[slot].ty, i.attrs[slot]))
            }
        }
    }

    fn split_selector<'s>(&self, selector: &'s str) -> Option<(usize, &'s str)> {
        let mut best = None;
        for (ix, inst) in self.tree.instances.iter().enumerate() {
            if let Some(rest) = selector.strip_prefix(inst.path.as_str()).and_then(|r| r.strip_prefix('.')) {
                if best.is_none_or(|(_, r): (usize, &str)| rest.len() < r.len()) {
                    best = Some((ix, rest));
                }
            }
        }
        best
    }

    /// Every block output and tunable attribute, keyed by selector.
    pub fn default_signals(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (ix, inst) in self.tree.instances.iter().enumerate() {
            if inst.block.is_some() {
                out.push(format!("{}.out", inst.path));
            }
            for s in self.tree.class(ix).layout.slots.iter().filter(|s| s.tunable) {
                out.push(format!("{}.{}", inst.path, s.dotted()));
            }
        }
        out
    }

    /// Current state name of every state machine, in preorder.
    pub fn fsm_states(&self) -> Vec<(String, String)> {
        self.tree
            .instances
            .iter()
            .enumerate()
            .filter_map(|(ix, i)| {
                let m = self.tree.class(ix).machine.as_ref()?;
                Some((i.path.clone(), m.states[i.state?].clone()))
            })
            .collect()
    }

    /// Overwrite a tunable attribute between ticks.
    pub fn set_attr(&mut self, instance: &str, attr: &str, value: &serde_json::Value) -> Result<(), SimError> {
        let inst = self.tree.find(instance).ok_or_else(|| SimError::Tunable(format!("no instance `{instance}`")))?;
        let class = self.tree.class(inst);
        let path: Vec<String> = attr.split('.').map(str::to_string).collect();
        let slot = class
            .layout
            .slot(&path)
            .ok_or_else(|| SimError::Tunable(format!("`{instance}` has no attribute `{attr}`")))?;
        let s = &class.layout.slots[slot];
        if !s.tunable {
            return Err(SimError::Tunable(format!("`{instance}.{attr}` is not tunable")));
        }
        let v = json_value(&self.program, value, s.ty).map_err(SimError::Tunable)?;
        self.tree.instances[inst].attrs[slot] = v;
        Ok(())
    }

    /// Block state of an instance, for inspection.
    pub fn block_state(&self, instance: usize) -> Option<BlockState> {
        self.tree.instances[instance].block
    }
}

fn compare(op: Cmp, ty: Prim, x: Value, y: Value) -> bool {
    macro_rules! cmp {
        ($a:expr, $b:expr) => {
            match op {
                Cmp::Lt => $a < $b,
                Cmp::Le => $a <= $b,
                Cmp::Gt => $a > $b,
                Cmp::Ge => $a >= $b,
                Cmp::Eq => $a == $b,
                Cmp::Ne => $a != $b,
            }
        };
    }
    match ty {
        Prim::Real => cmp!(x.as_real(), y.as_real()),
        Prim::Int => cmp!(x.as_int(), y.as_int()),
        Prim::Bool => cmp!(x.as_bool(), y.as_bool()),
        Prim::Enum(_) => cmp!(x.as_int(), y.as_int()),
    }
}

/// Run ticks `0..=config.last_tick()`, stopping early on a runtime error.
pub fn run(tree: &InstanceTree, config: SimConfig, stimuli: &[Stimulus]) -> Result<Trace, SimError> {
    let mut world = World::new(tree.clone(), config, stimuli)?;
    let mut events = Vec::new();
    for _ in 0..=config.last_tick() {
        events.extend(world.step()?);
        if world.is_halted() {
            break;
        }
    }
    Ok(Trace { header: world.header(), events })
}
