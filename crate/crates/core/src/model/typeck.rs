//! Name resolution, static typing and lowering to [`ir`](super::ir).
//!
//! Lowering keeps going after an error so that one pass reports as much as
//! possible; the resulting program is only used when no diagnostics were
//! produced.

use std::collections::HashMap;

use super::ir::*;
use super::*;
use crate::diag::{Code, Diagnostic, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resolved {
    Prim(Prim),
    Data(usize),
}

#[derive(Clone)]
struct MethodSig {
    name: String,
    params: Vec<Prim>,
    ret: Option<Prim>,
}

struct Env<'m> {
    model: &'m ModelUnit,
    enums: HashMap<&'m str, usize>,
    data_ix: HashMap<&'m str, usize>,
    protocols: Vec<RProtocol>,
    data_layouts: Vec<Option<Layout>>,
    data_sigs: Vec<Vec<MethodSig>>,
    diags: Vec<Diagnostic>,
}

pub(crate) fn lower(model: &ModelUnit) -> (Program, Vec<Diagnostic>) {
    let enums = model.enums.iter().enumerate().map(|(i, e)| (e.name.as_str(), i)).collect();
    let data_ix = model.data_classes.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
    let mut env = Env {
        model,
        enums,
        data_ix,
        protocols: Vec::new(),
        data_layouts: vec![None; model.data_classes.len()],
        data_sigs: Vec::new(),
        diags: Vec::new(),
    };

    env.protocols = model.protocols.iter().map(|p| env.protocol(p)).collect();

    for i in 0..model.data_classes.len() {
        let mut visiting = Vec::new();
        env.data_layout(i, &mut visiting);
    }
    env.data_sigs = model
        .data_classes
        .iter()
        .map(|d| d.methods.iter().map(|m| env.method_sig(m)).collect())
        .collect();

    let data: Vec<RData> = model
        .data_classes
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let layout = env.data_layouts[i].clone().unwrap_or_default();
            let methods = d.methods.iter().map(|m| env.lower_method(m, &layout, None)).collect();
            RData { name: d.name.clone(), layout, methods }
        })
        .collect();

    let actor_ix: HashMap<&str, usize> =
        model.actor_classes.iter().enumerate().map(|(i, a)| (a.name.as_str(), i)).collect();
    let actors: Vec<RActor> =
        model.actor_classes.iter().map(|a| env.actor(a, &actor_ix)).collect();

    let program = Program {
        name: model.name.clone(),
        enums: model
            .enums
            .iter()
            .map(|e| REnum { name: e.name.clone(), variants: e.variants.clone() })
            .collect(),
        protocols: env.protocols,
        data,
        actors,
        root: actor_ix.get(model.root.as_str()).copied().unwrap_or(0),
    };
    (program, env.diags)
}

impl<'m> Env<'m> {
    fn err(&mut self, code: Code, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(code, span, msg));
    }

    fn resolve(&mut self, ty: &Type, span: Span) -> Option<Resolved> {
        match ty {
            Type::Bool => Some(Resolved::Prim(Prim::Bool)),
            Type::Int => Some(Resolved::Prim(Prim::Int)),
            Type::Real => Some(Resolved::Prim(Prim::Real)),
            Type::Named(n) => {
                if let Some(&e) = self.enums.get(n.as_str()) {
                    Some(Resolved::Prim(Prim::Enum(e)))
                } else if let Some(&d) = self.data_ix.get(n.as_str()) {
                    Some(Resolved::Data(d))
                } else {
                    self.err(Code::Unresolved, span, format!("unknown type `{n}`"));
                    None
                }
            }
        }
    }

    fn prim(&mut self, ty: &Type, span: Span) -> Prim {
        match self.resolve(ty, span) {
            Some(Resolved::Prim(p)) => p,
            Some(Resolved::Data(_)) => {
                self.err(Code::Type, span, format!("data class `{ty}` cannot be passed by value"));
                Prim::Int
            }
            None => Prim::Int,
        }
    }

    fn protocol(&mut self, p: &Protocol) -> RProtocol {
        let sigs = p
            .signatures
            .iter()
            .map(|s| RSig {
                kind: s.kind,
                name: s.name.clone(),
                params: s.params.iter().map(|q| (q.name.clone(), self.prim(&q.ty, q.span))).collect(),
                ret: s.ret.as_ref().map(|t| self.prim(t, s.span)),
            })
            .collect();
        RProtocol { name: p.name.clone(), sigs }
    }

    fn method_sig(&mut self, m: &Method) -> MethodSig {
        MethodSig {
            name: m.name.clone(),
            params: m.params.iter().map(|p| self.prim(&p.ty, p.span)).collect(),
            ret: m.ret.as_ref().map(|t| self.prim(t, m.span)),
        }
    }

    fn literal(&mut self, lit: &Literal, ty: Prim, span: Span) -> Value {
        match (lit, ty) {
            (Literal::Bool(b), Prim::Bool) => Value::Bool(*b),
            (Literal::Int(i), Prim::Int) => Value::Int(*i),
            (Literal::Int(i), Prim::Real) => Value::Real(*i as f64),
            (Literal::Real(r), Prim::Real) => Value::Real(*r),
            (Literal::Enum(e, v), Prim::Enum(ix)) if self.model.enums[ix].name == *e => {
                match self.model.enums[ix].variants.iter().position(|x| x == v) {
                    Some(p) => Value::Enum(p),
                    None => {
                        self.err(Code::Unresolved, span, format!("`{e}` has no variant `{v}`"));
                        Value::Enum(0)
                    }
                }
            }
            _ => {
                self.err(Code::Type, span, "initial value does not match the declared type");
                Value::zero(ty)
            }
        }
    }

    /// Layout of a list of attributes, recursing into data classes.
    fn layout_of(&mut self, attrs: &[Attribute], visiting: &mut Vec<usize>) -> Layout {
        let mut layout = Layout::default();
        for a in attrs {
            match self.resolve(&a.ty, a.span) {
                Some(Resolved::Prim(p)) => {
                    let init = match &a.init {
                        Some(l) => self.literal(l, p, a.span),
                        None => Value::zero(p),
                    };
                    layout.slots.push(Slot {
                        path: vec![a.name.clone()],
                        ty: p,
                        init,
                        tunable: a.tunable,
                    });
                }
                Some(Resolved::Data(d)) => {
                    if a.init.is_some() {
                        self.err(Code::Type, a.span, "data attributes cannot have an initial value");
                    }
                    if a.tunable {
                        self.err(Code::Type, a.span, "only primitive attributes can be tunable");
                    }
                    if visiting.contains(&d) {
                        self.err(
                            Code::ContainCycle,
                            a.span,
                            format!("data class `{}` contains itself", self.model.data_classes[d].name),
                        );
                        continue;
                    }
                    let inner = self.data_layout(d, visiting);
                    let base = layout.slots.len();
                    layout.objects.push(Embedded { path: vec![a.name.clone()], data: d, base });
                    for o in &inner.objects {
                        let mut path = vec![a.name.clone()];
                        path.extend(o.path.iter().cloned());
                        layout.objects.push(Embedded { path, data: o.data, base: base + o.base });
                    }
                    for s in &inner.slots {
                        let mut path = vec![a.name.clone()];
                        path.extend(s.path.iter().cloned());
                        layout.slots.push(Slot { path, ty: s.ty, init: s.init, tunable: false });
                    }
                }
                None => {}
            }
        }
        layout
    }

    fn data_layout(&mut self, d: usize, visiting: &mut Vec<usize>) -> Layout {
        if let Some(l) = &self.data_layouts[d] {
            return l.clone();
        }
        visiting.push(d);
        let fields = self.model.data_classes[d].fields.clone();
        let l = self.layout_of(&fields, visiting);
        visiting.pop();
        self.data_layouts[d] = Some(l.clone());
        l
    }

    fn actor(&mut self, a: &ActorClass, actor_ix: &HashMap<&str, usize>) -> RActor {
        let layout = self.layout_of(&a.attributes, &mut Vec::new());
        let ports: Vec<RPort> = a
            .ports
            .iter()
            .map(|p| {
                let protocol = match self.model.protocols.iter().position(|q| q.name == p.protocol) {
                    Some(i) => i,
                    None => {
                        self.err(
                            Code::Unresolved,
                            p.span,
                            format!("unknown protocol `{}`", p.protocol),
                        );
                        usize::MAX
                    }
                };
                RPort { name: p.name.clone(), direction: p.direction, protocol, span: p.span }
            })
            .collect();
        let parts: Vec<(String, usize)> = a
            .parts
            .iter()
            .map(|p| match actor_ix.get(p.class.as_str()) {
                Some(&i) => (p.name.clone(), i),
                None => {
                    self.err(Code::Unresolved, p.span, format!("unknown actor class `{}`", p.class));
                    (p.name.clone(), usize::MAX)
                }
            })
            .collect();
        let channels = a.channels.iter().filter_map(|c| self.channel(a, c, &parts)).collect();
        let timers: Vec<String> = a.timers.iter().map(|t| t.name.clone()).collect();

        let actx = ActorCtx { ports: &ports, timers: &timers, has_block: a.block.is_some() };
        let methods: Vec<RMethod> =
            a.methods.iter().map(|m| self.lower_method(m, &layout, Some(&actx))).collect();

        let machine = a.machine.as_ref().map(|m| self.machine(a, m, &layout, &actx, &methods));
        let block = a.block.as_ref().map(|b| {
            let mut cx = Ctx { layout: &layout, params: &[], actor: Some(&actx) };
            let (e, t) = self.expr(&b.input, &mut cx);
            let input = self.coerce(e, t, Prim::Real, b.input.span);
            RBlock { kind: b.kind, input, span: b.span }
        });

        RActor {
            name: a.name.clone(),
            layout,
            ports,
            timers,
            methods,
            parts,
            channels,
            machine,
            block,
            deadline: a.deadline.as_ref().map(|d| d.ticks),
            span: a.span,
        }
    }

    fn channel(&mut self, a: &ActorClass, c: &Channel, parts: &[(String, usize)]) -> Option<RChannel> {
        let ea = self.endpoint(a, &c.a, parts);
        let eb = self.endpoint(a, &c.b, parts);
        Some(RChannel { a: ea?, b: eb?, span: c.span })
    }

    fn endpoint(&mut self, a: &ActorClass, e: &Endpoint, parts: &[(String, usize)]) -> Option<REnd> {
        let (part, class) = match &e.part {
            None => (None, a),
            Some(p) => match parts.iter().position(|(n, _)| n == p) {
                Some(i) if parts[i].1 != usize::MAX => {
                    let cls = &self.model.actor_classes[parts[i].1];
                    (Some(i), cls)
                }
                Some(_) => return None,
                None => {
                    self.err(Code::ChanDangling, e.span, format!("`{p}` is not a part of `{}`", a.name));
                    return None;
                }
            },
        };
        match class.ports.iter().position(|p| p.name == e.port) {
            Some(port) => Some(REnd { part, port }),
            None => {
                self.err(
                    Code::ChanDangling,
                    e.span,
                    format!("`{}` has no port `{}`", class.name, e.port),
                );
                None
            }
        }
    }

    fn machine(
        &mut self,
        a: &ActorClass,
        m: &StateMachine,
        layout: &Layout,
        actx: &ActorCtx<'_>,
        methods: &[RMethod],
    ) -> RMachine {
        let states: Vec<String> = m.states.iter().map(|s| s.name.clone()).collect();
        let state = |r: &Reference, env: &mut Self| match states.iter().position(|s| *s == r.name) {
            Some(i) => i,
            None => {
                env.err(Code::Unresolved, r.span, format!("unknown state `{}`", r.name));
                0
            }
        };
        let initial = state(&m.initial, self);
        let mut transitions = Vec::new();
        for t in &m.transitions {
            let from = state(&t.from, self);
            let to = state(&t.to, self);
            let params = self.trigger_params(a, &t.trigger, actx, methods);
            let mut cx = Ctx { layout, params: &params, actor: Some(actx) };
            let guard = t.guard.as_ref().map(|g| {
                let (e, ty) = self.expr(g, &mut cx);
                self.coerce(e, ty, Prim::Bool, g.span)
            });
            let actions = self.stmts(&t.actions, &mut cx, None);
            transitions.push(RTransition { from, to, trigger: t.trigger.name.clone(), guard, actions });
        }
        RMachine { states, initial, transitions }
    }

    fn trigger_params(
        &mut self,
        a: &ActorClass,
        trigger: &Reference,
        actx: &ActorCtx<'_>,
        methods: &[RMethod],
    ) -> Vec<(String, Prim)> {
        let mut found: Vec<Vec<(String, Prim)>> = Vec::new();
        if let Some(m) = methods.iter().find(|m| m.name == trigger.name) {
            found.push(m.params.clone());
        }
        for p in actx.ports.iter().filter(|p| p.direction == Direction::Provided) {
            if let Some(proto) = self.protocols.get(p.protocol) {
                for s in &proto.sigs {
                    if s.kind == SigKind::Message && s.name == trigger.name {
                        found.push(s.params.clone());
                    }
                }
            }
        }
        if actx.timers.contains(&trigger.name) {
            found.push(Vec::new());
        }
        let Some(first) = found.first().cloned() else {
            self.err(
                Code::Unresolved,
                trigger.span,
                format!("`{}` is not a method, received message or timer of `{}`", trigger.name, a.name),
            );
            return Vec::new();
        };
        let shape = |v: &Vec<(String, Prim)>| v.iter().map(|p| p.1).collect::<Vec<_>>();
        if found.iter().any(|f| shape(f) != shape(&first)) {
            self.err(
                Code::Type,
                trigger.span,
                format!("trigger `{}` has conflicting parameter lists", trigger.name),
            );
        }
        first
    }

    fn lower_method(&mut self, m: &Method, layout: &Layout, actor: Option<&ActorCtx<'_>>) -> RMethod {
        let params: Vec<(String, Prim)> =
            m.params.iter().map(|p| (p.name.clone(), self.prim(&p.ty, p.span))).collect();
        let ret = m.ret.as_ref().map(|t| self.prim(t, m.span));
        let mut cx = Ctx { layout, params: &params, actor };
        let body = self.stmts(&m.body, &mut cx, Some(ret));
        match (ret, m.body.last().map(|s| &s.kind)) {
            (Some(_), Some(StmtKind::Return(_))) | (None, _) => {}
            (Some(_), _) => self.err(Code::Type, m.span, format!("method `{}` must end with `return`", m.name)),
        }
        RMethod { name: m.name.clone(), span: m.span, params, ret, body }
    }

    /// `ret` is `None` outside methods (transition actions), `Some(None)` in
    /// void methods.
    fn stmts(&mut self, body: &[Stmt], cx: &mut Ctx<'_, '_>, ret: Option<Option<Prim>>) -> Vec<RStmt> {
        let mut out = Vec::new();
        for (i, s) in body.iter().enumerate() {
            let last = i + 1 == body.len();
            match &s.kind {
                StmtKind::Assign { target, value } => {
                    let (e, t) = self.expr(value, cx);
                    if cx.params.iter().any(|p| p.0 == target[0]) {
                        self.err(Code::Type, s.span, format!("parameter `{}` is read-only", target[0]));
                        continue;
                    }
                    match cx.layout.slot(target) {
                        Some(slot) => {
                            let ty = cx.layout.slots[slot].ty;
                            let value = self.coerce(e, t, ty, value.span);
                            out.push(RStmt::Assign { slot, value });
                        }
                        None if cx.layout.object(target).is_some() => {
                            self.err(Code::Type, s.span, "cannot assign a whole data object")
                        }
                        None => self.err(
                            Code::Unresolved,
                            s.span,
                            format!("unknown attribute `{}`", target.join(".")),
                        ),
                    }
                }
                StmtKind::Call { target, method, args } => {
                    let (e, _) = self.call(target, method, args, s.span, cx);
                    out.push(RStmt::Eval(e));
                }
                StmtKind::Send { port, message, args } => {
                    let Some(actx) = cx.actor else {
                        self.err(Code::Type, s.span, "data classes cannot send messages");
                        continue;
                    };
                    let Some(pi) = actx.ports.iter().position(|p| p.name == *port) else {
                        self.err(Code::Unresolved, s.span, format!("unknown port `{port}`"));
                        continue;
                    };
                    let p = &actx.ports[pi];
                    if p.direction != Direction::Required {
                        self.err(Code::Type, s.span, format!("`{port}` is not a required port"));
                        continue;
                    }
                    let Some(proto) = self.protocols.get(p.protocol).cloned() else { continue };
                    match proto.sig(message) {
                        Some(si) if proto.sigs[si].kind == SigKind::Message => {
                            let params: Vec<Prim> = proto.sigs[si].params.iter().map(|p| p.1).collect();
                            let args = self.args(args, &params, s.span, cx);
                            out.push(RStmt::Send { port: pi, sig: si, args });
                        }
                        Some(_) => self.err(
                            Code::Type,
                            s.span,
                            format!("`{message}` is a method; call it instead of sending"),
                        ),
                        None => self.err(
                            Code::Unresolved,
                            s.span,
                            format!("protocol `{}` has no message `{message}`", proto.name),
                        ),
                    }
                }
                StmtKind::SetTimer { timer, ticks } => {
                    let (e, t) = self.expr(ticks, cx);
                    let e = self.coerce(e, t, Prim::Int, ticks.span);
                    match cx.actor.and_then(|a| a.timers.iter().position(|x| x == timer)) {
                        Some(ti) => out.push(RStmt::SetTimer { timer: ti, ticks: e, span: s.span }),
                        None => self.err(Code::Unresolved, s.span, format!("unknown timer `{timer}`")),
                    }
                }
                StmtKind::CancelTimer { timer } => {
                    match cx.actor.and_then(|a| a.timers.iter().position(|x| x == timer)) {
                        Some(ti) => out.push(RStmt::CancelTimer { timer: ti }),
                        None => self.err(Code::Unresolved, s.span, format!("unknown timer `{timer}`")),
                    }
                }
                StmtKind::Return(value) => {
                    let (e, t) = self.expr(value, cx);
                    match ret {
                        Some(Some(rt)) if last => {
                            let e = self.coerce(e, t, rt, value.span);
                            out.push(RStmt::Return(e));
                        }
                        Some(Some(_)) => {
                            self.err(Code::Type, s.span, "`return` must be the last statement")
                        }
                        Some(None) => self.err(Code::Type, s.span, "void method cannot return a value"),
                        None => self.err(Code::Type, s.span, "`return` outside a method"),
                    }
                }
            }
        }
        out
    }

    fn args(&mut self, args: &[Expr], params: &[Prim], span: Span, cx: &mut Ctx<'_, '_>) -> Vec<RExpr> {
        if args.len() != params.len() {
            self.err(
                Code::Type,
                span,
                format!("expected {} argument(s), found {}", params.len(), args.len()),
            );
        }
        args.iter()
            .enumerate()
            .map(|(i, a)| {
                let (e, t) = self.expr(a, cx);
                match params.get(i) {
                    Some(&p) => self.coerce(e, t, p, a.span),
                    None => e,
                }
            })
            .collect()
    }

    fn call(
        &mut self,
        target: &[String],
        method: &str,
        args: &[Expr],
        span: Span,
        cx: &mut Ctx<'_, '_>,
    ) -> (RExpr, Ty) {
        if target.len() == 1 {
            if let Some(actx) = cx.actor {
                if let Some(pi) = actx.ports.iter().position(|p| p.name == target[0]) {
                    let p = &actx.ports[pi];
                    if p.direction != Direction::Required {
                        self.err(Code::Type, span, format!("`{}` is not a required port", p.name));
                        return (RExpr::Const(Value::Bool(false)), Ty::Err);
                    }
                    let Some(proto) = self.protocols.get(p.protocol).cloned() else {
                        return (RExpr::Const(Value::Bool(false)), Ty::Err);
                    };
                    return match proto.sig(method) {
                        Some(si) if proto.sigs[si].kind == SigKind::Method => {
                            let sig = &proto.sigs[si];
                            let params: Vec<Prim> = sig.params.iter().map(|p| p.1).collect();
                            let args = self.args(args, &params, span, cx);
                            let ty = sig.ret.map_or(Ty::Void, Ty::Val);
                            (RExpr::PortCall { port: pi, sig: si, args, span }, ty)
                        }
                        Some(_) => {
                            self.err(Code::Type, span, format!("`{method}` is a message; use `send`"));
                            (RExpr::Const(Value::Bool(false)), Ty::Err)
                        }
                        None => {
                            self.err(
                                Code::Unresolved,
                                span,
                                format!("protocol `{}` has no method `{method}`", proto.name),
                            );
                            (RExpr::Const(Value::Bool(false)), Ty::Err)
                        }
                    };
                }
            }
        }
        if let Some(obj) = cx.layout.object(target).cloned() {
            let sigs = self.data_sigs.get(obj.data).cloned().unwrap_or_default();
            return match sigs.iter().position(|m| m.name == method) {
                Some(mi) => {
                    let args = self.args(args, &sigs[mi].params, span, cx);
                    let ty = sigs[mi].ret.map_or(Ty::Void, Ty::Val);
                    (RExpr::DataCall { base: obj.base, data: obj.data, method: mi, args }, ty)
                }
                None => {
                    self.err(
                        Code::Unresolved,
                        span,
                        format!(
                            "data class `{}` has no method `{method}`",
                            self.model.data_classes[obj.data].name
                        ),
                    );
                    (RExpr::Const(Value::Bool(false)), Ty::Err)
                }
            };
        }
        self.err(
            Code::Unresolved,
            span,
            format!("`{}` is neither a required port nor a data attribute", target.join(".")),
        );
        (RExpr::Const(Value::Bool(false)), Ty::Err)
    }

    fn coerce(&mut self, e: RExpr, from: Ty, to: Prim, span: Span) -> RExpr {
        match from {
            Ty::Val(t) if t == to => e,
            Ty::Val(Prim::Int) if to == Prim::Real => RExpr::ToReal(Box::new(e)),
            Ty::Err => e,
            Ty::Val(t) => {
                let (t, to) = (self.ty_name(t), self.ty_name(to));
                self.err(Code::Type, span, format!("expected {to}, found {t}"));
                e
            }
            Ty::Void => {
                self.err(Code::Type, span, "call has no value");
                e
            }
        }
    }

    fn ty_name(&self, p: Prim) -> String {
        match p {
            Prim::Enum(i) => self.model.enums[i].name.clone(),
            other => other.to_string(),
        }
    }

    fn expr(&mut self, e: &Expr, cx: &mut Ctx<'_, '_>) -> (RExpr, Ty) {
        let bad = (RExpr::Const(Value::Bool(false)), Ty::Err);
        match &e.kind {
            ExprKind::Lit(l) => match l {
                Literal::Bool(b) => (RExpr::Const(Value::Bool(*b)), Ty::Val(Prim::Bool)),
                Literal::Int(i) => (RExpr::Const(Value::Int(*i)), Ty::Val(Prim::Int)),
                Literal::Real(r) => (RExpr::Const(Value::Real(*r)), Ty::Val(Prim::Real)),
                Literal::Enum(en, v) => self.enum_const(en, v, e.span).unwrap_or(bad),
            },
            ExprKind::Out => {
                if cx.actor.is_some_and(|a| a.has_block) {
                    (RExpr::Out, Ty::Val(Prim::Real))
                } else {
                    self.err(Code::Type, e.span, "`out` is only available in actors with a block");
                    bad
                }
            }
            ExprKind::Name(_) | ExprKind::Field(..) => {
                let mut path = Vec::new();
                flatten_path(e, &mut path);
                if path.len() == 1 {
                    if let Some(i) = cx.params.iter().position(|p| p.0 == path[0]) {
                        return (RExpr::Param(i), Ty::Val(cx.params[i].1));
                    }
                }
                if let Some(slot) = cx.layout.slot(&path) {
                    return (RExpr::Slot(slot), Ty::Val(cx.layout.slots[slot].ty));
                }
                if cx.layout.object(&path).is_some() {
                    self.err(Code::Type, e.span, format!("`{}` is a data object, not a value", path.join(".")));
                    return bad;
                }
                if path.len() == 2 && self.enums.contains_key(path[0].as_str()) {
                    return self.enum_const(&path[0], &path[1], e.span).unwrap_or(bad);
                }
                self.err(Code::Unresolved, e.span, format!("unknown name `{}`", path.join(".")));
                bad
            }
            ExprKind::Call { target, method, args } => self.call(target, method, args, e.span, cx),
            ExprKind::Unary(op, inner) => {
                let (ie, t) = self.expr(inner, cx);
                match (op, t) {
                    (_, Ty::Err) => bad,
                    (UnaryOp::Neg, Ty::Val(Prim::Int)) => (RExpr::Neg(Num::Int, Box::new(ie)), t),
                    (UnaryOp::Neg, Ty::Val(Prim::Real)) => (RExpr::Neg(Num::Real, Box::new(ie)), t),
                    (UnaryOp::Not, Ty::Val(Prim::Bool)) => (RExpr::Not(Box::new(ie)), t),
                    _ => {
                        self.err(Code::Type, e.span, "operand type does not fit the unary operator");
                        bad
                    }
                }
            }
            ExprKind::Binary(op, l, r) => {
                let (le, lt) = self.expr(l, cx);
                let (re, rt) = self.expr(r, cx);
                let (Ty::Val(lt), Ty::Val(rt)) = (lt, rt) else {
                    if lt == Ty::Void || rt == Ty::Void {
                        self.err(Code::Type, e.span, "call has no value");
                    }
                    return bad;
                };
                self.binary(*op, le, lt, re, rt, e.span).unwrap_or(bad)
            }
        }
    }

    fn enum_const(&mut self, en: &str, v: &str, span: Span) -> Option<(RExpr, Ty)> {
        let Some(&ix) = self.enums.get(en) else {
            self.err(Code::Unresolved, span, format!("unknown enum `{en}`"));
            return None;
        };
        match self.model.enums[ix].variants.iter().position(|x| x == v) {
            Some(p) => Some((RExpr::Const(Value::Enum(p)), Ty::Val(Prim::Enum(ix)))),
            None => {
                self.err(Code::Unresolved, span, format!("`{en}` has no variant `{v}`"));
                None
            }
        }
    }

    fn binary(
        &mut self,
        op: BinaryOp,
        le: RExpr,
        lt: Prim,
        re: RExpr,
        rt: Prim,
        span: Span,
    ) -> Option<(RExpr, Ty)> {
        let numeric = |t: Prim| matches!(t, Prim::Int | Prim::Real);
        let promote = |e: RExpr, t: Prim, real: bool| {
            if real && t == Prim::Int {
                RExpr::ToReal(Box::new(e))
            } else {
                e
            }
        };
        let arith = match op {
            BinaryOp::Add => Some(Arith::Add),
            BinaryOp::Sub => Some(Arith::Sub),
            BinaryOp::Mul => Some(Arith::Mul),
            BinaryOp::Div => Some(Arith::Div),
            _ => None,
        };
        if let Some(a) = arith {
            if !(numeric(lt) && numeric(rt)) {
                self.err(Code::Type, span, format!("`{}` needs numeric operands", op.symbol()));
                return None;
            }
            let real = lt == Prim::Real || rt == Prim::Real;
            let num = if real { Num::Real } else { Num::Int };
            let ty = if real { Prim::Real } else { Prim::Int };
            let e = RExpr::Arith(a, num, Box::new(promote(le, lt, real)), Box::new(promote(re, rt, real)), span);
            return Some((e, Ty::Val(ty)));
        }
        if matches!(op, BinaryOp::And | BinaryOp::Or) {
            if lt != Prim::Bool || rt != Prim::Bool {
                self.err(Code::Type, span, format!("`{}` needs bool operands", op.symbol()));
                return None;
            }
            let e = if op == BinaryOp::And {
                RExpr::And(Box::new(le), Box::new(re))
            } else {
                RExpr::Or(Box::new(le), Box::new(re))
            };
            return Some((e, Ty::Val(Prim::Bool)));
        }
        let cmp = match op {
            BinaryOp::Lt => Cmp::Lt,
            BinaryOp::Le => Cmp::Le,
            BinaryOp::Gt => Cmp::Gt,
            BinaryOp::Ge => Cmp::Ge,
            BinaryOp::Eq => Cmp::Eq,
            _ => Cmp::Ne,
        };
        let ordering = !matches!(cmp, Cmp::Eq | Cmp::Ne);
        if numeric(lt) && numeric(rt) {
            let real = lt == Prim::Real || rt == Prim::Real;
            let ty = if real { Prim::Real } else { Prim::Int };
            let e = RExpr::Cmp(cmp, ty, Box::new(promote(le, lt, real)), Box::new(promote(re, rt, real)));
            return Some((e, Ty::Val(Prim::Bool)));
        }
        if !ordering && lt == rt {
            return Some((RExpr::Cmp(cmp, lt, Box::new(le), Box::new(re)), Ty::Val(Prim::Bool)));
        }
        self.err(
            Code::Type,
            span,
            format!("cannot compare {} with {}", self.ty_name(lt), self.ty_name(rt)),
        );
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Val(Prim),
    Void,
    Err,
}

struct ActorCtx<'a> {
    ports: &'a [RPort],
    timers: &'a [String],
    has_block: bool,
}

struct Ctx<'a, 'b> {
    layout: &'a Layout,
    params: &'a [(String, Prim)],
    actor: Option<&'b ActorCtx<'b>>,
}

fn flatten_path(e: &Expr, out: &mut Vec<String>) {
    match &e.kind {
        ExprKind::Name(n) => out.push(n.clone()),
        ExprKind::Field(base, f) => {
            flatten_path(base, out);
            out.push(f.clone());
        }
        _ => {}
    }
}
