use std::fmt::Write;

use crate::model::*;

/// Canonical text for a model: fixed item and member order, two-space indent,
/// LF line endings.
pub fn render(model: &ModelUnit) -> String {
    let mut w = Writer::default();
    w.line(0, &format!("model {} {{", model.name));
    for e in &model.enums {
        w.line(1, &format!("enum {} {{ {} }}", e.name, e.variants.join(", ")));
    }
    for p in &model.protocols {
        w.line(1, &format!("protocol {} {{", p.name));
        for s in &p.signatures {
            let ret = s.ret.as_ref().map(|t| format!(": {t}")).unwrap_or_default();
            w.line(2, &format!("{} {}({}){};", s.kind.as_str(), s.name, params(&s.params), ret));
        }
        w.line(1, "}");
    }
    for d in &model.data_classes {
        w.line(1, &format!("data {} {{", d.name));
        for f in &d.fields {
            w.line(2, &attribute(f));
        }
        for m in &d.methods {
            method(&mut w, 2, m);
        }
        w.line(1, "}");
    }
    for a in &model.actor_classes {
        actor(&mut w, a);
    }
    w.line(1, &format!("root {}", model.root));
    w.line(0, "}");
    w.out
}

#[derive(Default)]
struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }
}

fn actor(w: &mut Writer, a: &ActorClass) {
    let sup = if a.superclasses.is_empty() {
        String::new()
    } else {
        let names: Vec<&str> = a.superclasses.iter().map(|s| s.name.as_str()).collect();
        format!(" : {}", names.join(", "))
    };
    w.line(1, &format!("actor {}{} {{", a.name, sup));
    for p in &a.ports {
        let kw = match p.direction {
            Direction::Provided => "provides",
            Direction::Required => "requires",
        };
        w.line(2, &format!("{kw} {}: {};", p.name, p.protocol));
    }
    for at in &a.attributes {
        w.line(2, &attribute(at));
    }
    for t in &a.timers {
        w.line(2, &format!("timer {};", t.name));
    }
    for m in &a.methods {
        method(w, 2, m);
    }
    for p in &a.parts {
        w.line(2, &format!("part {}: {};", p.name, p.class));
    }
    for c in &a.channels {
        w.line(2, &format!("connect {} -- {};", c.a, c.b));
    }
    if let Some(m) = &a.machine {
        w.line(2, "machine {");
        let states: Vec<&str> = m.states.iter().map(|s| s.name.as_str()).collect();
        w.line(3, &format!("states {};", states.join(", ")));
        w.line(3, &format!("initial {};", m.initial.name));
        for t in &m.transitions {
            let mut head = format!("{} -> {} on {}", t.from.name, t.to.name, t.trigger.name);
            if let Some(g) = &t.guard {
                let _ = write!(head, " if {}", expr(g));
            }
            if t.actions.is_empty() {
                head.push(';');
                w.line(3, &head);
            } else {
                head.push_str(" / {");
                w.line(3, &head);
                for s in &t.actions {
                    w.line(4, &stmt(s));
                }
                w.line(3, "};");
            }
        }
        w.line(2, "}");
    }
    if let Some(b) = &a.block {
        let args = match b.kind {
            BlockKind::Pt1 { gain, time_constant } => format!("{}, {}", num(gain), num(time_constant)),
            BlockKind::Pi { kp, ki, lo, hi } => {
                format!("{}, {}, {}, {}", num(kp), num(ki), num(lo), num(hi))
            }
            BlockKind::Limiter { lo, hi } => format!("{}, {}", num(lo), num(hi)),
        };
        w.line(2, &format!("block {}({args}) <- {};", b.kind.keyword(), expr(&b.input)));
    }
    if let Some(d) = &a.deadline {
        w.line(2, &format!("deadline {};", d.ticks));
    }
    w.line(1, "}");
}

fn method(w: &mut Writer, indent: usize, m: &Method) {
    let ret = m.ret.as_ref().map(|t| format!(": {t}")).unwrap_or_default();
    if m.body.is_empty() {
        w.line(indent, &format!("method {}({}){} {{ }}", m.name, params(&m.params), ret));
        return;
    }
    w.line(indent, &format!("method {}({}){} {{", m.name, params(&m.params), ret));
    for s in &m.body {
        w.line(indent + 1, &stmt(s));
    }
    w.line(indent, "}");
}

fn attribute(a: &Attribute) -> String {
    let tunable = if a.tunable { "tunable " } else { "" };
    let init = a.init.as_ref().map(|l| format!(" = {}", literal(l))).unwrap_or_default();
    format!("{tunable}attr {}: {}{init};", a.name, a.ty)
}

fn params(ps: &[Param]) -> String {
    ps.iter().map(|p| format!("{}: {}", p.name, p.ty)).collect::<Vec<_>>().join(", ")
}

/// Shortest text that parses back to the same double.
pub(crate) fn num(v: f64) -> String {
    format!("{v:?}")
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::Bool(b) => b.to_string(),
        Literal::Int(i) => i.to_string(),
        Literal::Real(r) => num(*r),
        Literal::Enum(e, v) => format!("{e}.{v}"),
    }
}

fn stmt(s: &Stmt) -> String {
    match &s.kind {
        StmtKind::Assign { target, value } => format!("{} := {};", target.join("."), expr(value)),
        StmtKind::Call { target, method, args } => {
            format!("{}.{method}({});", target.join("."), arg_list(args))
        }
        StmtKind::Send { port, message, args } => {
            format!("send {port}.{message}({});", arg_list(args))
        }
        StmtKind::SetTimer { timer, ticks } => format!("set {timer}({});", expr(ticks)),
        StmtKind::CancelTimer { timer } => format!("cancel {timer};"),
        StmtKind::Return(e) => format!("return {};", expr(e)),
    }
}

fn arg_list(args: &[Expr]) -> String {
    args.iter().map(expr).collect::<Vec<_>>().join(", ")
}

pub(crate) fn expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Lit(l) => literal(l),
        ExprKind::Name(n) => n.clone(),
        ExprKind::Field(base, f) => format!("{}.{f}", expr(base)),
        ExprKind::Call { target, method, args } => {
            format!("{}.{method}({})", target.join("."), arg_list(args))
        }
        ExprKind::Out => "out".to_string(),
        ExprKind::Unary(op, inner) => {
            let sym = match op {
                UnaryOp::Neg => "-",
                UnaryOp::Not => "!",
            };
            // A negative literal would absorb the sign, and `--` is a token.
            let bare = matches!(
                &inner.kind,
                ExprKind::Name(_) | ExprKind::Field(..) | ExprKind::Call { .. } | ExprKind::Out | ExprKind::Lit(Literal::Bool(_))
            );
            if bare {
                format!("{sym}{}", expr(inner))
            } else {
                format!("{sym}({})", expr(inner))
            }
        }
        ExprKind::Binary(op, l, r) => {
            let p = op.precedence();
            let left = operand(l, |q| q < p || (op.is_comparison() && q == p));
            let right = operand(r, |q| q <= p);
            format!("{left} {} {right}", op.symbol())
        }
    }
}

fn operand(e: &Expr, needs_parens: impl Fn(u8) -> bool) -> String {
    match &e.kind {
        ExprKind::Binary(op, ..) if needs_parens(op.precedence()) => format!("({})", expr(e)),
        _ => expr(e),
    }
}
