use std::collections::{HashMap, HashSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::ir::{Program, REnd};
use super::{flatten_inheritance, instance, typeck, BlockKind, Direction, ModelUnit, SigKind};
use crate::diag::{sort_diagnostics, Code, Diagnostic, Span};

/// Check every well-formedness rule of a parsed model.
///
/// Returns an empty list exactly when the model can be flattened, lowered and
/// instantiated. Diagnostics are sorted by location, then code.
pub fn validate(model: &ModelUnit) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    structure(model, &mut diags);

    match flatten_inheritance(model) {
        Ok(flat) => {
            containment(&flat, &mut diags);
            let (program, lowered) = typeck::lower(&flat);
            diags.extend(lowered);
            if program_is_usable(&program) {
                channels(&program, &mut diags);
                implementations(&flat, &program, &mut diags);
            }
            if diags.is_empty() {
                if let Err(e) = instance::build(program) {
                    diags.extend(e);
                }
            }
        }
        Err(e) => diags.extend(e),
    }
    sort_diagnostics(&mut diags);
    diags
}

/// Lowering substitutes `usize::MAX` for unresolved references.
fn program_is_usable(p: &Program) -> bool {
    p.actors.iter().all(|a| {
        a.ports.iter().all(|port| port.protocol != usize::MAX)
            && a.parts.iter().all(|(_, c)| *c != usize::MAX)
    })
}

fn dup_check<'a>(
    items: impl IntoIterator<Item = (&'a str, Span)>,
    what: &str,
    diags: &mut Vec<Diagnostic>,
) {
    let mut seen = HashSet::new();
    for (name, span) in items {
        if !seen.insert(name) {
            diags.push(Diagnostic::new(Code::Duplicate, span, format!("duplicate {what} `{name}`")));
        }
    }
}

fn structure(model: &ModelUnit, diags: &mut Vec<Diagnostic>) {
    dup_check(
        model
            .enums
            .iter()
            .map(|e| (e.name.as_str(), e.span))
            .chain(model.protocols.iter().map(|p| (p.name.as_str(), p.span)))
            .chain(model.data_classes.iter().map(|d| (d.name.as_str(), d.span)))
            .chain(model.actor_classes.iter().map(|a| (a.name.as_str(), a.span))),
        "declaration",
        diags,
    );
    if model.actor(&model.root).is_none() {
        diags.push(Diagnostic::new(
            Code::Unresolved,
            model.root_span,
            format!("root `{}` is not an actor class", model.root),
        ));
    }
    for e in &model.enums {
        dup_check(e.variants.iter().map(|v| (v.as_str(), e.span)), "variant", diags);
    }
    for p in &model.protocols {
        dup_check(p.signatures.iter().map(|s| (s.name.as_str(), s.span)), "signature", diags);
        for s in &p.signatures {
            dup_check(s.params.iter().map(|q| (q.name.as_str(), q.span)), "parameter", diags);
        }
    }
    for d in &model.data_classes {
        dup_check(
            d.fields
                .iter()
                .map(|f| (f.name.as_str(), f.span))
                .chain(d.methods.iter().map(|m| (m.name.as_str(), m.span))),
            "member",
            diags,
        );
        for m in &d.methods {
            dup_check(m.params.iter().map(|q| (q.name.as_str(), q.span)), "parameter", diags);
        }
    }
    for a in &model.actor_classes {
        if let Some(extra) = a.superclasses.get(1) {
            diags.push(Diagnostic::new(
                Code::MultiInherit,
                extra.span,
                format!("`{}` lists {} superclasses; at most one is allowed", a.name, a.superclasses.len()),
            ));
        }
        dup_check(a.member_names(), "member", diags);
        for m in &a.methods {
            dup_check(m.params.iter().map(|q| (q.name.as_str(), q.span)), "parameter", diags);
        }
        if let (Some(m), Some(_)) = (&a.machine, &a.block) {
            diags.push(Diagnostic::new(
                Code::Structure,
                m.span,
                format!("`{}` has both a state machine and a continuous block", a.name),
            ));
        }
        if let Some(m) = &a.machine {
            dup_check(m.states.iter().map(|s| (s.name.as_str(), s.span)), "state", diags);
        }
        if let Some(b) = &a.block {
            let bad = match b.kind {
                BlockKind::Pt1 { time_constant, .. } => {
                    (time_constant <= 0.0).then_some("time constant must be positive")
                }
                BlockKind::Pi { lo, hi, .. } | BlockKind::Limiter { lo, hi } => {
                    (lo >= hi).then_some("lower limit must be below upper limit")
                }
            };
            if let Some(msg) = bad {
                diags.push(Diagnostic::new(Code::BlockParam, b.span, msg));
            }
        }
        if let Some(d) = &a.deadline {
            if d.ticks == 0 {
                diags.push(Diagnostic::new(Code::Structure, d.span, "deadline must be positive"));
            }
        }
    }
}

/// Part containment over flattened classes must be acyclic.
fn containment(flat: &ModelUnit, diags: &mut Vec<Diagnostic>) {
    let mut g = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..flat.actor_classes.len()).map(|i| g.add_node(i)).collect();
    let ix: HashMap<&str, usize> =
        flat.actor_classes.iter().enumerate().map(|(i, a)| (a.name.as_str(), i)).collect();
    for (i, a) in flat.actor_classes.iter().enumerate() {
        for p in &a.parts {
            if let Some(&j) = ix.get(p.class.as_str()) {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![0usize; nodes.len()];
    let mut size = Vec::new();
    for (c, scc) in tarjan_scc(&g).into_iter().enumerate() {
        size.push(scc.len());
        for n in scc {
            component[g[n]] = c;
        }
    }
    for (i, a) in flat.actor_classes.iter().enumerate() {
        for p in &a.parts {
            let Some(&j) = ix.get(p.class.as_str()) else { continue };
            if i == j || (component[i] == component[j] && size[component[i]] > 1) {
                diags.push(Diagnostic::new(
                    Code::ContainCycle,
                    p.span,
                    format!("part `{}: {}` makes `{}` contain itself", p.name, p.class, a.name),
                ));
            }
        }
    }
}

/// Direction, compatibility and fan-out rules for every channel.
fn channels(p: &Program, diags: &mut Vec<Diagnostic>) {
    for a in &p.actors {
        let port_of = |e: &REnd| {
            let class = match e.part {
                None => a,
                Some(i) => &p.actors[a.parts[i].1],
            };
            &class.ports[e.port]
        };
        // Seen from inside the class a `self` port has the opposite direction.
        let effective = |e: &REnd| match (e.part, port_of(e).direction) {
            (Some(_), d) => d,
            (None, Direction::Provided) => Direction::Required,
            (None, Direction::Required) => Direction::Provided,
        };
        let mut used: HashSet<REnd> = HashSet::new();
        for c in &a.channels {
            if c.a.part.is_none() && c.b.part.is_none() {
                diags.push(Diagnostic::new(Code::PortIncompat, c.span, "cannot connect `self` to `self`"));
                continue;
            }
            let (req, prov) = match (effective(&c.a), effective(&c.b)) {
                (Direction::Required, Direction::Provided) => (c.a, c.b),
                (Direction::Provided, Direction::Required) => (c.b, c.a),
                _ => {
                    diags.push(Diagnostic::new(
                        Code::PortIncompat,
                        c.span,
                        "a channel joins exactly one required and one provided port",
                    ));
                    continue;
                }
            };
            let rp = &p.protocols[port_of(&req).protocol];
            let pp = &p.protocols[port_of(&prov).protocol];
            for s in &rp.sigs {
                let ok = pp.sigs.iter().any(|q| {
                    q.name == s.name
                        && q.kind == s.kind
                        && q.ret == s.ret
                        && q.params.len() == s.params.len()
                        && q.params.iter().zip(&s.params).all(|(x, y)| x.1 == y.1)
                });
                if !ok {
                    diags.push(Diagnostic::new(
                        Code::PortIncompat,
                        c.span,
                        format!(
                            "{} `{}` of `{}` is not offered with the same signature by `{}`",
                            s.kind.as_str(),
                            s.name,
                            rp.name,
                            pp.name
                        ),
                    ));
                }
            }
            if !used.insert(req) {
                diags.push(Diagnostic::new(
                    Code::Fanout,
                    c.span,
                    format!("`{}` is already connected", port_of(&req).name),
                ));
            }
        }
    }
}

/// A provided port that is not relayed inward must be implemented by methods
/// of the class itself.
fn implementations(flat: &ModelUnit, p: &Program, diags: &mut Vec<Diagnostic>) {
    for (ra, a) in p.actors.iter().zip(&flat.actor_classes) {
        for (pi, port) in ra.ports.iter().enumerate() {
            if port.direction != Direction::Provided {
                continue;
            }
            let relayed = ra.channels.iter().any(|c| {
                (c.a.part.is_none() && c.a.port == pi) || (c.b.part.is_none() && c.b.port == pi)
            });
            if relayed {
                continue;
            }
            for s in &p.protocols[port.protocol].sigs {
                if s.kind != SigKind::Method {
                    continue;
                }
                match ra.methods.iter().zip(&a.methods).find(|(m, _)| m.name == s.name) {
                    None => diags.push(Diagnostic::new(
                        Code::Unresolved,
                        port.span,
                        format!("`{}` does not implement method `{}` of port `{}`", a.name, s.name, port.name),
                    )),
                    Some((m, src)) => {
                        let same = m.ret == s.ret
                            && m.params.len() == s.params.len()
                            && m.params.iter().zip(&s.params).all(|(x, y)| x.1 == y.1);
                        if !same {
                            diags.push(Diagnostic::new(
                                Code::Type,
                                src.span,
                                format!("method `{}` does not match its signature in `{}`", s.name, p.protocols[port.protocol].name),
                            ));
                        }
                    }
                }
            }
        }
    }
}
