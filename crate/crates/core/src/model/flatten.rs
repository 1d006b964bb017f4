use std::collections::HashMap;

use super::{ActorClass, ModelUnit};
use crate::diag::{sort_diagnostics, Code, Diagnostic};

/// Copy-down structural inheritance.
///
/// Every class ends up with no superclass and holds its ancestors' members
/// first (outermost ancestor first), then its own, each group in declaration
/// order. Redeclaring an inherited member is `E_OVERRIDE`. The input must be
/// free of inheritance errors other than overrides (unknown superclasses,
/// cycles and multiple superclasses are reported by `validate`).
pub fn flatten_inheritance(model: &ModelUnit) -> Result<ModelUnit, Vec<Diagnostic>> {
    let by_name: HashMap<&str, &ActorClass> =
        model.actor_classes.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut diags = Vec::new();
    let mut out = model.clone();

    for (slot, class) in model.actor_classes.iter().enumerate() {
        let mut chain = vec![class];
        let mut cur = class;
        while let Some(sup) = cur.superclasses.first() {
            match by_name.get(sup.name.as_str()) {
                Some(next) if !chain.iter().any(|c| c.name == next.name) => {
                    chain.push(next);
                    cur = next;
                }
                Some(_) => {
                    diags.push(Diagnostic::new(
                        Code::Structure,
                        sup.span,
                        format!("inheritance cycle through `{}`", sup.name),
                    ));
                    break;
                }
                None => {
                    diags.push(Diagnostic::new(
                        Code::Unresolved,
                        sup.span,
                        format!("unknown superclass `{}`", sup.name),
                    ));
                    break;
                }
            }
        }
        if chain.len() == 1 {
            continue;
        }
        chain.reverse();
        let mut merged = ActorClass::empty(&class.name);
        merged.span = class.span;
        for c in chain {
            merge_into(&mut merged, c, &mut diags);
        }
        out.actor_classes[slot] = merged;
    }

    if diags.is_empty() {
        Ok(out)
    } else {
        sort_diagnostics(&mut diags);
        Err(diags)
    }
}

fn merge_into(acc: &mut ActorClass, c: &ActorClass, diags: &mut Vec<Diagnostic>) {
    let inherited: Vec<String> = acc.member_names().map(|(n, _)| n.to_string()).collect();
    for (name, span) in c.member_names() {
        if inherited.iter().any(|n| n == name) {
            diags.push(Diagnostic::new(
                Code::Override,
                span,
                format!("`{}` redeclares inherited member `{name}`", c.name),
            ));
        }
    }
    let single = |what: &str, have: bool, span, diags: &mut Vec<Diagnostic>| {
        if have {
            diags.push(Diagnostic::new(
                Code::Override,
                span,
                format!("`{}` redeclares the inherited {what}", c.name),
            ));
        }
    };
    acc.ports.extend(c.ports.iter().cloned());
    acc.attributes.extend(c.attributes.iter().cloned());
    acc.timers.extend(c.timers.iter().cloned());
    acc.methods.extend(c.methods.iter().cloned());
    acc.parts.extend(c.parts.iter().cloned());
    acc.channels.extend(c.channels.iter().cloned());
    if let Some(m) = &c.machine {
        single("state machine", acc.machine.is_some(), m.span, diags);
        acc.machine = Some(m.clone());
    }
    if let Some(b) = &c.block {
        single("block", acc.block.is_some(), b.span, diags);
        acc.block = Some(b.clone());
    }
    if let Some(d) = &c.deadline {
        single("deadline", acc.deadline.is_some(), d.span, diags);
        acc.deadline = Some(d.clone());
    }
}
