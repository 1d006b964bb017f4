//! Deadline checking over a finished trace.

use serde::Serialize;

use super::trace::{EventKind, Trace};
use crate::model::InstanceTree;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub instance: String,
    /// Index of the triggering event in the trace.
    pub trigger_index: usize,
    /// `msg_recv` or `call` name.
    pub trigger: String,
    pub trigger_tick: u64,
    pub deadline_ticks: u64,
    pub actual_ticks: u64,
    /// `false` when the actor never reacted before the trace ended; then
    /// `actual_ticks` is a lower bound.
    pub answered: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TimelinessReport {
    pub violations: Vec<Violation>,
}

impl TimelinessReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Final tick of the run described by the header.
fn run_end(trace: &Trace) -> u64 {
    let h = &trace.header;
    if h.dt > 0.0 && (h.duration / h.dt).is_finite() {
        (h.duration / h.dt).round().max(0.0) as u64
    } else {
        0
    }
}

/// Every `msg_recv` or `call` delivered to an actor with a deadline must be
/// followed by that actor's next `transition` or `call_return` within the
/// deadline. A trigger that is never answered counts once the trace has run
/// past its deadline.
pub fn check_timeliness(trace: &Trace, tree: &InstanceTree) -> TimelinessReport {
    let mut violations = Vec::new();
    let events_end = trace.events.last().map_or(0, |e| e.tick);
    // a halted run ends at its error
    let halted = trace.events.iter().any(|e| e.kind == EventKind::RuntimeError);
    let last_tick = if halted { events_end } else { events_end.max(run_end(trace)) };
    for (ix, inst) in tree.instances.iter().enumerate() {
        let Some(deadline) = tree.class(ix).deadline else { continue };
        let path = inst.path.as_str();
        // indices of this actor's reactions, in trace order
        let reactions: Vec<usize> = trace
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.src == path && matches!(e.kind, EventKind::Transition | EventKind::CallReturn)
            })
            .map(|(i, _)| i)
            .collect();
        for (ti, e) in trace.events.iter().enumerate() {
            if e.dst != path || !matches!(e.kind, EventKind::MsgRecv | EventKind::Call) {
                continue;
            }
            let next = reactions.partition_point(|&r| r <= ti);
            let (actual, answered) = match reactions.get(next) {
                Some(&r) => (trace.events[r].tick - e.tick, true),
                None => (last_tick - e.tick, false),
            };
            if actual > deadline {
                violations.push(Violation {
                    instance: path.to_string(),
                    trigger_index: ti,
                    trigger: e.name.clone(),
                    trigger_tick: e.tick,
                    deadline_ticks: deadline,
                    actual_ticks: actual,
                    answered,
                });
            }
        }
    }
    violations.sort_by_key(|v| v.trigger_index);
    TimelinessReport { violations }
}
