use broom_core::dsl::parse;
use broom_core::model::instantiate;
use broom_core::scenario::{
    check_conformance, detect_conflicts, rehearse_package, Arrow, PackagedScenario, Priority, Reason, Scenario,
    ScenarioPackage, E_LIFELINE,
};
use broom_core::sim::{EventKind, SimConfig, Stimulus, Trace, TraceEvent, TraceHeader};
use proptest::prelude::*;
use serde_json::json;

fn header() -> TraceHeader {
    TraceHeader {
        model: "M".into(),
        dt: 0.01,
        duration: 1.0,
        tool_version: "0".into(),
        instances: ["root", "root.a", "root.b", "root.c"].map(String::from).to_vec(),
    }
}

fn ev(tick: u64, kind: EventKind, src: &str, dst: &str, name: &str) -> TraceEvent {
    TraceEvent {
        tick,
        time: tick as f64 * 0.01,
        kind,
        src: src.into(),
        dst: dst.into(),
        name: name.into(),
        payload: vec![],
    }
}

fn call(tick: u64, src: &str, dst: &str, name: &str) -> TraceEvent {
    ev(tick, EventKind::Call, src, dst, name)
}

fn trace(events: Vec<TraceEvent>) -> Trace {
    Trace { header: header(), events }
}

const ABC: [&str; 4] = ["env", "root.a", "root.b", "root.c"];

fn abc(arrows: Vec<Arrow>) -> Scenario {
    Scenario::new("abc", &ABC, arrows)
}

fn sample_trace() -> Trace {
    trace(vec![
        ev(1, EventKind::MsgSend, "env", "root.a", "go"),
        ev(1, EventKind::MsgRecv, "env", "root.a", "go"),
        call(1, "root.a", "root.b", "x"),
        ev(1, EventKind::CallReturn, "root.b", "root.a", "x"),
        call(2, "root.b", "root.c", "y"),
        ev(2, EventKind::Sample, "root.c", "root.c", "out"),
        call(4, "root.a", "root.c", "z"),
    ])
}

fn sample_scenario() -> Scenario {
    abc(vec![
        Arrow::msg("env", "root.a", "go"),
        Arrow::call("root.a", "root.b", "x").within(0, 0),
        Arrow::call("root.b", "root.c", "y").within(1, 1),
        Arrow::call("root.a", "root.c", "z"),
    ])
}

#[test]
fn empty_scenario_passes_vacuously() {
    let v = check_conformance(&sample_trace(), &abc(vec![])).unwrap();
    assert!(v.pass);
    assert_eq!(v.matched, 0);
}

#[test]
fn sample_embeds() {
    let v = check_conformance(&sample_trace(), &sample_scenario()).unwrap();
    assert!(v.pass, "{v:?}");
    assert_eq!(v.positions, [0, 2, 4, 6]);
}

#[test]
fn deleted_event_is_missing() {
    let mut t = sample_trace();
    t.events.remove(4);
    let v = check_conformance(&t, &sample_scenario()).unwrap();
    let d = v.divergence.unwrap();
    assert_eq!((d.arrow, d.reason, d.position), (2, Reason::Missing, t.events.len()));
    assert_eq!(v.matched, 2);
}

#[test]
fn swapped_events_are_out_of_order() {
    // demand z before y while the trace has y then z, both at tick 2
    let mut s = sample_scenario();
    s.arrows.swap(2, 3);
    s.arrows[2].window = Some([1, 1]);
    s.arrows[3].window = Some([0, 0]);
    let mut t = sample_trace();
    t.events[6].tick = 2;
    let v = check_conformance(&t, &s).unwrap();
    let d = v.divergence.unwrap();
    assert_eq!((d.arrow, d.reason, d.position), (3, Reason::OutOfOrder, 4));
}

#[test]
fn late_event_is_window_violation() {
    let mut s = sample_scenario();
    s.arrows[3].window = Some([0, 1]);
    let v = check_conformance(&sample_trace(), &s).unwrap();
    let d = v.divergence.unwrap();
    assert_eq!((d.arrow, d.reason, d.position), (3, Reason::WindowViolation, 6));
}

#[test]
fn early_event_is_window_violation() {
    let mut s = sample_scenario();
    s.arrows[3].window = Some([5, 9]);
    let d = check_conformance(&sample_trace(), &s).unwrap().divergence.unwrap();
    assert_eq!((d.arrow, d.reason), (3, Reason::WindowViolation));
}

#[test]
fn strict_rejects_unlisted_interaction() {
    let mut s = sample_scenario();
    s.strict = true;
    assert!(check_conformance(&sample_trace(), &s).unwrap().pass);
    // drop the y arrow: the y call is now an extra event between x and z
    s.arrows.remove(2);
    let d = check_conformance(&sample_trace(), &s).unwrap().divergence.unwrap();
    assert_eq!((d.arrow, d.reason, d.position), (2, Reason::ExtraEventInStrict, 4));
    s.strict = false;
    assert!(check_conformance(&sample_trace(), &s).unwrap().pass);
}

#[test]
fn strict_ignores_events_off_the_chart() {
    let mut t = sample_trace();
    t.events.insert(3, call(1, "root.b", "root", "w"));
    let mut s = sample_scenario();
    s.strict = true;
    assert!(check_conformance(&t, &s).unwrap().pass);
}

#[test]
fn unknown_lifeline_is_rejected() {
    let s = Scenario::new("bad", &["env", "root.nope"], vec![Arrow::msg("env", "root.nope", "go")]);
    assert_eq!(check_conformance(&sample_trace(), &s).unwrap_err().code, E_LIFELINE);
}

#[test]
fn malformed_scenarios_are_rejected() {
    let text = json!({"name": "s", "lifelines": ["env"], "arrows": [{"from": "env", "to": "root.a", "name": "go", "kind": "msg"}]});
    assert!(Scenario::parse(&text.to_string()).is_err());
    let text = json!({"name": "s", "lifelines": ["env", "root.a"],
        "arrows": [{"from": "env", "to": "root.a", "name": "go", "kind": "msg", "window": [3, 2]}]});
    assert!(Scenario::parse(&text.to_string()).is_err());
    let text = json!({"name": "s", "lifelines": [], "arrows": [], "strict": "yes"});
    assert!(Scenario::parse(&text.to_string()).is_err());
}

#[test]
fn scenario_json_round_trips() {
    let mut s = sample_scenario();
    s.strict = true;
    assert_eq!(Scenario::parse(&s.to_json()).unwrap(), s);
}

fn packaged(s: Scenario, priority: Priority) -> PackagedScenario {
    PackagedScenario { scenario: s, priority, stimuli: vec![], duration: None }
}

fn package(list: Vec<(Scenario, Priority)>) -> ScenarioPackage {
    ScenarioPackage { name: "p".into(), dt: None, scenarios: list.into_iter().map(|(s, p)| packaged(s, p)).collect() }
}

#[test]
fn disjoint_lifelines_do_not_conflict() {
    let a = Scenario::new("a", &["root.a", "root.b"], vec![Arrow::call("root.a", "root.b", "x")]);
    let b = Scenario::new("b", &["root.c", "env"], vec![Arrow::msg("env", "root.c", "y")]);
    assert!(detect_conflicts(&package(vec![(a, Priority::Extra), (b, Priority::Extra)])).is_empty());
}

#[test]
fn identical_scenarios_do_not_conflict() {
    let s = sample_scenario();
    assert!(detect_conflicts(&package(vec![(s.clone(), Priority::Reuse), (s, Priority::Reuse)])).is_empty());
}

#[test]
fn divergent_continuations_conflict() {
    let ll = ["root.a", "root.b"];
    let a = Scenario::new("a", &ll, vec![Arrow::call("root.a", "root.b", "x"), Arrow::call("root.a", "root.b", "y")]);
    let b = Scenario::new("b", &ll, vec![Arrow::call("root.a", "root.b", "x"), Arrow::call("root.a", "root.b", "z")]);
    let c = detect_conflicts(&package(vec![(a, Priority::Extra), (b, Priority::Extra)]));
    assert_eq!(c.len(), 1);
    assert_eq!((c[0].first.as_str(), c[0].second.as_str()), ("a", "b"));
    assert_eq!(c[0].shared_prefix, [Arrow::call("root.a", "root.b", "x")]);
    assert_eq!((c[0].next.0.name.as_str(), c[0].next.1.name.as_str()), ("y", "z"));
}

#[test]
fn divergence_without_shared_prefix_is_not_flagged() {
    let ll = ["root.a", "root.b"];
    let a = Scenario::new("a", &ll, vec![Arrow::call("root.a", "root.b", "y")]);
    let b = Scenario::new("b", &ll, vec![Arrow::call("root.a", "root.b", "z")]);
    assert!(detect_conflicts(&package(vec![(a, Priority::Extra), (b, Priority::Extra)])).is_empty());
}

const PING: &str = "model P {
  protocol Cmd { message ping(); message boom(d: int); }
  actor Echo {
    provides cmd: Cmd;
    attr n: int = 1;
    deadline 2;
    machine {
      states idle, hit;
      initial idle;
      idle -> hit on ping;
      hit -> idle on ping;
      idle -> idle on boom / { n := n / d; };
    }
  }
  actor Root { part e: Echo; provides cmd: Cmd; connect self.cmd -- e.cmd; }
  root Root }";

#[test]
fn rehearsal_orders_by_priority_and_isolates_failures() {
    let tree = instantiate(&parse(PING).unwrap()).unwrap();
    let ll = ["env", "root.e"];
    let ok = Scenario::new("ok", &ll, vec![Arrow::msg("env", "root.e", "ping")]);
    let wrong = Scenario::new("wrong", &ll, vec![Arrow::msg("env", "root.e", "boom")]);
    let crash = Scenario::new("crash", &ll, vec![Arrow::msg("env", "root.e", "boom")]);
    let pkg = package(vec![
        (ok.clone(), Priority::Extra),
        (wrong, Priority::Feasibility),
        (crash, Priority::Reuse),
        (Scenario { name: "ok2".into(), ..ok }, Priority::Feasibility),
    ]);
    let ping = vec![Stimulus::message(3, "root", "cmd", "ping", vec![])];
    let boom = vec![Stimulus::message(3, "root", "cmd", "boom", vec![json!(0)])];
    let stimuli = vec![ping.clone(), ping.clone(), boom, ping];
    let r = rehearse_package(&tree, &SimConfig::new(0.01, 0.1), &pkg, &stimuli);
    let names: Vec<_> = r.iter().map(|r| r.scenario.as_str()).collect();
    assert_eq!(names, ["wrong", "ok2", "crash", "ok"]);
    assert!(!r[0].passed());
    assert_eq!(r[0].verdict.as_ref().unwrap().divergence.as_ref().unwrap().reason, Reason::Missing);
    assert!(r[1].passed());
    assert!(r[2].error.as_deref().unwrap().contains("E_RUNTIME"));
    assert!(r[3].passed());
}

#[test]
fn rehearsal_reports_deadline_misses() {
    let tree = instantiate(&parse(PING).unwrap()).unwrap();
    let s = Scenario::new("late", &["env", "root.e"], vec![Arrow::msg("env", "root.e", "boom")]);
    let pkg = package(vec![(s, Priority::Reuse)]);
    let stim = vec![vec![Stimulus::message(1, "root", "cmd", "boom", vec![json!(1)])]];
    let r = rehearse_package(&tree, &SimConfig::new(0.01, 0.1), &pkg, &stim);
    // boom is handled by a self-transition, so it is answered at once
    assert!(r[0].passed(), "{r:?}");
    let s = Scenario::new("ignored", &["env", "root.e"], vec![]);
    let pkg = package(vec![(s, Priority::Reuse)]);
    // a second ping is never ignored, but a ping in state hit goes back to idle;
    // nothing answers a message the machine has no transition for
    let tree2 = instantiate(&parse(&PING.replace("hit -> idle on ping;", "")).unwrap()).unwrap();
    let stim = vec![vec![
        Stimulus::message(1, "root", "cmd", "ping", vec![]),
        Stimulus::message(2, "root", "cmd", "ping", vec![]),
    ]];
    let r = rehearse_package(&tree2, &SimConfig::new(0.01, 0.1), &pkg, &stim);
    let t = r[0].timeliness.as_ref().unwrap();
    assert_eq!(t.violations.len(), 1);
    assert_eq!((t.violations[0].trigger_tick, t.violations[0].answered), (2, false));
    assert!(!r[0].passed());
}

fn arb_trace() -> impl Strategy<Value = Trace> {
    let names = ["x", "y", "z"];
    let ends = ["env", "root.a", "root.b", "root.c"];
    prop::collection::vec((0u64..3, 0usize..4, 1usize..4, 0usize..3, any::<bool>()), 0..40).prop_map(move |raw| {
        let mut tick = 0;
        let events = raw
            .into_iter()
            .map(|(dt, s, d, n, msg)| {
                tick += dt;
                let kind = if msg { EventKind::MsgSend } else { EventKind::Call };
                ev(tick, kind, ends[s], ends[d], names[n])
            })
            .collect();
        trace(events)
    })
}

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    let names = ["x", "y", "z"];
    let ends = ["env", "root.a", "root.b", "root.c"];
    (
        prop::collection::vec((0usize..4, 1usize..4, 0usize..3, any::<bool>(), prop::option::of((0u64..3, 0u64..3))), 0..5),
        any::<bool>(),
    )
        .prop_map(move |(raw, strict)| {
            let arrows = raw
                .into_iter()
                .map(|(s, d, n, msg, w)| {
                    let a = if msg { Arrow::msg(ends[s], ends[d], names[n]) } else { Arrow::call(ends[s], ends[d], names[n]) };
                    match w {
                        Some((lo, span)) => a.within(lo, lo + span),
                        None => a,
                    }
                })
                .collect();
            Scenario { strict, ..abc(arrows) }
        })
}

proptest! {
    #[test]
    fn strict_pass_implies_loose_pass(t in arb_trace(), s in arb_scenario()) {
        let strict = Scenario { strict: true, ..s.clone() };
        let loose = Scenario { strict: false, ..s };
        if check_conformance(&t, &strict).unwrap().pass {
            prop_assert!(check_conformance(&t, &loose).unwrap().pass);
        }
    }

    #[test]
    fn verdict_is_consistent(t in arb_trace(), s in arb_scenario()) {
        let v = check_conformance(&t, &s).unwrap();
        prop_assert_eq!(v.pass, v.divergence.is_none() && v.matched == s.arrows.len());
        prop_assert_eq!(v.positions.len(), v.matched);
        prop_assert!(v.positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&v, &check_conformance(&t, &s).unwrap());
    }

    #[test]
    fn passing_prefix_still_passes(t in arb_trace(), s in arb_scenario()) {
        let v = check_conformance(&t, &s).unwrap();
        if v.pass {
            let end = v.positions.last().map_or(0, |p| p + 1);
            let cut = Trace { header: t.header.clone(), events: t.events[..end].to_vec() };
            prop_assert!(check_conformance(&cut, &s).unwrap().pass);
        }
    }

    #[test]
    fn a_trace_built_from_the_scenario_passes(s in arb_scenario()) {
        let mut tick = 0;
        let events = s.arrows.iter().map(|a| {
            tick += a.window.map_or(0, |w| w[0]);
            let kind = if a.kind == broom_core::scenario::ArrowKind::Msg { EventKind::MsgSend } else { EventKind::Call };
            ev(tick, kind, &a.from, &a.to, &a.name)
        }).collect();
        let v = check_conformance(&trace(events), &s).unwrap();
        prop_assert!(v.pass, "{:?}", v);
    }
}
