//! One line per acceptance criterion. Run with
//! `cargo test -p broom-core --test acceptance`.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use broom_core::dsl::{parse, render};
use broom_core::fixture::load_fixture;
use broom_core::model::{instantiate, validate, InstanceTree};
use broom_core::scenario::{check_conformance, rehearse, Priority, Reason};
use broom_core::sim::{check_timeliness, run, EventKind, SimConfig, Stimulus, Trace, Violation};
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tree(src: &str) -> Result<InstanceTree, String> {
    let unit = parse(src).map_err(|d| format!("{d:?}"))?;
    instantiate(&unit).map_err(|d| format!("{d:?}"))
}

/// `out` samples of one instance as (tick, value).
fn outs(trace: &Trace, path: &str) -> Vec<(u64, f64)> {
    trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Sample && e.src == path && e.name == "out")
        .filter_map(|e| Some((e.tick, e.payload[0].as_real()?)))
        .collect()
}

fn pt1_fidelity() -> Outcome {
    let (k, t, u): (f64, f64, f64) = (2.5, 1.5, 4.0);
    let src = format!(
        "model S {{ actor Lag {{ attr u: real = {u:?}; block pt1({k:?}, {t:?}) <- u; }}
          actor Root {{ part lag: Lag; }} root Root }}"
    );
    let dt = t / 1000.0;
    let trace = run(&tree(&src)?, SimConfig::new(dt, 3.0 * t), &[]).map_err(|e| e.to_string())?;
    let y = outs(&trace, "root.lag");
    let mut worst: f64 = 0.0;
    for n in [1000, 3000] {
        let (tick, sim) = y[n];
        let time = tick as f64 * dt;
        let exact = k * u * (1.0 - (-time / t).exp());
        let rel = (sim - exact).abs() / exact;
        ensure(rel < 1e-3, || format!("t = {time}: {sim} vs {exact}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("worst relative error {worst:.2e} at t = T, 3T"))
}

fn pt2_fidelity() -> Outcome {
    let (k1, t1, k2, t2, u): (f64, f64, f64, f64, f64) = (1.5, 2.0, 0.8, 0.5, 3.0);
    let src = format!(
        "model C {{
          protocol Signal {{ method value(): real; }}
          actor First {{ provides y: Signal; attr u: real = {u:?};
            method value(): real {{ return out; }}
            block pt1({k1:?}, {t1:?}) <- u; }}
          actor Second {{ requires x: Signal;
            block pt1({k2:?}, {t2:?}) <- x.value(); }}
          actor Root {{ part a: First; part b: Second; connect b.x -- a.y; }}
          root Root }}"
    );
    let dt = t1.min(t2) / 1000.0;
    let horizon = 5.0 * t1.max(t2);
    let trace = run(&tree(&src)?, SimConfig::new(dt, horizon), &[]).map_err(|e| e.to_string())?;
    let gain = k1 * k2 * u;
    let mut worst: f64 = 0.0;
    for (tick, y) in outs(&trace, "root.b") {
        let time = tick as f64 * dt;
        let exact = gain * (1.0 - (t1 * (-time / t1).exp() - t2 * (-time / t2).exp()) / (t1 - t2));
        worst = worst.max((y - exact).abs() / gain);
    }
    ensure(worst < 5e-3, || format!("worst error {worst:.3e} of the final value"))?;
    Ok(format!("worst error {:.3}% of the final value over [0, {horizon} s]", worst * 100.0))
}

fn regulation() -> Outcome {
    let f = load_fixture();
    let inside = |trace: &Trace| outs(trace, "root.inside");
    let steady = run(&f.tree, SimConfig::new(0.01, 120.0), &[]).map_err(|e| e.to_string())?;
    let s = inside(&steady);
    let settled = s.iter().filter(|(t, _)| *t >= 6000).map(|(_, y)| (y - 22.0).abs()).fold(0.0, f64::max);
    ensure(settled < 0.1, || format!("steady error {settled}"))?;
    ensure(s[100].1 < 5.0, || "the cabin did not start cold".into())?;

    let stim = [Stimulus::message(15000, "root", "weather", "window_open", vec![])];
    let dist = run(&f.tree, SimConfig::new(0.01, 250.0), &stim).map_err(|e| e.to_string())?;
    let after: Vec<(u64, f64)> = inside(&dist).into_iter().filter(|(t, _)| *t > 15000).collect();
    let dip = after.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    ensure(dip < 21.9 && dip > 20.0, || format!("excursion to {dip}"))?;
    let back = after.iter().filter(|(t, _)| *t >= 19000).map(|(_, y)| (y - 22.0).abs()).fold(0.0, f64::max);
    ensure(back < 0.1, || format!("error {back} after re-convergence"))?;
    Ok(format!("steady error {settled:.4} °C, window dip to {dip:.3} °C, back within {back:.4} °C"))
}

fn rehearsal() -> Outcome {
    let f = load_fixture();
    let s1 = &f.package.scenarios[0];
    ensure(s1.priority == Priority::Feasibility, || "S1 is not the feasibility scenario".into())?;
    let config = SimConfig::new(f.package.dt.unwrap_or(0.01), s1.duration.unwrap_or(10.0));
    let trace = run(&f.tree, config, &s1.stimuli).map_err(|e| e.to_string())?;
    let v = check_conformance(&trace, &s1.scenario).map_err(|e| e.to_string())?;
    ensure(v.pass, || format!("S1 fails: {v:?}"))?;
    let n = s1.scenario.arrows.len();

    for k in 0..n {
        let mut t = trace.clone();
        t.events.remove(v.positions[k]);
        let got = check_conformance(&t, &s1.scenario).map_err(|e| e.to_string())?;
        let d = got.divergence.ok_or_else(|| format!("deleting arrow {k} still passes"))?;
        ensure(d.arrow == k, || format!("deleting arrow {k} diverges at arrow {}", d.arrow))?;
    }
    // a loose chart matches arrow k late and then finds arrow k + 1 behind
    // it; a strict one already rejects the early event at arrow k, unless
    // that event comes before the first match, where strictness starts
    let mut loose = s1.scenario.clone();
    loose.strict = false;
    for k in 0..n - 1 {
        let mut t = trace.clone();
        t.events.swap(v.positions[k], v.positions[k + 1]);
        let strict = if k == 0 { (k + 1, Reason::OutOfOrder) } else { (k, Reason::ExtraEventInStrict) };
        for (scenario, (arrow, reason)) in [(&s1.scenario, strict), (&loose, (k + 1, Reason::OutOfOrder))] {
            let got = check_conformance(&t, scenario).map_err(|e| e.to_string())?;
            let d = got.divergence.ok_or_else(|| format!("swapping arrows {k} and {} still passes", k + 1))?;
            ensure(d.arrow == arrow && d.reason == reason, || {
                format!("swapping arrows {k} and {} (strict {}) gives {d:?}", k + 1, scenario.strict)
            })?;
        }
    }

    let results = rehearse(&f.tree, &SimConfig::default(), &f.package);
    ensure(results.len() == 5, || format!("{} rehearsals", results.len()))?;
    let order: Vec<Priority> = results.iter().map(|r| r.priority).collect();
    ensure(order == Priority::ALL, || format!("rehearsal order {order:?}"))?;
    if let Some(r) = results.iter().find(|r| !r.passed()) {
        return Err(format!("{} fails: {r:?}", r.scenario));
    }
    Ok(format!("S1 passes, {n} deletions and {} swaps caught at the right arrow, strict and loose, 5/5 in priority order", n - 1))
}

fn determinism() -> Outcome {
    let f = load_fixture();
    let dt = f.package.dt.unwrap_or(0.01);
    for s in &f.package.scenarios {
        let cfg = SimConfig::new(dt, s.duration.unwrap_or(10.0));
        let a = run(&f.tree, cfg, &s.stimuli).map_err(|e| e.to_string())?.to_ndjson();
        let b = run(&f.tree, cfg, &s.stimuli).map_err(|e| e.to_string())?.to_ndjson();
        ensure(a == b, || format!("{} differs between runs", s.scenario.name))?;
    }
    let cfg = SimConfig::new(0.01, 3.0);
    for seed in 0..100 {
        let g = common::random_model(seed, 300);
        let a = run(&tree(&g.source)?, cfg, &g.stimuli).map_err(|e| e.to_string())?.to_ndjson();
        let b = run(&tree(&g.source)?, cfg, &g.stimuli).map_err(|e| e.to_string())?.to_ndjson();
        ensure(a == b, || format!("random model {seed} differs between runs"))?;
    }
    Ok("5 fixture scenarios and 100 random models rerun byte-identical".into())
}

fn codegen_equivalence() -> Outcome {
    let f = load_fixture();
    let dt = f.package.dt.unwrap_or(0.01);
    let mut ticks = 0;
    for s in &f.package.scenarios {
        let cfg = SimConfig::new(dt, s.duration.unwrap_or(10.0));
        ensure(cfg.last_tick() >= 10_000, || format!("{} runs only {} ticks", s.scenario.name, cfg.last_tick()))?;
        let expected = run(&f.tree, cfg, &s.stimuli).map_err(|e| e.to_string())?.to_ndjson();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let got = common::c_trace(&f.tree, cfg, &s.stimuli, dir.path())?;
        if got != expected {
            let line = got.lines().zip(expected.lines()).position(|(a, b)| a != b);
            return Err(format!("{}: traces differ at line {line:?}", s.scenario.name));
        }
        ticks += cfg.last_tick() + 1;
    }
    Ok(format!("5 scripts, {ticks} ticks, bit-identical"))
}

fn validator() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/invalid");
    let codes =
        ["E_MULTI_INHERIT", "E_OVERRIDE", "E_CHAN_DANGLING", "E_PORT_INCOMPAT", "E_CONTAIN_CYCLE", "E_ALGEBRAIC_LOOP", "E_UNBOUND"];
    let mut covered = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(&dir).map_err(|e| e.to_string())?.filter_map(Result::ok).collect();
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        let src = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let head = src.lines().next().and_then(|l| l.strip_prefix("// expect: ")).ok_or("missing expect header")?;
        let mut want = head.split_whitespace();
        let code = want.next().ok_or("empty expect header")?;
        let want: Vec<String> = want.map(|l| format!("{code} {l}")).collect();
        let unit = parse(&src).map_err(|d| format!("{}: {d:?}", path.display()))?;
        let got: Vec<String> =
            validate(&unit).iter().map(|d| format!("{} {}:{}", d.code, d.span.line, d.span.column)).collect();
        ensure(got == want, || format!("{}: got {got:?}, want {want:?}", path.display()))?;
        covered.push(code.to_string());
    }
    for c in codes {
        ensure(covered.iter().any(|x| x == c), || format!("no fixture for {c}"))?;
    }
    Ok(format!("{} codes at their planted locations", codes.len()))
}

/// Workers with different deadlines. Each episode arms a timer for `n` ticks
/// at `a` and sends `req` at `a + 1`; only the timer transition answers it,
/// `n - 1` ticks later.
fn timeliness() -> Outcome {
    let deadlines = [3u64, 5, 8];
    let mut src = String::from("model D {\n  protocol Req { message arm(n: int); message req(); }\n");
    for d in deadlines {
        src += &format!(
            "  actor W{d} {{ provides p: Req; timer t; deadline {d};
    machine {{ states idle, armed, done; initial idle;
      idle -> armed on arm / {{ set t(n); }}; armed -> done on t; done -> idle on req; }} }}\n"
        );
    }
    src += "  actor Root {";
    for d in deadlines {
        src += &format!(" part w{d}: W{d};");
    }
    src += " }\n  root Root }";
    let t = tree(&src)?;

    let duration = 3.0;
    let last = 300;
    let mut stim = Vec::new();
    let mut planted = Vec::new();
    for d in deadlines {
        let target = format!("root.w{d}");
        let mut a = 2;
        for n in [2u64, 4, 5, 6, 7, 9, 12, 1000] {
            stim.push(Stimulus::message(a, &target, "p", "arm", vec![json!(n)]));
            stim.push(Stimulus::message(a + 1, &target, "p", "req", vec![]));
            let answered = a + n <= last;
            let actual = if answered { n - 1 } else { last - (a + 1) };
            if actual > d {
                planted.push((target.clone(), a + 1, actual, answered));
            }
            // back to idle
            stim.push(Stimulus::message(a + n + 1, &target, "p", "req", vec![]));
            a += n + 5;
        }
    }
    stim.retain(|s| s.at_tick <= last);
    let trace = run(&t, SimConfig::new(0.01, duration), &stim).map_err(|e| e.to_string())?;
    let report = check_timeliness(&trace, &t);
    let key = |v: &Violation| (v.instance.clone(), v.trigger_tick, v.actual_ticks, v.answered);
    let mut got: Vec<_> = report.violations.iter().map(key).collect();
    got.sort();
    planted.sort();
    ensure(got == planted, || format!("got {got:?}\nplanted {planted:?}"))?;
    ensure(report.violations.iter().all(|v| v.trigger == "req"), || "a violation not on req".into())?;
    Ok(format!("{} planted violations, {} reported", planted.len(), got.len()))
}

fn round_trip() -> Outcome {
    for seed in 0..500 {
        let g = common::random_model(seed, 100);
        let m = parse(&g.source).map_err(|d| format!("seed {seed}: {d:?}"))?;
        let text = render(&m);
        let back = parse(&text).map_err(|d| format!("seed {seed}: {d:?}"))?;
        ensure(back == m, || format!("seed {seed}: parse(render(m)) != m"))?;
        ensure(render(&back) == text, || format!("seed {seed}: rendering is not a fixed point"))?;
    }
    Ok("500 generated models".into())
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    // honor a name filter so `cargo test some_other_test` skips this target
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { name: "P-T1 analytic fidelity", budget: secs(1), check: pt1_fidelity },
        Criterion { name: "P-T2 chain fidelity", budget: secs(1), check: pt2_fidelity },
        Criterion { name: "closed-loop regulation", budget: secs(5), check: regulation },
        Criterion { name: "scenario rehearsal", budget: secs(5), check: rehearsal },
        Criterion { name: "determinism", budget: None, check: determinism },
        Criterion { name: "codegen equivalence", budget: secs(30), check: codegen_equivalence },
        Criterion { name: "validator suite", budget: None, check: validator },
        Criterion { name: "timeliness", budget: None, check: timeliness },
        Criterion { name: "DSL round-trip", budget: None, check: round_trip },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut outcome = (c.check)();
        let took = start.elapsed();
        if let (Ok(_), Some(b)) = (&outcome, c.budget) {
            if took > b {
                outcome = Err(format!("took {took:.2?}, budget {b:?}"));
            }
        }
        let budget = c.budget.map(|b| format!(" / {b:?}")).unwrap_or_default();
        match outcome {
            Ok(detail) => println!("PASS  {:<24} {:>9.2?}{budget:<6}  {detail}", c.name, took),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<24} {:>9.2?}{budget:<6}  {why}", c.name, took);
            }
        }
    }
    println!("\n{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
