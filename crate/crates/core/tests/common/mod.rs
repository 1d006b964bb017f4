//! Random well-formed models for the round-trip, determinism and codegen
//! suites. Every generated model validates; generation is a pure function of
//! the seed.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use broom_core::sim::Stimulus;

pub struct Generated {
    pub source: String,
    pub stimuli: Vec<Stimulus>,
    /// Instance paths of the leaf actors that take `Cmd` stimuli.
    pub targets: Vec<String>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, PartialEq)]
enum T {
    Int,
    Real,
    Bool,
    Enum,
}

/// Names in scope for expression generation.
struct Scope {
    ints: Vec<String>,
    reals: Vec<String>,
    bools: Vec<String>,
    enums: Vec<String>,
    /// Calls that yield a real, e.g. `d.get()`.
    real_calls: Vec<String>,
    variants: Vec<String>,
}

fn int_lit(r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..20) {
        0 => i64::MAX.to_string(),
        1 => i64::MIN.to_string(),
        2..=5 => r.gen_range(-1000i64..1000).to_string(),
        _ => r.gen_range(0i64..10).to_string(),
    }
}

fn real_lit(r: &mut ChaCha8Rng) -> String {
    let v: f64 = match r.gen_range(0..10) {
        0 => r.gen::<f64>() * 10f64.powi(r.gen_range(-12..12)),
        1 => -r.gen::<f64>() * 1e6,
        2 => (r.gen_range(-40i32..40) as f64) * 0.25,
        _ => r.gen_range(0.0..4.0),
    };
    format!("{v:?}")
}

impl Scope {
    fn pick(&self, r: &mut ChaCha8Rng, names: &[String]) -> Option<String> {
        names.choose(r).cloned()
    }

    fn expr(&self, r: &mut ChaCha8Rng, ty: T, depth: u32) -> String {
        let leaf = depth == 0 || r.gen_bool(0.35);
        match ty {
            T::Int => {
                if leaf {
                    return match self.pick(r, &self.ints) {
                        Some(n) if r.gen_bool(0.6) => n,
                        _ => int_lit(r),
                    };
                }
                match r.gen_range(0..5) {
                    0 => format!("-({})", self.expr(r, T::Int, depth - 1)),
                    // divisors are non-zero literals
                    1 => format!("({}) / {}", self.expr(r, T::Int, depth - 1), r.gen_range(1..9)),
                    _ => {
                        let op = ["+", "-", "*"].choose(r).unwrap();
                        format!("({}) {op} ({})", self.expr(r, T::Int, depth - 1), self.expr(r, T::Int, depth - 1))
                    }
                }
            }
            T::Real => {
                if leaf {
                    if r.gen_bool(0.15) {
                        if let Some(c) = self.pick(r, &self.real_calls) {
                            return c;
                        }
                    }
                    return match self.pick(r, &self.reals) {
                        Some(n) if r.gen_bool(0.6) => n,
                        _ => real_lit(r),
                    };
                }
                match r.gen_range(0..6) {
                    0 => format!("-({})", self.expr(r, T::Real, depth - 1)),
                    1 => format!("({}) / {}", self.expr(r, T::Real, depth - 1), ["2.0", "0.5", "3.0", "-4.0"].choose(r).unwrap()),
                    // mixed arithmetic promotes the int side
                    2 => format!("({}) * ({})", self.expr(r, T::Real, depth - 1), self.expr(r, T::Int, depth - 1)),
                    _ => {
                        let op = ["+", "-", "*"].choose(r).unwrap();
                        format!("({}) {op} ({})", self.expr(r, T::Real, depth - 1), self.expr(r, T::Real, depth - 1))
                    }
                }
            }
            T::Bool => {
                if leaf {
                    return match self.pick(r, &self.bools) {
                        Some(n) if r.gen_bool(0.6) => n,
                        _ => ["true", "false"].choose(r).unwrap().to_string(),
                    };
                }
                match r.gen_range(0..6) {
                    0 => format!("!({})", self.expr(r, T::Bool, depth - 1)),
                    1 => {
                        let op = ["&&", "||"].choose(r).unwrap();
                        format!("({}) {op} ({})", self.expr(r, T::Bool, depth - 1), self.expr(r, T::Bool, depth - 1))
                    }
                    2 => {
                        let op = ["==", "!="].choose(r).unwrap();
                        format!("{} {op} {}", self.expr(r, T::Enum, 0), self.expr(r, T::Enum, 0))
                    }
                    3 => {
                        let op = ["<", "<=", ">", ">=", "==", "!="].choose(r).unwrap();
                        format!("({}) {op} ({})", self.expr(r, T::Real, depth - 1), self.expr(r, T::Int, depth - 1))
                    }
                    _ => {
                        let op = ["<", "<=", ">", ">=", "==", "!="].choose(r).unwrap();
                        format!("({}) {op} ({})", self.expr(r, T::Int, depth - 1), self.expr(r, T::Int, depth - 1))
                    }
                }
            }
            T::Enum => match self.pick(r, &self.enums) {
                Some(n) if r.gen_bool(0.5) => n,
                _ => self.variants.choose(r).unwrap().clone(),
            },
        }
    }
}

struct Leaf {
    name: String,
    /// Has a `requires peer: Cmd` port that must be wired.
    has_peer: bool,
}

fn leaf_class(r: &mut ChaCha8Rng, name: &str, variants: &[String], out: &mut String) -> Leaf {
    let has_peer = r.gen_bool(0.7);
    let mut s = format!("  actor {name} {{\n    provides cmd: Cmd;\n");
    if has_peer {
        s.push_str("    requires peer: Cmd;\n");
    }
    let tun = |r: &mut ChaCha8Rng| if r.gen_bool(0.3) { "tunable " } else { "" };
    s.push_str(&format!("    {}attr i: int = {};\n", tun(r), int_lit(r)));
    s.push_str(&format!("    {}attr x: real = {};\n", tun(r), real_lit(r)));
    s.push_str(&format!("    attr flag: bool = {};\n", r.gen_bool(0.5)));
    s.push_str(&format!("    attr mode: Mode = {};\n", variants.choose(r).unwrap()));
    s.push_str("    attr log: Log;\n    timer t;\n");
    if r.gen_bool(0.5) {
        s.push_str(&format!("    deadline {};\n", r.gen_range(1..4)));
    }
    let base = Scope {
        ints: vec!["i".into(), "log.count".into()],
        reals: vec!["x".into(), "log.sum".into()],
        bools: vec!["flag".into()],
        enums: vec!["mode".into()],
        real_calls: vec!["log.mean()".into()],
        variants: variants.to_vec(),
    };
    // q(v) answers synchronously
    s.push_str(&format!(
        "    method q(v: real): real {{\n      x := {};\n      return {};\n    }}\n",
        with_real_param(&base, "v").expr(r, T::Real, 2),
        with_real_param(&base, "v").expr(r, T::Real, 2),
    ));
    let nstates = r.gen_range(1..4);
    let states: Vec<String> = (0..nstates).map(|k| format!("s{k}")).collect();
    s.push_str(&format!("    machine {{\n      states {};\n      initial s0;\n", states.join(", ")));
    let mut on_ping = with_real_param(&base, "__none");
    on_ping.ints.push("n".into());
    for _ in 0..r.gen_range(1..7) {
        let from = states.choose(r).unwrap();
        let to = states.choose(r).unwrap();
        let trig = ["ping", "tick", "t", "t", "q"].choose(r).unwrap();
        let scope = if *trig == "ping" { &on_ping } else { &base };
        let guard = if r.gen_bool(0.4) { format!(" if {}", scope.expr(r, T::Bool, 2)) } else { String::new() };
        let mut acts = Vec::new();
        for _ in 0..r.gen_range(0..4) {
            acts.push(statement(r, scope, *trig == "t" && has_peer));
        }
        if *trig != "q" && r.gen_bool(0.5) {
            acts.push(format!("set t({});", r.gen_range(1..6)));
        }
        if acts.is_empty() {
            s.push_str(&format!("      {from} -> {to} on {trig}{guard};\n"));
        } else {
            s.push_str(&format!("      {from} -> {to} on {trig}{guard} / {{ {} }};\n", acts.join(" ")));
        }
    }
    s.push_str("    }\n  }\n\n");
    out.push_str(&s);
    Leaf { name: name.into(), has_peer }
}

fn with_real_param(base: &Scope, p: &str) -> Scope {
    let mut reals = base.reals.clone();
    if p != "__none" {
        reals.push(p.into());
    }
    Scope {
        ints: base.ints.clone(),
        reals,
        bools: base.bools.clone(),
        enums: base.enums.clone(),
        real_calls: base.real_calls.clone(),
        variants: base.variants.clone(),
    }
}

/// One action statement. Only timer-triggered transitions talk to the peer,
/// which keeps message traffic bounded.
fn statement(r: &mut ChaCha8Rng, scope: &Scope, may_send: bool) -> String {
    let choice = r.gen_range(0..if may_send { 9 } else { 6 });
    match choice {
        0 | 1 => format!("i := {};", scope.expr(r, T::Int, 3)),
        2 => format!("x := {};", scope.expr(r, T::Real, 3)),
        3 => format!("flag := {};", scope.expr(r, T::Bool, 2)),
        4 => format!("mode := {};", scope.expr(r, T::Enum, 0)),
        5 => format!("log.add({});", scope.expr(r, T::Real, 2)),
        6 => format!("send peer.ping({});", scope.expr(r, T::Int, 2)),
        7 => "send peer.tick();".to_string(),
        _ => format!("x := peer.q({});", scope.expr(r, T::Real, 2)),
    }
}

fn plant_class(r: &mut ChaCha8Rng, name: &str, out: &mut String) {
    let block = match r.gen_range(0..3) {
        0 => format!("pt1({}, {})", real_lit_pos(r), real_lit_pos(r)),
        1 => {
            let lo = -r.gen_range(1.0..50.0f64);
            let hi = r.gen_range(1.0..50.0f64);
            format!("pi({}, {}, {lo:?}, {hi:?})", real_lit_pos(r), real_lit_pos(r))
        }
        _ => {
            let lo = -r.gen_range(0.5..5.0f64);
            let hi = r.gen_range(0.5..5.0f64);
            format!("limiter({lo:?}, {hi:?})")
        }
    };
    out.push_str(&format!(
        "  actor {name} {{\n    provides sig: Sig;\n    requires src: Sig;\n    tunable attr k: real = {};\n    method value(): real {{\n      return out;\n    }}\n    block {block} <- k * src.value() + {};\n  }}\n\n",
        real_lit_pos(r),
        real_lit(r),
    ));
}

fn real_lit_pos(r: &mut ChaCha8Rng) -> String {
    format!("{:?}", r.gen_range(0.05..3.0f64))
}

/// Generate a valid model with stimuli for `ticks` ticks.
pub fn random_model(seed: u64, ticks: u64) -> Generated {
    let mut r = rng(seed);
    let r = &mut r;
    let nvar = r.gen_range(2..5);
    let variants: Vec<String> = (0..nvar).map(|k| format!("Mode.V{k}")).collect();
    let mut s = format!("model Gen{seed} {{\n");
    s.push_str(&format!(
        "  enum Mode {{ {} }}\n\n",
        (0..nvar).map(|k| format!("V{k}")).collect::<Vec<_>>().join(", ")
    ));
    s.push_str("  protocol Cmd {\n    message ping(n: int);\n    message tick();\n    method q(v: real): real;\n  }\n\n");
    s.push_str("  protocol Sig {\n    method value(): real;\n  }\n\n");
    s.push_str(
        "  data Log {\n    attr count: int;\n    attr sum: real;\n    method add(v: real) {\n      count := count + 1;\n      sum := sum + v;\n    }\n    method mean(): real {\n      return sum / 2.0;\n    }\n  }\n\n",
    );
    s.push_str(&format!(
        "  actor Source {{\n    provides sig: Sig;\n    tunable attr level: real = {};\n    method value(): real {{\n      return level;\n    }}\n  }}\n\n",
        real_lit(r)
    ));

    let nleaf = r.gen_range(1..4);
    let mut leaves = Vec::new();
    for k in 0..nleaf {
        leaves.push(leaf_class(r, &format!("Leaf{k}"), &variants, &mut s));
    }
    // a subclass adds members to a leaf
    let sub = r.gen_bool(0.5);
    if sub {
        let parent = &leaves[0].name;
        s.push_str(&format!(
            "  actor Sub : {parent} {{\n    attr extra: int = {};\n    method bump(): int {{\n      return extra + i;\n    }}\n  }}\n\n",
            int_lit(r)
        ));
    }
    let nplant = r.gen_range(0..4);
    for k in 0..nplant {
        plant_class(r, &format!("Plant{k}"), &mut s);
    }

    // parts of the root: leaves in a ring, plants in a chain fed by a source
    let mut parts: Vec<(String, String, bool)> = Vec::new();
    for k in 0..r.gen_range(1..5) {
        let pick = r.gen_range(0..leaves.len() + usize::from(sub));
        let (class, peer) = if pick == leaves.len() {
            ("Sub".to_string(), leaves[0].has_peer)
        } else {
            (leaves[pick].name.clone(), leaves[pick].has_peer)
        };
        parts.push((format!("a{k}"), class, peer));
    }
    // optionally wrap the first leaf in a container with a relay
    let boxed = r.gen_bool(0.4);
    if boxed {
        let (_, class, peer) = &parts[0];
        let mut b = format!("  actor Box {{\n    provides cmd: Cmd;\n    part inner: {class};\n    connect self.cmd -- inner.cmd;\n");
        if *peer {
            b.push_str("    requires peer: Cmd;\n    connect inner.peer -- self.peer;\n");
        }
        b.push_str("  }\n\n");
        s.push_str(&b);
        parts[0].1 = "Box".into();
    }
    s.push_str("  actor Top {\n    provides cmd: Cmd;\n");
    for (n, c, _) in &parts {
        s.push_str(&format!("    part {n}: {c};\n"));
    }
    s.push_str("    part source: Source;\n");
    for k in 0..nplant {
        s.push_str(&format!("    part p{k}: Plant{k};\n"));
    }
    s.push_str("    connect self.cmd -- a0.cmd;\n");
    let np = parts.len();
    for (k, (n, _, peer)) in parts.iter().enumerate() {
        if *peer {
            let next = &parts[(k + 1) % np].0;
            s.push_str(&format!("    connect {n}.peer -- {next}.cmd;\n"));
        }
    }
    for k in 0..nplant {
        let feed = if k == 0 { "source".to_string() } else { format!("p{}", k - 1) };
        s.push_str(&format!("    connect p{k}.src -- {feed}.sig;\n"));
    }
    s.push_str("  }\n\n  root Top\n}\n");

    // stimuli against the leaves' provided ports
    let targets: Vec<String> = parts.iter().map(|(n, _, _)| format!("root.{n}")).collect();
    let mut stimuli = Vec::new();
    for _ in 0..r.gen_range(0..12) {
        let at = r.gen_range(0..ticks.max(1));
        let target = targets.choose(r).unwrap().clone();
        let st = match r.gen_range(0..3) {
            0 => Stimulus::message(at, &target, "cmd", "ping", vec![json!(r.gen_range(-5i64..50))]),
            1 => Stimulus::message(at, &target, "cmd", "tick", vec![]),
            _ => Stimulus::method(at, &target, "cmd", "q", vec![json!(r.gen_range(-2.0..2.0f64))]),
        };
        stimuli.push(st);
    }
    if r.gen_bool(0.5) {
        stimuli.push(Stimulus::message(0, "root", "cmd", "tick", vec![]));
    }
    stimuli.sort_by_key(|s| s.at_tick);
    Generated { source: s, stimuli, targets }
}

/// Emit C for `tree`, compile it with strict C89 and run the trace shim.
/// Returns the printed trace. Any compiler warning is an error.
pub fn c_trace(
    tree: &broom_core::model::InstanceTree,
    config: broom_core::sim::SimConfig,
    stimuli: &[Stimulus],
    dir: &std::path::Path,
) -> Result<String, String> {
    use broom_core::codegen::{emit, flatten, CodegenConfig};
    use std::process::Command;

    let flat = flatten(tree, config).map_err(|e| format!("{} {}", e.code, e.message))?;
    let cfg = CodegenConfig { emit_trace: true, out_dir: dir.to_path_buf(), stimuli: stimuli.to_vec() };
    emit(&flat, &cfg).map_err(|e| format!("{} {}", e.code, e.message))?;
    let exe = dir.join("model_trace");
    let out = Command::new("gcc")
        .args(["-std=c89", "-pedantic", "-Wall", "-Wextra", "-Wno-tautological-compare", "-O2", "-ffp-contract=off", "-o"])
        .arg(&exe)
        .arg(dir.join("model.c"))
        .arg(dir.join("trace_shim.c"))
        .output()
        .map_err(|e| format!("gcc: {e}"))?;
    let diag = String::from_utf8_lossy(&out.stderr);
    if !out.status.success() {
        return Err(format!("gcc failed:\n{diag}"));
    }
    if !diag.trim().is_empty() {
        return Err(format!("gcc warnings:\n{diag}"));
    }
    let run = Command::new(&exe).output().map_err(|e| format!("{}: {e}", exe.display()))?;
    if !run.status.success() {
        return Err(format!("{} exited with {}", exe.display(), run.status));
    }
    String::from_utf8(run.stdout).map_err(|e| e.to_string())
}
