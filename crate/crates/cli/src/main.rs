//! `broom`: validate, simulate, rehearse, generate C and serve BROOM models.
//!
//! Exit codes: 0 success, 1 model diagnostics, 2 rehearsal or timeliness
//! failure, 3 runtime error during simulation, 4 I/O or argument error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use broom_core::codegen::{self, CodegenConfig, E_UNSUPPORTED};
use broom_core::dsl::{parse_bytes, render};
use broom_core::model::{instantiate, validate, InstanceTree, ModelUnit};
use broom_core::scenario::{rehearse, ScenarioPackage};
use broom_core::sim::{parse_stimuli, run, SimConfig, Stimulus, TraceValue};
use broom_core::Diagnostic;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

const OK: u8 = 0;
const DIAGNOSTICS: u8 = 1;
const REHEARSAL: u8 = 2;
const RUNTIME: u8 = 3;
const IO: u8 = 4;

#[derive(Parser)]
#[command(name = "broom", version, about = "Actor models with state machines and control blocks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a model; diagnostics go to stderr.
    Validate { model: PathBuf },
    /// Simulate and write the NDJSON trace.
    Sim {
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Stimulus script (JSON list).
        #[arg(long)]
        stimuli: Option<PathBuf>,
        /// Trace file; stdout when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        snapshot_every: u64,
    },
    /// Run every scenario of a package and check the traces.
    Rehearse {
        model: PathBuf,
        #[arg(long)]
        package: PathBuf,
        /// JSON report; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Step size when the package does not set one.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
    },
    /// Generate C sources.
    Codegen {
        model: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Also emit trace_shim.c, a main that prints the trace.
        #[arg(long)]
        trace_shim: bool,
        #[command(flatten)]
        run: RunArgs,
        /// Stimulus script baked into the shim.
        #[arg(long)]
        stimuli: Option<PathBuf>,
    },
    /// Run the model live at ws://HOST:PORT/experiment.
    Serve {
        model: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Wall-clock speed multiplier.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Start paused.
        #[arg(long)]
        paused: bool,
    },
    /// Print the canonical form of a model.
    Fmt {
        model: PathBuf,
        /// Rewrite the file in place.
        #[arg(long)]
        write: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Simulated seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Seconds per tick.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

/// A failed command: exit code plus what to tell the user.
struct Failure(u8, Vec<String>);

type Res<T> = Result<T, Failure>;

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure(IO, vec![format!("{}: {e}", path.display())])
}

fn diag_fail(path: &Path, diags: &[Diagnostic]) -> Failure {
    let file = path.display().to_string();
    Failure(DIAGNOSTICS, diags.iter().map(|d| d.render(&file)).collect())
}

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|e| io_fail(path, e))
}

fn parse_model(path: &Path) -> Res<ModelUnit> {
    let model = parse_bytes(&read(path)?).map_err(|d| diag_fail(path, &d))?;
    let diags = validate(&model);
    if !diags.is_empty() {
        return Err(diag_fail(path, &diags));
    }
    Ok(model)
}

fn load(path: &Path) -> Res<InstanceTree> {
    let model = parse_model(path)?;
    instantiate(&model).map_err(|d| diag_fail(path, &d))
}

fn stimuli(path: Option<&Path>) -> Res<Vec<Stimulus>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = String::from_utf8(read(path)?).map_err(|e| io_fail(path, e))?;
    parse_stimuli(&text).map_err(|e| io_fail(path, e))
}

fn config(r: &RunArgs, snapshot_every: u64) -> Res<SimConfig> {
    let c = SimConfig { dt: r.dt, duration: r.duration, snapshot_every, ..SimConfig::default() };
    c.check().map_err(|e| Failure(IO, vec![e.to_string()]))?;
    Ok(c)
}

fn write_out(path: Option<&Path>, text: &str) -> Res<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_fail(p, e)),
        None => io::stdout().lock().write_all(text.as_bytes()).map_err(|e| Failure(IO, vec![format!("stdout: {e}")])),
    }
}

fn sim(model: &Path, r: &RunArgs, stim: Option<&Path>, trace: Option<&Path>, every: u64) -> Res<u8> {
    let tree = load(model)?;
    let config = config(r, every)?;
    let stim = stimuli(stim)?;
    let t = run(&tree, config, &stim).map_err(|e| Failure(IO, vec![e.to_string()]))?;
    write_out(trace, &t.to_ndjson())?;
    match t.runtime_error() {
        Some(e) => {
            let why = match e.payload.first() {
                Some(TraceValue::Str(s)) => s.as_str(),
                _ => "",
            };
            Err(Failure(RUNTIME, vec![format!("{} in {} at tick {}: {why}", e.name, e.src, e.tick)]))
        }
        None => Ok(OK),
    }
}

fn rehearse_cmd(model: &Path, package: &Path, report: Option<&Path>, dt: f64) -> Res<u8> {
    let tree = load(model)?;
    let pkg = ScenarioPackage::load(package).map_err(|e| io_fail(package, e))?;
    let config = SimConfig::new(pkg.dt.unwrap_or(dt), 0.0);
    let results = rehearse(&tree, &config, &pkg);
    let mut lines = Vec::new();
    let mut entries = Vec::new();
    for r in &results {
        let mut v = serde_json::to_value(r).unwrap_or_default();
        let scenario = pkg.scenarios.iter().find(|s| s.scenario.name == r.scenario).map(|s| &s.scenario);
        let divergence = r.verdict.as_ref().and_then(|v| v.divergence.as_ref());
        let status = if r.passed() { "pass" } else { "FAIL" };
        let mut line = format!("{status} {} [{}]", r.scenario, r.priority.as_str());
        if let (Some(d), Some(s)) = (divergence, scenario) {
            if let Some(a) = s.arrows.get(d.arrow) {
                v["divergent_arrow"] = serde_json::to_value(a).unwrap_or_default();
                line += &format!(": arrow {} {} -> {} {} is {}", d.arrow, a.from, a.to, a.name, d.reason);
            }
        }
        if let Some(t) = &r.timeliness {
            for x in &t.violations {
                line += &format!("; {} missed its {}-tick deadline after {} at tick {}", x.instance, x.deadline_ticks, x.trigger, x.trigger_tick);
            }
        }
        if let Some(e) = &r.error {
            line += &format!("; {e}");
        }
        lines.push(line);
        entries.push(v);
    }
    let passed = results.iter().all(|r| r.passed());
    let doc = json!({ "package": pkg.name, "passed": passed, "scenarios": entries });
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default() + "\n";
    write_out(report, &text)?;
    for l in &lines {
        eprintln!("{l}");
    }
    Ok(if passed { OK } else { REHEARSAL })
}

fn codegen_cmd(model: &Path, out: &Path, shim: bool, r: &RunArgs, stim: Option<&Path>) -> Res<u8> {
    let tree = load(model)?;
    let config = config(r, 1)?;
    let cg = CodegenConfig { emit_trace: shim, out_dir: out.to_path_buf(), stimuli: stimuli(stim)? };
    let fail = |e: codegen::CodegenError| {
        let code = if e.code == E_UNSUPPORTED { DIAGNOSTICS } else { IO };
        Failure(code, vec![format!("{} {}", e.code, e.message)])
    };
    let prog = codegen::flatten(&tree, config).map_err(fail)?;
    codegen::emit(&prog, &cg).map_err(fail)?;
    Ok(OK)
}

fn serve_cmd(model: &Path, host: &str, port: u16, speed: f64, dt: f64, paused: bool) -> Res<u8> {
    let tree = load(model)?;
    if !(speed.is_finite() && speed > 0.0) {
        return Err(Failure(IO, vec!["--speed must be a positive number".into()]));
    }
    let config = SimConfig::new(dt, 0.0);
    config.check().map_err(|e| Failure(IO, vec![e.to_string()]))?;
    let mut session = broom_server::Session::new(tree, config).map_err(|e| Failure(IO, vec![e.to_string()]))?;
    session.set_paused(paused);
    let speed_cmd = broom_server::request(broom_server::Command::SetSpeed { speed });
    session.apply(speed_cmd);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure(IO, vec![e.to_string()]))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(|e| Failure(IO, vec![format!("{host}:{port}: {e}")]))?;
        let addr = listener.local_addr().map_err(|e| Failure(IO, vec![e.to_string()]))?;
        eprintln!("serving ws://{addr}{}", broom_server::PATH);
        broom_server::serve(session, listener).await.map_err(|e| Failure(IO, vec![e.to_string()]))
    })?;
    Ok(OK)
}

fn fmt_cmd(model: &Path, write: bool) -> Res<u8> {
    let unit = parse_bytes(&read(model)?).map_err(|d| diag_fail(model, &d))?;
    let text = render(&unit);
    if write {
        fs::write(model, text).map_err(|e| io_fail(model, e))?;
    } else {
        write_out(None, &text)?;
    }
    Ok(OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(IO);
        }
    };
    let result = match &cli.command {
        Cmd::Validate { model } => parse_model(model).and_then(|m| instantiate(&m).map_err(|d| diag_fail(model, &d))).map(|_| OK),
        Cmd::Sim { model, run, stimuli, trace, snapshot_every } => {
            sim(model, run, stimuli.as_deref(), trace.as_deref(), *snapshot_every)
        }
        Cmd::Rehearse { model, package, report, dt } => rehearse_cmd(model, package, report.as_deref(), *dt),
        Cmd::Codegen { model, out, trace_shim, run, stimuli } => codegen_cmd(model, out, *trace_shim, run, stimuli.as_deref()),
        Cmd::Serve { model, port, host, speed, dt, paused } => serve_cmd(model, host, *port, *speed, *dt, *paused),
        Cmd::Fmt { model, write } => fmt_cmd(model, *write),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, lines)) => {
            let mut err = io::stderr().lock();
            for l in lines {
                let _ = writeln!(err, "{l}");
            }
            ExitCode::from(code)
        }
    }
}
