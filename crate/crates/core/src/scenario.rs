//! Message sequence charts and trace conformance.
//!
//! A scenario lists lifelines and the arrows between them in chart order.
//! A trace conforms when the arrows embed, in order, into the trace's
//! `call` and `msg_send` events.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::InstanceTree;
use crate::sim::{self, check_timeliness, EventKind, SimConfig, Stimulus, TimelinessReport, Trace, TraceEvent};

pub const ENV: &str = "env";
pub const E_LIFELINE: &str = "E_LIFELINE";
pub const E_SCENARIO: &str = "E_SCENARIO";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrowKind {
    Call,
    Msg,
}

impl ArrowKind {
    fn matches(self, kind: EventKind) -> bool {
        matches!((self, kind), (ArrowKind::Call, EventKind::Call) | (ArrowKind::Msg, EventKind::MsgSend))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arrow {
    pub from: String,
    pub to: String,
    pub name: String,
    pub kind: ArrowKind,
    /// Allowed distance in ticks from the previously matched arrow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[u64; 2]>,
}

impl Arrow {
    pub fn call(from: &str, to: &str, name: &str) -> Self {
        Self { from: from.into(), to: to.into(), name: name.into(), kind: ArrowKind::Call, window: None }
    }

    pub fn msg(from: &str, to: &str, name: &str) -> Self {
        Self { kind: ArrowKind::Msg, ..Self::call(from, to, name) }
    }

    pub fn within(mut self, min: u64, max: u64) -> Self {
        self.window = Some([min, max]);
        self
    }

    fn matches(&self, e: &TraceEvent) -> bool {
        self.kind.matches(e.kind) && e.src == self.from && e.dst == self.to && e.name == self.name
    }

    /// Same interaction, ignoring the window.
    fn same_signal(&self, other: &Arrow) -> bool {
        self.from == other.from && self.to == other.to && self.name == other.name && self.kind == other.kind
    }
}

impl fmt::Display for Arrow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            ArrowKind::Call => "->",
            ArrowKind::Msg => "~>",
        };
        write!(f, "{} {op} {}: {}", self.from, self.to, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub lifelines: Vec<String>,
    #[serde(default)]
    pub strict: bool,
    pub arrows: Vec<Arrow>,
    /// Where the scenario comes from; free text kept for reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code} {message}")]
pub struct ScenarioError {
    pub code: &'static str,
    pub message: String,
}

impl ScenarioError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl Scenario {
    pub fn new(name: &str, lifelines: &[&str], arrows: Vec<Arrow>) -> Self {
        Self {
            name: name.into(),
            lifelines: lifelines.iter().map(|s| s.to_string()).collect(),
            strict: false,
            arrows,
            status: None,
            description: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::new(E_SCENARIO, e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Arrow endpoints must be lifelines and windows must be ordered.
    pub fn check(&self) -> Result<(), ScenarioError> {
        let lifelines: HashSet<&str> = self.lifelines.iter().map(String::as_str).collect();
        for (i, a) in self.arrows.iter().enumerate() {
            for end in [&a.from, &a.to] {
                if !lifelines.contains(end.as_str()) {
                    return Err(ScenarioError::new(
                        E_SCENARIO,
                        format!("{}: arrow {i} uses `{end}`, which is not a lifeline", self.name),
                    ));
                }
            }
            if let Some([min, max]) = a.window {
                if min > max {
                    return Err(ScenarioError::new(E_SCENARIO, format!("{}: arrow {i} has window [{min}, {max}]", self.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Missing,
    OutOfOrder,
    WindowViolation,
    ExtraEventInStrict,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Missing => "missing",
            Reason::OutOfOrder => "out-of-order",
            Reason::WindowViolation => "window-violation",
            Reason::ExtraEventInStrict => "extra-event-in-strict",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// Index of the arrow that could not be matched.
    pub arrow: usize,
    pub reason: Reason,
    /// Index into the trace's events: the offending event, or the trace
    /// length when nothing was found.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub matched: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
    /// Trace positions of the matched arrows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<usize>,
}

impl Verdict {
    fn fail(matched: usize, positions: Vec<usize>, arrow: usize, reason: Reason, position: usize) -> Self {
        Self { pass: false, matched, divergence: Some(Divergence { arrow, reason, position }), positions }
    }
}

fn is_interaction(e: &TraceEvent) -> bool {
    matches!(e.kind, EventKind::Call | EventKind::MsgSend)
}

/// Check one trace against one scenario.
///
/// Arrows are matched greedily to the earliest fitting event after the
/// previous match. A window is measured from the tick of the previous match,
/// or from tick 0 for the first arrow. When an arrow cannot be matched the
/// verdict says why:
///
/// * `out-of-order` if a fitting event sits before the previous match but
///   inside the window,
/// * `window-violation` if one follows it but outside the window,
/// * `missing` otherwise.
///
/// In strict mode any other `call` or `msg_send` between two lifelines of the
/// scenario that falls between the first and the last match is an error.
pub fn check_conformance(trace: &Trace, scenario: &Scenario) -> Result<Verdict, ScenarioError> {
    scenario.check()?;
    let known: HashSet<&str> = trace.header.instances.iter().map(String::as_str).collect();
    for l in &scenario.lifelines {
        if l != ENV && !known.contains(l.as_str()) {
            return Err(ScenarioError::new(E_LIFELINE, format!("{}: lifeline `{l}` is not an instance", scenario.name)));
        }
    }
    let lifelines: HashSet<&str> = scenario.lifelines.iter().map(String::as_str).collect();
    let events = &trace.events;
    let mut positions = Vec::with_capacity(scenario.arrows.len());
    let mut pos = 0usize;
    let mut prev_tick = 0u64;
    for (i, arrow) in scenario.arrows.iter().enumerate() {
        let [min, max] = arrow.window.unwrap_or([0, u64::MAX]);
        let lo = prev_tick.saturating_add(min);
        let hi = prev_tick.saturating_add(max);
        let mut found = None;
        // first fitting event that is too early or too late
        let mut outside = None;
        for (j, e) in events.iter().enumerate().skip(pos) {
            if e.tick > hi {
                if outside.is_none() {
                    outside = events[j..].iter().position(|e| arrow.matches(e)).map(|k| j + k);
                }
                break;
            }
            if arrow.matches(e) {
                if e.tick >= lo {
                    found = Some(j);
                    break;
                }
                outside.get_or_insert(j);
            }
        }
        let Some(j) = found else {
            let m = positions.len();
            // look back over events already passed, still inside the window
            let early = (0..pos).rev().take_while(|&k| events[k].tick >= lo).find(|&k| arrow.matches(&events[k]));
            if let Some(k) = early.filter(|&k| events[k].tick <= hi) {
                return Ok(Verdict::fail(m, positions, i, Reason::OutOfOrder, k));
            }
            if let Some(k) = outside {
                return Ok(Verdict::fail(m, positions, i, Reason::WindowViolation, k));
            }
            return Ok(Verdict::fail(m, positions, i, Reason::Missing, events.len()));
        };
        if scenario.strict && i > 0 {
            let extra = (pos..j).find(|&k| {
                let e = &events[k];
                is_interaction(e) && lifelines.contains(e.src.as_str()) && lifelines.contains(e.dst.as_str())
            });
            if let Some(k) = extra {
                return Ok(Verdict::fail(positions.len(), positions, i, Reason::ExtraEventInStrict, k));
            }
        }
        positions.push(j);
        prev_tick = events[j].tick;
        pos = j + 1;
    }
    Ok(Verdict { pass: true, matched: positions.len(), divergence: None, positions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Priority {
    Feasibility,
    Reuse,
    KeyProperty,
    LeastUnderstood,
    Extra,
}

impl Priority {
    pub const ALL: [Priority; 5] =
        [Priority::Feasibility, Priority::Reuse, Priority::KeyProperty, Priority::LeastUnderstood, Priority::Extra];

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Feasibility => "feasibility",
            Priority::Reuse => "reuse",
            Priority::KeyProperty => "key-property",
            Priority::LeastUnderstood => "least-understood",
            Priority::Extra => "extra",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackagedScenario {
    pub scenario: Scenario,
    pub priority: Priority,
    pub stimuli: Vec<Stimulus>,
    /// Simulated seconds; the rehearsal config's duration when absent.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPackage {
    pub name: String,
    pub dt: Option<f64>,
    pub scenarios: Vec<PackagedScenario>,
}

/// Package file as written on disk. Paths are relative to the package file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub scenarios: Vec<PackageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageEntry {
    pub file: String,
    pub priority: Priority,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stimuli: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

impl ScenarioPackage {
    /// Build a package from its file form, reading referenced files through
    /// `read`.
    pub fn from_file(
        file: &PackageFile,
        mut read: impl FnMut(&str) -> Result<String, String>,
    ) -> Result<Self, ScenarioError> {
        let mut scenarios = Vec::with_capacity(file.scenarios.len());
        for entry in &file.scenarios {
            let text = read(&entry.file).map_err(|e| ScenarioError::new(E_SCENARIO, format!("{}: {e}", entry.file)))?;
            let scenario = Scenario::parse(&text)
                .map_err(|e| ScenarioError::new(e.code, format!("{}: {}", entry.file, e.message)))?;
            let stimuli = match &entry.stimuli {
                None => Vec::new(),
                Some(f) => {
                    let text = read(f).map_err(|e| ScenarioError::new(E_SCENARIO, format!("{f}: {e}")))?;
                    sim::parse_stimuli(&text).map_err(|e| ScenarioError::new(E_SCENARIO, format!("{f}: {e}")))?
                }
            };
            scenarios.push(PackagedScenario { scenario, priority: entry.priority, stimuli, duration: entry.duration });
        }
        Ok(Self { name: file.name.clone(), dt: file.dt, scenarios })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::new(E_SCENARIO, format!("{}: {e}", path.display())))?;
        let file: PackageFile =
            serde_json::from_str(&text).map_err(|e| ScenarioError::new(E_SCENARIO, format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::from_file(&file, |f| std::fs::read_to_string(dir.join(f)).map_err(|e| e.to_string()))
    }

    /// Indices of the scenarios in rehearsal order: by priority, stable
    /// within a priority.
    pub fn order(&self) -> Vec<usize> {
        let mut ix: Vec<usize> = (0..self.scenarios.len()).collect();
        ix.sort_by_key(|&i| self.scenarios[i].priority);
        ix
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rehearsal {
    pub scenario: String,
    pub priority: Priority,
    pub verdict: Option<Verdict>,
    pub timeliness: Option<TimelinessReport>,
    /// Set when the run or the check could not complete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Rehearsal {
    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.verdict.as_ref().is_some_and(|v| v.pass)
            && self.timeliness.as_ref().is_some_and(TimelinessReport::is_clean)
    }
}

/// Run every scenario of a package under its own stimuli.
///
/// `stimuli[i]` belongs to `package.scenarios[i]`. One scenario failing or
/// erroring does not stop the others.
pub fn rehearse_package(
    tree: &InstanceTree,
    config: &SimConfig,
    package: &ScenarioPackage,
    stimuli: &[Vec<Stimulus>],
) -> Vec<Rehearsal> {
    package
        .order()
        .into_iter()
        .map(|i| {
            let entry = &package.scenarios[i];
            let mut cfg = *config;
            if let Some(d) = entry.duration {
                cfg.duration = d;
            }
            let mut r = Rehearsal {
                scenario: entry.scenario.name.clone(),
                priority: entry.priority,
                verdict: None,
                timeliness: None,
                error: None,
            };
            let stim = stimuli.get(i).map_or(&[][..], Vec::as_slice);
            match sim::run(tree, cfg, stim) {
                Err(e) => r.error = Some(e.to_string()),
                Ok(trace) => {
                    r.timeliness = Some(check_timeliness(&trace, tree));
                    if let Some(ev) = trace.events.iter().find(|e| e.kind == EventKind::RuntimeError) {
                        r.error = Some(format!("{} at tick {}", ev.name, ev.tick));
                    }
                    match check_conformance(&trace, &entry.scenario) {
                        Ok(v) => r.verdict = Some(v),
                        Err(e) => r.error = Some(e.to_string()),
                    }
                }
            }
            r
        })
        .collect()
}

/// Rehearse with the stimuli stored in the package itself.
pub fn rehearse(tree: &InstanceTree, config: &SimConfig, package: &ScenarioPackage) -> Vec<Rehearsal> {
    let stimuli: Vec<Vec<Stimulus>> = package.scenarios.iter().map(|s| s.stimuli.clone()).collect();
    let mut cfg = *config;
    if let Some(dt) = package.dt {
        cfg.dt = dt;
    }
    rehearse_package(tree, &cfg, package, &stimuli)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conflict {
    pub first: String,
    pub second: String,
    pub shared_prefix: Vec<Arrow>,
    pub next: (Arrow, Arrow),
}

fn project<'a>(s: &'a Scenario, shared: &HashSet<&str>) -> Vec<&'a Arrow> {
    s.arrows.iter().filter(|a| shared.contains(a.from.as_str()) && shared.contains(a.to.as_str())).collect()
}

/// Pairs of scenarios that agree on a prefix of their shared interactions and
/// then demand different next signatures from the same sender.
pub fn detect_conflicts(package: &ScenarioPackage) -> Vec<Conflict> {
    let mut out = Vec::new();
    let list = &package.scenarios;
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            let (a, b) = (&a.scenario, &b.scenario);
            let la: HashSet<&str> = a.lifelines.iter().map(String::as_str).collect();
            let shared: HashSet<&str> = b.lifelines.iter().map(String::as_str).filter(|l| la.contains(l)).collect();
            let (pa, pb) = (project(a, &shared), project(b, &shared));
            let common = pa.iter().zip(&pb).take_while(|(x, y)| x.same_signal(y)).count();
            if common == 0 {
                continue;
            }
            if let (Some(x), Some(y)) = (pa.get(common), pb.get(common)) {
                if x.from == y.from && (x.name != y.name || x.kind != y.kind) {
                    out.push(Conflict {
                        first: a.name.clone(),
                        second: b.name.clone(),
                        shared_prefix: pa[..common].iter().map(|a| (*a).clone()).collect(),
                        next: ((*x).clone(), (*y).clone()),
                    });
                }
            }
        }
    }
    out
}
