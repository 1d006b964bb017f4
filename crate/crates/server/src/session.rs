//! The simulation owner's state, independent of any transport.

use broom_core::model::InstanceTree;
use broom_core::sim::{EventKind, SimConfig, SimError, TraceEvent, World};
use serde_json::Value as Json;

use crate::protocol::{json_of, Command, Frame, Request, Snapshot, E_ARGUMENT, E_HALTED, E_SELECTOR, E_STIMULUS, E_TUNABLE};

/// Largest `step` accepted in one command.
pub const MAX_STEP: u64 = 100_000;

/// Frames produced by applying one request.
#[derive(Debug, Default)]
pub struct Applied {
    /// For every client, in order.
    pub broadcast: Vec<Frame>,
    /// For the requesting client only, sent after `broadcast`.
    pub reply: Option<Frame>,
    /// The owner should say `bye` to every client and stop.
    pub shutdown: bool,
}

/// One executed tick.
#[derive(Debug)]
pub struct Ticked {
    pub events: Vec<TraceEvent>,
    /// Present on snapshot ticks and when forced.
    pub snapshot: Option<Frame>,
    /// Set when this tick ended the run.
    pub halt: Option<Frame>,
}

#[derive(Debug)]
pub struct Session {
    world: World,
    paused: bool,
    speed: f64,
    signals: Vec<String>,
}

impl Session {
    /// A running session at speed 1. `config.duration` is ignored: a served
    /// run lasts until shutdown.
    pub fn new(tree: InstanceTree, config: SimConfig) -> Result<Session, SimError> {
        let world = World::new(tree, SimConfig { duration: 0.0, ..config }, &[])?;
        let signals = world.default_signals();
        Ok(Session { world, paused: false, speed: 1.0, signals })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn set_paused(&mut self, paused: bool) {
        self.paused = paused;
    }

    pub fn signals(&self) -> &[String] {
        &self.signals
    }

    /// Whether the paced clock should run ticks.
    pub fn running(&self) -> bool {
        !self.paused && !self.world.is_halted()
    }

    pub fn hello(&self) -> Frame {
        let w = &self.world;
        let h = w.header();
        let tunables = w.default_signals().into_iter().filter(|s| !s.ends_with(".out")).collect();
        Frame::Hello {
            model: h.model,
            version: h.tool_version,
            dt: w.config().dt,
            snapshot_every: w.config().snapshot_every,
            tick: w.tick(),
            paused: !self.running(),
            speed: self.speed,
            instances: h.instances,
            signals: self.signals.clone(),
            tunables,
        }
    }

    /// State after the most recently executed tick.
    pub fn snapshot(&self, behind_ms: f64) -> Snapshot {
        let w = &self.world;
        let tick = w.tick().saturating_sub(1);
        let signals = self.signals.iter().filter_map(|s| Some((s.clone(), json_of(&w.signal(s)?)))).collect();
        Snapshot {
            tick,
            time: tick as f64 * w.config().dt,
            behind_ms,
            signals,
            fsm_states: w.fsm_states().into_iter().collect(),
        }
    }

    /// Run one tick. A snapshot comes with it on every `snapshot_every`-th
    /// tick, or always when `force` is set.
    pub fn advance(&mut self, behind_ms: f64, force: bool) -> Result<Ticked, SimError> {
        let events = self.world.step()?;
        let tick = self.world.tick() - 1;
        let halt = events.iter().find(|e| e.kind == EventKind::RuntimeError).map(|e| {
            let message = match e.payload.first() {
                Some(broom_core::sim::TraceValue::Str(s)) => s.clone(),
                _ => String::new(),
            };
            Frame::error(None, &e.name, format!("{} at tick {tick}: {message}", e.src))
        });
        let due = force || tick.is_multiple_of(self.world.config().snapshot_every);
        let snapshot = due.then(|| Frame::Snapshot(self.snapshot(behind_ms)));
        Ok(Ticked { events, snapshot, halt })
    }

    pub fn apply(&mut self, req: Request) -> Applied {
        let Request { id, command } = req;
        let name = command.name();
        let mut out = Applied::default();
        let fail = |code: &str, message: String| Applied { reply: Some(Frame::error(id.clone(), code, message)), ..Applied::default() };
        match &command {
            Command::SetAttr { instance, attr, value } => {
                if let Err(e) = self.world.set_attr(instance, attr, value) {
                    return fail(E_TUNABLE, e.to_string());
                }
            }
            Command::Inject { .. } => {
                let s = command.stimulus(self.world.tick()).unwrap_or_else(|| unreachable!());
                if let Err(e) = self.world.inject(&s) {
                    let message = match e {
                        SimError::Stimulus { message, .. } => message,
                        other => other.to_string(),
                    };
                    return fail(E_STIMULUS, message);
                }
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Step { n } => {
                if *n == 0 || *n > MAX_STEP {
                    return fail(E_ARGUMENT, format!("step count must be in 1..={MAX_STEP}"));
                }
                if self.world.is_halted() {
                    return fail(E_HALTED, "the run has stopped on a runtime error".into());
                }
                for _ in 0..*n {
                    let t = match self.advance(0.0, true) {
                        Ok(t) => t,
                        Err(e) => return fail(E_HALTED, e.to_string()),
                    };
                    out.broadcast.extend(t.snapshot);
                    if let Some(h) = t.halt {
                        out.broadcast.push(h);
                        break;
                    }
                }
            }
            Command::SetSpeed { speed } => {
                if !(speed.is_finite() && *speed > 0.0) {
                    return fail(E_ARGUMENT, "speed must be a positive number".into());
                }
                self.speed = *speed;
            }
            Command::Subscribe { signals } => {
                if let Some(bad) = signals.iter().find(|s| self.world.signal(s).is_none()) {
                    return fail(E_SELECTOR, format!("no signal `{bad}`"));
                }
                self.signals = if signals.is_empty() { self.world.default_signals() } else { signals.clone() };
            }
            Command::Shutdown => out.shutdown = true,
        }
        out.reply = Some(Frame::Ack { id, command: name.into(), tick: self.world.tick() });
        out
    }
}

/// Convenience for tests and tools: a request without an id.
pub fn request(command: Command) -> Request {
    Request { id: None::<Json>, command }
}
