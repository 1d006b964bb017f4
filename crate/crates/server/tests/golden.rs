use std::collections::BTreeSet;

use broom_core::fixture::load_fixture;
use broom_core::sim::SimConfig;
use broom_server::protocol::{E_ARGUMENT, E_HALTED, E_PROTOCOL, E_SELECTOR, E_STIMULUS, E_TUNABLE};
use broom_server::{request, Command, Frame, Request, Session};
use serde_json::Value;

const COMMANDS: &str = include_str!("../../../docs/frames/commands.json");
const SERVER: &str = include_str!("../../../docs/frames/server.json");
const DOC: &str = include_str!("../../../docs/protocol.md");

fn frames(text: &str) -> Vec<Value> {
    serde_json::from_str(text).unwrap()
}

fn heatcool() -> Session {
    Session::new(load_fixture().tree, SimConfig::new(0.01, 0.0)).unwrap()
}

fn kind(v: &Value) -> String {
    v["type"].as_str().unwrap().to_string()
}

#[test]
fn golden_commands_round_trip() {
    let mut seen = BTreeSet::new();
    for f in frames(COMMANDS) {
        let req: Request = serde_json::from_value(f.clone()).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(serde_json::to_value(&req).unwrap(), f);
        seen.insert(req.command.name());
    }
    let all = ["inject", "pause", "resume", "set_attr", "set_speed", "shutdown", "step", "subscribe"];
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), all);
}

#[test]
fn golden_server_frames_round_trip() {
    let mut seen = BTreeSet::new();
    for f in frames(SERVER) {
        let frame: Frame = serde_json::from_value(f.clone()).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(serde_json::to_value(&frame).unwrap(), f);
        seen.insert(kind(&f));
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), ["ack", "bye", "error", "hello", "snapshot"]);
}

#[test]
fn golden_hello_matches_a_live_heatcool_session() {
    let golden = frames(SERVER).into_iter().find(|f| kind(f) == "hello").unwrap();
    let mut live = serde_json::to_value(heatcool().hello()).unwrap();
    live["version"] = golden["version"].clone();
    assert_eq!(live, golden);
}

#[test]
fn golden_snapshot_has_the_keys_of_a_live_one() {
    let golden = frames(SERVER).into_iter().find(|f| kind(f) == "snapshot").unwrap();
    let mut s = heatcool();
    let ticked = s.advance(0.0, true).unwrap();
    let live = serde_json::to_value(ticked.snapshot.unwrap()).unwrap();
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&live), keys(&golden));
    assert_eq!(keys(&live["signals"]), keys(&golden["signals"]));
    assert_eq!(keys(&live["fsm_states"]), keys(&golden["fsm_states"]));
}

#[test]
fn golden_errors_use_known_codes() {
    let codes = [E_PROTOCOL, E_TUNABLE, E_STIMULUS, E_SELECTOR, E_ARGUMENT, E_HALTED, "E_RUNTIME", "E_LIVELOCK"];
    for f in frames(SERVER).iter().filter(|f| kind(f) == "error") {
        assert!(codes.contains(&f["code"].as_str().unwrap()), "{f}");
    }
    for c in codes {
        assert!(DOC.contains(&format!("`{c}`")), "{c} is not documented");
    }
}

#[test]
fn every_frame_type_is_documented() {
    for t in ["set_attr", "inject", "pause", "resume", "step", "set_speed", "subscribe", "shutdown", "hello", "snapshot", "ack", "error", "bye"] {
        assert!(DOC.contains(&format!("| `{t}` |")), "{t}");
    }
}

#[test]
fn live_replies_parse_back() {
    let mut s = heatcool();
    let replies = [
        s.apply(request(Command::Step { n: 2 })),
        s.apply(request(Command::SetAttr { instance: "root.inside".into(), attr: "x".into(), value: Value::from(1) })),
    ];
    for a in replies {
        for f in a.broadcast.iter().chain(&a.reply) {
            let back: Frame = serde_json::from_str(&f.to_text()).unwrap();
            assert_eq!(&back, f);
        }
    }
}
