use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use delegation_core::decomposition::{finalize, propose, AgentCapability, CapabilityRegistry, DecompositionConfig, VerifierOffer};
use delegation_core::market::{Bid, PrivacyGuarantee, TaskRFQ, Weights};
use delegation_core::task::{generate_task, AxisDist, TaskProfile};
use delegation_core::verification::Mechanism;
use delegation_core::AgentId;
use serde_json::Value;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).env_remove("DELEGATION_SIM_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sim(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_then_replay_metrics_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--seed", "5", "--out", p(&out)]);
    let log = out.join("events.jsonl");
    assert!(ok(&["replay", "--log", p(&log)]).starts_with("ok "));
    let m: Value = serde_json::from_str(&ok(&["metrics", "--log", p(&log), "--format", "json"])).unwrap();
    assert_eq!(m["tasks_total"], m["tasks_completed"]);
    let csv = ok(&["metrics", "--log", p(&log), "--format", "csv"]);
    assert!(csv.lines().any(|l| l.starts_with("completion_rate,")));
    assert!(ok(&["ledger", "verify", p(&log)]).starts_with("ok "));

    // same seed, same bytes
    let again = dir.path().join("again");
    ok(&["run", "--scenario", p(&out.join("scenario.json")), "--out", p(&again)]);
    assert_eq!(fs::read(&log).unwrap(), fs::read(again.join("events.jsonl")).unwrap());
}

#[test]
fn edited_log_fails_replay_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--seed", "2", "--out", p(&out)]);
    let log = out.join("events.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let line = text.lines().find(|l| l.contains("\"reason\":\"fund\"")).unwrap();
    let v: Value = serde_json::from_str(line).unwrap();
    let amount = v["amount"].as_u64().unwrap();
    let forged = line.replace(&format!("\"amount\":{amount}"), &format!("\"amount\":{}", amount * 1000));
    let tampered = dir.path().join("tampered.jsonl");
    fs::write(&tampered, text.replacen(line, &forged, 1)).unwrap();
    assert!(!sim(&["replay", "--log", p(&tampered)]).status.success());
    let verify = sim(&["ledger", "verify", p(&tampered)]);
    assert_eq!(verify.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&verify.stdout).contains("violation"));
}

#[test]
fn base_config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base.json");
    fs::write(&base, r#"{"market": {"min_stake": 700000}}"#).unwrap();
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(["run", "--seed", "3", "--out", p(&out)])
        .env("DELEGATION_SIM_CONFIG", &base)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let sc: Value = serde_json::from_str(&fs::read_to_string(out.join("scenario.json")).unwrap()).unwrap();
    assert_eq!(sc["config"]["market"]["min_stake"], 700000);

    // a scenario file's own config wins over the base
    let mut own = sc.clone();
    own["config"]["market"]["min_stake"] = 600000.into();
    let file = dir.path().join("own.json");
    fs::write(&file, own.to_string()).unwrap();
    let out2 = dir.path().join("run2");
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(["run", "--scenario", p(&file), "--out", p(&out2)])
        .env("DELEGATION_SIM_CONFIG", &base)
        .output()
        .unwrap();
    let sc2: Value = serde_json::from_str(&fs::read_to_string(out2.join("scenario.json")).unwrap()).unwrap();
    assert_eq!(sc2["config"]["market"]["min_stake"], 600000);
}

#[test]
fn invalid_scenario_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    fs::write(&file, r#"{"seed": 1, "horizon": 0, "agents": [], "workload": {}}"#).unwrap();
    let out = sim(&["run", "--scenario", p(&file), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn token_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let key = ok(&["dct", "keygen", "--seed", "9", "--label", "root"]).trim().to_string();
    let root = dir.path().join("root.json");
    let child = dir.path().join("child.json");
    ok(&["dct", "mint", "--secret", &key, "--id", "tok-1", "--caveat", "scope=/repo", "--out", p(&root)]);
    ok(&["dct", "attenuate", "--token", p(&root), "--caveat", "ops=READ", "--caveat", "expiry=50", "--out", p(&child)]);
    let req = |op: &str, now: u64| format!(r#"{{"resource":"/repo/src","operation":"{op}","now":{now}}}"#);
    assert!(ok(&["dct", "verify", "--token", p(&child), "--secret", &key, "--request", &req("READ", 10)]).contains("allow"));
    for (op, now, reason) in [("WRITE", 10, "operation"), ("READ", 51, "expired")] {
        let out = sim(&["dct", "verify", "--token", p(&child), "--secret", &key, "--request", &req(op, now)]);
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stdout).contains(reason), "{op} at {now}");
    }
    let other = ok(&["dct", "keygen", "--seed", "9", "--label", "other"]).trim().to_string();
    let out = sim(&["dct", "verify", "--token", p(&child), "--secret", &other, "--request", &req("READ", 10)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("invalid_chain"));
}

fn registry() -> CapabilityRegistry {
    let caps = ["code", "data", "analysis"];
    CapabilityRegistry {
        agents: caps
            .iter()
            .map(|c| AgentCapability {
                agent: AgentId::derive(c),
                capabilities: [c.to_string()].into(),
                successes: 9,
                attempts: 10,
                human: false,
            })
            .chain([AgentCapability {
                agent: AgentId::derive("reviewer"),
                capabilities: BTreeSet::new(),
                successes: 0,
                attempts: 0,
                human: true,
            }])
            .collect(),
        verifiers: vec![VerifierOffer { mechanism: Mechanism::Direct, min_verifiability: 0.0, handles_subjective: true }],
    }
}

#[test]
fn decompose_writes_proposals_and_specs() {
    let dir = tempfile::tempdir().unwrap();
    let profile = TaskProfile { verifiability: AxisDist::Uniform { lo: 0.3, hi: 1.0 }, ..TaskProfile::default() };
    let task = generate_task(4, 2, 2, &profile);
    let (tf, rf) = (dir.path().join("task.json"), dir.path().join("registry.json"));
    fs::write(&tf, serde_json::to_string(&task).unwrap()).unwrap();
    fs::write(&rf, serde_json::to_string(&registry()).unwrap()).unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&["decompose", "--task", p(&tf), "--registry", p(&rf), "-k", "2", "--out", p(&out)]);
    assert!(!stdout.is_empty() && stdout.lines().count() <= 2);
    let first = out.join("proposal-0");
    let proposal: Value = serde_json::from_str(&fs::read_to_string(first.join("proposal.json")).unwrap()).unwrap();
    let leaves = proposal["leaves"].as_array().unwrap();
    for l in leaves {
        let id = l["task_id"].as_str().unwrap();
        let v = l["task"]["characteristics"]["verifiability"].as_f64().unwrap();
        assert!(v >= 0.6 || l["task"]["human_required"] == true, "{id} unverifiable");
        assert!(first.join(format!("{id}.spec.json")).exists());
    }
}

#[test]
fn market_run_picks_from_the_front() {
    let dir = tempfile::tempdir().unwrap();
    let task = generate_task(1, 0, 1, &TaskProfile::default());
    let plan = propose(&task, &registry(), &DecompositionConfig::default()).unwrap().remove(0).leaves.remove(0);
    let rfq = TaskRFQ {
        rfq_id: "rfq-1".into(),
        delegator: AgentId::derive("delegator"),
        spec: finalize(&plan, 5_000_000),
        broadcast_tick: 0,
        deadline_for_bids: 10,
        min_stake: 100,
        preference_weights: Weights::default(),
    };
    let rf = dir.path().join("rfq.json");
    fs::write(&rf, serde_json::to_string(&rfq).unwrap()).unwrap();
    let bids = dir.path().join("bids");
    fs::create_dir(&bids).unwrap();
    // cheap-fast dominates slow; under-staked never counts
    for (name, cost, dur, bond) in [("cheap-fast", 1_000, 10, 500), ("slow", 1_000, 30, 500), ("pricey", 3_000, 5, 500), ("poor", 10, 1, 1)] {
        let bid = Bid {
            agent_id: AgentId::derive(name),
            estimated_cost: cost,
            estimated_duration: dur,
            privacy_guarantee: PrivacyGuarantee::None,
            reputation_bond: bond,
            expiry: 100,
            signature: Default::default(),
        };
        fs::write(bids.join(format!("{name}.json")), serde_json::to_string(&bid).unwrap()).unwrap();
    }
    let out: Value =
        serde_json::from_str(&ok(&["market", "run", "--rfq", p(&rf), "--bids", p(&bids), "--weights", "cost=0.9,latency=0.1"])).unwrap();
    assert_eq!(out["bids"], 3);
    let front: BTreeSet<String> = out["pareto_front"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let expect: BTreeSet<String> = ["cheap-fast", "pricey"].iter().map(|n| AgentId::derive(n).to_string()).collect();
    assert_eq!(front, expect);
    assert_eq!(out["selection"]["winner"]["bid"]["agent_id"], AgentId::derive("cheap-fast").to_string());
    let out: Value =
        serde_json::from_str(&ok(&["market", "run", "--rfq", p(&rf), "--bids", p(&bids), "--weights", "latency=1"])).unwrap();
    assert_eq!(out["selection"]["winner"]["bid"]["agent_id"], AgentId::derive("pricey").to_string());
}

#[test]
fn reputation_contract_and_coordination_views() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--seed", "4", "--out", p(&out)]);
    let log = out.join("events.jsonl");
    let text = fs::read_to_string(&log).unwrap();

    let contract = text.lines().find_map(|l| {
        let v: Value = serde_json::from_str(l).unwrap();
        (v["kind"] == "contract").then(|| v["contract"].as_str().unwrap().to_string())
    });
    let contract = contract.unwrap();
    let shown = ok(&["contract", "inspect", &contract, "--log", p(&log)]);
    assert!(shown.contains("\"kind\":\"state\"") && shown.contains(&format!("escrow:{contract}")));
    assert!(!sim(&["contract", "inspect", "no-such", "--log", p(&log)]).status.success());

    // the offline score matches the last score the run logged for that agent
    let last = text
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .rfind(|v| v["kind"] == "reputation")
        .unwrap();
    let agent = last["agent"].as_str().unwrap();
    let at = text.lines().last().map(|l| serde_json::from_str::<Value>(l).unwrap()["tick"].as_u64().unwrap()).unwrap();
    let score: Value =
        serde_json::from_str(&ok(&["reputation", "score", "--ledger", p(&out.join("reputation.jsonl")), "--agent", agent, "--at", &at.to_string()]))
            .unwrap();
    let logged = text
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .rfind(|v| v["kind"] == "reputation" && v["agent"] == agent)
        .unwrap();
    assert_eq!(score["composite"], logged["composite"]);

    let trace = dir.path().join("trace.jsonl");
    ok(&["coordinate", "replay", "--scenario", p(&out.join("scenario.json")), "--trace", p(&trace)]);
    let trace = fs::read_to_string(trace).unwrap();
    assert!(trace.lines().any(|l| l.contains("\"kind\":\"trigger\"")));
    assert!(trace.lines().all(|l| !l.contains("\"kind\":\"transfer\"")));
}
