use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use delegation_core::identity::{attenuate, verify_token, Operation, RequestContext, SecretKey};
use delegation_core::market::{pareto_filter, select, Bid, ObjectiveVector, PrivacyGuarantee, ScoredBid, Weights};
use delegation_core::sim::{honest_population, run, Scenario, SimConfig, Workload};
use delegation_core::{AgentId, Caveat};

fn bids(n: usize) -> Vec<ScoredBid> {
    let privacy = [PrivacyGuarantee::None, PrivacyGuarantee::TeeEnclave, PrivacyGuarantee::CryptoProof];
    (0..n)
        .map(|i| {
            // spread along a trade-off curve with some noise so the front is non-trivial
            let cost = 1_000_000 + (i as u64 * 7_919) % 500_000;
            let bid = Bid {
                agent_id: AgentId::derive(&format!("bidder-{i}")),
                estimated_cost: cost,
                estimated_duration: 10 + ((i * 31) % 90) as u64,
                privacy_guarantee: privacy[i % 3],
                reputation_bond: 500_000,
                expiry: 100,
                signature: Default::default(),
            };
            let reputation = 0.5 + ((i * 13) % 50) as f64 / 100.0;
            ScoredBid { objectives: ObjectiveVector::of(&bid, reputation, 0.5), bid, reputation }
        })
        .collect()
}

fn market(c: &mut Criterion) {
    let b = bids(200);
    let w = Weights::default();
    c.bench_function("pareto_filter_200", |x| x.iter(|| pareto_filter(black_box(&b))));
    c.bench_function("pareto_then_select_200", |x| x.iter(|| select(&pareto_filter(black_box(&b)), &w, 0.5)));
}

fn tokens(c: &mut Criterion) {
    let root = SecretKey::derive(1, "root");
    let mut t = delegation_core::identity::mint_token(&root, "root", "bench", vec![]).unwrap();
    let chain = [
        Caveat::scope(["/repo"]),
        Caveat::ops([Operation::Read, Operation::Write]),
        Caveat::Expiry(1_000),
        Caveat::MaxDepth(6),
        Caveat::SpendCap(10_000),
        Caveat::scope(["/repo/src"]),
        Caveat::ops([Operation::Read]),
        Caveat::MaxDepth(3),
    ];
    for cv in chain {
        t = attenuate(&t, cv).unwrap();
    }
    let req = RequestContext { resource: "/repo/src/lib.rs".into(), operation: Operation::Read, now: 5, depth: 2, spend: 10 };
    assert!(verify_token(&t, &root, &req).is_allow());
    c.bench_function("verify_token_chain_8", |x| x.iter(|| verify_token(black_box(&t), &root, black_box(&req))));
}

fn simulation(c: &mut Criterion) {
    let sc = Scenario {
        seed: 7,
        horizon: 2_000,
        agents: honest_population(2, 6, 3),
        workload: Workload { tasks: 20, arrival_every: 20, ..Workload::default() },
        external_events: Vec::new(),
        config: SimConfig::default(),
    };
    let mut g = c.benchmark_group("sim");
    g.sample_size(20);
    g.bench_function("run_20_tasks", |x| x.iter(|| run(black_box(&sc)).unwrap()));
    g.finish();
}

criterion_group!(benches, market, tokens, simulation);
criterion_main!(benches);
