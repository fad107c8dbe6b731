//! `sim`: run, replay and inspect delegation-market simulations, and drive the
//! individual protocol pieces (tokens, decomposition, auctions, ledgers) from
//! files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use delegation_core::bank::{audit_ledger, LedgerEntry};
use delegation_core::decomposition::{finalize, mark_human_nodes, propose, CapabilityRegistry, DecompositionConfig};
use delegation_core::identity::{attenuate, mint_token, verify_token, RequestContext, SecretKey, TokenDecision};
use delegation_core::market::{pareto_filter, select, Bid, ObjectiveVector, ScoredBid, TaskRFQ, Weights};
use delegation_core::reputation::{ReputationConfig, ReputationEntry, ReputationLedger};
use delegation_core::sim::{self, audit, load_scenario, random_scenario, LogLine, Record, Scenario, SimError};
use delegation_core::task::TaskNode;
use delegation_core::{AgentId, CapabilityToken, Caveat, Micros, Tick};

const CONFIG_ENV: &str = "DELEGATION_SIM_CONFIG";

#[derive(Parser)]
#[command(name = "sim", version, about = "Delegation market simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its event log and metrics.
    Run(RunArgs),
    /// Recompute digest and metrics from a log and check them against its trailer.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Print metrics recomputed from a log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Mint, attenuate and verify capability tokens.
    #[command(subcommand)]
    Dct(DctCmd),
    /// Propose contract-first decompositions of a task tree.
    Decompose(DecomposeArgs),
    /// Auction tooling.
    #[command(subcommand)]
    Market(MarketCmd),
    /// Contract tooling.
    #[command(subcommand)]
    Contract(ContractCmd),
    /// Double-entry ledger tooling.
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Reputation tooling.
    #[command(subcommand)]
    Reputation(ReputationCmd),
    /// Adaptive coordination tooling.
    #[command(subcommand)]
    Coordinate(CoordinateCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON. Without it a randomised scenario is generated from the seed.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DctCmd {
    /// Mint a root token.
    Mint {
        /// Root secret as 64 hex digits.
        #[arg(long)]
        secret: String,
        #[arg(long, default_value = "root")]
        root_key_id: String,
        #[arg(long)]
        id: String,
        /// `<kind>=<value>`, e.g. `scope=/repo`, `ops=read,write`, `expiry=100`.
        #[arg(long = "caveat")]
        caveats: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append caveats to an existing token.
    Attenuate {
        #[arg(long)]
        token: PathBuf,
        #[arg(long = "caveat", required = true)]
        caveats: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a request against a token. Exits 1 on deny.
    Verify {
        #[arg(long)]
        token: PathBuf,
        #[arg(long)]
        secret: String,
        /// Request as inline JSON or `@file`.
        #[arg(long)]
        request: String,
    },
    /// Derive a secret deterministically from a seed and label.
    Keygen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        label: String,
    },
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[arg(short, default_value_t = 3)]
    k: usize,
    /// Total budget split evenly across the leaves of each proposal.
    #[arg(long, default_value = "10.00")]
    budget: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MarketCmd {
    /// Score a directory of bids against an RFQ and pick a winner.
    Run {
        #[arg(long)]
        rfq: PathBuf,
        #[arg(long)]
        bids: PathBuf,
        /// e.g. `cost=0.5,latency=0.3,risk=0.2`; defaults to the RFQ's weights.
        #[arg(long)]
        weights: Option<String>,
        /// `agent=score` entries; unlisted agents get the prior.
        #[arg(long = "reputation")]
        reputation: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        trust_threshold: f64,
    },
}

#[derive(Subcommand)]
enum ContractCmd {
    /// Show a contract's terms, state history and money movements from a log.
    Inspect {
        id: String,
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Re-check double entry and conservation offline. Accepts an event log
    /// or JSON lines of ledger entries. Exits 1 on any violation.
    Verify { file: PathBuf },
}

#[derive(Subcommand)]
enum ReputationCmd {
    /// Recompute an agent's score from a ledger file at a given tick.
    Score {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        agent: String,
        #[arg(long)]
        at: Tick,
        /// Reputation config JSON; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CoordinateCmd {
    /// Run a scenario and dump its trigger/response trace.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            if let Some(SimError::InvariantViolation { .. }) = e.downcast_ref::<SimError>() {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Run(a) => run(a),
        Cmd::Replay { log } => {
            let r = sim::replay(&read(&log)?)?;
            println!("ok {} lines, digest {}", r.event_log.len(), r.event_log_digest);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Metrics { log, format } => {
            let r = sim::replay(&read(&log)?)?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&r.metrics)?),
                Format::Csv => print!("{}", sim::metrics_csv(&r.metrics)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Dct(c) => dct(c),
        Cmd::Decompose(a) => decompose(a),
        Cmd::Market(MarketCmd::Run { rfq, bids, weights, reputation, trust_threshold }) => {
            market_run(&rfq, &bids, weights.as_deref(), &reputation, trust_threshold)
        }
        Cmd::Contract(ContractCmd::Inspect { id, log }) => contract_inspect(&id, &log),
        Cmd::Ledger(LedgerCmd::Verify { file }) => ledger_verify(&file),
        Cmd::Reputation(ReputationCmd::Score { ledger, agent, at, config }) => {
            reputation_score(&ledger, &agent, at, config.as_deref())
        }
        Cmd::Coordinate(CoordinateCmd::Replay { scenario, trace }) => coordinate_replay(&scenario, &trace),
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn base_config() -> Result<Option<Value>> {
    match std::env::var_os(CONFIG_ENV) {
        Some(p) => Ok(Some(read_json(Path::new(&p)).with_context(|| format!("loading {CONFIG_ENV}"))?)),
        None => Ok(None),
    }
}

fn scenario_from(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario> {
    let base = base_config()?;
    let mut sc = match path {
        Some(p) => load_scenario(&read(p)?, base.as_ref())?,
        None => {
            let seed = seed.ok_or_else(|| anyhow!("either --scenario or --seed is required"))?;
            let mut sc = random_scenario(seed);
            // a generated config carries no explicit choices, so the base wins
            if let Some(base) = base {
                let mut cfg = serde_json::to_value(&sc.config)?;
                sim::merge_json(&mut cfg, &base);
                sc.config = serde_json::from_value(cfg).context("merging base config")?;
            }
            sc
        }
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.validate()?;
    Ok(sc)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let sc = scenario_from(a.scenario.as_deref(), a.seed)?;
    let r = sim::run(&sc)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("events.jsonl"), r.to_jsonl())?;
    fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&r.metrics)?)?;
    let mut rep = String::new();
    for e in r.reputation.entries() {
        rep.push_str(&serde_json::to_string(e)?);
        rep.push('\n');
    }
    fs::write(a.out.join("reputation.jsonl"), rep)?;
    fs::write(a.out.join("scenario.json"), serde_json::to_string_pretty(&sc)?)?;
    let m = &r.metrics;
    println!(
        "seed {} digest {} tasks {}/{} cost {} redelegations {}",
        sc.seed, r.event_log_digest, m.tasks_completed, m.tasks_total, m.total_cost, m.redelegation_count
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_caveats(raw: &[String]) -> Result<Vec<Caveat>> {
    raw.iter().map(|c| c.parse::<Caveat>().with_context(|| format!("caveat {c:?}"))).collect()
}

fn secret(hex: &str) -> Result<SecretKey> {
    SecretKey::from_hex(hex.trim()).ok_or_else(|| anyhow!("secret must be 64 hex digits"))
}

fn dct(c: DctCmd) -> Result<ExitCode> {
    match c {
        DctCmd::Mint { secret: s, root_key_id, id, caveats, out } => {
            let t = mint_token(&secret(&s)?, &root_key_id, &id, parse_caveats(&caveats)?)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&t)?)?;
        }
        DctCmd::Attenuate { token, caveats, out } => {
            let mut t: CapabilityToken = read_json(&token)?;
            for c in parse_caveats(&caveats)? {
                t = attenuate(&t, c)?;
            }
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&t)?)?;
        }
        DctCmd::Verify { token, secret: s, request } => {
            let t: CapabilityToken = read_json(&token)?;
            let req: RequestContext = match request.strip_prefix('@') {
                Some(p) => read_json(Path::new(p))?,
                None => serde_json::from_str(&request).context("parsing --request")?,
            };
            let d = verify_token(&t, &secret(&s)?, &req);
            println!("{}", serde_json::to_string(&d)?);
            if !matches!(d, TokenDecision::Allow) {
                return Ok(ExitCode::FAILURE);
            }
        }
        DctCmd::Keygen { seed, label } => println!("{}", SecretKey::derive(seed, &label).to_hex()),
    }
    Ok(ExitCode::SUCCESS)
}

fn decompose(a: DecomposeArgs) -> Result<ExitCode> {
    let task: TaskNode = read_json(&a.task)?;
    let registry: CapabilityRegistry = read_json(&a.registry)?;
    let budget = delegation_core::market::parse_amount(&a.budget).ok_or_else(|| anyhow!("bad --budget {:?}", a.budget))?;
    let base = base_config()?;
    let mut cfg: DecompositionConfig = match base.as_ref().and_then(|b| b.get("decomposition")) {
        Some(v) => serde_json::from_value(v.clone()).context("decomposition config")?,
        None => DecompositionConfig::default(),
    };
    cfg.k = a.k;
    let proposals = propose(&task, &registry, &cfg)?;
    fs::create_dir_all(&a.out)?;
    for (i, p) in proposals.iter().enumerate() {
        let p = mark_human_nodes(p, &cfg.human, &registry, cfg.tau_s);
        let dir = a.out.join(format!("proposal-{i}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("proposal.json"), serde_json::to_string_pretty(&p)?)?;
        let share = budget / p.leaves.len().max(1) as Micros;
        for leaf in &p.leaves {
            let spec = finalize(leaf, share);
            fs::write(dir.join(format!("{}.spec.json", leaf.task_id)), serde_json::to_string_pretty(&spec)?)?;
        }
        println!(
            "{} leaves {} success {:.3} cost {} makespan {}",
            p.proposal_id,
            p.leaves.len(),
            p.estimates.success_prob,
            p.estimates.total_cost,
            p.estimates.makespan
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// A full `did:` id, or a scenario label to derive one from.
fn agent_id(s: &str) -> AgentId {
    s.trim().parse().unwrap_or_else(|_| AgentId::derive(s.trim()))
}

fn parse_weights(s: &str) -> Result<Weights> {
    let mut w = Weights { cost: 0.0, latency: 0.0, risk: 0.0, privacy: 0.0 };
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| anyhow!("weight {part:?} is not <name>=<value>"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("weight {k}"))?;
        match k.trim() {
            "cost" => w.cost = v,
            "latency" => w.latency = v,
            "risk" => w.risk = v,
            "privacy" => w.privacy = v,
            other => bail!("unknown weight {other:?}"),
        }
    }
    Ok(w.normalized()?)
}

fn market_run(rfq: &Path, bids: &Path, weights: Option<&str>, reputation: &[String], threshold: f64) -> Result<ExitCode> {
    let rfq: TaskRFQ = read_json(rfq)?;
    let weights = match weights {
        Some(w) => parse_weights(w)?,
        None => rfq.preference_weights.normalized()?,
    };
    let prior = ReputationConfig::default().prior;
    let mut scores = std::collections::BTreeMap::new();
    for r in reputation {
        let (a, s) = r.split_once('=').ok_or_else(|| anyhow!("reputation {r:?} is not <agent>=<score>"))?;
        scores.insert(agent_id(a), s.trim().parse::<f64>()?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(bids)
        .with_context(|| format!("listing {}", bids.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut scored = Vec::new();
    for f in &files {
        let bid: Bid = read_json(f)?;
        if bid.reputation_bond < rfq.min_stake {
            eprintln!("{}: bond {} below min stake {}", bid.agent_id, bid.reputation_bond, rfq.min_stake);
            continue;
        }
        if bid.expiry < rfq.deadline_for_bids {
            eprintln!("{}: bid expires at {} before the bidding deadline", bid.agent_id, bid.expiry);
            continue;
        }
        let rep = scores.get(&bid.agent_id).copied().unwrap_or(prior);
        let objectives = ObjectiveVector::of(&bid, rep, rfq.spec.characteristics.contextuality);
        scored.push(ScoredBid { bid, reputation: rep, objectives });
    }
    let front = pareto_filter(&scored);
    let selection = select(&front, &weights, threshold);
    let out = serde_json::json!({
        "rfq_id": rfq.rfq_id,
        "bids": scored.len(),
        "pareto_front": front.iter().map(|b| &b.bid.agent_id).collect::<Vec<_>>(),
        "selection": selection,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn log_records(p: &Path) -> Result<Vec<LogLine>> {
    read(p)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", p.display(), i + 1)))
        .collect()
}

fn contract_inspect(id: &str, log: &Path) -> Result<ExitCode> {
    let records = log_records(log)?;
    let escrow = format!("escrow:{id}");
    let mut found = false;
    let mut stdout = std::io::stdout().lock();
    for l in &records {
        let relevant = match &l.record {
            Record::Contract { contract, .. }
            | Record::State { contract, .. }
            | Record::Verdict { contract, .. }
            | Record::Challenge { contract, .. }
            | Record::Panel { contract, .. } => contract == id,
            Record::Trigger { contract: Some(c), .. } => c == id,
            Record::Transfer { from, to, .. } => from.to_string() == escrow || to.to_string() == escrow,
            _ => false,
        };
        if relevant {
            found = true;
            writeln!(stdout, "{}", l.to_line())?;
        }
    }
    if !found {
        bail!("no contract {id} in {}", log.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn ledger_verify(file: &Path) -> Result<ExitCode> {
    let text = read(file)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let is_log = serde_json::from_str::<LogLine>(first).is_ok();
    let (entries, violations) = if is_log {
        let records = log_records(file)?;
        let n = records.iter().filter(|l| matches!(l.record, Record::Transfer { .. })).count();
        (n, audit::money(&records))
    } else {
        let entries: Vec<LedgerEntry> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
            .collect::<Result<_>>()?;
        (entries.len(), audit_ledger(&entries).violations)
    };
    if violations.is_empty() {
        println!("ok {entries} entries balance");
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn reputation_score(ledger: &Path, agent: &str, at: Tick, config: Option<&Path>) -> Result<ExitCode> {
    let entries: Vec<ReputationEntry> = read(ledger)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect::<Result<_>>()?;
    let cfg: ReputationConfig = match config {
        Some(p) => read_json(p)?,
        None => ReputationConfig::default(),
    };
    let l = ReputationLedger::from_entries(entries);
    let s = l.score(&agent_id(agent), at, &cfg);
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(ExitCode::SUCCESS)
}

fn coordinate_replay(scenario: &Path, trace: &Path) -> Result<ExitCode> {
    let sc = scenario_from(Some(scenario), None)?;
    let r = sim::run(&sc)?;
    let mut out = String::new();
    let mut n = 0;
    for l in &r.records {
        if matches!(
            l.record,
            Record::Trigger { .. }
                | Record::Response { .. }
                | Record::Stability { .. }
                | Record::Redelegate { .. }
                | Record::Escalate { .. }
                | Record::HumanDecision { .. }
        ) {
            out.push_str(&l.to_line());
            out.push('\n');
            n += 1;
        }
    }
    fs::write(trace, out).with_context(|| format!("writing {}", trace.display()))?;
    println!("{n} coordination records written to {}", trace.display());
    Ok(ExitCode::SUCCESS)
}
