//! Scenario files and the runner: build a banking world (banks, replicas,
//! clients, net policy), execute it to quiescence, and check invariants.
//!
//! Line-oriented grammar (`#` starts a comment, blank lines are ignored):
//!
//! ```text
//! seed <n>
//! timer <t>                      # timeout attached to every request
//! delay <min> <max>              # per-message delay range (exact rationals)
//! drop <p>                       # message loss probability, default 0
//! bank <name> replicas <n>
//! account <bank> <account> <balance>
//! client <name>
//! trigger <agent> <term> at <t>  # term: deposit(b,a,5), look-up(b), ...
//! suspend <agent> at <t>
//! resume <agent> at <t>
//! partition <group>|<group> at <t>   # group: comma-separated agent names
//! heal at <t>
//! ```
//!
//! Times and amounts are exact (`1/2` or `0.5`); replica `i` of bank `b` is
//! the agent `b.si`. A `trigger` whose term is `suspend(S)` or `resume(S)`
//! is treated as the corresponding fault command.

use std::collections::BTreeSet;

use num_rational::Rational64;
use num_traits::Zero;

use crate::banking::{bank_client_rules, bank_server_rules, BankConfig, BankHost, OpRecord};
use crate::kernel::{AgentId, EngineError};
use crate::oracle::Oracle;
use crate::simnet::{DelayPolicy, DropPolicy, FaultCmd, RunStatus, World};
use crate::term::{Symbol, Term};
use crate::time::{parse_time, secs, Time};
use crate::toolkit::CommHost;

#[derive(Debug, Clone, thiserror::Error)]
#[error("scenario line {line}: {msg}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Debug)]
pub struct BankDecl {
    pub name: String,
    pub replicas: usize,
    pub accounts: Vec<(String, i64)>,
}

#[derive(Clone, Debug)]
pub enum ScheduledItem {
    Trigger { agent: String, term: Term, at: Time },
    Fault { cmd: FaultCmd, at: Time },
}

impl ScheduledItem {
    pub fn at(&self) -> Time {
        match self {
            ScheduledItem::Trigger { at, .. } => *at,
            ScheduledItem::Fault { at, .. } => *at,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub seed: u64,
    pub timer: Time,
    pub delay_min: Time,
    pub delay_max: Time,
    pub drop: Rational64,
    pub banks: Vec<BankDecl>,
    pub clients: Vec<String>,
    pub schedule: Vec<ScheduledItem>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            timer: secs(5),
            delay_min: secs(1),
            delay_max: secs(1),
            drop: Rational64::zero(),
            banks: Vec::new(),
            clients: Vec::new(),
            schedule: Vec::new(),
        }
    }
}

/// The client task vocabulary, plus the fault triggers. Money amounts must
/// be positive integers.
fn validate_trigger(term: &Term) -> Result<(), String> {
    let f = term.functor().map(|f| f.as_str()).unwrap_or("");
    let args = term.args();
    let atom = |i: usize| args.get(i).map_or(false, |t| matches!(t, Term::Atom(_)));
    let amount = |i: usize| args.get(i).and_then(|t| t.as_int()).map_or(false, |v| v > 0);
    let ok = match (f, args.len()) {
        ("look-up", 0) => true,
        ("look-up", 1) => atom(0),
        ("look-up", 2) => atom(0) && atom(1),
        ("deposit", 3) | ("withdraw", 3) => atom(0) && atom(1) && amount(2),
        ("transfer", 5) => atom(0) && atom(1) && amount(2) && atom(3) && atom(4),
        ("create", 2) | ("delete", 2) => atom(0) && atom(1),
        ("suspend", 1) | ("resume", 1) => atom(0),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("not a valid client task: {term}"))
    }
}

impl Scenario {
    pub fn parse(src: &str) -> Result<Scenario, ScenarioParseError> {
        let mut sc = Scenario::default();
        for (i, raw) in src.lines().enumerate() {
            let lineno = i + 1;
            let err = |msg: String| ScenarioParseError { line: lineno, msg };
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words[0] {
                "seed" => {
                    let [_, n] = words[..] else {
                        return Err(err("usage: seed <n>".into()));
                    };
                    sc.seed = n.parse().map_err(|_| err(format!("bad seed {n}")))?;
                }
                "timer" => {
                    let [_, t] = words[..] else {
                        return Err(err("usage: timer <t>".into()));
                    };
                    let t = parse_time(t).map_err(|e| err(e))?;
                    if t <= Time::zero() {
                        return Err(err("timer must be positive".into()));
                    }
                    sc.timer = t;
                }
                "delay" => {
                    let [_, lo, hi] = words[..] else {
                        return Err(err("usage: delay <min> <max>".into()));
                    };
                    let lo = parse_time(lo).map_err(|e| err(e))?;
                    let hi = parse_time(hi).map_err(|e| err(e))?;
                    if lo < Time::zero() || hi < lo {
                        return Err(err("need 0 <= min <= max".into()));
                    }
                    sc.delay_min = lo;
                    sc.delay_max = hi;
                }
                "drop" => {
                    let [_, p] = words[..] else {
                        return Err(err("usage: drop <p>".into()));
                    };
                    let p = parse_time(p).map_err(|e| err(e))?;
                    if p < Rational64::zero() || p > Rational64::from_integer(1) {
                        return Err(err("drop probability must be in [0,1]".into()));
                    }
                    sc.drop = p;
                }
                "bank" => {
                    let [_, name, kw, n] = words[..] else {
                        return Err(err("usage: bank <name> replicas <n>".into()));
                    };
                    if kw != "replicas" {
                        return Err(err("usage: bank <name> replicas <n>".into()));
                    }
                    let n: usize = n.parse().map_err(|_| err(format!("bad replica count {n}")))?;
                    if n == 0 {
                        return Err(err("replica count must be at least 1".into()));
                    }
                    sc.banks.push(BankDecl {
                        name: name.to_string(),
                        replicas: n,
                        accounts: Vec::new(),
                    });
                }
                "account" => {
                    let [_, bank, account, balance] = words[..] else {
                        return Err(err("usage: account <bank> <account> <balance>".into()));
                    };
                    let balance: i64 =
                        balance.parse().map_err(|_| err(format!("bad balance {balance}")))?;
                    if balance < 0 {
                        return Err(err("opening balance must not be negative".into()));
                    }
                    let decl = sc
                        .banks
                        .iter_mut()
                        .find(|b| b.name == bank)
                        .ok_or_else(|| err(format!("unknown bank {bank}")))?;
                    decl.accounts.push((account.to_string(), balance));
                }
                "client" => {
                    let [_, name] = words[..] else {
                        return Err(err("usage: client <name>".into()));
                    };
                    sc.clients.push(name.to_string());
                }
                "trigger" => {
                    let [_, agent, term, kw, at] = words[..] else {
                        return Err(err("usage: trigger <agent> <term> at <t>".into()));
                    };
                    if kw != "at" {
                        return Err(err("usage: trigger <agent> <term> at <t>".into()));
                    }
                    let term = Term::parse(term).map_err(|e| err(e.to_string()))?;
                    validate_trigger(&term).map_err(|e| err(e))?;
                    let at = parse_time(at).map_err(|e| err(e))?;
                    // suspend/resume triggers are world-level fault commands.
                    let item = match (term.functor().map(|f| f.as_str()), term.args()) {
                        (Some("suspend"), [s]) => ScheduledItem::Fault {
                            cmd: FaultCmd::Suspend(AgentId::new(s.to_string())),
                            at,
                        },
                        (Some("resume"), [s]) => ScheduledItem::Fault {
                            cmd: FaultCmd::Resume(AgentId::new(s.to_string())),
                            at,
                        },
                        _ => ScheduledItem::Trigger {
                            agent: agent.to_string(),
                            term,
                            at,
                        },
                    };
                    sc.schedule.push(item);
                }
                "suspend" | "resume" => {
                    let [kw, agent, at_kw, at] = words[..] else {
                        return Err(err(format!("usage: {} <agent> at <t>", words[0])));
                    };
                    if at_kw != "at" {
                        return Err(err(format!("usage: {kw} <agent> at <t>")));
                    }
                    let at = parse_time(at).map_err(|e| err(e))?;
                    let id = AgentId::new(agent);
                    let cmd = if kw == "suspend" {
                        FaultCmd::Suspend(id)
                    } else {
                        FaultCmd::Resume(id)
                    };
                    sc.schedule.push(ScheduledItem::Fault { cmd, at });
                }
                "partition" => {
                    let rest = line.strip_prefix("partition").unwrap().trim();
                    let Some((groups_str, at)) = rest.rsplit_once(" at ") else {
                        return Err(err("usage: partition <group>|<group> at <t>".into()));
                    };
                    let at = parse_time(at.trim()).map_err(|e| err(e))?;
                    let mut groups: Vec<BTreeSet<AgentId>> = Vec::new();
                    for g in groups_str.split('|') {
                        let members: BTreeSet<AgentId> = g
                            .split(',')
                            .map(|m| m.trim())
                            .filter(|m| !m.is_empty())
                            .map(AgentId::from)
                            .collect();
                        if members.is_empty() {
                            return Err(err("empty partition group".into()));
                        }
                        groups.push(members);
                    }
                    if groups.len() < 2 {
                        return Err(err("a partition needs at least two groups".into()));
                    }
                    sc.schedule.push(ScheduledItem::Fault {
                        cmd: FaultCmd::Partition(groups),
                        at,
                    });
                }
                "heal" => {
                    let [_, kw, at] = words[..] else {
                        return Err(err("usage: heal at <t>".into()));
                    };
                    if kw != "at" {
                        return Err(err("usage: heal at <t>".into()));
                    }
                    let at = parse_time(at).map_err(|e| err(e))?;
                    sc.schedule.push(ScheduledItem::Fault { cmd: FaultCmd::Heal, at });
                }
                other => return Err(err(format!("unknown directive {other}"))),
            }
        }
        Ok(sc)
    }

    pub fn bank_symbols(&self) -> Vec<Symbol> {
        let mut names: Vec<Symbol> = self.banks.iter().map(|b| b.name.as_str().into()).collect();
        names.sort();
        names
    }
}

pub type BankWorld = World<CommHost<BankHost>>;

/// Build the world a scenario describes: replicas `b.s1..b.sn` per bank,
/// the declared clients, net policy and the full trigger/fault schedule.
pub fn build_world(sc: &Scenario) -> Result<BankWorld, EngineError> {
    let mut config = BankConfig::new(sc.timer);
    for b in &sc.banks {
        config.add_bank(&b.name, b.replicas);
    }
    let mut host = BankHost::new(config);
    for b in &sc.banks {
        for (a, balance) in &b.accounts {
            host.seed_account(&b.name, a, *balance);
        }
    }

    let mut w = World::new(sc.seed, CommHost::new(host));
    w.policy.delay = if sc.delay_min == sc.delay_max {
        DelayPolicy::Fixed(sc.delay_min)
    } else {
        DelayPolicy::Uniform {
            min: sc.delay_min,
            max: sc.delay_max,
        }
    };
    w.policy.drop = if sc.drop.is_zero() {
        DropPolicy::Never
    } else {
        DropPolicy::Prob(sc.drop)
    };

    w.register_ruleset("bank-client", bank_client_rules(&sc.bank_symbols(), sc.timer))?;
    w.register_ruleset("bank-server", bank_server_rules())?;

    for b in &sc.banks {
        for i in 1..=b.replicas {
            let name = crate::banking::replica_name(&b.name, i);
            let state = Term::app("server", vec![Term::atom(&name)]);
            w.spawn(name, "bank-server", [state])?;
        }
    }
    for c in &sc.clients {
        let state = Term::app("client", vec![Term::atom(c)]);
        w.spawn(c.clone(), "bank-client", [state])?;
    }

    for item in &sc.schedule {
        match item {
            ScheduledItem::Trigger { agent, term, at } => {
                let id = AgentId::new(agent.clone());
                if w.agent(&id).is_none() {
                    return Err(EngineError::Scenario(format!(
                        "trigger targets unknown agent {agent}"
                    )));
                }
                let wrapped = Term::app("trigger", vec![term.clone()]);
                w.schedule_delivery(id, wrapped, *at);
            }
            ScheduledItem::Fault { cmd, at } => {
                w.schedule_fault(cmd.clone(), *at);
            }
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub max_events: Option<u64>,
    pub check: bool,
}

#[derive(Debug)]
pub struct RunReport {
    pub status: RunStatus,
    pub trace: Vec<String>,
    pub violations: Vec<String>,
    pub snapshot: String,
    pub statements: String,
    pub ops: Vec<OpRecord>,
}

/// Invariants checked by `--check`: no negative balance anywhere, all
/// non-suspended replicas of each bank converged, and every statement list
/// replays to its recorded balances and version.
pub fn check_world(w: &BankWorld) -> Vec<String> {
    let host = &w.host().app;
    let suspended: BTreeSet<AgentId> = w.suspended_ids().cloned().collect();
    let mut violations = Vec::new();
    if let Err(e) = host.check_no_overdraft() {
        violations.push(format!("overdraft: {e}"));
    }
    if let Err(e) = host.check_convergence(&suspended) {
        violations.push(format!("divergence: {e}"));
    }
    if let Err(e) = host.check_statements() {
        violations.push(format!("statements: {e}"));
    }
    violations
}

/// Execute a scenario to quiescence and collect trace, dumps and checks.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunReport, EngineError> {
    let mut w = build_world(sc)?;
    w.set_max_events(opts.max_events);
    let status = w.advance()?;
    let violations = if opts.check { check_world(&w) } else { Vec::new() };
    let host = &w.host().app;
    Ok(RunReport {
        status,
        violations,
        snapshot: host.snapshot_dump(),
        statements: host.statement_dump(),
        ops: host.ops().to_vec(),
        trace: w.trace().to_vec(),
    })
}

/// Ground truth for fault-free scenarios: apply the trigger schedule
/// sequentially (time order, file order on ties) against one logical
/// ledger per bank.
pub fn replay_oracle(sc: &Scenario) -> Result<Oracle, EngineError> {
    let mut oracle = Oracle::new();
    for b in &sc.banks {
        oracle.add_bank(&b.name);
        for (a, balance) in &b.accounts {
            oracle.seed_account(&b.name, a, *balance);
        }
    }
    let mut triggers: Vec<(Time, usize, &Term)> = Vec::new();
    for (i, item) in sc.schedule.iter().enumerate() {
        match item {
            ScheduledItem::Trigger { term, at, .. } => triggers.push((*at, i, term)),
            ScheduledItem::Fault { .. } => {
                return Err(EngineError::Scenario(
                    "replay oracle is defined for fault-free schedules only".into(),
                ));
            }
        }
    }
    triggers.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (_, _, term) in triggers {
        oracle.apply(term);
    }
    Ok(oracle)
}

/// Compare the replicated end state (every replica of every bank) and the
/// recorded task outcomes against the oracle. Correlation ids are excluded
/// from statement comparison; everything else must match exactly.
pub fn compare_with_oracle(host: &BankHost, oracle: &Oracle) -> Result<(), String> {
    for (bank, replicas) in &host.config.banks {
        let truth = oracle.banks.get(bank).cloned().unwrap_or_default();
        let truth_proj: Vec<(&Symbol, _)> = truth.iter().map(|(a, acct)| (a, acct.projection())).collect();
        for r in replicas {
            let ledger = host
                .ledger(r)
                .ok_or_else(|| format!("missing ledger for replica {r}"))?;
            let got: Vec<(&Symbol, _)> =
                ledger.accounts.iter().map(|(a, acct)| (a, acct.projection())).collect();
            if got != truth_proj {
                return Err(format!("replica {r} of bank {bank} differs from the oracle"));
            }
        }
    }

    let sim = host.ops();
    if sim.len() != oracle.ops.len() {
        return Err(format!(
            "operation count mismatch: simulated {} vs oracle {}",
            sim.len(),
            oracle.ops.len()
        ));
    }
    for (i, (s, o)) in sim.iter().zip(&oracle.ops).enumerate() {
        if s.trigger != o.trigger {
            return Err(format!("op {i}: trigger {} vs oracle {}", s.trigger, o.trigger));
        }
        match s.outcome {
            None => return Err(format!("op {i} ({}) was never decided", s.trigger)),
            Some(out) if out != o.outcome => {
                return Err(format!("op {i} ({}): {} vs oracle {}", s.trigger, out, o.outcome));
            }
            _ => {}
        }
        if s.read != o.read {
            return Err(format!("op {i} ({}): read results differ from oracle", s.trigger));
        }
    }
    Ok(())
}
