//! Remote banking over replicated ledgers.
//!
//! Each bank runs a pre-defined set of replica servers, every one holding a
//! full copy of the bank's ledger. Writes (deposit, withdraw, create,
//! delete, transfer legs) are RPC broadcasts under write-all: every live
//! replica applies the mutation eagerly and replies; the client commits or
//! aborts at its timeout via majority consensus, and an abort broadcasts a
//! rollback that restores the pre-write state on whichever replicas
//! applied. Look-ups are query-style reads under read-any: the first
//! replica's stream is committed, follow-up streams are absorbed.
//!
//! Transfers are nested transactions built on top of withdraw and deposit:
//! the withdraw leg runs first, a committed withdraw triggers the deposit
//! leg, and an aborted deposit leg is compensated by depositing the amount
//! back. Either both legs end up visible on all live replicas or neither
//! does.
//!
//! Trigger vocabulary (client tasks): `look-up`, `look-up(B)`,
//! `look-up(B,A)`, `deposit(B,A,Am)`, `withdraw(B,A,Am)`,
//! `transfer(B1,A1,Am,B2,A2)`, `create(B,A)`, `delete(B,A)`; plus
//! `suspend(S)` / `resume(S)`, which the scenario layer turns into
//! world-level fault commands (a suspended server could not process its
//! own suspension).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::kernel::{AgentId, EngineError, GuardScope, Rule, Services};
use crate::term::{Symbol, Term};
use crate::time::Time;
use crate::toolkit::{
    cleanup_rule, majority_policy, make_query_server_rules, make_rpc_server_rules,
    query_initiation_rule, query_reply_rules, query_timeout_rules, rpc_initiation_rule,
    rpc_reply_rules, rpc_timeout_rules, timer_rule, CommHooks, ConnKind, Decision,
    QueryClientConfig, RpcClientConfig, GET_RPC_ID, REQ_BEGIN,
};

fn pt(s: &str) -> Term {
    Term::parse(s).expect("static rule pattern")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EntryKind {
    Deposit,
    Withdraw,
    TransferIn,
    TransferOut,
    OverdraftAttempt,
    Create,
    Delete,
}

impl EntryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryKind::Deposit => "deposit",
            EntryKind::Withdraw => "withdraw",
            EntryKind::TransferIn => "transfer-in",
            EntryKind::TransferOut => "transfer-out",
            EntryKind::OverdraftAttempt => "overdraft-attempt",
            EntryKind::Create => "create",
            EntryKind::Delete => "delete",
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of an account's transaction history. Overdraft attempts are
/// recorded but leave balance and version untouched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatementEntry {
    pub kind: EntryKind,
    pub amount: i64,
    pub correlation: Term,
    pub resulting_balance: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Account {
    /// Balance the account was seeded with (0 for created accounts);
    /// baseline for statement-consistency checks.
    pub opening_balance: i64,
    pub balance: i64,
    /// Increments by exactly 1 per committed mutation.
    pub version: u64,
    pub statements: Vec<StatementEntry>,
}

impl Account {
    pub fn seeded(balance: i64) -> Self {
        Account {
            opening_balance: balance,
            balance,
            version: 0,
            statements: Vec::new(),
        }
    }

    /// Comparable content: balance, version and the statement history
    /// without correlation ids (the oracle cannot know wire-level ids).
    pub fn projection(&self) -> (i64, u64, Vec<(EntryKind, i64, i64)>) {
        (
            self.balance,
            self.version,
            self.statements
                .iter()
                .map(|e| (e.kind, e.amount, e.resulting_balance))
                .collect(),
        )
    }
}

/// One replica's copy of a bank's database.
#[derive(Clone, Debug)]
pub struct Ledger {
    pub bank: Symbol,
    pub accounts: BTreeMap<Symbol, Account>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Committed,
    Aborted,
    AbortedOverdraft,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Committed => "committed",
            Outcome::Aborted => "aborted",
            Outcome::AbortedOverdraft => "aborted-overdraft",
        })
    }
}

/// Outcome of one client task, in initiation order. Transfers are one
/// record; a bare `look-up` becomes one record per bank.
#[derive(Clone, Debug)]
pub struct OpRecord {
    pub trigger: Term,
    pub outcome: Option<Outcome>,
    pub read: Vec<Term>,
    pub note: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BankConfig {
    /// Bank name -> its replica servers ("pre-defined number of servers").
    pub banks: BTreeMap<Symbol, Vec<AgentId>>,
    /// Timeout attached to every request.
    pub timer: Time,
}

impl BankConfig {
    pub fn new(timer: Time) -> Self {
        BankConfig {
            banks: BTreeMap::new(),
            timer,
        }
    }

    pub fn add_bank(&mut self, bank: &str, replicas: usize) {
        let ids = (1..=replicas)
            .map(|i| AgentId::new(replica_name(bank, i)))
            .collect();
        self.banks.insert(bank.into(), ids);
    }

    pub fn bank_of_replica(&self, replica: &AgentId) -> Option<&Symbol> {
        self.banks
            .iter()
            .find(|(_, reps)| reps.contains(replica))
            .map(|(b, _)| b)
    }

    pub fn bank_names(&self) -> Vec<Symbol> {
        self.banks.keys().cloned().collect()
    }
}

pub fn replica_name(bank: &str, index: usize) -> String {
    format!("{bank}.s{index}")
}

/// Which bank a request payload addresses.
fn payload_bank(params: &Term) -> Option<Symbol> {
    let f = params.functor()?;
    let idx = match f.as_str() {
        "deposit" | "withdraw" | "create" | "delete" | "rollback" | "look-up" => 0,
        "xfer-out" | "xfer-in" => 1,
        _ => return None,
    };
    params.args().get(idx)?.functor().cloned()
}

#[derive(Clone, Debug)]
struct Undo {
    account: Symbol,
    /// Snapshot before the mutation; `None` means the account did not exist.
    prior: Option<Account>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TxnStage {
    Withdraw,
    Deposit,
    Compensate,
}

#[derive(Clone, Debug)]
struct TxnState {
    stage: TxnStage,
    from_bank: Symbol,
    from_account: Symbol,
    to_bank: Symbol,
    to_account: Symbol,
    amount: i64,
    op_index: usize,
}

#[derive(Clone, Debug)]
struct RequestState {
    payload: Term,
    kind: ConnKind,
    bank: Option<Symbol>,
    client: AgentId,
    op_index: Option<usize>,
    txn: Option<Term>,
    replies: Vec<(AgentId, Term)>,
    /// First replying server of a query: its stream is the committed read.
    read_main: Option<AgentId>,
    read: Vec<Term>,
    decided: Option<Outcome>,
}

/// Application state behind the banking rule sets: per-replica ledgers,
/// request/transaction bookkeeping and the recorded task outcomes.
#[derive(Clone, Debug)]
pub struct BankHost {
    pub config: BankConfig,
    ledgers: BTreeMap<AgentId, Ledger>,
    /// Per replica: applied writes that can still be rolled back.
    applied: BTreeMap<AgentId, BTreeMap<Term, Undo>>,
    /// Per replica: correlations already rolled back; a late-arriving
    /// original request for one of these must not be applied.
    rolled_back: BTreeMap<AgentId, BTreeSet<Term>>,
    requests: BTreeMap<Term, RequestState>,
    txns: BTreeMap<Term, TxnState>,
    ops: Vec<OpRecord>,
}

impl BankHost {
    pub fn new(config: BankConfig) -> Self {
        let mut ledgers = BTreeMap::new();
        let mut applied = BTreeMap::new();
        let mut rolled_back = BTreeMap::new();
        for (bank, replicas) in &config.banks {
            for r in replicas {
                ledgers.insert(
                    r.clone(),
                    Ledger {
                        bank: bank.clone(),
                        accounts: BTreeMap::new(),
                    },
                );
                applied.insert(r.clone(), BTreeMap::new());
                rolled_back.insert(r.clone(), BTreeSet::new());
            }
        }
        BankHost {
            config,
            ledgers,
            applied,
            rolled_back,
            requests: BTreeMap::new(),
            txns: BTreeMap::new(),
            ops: Vec::new(),
        }
    }

    /// Seed an account with an opening balance on every replica of `bank`.
    pub fn seed_account(&mut self, bank: &str, account: &str, balance: i64) {
        let bank: Symbol = bank.into();
        for (replica, ledger) in self.ledgers.iter_mut() {
            if ledger.bank == bank {
                ledger.accounts.insert(account.into(), Account::seeded(balance));
                let _ = replica;
            }
        }
    }

    pub fn ledger(&self, replica: &AgentId) -> Option<&Ledger> {
        self.ledgers.get(replica)
    }

    pub fn ledger_mut(&mut self, replica: &AgentId) -> Option<&mut Ledger> {
        self.ledgers.get_mut(replica)
    }

    pub fn ledgers(&self) -> impl Iterator<Item = (&AgentId, &Ledger)> {
        self.ledgers.iter()
    }

    pub fn ops(&self) -> &[OpRecord] {
        &self.ops
    }

    /// Sum of balances across one replica of each bank (read-any).
    pub fn read_any_total(&self) -> i64 {
        self.config
            .banks
            .values()
            .filter_map(|reps| reps.first())
            .filter_map(|r| self.ledgers.get(r))
            .map(|l| l.accounts.values().map(|a| a.balance).sum::<i64>())
            .sum()
    }

    // --- replica-side write application -----------------------------------

    fn apply_write(
        &mut self,
        replica: &AgentId,
        corr: &Term,
        kind: EntryKind,
        account: &Symbol,
        amount: i64,
    ) -> Term {
        if self.rolled_back.get(replica).is_some_and(|s| s.contains(corr)) {
            return pt("err(aborted)");
        }
        let Some(ledger) = self.ledgers.get_mut(replica) else {
            return pt("err(no-replica)");
        };
        let Some(acct) = ledger.accounts.get_mut(account) else {
            return pt("err(no-account)");
        };
        let debit = matches!(kind, EntryKind::Withdraw | EntryKind::TransferOut);
        if debit && acct.balance < amount {
            acct.statements.push(StatementEntry {
                kind: EntryKind::OverdraftAttempt,
                amount,
                correlation: corr.clone(),
                resulting_balance: acct.balance,
            });
            return pt("err(overdraft)");
        }
        let prior = acct.clone();
        if debit {
            acct.balance -= amount;
        } else {
            acct.balance += amount;
        }
        acct.version += 1;
        acct.statements.push(StatementEntry {
            kind,
            amount,
            correlation: corr.clone(),
            resulting_balance: acct.balance,
        });
        let version = acct.version;
        self.applied.get_mut(replica).unwrap().insert(
            corr.clone(),
            Undo {
                account: account.clone(),
                prior: Some(prior),
            },
        );
        Term::app("ok", vec![Term::int(version as i64)])
    }

    fn apply_create(&mut self, replica: &AgentId, corr: &Term, account: &Symbol) -> Term {
        if self.rolled_back.get(replica).is_some_and(|s| s.contains(corr)) {
            return pt("err(aborted)");
        }
        let Some(ledger) = self.ledgers.get_mut(replica) else {
            return pt("err(no-replica)");
        };
        if ledger.accounts.contains_key(account) {
            return pt("err(exists)");
        }
        let mut acct = Account::seeded(0);
        acct.version = 1;
        acct.statements.push(StatementEntry {
            kind: EntryKind::Create,
            amount: 0,
            correlation: corr.clone(),
            resulting_balance: 0,
        });
        ledger.accounts.insert(account.clone(), acct);
        self.applied.get_mut(replica).unwrap().insert(
            corr.clone(),
            Undo {
                account: account.clone(),
                prior: None,
            },
        );
        pt("ok(1)")
    }

    fn apply_delete(&mut self, replica: &AgentId, corr: &Term, account: &Symbol) -> Term {
        if self.rolled_back.get(replica).is_some_and(|s| s.contains(corr)) {
            return pt("err(aborted)");
        }
        let Some(ledger) = self.ledgers.get_mut(replica) else {
            return pt("err(no-replica)");
        };
        let Some(acct) = ledger.accounts.get(account) else {
            return pt("err(no-account)");
        };
        if acct.balance != 0 {
            return pt("err(nonzero-balance)");
        }
        let prior = acct.clone();
        ledger.accounts.remove(account);
        self.applied.get_mut(replica).unwrap().insert(
            corr.clone(),
            Undo {
                account: account.clone(),
                prior: Some(prior),
            },
        );
        pt("ok(deleted)")
    }

    /// Undo a write this replica applied for `orig`: restore the pre-write
    /// snapshot exactly (balance, version and statements), so replicas that
    /// applied an aborted write converge back with those that never did.
    fn apply_rollback(&mut self, replica: &AgentId, orig: &Term) -> Term {
        if let Some(set) = self.rolled_back.get_mut(replica) {
            set.insert(orig.clone());
        }
        let undo = self.applied.get_mut(replica).and_then(|m| m.remove(orig));
        let Some(undo) = undo else {
            return pt("ok(noop)");
        };
        let Some(ledger) = self.ledgers.get_mut(replica) else {
            return pt("err(no-replica)");
        };
        match undo.prior {
            Some(acct) => {
                ledger.accounts.insert(undo.account, acct);
            }
            None => {
                ledger.accounts.remove(&undo.account);
            }
        }
        pt("ok(rolled-back)")
    }

    // --- client-side decision --------------------------------------------

    fn finish_op(&mut self, index: usize, outcome: Outcome, read: Vec<Term>, note: Option<String>) {
        let rec = &mut self.ops[index];
        rec.outcome = Some(outcome);
        rec.read = read;
        if note.is_some() {
            rec.note = note;
        }
    }

    fn decide(&mut self, client: &AgentId, corr: &Term, svc: &mut Services<'_>) {
        let Some(req) = self.requests.get(corr) else {
            return;
        };
        if req.decided.is_some() {
            return;
        }
        let req = req.clone();

        if req.kind == ConnKind::Query {
            self.requests.get_mut(corr).unwrap().decided = Some(Outcome::Committed);
            if let Some(i) = req.op_index {
                self.finish_op(i, Outcome::Committed, req.read.clone(), None);
            }
            return;
        }

        let total = req
            .bank
            .as_ref()
            .and_then(|b| self.config.banks.get(b))
            .map(|reps| reps.len())
            .unwrap_or(0);
        let ok_servers: BTreeSet<AgentId> = req
            .replies
            .iter()
            .filter(|(_, r)| r.functor().map(|f| f.as_str()) == Some("ok"))
            .map(|(s, _)| s.clone())
            .collect();
        let overdraft = req
            .replies
            .iter()
            .any(|(_, r)| r == &pt("err(overdraft)"));
        let outcome = if overdraft {
            Outcome::AbortedOverdraft
        } else if total > 0 && majority_policy(total, &ok_servers) == Decision::Commit {
            Outcome::Committed
        } else {
            Outcome::Aborted
        };
        self.requests.get_mut(corr).unwrap().decided = Some(outcome);

        if outcome != Outcome::Committed {
            if let Some(bank) = &req.bank {
                // Compensating rollback: restores the pre-write state on
                // replicas that applied, including ones that will apply the
                // buffered request only after a resume.
                let rollback = Term::app(
                    "trigger",
                    vec![Term::app("rollback", vec![Term::atom(bank.as_str()), corr.clone()])],
                );
                svc.deliver(client.clone(), rollback);
            }
        }

        match req.txn {
            None => {
                if let Some(i) = req.op_index {
                    self.finish_op(i, outcome, Vec::new(), None);
                }
            }
            Some(token) => self.advance_txn(client, &token, outcome, svc),
        }
    }

    fn advance_txn(&mut self, client: &AgentId, token: &Term, leg_outcome: Outcome, svc: &mut Services<'_>) {
        let Some(txn) = self.txns.get(token).cloned() else {
            return;
        };
        let leg_trigger = |bank: &Symbol, account: &Symbol, amount: i64| {
            Term::app(
                "trigger",
                vec![Term::app(
                    "xfer-in",
                    vec![
                        token.clone(),
                        Term::atom(bank.as_str()),
                        Term::atom(account.as_str()),
                        Term::int(amount),
                    ],
                )],
            )
        };
        match txn.stage {
            TxnStage::Withdraw => {
                if leg_outcome == Outcome::Committed {
                    self.txns.get_mut(token).unwrap().stage = TxnStage::Deposit;
                    svc.deliver(client.clone(), leg_trigger(&txn.to_bank, &txn.to_account, txn.amount));
                } else {
                    // First leg refused: nothing committed, nothing to undo.
                    self.finish_op(txn.op_index, leg_outcome, Vec::new(), None);
                }
            }
            TxnStage::Deposit => {
                if leg_outcome == Outcome::Committed {
                    self.finish_op(txn.op_index, Outcome::Committed, Vec::new(), None);
                } else {
                    // Deposit leg failed: give the money back to the source.
                    self.txns.get_mut(token).unwrap().stage = TxnStage::Compensate;
                    svc.deliver(
                        client.clone(),
                        leg_trigger(&txn.from_bank, &txn.from_account, txn.amount),
                    );
                }
            }
            TxnStage::Compensate => {
                let note = if leg_outcome == Outcome::Committed {
                    None
                } else {
                    Some("compensation-failed".to_string())
                };
                self.finish_op(txn.op_index, Outcome::Aborted, Vec::new(), note);
            }
        }
    }

    // --- invariant checks ---------------------------------------------------

    /// No committed overdraft: every balance on every replica is >= 0.
    pub fn check_no_overdraft(&self) -> Result<(), String> {
        for (replica, ledger) in &self.ledgers {
            for (a, acct) in &ledger.accounts {
                if acct.balance < 0 {
                    return Err(format!("negative balance {} at {replica} {a}", acct.balance));
                }
            }
        }
        Ok(())
    }

    /// All non-excluded replicas of each bank hold identical account sets
    /// with identical (balance, version) and statement projections.
    pub fn check_convergence(&self, excluded: &BTreeSet<AgentId>) -> Result<(), String> {
        for (bank, replicas) in &self.config.banks {
            let mut reference: Option<(&AgentId, BTreeMap<&Symbol, _>)> = None;
            for r in replicas {
                if excluded.contains(r) {
                    continue;
                }
                let proj: BTreeMap<&Symbol, _> = self.ledgers[r]
                    .accounts
                    .iter()
                    .map(|(a, acct)| (a, acct.projection()))
                    .collect();
                match &reference {
                    None => reference = Some((r, proj)),
                    Some((r0, p0)) => {
                        if *p0 != proj {
                            return Err(format!(
                                "replicas {r0} and {r} of bank {bank} diverge"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Statement lists replay to the recorded balances and versions.
    pub fn check_statements(&self) -> Result<(), String> {
        for (replica, ledger) in &self.ledgers {
            for (a, acct) in &ledger.accounts {
                let mut balance = acct.opening_balance;
                let mut mutations = 0u64;
                for e in &acct.statements {
                    match e.kind {
                        EntryKind::Deposit | EntryKind::TransferIn => balance += e.amount,
                        EntryKind::Withdraw | EntryKind::TransferOut => balance -= e.amount,
                        EntryKind::OverdraftAttempt => continue,
                        EntryKind::Create | EntryKind::Delete => {}
                    }
                    mutations += 1;
                    if e.resulting_balance != balance {
                        return Err(format!(
                            "statement mismatch at {replica} {a}: recorded {} computed {balance}",
                            e.resulting_balance
                        ));
                    }
                }
                if balance != acct.balance {
                    return Err(format!(
                        "balance mismatch at {replica} {a}: statements give {balance}, ledger has {}",
                        acct.balance
                    ));
                }
                if mutations != acct.version {
                    return Err(format!(
                        "version mismatch at {replica} {a}: {mutations} mutations, version {}",
                        acct.version
                    ));
                }
            }
        }
        Ok(())
    }

    // --- dumps ----------------------------------------------------------------

    /// Per replica, `bank account balance version` lines.
    pub fn snapshot_dump(&self) -> String {
        let mut out = String::new();
        for (replica, ledger) in &self.ledgers {
            out.push_str(&format!("replica {replica}\n"));
            for (a, acct) in &ledger.accounts {
                out.push_str(&format!("{} {} {} {}\n", ledger.bank, a, acct.balance, acct.version));
            }
        }
        out
    }

    /// Per replica, `bank account seq kind amount resulting_balance correlation` lines.
    pub fn statement_dump(&self) -> String {
        let mut out = String::new();
        for (replica, ledger) in &self.ledgers {
            out.push_str(&format!("replica {replica}\n"));
            for (a, acct) in &ledger.accounts {
                for (i, e) in acct.statements.iter().enumerate() {
                    out.push_str(&format!(
                        "{} {} {} {} {} {} {}\n",
                        ledger.bank, a, i, e.kind, e.amount, e.resulting_balance, e.correlation
                    ));
                }
            }
        }
        out
    }
}

fn statement_list_term(bank: &Symbol, account: &Symbol, acct: &Account) -> Term {
    let entries: Vec<Term> = acct
        .statements
        .iter()
        .map(|e| {
            Term::app(
                "entry",
                vec![
                    Term::atom(e.kind.as_str()),
                    Term::int(e.amount),
                    Term::int(e.resulting_balance),
                ],
            )
        })
        .collect();
    Term::app(
        "statement-list",
        vec![
            Term::atom(bank.as_str()),
            Term::atom(account.as_str()),
            Term::int(acct.balance),
            Term::int(acct.version as i64),
            Term::app("hist", entries),
        ],
    )
}

impl CommHooks for BankHost {
    fn produce(&mut self, server: &AgentId, corr: &Term, params: &Term, _svc: &mut Services<'_>) -> Term {
        let args = params.args();
        let atom_arg = |i: usize| -> Option<Symbol> { args.get(i)?.functor().cloned() };
        let int_arg = |i: usize| -> Option<i64> { args.get(i)?.as_int() };
        let r = match params.functor().map(|f| f.as_str()) {
            Some("deposit") => {
                let (Some(a), Some(am)) = (atom_arg(1), int_arg(2)) else {
                    return pt("err(bad-request)");
                };
                self.apply_write(server, corr, EntryKind::Deposit, &a, am)
            }
            Some("withdraw") => {
                let (Some(a), Some(am)) = (atom_arg(1), int_arg(2)) else {
                    return pt("err(bad-request)");
                };
                self.apply_write(server, corr, EntryKind::Withdraw, &a, am)
            }
            Some("xfer-out") => {
                let (Some(a), Some(am)) = (atom_arg(2), int_arg(3)) else {
                    return pt("err(bad-request)");
                };
                self.apply_write(server, corr, EntryKind::TransferOut, &a, am)
            }
            Some("xfer-in") => {
                let (Some(a), Some(am)) = (atom_arg(2), int_arg(3)) else {
                    return pt("err(bad-request)");
                };
                self.apply_write(server, corr, EntryKind::TransferIn, &a, am)
            }
            Some("create") => match atom_arg(1) {
                Some(a) => self.apply_create(server, corr, &a),
                None => pt("err(bad-request)"),
            },
            Some("delete") => match atom_arg(1) {
                Some(a) => self.apply_delete(server, corr, &a),
                None => pt("err(bad-request)"),
            },
            Some("rollback") => match args.get(1) {
                Some(orig) => self.apply_rollback(server, orig),
                None => pt("err(bad-request)"),
            },
            _ => pt("err(bad-request)"),
        };
        r
    }

    fn produce_stream(
        &mut self,
        server: &AgentId,
        _corr: &Term,
        params: &Term,
        _svc: &mut Services<'_>,
    ) -> Vec<Term> {
        let Some(ledger) = self.ledgers.get(server) else {
            return Vec::new();
        };
        let bank = ledger.bank.clone();
        match (params.functor().map(|f| f.as_str()), params.args()) {
            // One message per account: the statement list of each account of
            // this bank, in account order.
            (Some("look-up"), [_bank]) => ledger
                .accounts
                .iter()
                .map(|(a, acct)| statement_list_term(&bank, a, acct))
                .collect(),
            (Some("look-up"), [_bank, account]) => {
                let Some(a) = account.functor() else {
                    return Vec::new();
                };
                ledger
                    .accounts
                    .get(a)
                    .map(|acct| vec![statement_list_term(&bank, a, acct)])
                    .unwrap_or_default()
            }
            _ => Vec::new(),
        }
    }

    fn consume(&mut self, server: &AgentId, corr: &Term, result: &Term, _svc: &mut Services<'_>) {
        let Some(req) = self.requests.get_mut(corr) else {
            return;
        };
        req.replies.push((server.clone(), result.clone()));
        if req.kind == ConnKind::Query {
            // Read-any: commit the stream of the first server that answers,
            // absorb every other stream.
            if req.read_main.is_none() {
                req.read_main = Some(server.clone());
            }
            if req.read_main.as_ref() == Some(server) {
                req.read.push(result.clone());
            }
        }
    }

    fn some_policy(&mut self, client: &AgentId, corr: &Term, svc: &mut Services<'_>) {
        self.decide(client, corr, svc);
    }

    fn in_scope(&self, server: &AgentId, params: &Term) -> bool {
        match (payload_bank(params), self.config.bank_of_replica(server)) {
            (Some(b), Some(mine)) => &b == mine,
            _ => false,
        }
    }

    fn on_request(
        &mut self,
        client: &AgentId,
        corr: &Term,
        params: &Term,
        kind: ConnKind,
        _svc: &mut Services<'_>,
    ) {
        let functor = params.functor().map(|f| f.as_str()).unwrap_or("");
        let (op_index, txn) = match functor {
            "deposit" | "withdraw" | "create" | "delete" | "look-up" => {
                self.ops.push(OpRecord {
                    trigger: params.clone(),
                    outcome: None,
                    read: Vec::new(),
                    note: None,
                });
                (Some(self.ops.len() - 1), None)
            }
            "xfer-out" | "xfer-in" => (None, params.args().first().cloned()),
            _ => (None, None),
        };
        self.requests.insert(
            corr.clone(),
            RequestState {
                payload: params.clone(),
                kind,
                bank: payload_bank(params),
                client: client.clone(),
                op_index,
                txn,
                replies: Vec::new(),
                read_main: None,
                read: Vec::new(),
                decided: None,
            },
        );
    }

    fn extra(&mut self, hook: &Symbol, scope: &mut GuardScope<'_, '_>) -> Result<bool, EngineError> {
        match hook.as_str() {
            // txn-begin(C, B1, A1, Am, B2, A2, Token): register the nested
            // transaction and hand back its fresh token.
            "txn-begin" => {
                let client = scope.ground_arg(0)?.clone();
                let from_bank = scope.ground_arg(1)?.functor().cloned();
                let from_account = scope.ground_arg(2)?.functor().cloned();
                let amount = scope.int_arg(3)?;
                let to_bank = scope.ground_arg(4)?.functor().cloned();
                let to_account = scope.ground_arg(5)?.functor().cloned();
                let (Some(from_bank), Some(from_account), Some(to_bank), Some(to_account)) =
                    (from_bank, from_account, to_bank, to_account)
                else {
                    return Err(EngineError::Hook {
                        hook: "txn-begin".into(),
                        msg: "bank and account arguments must be atoms".into(),
                    });
                };
                let token = Term::app("txn", vec![client.clone(), Term::int(scope.svc.fresh_id() as i64)]);
                self.ops.push(OpRecord {
                    trigger: Term::app(
                        "transfer",
                        vec![
                            Term::atom(from_bank.as_str()),
                            Term::atom(from_account.as_str()),
                            Term::int(amount),
                            Term::atom(to_bank.as_str()),
                            Term::atom(to_account.as_str()),
                        ],
                    ),
                    outcome: None,
                    read: Vec::new(),
                    note: None,
                });
                self.txns.insert(
                    token.clone(),
                    TxnState {
                        stage: TxnStage::Withdraw,
                        from_bank,
                        from_account,
                        to_bank,
                        to_account,
                        amount,
                        op_index: self.ops.len() - 1,
                    },
                );
                scope.bind_arg(6, token)
            }
            _ => Err(EngineError::UnknownHook(hook.to_string())),
        }
    }
}

/// Rule set shared by every bank replica: the RPC server rule (R2) and the
/// query server chain (Q2), both scoped to the replica's own bank.
pub fn bank_server_rules() -> Vec<Rule> {
    let mut rules = make_rpc_server_rules(true);
    rules.extend(make_query_server_rules(true));
    rules
}

/// Rule set for banking clients: one initiation rule per task kind plus the
/// shared replicated reply, timeout, cleanup and timer rules. `banks` feeds
/// the bare `look-up` fan-out.
pub fn bank_client_rules(banks: &[Symbol], timer: Time) -> Vec<Rule> {
    let mut rules = Vec::new();

    // Compensation casts take priority over queued new work.
    rules.push(
        Rule::new("cast.rollback")
            .consumes([pt("client(C)"), pt("trigger(rollback(B,Orig))")])
            .guard(GET_RPC_ID, [pt("Id")])
            .guard(
                REQ_BEGIN,
                [pt("C"), pt("Id"), pt("rollback(B,Orig)"), Term::atom("cast")],
            )
            .emits([pt("msg-request(Id,rollback(B,Orig))")])
            .group([pt("client(C)")]),
    );

    // Transfers never hit the wire themselves; they unfold into legs.
    rules.push(
        Rule::new("TX1")
            .consumes([pt("client(C)"), pt("trigger(transfer(B1,A1,Am,B2,A2))")])
            .guard(
                "txn-begin",
                [pt("C"), pt("B1"), pt("A1"), pt("Am"), pt("B2"), pt("A2"), pt("Tok")],
            )
            .group([pt("client(C)"), pt("trigger(xfer-out(Tok,B1,A1,Am))")]),
    );

    // Bare look-up fans out into one per-bank query.
    let mut fan_group = vec![pt("client(C)")];
    for b in banks {
        fan_group.push(Term::app(
            "trigger",
            vec![Term::app("look-up", vec![Term::atom(b.as_str())])],
        ));
    }
    rules.push(
        Rule::new("FAN")
            .consumes([pt("client(C)"), pt("trigger(look-up)")])
            .group(fan_group),
    );

    for (suffix, pat) in [
        ("deposit", "deposit(B,A,Am)"),
        ("withdraw", "withdraw(B,A,Am)"),
        ("create", "create(B,A)"),
        ("delete", "delete(B,A)"),
        ("xfer-out", "xfer-out(Tok,B,A,Am)"),
        ("xfer-in", "xfer-in(Tok,B,A,Am)"),
    ] {
        let payload = pt(pat);
        let cfg = RpcClientConfig::new(true, Some(timer))
            .with_trigger(Term::app("trigger", vec![payload.clone()]), payload)
            .labeled(suffix);
        rules.push(rpc_initiation_rule(&cfg));
    }

    for (suffix, pat) in [("look-up1", "look-up(B)"), ("look-up2", "look-up(B,A)")] {
        let payload = pt(pat);
        let cfg = QueryClientConfig::new(true, Some(timer))
            .with_trigger(Term::app("trigger", vec![payload.clone()]), payload)
            .labeled(suffix);
        rules.push(query_initiation_rule(&cfg));
    }

    rules.extend(rpc_reply_rules(true));
    rules.extend(query_reply_rules(true, false));
    rules.extend(rpc_timeout_rules(true));
    rules.extend(query_timeout_rules(true));
    rules.push(cleanup_rule());
    rules.push(timer_rule());
    rules
}
