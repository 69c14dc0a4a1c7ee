//! Sequential replay oracle: applies a fault-free trigger schedule against
//! one in-memory ledger per bank, as ground truth for the simulated
//! replicated runs.
//!
//! The implementation is deliberately straight-line and separate from the
//! replica-side code in [`crate::banking`]: it shares the data types but
//! none of the mutation logic it is used to check.

use std::collections::BTreeMap;

use crate::banking::{Account, EntryKind, Outcome, StatementEntry};
use crate::term::{Symbol, Term};

#[derive(Clone, Debug)]
pub struct OracleOp {
    pub trigger: Term,
    pub outcome: Outcome,
    pub read: Vec<Term>,
}

/// One logical (non-replicated) ledger per bank.
#[derive(Clone, Debug, Default)]
pub struct Oracle {
    pub banks: BTreeMap<Symbol, BTreeMap<Symbol, Account>>,
    pub ops: Vec<OracleOp>,
    counter: u64,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_bank(&mut self, bank: &str) {
        self.banks.entry(bank.into()).or_default();
    }

    pub fn seed_account(&mut self, bank: &str, account: &str, balance: i64) {
        self.add_bank(bank);
        self.banks
            .get_mut(&Symbol::from(bank))
            .unwrap()
            .insert(account.into(), Account::seeded(balance));
    }

    pub fn account(&self, bank: &str, account: &str) -> Option<&Account> {
        self.banks.get(&Symbol::from(bank))?.get(&Symbol::from(account))
    }

    fn corr(&mut self) -> Term {
        self.counter += 1;
        Term::app("op", vec![Term::int(self.counter as i64)])
    }

    /// Apply one client task. Fault commands are not valid here: the oracle
    /// is only defined for fault-free schedules.
    pub fn apply(&mut self, trigger: &Term) {
        let functor = trigger.functor().map(|f| f.as_str()).unwrap_or("");
        let args = trigger.args();
        let atom = |i: usize| -> Option<Symbol> { args.get(i).and_then(|t| t.functor().cloned()) };
        let int = |i: usize| -> Option<i64> { args.get(i).and_then(|t| t.as_int()) };

        match (functor, args.len()) {
            ("deposit", 3) => {
                let (b, a, am) = (atom(0), atom(1), int(2));
                let outcome = self.credit(&b, &a, am, EntryKind::Deposit);
                self.record(trigger.clone(), outcome, Vec::new());
            }
            ("withdraw", 3) => {
                let (b, a, am) = (atom(0), atom(1), int(2));
                let outcome = self.debit(&b, &a, am, EntryKind::Withdraw);
                self.record(trigger.clone(), outcome, Vec::new());
            }
            ("create", 2) => {
                let outcome = self.create(&atom(0), &atom(1));
                self.record(trigger.clone(), outcome, Vec::new());
            }
            ("delete", 2) => {
                let outcome = self.delete(&atom(0), &atom(1));
                self.record(trigger.clone(), outcome, Vec::new());
            }
            ("transfer", 5) => {
                let (b1, a1, am, b2, a2) = (atom(0), atom(1), int(2), atom(3), atom(4));
                let out_leg = self.debit(&b1, &a1, am, EntryKind::TransferOut);
                let outcome = match out_leg {
                    Outcome::Committed => {
                        let in_leg = self.credit(&b2, &a2, am, EntryKind::TransferIn);
                        match in_leg {
                            Outcome::Committed => Outcome::Committed,
                            _ => {
                                // Compensate: deposit the amount back.
                                self.credit(&b1, &a1, am, EntryKind::TransferIn);
                                Outcome::Aborted
                            }
                        }
                    }
                    other => other,
                };
                self.record(trigger.clone(), outcome, Vec::new());
            }
            ("look-up", 0) => {
                // One read per bank, in bank order.
                let banks: Vec<Symbol> = self.banks.keys().cloned().collect();
                for b in banks {
                    let t = Term::app("look-up", vec![Term::atom(b.as_str())]);
                    self.apply(&t);
                }
            }
            ("look-up", 1) => {
                let read = match atom(0).and_then(|b| self.banks.get(&b).map(|l| (b, l))) {
                    Some((b, ledger)) => ledger
                        .iter()
                        .map(|(a, acct)| statement_list(&b, a, acct))
                        .collect(),
                    None => Vec::new(),
                };
                self.record(trigger.clone(), Outcome::Committed, read);
            }
            ("look-up", 2) => {
                let read = match (atom(0), atom(1)) {
                    (Some(b), Some(a)) => self
                        .banks
                        .get(&b)
                        .and_then(|l| l.get(&a))
                        .map(|acct| vec![statement_list(&b, &a, acct)])
                        .unwrap_or_default(),
                    _ => Vec::new(),
                };
                self.record(trigger.clone(), Outcome::Committed, read);
            }
            _ => {
                self.record(trigger.clone(), Outcome::Aborted, Vec::new());
            }
        }
    }

    fn record(&mut self, trigger: Term, outcome: Outcome, read: Vec<Term>) {
        self.ops.push(OracleOp { trigger, outcome, read });
    }

    fn credit(&mut self, bank: &Option<Symbol>, account: &Option<Symbol>, amount: Option<i64>, kind: EntryKind) -> Outcome {
        let corr = self.corr();
        let Some(acct) = self.lookup_mut(bank, account) else {
            return Outcome::Aborted;
        };
        let Some(am) = amount else {
            return Outcome::Aborted;
        };
        acct.balance += am;
        acct.version += 1;
        let resulting = acct.balance;
        acct.statements.push(StatementEntry {
            kind,
            amount: am,
            correlation: corr,
            resulting_balance: resulting,
        });
        Outcome::Committed
    }

    fn debit(&mut self, bank: &Option<Symbol>, account: &Option<Symbol>, amount: Option<i64>, kind: EntryKind) -> Outcome {
        let corr = self.corr();
        let Some(acct) = self.lookup_mut(bank, account) else {
            return Outcome::Aborted;
        };
        let Some(am) = amount else {
            return Outcome::Aborted;
        };
        if acct.balance < am {
            let resulting = acct.balance;
            acct.statements.push(StatementEntry {
                kind: EntryKind::OverdraftAttempt,
                amount: am,
                correlation: corr,
                resulting_balance: resulting,
            });
            return Outcome::AbortedOverdraft;
        }
        acct.balance -= am;
        acct.version += 1;
        let resulting = acct.balance;
        acct.statements.push(StatementEntry {
            kind,
            amount: am,
            correlation: corr,
            resulting_balance: resulting,
        });
        Outcome::Committed
    }

    fn create(&mut self, bank: &Option<Symbol>, account: &Option<Symbol>) -> Outcome {
        let corr = self.corr();
        let (Some(b), Some(a)) = (bank, account) else {
            return Outcome::Aborted;
        };
        let Some(ledger) = self.banks.get_mut(b) else {
            return Outcome::Aborted;
        };
        if ledger.contains_key(a) {
            return Outcome::Aborted;
        }
        let mut acct = Account::seeded(0);
        acct.version = 1;
        acct.statements.push(StatementEntry {
            kind: EntryKind::Create,
            amount: 0,
            correlation: corr,
            resulting_balance: 0,
        });
        ledger.insert(a.clone(), acct);
        Outcome::Committed
    }

    fn delete(&mut self, bank: &Option<Symbol>, account: &Option<Symbol>) -> Outcome {
        let (Some(b), Some(a)) = (bank, account) else {
            return Outcome::Aborted;
        };
        let Some(ledger) = self.banks.get_mut(b) else {
            return Outcome::Aborted;
        };
        let Some(acct) = ledger.get(a) else {
            return Outcome::Aborted;
        };
        if acct.balance != 0 {
            return Outcome::Aborted;
        }
        ledger.remove(a);
        Outcome::Committed
    }

    fn lookup_mut(&mut self, bank: &Option<Symbol>, account: &Option<Symbol>) -> Option<&mut Account> {
        let (Some(b), Some(a)) = (bank, account) else {
            return None;
        };
        self.banks.get_mut(b)?.get_mut(a)
    }
}

fn statement_list(bank: &Symbol, account: &Symbol, acct: &Account) -> Term {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Term {
        Term::parse(s).unwrap()
    }

    #[test]
    fn create_deposit_withdraw_arithmetic() {
        let mut o = Oracle::new();
        o.add_bank("b");
        for op in ["create(b,a)", "deposit(b,a,10)", "withdraw(b,a,3)"] {
            o.apply(&t(op));
        }
        let acct = o.account("b", "a").unwrap();
        assert_eq!(acct.balance, 7);
        assert_eq!(acct.version, 3);
        assert!(o.ops.iter().all(|op| op.outcome == Outcome::Committed));
    }

    #[test]
    fn withdraw_on_missing_account_aborts() {
        let mut o = Oracle::new();
        o.add_bank("b");
        o.apply(&t("withdraw(b,a,1)"));
        assert_eq!(o.ops[0].outcome, Outcome::Aborted);
        assert!(o.account("b", "a").is_none());
    }

    #[test]
    fn overdraft_records_an_attempt_and_aborts() {
        let mut o = Oracle::new();
        o.seed_account("b", "a", 30);
        o.apply(&t("withdraw(b,a,50)"));
        assert_eq!(o.ops[0].outcome, Outcome::AbortedOverdraft);
        let acct = o.account("b", "a").unwrap();
        assert_eq!(acct.balance, 30);
        assert_eq!(acct.version, 0);
        assert_eq!(acct.statements.len(), 1);
        assert_eq!(acct.statements[0].kind, EntryKind::OverdraftAttempt);
    }

    #[test]
    fn transfer_compensation_restores_the_source() {
        let mut o = Oracle::new();
        o.seed_account("b1", "a1", 100);
        o.add_bank("b2");
        // Target account missing: withdraw leg commits, deposit leg fails,
        // compensation puts the amount back as a transfer-in.
        o.apply(&t("transfer(b1,a1,40,b2,missing)"));
        assert_eq!(o.ops[0].outcome, Outcome::Aborted);
        let acct = o.account("b1", "a1").unwrap();
        assert_eq!(acct.balance, 100);
        assert_eq!(acct.version, 2);
        let kinds: Vec<EntryKind> = acct.statements.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EntryKind::TransferOut, EntryKind::TransferIn]);
    }

    #[test]
    fn bare_lookup_reads_every_bank() {
        let mut o = Oracle::new();
        o.seed_account("b1", "a", 1);
        o.seed_account("b2", "z", 2);
        o.apply(&t("look-up"));
        assert_eq!(o.ops.len(), 2);
        assert_eq!(o.ops[0].trigger, t("look-up(b1)"));
        assert_eq!(o.ops[1].trigger, t("look-up(b2)"));
        assert_eq!(o.ops[0].read.len(), 1);
    }
}
