//! Agent/resource/rule engine: multiset pattern matching, all-or-nothing
//! firing, agent replication and termination.
//!
//! An agent holds a multiset of ground terms (its pool) and a rule set.
//! A rule consumes its left-hand-side patterns atomically, runs its guard
//! hooks in order, and then produces one continuation pool per right-hand
//! group: the first continuation stays on the firing agent, every further
//! group becomes a fresh replica agent, and an empty group list terminates
//! the agent. Emitted terms are handed to the transport for broadcast.
//!
//! Matching is deterministic: candidate pool elements are tried in the
//! canonical term order, agents are scanned in id order and rules in
//! declaration order, so identical worlds always fire identically.

use std::collections::BTreeMap;
use std::fmt;

use crate::multiset::Multiset;
use crate::term::{apply_binding, instantiate, match_pattern, undo_trail, Binding, Symbol, Term};
use crate::time::Time;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(s: impl Into<String>) -> Self {
        AgentId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The agent's own id as a pool term (agents usually hold `client(self)`
    /// or `server(self)` style state resources).
    pub fn to_term(&self) -> Term {
        Term::atom(&self.0)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: AgentId,
    pub pool: Multiset,
    pub ruleset: Symbol,
    pub alive: bool,
}

/// A guard hook invocation: the hook id plus argument patterns. Bound
/// variables are substituted before the hook runs; unbound variables are
/// out-parameters the hook may bind.
#[derive(Clone, Debug)]
pub struct Guard {
    pub hook: Symbol,
    pub args: Vec<Term>,
}

/// A rewrite rule. An empty `rhs_groups` encodes termination of the agent;
/// one group is a plain continuation; further groups replicate the agent.
#[derive(Clone, Debug)]
pub struct Rule {
    pub name: String,
    pub lhs: Vec<Term>,
    pub guards: Vec<Guard>,
    pub rhs_groups: Vec<Vec<Term>>,
    pub emits: Vec<Term>,
}

impl Rule {
    pub fn new(name: &str) -> Self {
        Rule {
            name: name.to_string(),
            lhs: Vec::new(),
            guards: Vec::new(),
            rhs_groups: Vec::new(),
            emits: Vec::new(),
        }
    }

    pub fn consumes<I: IntoIterator<Item = Term>>(mut self, pats: I) -> Self {
        self.lhs.extend(pats);
        self
    }

    pub fn guard<I: IntoIterator<Item = Term>>(mut self, hook: &str, args: I) -> Self {
        self.guards.push(Guard {
            hook: hook.into(),
            args: args.into_iter().collect(),
        });
        self
    }

    /// Add one right-hand-side continuation group.
    pub fn group<I: IntoIterator<Item = Term>>(mut self, pats: I) -> Self {
        self.rhs_groups.push(pats.into_iter().collect());
        self
    }

    pub fn emits<I: IntoIterator<Item = Term>>(mut self, pats: I) -> Self {
        self.emits.extend(pats);
        self
    }

    pub fn is_terminate(&self) -> bool {
        self.rhs_groups.is_empty()
    }

    /// Every variable in the right-hand side or the emissions must occur in
    /// the left-hand side or appear in a guard argument (guards may bind).
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut bindable: Vec<Symbol> = Vec::new();
        for p in &self.lhs {
            p.collect_vars(&mut bindable);
        }
        for g in &self.guards {
            for a in &g.args {
                a.collect_vars(&mut bindable);
            }
        }
        let mut produced: Vec<Symbol> = Vec::new();
        for group in &self.rhs_groups {
            for p in group {
                p.collect_vars(&mut produced);
            }
        }
        for p in &self.emits {
            p.collect_vars(&mut produced);
        }
        for v in produced {
            if !bindable.contains(&v) {
                return Err(EngineError::InvalidRule {
                    rule: self.name.clone(),
                    msg: format!("variable {v} cannot be bound by lhs or guards"),
                });
            }
        }
        Ok(())
    }
}

/// Everything a single firing does to the world, before it is applied.
#[derive(Clone, Debug)]
pub struct FiringEffect {
    /// Instantiated left-hand side, in pattern order.
    pub consumed: Vec<Term>,
    /// One complete new pool per rhs group: (old pool - consumed) + group.
    /// Empty iff the rule terminates the agent.
    pub continuations: Vec<Multiset>,
    /// Just the terms each group added (for traces and timer arming).
    pub produced: Vec<Vec<Term>>,
    /// Instantiated emissions, to be broadcast by the transport.
    pub broadcasts: Vec<Term>,
    pub terminated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Fired { agent: AgentId, rule: String },
    Quiescent,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("rule {rule}: {msg}")]
    InvalidRule { rule: String, msg: String },
    #[error("rule {rule}: unbound variable {var} in instantiation")]
    UnboundVariable { rule: String, var: String },
    #[error("rule {rule}: produced non-ground term {term}")]
    NonGround { rule: String, term: String },
    #[error("unknown guard hook {0}")]
    UnknownHook(String),
    #[error("guard hook {hook}: {msg}")]
    Hook { hook: String, msg: String },
    #[error("unknown rule set {0}")]
    UnknownRuleset(String),
    #[error("duplicate rule name {name} in rule set {ruleset}")]
    DuplicateRuleName { ruleset: String, name: String },
    #[error("agent {0} already exists")]
    DuplicateAgent(String),
    #[error("no such agent {0}")]
    NoSuchAgent(String),
    #[error("agent {0} is terminated")]
    AgentTerminated(String),
    #[error("broadcast of non-ground term {0}")]
    NonGroundBroadcast(String),
    #[error("invalid timer resource {0}")]
    BadTimer(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

/// Delayed world effects requested by guard hooks. Hooks never touch pools
/// directly; anything they inject flows through the event queue.
#[derive(Clone, Debug)]
pub enum Outbound {
    /// Deliver `term` to `target`'s pool at the current sim time.
    Deliver { target: AgentId, term: Term },
}

/// Engine services exposed to guard hooks while a rule is being matched.
pub struct Services<'w> {
    pub now: Time,
    /// The agent whose rule is firing.
    pub agent: &'w AgentId,
    /// Label of the rule being matched.
    pub rule: &'w str,
    pub seed: u64,
    fresh: &'w mut u64,
    outbox: &'w mut Vec<Outbound>,
}

impl<'w> Services<'w> {
    pub fn new(
        now: Time,
        agent: &'w AgentId,
        rule: &'w str,
        seed: u64,
        fresh: &'w mut u64,
        outbox: &'w mut Vec<Outbound>,
    ) -> Self {
        Services {
            now,
            agent,
            rule,
            seed,
            fresh,
            outbox,
        }
    }

    /// Monotonic counter shared by correlation ids, spawned agents and
    /// transaction tokens; never repeats within a world.
    pub fn fresh_id(&mut self) -> u64 {
        *self.fresh += 1;
        *self.fresh
    }

    /// Ask the world to deliver `term` into `target`'s pool at the current
    /// time (applied after the firing, through the event queue).
    pub fn deliver(&mut self, target: AgentId, term: Term) {
        self.outbox.push(Outbound::Deliver { target, term });
    }
}

/// Guard evaluation context: instantiated arguments plus binding access.
pub struct GuardScope<'a, 'w> {
    /// Guard arguments with bound variables substituted; unbound variables
    /// remain and act as out-parameters.
    pub args: Vec<Term>,
    binding: &'a mut Binding,
    trail: &'a mut Vec<Symbol>,
    pub svc: &'a mut Services<'w>,
}

impl GuardScope<'_, '_> {
    pub fn arg(&self, i: usize) -> Result<&Term, EngineError> {
        self.args.get(i).ok_or_else(|| EngineError::Hook {
            hook: "?".into(),
            msg: format!("missing guard argument {i}"),
        })
    }

    pub fn ground_arg(&self, i: usize) -> Result<&Term, EngineError> {
        let t = self.arg(i)?;
        if t.is_ground() {
            Ok(t)
        } else {
            Err(EngineError::Hook {
                hook: "?".into(),
                msg: format!("guard argument {i} not ground: {t}"),
            })
        }
    }

    pub fn int_arg(&self, i: usize) -> Result<i64, EngineError> {
        self.ground_arg(i)?.as_int().ok_or_else(|| EngineError::Hook {
            hook: "?".into(),
            msg: format!("guard argument {i} not an integer"),
        })
    }

    /// Bind out-parameter `i` to `value`. If the argument is already ground
    /// this degrades to an equality test.
    pub fn bind_arg(&mut self, i: usize, value: Term) -> Result<bool, EngineError> {
        if !value.is_ground() {
            return Err(EngineError::Hook {
                hook: "?".into(),
                msg: format!("hook tried to bind non-ground term {value}"),
            });
        }
        match self.arg(i)?.clone() {
            Term::Var(v) => {
                self.binding.insert(v.clone(), value);
                self.trail.push(v);
                Ok(true)
            }
            ground => Ok(ground == value),
        }
    }

    pub fn binding(&self) -> &Binding {
        self.binding
    }
}

/// Host interface for guard hooks. A guard must not mutate agent pools; it
/// may extend the binding, keep application state, and request deliveries
/// through [`Services`].
///
/// Effect discipline: a guard that can fail must be free of side effects
/// (failure backtracks into other candidate assignments), and a guard with
/// side effects must not be followed by a guard that can fail.
pub trait Hooks {
    fn eval(&mut self, hook: &Symbol, scope: &mut GuardScope<'_, '_>) -> Result<bool, EngineError>;
}

/// Host for worlds whose rules use no guard hooks at all.
#[derive(Clone, Debug, Default)]
pub struct NoHooks;

impl Hooks for NoHooks {
    fn eval(&mut self, hook: &Symbol, _scope: &mut GuardScope<'_, '_>) -> Result<bool, EngineError> {
        Err(EngineError::UnknownHook(hook.to_string()))
    }
}

/// Try to match `rule` against the agent's pool. Returns a binding iff every
/// lhs pattern matches a distinct pool element (multiset-aware) and every
/// guard succeeds in order. Candidates are tried in canonical term order, so
/// the result is deterministic. Absence of a match is a normal result.
pub fn match_rule<H: Hooks>(
    state: &AgentState,
    rule: &Rule,
    host: &mut H,
    svc: &mut Services<'_>,
) -> Result<Option<Binding>, EngineError> {
    if !state.alive {
        return Ok(None);
    }
    let mut binding = Binding::new();
    let mut trail: Vec<Symbol> = Vec::new();
    let mut used: BTreeMap<Term, u32> = BTreeMap::new();
    if search(&state.pool, rule, 0, &mut binding, &mut trail, &mut used, host, svc)? {
        Ok(Some(binding))
    } else {
        Ok(None)
    }
}

#[allow(clippy::too_many_arguments)]
fn search<H: Hooks>(
    pool: &Multiset,
    rule: &Rule,
    idx: usize,
    binding: &mut Binding,
    trail: &mut Vec<Symbol>,
    used: &mut BTreeMap<Term, u32>,
    host: &mut H,
    svc: &mut Services<'_>,
) -> Result<bool, EngineError> {
    if idx == rule.lhs.len() {
        let mark = trail.len();
        for g in &rule.guards {
            let args: Vec<Term> = g.args.iter().map(|a| apply_binding(a, binding)).collect();
            let ok = {
                let mut scope = GuardScope {
                    args,
                    binding,
                    trail,
                    svc,
                };
                host.eval(&g.hook, &mut scope)?
            };
            if !ok {
                undo_trail(binding, trail, mark);
                return Ok(false);
            }
        }
        return Ok(true);
    }
    let pat = apply_binding(&rule.lhs[idx], binding);
    for (cand, avail) in pool.candidates(&pat) {
        if used.get(&cand).copied().unwrap_or(0) >= avail {
            continue;
        }
        let mark = trail.len();
        if match_pattern(&pat, &cand, binding, trail) {
            *used.entry(cand.clone()).or_insert(0) += 1;
            if search(pool, rule, idx + 1, binding, trail, used, host, svc)? {
                return Ok(true);
            }
            *used.get_mut(&cand).unwrap() -= 1;
        }
        undo_trail(binding, trail, mark);
    }
    Ok(false)
}

/// Compute the effect of firing `rule` under `binding` (which must have been
/// produced by [`match_rule`] on the same state). Pure: application of the
/// effect is the world's job.
pub fn fire_rule(state: &AgentState, rule: &Rule, binding: &Binding) -> Result<FiringEffect, EngineError> {
    let inst = |pat: &Term| -> Result<Term, EngineError> {
        let t = instantiate(pat, binding).map_err(|v| EngineError::UnboundVariable {
            rule: rule.name.clone(),
            var: v.to_string(),
        })?;
        if !t.is_ground() {
            return Err(EngineError::NonGround {
                rule: rule.name.clone(),
                term: t.to_string(),
            });
        }
        Ok(t)
    };

    let mut remaining = state.pool.clone();
    let mut consumed = Vec::with_capacity(rule.lhs.len());
    for pat in &rule.lhs {
        let t = inst(pat)?;
        if !remaining.remove_one(&t) {
            return Err(EngineError::InvalidRule {
                rule: rule.name.clone(),
                msg: format!("binding does not select pool element {t}"),
            });
        }
        consumed.push(t);
    }

    let mut continuations = Vec::with_capacity(rule.rhs_groups.len());
    let mut produced = Vec::with_capacity(rule.rhs_groups.len());
    for group in &rule.rhs_groups {
        let mut pool = remaining.clone();
        let mut adds = Vec::with_capacity(group.len());
        for pat in group {
            let t = inst(pat)?;
            pool.insert(t.clone());
            adds.push(t);
        }
        continuations.push(pool);
        produced.push(adds);
    }

    let broadcasts: Result<Vec<_>, _> = rule.emits.iter().map(inst).collect();

    Ok(FiringEffect {
        consumed,
        continuations,
        produced,
        broadcasts: broadcasts?,
        terminated: rule.rhs_groups.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Term {
        Term::parse(s).unwrap()
    }

    fn agent(pool: &[&str]) -> AgentState {
        AgentState {
            id: AgentId::new("a1"),
            pool: Multiset::from_terms(pool.iter().map(|s| t(s))),
            ruleset: "rs".into(),
            alive: true,
        }
    }

    fn try_match(state: &AgentState, rule: &Rule) -> Option<Binding> {
        let mut fresh = 0;
        let mut outbox = Vec::new();
        let id = state.id.clone();
        let mut svc = Services::new(crate::time::time_zero(), &id, &rule.name, 0, &mut fresh, &mut outbox);
        match_rule(state, rule, &mut NoHooks, &mut svc).unwrap()
    }

    #[test]
    fn single_candidate_is_forced() {
        let state = agent(&["msg-reply(srv1,id7,42)"]);
        let rule = Rule::new("r").consumes([t("msg-reply(S,id7,R)")]).group([t("done")]);
        let b = try_match(&state, &rule).unwrap();
        assert_eq!(b.get(&"S".into()), Some(&t("srv1")));
        assert_eq!(b.get(&"R".into()), Some(&t("42")));
    }

    #[test]
    fn empty_pool_has_no_match() {
        let state = agent(&[]);
        let rule = Rule::new("r").consumes([t("trigger")]).group([t("done")]);
        assert!(try_match(&state, &rule).is_none());
    }

    /// Independent oracle: enumerate every injective assignment of lhs
    /// patterns to occurrences of pool elements by brute force.
    fn brute_force_matches(pool: &[&str], lhs: &[&str]) -> bool {
        fn assign(items: &[Term], pats: &[Term], taken: &mut Vec<bool>, binding: &mut Binding) -> bool {
            let Some(pat) = pats.first() else { return true };
            for (i, item) in items.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let mut b = binding.clone();
                let mut trail = Vec::new();
                if match_pattern(pat, item, &mut b, &mut trail) {
                    taken[i] = true;
                    if assign(items, &pats[1..], taken, &mut b.clone()) {
                        return true;
                    }
                    taken[i] = false;
                }
            }
            false
        }
        let items: Vec<Term> = pool.iter().map(|s| t(s)).collect();
        let pats: Vec<Term> = lhs.iter().map(|s| t(s)).collect();
        let mut taken = vec![false; items.len()];
        assign(&items, &pats, &mut taken, &mut Binding::new())
    }

    #[test]
    fn two_identical_patterns_need_two_copies() {
        // Oracle agrees: {a(1),a(1)} satisfies [a(X),a(X)]; {a(1)} does not.
        assert!(brute_force_matches(&["a(1)", "a(1)"], &["a(X)", "a(X)"]));
        assert!(!brute_force_matches(&["a(1)"], &["a(X)", "a(X)"]));
        assert!(!brute_force_matches(&["a(1)", "a(2)"], &["a(X)", "a(X)"]));

        let rule = Rule::new("r").consumes([t("a(X)"), t("a(X)")]).group([t("ok(X)")]);
        let b = try_match(&agent(&["a(1)", "a(1)"]), &rule).unwrap();
        assert_eq!(b.get(&"X".into()), Some(&t("1")));
        assert!(try_match(&agent(&["a(1)"]), &rule).is_none());
        assert!(try_match(&agent(&["a(1)", "a(2)"]), &rule).is_none());
    }

    #[test]
    fn matcher_backtracks_over_candidates() {
        // First candidate a(1) cannot satisfy the second pattern b(1,2); a(2) can.
        let rule = Rule::new("r").consumes([t("a(X)"), t("b(X,Y)")]).group([t("ok")]);
        let b = try_match(&agent(&["a(1)", "a(2)", "b(2,9)"]), &rule).unwrap();
        assert_eq!(b.get(&"X".into()), Some(&t("2")));
    }

    #[test]
    fn dead_agents_never_match() {
        let mut state = agent(&["trigger"]);
        state.alive = false;
        let rule = Rule::new("r").consumes([t("trigger")]).group([t("done")]);
        assert!(try_match(&state, &rule).is_none());
    }

    #[test]
    fn firing_splits_into_replica_pools() {
        // Shape of rule (Rr3): restore the ready client and spawn a
        // catch-follow-up replica; the leftover pool is copied to both.
        let state = agent(&["client(c1,blocked,id3)", "msg-reply(s1,id3,7)", "leftover"]);
        let rule = Rule::new("Rr3")
            .consumes([t("client(C,blocked,Id)"), t("msg-reply(S,Id,R)")])
            .group([t("client(C)")])
            .group([t("client(C,catch-follow-up-replies,Id)")]);
        let b = try_match(&state, &rule).unwrap();
        let eff = fire_rule(&state, &rule, &b).unwrap();
        assert_eq!(eff.continuations.len(), 2);
        assert!(!eff.terminated);
        assert!(eff.continuations[0].contains(&t("client(c1)")));
        assert!(eff.continuations[0].contains(&t("leftover")));
        assert!(eff.continuations[1].contains(&t("client(c1,catch-follow-up-replies,id3)")));
        assert!(eff.continuations[1].contains(&t("leftover")));
        assert_eq!(eff.consumed.len(), 2);
    }

    #[test]
    fn terminate_produces_no_continuations() {
        let state = agent(&["client(c1,blocked-other-server(s2,2),q1)", "msg-reply(s2,last,2,q1,x)"]);
        let rule = Rule::new("Qr10")
            .consumes([t("client(C,blocked-other-server(O,Rn),Id)"), t("msg-reply(O,last,Rn,Id,R)")]);
        let b = try_match(&state, &rule).unwrap();
        let eff = fire_rule(&state, &rule, &b).unwrap();
        assert!(eff.terminated);
        assert!(eff.continuations.is_empty());
    }

    #[test]
    fn plain_rule_has_one_continuation_and_no_broadcasts() {
        let state = agent(&["x"]);
        let rule = Rule::new("r").consumes([t("x")]).group([t("y")]);
        let eff = fire_rule(&state, &rule, &try_match(&state, &rule).unwrap()).unwrap();
        assert_eq!(eff.continuations.len(), 1);
        assert!(eff.broadcasts.is_empty());
        assert!(eff.continuations[0].contains(&t("y")));
    }

    #[test]
    fn linearity_of_firing() {
        // final pool = initial pool - consumed + produced, en every group.
        let state = agent(&["a(1)", "a(1)", "b", "c(2)"]);
        let rule = Rule::new("r")
            .consumes([t("a(X)"), t("b")])
            .group([t("d(X)"), t("d(X)")])
            .emits([t("e(X)")]);
        let eff = fire_rule(&state, &rule, &try_match(&state, &rule).unwrap()).unwrap();
        let mut expect = state.pool.clone();
        for c in &eff.consumed {
            assert!(expect.remove_one(c));
        }
        for p in &eff.produced[0] {
            expect.insert(p.clone());
        }
        assert_eq!(
            eff.continuations[0].expanded(),
            expect.expanded(),
            "multiset arithmetic must balance"
        );
        assert_eq!(eff.broadcasts, vec![t("e(1)")]);
    }

    #[test]
    fn unbound_rhs_variable_is_an_error() {
        let rule = Rule::new("r").consumes([t("x")]).group([t("y(Z)")]);
        assert!(rule.validate().is_err());
        let state = agent(&["x"]);
        let b = try_match(&state, &rule).unwrap();
        assert!(matches!(
            fire_rule(&state, &rule, &b),
            Err(EngineError::UnboundVariable { .. })
        ));
    }
}
