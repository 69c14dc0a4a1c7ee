//! Discrete-event simulated transport: broadcast over unreliable,
//! reordering links with simulated time, fail-stop suspension and
//! partitions.
//!
//! The world is a value: agents, rule sets, an ordered event queue, the
//! clock, the net policy and the host state. Execution alternates between
//! running the kernel to quiescence and popping the earliest event. All
//! randomness (delays, drops) is derived by hashing the world seed, so a
//! given (seed, scenario) pair always produces a byte-identical trace.

use std::collections::{BTreeMap, BTreeSet};

use crate::kernel::{
    fire_rule, match_rule, AgentId, AgentState, EngineError, FiringEffect, Hooks, Outbound, Rule,
    Services, StepOutcome,
};
use crate::multiset::Multiset;
use crate::term::{Symbol, Term};
use crate::time::{format_time, time_zero, Time};
use num_rational::Rational64;
use num_traits::Zero;

/// A timestamped deliverable. Events are processed in `(due, seq)` order;
/// the sequence number makes the order total.
#[derive(Clone, Debug)]
pub struct SimEvent {
    pub due: Time,
    pub seq: u64,
    pub payload: Payload,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.seq) == (other.due, other.seq)
    }
}
impl Eq for SimEvent {}
impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

#[derive(Clone, Debug)]
pub enum Payload {
    /// A broadcast copy (or injected trigger) bound for one agent's pool.
    Delivery { target: AgentId, term: Term },
    /// A timer elapsing: injects the timeout term into the timer agent.
    TimerExpiry { target: AgentId, term: Term },
    Fault(FaultCmd),
}

#[derive(Clone, Debug)]
pub enum FaultCmd {
    Suspend(AgentId),
    Resume(AgentId),
    /// Disjoint grouping of agent ids; agents not listed share one
    /// implicit remainder group.
    Partition(Vec<BTreeSet<AgentId>>),
    Heal,
}

#[derive(Clone, Debug)]
pub enum DelayPolicy {
    Fixed(Time),
    /// Deterministic pseudo-random delay in `[min, max]`, derived from the
    /// seed and the (sender, receiver, term) triple.
    Uniform { min: Time, max: Time },
    /// Explicit per-term delays, for tests that script delivery orders.
    Scripted { by_term: BTreeMap<Term, Time>, default: Time },
}

#[derive(Clone, Debug)]
pub enum DropPolicy {
    Never,
    /// Drop with this probability (deterministically seeded).
    Prob(Rational64),
}

#[derive(Clone, Debug)]
pub struct NetPolicy {
    pub delay: DelayPolicy,
    pub drop: DropPolicy,
    pub partition: Option<Vec<BTreeSet<AgentId>>>,
}

impl Default for NetPolicy {
    fn default() -> Self {
        NetPolicy {
            delay: DelayPolicy::Fixed(Time::from_integer(1)),
            drop: DropPolicy::Never,
            partition: None,
        }
    }
}

impl NetPolicy {
    /// Partitions are symmetric and total: two agents communicate iff they
    /// sit in the same group (or no partition is active).
    pub fn same_side(&self, a: &AgentId, b: &AgentId) -> bool {
        let Some(groups) = &self.partition else {
            return true;
        };
        let side = |x: &AgentId| groups.iter().position(|g| g.contains(x));
        side(a) == side(b)
    }

    pub fn delay_for(&self, seed: u64, sender: &AgentId, recv: &AgentId, term: &Term) -> Time {
        match &self.delay {
            DelayPolicy::Fixed(t) => *t,
            DelayPolicy::Uniform { min, max } => {
                let h = det_hash(seed, "delay", &[sender.as_str(), recv.as_str(), &term.to_string()]);
                let k = (h % 1001) as i64;
                *min + (*max - *min) * Rational64::new(k, 1000)
            }
            DelayPolicy::Scripted { by_term, default } => {
                by_term.get(term).copied().unwrap_or(*default)
            }
        }
    }

    pub fn dropped(&self, seed: u64, sender: &AgentId, recv: &AgentId, term: &Term) -> bool {
        match &self.drop {
            DropPolicy::Never => false,
            DropPolicy::Prob(p) => {
                if p.is_zero() {
                    return false;
                }
                let h = det_hash(seed, "drop", &[sender.as_str(), recv.as_str(), &term.to_string()]);
                (h as u128) * (*p.denom() as u128) < (*p.numer() as u128) << 64
            }
        }
    }
}

/// Deterministic hash: FNV-1a over the parts, finalized splitmix64-style.
/// Not cryptographic; only needs to be stable across runs and platforms.
pub(crate) fn det_hash(seed: u64, tag: &str, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1f;
        h = h.wrapping_mul(0x100000001b3);
    };
    eat(tag.as_bytes());
    for p in parts {
        eat(p.as_bytes());
    }
    // splitmix64 finalizer
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunStatus {
    /// Queue empty and no rule matches anywhere.
    Completed,
    /// Stopped by the event bound.
    EventLimit,
}

pub struct World<H: Hooks> {
    agents: BTreeMap<AgentId, AgentState>,
    rulesets: BTreeMap<Symbol, Vec<Rule>>,
    queue: BTreeSet<SimEvent>,
    now: Time,
    pub policy: NetPolicy,
    seed: u64,
    /// Suspended agents with their buffered deliveries, in arrival order.
    suspended: BTreeMap<AgentId, Vec<Payload>>,
    host: H,
    fresh: u64,
    seq: u64,
    step_index: u64,
    events_processed: u64,
    max_events: Option<u64>,
    dirty: BTreeSet<AgentId>,
    trace: Vec<String>,
}

impl<H: Hooks> World<H> {
    pub fn new(seed: u64, host: H) -> Self {
        World {
            agents: BTreeMap::new(),
            rulesets: BTreeMap::new(),
            queue: BTreeSet::new(),
            now: time_zero(),
            policy: NetPolicy::default(),
            seed,
            suspended: BTreeMap::new(),
            host,
            fresh: 0,
            seq: 0,
            step_index: 0,
            events_processed: 0,
            max_events: None,
            dirty: BTreeSet::new(),
            trace: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next value of the world's monotonic counter (shared with correlation
    /// ids and spawned-agent names).
    pub fn fresh_id(&mut self) -> u64 {
        self.fresh += 1;
        self.fresh
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn host(&self) -> &H {
        &self.host
    }

    pub fn host_mut(&mut self) -> &mut H {
        &mut self.host
    }

    pub fn set_max_events(&mut self, max: Option<u64>) {
        self.max_events = max;
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn steps_fired(&self) -> u64 {
        self.step_index
    }

    /// One line per firing: `step  time  agent  rule  consumed  produced  broadcasts`.
    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn register_ruleset(&mut self, name: &str, rules: Vec<Rule>) -> Result<(), EngineError> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for r in &rules {
            r.validate()?;
            if !seen.insert(&r.name) {
                return Err(EngineError::DuplicateRuleName {
                    ruleset: name.to_string(),
                    name: r.name.clone(),
                });
            }
        }
        self.rulesets.insert(name.into(), rules);
        Ok(())
    }

    pub fn ruleset(&self, name: &str) -> Option<&[Rule]> {
        self.rulesets.get(&Symbol::from(name)).map(|v| v.as_slice())
    }

    pub fn spawn(
        &mut self,
        id: impl Into<String>,
        ruleset: &str,
        pool: impl IntoIterator<Item = Term>,
    ) -> Result<AgentId, EngineError> {
        let id = AgentId::new(id);
        if self.agents.contains_key(&id) {
            return Err(EngineError::DuplicateAgent(id.to_string()));
        }
        let ruleset: Symbol = ruleset.into();
        if !self.rulesets.contains_key(&ruleset) {
            return Err(EngineError::UnknownRuleset(ruleset.to_string()));
        }
        let mut ms = Multiset::new();
        for t in pool {
            if !t.is_ground() {
                return Err(EngineError::NonGroundBroadcast(t.to_string()));
            }
            ms.insert(t);
        }
        self.agents.insert(
            id.clone(),
            AgentState {
                id: id.clone(),
                pool: ms,
                ruleset,
                alive: true,
            },
        );
        self.dirty.insert(id.clone());
        Ok(id)
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentState> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.values()
    }

    pub fn alive_agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.values().filter(|a| a.alive)
    }

    pub fn alive_count(&self) -> usize {
        self.agents.values().filter(|a| a.alive).count()
    }

    pub fn is_suspended(&self, id: &AgentId) -> bool {
        self.suspended.contains_key(id)
    }

    pub fn suspended_ids(&self) -> impl Iterator<Item = &AgentId> {
        self.suspended.keys()
    }

    pub fn quiescent(&self) -> bool {
        self.queue.is_empty() && self.dirty.is_empty()
    }

    fn push_event(&mut self, due: Time, payload: Payload) {
        self.seq += 1;
        self.queue.insert(SimEvent {
            due,
            seq: self.seq,
            payload,
        });
    }

    /// Inject a term into an agent's pool at simulated time `at` (used for
    /// scenario triggers and hook-requested deliveries).
    pub fn schedule_delivery(&mut self, target: AgentId, term: Term, at: Time) {
        self.push_event(at, Payload::Delivery { target, term });
    }

    /// Arm a timer: `term` is injected into `target`'s pool at time `at`.
    pub fn schedule_expiry(&mut self, target: AgentId, term: Term, at: Time) {
        self.push_event(at, Payload::TimerExpiry { target, term });
    }

    pub fn schedule_fault(&mut self, cmd: FaultCmd, at: Time) {
        self.push_event(at, Payload::Fault(cmd));
    }

    /// Enqueue one delivery per live agent other than the sender that is on
    /// the sender's side of the current partition, at `now + delay`, unless
    /// the drop policy discards it. The sender receives no copy.
    pub fn broadcast(&mut self, sender: &AgentId, term: &Term) -> Result<(), EngineError> {
        if !term.is_ground() {
            return Err(EngineError::NonGroundBroadcast(term.to_string()));
        }
        let receivers: Vec<AgentId> = self
            .agents
            .values()
            .filter(|st| st.alive && &st.id != sender && self.policy.same_side(sender, &st.id))
            .map(|st| st.id.clone())
            .collect();
        for r in receivers {
            if self.policy.dropped(self.seed, sender, &r, term) {
                continue;
            }
            let delay = self.policy.delay_for(self.seed, sender, &r, term);
            let due = self.now + delay;
            self.push_event(due, Payload::Delivery { target: r, term: term.clone() });
        }
        Ok(())
    }

    /// Mark an agent fail-stopped: it neither fires rules nor receives
    /// deliveries until resumed; deliveries are buffered. Idempotent.
    pub fn suspend(&mut self, id: &AgentId) -> Result<(), EngineError> {
        let st = self
            .agents
            .get(id)
            .ok_or_else(|| EngineError::NoSuchAgent(id.to_string()))?;
        if !st.alive {
            return Err(EngineError::AgentTerminated(id.to_string()));
        }
        self.suspended.entry(id.clone()).or_default();
        self.dirty.remove(id);
        Ok(())
    }

    /// Resume a suspended agent, flushing its buffered deliveries as
    /// immediate events (original order preserved).
    pub fn resume(&mut self, id: &AgentId) -> Result<(), EngineError> {
        if !self.agents.contains_key(id) {
            return Err(EngineError::NoSuchAgent(id.to_string()));
        }
        if let Some(buffered) = self.suspended.remove(id) {
            for payload in buffered {
                self.push_event(self.now, payload);
            }
        }
        self.dirty.insert(id.clone());
        Ok(())
    }

    /// Scan agents in canonical id order and rules in declaration order;
    /// fire the first match and apply its effect. Only agents whose pools
    /// changed since they were last seen quiescent are scanned (guards must
    /// not depend on state that changes behind an agent's back).
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        let ids: Vec<AgentId> = self.dirty.iter().cloned().collect();
        for id in ids {
            if self.suspended.contains_key(&id) {
                self.dirty.remove(&id);
                continue;
            }
            let found = {
                let Some(state) = self.agents.get(&id) else {
                    self.dirty.remove(&id);
                    continue;
                };
                if !state.alive {
                    self.dirty.remove(&id);
                    continue;
                }
                let rules = self
                    .rulesets
                    .get(&state.ruleset)
                    .ok_or_else(|| EngineError::UnknownRuleset(state.ruleset.to_string()))?;
                let mut found = None;
                for rule in rules {
                    let mut outbox: Vec<Outbound> = Vec::new();
                    let matched = {
                        let mut svc = Services::new(
                            self.now,
                            &state.id,
                            &rule.name,
                            self.seed,
                            &mut self.fresh,
                            &mut outbox,
                        );
                        match_rule(state, rule, &mut self.host, &mut svc)?
                    };
                    if let Some(binding) = matched {
                        let effect = fire_rule(state, rule, &binding)?;
                        found = Some((rule.name.clone(), effect, outbox));
                        break;
                    }
                }
                found
            };
            match found {
                Some((rule, effect, outbox)) => {
                    self.apply_firing(&id, &rule, effect, outbox)?;
                    return Ok(StepOutcome::Fired { agent: id, rule });
                }
                None => {
                    self.dirty.remove(&id);
                }
            }
        }
        Ok(StepOutcome::Quiescent)
    }

    fn apply_firing(
        &mut self,
        agent: &AgentId,
        rule: &str,
        effect: FiringEffect,
        outbox: Vec<Outbound>,
    ) -> Result<(), EngineError> {
        self.trace_firing(agent, rule, &effect);

        let ruleset = {
            let state = self
                .agents
                .get_mut(agent)
                .ok_or_else(|| EngineError::NoSuchAgent(agent.to_string()))?;
            let rs = state.ruleset.clone();
            if effect.terminated {
                state.alive = false;
                state.pool.clear();
                self.dirty.remove(agent);
            } else {
                state.pool = effect.continuations[0].clone();
            }
            rs
        };

        // Additional groups become fresh replica agents carrying the parent's
        // rule set. In-flight deliveries addressed to the parent are duplicated
        // for each replica: the fork copies the parent's context, and a message
        // already emitted towards the parent is part of that context.
        let mut group_owner: Vec<AgentId> = vec![agent.clone()];
        for cont in effect.continuations.iter().skip(1) {
            self.fresh += 1;
            let nid = AgentId::new(format!("{}+{}", agent, self.fresh));
            let inflight: Vec<(Time, Term)> = self
                .queue
                .iter()
                .filter_map(|ev| match &ev.payload {
                    Payload::Delivery { target, term } if target == agent => {
                        Some((ev.due, term.clone()))
                    }
                    _ => None,
                })
                .collect();
            self.agents.insert(
                nid.clone(),
                AgentState {
                    id: nid.clone(),
                    pool: cont.clone(),
                    ruleset: ruleset.clone(),
                    alive: true,
                },
            );
            for (due, term) in inflight {
                self.push_event(due, Payload::Delivery { target: nid.clone(), term });
            }
            self.dirty.insert(nid.clone());
            group_owner.push(nid);
        }

        // Arm timers: a produced `timer(C, Id, T)` resource schedules the
        // injection of `timeout(C, Id)` into its owner at `now + T`.
        for (gi, adds) in effect.produced.iter().enumerate() {
            for t in adds {
                if t.functor().map(|f| f.as_str()) == Some("timer") && t.args().len() == 3 {
                    let owner = group_owner[gi].clone();
                    self.arm_timer(owner, t)?;
                }
            }
        }

        for b in &effect.broadcasts {
            self.broadcast(agent, b)?;
        }
        for ob in outbox {
            match ob {
                Outbound::Deliver { target, term } => {
                    self.push_event(self.now, Payload::Delivery { target, term });
                }
            }
        }
        Ok(())
    }

    fn arm_timer(&mut self, owner: AgentId, timer_term: &Term) -> Result<(), EngineError> {
        let args = timer_term.args();
        let t = args[2]
            .as_rational()
            .filter(|t| *t > Time::from_integer(0))
            .ok_or_else(|| EngineError::BadTimer(timer_term.to_string()))?;
        let timeout = Term::app("timeout", vec![args[0].clone(), args[1].clone()]);
        let due = self.now + t;
        self.schedule_expiry(owner, timeout, due);
        Ok(())
    }

    fn apply_event(&mut self, payload: Payload) -> Result<(), EngineError> {
        match payload {
            Payload::Delivery { ref target, ref term } => {
                if let Some(buf) = self.suspended.get_mut(target) {
                    buf.push(payload.clone());
                    return Ok(());
                }
                if let Some(st) = self.agents.get_mut(target) {
                    if st.alive {
                        st.pool.insert(term.clone());
                        self.dirty.insert(target.clone());
                    }
                }
                Ok(())
            }
            Payload::TimerExpiry { ref target, ref term } => {
                if let Some(buf) = self.suspended.get_mut(target) {
                    buf.push(payload.clone());
                    return Ok(());
                }
                if let Some(st) = self.agents.get_mut(target) {
                    if st.alive {
                        st.pool.insert(term.clone());
                        self.dirty.insert(target.clone());
                    }
                }
                Ok(())
            }
            Payload::Fault(cmd) => match cmd {
                FaultCmd::Suspend(id) => self.suspend(&id),
                FaultCmd::Resume(id) => self.resume(&id),
                FaultCmd::Partition(groups) => {
                    self.policy.partition = Some(groups);
                    Ok(())
                }
                FaultCmd::Heal => {
                    self.policy.partition = None;
                    Ok(())
                }
            },
        }
    }

    /// Run the kernel to quiescence, then pop and apply the earliest event;
    /// repeat until the queue is empty and no rule matches anywhere.
    pub fn advance(&mut self) -> Result<RunStatus, EngineError> {
        loop {
            while let StepOutcome::Fired { .. } = self.step()? {}
            if let Some(max) = self.max_events {
                if self.events_processed >= max && !self.queue.is_empty() {
                    return Ok(RunStatus::EventLimit);
                }
            }
            let Some(ev) = self.queue.pop_first() else {
                return Ok(RunStatus::Completed);
            };
            debug_assert!(ev.due >= self.now, "event time must not go backwards");
            self.events_processed += 1;
            self.now = ev.due;
            self.apply_event(ev.payload)?;
        }
    }

    fn trace_firing(&mut self, agent: &AgentId, rule: &str, effect: &FiringEffect) {
        fn join(terms: &[Term]) -> String {
            if terms.is_empty() {
                return "-".to_string();
            }
            terms
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        }
        let produced = if effect.terminated {
            "terminate".to_string()
        } else {
            effect
                .produced
                .iter()
                .map(|g| join(g))
                .collect::<Vec<_>>()
                .join(" & ")
        };
        let line = format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step_index,
            format_time(&self.now),
            agent,
            rule,
            join(&effect.consumed),
            produced,
            join(&effect.broadcasts),
        );
        self.step_index += 1;
        self.trace.push(line);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::NoHooks;

    fn t(s: &str) -> Term {
        Term::parse(s).unwrap()
    }

    fn world() -> World<NoHooks> {
        World::new(42, NoHooks)
    }

    fn idle_world_with(names: &[&str]) -> World<NoHooks> {
        let mut w = world();
        w.register_ruleset("idle", vec![]).unwrap();
        for n in names {
            w.spawn(*n, "idle", []).unwrap();
        }
        w
    }

    #[test]
    fn broadcast_reaches_every_other_live_agent() {
        let mut w = idle_world_with(&["c1", "s1", "s2", "s3"]);
        w.broadcast(&"c1".into(), &t("msg-request(id1,params)")).unwrap();
        assert_eq!(w.queue.len(), 3);
        let targets: BTreeSet<String> = w
            .queue
            .iter()
            .map(|e| match &e.payload {
                Payload::Delivery { target, .. } => target.to_string(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(targets, ["s1", "s2", "s3"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn single_agent_broadcast_enqueues_nothing() {
        let mut w = idle_world_with(&["c1"]);
        w.broadcast(&"c1".into(), &t("x")).unwrap();
        assert_eq!(w.queue.len(), 0);
    }

    #[test]
    fn partition_blocks_cross_group_broadcast() {
        let mut w = idle_world_with(&["c1", "s1", "s2"]);
        w.policy.partition = Some(vec![
            [AgentId::from("c1")].into_iter().collect(),
            [AgentId::from("s1"), AgentId::from("s2")].into_iter().collect(),
        ]);
        w.broadcast(&"c1".into(), &t("x")).unwrap();
        assert_eq!(w.queue.len(), 0);
        w.policy.partition = None;
        w.broadcast(&"c1".into(), &t("x")).unwrap();
        assert_eq!(w.queue.len(), 2);
    }

    #[test]
    fn advance_applies_delivery_and_sets_time() {
        let mut w = idle_world_with(&["a"]);
        w.schedule_delivery("a".into(), t("hello"), Time::from_integer(3));
        assert_eq!(w.advance().unwrap(), RunStatus::Completed);
        assert_eq!(w.now(), Time::from_integer(3));
        assert!(w.agent(&"a".into()).unwrap().pool.contains(&t("hello")));
    }

    #[test]
    fn same_time_events_process_in_seq_order() {
        let mut w = world();
        let consume_x = Rule::new("eat").consumes([t("x")]).group([t("ate-x")]);
        let consume_y = Rule::new("eat").consumes([t("y")]).group([t("ate-y")]);
        w.register_ruleset("rx", vec![consume_x]).unwrap();
        w.register_ruleset("ry", vec![consume_y]).unwrap();
        // b sorts before a alphabetically would confound the check, so pick
        // names where delivery order (not id order) decides.
        w.spawn("zz", "rx", []).unwrap();
        w.spawn("aa", "ry", []).unwrap();
        w.schedule_delivery("zz".into(), t("x"), Time::from_integer(3));
        w.schedule_delivery("aa".into(), t("y"), Time::from_integer(3));
        w.advance().unwrap();
        // zz's delivery was enqueued first, so it fires first even though
        // aa sorts lower.
        let fired: Vec<&str> = w.trace().iter().map(|l| l.split('\t').nth(2).unwrap()).collect();
        assert_eq!(fired, vec!["zz", "aa"]);
    }

    #[test]
    fn suspension_buffers_until_resume() {
        let mut w = world();
        let rule = Rule::new("eat").consumes([t("job")]).group([t("done")]);
        w.register_ruleset("r", vec![rule]).unwrap();
        w.spawn("srv2", "r", []).unwrap();
        w.schedule_fault(FaultCmd::Suspend("srv2".into()), Time::from_integer(1));
        w.schedule_delivery("srv2".into(), t("job"), Time::from_integer(3));
        w.schedule_fault(FaultCmd::Resume("srv2".into()), Time::from_integer(10));
        w.advance().unwrap();
        // The job could only be consumed at (or after) the resume time.
        let line = w.trace().iter().find(|l| l.contains("\teat\t")).unwrap();
        let fired_at: i64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(fired_at, 10);
        assert!(w.agent(&"srv2".into()).unwrap().pool.contains(&t("done")));
    }

    #[test]
    fn suspended_agent_does_not_fire() {
        let mut w = world();
        let rule = Rule::new("eat").consumes([t("job")]).group([t("done")]);
        w.register_ruleset("r", vec![rule]).unwrap();
        w.spawn("s1", "r", [t("job")]).unwrap();
        w.suspend(&"s1".into()).unwrap();
        assert_eq!(w.step().unwrap(), StepOutcome::Quiescent);
        w.resume(&"s1".into()).unwrap();
        assert!(matches!(w.step().unwrap(), StepOutcome::Fired { .. }));
    }

    #[test]
    fn suspend_resume_with_empty_buffer_changes_only_flags() {
        let mut w = idle_world_with(&["a", "b"]);
        let before: Vec<Term> = w.agent(&"a".into()).unwrap().pool.expanded();
        w.suspend(&"a".into()).unwrap();
        assert!(w.is_suspended(&"a".into()));
        w.suspend(&"a".into()).unwrap(); // double-suspend is idempotent
        w.resume(&"a".into()).unwrap();
        assert!(!w.is_suspended(&"a".into()));
        assert_eq!(w.agent(&"a".into()).unwrap().pool.expanded(), before);
        assert_eq!(w.queue.len(), 0);
    }

    #[test]
    fn suspending_a_terminated_agent_is_an_error() {
        let mut w = world();
        let die = Rule::new("die").consumes([t("x")]);
        w.register_ruleset("r", vec![die]).unwrap();
        w.spawn("a", "r", [t("x")]).unwrap();
        w.advance().unwrap();
        assert!(!w.agent(&"a".into()).unwrap().alive);
        assert!(matches!(
            w.suspend(&"a".into()),
            Err(EngineError::AgentTerminated(_))
        ));
        assert!(matches!(
            w.suspend(&"ghost".into()),
            Err(EngineError::NoSuchAgent(_))
        ));
    }

    #[test]
    fn unconsumed_broadcasts_persist_until_consumed() {
        // Retention: a delivered term nothing consumes stays in the pool.
        let mut w = idle_world_with(&["a", "b"]);
        w.broadcast(&"a".into(), &t("keepsake")).unwrap();
        w.advance().unwrap();
        assert!(w.agent(&"b".into()).unwrap().pool.contains(&t("keepsake")));
    }

    #[test]
    fn lower_agent_id_fires_first_and_orders_commute() {
        // Both agents are fireable with independent rules. The scheduler must
        // pick the lower id; and (oracle) both manual firing orders reach the
        // same combined final multiset.
        let mk = || {
            let mut w = world();
            w.register_ruleset("ra", vec![Rule::new("fa").consumes([t("x")]).group([t("xd")])])
                .unwrap();
            w.register_ruleset("rb", vec![Rule::new("fb").consumes([t("y")]).group([t("yd")])])
                .unwrap();
            w.spawn("a1", "ra", [t("x")]).unwrap();
            w.spawn("a2", "rb", [t("y")]).unwrap();
            w
        };

        let mut w = mk();
        assert_eq!(
            w.step().unwrap(),
            StepOutcome::Fired { agent: "a1".into(), rule: "fa".into() }
        );

        // Brute-force both interleavings using the kernel primitives directly.
        let final_union = |order: [usize; 2]| -> Vec<Term> {
            let w = mk();
            let mut states: Vec<AgentState> =
                vec![w.agent(&"a1".into()).unwrap().clone(), w.agent(&"a2".into()).unwrap().clone()];
            let rules = [w.ruleset("ra").unwrap()[0].clone(), w.ruleset("rb").unwrap()[0].clone()];
            for i in order {
                let rule = &rules[i];
                let mut fresh = 0;
                let mut outbox = Vec::new();
                let id = states[i].id.clone();
                let mut svc = Services::new(time_zero(), &id, &rule.name, 0, &mut fresh, &mut outbox);
                let b = match_rule(&states[i], rule, &mut NoHooks, &mut svc).unwrap().unwrap();
                let eff = fire_rule(&states[i], rule, &b).unwrap();
                states[i].pool = eff.continuations[0].clone();
            }
            let mut all: Vec<Term> = states.iter().flat_map(|s| s.pool.expanded()).collect();
            all.sort();
            all
        };
        assert_eq!(final_union([0, 1]), final_union([1, 0]));

        w.advance().unwrap();
        let mut engine_final: Vec<Term> =
            w.alive_agents().flat_map(|s| s.pool.expanded()).collect();
        engine_final.sort();
        assert_eq!(engine_final, final_union([0, 1]));
    }

    #[test]
    fn deterministic_traces_for_equal_seeds() {
        let run = || {
            let mut w = world();
            w.register_ruleset(
                "ping",
                vec![Rule::new("pong").consumes([t("ping(N)")]).emits([t("pinged(N)")]).group([t("ponged(N)")])],
            )
            .unwrap();
            for i in 0..5 {
                w.spawn(format!("a{i}"), "ping", [t(&format!("ping({i})"))]).unwrap();
            }
            w.policy.delay = DelayPolicy::Uniform {
                min: Time::from_integer(0),
                max: Time::from_integer(3),
            };
            w.advance().unwrap();
            w.trace().join("\n")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn drop_policy_loses_some_messages_deterministically() {
        let mut lost = 0;
        let mut kept = 0;
        for round in 0..50 {
            let mut w = idle_world_with(&["a", "b"]);
            w.policy.drop = DropPolicy::Prob(Rational64::new(1, 2));
            w.broadcast(&"a".into(), &t(&format!("m({round})"))).unwrap();
            if w.queue.is_empty() {
                lost += 1;
            } else {
                kept += 1;
            }
        }
        assert!(lost > 5 && kept > 5, "p=1/2 should lose some and keep some");
    }
}
