//! Generic communication rule sets: RPC-style and query-style connections,
//! with and without server replication, plus timer-controlled timeout
//! handling and the majority commit policy.
//!
//! The factories return plain rule data; application behavior is supplied
//! through [`CommHooks`] and executed by [`CommHost`], which implements the
//! kernel's guard-hook interface. Trace lines carry the rule labels (R1,
//! Rr3, Qr10, T, ...) so runs can be audited against the rule sets.
//!
//! Vocabulary of resources used by the generated rules:
//!
//! - `client(C)` — a ready client; `client(C,blocked,Id)` — awaiting the
//!   RPC reply; `client(C,catch-follow-up-replies,Id)` — absorbing late
//!   replies of an already-handled request.
//! - `client(C,blocked(K),Id)` / `client(C,blocked(S,K),Id)` — awaiting the
//!   K-th query reply (of server S); `client(C,blocked-other-server(1),Id)`
//!   and `client(C,blocked-other-server(S,K),Id)` — the per-query listener
//!   and the per-server catch agents of a replicated query.
//! - `msg-request(Id,P)` / `msg-query(Id,P)` — broadcast requests;
//!   `msg-reply(S,Id,R)` — RPC reply; `msg-reply(S,K,Id,R)` and
//!   `msg-reply(S,last,N,Id,R)` — numbered and last-tagged query replies.
//! - `timer(C,Id,T)` / `timeout(C,Id)` — timer agent state and the timeout
//!   signal it broadcasts.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::kernel::{AgentId, EngineError, GuardScope, Hooks, Rule, Services};
use crate::simnet::World;
use crate::term::{Symbol, Term};
use crate::time::{Time, time_zero};

pub const GET_RPC_ID: &str = "get-unique-rpc-id";
pub const GET_QUERY_ID: &str = "get-unique-query-id";
pub const PRODUCE: &str = "produce";
pub const PRODUCE_STREAM: &str = "produce-stream";
pub const NEXT_REPLY: &str = "next-reply";
pub const LAST_REPLY: &str = "last-reply";
pub const CONSUME: &str = "consume";
pub const SOME_POLICY: &str = "some-policy";
pub const SUCC: &str = "succ";
pub const IN_SCOPE: &str = "in-scope";
pub const REQ_BEGIN: &str = "req-begin";

fn pt(s: &str) -> Term {
    Term::parse(s).expect("static rule pattern")
}

/// Connection style of a request, as seen by the hooks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConnKind {
    Rpc,
    Query,
    /// Fire-and-forget broadcast (no blocking, no reply handling).
    Cast,
}

impl ConnKind {
    fn atom(self) -> Term {
        match self {
            ConnKind::Rpc => Term::atom("rpc"),
            ConnKind::Query => Term::atom("query"),
            ConnKind::Cast => Term::atom("cast"),
        }
    }

    fn from_atom(t: &Term) -> Option<ConnKind> {
        match t.functor()?.as_str() {
            "rpc" => Some(ConnKind::Rpc),
            "query" => Some(ConnKind::Query),
            "cast" => Some(ConnKind::Cast),
            _ => None,
        }
    }
}

/// Fresh request/reply binding token: `rpc-id(origin,n)` or `query-id(origin,n)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CorrelationId {
    pub origin: AgentId,
    pub counter: u64,
    pub kind: ConnKind,
}

impl CorrelationId {
    pub fn to_term(&self) -> Term {
        let f = match self.kind {
            ConnKind::Query => "query-id",
            _ => "rpc-id",
        };
        Term::app(f, vec![self.origin.to_term(), Term::int(self.counter as i64)])
    }

    pub fn from_term(t: &Term) -> Option<CorrelationId> {
        let kind = match t.functor()?.as_str() {
            "rpc-id" => ConnKind::Rpc,
            "query-id" => ConnKind::Query,
            _ => return None,
        };
        let [origin, counter] = t.args() else { return None };
        Some(CorrelationId {
            origin: AgentId::new(origin.functor()?.as_str()),
            counter: counter.as_int()? as u64,
            kind,
        })
    }
}

/// Position of a reply within one server's stream for one query:
/// `reply_no` ranges 1..=n and `is_last` marks the n-th.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplyTag {
    pub reply_no: u64,
    pub is_last: bool,
}

/// Build the wire form of a query reply carrying `tag`.
pub fn query_reply_term(server: &AgentId, tag: ReplyTag, corr: &Term, result: &Term) -> Term {
    if tag.is_last {
        Term::app(
            "msg-reply",
            vec![
                server.to_term(),
                Term::atom("last"),
                Term::int(tag.reply_no as i64),
                corr.clone(),
                result.clone(),
            ],
        )
    } else {
        Term::app(
            "msg-reply",
            vec![server.to_term(), Term::int(tag.reply_no as i64), corr.clone(), result.clone()],
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Commit,
    Abort,
}

/// Majority consensus: commit iff strictly more than half of the servers
/// replied, i.e. `2 * |repliers| > total`.
pub fn majority_policy(total_servers: usize, repliers: &BTreeSet<AgentId>) -> Decision {
    if 2 * repliers.len() > total_servers {
        Decision::Commit
    } else {
        Decision::Abort
    }
}

// ---------------------------------------------------------------------------
// Application hooks
// ---------------------------------------------------------------------------

/// Application callbacks wired into the generic rule sets.
///
/// All hooks must be deterministic given the world seed; they may keep state
/// of their own but must not touch agent pools (deliveries go through
/// [`Services::deliver`]).
pub trait CommHooks {
    /// RPC servers: compute the result for a request. Failures are reported
    /// as an error result term (e.g. `err(reason)`), never as a panic — the
    /// reply is sent either way.
    fn produce(&mut self, server: &AgentId, corr: &Term, params: &Term, svc: &mut Services<'_>) -> Term;

    /// Query servers: compute the whole ordered reply stream up front.
    fn produce_stream(
        &mut self,
        server: &AgentId,
        corr: &Term,
        params: &Term,
        svc: &mut Services<'_>,
    ) -> Vec<Term>;

    /// Clients: a reply from `server` for `corr` has been consumed.
    fn consume(&mut self, server: &AgentId, corr: &Term, result: &Term, svc: &mut Services<'_>);

    /// Timeout handling: decide commit/abort for `corr` based on the replies
    /// seen so far. Invoked by every timeout rule holding a `some-policy`
    /// guard, so implementations must be idempotent per correlation.
    fn some_policy(&mut self, _client: &AgentId, _corr: &Term, _svc: &mut Services<'_>) {}

    /// Servers: whether this server answers requests with these parameters
    /// (used to scope replicated servers to their service). Must be pure.
    fn in_scope(&self, _server: &AgentId, _params: &Term) -> bool {
        true
    }

    /// Clients: a request is being initiated (fires before the broadcast).
    fn on_request(
        &mut self,
        _client: &AgentId,
        _corr: &Term,
        _params: &Term,
        _kind: ConnKind,
        _svc: &mut Services<'_>,
    ) {
    }

    /// Fallback for application-specific guard hooks.
    fn extra(&mut self, hook: &Symbol, _scope: &mut GuardScope<'_, '_>) -> Result<bool, EngineError> {
        Err(EngineError::UnknownHook(hook.to_string()))
    }
}

#[derive(Clone, Debug)]
struct PendingStream {
    remaining: VecDeque<Term>,
    sent: u64,
}

/// Kernel host executing the toolkit's guard hooks on top of a [`CommHooks`]
/// application: fresh id generation, query stream bookkeeping, and dispatch
/// of produce/consume/policy callbacks.
#[derive(Clone, Debug)]
pub struct CommHost<T> {
    pub app: T,
    streams: BTreeMap<(AgentId, Term), PendingStream>,
}

impl<T: CommHooks> CommHost<T> {
    pub fn new(app: T) -> Self {
        CommHost {
            app,
            streams: BTreeMap::new(),
        }
    }
}

fn term_agent(t: &Term) -> Result<AgentId, EngineError> {
    match t {
        Term::Atom(s) => Ok(AgentId::new(s.as_str())),
        other => Err(EngineError::Hook {
            hook: "?".into(),
            msg: format!("expected an agent id atom, got {other}"),
        }),
    }
}

impl<T: CommHooks> Hooks for CommHost<T> {
    fn eval(&mut self, hook: &Symbol, scope: &mut GuardScope<'_, '_>) -> Result<bool, EngineError> {
        match hook.as_str() {
            GET_RPC_ID | GET_QUERY_ID => {
                let kind = if hook.as_str() == GET_RPC_ID { ConnKind::Rpc } else { ConnKind::Query };
                let corr = CorrelationId {
                    origin: scope.svc.agent.clone(),
                    counter: scope.svc.fresh_id(),
                    kind,
                };
                scope.bind_arg(0, corr.to_term())
            }
            SUCC => {
                let k = scope.int_arg(0)?;
                scope.bind_arg(1, Term::int(k + 1))
            }
            PRODUCE => {
                let corr = scope.ground_arg(0)?.clone();
                let params = scope.ground_arg(1)?.clone();
                let server = scope.svc.agent.clone();
                let result = self.app.produce(&server, &corr, &params, scope.svc);
                scope.bind_arg(2, result)
            }
            PRODUCE_STREAM => {
                let corr = scope.ground_arg(0)?.clone();
                let params = scope.ground_arg(1)?.clone();
                let server = scope.svc.agent.clone();
                let stream = self.app.produce_stream(&server, &corr, &params, scope.svc);
                self.streams.insert(
                    (server, corr),
                    PendingStream {
                        remaining: stream.into(),
                        sent: 0,
                    },
                );
                Ok(true)
            }
            NEXT_REPLY => {
                let corr = scope.ground_arg(0)?.clone();
                let key = (scope.svc.agent.clone(), corr);
                let Some(p) = self.streams.get_mut(&key) else {
                    return Ok(false);
                };
                if p.remaining.len() < 2 {
                    return Ok(false);
                }
                let r = p.remaining.pop_front().unwrap();
                p.sent += 1;
                let k = p.sent;
                Ok(scope.bind_arg(1, Term::int(k as i64))? && scope.bind_arg(2, r)?)
            }
            LAST_REPLY => {
                let corr = scope.ground_arg(0)?.clone();
                let key = (scope.svc.agent.clone(), corr);
                let Some(p) = self.streams.get_mut(&key) else {
                    return Ok(false);
                };
                if p.remaining.len() > 1 {
                    return Ok(false);
                }
                let (n, r) = match p.remaining.pop_front() {
                    Some(r) => (p.sent + 1, r),
                    None => (0, Term::atom("empty")),
                };
                self.streams.remove(&key);
                Ok(scope.bind_arg(1, Term::int(n as i64))? && scope.bind_arg(2, r)?)
            }
            CONSUME => {
                let server = term_agent(scope.ground_arg(0)?)?;
                let corr = scope.ground_arg(1)?.clone();
                let result = scope.ground_arg(2)?.clone();
                self.app.consume(&server, &corr, &result, scope.svc);
                Ok(true)
            }
            SOME_POLICY => {
                let client = term_agent(scope.ground_arg(0)?)?;
                let corr = scope.ground_arg(1)?.clone();
                self.app.some_policy(&client, &corr, scope.svc);
                Ok(true)
            }
            IN_SCOPE => {
                let params = scope.ground_arg(0)?;
                Ok(self.app.in_scope(scope.svc.agent, params))
            }
            REQ_BEGIN => {
                let client = term_agent(scope.ground_arg(0)?)?;
                let corr = scope.ground_arg(1)?.clone();
                let params = scope.ground_arg(2)?.clone();
                let kind = ConnKind::from_atom(scope.ground_arg(3)?).ok_or_else(|| EngineError::Hook {
                    hook: REQ_BEGIN.into(),
                    msg: "bad connection kind".into(),
                })?;
                self.app.on_request(&client, &corr, &params, kind, scope.svc);
                Ok(true)
            }
            _ => self.app.extra(hook, scope),
        }
    }
}

// ---------------------------------------------------------------------------
// Rule set factories
// ---------------------------------------------------------------------------

/// A timer to attach to a client's requests: `owner` and `correlation` are
/// filled per request by the initiation rules; `set_timer` uses them as-is.
#[derive(Clone, Debug)]
pub struct TimerSpec {
    pub owner: AgentId,
    pub correlation: Term,
    pub duration: Time,
}

#[derive(Clone, Debug)]
pub struct RpcClientConfig {
    pub replicated: bool,
    /// Timeout value; when set, initiation spawns a timer agent and the
    /// timeout-handling rules are added.
    pub timer: Option<Time>,
    /// Trigger pattern consumed by the initiation rule.
    pub trigger: Term,
    /// Request payload pattern (its variables must occur in `trigger`).
    pub payload: Term,
    /// Suffix distinguishing initiation rules when several trigger kinds
    /// share one rule set (e.g. `Rr1_t.deposit`).
    pub label: Option<String>,
}

impl RpcClientConfig {
    pub fn new(replicated: bool, timer: Option<Time>) -> Self {
        RpcClientConfig {
            replicated,
            timer,
            trigger: Term::atom("trigger"),
            payload: Term::atom("params"),
            label: None,
        }
    }

    pub fn with_trigger(mut self, trigger: Term, payload: Term) -> Self {
        self.trigger = trigger;
        self.payload = payload;
        self
    }

    pub fn labeled(mut self, suffix: &str) -> Self {
        self.label = Some(suffix.to_string());
        self
    }
}

fn label(base: &str, suffix: &Option<String>) -> String {
    match suffix {
        Some(s) => format!("{base}.{s}"),
        None => base.to_string(),
    }
}

/// Client: initiate RPC-request (rules R1 / Rr1 / R1_t / Rr1_t).
pub fn rpc_initiation_rule(cfg: &RpcClientConfig) -> Rule {
    let base = match (cfg.replicated, cfg.timer.is_some()) {
        (false, false) => "R1",
        (false, true) => "R1_t",
        (true, false) => "Rr1",
        (true, true) => "Rr1_t",
    };
    let mut rule = Rule::new(&label(base, &cfg.label))
        .consumes([pt("client(C)"), cfg.trigger.clone()])
        .guard(GET_RPC_ID, [pt("Id")])
        .guard(
            REQ_BEGIN,
            [pt("C"), pt("Id"), cfg.payload.clone(), ConnKind::Rpc.atom()],
        )
        .emits([Term::app("msg-request", vec![pt("Id"), cfg.payload.clone()])])
        .group([pt("client(C,blocked,Id)")]);
    if let Some(t) = cfg.timer {
        rule = rule.group([Term::app("timer", vec![pt("C"), pt("Id"), Term::rat(t)])]);
    }
    rule
}

/// Client reply consumption: R3 (plain) or Rr3 + Rr4 (replicated, spawning
/// the catch-follow-up client that absorbs late replies).
pub fn rpc_reply_rules(replicated: bool) -> Vec<Rule> {
    if !replicated {
        return vec![Rule::new("R3")
            .consumes([pt("client(C,blocked,Id)"), pt("msg-reply(S,Id,R)")])
            .guard(CONSUME, [pt("S"), pt("Id"), pt("R")])
            .group([pt("client(C)")])];
    }
    vec![
        Rule::new("Rr3")
            .consumes([pt("client(C,blocked,Id)"), pt("msg-reply(S,Id,R)")])
            .guard(CONSUME, [pt("S"), pt("Id"), pt("R")])
            .group([pt("client(C)")])
            .group([pt("client(C,catch-follow-up-replies,Id)")]),
        Rule::new("Rr4")
            .consumes([pt("client(C,catch-follow-up-replies,Id)"), pt("msg-reply(S,Id,R)")])
            .guard(CONSUME, [pt("S"), pt("Id"), pt("R")])
            .group([pt("client(C,catch-follow-up-replies,Id)")]),
    ]
}

/// Timeout handling for RPC clients: R3_t / Rr3_t re-install the client,
/// Rr4_t terminates the catch-follow-up client (always terminating the last
/// one, which would otherwise linger forever).
pub fn rpc_timeout_rules(replicated: bool) -> Vec<Rule> {
    let reinstall = Rule::new(if replicated { "Rr3_t" } else { "R3_t" })
        .consumes([pt("client(C,blocked,Id)"), pt("timeout(C,Id)")])
        .guard(SOME_POLICY, [pt("C"), pt("Id")])
        .group([pt("client(C)")]);
    if !replicated {
        return vec![reinstall];
    }
    vec![
        reinstall,
        Rule::new("Rr4_t")
            .consumes([pt("client(C,catch-follow-up-replies,Id)"), pt("timeout(C,Id)")])
            .guard(SOME_POLICY, [pt("C"), pt("Id")]),
    ]
}

/// Consume a stale timeout once the client is back in the ready state, so
/// timeout resources of completed requests do not pile up.
pub fn cleanup_rule() -> Rule {
    Rule::new("CLEAN")
        .consumes([pt("client(C)"), pt("timeout(C,Id)")])
        .group([pt("client(C)")])
}

/// Timer main rule (T): once the armed expiry injects the timeout resource,
/// broadcast it to all client instantiations and terminate.
pub fn timer_rule() -> Rule {
    Rule::new("T")
        .consumes([pt("timer(C,Id,Tv)"), pt("timeout(C,Id)")])
        .emits([pt("timeout(C,Id)")])
}

pub fn make_timer_rules() -> Vec<Rule> {
    vec![timer_rule()]
}

/// Complete RPC client rule set for one trigger kind.
pub fn make_rpc_client_rules(cfg: &RpcClientConfig) -> Vec<Rule> {
    let mut rules = vec![rpc_initiation_rule(cfg)];
    rules.extend(rpc_reply_rules(cfg.replicated));
    if cfg.timer.is_some() {
        rules.extend(rpc_timeout_rules(cfg.replicated));
        rules.push(cleanup_rule());
        rules.push(timer_rule());
    }
    rules
}

/// Server: produce result and reply to RPC-request (rule R2, identical for
/// replicated deployments). With `scoped`, the `in-scope` hook filters which
/// requests this server answers.
pub fn make_rpc_server_rules(scoped: bool) -> Vec<Rule> {
    let mut rule = Rule::new("R2").consumes([pt("server(S)"), pt("msg-request(Id,P)")]);
    if scoped {
        rule = rule.guard(IN_SCOPE, [pt("P")]);
    }
    vec![rule
        .guard(PRODUCE, [pt("Id"), pt("P"), pt("Res")])
        .emits([pt("msg-reply(S,Id,Res)")])
        .group([pt("server(S)")])]
}

#[derive(Clone, Debug)]
pub struct QueryClientConfig {
    pub replicated: bool,
    pub timer: Option<Time>,
    pub trigger: Term,
    pub payload: Term,
    /// Replicated variant that deletes the other-server listener in Qr4:
    /// only the fastest server's stream is kept, all redundant replies of
    /// other servers are ignored.
    pub first_only: bool,
    pub label: Option<String>,
}

impl QueryClientConfig {
    pub fn new(replicated: bool, timer: Option<Time>) -> Self {
        QueryClientConfig {
            replicated,
            timer,
            trigger: Term::atom("trigger"),
            payload: Term::atom("params"),
            first_only: false,
            label: None,
        }
    }

    pub fn with_trigger(mut self, trigger: Term, payload: Term) -> Self {
        self.trigger = trigger;
        self.payload = payload;
        self
    }

    pub fn first_only(mut self) -> Self {
        self.first_only = true;
        self
    }

    pub fn labeled(mut self, suffix: &str) -> Self {
        self.label = Some(suffix.to_string());
        self
    }
}

/// Client: initiate query-request (Q1 / Qr1 / Q1_t / Qr1_t), blocking for
/// the first reply.
pub fn query_initiation_rule(cfg: &QueryClientConfig) -> Rule {
    let base = match (cfg.replicated, cfg.timer.is_some()) {
        (false, false) => "Q1",
        (false, true) => "Q1_t",
        (true, false) => "Qr1",
        (true, true) => "Qr1_t",
    };
    let mut rule = Rule::new(&label(base, &cfg.label))
        .consumes([pt("client(C)"), cfg.trigger.clone()])
        .guard(GET_QUERY_ID, [pt("Id")])
        .guard(
            REQ_BEGIN,
            [pt("C"), pt("Id"), cfg.payload.clone(), ConnKind::Query.atom()],
        )
        .emits([Term::app("msg-query", vec![pt("Id"), cfg.payload.clone()])])
        .group([pt("client(C,blocked(1),Id)")]);
    if let Some(t) = cfg.timer {
        rule = rule.group([Term::app("timer", vec![pt("C"), pt("Id"), Term::rat(t)])]);
    }
    rule
}

/// Reply consumption for queries. Replies are consumed strictly in sequence
/// per server whatever the delivery order: the k-th reply only matches the
/// blocked(k) state, so an early last-tagged reply cannot unblock the client.
pub fn query_reply_rules(replicated: bool, first_only: bool) -> Vec<Rule> {
    if !replicated {
        return vec![
            Rule::new("Q3")
                .consumes([pt("client(C,blocked(Rn),Id)"), pt("msg-reply(S,Rn,Id,R)")])
                .guard(CONSUME, [pt("S"), pt("Id"), pt("R")])
                .guard(SUCC, [pt("Rn"), pt("Rs")])
                .group([pt("client(C,blocked(Rs),Id)")]),
            Rule::new("Q4")
                .consumes([pt("client(C,blocked(Rn),Id)"), pt("msg-reply(S,last,Rn,Id,R)")])
                .guard(CONSUME, [pt("S"), pt("Id"), pt("R")])
                .group([pt("client(C)")]),
            // Empty stream: a last-tagged reply numbered 0 unblocks without
            // any consumption.
            Rule::new("Q4e")
                .consumes([pt("client(C,blocked(1),Id)"), pt("msg-reply(S,last,0,Id,R)")])
                .group([pt("client(C)")]),
        ];
    }

    let qr3 = Rule::new("Qr3")
        .consumes([pt("client(C,blocked(1),Id)"), pt("msg-reply(F,1,Id,R)")])
        .guard(CONSUME, [pt("F"), pt("Id"), pt("R")])
        .group([pt("client(C,blocked-other-server(1),Id)")])
        .group([pt("client(C,blocked(F,2),Id)")]);

    let mut qr4 = Rule::new("Qr4")
        .consumes([pt("client(C,blocked(1),Id)"), pt("msg-reply(F,last,1,Id,R)")])
        .guard(CONSUME, [pt("F"), pt("Id"), pt("R")])
        .group([pt("client(C)")]);
    let mut qr4e = Rule::new("Qr4e")
        .consumes([pt("client(C,blocked(1),Id)"), pt("msg-reply(F,last,0,Id,R)")])
        .group([pt("client(C)")]);
    if !first_only {
        qr4 = qr4.group([pt("client(C,blocked-other-server(1),Id)")]);
        qr4e = qr4e.group([pt("client(C,blocked-other-server(1),Id)")]);
    }

    vec![
        qr3,
        qr4,
        qr4e,
        Rule::new("Qr5")
            .consumes([pt("client(C,blocked(F,Rn),Id)"), pt("msg-reply(F,Rn,Id,R)")])
            .guard(CONSUME, [pt("F"), pt("Id"), pt("R")])
            .guard(SUCC, [pt("Rn"), pt("Rs")])
            .group([pt("client(C,blocked(F,Rs),Id)")]),
        Rule::new("Qr6")
            .consumes([pt("client(C,blocked(F,Rn),Id)"), pt("msg-reply(F,last,Rn,Id,R)")])
            .guard(CONSUME, [pt("F"), pt("Id"), pt("R")])
            .group([pt("client(C)")]),
        Rule::new("Qr7")
            .consumes([pt("client(C,blocked-other-server(1),Id)"), pt("msg-reply(O,1,Id,R)")])
            .guard(CONSUME, [pt("O"), pt("Id"), pt("R")])
            .group([pt("client(C,blocked-other-server(1),Id)")])
            .group([pt("client(C,blocked-other-server(O,2),Id)")]),
        Rule::new("Qr8")
            .consumes([pt("client(C,blocked-other-server(1),Id)"), pt("msg-reply(O,last,1,Id,R)")])
            .guard(CONSUME, [pt("O"), pt("Id"), pt("R")])
            .group([pt("client(C,blocked-other-server(1),Id)")]),
        Rule::new("Qr8e")
            .consumes([pt("client(C,blocked-other-server(1),Id)"), pt("msg-reply(O,last,0,Id,R)")])
            .group([pt("client(C,blocked-other-server(1),Id)")]),
        Rule::new("Qr9")
            .consumes([pt("client(C,blocked-other-server(O,Rn),Id)"), pt("msg-reply(O,Rn,Id,R)")])
            .guard(CONSUME, [pt("O"), pt("Id"), pt("R")])
            .guard(SUCC, [pt("Rn"), pt("Rs")])
            .group([pt("client(C,blocked-other-server(O,Rs),Id)")]),
        Rule::new("Qr10")
            .consumes([pt("client(C,blocked-other-server(O,Rn),Id)"), pt("msg-reply(O,last,Rn,Id,R)")])
            .guard(CONSUME, [pt("O"), pt("Id"), pt("R")]),
    ]
}

/// Timeout handling for query clients: the main chain is re-installed,
/// listener and per-server catch agents terminate.
pub fn query_timeout_rules(replicated: bool) -> Vec<Rule> {
    if !replicated {
        return vec![
            Rule::new("Q3_t")
                .consumes([pt("client(C,blocked(1),Id)"), pt("timeout(C,Id)")])
                .guard(SOME_POLICY, [pt("C"), pt("Id")])
                .group([pt("client(C)")]),
            Rule::new("Q4_t")
                .consumes([pt("client(C,blocked(Rn),Id)"), pt("timeout(C,Id)")])
                .guard(SOME_POLICY, [pt("C"), pt("Id")])
                .group([pt("client(C)")]),
        ];
    }
    vec![
        Rule::new("Qr3_t")
            .consumes([pt("client(C,blocked(1),Id)"), pt("timeout(C,Id)")])
            .guard(SOME_POLICY, [pt("C"), pt("Id")])
            .group([pt("client(C)")]),
        Rule::new("Qr4_t")
            .consumes([pt("client(C,blocked(F,Rn),Id)"), pt("timeout(C,Id)")])
            .guard(SOME_POLICY, [pt("C"), pt("Id")])
            .group([pt("client(C)")]),
        Rule::new("Qr5_t")
            .consumes([pt("client(C,blocked-other-server(1),Id)"), pt("timeout(C,Id)")])
            .guard(SOME_POLICY, [pt("C"), pt("Id")]),
        Rule::new("Qr6_t")
            .consumes([pt("client(C,blocked-other-server(O,Rn),Id)"), pt("timeout(C,Id)")])
            .guard(SOME_POLICY, [pt("C"), pt("Id")]),
    ]
}

/// Complete query client rule set for one trigger kind.
pub fn make_query_client_rules(cfg: &QueryClientConfig) -> Vec<Rule> {
    let mut rules = vec![query_initiation_rule(cfg)];
    rules.extend(query_reply_rules(cfg.replicated, cfg.first_only));
    if cfg.timer.is_some() {
        rules.extend(query_timeout_rules(cfg.replicated));
        rules.push(cleanup_rule());
        rules.push(timer_rule());
    }
    rules
}

/// Server: produce reply stream for a query-request (rule Q2 as a small
/// chain: Q2 computes the stream and restores the server, Q2s emits the
/// k-th reply, Q2l emits the last-tagged reply — numbered 0 and carrying
/// `empty` when the stream is empty).
pub fn make_query_server_rules(scoped: bool) -> Vec<Rule> {
    let mut q2 = Rule::new("Q2").consumes([pt("server(S)"), pt("msg-query(Id,P)")]);
    if scoped {
        q2 = q2.guard(IN_SCOPE, [pt("P")]);
    }
    vec![
        q2.guard(PRODUCE_STREAM, [pt("Id"), pt("P")])
            .group([pt("server(S)"), pt("q2-pending(S,Id)")]),
        Rule::new("Q2s")
            .consumes([pt("q2-pending(S,Id)")])
            .guard(NEXT_REPLY, [pt("Id"), pt("K"), pt("R")])
            .emits([pt("msg-reply(S,K,Id,R)")])
            .group([pt("q2-pending(S,Id)")]),
        Rule::new("Q2l")
            .consumes([pt("q2-pending(S,Id)")])
            .guard(LAST_REPLY, [pt("Id"), pt("N"), pt("R")])
            .emits([pt("msg-reply(S,last,N,Id,R)")])
            .group([]),
    ]
}

/// Spawn a standalone timer agent for `spec` and arm its expiry: the
/// timeout resource becomes consumable no earlier than `now + duration`,
/// upon which rule (T) broadcasts `timeout(owner, correlation)`.
pub fn set_timer<H: Hooks>(world: &mut World<H>, spec: &TimerSpec) -> Result<AgentId, EngineError> {
    if spec.duration <= time_zero() {
        return Err(EngineError::BadTimer(format!(
            "timer duration must be positive, got {}",
            spec.duration
        )));
    }
    if world.ruleset("timer").is_none() {
        world.register_ruleset("timer", make_timer_rules())?;
    }
    let n = world.fresh_id();
    let timer_term = Term::app(
        "timer",
        vec![spec.owner.to_term(), spec.correlation.clone(), Term::rat(spec.duration)],
    );
    let id = world.spawn(format!("timer+{n}"), "timer", [timer_term])?;
    let timeout = Term::app("timeout", vec![spec.owner.to_term(), spec.correlation.clone()]);
    let due = world.now() + spec.duration;
    world.schedule_expiry(id.clone(), timeout, due);
    Ok(id)
}

// ---------------------------------------------------------------------------
// A simple recording application, used by tests and handy for debugging
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ConsumeRecord {
    pub rule: String,
    pub consumer: AgentId,
    pub server: AgentId,
    pub corr: Term,
    pub result: Term,
    pub at: Time,
}

#[derive(Clone, Debug)]
pub struct PolicyRecord {
    pub rule: String,
    pub client: AgentId,
    pub corr: Term,
    pub at: Time,
}

#[derive(Clone, Debug)]
pub struct RequestRecord {
    pub client: AgentId,
    pub corr: Term,
    pub payload: Term,
    pub kind: ConnKind,
    pub at: Time,
}

/// Echo application: RPC results are `echo(params)`, query streams come from
/// a canned table, and every hook invocation is logged.
#[derive(Clone, Debug, Default)]
pub struct RecordingHost {
    /// Query reply streams keyed by request payload.
    pub canned_streams: BTreeMap<Term, Vec<Term>>,
    pub consume_log: Vec<ConsumeRecord>,
    pub policy_log: Vec<PolicyRecord>,
    pub request_log: Vec<RequestRecord>,
}

impl RecordingHost {
    pub fn consumes_for(&self, corr: &Term) -> Vec<&ConsumeRecord> {
        self.consume_log.iter().filter(|c| &c.corr == corr).collect()
    }
}

impl CommHooks for RecordingHost {
    fn produce(&mut self, _server: &AgentId, _corr: &Term, params: &Term, _svc: &mut Services<'_>) -> Term {
        Term::app("echo", vec![params.clone()])
    }

    fn produce_stream(
        &mut self,
        _server: &AgentId,
        _corr: &Term,
        params: &Term,
        _svc: &mut Services<'_>,
    ) -> Vec<Term> {
        self.canned_streams.get(params).cloned().unwrap_or_default()
    }

    fn consume(&mut self, server: &AgentId, corr: &Term, result: &Term, svc: &mut Services<'_>) {
        self.consume_log.push(ConsumeRecord {
            rule: svc.rule.to_string(),
            consumer: svc.agent.clone(),
            server: server.clone(),
            corr: corr.clone(),
            result: result.clone(),
            at: svc.now,
        });
    }

    fn some_policy(&mut self, client: &AgentId, corr: &Term, svc: &mut Services<'_>) {
        self.policy_log.push(PolicyRecord {
            rule: svc.rule.to_string(),
            client: client.clone(),
            corr: corr.clone(),
            at: svc.now,
        });
    }

    fn on_request(
        &mut self,
        client: &AgentId,
        corr: &Term,
        params: &Term,
        kind: ConnKind,
        svc: &mut Services<'_>,
    ) {
        self.request_log.push(RequestRecord {
            client: client.clone(),
            corr: corr.clone(),
            payload: params.clone(),
            kind,
            at: svc.now,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::DelayPolicy;
    use crate::time::secs;

    type EchoWorld = World<CommHost<RecordingHost>>;

    fn client_pool(name: &str) -> Term {
        Term::app("client", vec![Term::atom(name)])
    }

    fn server_pool(name: &str) -> Term {
        Term::app("server", vec![Term::atom(name)])
    }

    fn rpc_world(replicated: bool, timer: Option<Time>, servers: usize, clients: usize) -> EchoWorld {
        let mut w = World::new(1, CommHost::new(RecordingHost::default()));
        let cfg = RpcClientConfig::new(replicated, timer).with_trigger(pt("trigger(P)"), pt("P"));
        w.register_ruleset("rpc-client", make_rpc_client_rules(&cfg)).unwrap();
        w.register_ruleset("rpc-server", make_rpc_server_rules(false)).unwrap();
        for i in 1..=servers {
            let n = format!("s{i}");
            w.spawn(n.clone(), "rpc-server", [server_pool(&n)]).unwrap();
        }
        for i in 1..=clients {
            let n = format!("c{i}");
            w.spawn(n.clone(), "rpc-client", [client_pool(&n)]).unwrap();
        }
        w
    }

    fn query_world(replicated: bool, timer: Option<Time>, servers: usize, streams: &[(&str, &[&str])]) -> EchoWorld {
        let mut host = RecordingHost::default();
        for (payload, stream) in streams {
            host.canned_streams
                .insert(pt(payload), stream.iter().map(|s| pt(s)).collect());
        }
        let mut w = World::new(1, CommHost::new(host));
        let cfg = QueryClientConfig::new(replicated, timer).with_trigger(pt("trigger(P)"), pt("P"));
        w.register_ruleset("q-client", make_query_client_rules(&cfg)).unwrap();
        w.register_ruleset("q-server", make_query_server_rules(false)).unwrap();
        for i in 1..=servers {
            let n = format!("s{i}");
            w.spawn(n.clone(), "q-server", [server_pool(&n)]).unwrap();
        }
        w.spawn("c1", "q-client", [client_pool("c1")]).unwrap();
        w
    }

    fn rule_names(rules: &[Rule]) -> Vec<&str> {
        rules.iter().map(|r| r.name.as_str()).collect()
    }

    fn fired_rules(w: &EchoWorld) -> Vec<&str> {
        w.trace().iter().map(|l| l.split('\t').nth(3).unwrap()).collect()
    }

    /// The ready marker `client(name)` can migrate to a forked agent (query
    /// rule Qr3 keeps the listener on the original id), so scan all agents.
    fn client_ready(w: &EchoWorld, name: &str) -> bool {
        let marker = client_pool(name);
        w.alive_agents().any(|a| a.pool.contains(&marker))
    }

    #[test]
    fn factory_rule_name_sets() {
        let plain = make_rpc_client_rules(&RpcClientConfig::new(false, None));
        assert_eq!(rule_names(&plain), vec!["R1", "R3"]);

        let repl_timed = make_rpc_client_rules(&RpcClientConfig::new(true, Some(secs(5))));
        assert_eq!(
            rule_names(&repl_timed),
            vec!["Rr1_t", "Rr3", "Rr4", "Rr3_t", "Rr4_t", "CLEAN", "T"]
        );

        let repl = make_rpc_client_rules(&RpcClientConfig::new(true, None));
        assert_eq!(rule_names(&repl), vec!["Rr1", "Rr3", "Rr4"]);

        let q_plain = make_query_client_rules(&QueryClientConfig::new(false, None));
        assert_eq!(rule_names(&q_plain), vec!["Q1", "Q3", "Q4", "Q4e"]);

        let q_repl_timed = make_query_client_rules(&QueryClientConfig::new(true, Some(secs(5))));
        assert_eq!(
            rule_names(&q_repl_timed),
            vec![
                "Qr1_t", "Qr3", "Qr4", "Qr4e", "Qr5", "Qr6", "Qr7", "Qr8", "Qr8e", "Qr9", "Qr10",
                "Qr3_t", "Qr4_t", "Qr5_t", "Qr6_t", "CLEAN", "T"
            ]
        );

        for rules in [&plain, &repl_timed, &repl, &q_plain, &q_repl_timed] {
            for r in rules.iter() {
                r.validate().unwrap();
            }
        }
    }

    #[test]
    fn first_only_variant_drops_the_listener_in_qr4() {
        let rules = query_reply_rules(true, true);
        let qr4 = rules.iter().find(|r| r.name == "Qr4").unwrap();
        assert_eq!(qr4.rhs_groups.len(), 1);
        let qr4_full = query_reply_rules(true, false);
        let qr4_full = qr4_full.iter().find(|r| r.name == "Qr4").unwrap();
        assert_eq!(qr4_full.rhs_groups.len(), 2);
    }

    #[test]
    fn plain_rpc_one_consume_and_client_returns_ready() {
        let mut w = rpc_world(false, None, 1, 1);
        w.schedule_delivery("c1".into(), pt("trigger(p(7))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        assert_eq!(host.consume_log.len(), 1);
        assert_eq!(host.consume_log[0].result, pt("echo(p(7))"));
        assert_eq!(host.consume_log[0].server, "s1".into());
        assert!(client_ready(&w, "c1"));
        assert_eq!(fired_rules(&w), vec!["R1", "R2", "R3"]);
    }

    #[test]
    fn concurrent_requests_get_distinct_ids_and_do_not_cross_talk() {
        let mut w = rpc_world(false, None, 1, 2);
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(0));
        w.schedule_delivery("c2".into(), pt("trigger(p(2))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        assert_eq!(host.request_log.len(), 2);
        assert_ne!(host.request_log[0].corr, host.request_log[1].corr);
        for req in &host.request_log {
            let consumed: Vec<_> = host.consumes_for(&req.corr);
            assert_eq!(consumed.len(), 1);
            assert_eq!(consumed[0].result, Term::app("echo", vec![req.payload.clone()]));
        }
    }

    #[test]
    fn replicated_rpc_main_plus_follow_up_consumes_and_the_acknowledged_leak() {
        let mut w = rpc_world(true, None, 3, 1);
        let initial = w.alive_count();
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        let corr = host.request_log[0].corr.clone();
        let consumed = host.consumes_for(&corr);
        assert_eq!(consumed.len(), 3);
        assert_eq!(consumed[0].rule, "Rr3");
        assert_eq!(consumed[1].rule, "Rr4");
        assert_eq!(consumed[2].rule, "Rr4");
        let servers: BTreeSet<_> = consumed.iter().map(|c| c.server.clone()).collect();
        assert_eq!(servers.len(), 3);
        assert!(client_ready(&w, "c1"));
        // No termination policy without a timer: exactly one catch-follow-up
        // client lingers per request.
        assert_eq!(w.alive_count(), initial + 1);
    }

    #[test]
    fn replicated_rpc_with_timer_terminates_all_helpers() {
        let mut w = rpc_world(true, Some(secs(5)), 3, 1);
        let initial = w.alive_count();
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(0));
        w.advance().unwrap();
        assert!(client_ready(&w, "c1"));
        assert_eq!(w.alive_count(), initial, "catch and timer agents all gone");
        let host = &w.host().app;
        // The catch agent's timeout rule ran the policy exactly once.
        assert_eq!(host.policy_log.len(), 1);
        assert_eq!(host.policy_log[0].rule, "Rr4_t");
    }

    #[test]
    fn early_replies_leave_a_stale_timeout_for_the_cleanup_rule() {
        let mut w = rpc_world(true, Some(secs(100)), 3, 1);
        w.policy.delay = DelayPolicy::Fixed(secs(1));
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(0));
        w.advance().unwrap();
        let fired = fired_rules(&w);
        assert!(fired.contains(&"CLEAN"), "ready client absorbs the stale timeout");
        assert!(!fired.contains(&"Rr3_t"), "no timeout handling when replies are early");
        assert!(client_ready(&w, "c1"));
    }

    #[test]
    fn zero_replies_reinstall_client_via_policy_on_timeout() {
        let mut w = rpc_world(true, Some(secs(5)), 3, 1);
        for s in ["s1", "s2", "s3"] {
            w.suspend(&s.into()).unwrap();
        }
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        assert!(host.consume_log.is_empty());
        assert_eq!(host.policy_log.len(), 1);
        assert_eq!(host.policy_log[0].rule, "Rr3_t");
        assert!(client_ready(&w, "c1"));
    }

    #[test]
    fn timeout_consumption_respects_the_lower_bound() {
        let mut w = rpc_world(true, Some(secs(5)), 3, 1);
        for s in ["s1", "s2", "s3"] {
            w.suspend(&s.into()).unwrap();
        }
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(10));
        w.advance().unwrap();
        let host = &w.host().app;
        let set_at = host.request_log[0].at;
        assert_eq!(set_at, secs(10));
        assert!(host.policy_log[0].at >= set_at + secs(5));
    }

    #[test]
    fn suspended_server_replies_only_after_resume() {
        let mut w = rpc_world(false, None, 1, 1);
        w.schedule_fault(crate::simnet::FaultCmd::Suspend("s1".into()), secs(0));
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(1));
        w.schedule_fault(crate::simnet::FaultCmd::Resume("s1".into()), secs(9));
        w.advance().unwrap();
        let host = &w.host().app;
        assert_eq!(host.consume_log.len(), 1);
        assert!(host.consume_log[0].at >= secs(9));
    }

    #[test]
    fn one_suspended_replica_still_yields_the_other_replies() {
        let mut w = rpc_world(true, None, 3, 1);
        w.suspend(&"s1".into()).unwrap();
        w.schedule_delivery("c1".into(), pt("trigger(p(1))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        assert_eq!(host.consume_log.len(), 2);
        let servers: BTreeSet<_> = host.consume_log.iter().map(|c| c.server.clone()).collect();
        assert!(!servers.contains(&AgentId::from("s1")));
        assert!(client_ready(&w, "c1"));
    }

    #[test]
    fn query_replies_consumed_in_sequence_despite_reordering() {
        // Stream a,b,c delivered in order 2, 3(last), 1.
        let mut w = query_world(false, None, 1, &[("p(q)", &["a", "b", "c"])]);
        let corr = pt("query-id(c1,1)");
        let reply = |k: u64, last: bool, r: &str| {
            query_reply_term(&"s1".into(), ReplyTag { reply_no: k, is_last: last }, &corr, &pt(r))
        };
        let mut by_term = BTreeMap::new();
        by_term.insert(reply(1, false, "a"), secs(30));
        by_term.insert(reply(2, false, "b"), secs(10));
        by_term.insert(reply(3, true, "c"), secs(20));
        w.policy.delay = DelayPolicy::Scripted { by_term, default: secs(1) };
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        let results: Vec<String> = host.consume_log.iter().map(|c| c.result.to_string()).collect();
        assert_eq!(results, vec!["a", "b", "c"], "consumed in sequence, not in arrival order");
        // The early last reply must not unblock the client: Q4 is the final firing.
        let fired = fired_rules(&w);
        let q4_at = fired.iter().position(|r| *r == "Q4").unwrap();
        let q3_last = fired.iter().rposition(|r| *r == "Q3").unwrap();
        assert!(q4_at > q3_last);
        assert!(client_ready(&w, "c1"));
    }

    #[test]
    fn single_last_tagged_reply_unblocks_immediately() {
        let mut w = query_world(false, None, 1, &[("p(q)", &["x"])]);
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        assert_eq!(host.consume_log.len(), 1);
        assert_eq!(host.consume_log[0].result, pt("x"));
        assert!(fired_rules(&w).contains(&"Q4"));
        assert!(client_ready(&w, "c1"));
    }

    #[test]
    fn empty_stream_unblocks_without_any_consume() {
        let mut w = query_world(false, None, 1, &[("p(q)", &[])]);
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        assert!(host.consume_log.is_empty());
        let fired = fired_rules(&w);
        assert!(fired.contains(&"Q4e"));
        assert!(client_ready(&w, "c1"));
        // The wire form of the empty-stream reply is last-tagged with number 0.
        let line = w.trace().iter().find(|l| l.contains("\tQ2l\t")).unwrap();
        assert!(line.ends_with("msg-reply(s1,last,0,query-id(c1,1),empty)"), "got: {line}");
    }

    #[test]
    fn query_server_emits_numbered_then_last_tagged_replies() {
        let mut w = query_world(false, None, 1, &[("p(q)", &["a", "b", "c"])]);
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        let emitted: Vec<&str> = w
            .trace()
            .iter()
            .filter(|l| l.contains("\tQ2s\t") || l.contains("\tQ2l\t"))
            .map(|l| l.split('\t').nth(6).unwrap())
            .collect();
        assert_eq!(
            emitted,
            vec![
                "msg-reply(s1,1,query-id(c1,1),a)",
                "msg-reply(s1,2,query-id(c1,1),b)",
                "msg-reply(s1,last,3,query-id(c1,1),c)",
            ]
        );
    }

    #[test]
    fn replicated_query_catch_agents_terminate_on_their_last_replies() {
        // 3 servers x 2 replies. Untimed: the per-server catch agents all
        // terminate via Qr10, but the listener lingers (one extra process
        // per query, absent a termination policy).
        let mut w = query_world(true, None, 3, &[("p(q)", &["r1", "r2"])]);
        let initial = w.alive_count();
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        let fired = fired_rules(&w);
        assert_eq!(fired.iter().filter(|r| **r == "Qr7").count(), 2, "one catch agent per further server");
        assert_eq!(fired.iter().filter(|r| **r == "Qr10").count(), 2, "each terminates on its last reply");
        assert_eq!(w.host().app.consume_log.len(), 6);
        assert!(client_ready(&w, "c1"));
        assert_eq!(w.alive_count(), initial + 1, "only the listener survives");

        // With a timer, the timeout terminates the listener as well: the
        // agent population returns exactly to its initial size.
        let mut w = query_world(true, Some(secs(60)), 3, &[("p(q)", &["r1", "r2"])]);
        let initial = w.alive_count();
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        assert_eq!(w.host().app.consume_log.len(), 6);
        assert!(client_ready(&w, "c1"));
        assert_eq!(w.alive_count(), initial);
        assert!(fired_rules(&w).contains(&"Qr5_t"));
    }

    #[test]
    fn per_server_streams_are_sequenced_independently() {
        let mut w = query_world(true, None, 3, &[("p(q)", &["r1", "r2", "r3"])]);
        w.policy.delay = DelayPolicy::Uniform { min: secs(1), max: secs(9) };
        w.schedule_delivery("c1".into(), pt("trigger(p(q))"), secs(0));
        w.advance().unwrap();
        let host = &w.host().app;
        for s in ["s1", "s2", "s3"] {
            let results: Vec<String> = host
                .consume_log
                .iter()
                .filter(|c| c.server == s.into())
                .map(|c| c.result.to_string())
                .collect();
            assert_eq!(results, vec!["r1", "r2", "r3"], "server {s} consumed in order");
        }
    }

    #[test]
    fn set_timer_broadcasts_timeout_after_duration() {
        let mut w: World<CommHost<RecordingHost>> = World::new(1, CommHost::new(RecordingHost::default()));
        w.register_ruleset("idle", vec![]).unwrap();
        w.spawn("watcher", "idle", []).unwrap();
        let spec = TimerSpec {
            owner: "watcher".into(),
            correlation: pt("rpc-id(watcher,9)"),
            duration: secs(5),
        };
        let timer_id = set_timer(&mut w, &spec).unwrap();
        w.advance().unwrap();
        // Rule (T) fires exactly at the expiry time; the broadcast then takes
        // one more network delay to reach the watcher.
        let t_line = w.trace().iter().find(|l| l.contains("\tT\t")).unwrap();
        assert_eq!(t_line.split('\t').nth(1).unwrap(), "5");
        assert!(!w.agent(&timer_id).unwrap().alive, "timer terminates after firing");
        assert!(w
            .agent(&"watcher".into())
            .unwrap()
            .pool
            .contains(&pt("timeout(watcher,rpc-id(watcher,9))")));
        assert!(set_timer(
            &mut w,
            &TimerSpec { owner: "watcher".into(), correlation: pt("x"), duration: secs(0) }
        )
        .is_err());
    }

    #[test]
    fn majority_policy_matches_its_definition_exhaustively() {
        // commit <=> 2|r| > n, checked for n in 1..=7 and every reply count.
        for n in 1..=7usize {
            for r in 0..=n {
                let repliers: BTreeSet<AgentId> =
                    (0..r).map(|i| AgentId::new(format!("s{i}"))).collect();
                let got = majority_policy(n, &repliers);
                let expect = if 2 * r > n { Decision::Commit } else { Decision::Abort };
                assert_eq!(got, expect, "n={n} r={r}");
            }
        }
        // The paper's worked cases.
        let set = |k: usize| -> BTreeSet<AgentId> {
            (0..k).map(|i| AgentId::new(format!("s{i}"))).collect()
        };
        assert_eq!(majority_policy(3, &set(2)), Decision::Commit);
        assert_eq!(majority_policy(3, &set(1)), Decision::Abort);
        assert_eq!(majority_policy(1, &set(1)), Decision::Commit);
    }

    #[test]
    fn correlation_ids_round_trip() {
        let c = CorrelationId { origin: "c1".into(), counter: 12, kind: ConnKind::Query };
        assert_eq!(c.to_term(), pt("query-id(c1,12)"));
        assert_eq!(CorrelationId::from_term(&c.to_term()), Some(c));
        assert_eq!(CorrelationId::from_term(&pt("bogus(c1,12)")), None);
    }
}
