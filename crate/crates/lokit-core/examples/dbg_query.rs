use lokit_core::simnet::World;
use lokit_core::term::Term;
use lokit_core::time::Time;
use lokit_core::toolkit::*;

fn pt(s: &str) -> Term { Term::parse(s).unwrap() }

fn main() {
    let mut host = RecordingHost::default();
    host.canned_streams.insert(pt("p(q)"), vec![pt("r1"), pt("r2")]);
    let mut w = World::new(1, CommHost::new(host));
    let cfg = QueryClientConfig::new(true, None).with_trigger(pt("trigger(P)"), pt("P"));
    w.register_ruleset("q-client", make_query_client_rules(&cfg)).unwrap();
    w.register_ruleset("q-server", make_query_server_rules(false)).unwrap();
    for i in 1..=3 {
        let n = format!("s{i}");
        w.spawn(n.clone(), "q-server", [Term::app("server", vec![Term::atom(&n)])]).unwrap();
    }
    w.spawn("c1", "q-client", [Term::app("client", vec![Term::atom("c1")])]).unwrap();
    w.schedule_delivery("c1".into(), pt("trigger(p(q))"), Time::from_integer(0));
    w.advance().unwrap();
    for l in w.trace() { println!("{l}"); }
    println!("--- consumes:");
    for c in &w.host().app.consume_log { println!("{} {} {} {}", c.rule, c.server, c.corr, c.result); }
    println!("alive = {}", w.alive_count());
    for a in w.agents() { println!("agent {} alive={} pool={:?}", a.id, a.alive, a.pool); }
}
