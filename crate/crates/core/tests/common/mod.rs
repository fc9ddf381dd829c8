//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use beam_core::cep::{CepEngine, Pattern};
use beam_core::event::{encode, Event};
use beam_core::tables::{Table, Tables};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TYPES: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Feed `log` through a fresh CEP engine holding only `p`, optionally
/// expiring partial matches every `expire_every` events.
pub fn engine_run(p: &Arc<Pattern>, log: &[Event], expire_every: Option<usize>) -> Vec<Event> {
    let mut cep = CepEngine::new();
    cep.register(p.clone());
    let mut out = Vec::new();
    for (i, e) in log.iter().enumerate() {
        out.extend(cep.ingest(e).unwrap());
        if expire_every.is_some_and(|k| i % k == 0) {
            cep.expire(e.t_end);
        }
    }
    out
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/pilot"))
}

/// Tables available to generated patterns.
pub fn random_tables() -> Arc<Tables> {
    let mut t = Tables::new();
    t.insert("near".into(), Table::parse("k near\n0 1\n1 2\n2 0\n2 2\n").unwrap());
    Arc::new(t)
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    vars: Vec<String>,
}

impl Gen<'_> {
    fn leaf(&mut self) -> String {
        let v = format!("v{}", self.vars.len());
        self.vars.push(v.clone());
        format!("{v}:{}", TYPES.choose(self.rng).unwrap())
    }

    fn expr(&mut self, depth: usize) -> String {
        if depth <= 1 || self.rng.gen_bool(0.3) {
            return self.leaf();
        }
        let op = ["SEQ", "AND", "OR"].choose(self.rng).unwrap().to_string();
        let arity = self.rng.gen_range(2..=3);
        let mut items: Vec<String> = (0..arity).map(|_| self.expr(depth - 1)).collect();
        if op == "SEQ" && self.rng.gen_bool(0.35) {
            let at = self.rng.gen_range(1..items.len());
            items.insert(at, format!("NOT({})", TYPES.choose(self.rng).unwrap()));
        }
        format!("{op}({})", items.join(", "))
    }

    fn var(&mut self) -> String {
        self.vars.choose(self.rng).unwrap().clone()
    }

    fn guard(&mut self) -> Option<String> {
        let (a, b) = (self.var(), self.var());
        let c = self.rng.gen_range(0..3);
        Some(match self.rng.gen_range(0..7) {
            0 | 1 => return None,
            2 => format!("{a}.k == {b}.k"),
            3 => format!("{a}.k < {c}"),
            4 => format!("{a}.k != {b}.k or {a}.k == {c}"),
            5 => format!("not {a}.k == {c} and {b}.k + 1 > {c}"),
            _ => format!("{a}.k in table(near, {b}.k)"),
        })
    }
}

/// A random pattern of depth at most 3 and a log of at most 50 events.
pub fn random_case(rng: &mut ChaCha8Rng) -> (String, Vec<Event>) {
    let mut g = Gen {
        rng,
        vars: Vec::new(),
    };
    let expr = g.expr(3);
    let window = *[3, 5, 10, 20, 60].choose(g.rng).unwrap();
    let mut src = format!("PATTERN P = {expr} WITHIN {window}");
    if g.rng.gen_bool(0.5) {
        let v = g.var();
        src.push_str(&format!(" PARTITION BY {v}.k"));
    }
    if let Some(guard) = g.guard() {
        src.push_str(&format!(" WHERE {guard}"));
    }
    src.push_str(if g.rng.gen_bool(0.5) { " POLICY first" } else { " POLICY every" });

    let n = if g.rng.gen_bool(0.1) { g.rng.gen_range(0..10) } else { g.rng.gen_range(10..=50) };
    let mut t = 0;
    let log = (0..n)
        .map(|i| {
            t += g.rng.gen_range(0..3);
            Event::simple(format!("e{i}"), *TYPES.choose(g.rng).unwrap(), "gen", t, "gen")
                .with_attr("k", g.rng.gen_range(0..3i64))
        })
        .collect();
    (src, log)
}

/// Id-free canonical lines, sorted, for comparing detection multisets.
pub fn normalized(events: &[Event]) -> Vec<String> {
    let mut out: Vec<String> = events
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.id = "-".into();
            encode(&e)
        })
        .collect();
    out.sort();
    out
}

pub mod pilot {
    use std::collections::{BTreeMap, BTreeSet};
    use std::sync::Arc;

    use beam_core::action::Decision;
    use beam_core::engine::{Engine, Rejection};
    use beam_core::run::QueuedDecision;
    use beam_core::sim::World;

    use beam_core::cep::{match_oracle, Pattern};
    use beam_core::event::Event;
    use beam_core::run::{run, Headless, RunObserver, RunOutcome, RunSettings};
    use beam_core::san::{load_san, SanModel};
    use beam_core::sim::{Point, ScenarioConfig};

    pub const VARIANTS: [&str; 6] = [
        "pilot",
        "window_negative",
        "low_fuel",
        "late_clock",
        "delayed",
        "corridor_exit",
    ];

    pub fn model() -> Arc<SanModel> {
        Arc::new(load_san(&super::scenario_dir().join("model.san")).expect("pilot model is valid"))
    }

    pub fn config(variant: &str) -> ScenarioConfig {
        ScenarioConfig::load(&super::scenario_dir().join(format!("{variant}.toml"))).expect("scenario loads")
    }

    pub fn run_variant(variant: &str, auto_apply: bool) -> RunOutcome {
        run_with(variant, auto_apply, &mut Headless)
    }

    pub fn run_with(variant: &str, auto_apply: bool, observer: &mut dyn RunObserver) -> RunOutcome {
        let cfg = config(variant);
        let mut s = RunSettings::from_config(&cfg);
        s.auto_apply = auto_apply;
        run(model(), &cfg, &s, observer).expect("run succeeds")
    }

    pub fn events(out: &RunOutcome) -> Vec<Event> {
        out.events().iter().map(|e| e.as_ref().clone()).collect()
    }

    pub fn of<'a>(events: &'a [Event], etype: &str) -> Vec<&'a Event> {
        events.iter().filter(|e| e.etype == etype).collect()
    }

    /// Oracle detections of `pattern` over the events whose types it
    /// mentions; the pattern cannot observe any other event.
    pub fn oracle_detections(pattern: &Pattern, log: &[Event]) -> Vec<Event> {
        let types: BTreeSet<String> = pattern.etypes().into_iter().collect();
        let projected: Vec<Event> = log.iter().filter(|e| types.contains(&e.etype)).cloned().collect();
        match_oracle(pattern, &projected).expect("projection fits the oracle")
    }

    /// Zone enter/exit events recomputed from GPS positions with an
    /// independent point-in-circle test, keyed by tick.
    pub fn zone_oracle(cfg: &ScenarioConfig, log: &[Event]) -> Vec<(i64, String, String, bool)> {
        let zones: Vec<(String, Point, f64)> = cfg
            .zones
            .iter()
            .map(|(id, z)| (id.clone(), Point { x: z.x, y: z.y }, z.radius))
            .collect();
        let inside = |p: Point| -> BTreeSet<String> {
            zones
                .iter()
                .filter(|(_, c, r)| ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt() <= *r)
                .map(|(id, ..)| id.clone())
                .collect()
        };
        let mut state: BTreeMap<String, BTreeSet<String>> =
            cfg.trucks.keys().map(|t| (t.clone(), inside(cfg.depot))).collect();
        let mut out = Vec::new();
        for e in log.iter().filter(|e| e.etype == "GpsPosition") {
            let truck = e.attr_str("truck").unwrap().to_string();
            let p = Point {
                x: e.attr("x").unwrap().as_f64().unwrap(),
                y: e.attr("y").unwrap().as_f64().unwrap(),
            };
            let now = inside(p);
            let before = &state[&truck];
            for z in before.difference(&now) {
                out.push((e.t_end, truck.clone(), z.clone(), false));
            }
            for z in now.difference(before) {
                out.push((e.t_end, truck.clone(), z.clone(), true));
            }
            state.insert(truck, now);
        }
        out
    }

    pub fn zone_events(log: &[Event]) -> Vec<(i64, String, String, bool)> {
        log.iter()
            .filter(|e| e.etype == "TruckEnteredZone" || e.etype == "TruckExitedZone")
            .map(|e| {
                (
                    e.t_end,
                    e.attr_str("truck").unwrap().to_string(),
                    e.attr_str("zone").unwrap().to_string(),
                    e.etype == "TruckEnteredZone",
                )
            })
            .collect()
    }

    /// Decides every recommendation it sees, `delay` ticks later, and repeats
    /// the first decision once to exercise rejection.
    pub struct Operator {
        pub decision: Option<Decision>,
        pub delay: u64,
        queue: Vec<(u64, String)>,
        tick: u64,
        repeated: bool,
        pub rejections: Vec<Rejection>,
    }

    impl Operator {
        pub fn new(decision: Option<Decision>, delay: u64) -> Self {
            Operator {
                decision,
                delay,
                queue: Vec::new(),
                tick: 0,
                repeated: false,
                rejections: Vec::new(),
            }
        }
    }

    impl RunObserver for Operator {
        fn poll_decisions(&mut self) -> Vec<QueuedDecision> {
            let Some(decision) = self.decision else { return Vec::new() };
            let now = self.tick;
            let (due, rest): (Vec<_>, Vec<_>) = self.queue.drain(..).partition(|(at, _)| *at <= now);
            self.queue = rest;
            let mut out: Vec<QueuedDecision> = due
                .into_iter()
                .map(|(_, directive_id)| QueuedDecision {
                    directive_id,
                    decision,
                    operator: "ops".into(),
                })
                .collect();
            if !out.is_empty() && !self.repeated {
                self.repeated = true;
                out.push(out[0].clone());
            }
            out
        }

        fn ticked(&mut self, _: &Engine, world: &World, events: &[Arc<Event>], rejections: &[Rejection]) {
            self.tick = world.tick;
            for e in events.iter().filter(|e| e.etype == "Recommendation") {
                let d = e.attr_str("directive").unwrap().to_string();
                self.queue.push((world.tick + self.delay, d));
            }
            self.rejections.extend_from_slice(rejections);
        }
    }
}

pub mod bus {
    use std::collections::BTreeMap;

    use beam_core::bus::{Broker, SubId};
    use beam_core::event::{Event, Scalar};
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub const TOPICS: [&str; 6] = ["crm.returnee", "crm.order", "trucks.gps", "trucks.zone", "wms.delivery", "a.b.c"];
    pub const FILTERS: [&str; 9] = ["*", "crm.*", "trucks.*", "crm.returnee", "trucks.gps", "a.*", "a.b.*", "wms", "x.*"];
    pub const ETYPES: [&str; 3] = ["X", "Y", "Z"];

    pub struct BusRun {
        /// (subscriber, sub id, topic filter, etype filter, active after the run)
        pub subs: Vec<(String, SubId, String, Option<String>)>,
        /// Subscription ids that were cancelled, with the publish index from
        /// which they stopped receiving.
        pub cancelled: BTreeMap<SubId, usize>,
        pub published: Vec<Event>,
        /// Per subscriber, the deliveries drained at the end: (seq, sub id, event id).
        pub delivered: BTreeMap<String, Vec<(u64, SubId, String)>>,
    }

    /// Random subscriptions, 200 publishes with occasional cancellations.
    pub fn random_run(rng: &mut ChaCha8Rng, n: usize) -> BusRun {
        let broker = Broker::new();
        let mut subs = Vec::new();
        for i in 0..rng.gen_range(3..10) {
            let who = format!("s{}", i % 4);
            let f = FILTERS.choose(rng).unwrap().to_string();
            let et = rng.gen_bool(0.3).then(|| ETYPES.choose(rng).unwrap().to_string());
            let id = broker.subscribe(&who, &f, et.as_deref()).unwrap();
            subs.push((who, id, f, et));
        }
        let mut cancelled = BTreeMap::new();
        let mut published = Vec::new();
        for i in 0..n {
            if rng.gen_bool(0.01) {
                let (_, id, ..) = subs.choose(rng).unwrap();
                if broker.unsubscribe(id) {
                    cancelled.insert(id.clone(), i);
                }
            }
            let e = Event::simple(
                format!("e{i}"),
                *ETYPES.choose(rng).unwrap(),
                *TOPICS.choose(rng).unwrap(),
                i as i64,
                "gen",
            )
            .with_attr("n", i as i64);
            broker.publish(e.clone()).unwrap();
            published.push(e);
        }
        let mut delivered = BTreeMap::new();
        for (who, ..) in &subs {
            if delivered.contains_key(who) {
                continue;
            }
            let d: Vec<(u64, SubId, String)> = broker
                .drain(who)
                .into_iter()
                .map(|d| (d.seq, d.sub_id.clone(), d.event.id.clone()))
                .collect();
            delivered.insert(who.clone(), d);
        }
        BusRun {
            subs,
            cancelled,
            published,
            delivered,
        }
    }

    /// Independent filter: segment-wise comparison with a trailing `*`.
    pub fn filter_matches(filter: &str, topic: &str) -> bool {
        if filter == "*" {
            return true;
        }
        let f: Vec<&str> = filter.split('.').collect();
        let t: Vec<&str> = topic.split('.').collect();
        match f.split_last() {
            Some((&"*", prefix)) => t.len() > prefix.len() && t[..prefix.len()] == *prefix,
            _ => f == t,
        }
    }

    /// Expected deliveries by scanning every (event, subscription) pair.
    pub fn linear_scan(run: &BusRun) -> BTreeMap<String, Vec<(u64, SubId, String)>> {
        let mut out: BTreeMap<String, Vec<(u64, SubId, String)>> = BTreeMap::new();
        for (who, ..) in &run.subs {
            out.entry(who.clone()).or_default();
        }
        for (i, e) in run.published.iter().enumerate() {
            for (who, id, f, et) in &run.subs {
                let active = run.cancelled.get(id).is_none_or(|from| i < *from);
                if active && filter_matches(f, &e.topic) && et.as_deref().is_none_or(|t| t == e.etype) {
                    out.get_mut(who).unwrap().push((i as u64, id.clone(), e.id.clone()));
                }
            }
        }
        // Deliveries for one publish are queued in subscription order.
        out
    }

    pub fn random_scalar(rng: &mut ChaCha8Rng) -> Scalar {
        match rng.gen_range(0..4) {
            0 => {
                let alphabet: Vec<char> = "ab \"\\\n\tçé€𝄞{}:,".chars().collect();
                let len = rng.gen_range(0..12);
                Scalar::Str((0..len).map(|_| *alphabet.choose(rng).unwrap()).collect())
            }
            1 => Scalar::Int(rng.gen()),
            2 => {
                let v: f64 = rng.gen_range(-1e9..1e9) * if rng.gen_bool(0.2) { 1e-12 } else { 1.0 };
                Scalar::Dec(v)
            }
            _ => Scalar::Bool(rng.gen()),
        }
    }

    pub fn random_event(rng: &mut ChaCha8Rng, i: usize) -> Event {
        let t_start = rng.gen_range(0..1_000_000i64);
        let complex = rng.gen_bool(0.5);
        let mut e = Event::simple(
            format!("ev-{i}"),
            *ETYPES.choose(rng).unwrap(),
            *TOPICS.choose(rng).unwrap(),
            t_start,
            "gen",
        );
        if complex {
            e.t_end = t_start + rng.gen_range(0..1000);
            e.parents = (0..rng.gen_range(1..4)).map(|k| format!("p{k}")).collect();
        }
        for k in 0..rng.gen_range(0..6) {
            e = e.with_attr(format!("k{k}.{}", rng.gen_range(0..3)), random_scalar(rng));
        }
        e
    }
}
