//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values and the pinned tolerances. Exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use beam_core::action::Decision;
use beam_core::audit::AuditKind;
use beam_core::cep::{match_oracle, Pattern};
use beam_core::event::{decode, encode, Event};
use beam_core::run::replay;
use common::bus::{linear_scan, random_event, random_run};
use common::pilot::{self, events, of, oracle_detections, run_variant, run_with, Operator, VARIANTS};
use common::{engine_run, normalized, random_case, random_tables};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PILOT_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_CASES: usize = 1000;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const BUS_RUNS: u64 = 100;
const BUS_EVENTS: usize = 200;
const CODEC_EVENTS: usize = 5000;

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn pattern(name: &str) -> Arc<Pattern> {
    pilot::model().pattern(name).expect("pattern declared").clone()
}

fn ac1() -> Verdict {
    let t0 = Instant::now();
    let out = run_variant("pilot", true);
    let elapsed = t0.elapsed();
    let log = events(&out);
    let dets = of(&log, "ExtraStopOpportunity");
    let oracle = oracle_detections(&pattern("ExtraStopOpportunity"), &log);
    let oracle_parents: Vec<_> = oracle.iter().map(|d| d.parents.clone()).collect();
    let parents: Vec<_> = dets.iter().map(|d| d.parents.clone()).collect();
    let cmds: Vec<&Event> = of(&log, "Command")
        .into_iter()
        .filter(|c| c.attr_str("verb") == Some("reroute"))
        .collect();
    let notes = log.iter().filter(|e| e.topic == "notify.warehouse_manager").count();
    let c3 = log
        .iter()
        .find(|e| e.etype == "DeliveryCompleted" && e.attr_str("customer") == Some("C3"));
    let after = match (cmds.first(), c3) {
        (Some(c), Some(d)) => d.t_end > c.t_end,
        _ => false,
    };
    check(
        dets.len() == 1 && parents == oracle_parents && cmds.len() == 1 && notes == 1 && after && elapsed < PILOT_BUDGET,
        format!(
            "detections={} oracle={} commands={} warehouse_notifications={} C3_delivered_after_command={} runtime={:.2}s (limit {}s)",
            dets.len(),
            oracle.len(),
            cmds.len(),
            notes,
            after,
            elapsed.as_secs_f64(),
            PILOT_BUDGET.as_secs()
        ),
    )
}

fn ac2() -> Verdict {
    let t0 = Instant::now();
    let out = run_variant("window_negative", true);
    let elapsed = t0.elapsed();
    let log = events(&out);
    let dets = of(&log, "ExtraStopOpportunity").len();
    let oracle = oracle_detections(&pattern("ExtraStopOpportunity"), &log).len();
    let cmds = of(&log, "Command").len();
    check(
        dets == 0 && oracle == 0 && cmds == 0 && elapsed < PILOT_BUDGET,
        format!(
            "detections={dets} oracle={oracle} commands={cmds} (want 0/0/0) runtime={:.2}s (limit {}s)",
            elapsed.as_secs_f64(),
            PILOT_BUDGET.as_secs()
        ),
    )
}

fn ac3() -> Verdict {
    let cases = [
        ("low_fuel", "fuel_T1 >= 15.0"),
        ("late_clock", "clock < cutoff"),
        ("delayed", "delay_T1 <= 30"),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (variant, conjunct) in cases {
        let out = run_variant(variant, true);
        let log = events(&out);
        let cmds = of(&log, "Command").len();
        let vetoes: Vec<_> = out
            .audit()
            .entries()
            .iter()
            .filter(|e| e.kind == AuditKind::Veto)
            .collect();
        let named = vetoes.len() == 1 && vetoes[0].get("failed") == Some(conjunct);
        ok &= cmds == 0 && named;
        parts.push(format!(
            "{variant}: commands={cmds} vetoes={} failed={:?}",
            vetoes.len(),
            vetoes.first().and_then(|v| v.get("failed")).unwrap_or("-")
        ));
    }
    check(ok, parts.join("; "))
}

fn ac4() -> Verdict {
    let out = run_variant("corridor_exit", true);
    let log = events(&out);
    let subscribes: Vec<_> = out
        .audit()
        .entries()
        .iter()
        .filter(|e| e.kind == AuditKind::Directive && e.get("outcome") == Some("subscribed"))
        .collect();
    let fuel = of(&log, "FuelConsumption_T1");
    // Position of the GeofenceExit detection that caused the subscription.
    let cause = subscribes.first().and_then(|s| s.get("detection")).unwrap_or_default();
    let from = log.iter().position(|e| e.id == cause);
    let sub_t = subscribes.first().map_or(i64::MAX, |s| s.t);
    let after = from.is_some_and(|from| {
        fuel.iter().all(|d| {
            d.t_start > sub_t
                && d.parents
                    .iter()
                    .all(|p| log.iter().position(|e| &e.id == p).is_some_and(|i| i > from))
        })
    });
    let base = run_variant("pilot", true);
    let base_log = events(&base);
    let base_fuel = of(&base_log, "FuelConsumption_T1").len() + of(&base_log, "FuelConsumption_T2").len();
    let base_subs = base
        .audit()
        .entries()
        .iter()
        .filter(|e| e.kind == AuditKind::Directive && e.get("outcome") == Some("subscribed"))
        .count();
    check(
        subscribes.len() == 1 && !fuel.is_empty() && after && base_fuel == 0 && base_subs == 0,
        format!(
            "subscribe_directives={} fuel_detections={} all_after_subscribe={} baseline_fuel_detections={} baseline_subscribes={}",
            subscribes.len(),
            fuel.len(),
            after,
            base_fuel,
            base_subs
        ),
    )
}

fn ac5() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut nonempty = 0;
    for _ in 0..ORACLE_CASES {
        let (src, log) = random_case(&mut rng);
        let p = Arc::new(Pattern::compile(&src, random_tables()).expect("generated pattern compiles"));
        let want = normalized(&match_oracle(&p, &log).expect("case fits the oracle"));
        let got = normalized(&engine_run(&p, &log, None));
        mismatches += usize::from(got != want);
        nonempty += usize::from(!want.is_empty());
    }
    let elapsed = t0.elapsed();
    check(
        mismatches == 0 && elapsed < ORACLE_BUDGET,
        format!(
            "cases={ORACLE_CASES} mismatches={mismatches} cases_with_detections={nonempty} runtime={:.2}s (limit {}s)",
            elapsed.as_secs_f64(),
            ORACLE_BUDGET.as_secs()
        ),
    )
}

fn ac6() -> Verdict {
    let mut identical = 0;
    for v in VARIANTS {
        let a = run_variant(v, true);
        let b = run_variant(v, true);
        let same = a.event_log() == b.event_log()
            && a.audit().to_text() == b.audit().to_text()
            && a.context_log() == b.context_log()
            && a.metrics() == b.metrics();
        identical += usize::from(same);
    }
    let mut replayed = 0;
    let mut decisions = 0;
    let runs = [(Some(Decision::Accept), 2), (Some(Decision::Reject), 1), (None, 0)];
    for (decision, delay) in runs {
        let mut op = Operator::new(decision, delay);
        let out = run_with("pilot", false, &mut op);
        let log = events(&out);
        decisions += of(&log, "OperatorDecision").len();
        let again = replay(pilot::model(), &log).expect("replay succeeds");
        replayed += usize::from(again.audit().to_text() == out.audit().to_text());
    }
    check(
        identical == VARIANTS.len() && replayed == runs.len() && decisions > 0,
        format!(
            "byte_identical_reruns={identical}/{} replays_matching_audit={replayed}/{} operator_decisions_replayed={decisions}",
            VARIANTS.len(),
            runs.len()
        ),
    )
}

fn ac7() -> Verdict {
    let mut worst = 0;
    let mut samples = 0;
    for v in VARIANTS {
        for auto in [true, false] {
            let m = run_variant(v, auto).metrics();
            worst = worst.max(m.latency.max_ticks);
            samples += m.latency.samples;
        }
    }
    check(
        worst == 0 && samples > 0,
        format!("runs={} detections={samples} max_latency_ticks={worst} (limit 0)", VARIANTS.len() * 2),
    )
}

fn ac8() -> Verdict {
    let mut scan_mismatch = 0;
    let mut fifo = 0;
    let mut dup = 0;
    for seed in 0..BUS_RUNS {
        let run = random_run(&mut ChaCha8Rng::seed_from_u64(seed), BUS_EVENTS);
        scan_mismatch += usize::from(run.delivered != linear_scan(&run));
        for ds in run.delivered.values() {
            fifo += usize::from(!ds.windows(2).all(|w| w[0].0 <= w[1].0));
            let unique: BTreeSet<_> = ds.iter().map(|(s, id, _)| (*s, id.clone())).collect();
            dup += ds.len() - unique.len();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let codec_fail = (0..CODEC_EVENTS)
        .map(|i| random_event(&mut rng, i))
        .filter(|e| decode(&encode(e)).as_ref() != Ok(e))
        .count();
    check(
        scan_mismatch == 0 && fifo == 0 && dup == 0 && codec_fail == 0,
        format!(
            "runs={BUS_RUNS}x{BUS_EVENTS} linear_scan_mismatches={scan_mismatch} fifo_violations={fifo} duplicates={dup} codec_failures={codec_fail}/{CODEC_EVENTS}"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("AC1", "pilot opportunity detected and handled end to end", ac1),
        ("AC2", "returnee outside the window is not detected", ac2),
        ("AC3", "failing conditions veto the reroute", ac3),
        ("AC4", "fuel monitoring starts only after a corridor exit", ac4),
        ("AC5", "CEP engine agrees with the reference matcher", ac5),
        ("AC6", "runs are deterministic and replayable", ac6),
        ("AC7", "detections are emitted in the tick of their last event", ac7),
        ("AC8", "bus delivery and codec properties", ac8),
    ];
    let mut failed = 0;
    for (id, title, f) in criteria {
        let v = f();
        failed += usize::from(!v.ok);
        println!("{id} {} {title}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
