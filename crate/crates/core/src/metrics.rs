//! Run metrics, recomputed purely from the event and audit logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditKind, AuditLog};
use crate::engine::CLOCK_TOPIC;
use crate::event::{Event, Millis};
use crate::sim::TICK_MS;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub samples: u64,
    pub mean_ticks: f64,
    pub max_ticks: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendations {
    pub created: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub expired: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ticks: u64,
    /// Pattern name → detections.
    pub detections: BTreeMap<String, u64>,
    /// Directive kind → outcome → count.
    pub directives: BTreeMap<String, BTreeMap<String, u64>>,
    /// Ticks between a detection's last constituent and the tick it was emitted in.
    pub latency: Latency,
    pub vetoes: u64,
    pub skips: u64,
    pub recommendations: Recommendations,
}

impl RunMetrics {
    pub fn compute(events: &[Event], audit: &AuditLog) -> RunMetrics {
        let mut m = RunMetrics::default();
        let mut clock: Option<Millis> = None;
        let mut total = 0i64;
        for e in events {
            if e.topic == CLOCK_TOPIC {
                m.ticks += 1;
                clock = Some(e.t_end);
            }
            if e.source == "cep" {
                *m.detections.entry(e.etype.clone()).or_default() += 1;
                let lag = clock.map_or(0, |c| (c - e.t_end) / TICK_MS);
                m.latency.samples += 1;
                m.latency.max_ticks = m.latency.max_ticks.max(lag);
                total += lag;
            }
        }
        if m.latency.samples > 0 {
            m.latency.mean_ticks = total as f64 / m.latency.samples as f64;
        }
        for a in audit.entries() {
            match a.kind {
                AuditKind::Directive => {
                    let kind = a.get("action_kind").unwrap_or("unknown").to_string();
                    let outcome = a.get("outcome").unwrap_or("unknown").to_string();
                    if outcome == "recommended" {
                        m.recommendations.created += 1;
                    }
                    *m.directives.entry(kind).or_default().entry(outcome).or_default() += 1;
                }
                AuditKind::Veto => m.vetoes += 1,
                AuditKind::Skip => m.skips += 1,
                AuditKind::Decision => match a.get("decision") {
                    Some("accept") => m.recommendations.accepted += 1,
                    Some("reject") => m.recommendations.rejected += 1,
                    Some("expired") => m.recommendations.expired += 1,
                    _ => {}
                },
                _ => {}
            }
        }
        let r = &mut m.recommendations;
        r.pending = r.created.saturating_sub(r.accepted + r.rejected + r.expired);
        m
    }

    /// Directives of one kind, over all outcomes.
    pub fn directives_of(&self, kind: &str) -> u64 {
        self.directives.get(kind).map_or(0, |o| o.values().sum())
    }
}
