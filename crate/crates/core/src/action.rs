//! Executes directives by publishing events, holds manual recommendations
//! until an operator decides, and writes the dispatch side of the audit trail.
//!
//! Published event ids derive from the directive id (`<dir>.notify`,
//! `<dir>.rec`, `<dir>.cmd`), so a second command for the same directive
//! would collide on the bus and can never be published.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::audit::{AuditKind, AuditLog};
use crate::event::{Event, Millis};
use crate::san::{ActionKind, Directive, Mode, SanRuntime};

pub const DEFAULT_EXPIRY_MS: Millis = 30 * 60_000;
pub const DEFAULT_AUDIENCE: &str = "operator";
pub const DECISION_TOPIC: &str = "decision.operator";
pub const DECISION_ETYPE: &str = "OperatorDecision";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecStatus {
    Pending,
    Accepted,
    Rejected,
    Expired,
}

impl RecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecStatus::Pending => "pending",
            RecStatus::Accepted => "accepted",
            RecStatus::Rejected => "rejected",
            RecStatus::Expired => "expired",
        }
    }
}

impl fmt::Display for RecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingRecommendation {
    pub directive_id: String,
    pub directive: Directive,
    pub issued_at: Millis,
    pub expires_at: Millis,
    pub status: RecStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
        }
    }
}

impl FromStr for Decision {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accept" => Ok(Decision::Accept),
            "reject" => Ok(Decision::Reject),
            other => Err(ActionError::BadDecision(format!("unknown decision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorDecision {
    pub directive_id: String,
    pub decision: Decision,
    pub operator: String,
    pub decided_at: Millis,
}

impl OperatorDecision {
    pub fn to_event(&self, id: impl Into<String>) -> Event {
        Event::simple(id, DECISION_ETYPE, DECISION_TOPIC, self.decided_at, "operator")
            .with_attr("directive", self.directive_id.as_str())
            .with_attr("decision", self.decision.as_str())
            .with_attr("operator", self.operator.as_str())
    }

    pub fn from_event(e: &Event) -> Result<Self, ActionError> {
        let field = |k: &str| {
            e.attr_str(k)
                .map(str::to_string)
                .ok_or_else(|| ActionError::BadDecision(format!("event {} lacks `{k}`", e.id)))
        };
        Ok(OperatorDecision {
            directive_id: field("directive")?,
            decision: field("decision")?.parse()?,
            operator: field("operator")?,
            decided_at: e.t_end,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("command target `{0}` is not a registered service")]
    UnknownTarget(String),
    #[error("no recommendation for directive `{0}`")]
    UnknownDirective(String),
    #[error("directive `{id}` was already {status}")]
    AlreadyDecided { id: String, status: RecStatus },
    #[error("recommendation `{0}` has expired")]
    Expired(String),
    #[error("malformed decision: {0}")]
    BadDecision(String),
}

pub struct ActionService {
    services: BTreeSet<String>,
    auto_apply: bool,
    /// Creation order.
    pending: Vec<PendingRecommendation>,
}

impl ActionService {
    /// `auto_apply` makes manual commands behave as automatic ones.
    pub fn new(services: impl IntoIterator<Item = String>, auto_apply: bool) -> Self {
        ActionService {
            services: services.into_iter().collect(),
            auto_apply,
            pending: Vec::new(),
        }
    }

    pub fn auto_apply(&self) -> bool {
        self.auto_apply
    }

    pub fn recommendations(&self) -> &[PendingRecommendation] {
        &self.pending
    }

    pub fn recommendation(&self, directive_id: &str) -> Option<&PendingRecommendation> {
        self.pending.iter().find(|p| p.directive_id == directive_id)
    }

    /// Execute one directive. Subscription changes are applied to `runtime`.
    pub fn dispatch(
        &mut self,
        d: &Directive,
        now: Millis,
        runtime: &mut SanRuntime,
        audit: &mut AuditLog,
    ) -> Result<Vec<Event>, ActionError> {
        let mut fields = vec![
            ("id", d.id.clone()),
            ("goal", d.goal.clone()),
            ("action", d.action.clone()),
            ("action_kind", d.kind.name().to_string()),
            ("mode", d.mode.to_string()),
            ("detection", d.detection.clone()),
            ("ctx_version", d.ctx_version.to_string()),
        ];
        let (outcome, events) = match &d.kind {
            ActionKind::Notify { audience, message } => {
                let e = Event::simple(format!("{}.notify", d.id), "Notification", format!("notify.{audience}"), now, "action")
                    .with_parents(vec![d.detection.clone()])
                    .with_attr("directive", d.id.as_str())
                    .with_attr("audience", audience.as_str())
                    .with_attr("message", message.as_str());
                fields.push(("message", message.clone()));
                ("notified", vec![e])
            }
            ActionKind::Command { target, .. } => {
                if !self.services.contains(target) {
                    return Err(ActionError::UnknownTarget(target.clone()));
                }
                fields.push(("payload", command_summary(&d.kind)));
                if d.mode == Mode::Auto || self.auto_apply {
                    if d.mode == Mode::Manual {
                        fields.push(("auto_applied", "true".into()));
                    }
                    ("commanded", vec![command_event(d, now)])
                } else {
                    let expires_at = now + d.expires_min.map_or(DEFAULT_EXPIRY_MS, |m| m * 60_000);
                    let audience = d.audience.clone().unwrap_or_else(|| DEFAULT_AUDIENCE.into());
                    let mut e = Event::simple(format!("{}.rec", d.id), "Recommendation", format!("recommend.{audience}"), now, "action")
                        .with_parents(vec![d.detection.clone()])
                        .with_attr("directive", d.id.as_str())
                        .with_attr("action", d.action.as_str())
                        .with_attr("goal", d.goal.as_str())
                        .with_attr("situation", d.situation.as_str())
                        .with_attr("summary", command_summary(&d.kind))
                        .with_attr("expires_at", expires_at);
                    if let ActionKind::Command { args, .. } = &d.kind {
                        for (k, v) in args {
                            e = e.with_attr(format!("arg.{k}"), v.as_str());
                        }
                    }
                    self.pending.push(PendingRecommendation {
                        directive_id: d.id.clone(),
                        directive: d.clone(),
                        issued_at: now,
                        expires_at,
                        status: RecStatus::Pending,
                    });
                    fields.push(("expires_at", expires_at.to_string()));
                    ("recommended", vec![e])
                }
            }
            ActionKind::Subscribe(p) | ActionKind::Unsubscribe(p) => {
                let sub = matches!(d.kind, ActionKind::Subscribe(_));
                fields.push(("pattern", p.clone()));
                let outcome = match runtime.apply_subscription(sub, p, &d.id, now, audit) {
                    Ok(false) => "noop",
                    Ok(true) if sub => "subscribed",
                    Ok(true) => "unsubscribed",
                    // A rendered pattern name that the model does not define.
                    Err(e) => {
                        fields.push(("error", e.to_string()));
                        "failed"
                    }
                };
                (outcome, Vec::new())
            }
        };
        fields.push(("outcome", outcome.into()));
        if let Some(e) = events.first() {
            fields.push(("event", e.id.clone()));
        }
        audit.record(now, AuditKind::Directive, fields);
        Ok(events)
    }

    /// Apply an operator decision to a pending recommendation.
    pub fn decide(
        &mut self,
        dec: &OperatorDecision,
        decision_event: &str,
        now: Millis,
        audit: &mut AuditLog,
    ) -> Result<Vec<Event>, ActionError> {
        let rec = self
            .pending
            .iter_mut()
            .find(|p| p.directive_id == dec.directive_id)
            .ok_or_else(|| ActionError::UnknownDirective(dec.directive_id.clone()))?;
        if rec.status != RecStatus::Pending {
            return Err(ActionError::AlreadyDecided {
                id: rec.directive_id.clone(),
                status: rec.status,
            });
        }
        if now > rec.expires_at {
            rec.status = RecStatus::Expired;
            record_expiry(audit, now, &rec.directive_id);
            return Err(ActionError::Expired(rec.directive_id.clone()));
        }
        let mut fields = vec![
            ("directive", rec.directive_id.clone()),
            ("decision", dec.decision.as_str().to_string()),
            ("operator", dec.operator.clone()),
        ];
        let events = match dec.decision {
            Decision::Accept => {
                rec.status = RecStatus::Accepted;
                let mut e = command_event(&rec.directive, now);
                e.parents.push(decision_event.to_string());
                fields.push(("event", e.id.clone()));
                vec![e]
            }
            Decision::Reject => {
                rec.status = RecStatus::Rejected;
                Vec::new()
            }
        };
        audit.record(now, AuditKind::Decision, fields);
        Ok(events)
    }

    /// Expire every pending recommendation whose deadline has passed.
    pub fn expire_pending(&mut self, now: Millis, audit: &mut AuditLog) -> Vec<String> {
        let mut out = Vec::new();
        for rec in &mut self.pending {
            if rec.status == RecStatus::Pending && now > rec.expires_at {
                rec.status = RecStatus::Expired;
                record_expiry(audit, now, &rec.directive_id);
                out.push(rec.directive_id.clone());
            }
        }
        out
    }
}

fn record_expiry(audit: &mut AuditLog, now: Millis, id: &str) {
    audit.record(
        now,
        AuditKind::Decision,
        [("directive", id), ("decision", "expired"), ("operator", "system")],
    );
}

fn command_summary(kind: &ActionKind) -> String {
    match kind {
        ActionKind::Command { target, verb, args } => {
            let mut s = format!("{target} {verb}");
            for (k, v) in args {
                s.push_str(&format!(" {k}={v}"));
            }
            s
        }
        other => other.name().to_string(),
    }
}

/// The command event for a directive. The accept path adds the decision
/// event as a second parent.
pub fn command_event(d: &Directive, now: Millis) -> Event {
    let ActionKind::Command { target, verb, args } = &d.kind else {
        unreachable!("command_event on a {} directive", d.kind.name())
    };
    let mut e = Event::simple(format!("{}.cmd", d.id), "Command", format!("cmd.{target}"), now, "action")
        .with_parents(vec![d.detection.clone()])
        .with_attr("directive", d.id.as_str())
        .with_attr("verb", verb.as_str());
    for (k, v) in args {
        e = e.with_attr(k.as_str(), v.as_str());
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::san::parse_san;
    use std::sync::Arc;

    fn runtime() -> SanRuntime {
        let m = parse_san(
            "PATTERNS { PATTERN P = a:A WITHIN 1 PATTERN Q = b:B WITHIN 1 }
             GOAL G { ACTION n ON P NOTIFY ops \"hi\" }",
            &mut |_| Err("none".into()),
        )
        .unwrap();
        let mut rt = SanRuntime::new(Arc::new(m));
        rt.activate(0, &mut AuditLog::new());
        rt
    }

    fn directive(id: &str, kind: ActionKind, mode: Mode) -> Directive {
        Directive {
            id: id.into(),
            goal: "G".into(),
            action: "a".into(),
            kind,
            mode,
            priority: 0,
            situation: "P".into(),
            detection: "cep-1".into(),
            ctx_version: 3,
            expires_min: None,
            audience: Some("manager".into()),
            t: 0,
        }
    }

    fn reroute() -> ActionKind {
        ActionKind::Command {
            target: "gis".into(),
            verb: "reroute".into(),
            args: vec![("truck".into(), "T1".into()), ("customer".into(), "C3".into())],
        }
    }

    fn service(auto: bool) -> ActionService {
        ActionService::new(["gis".to_string()], auto)
    }

    fn decision(id: &str, d: Decision, at: Millis) -> OperatorDecision {
        OperatorDecision {
            directive_id: id.into(),
            decision: d,
            operator: "ana".into(),
            decided_at: at,
        }
    }

    #[test]
    fn notify_and_auto_command() {
        let mut s = service(false);
        let mut rt = runtime();
        let mut audit = AuditLog::new();
        let n = ActionKind::Notify {
            audience: "warehouse_manager".into(),
            message: "extra stop".into(),
        };
        let ev = s.dispatch(&directive("dir-1", n, Mode::Auto), 10, &mut rt, &mut audit).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].topic, "notify.warehouse_manager");
        let ev = s.dispatch(&directive("dir-2", reroute(), Mode::Auto), 10, &mut rt, &mut audit).unwrap();
        assert_eq!(ev[0].topic, "cmd.gis");
        assert_eq!(ev[0].attr_str("truck"), Some("T1"));
        assert_eq!(ev[0].parents, vec!["cep-1"]);
        assert_eq!(audit.len(), 2);
        assert_eq!(audit.entries()[1].get("event"), Some("dir-2.cmd"));
    }

    #[test]
    fn unknown_target() {
        let mut s = ActionService::new(Vec::new(), false);
        let err = s.dispatch(&directive("dir-1", reroute(), Mode::Auto), 0, &mut runtime(), &mut AuditLog::new());
        assert_eq!(err, Err(ActionError::UnknownTarget("gis".into())));
    }

    #[test]
    fn manual_accept_matches_auto_path() {
        let mut rt = runtime();
        let mut audit = AuditLog::new();
        let auto = service(false)
            .dispatch(&directive("dir-1", reroute(), Mode::Auto), 50, &mut rt, &mut audit)
            .unwrap();
        let mut s = service(false);
        let rec = s.dispatch(&directive("dir-1", reroute(), Mode::Manual), 0, &mut rt, &mut audit).unwrap();
        assert_eq!(rec[0].topic, "recommend.manager");
        assert_eq!(s.recommendations()[0].expires_at, DEFAULT_EXPIRY_MS);
        let mut cmd = s.decide(&decision("dir-1", Decision::Accept, 50), "op-1", 50, &mut audit).unwrap();
        assert_eq!(cmd[0].parents, ["cep-1", "op-1"]);
        cmd[0].parents.pop();
        assert_eq!(cmd, auto);
        assert_eq!(
            s.decide(&decision("dir-1", Decision::Reject, 60), "op-1", 60, &mut audit),
            Err(ActionError::AlreadyDecided {
                id: "dir-1".into(),
                status: RecStatus::Accepted
            })
        );
    }

    #[test]
    fn reject_publishes_nothing() {
        let mut s = service(false);
        let mut audit = AuditLog::new();
        s.dispatch(&directive("dir-1", reroute(), Mode::Manual), 0, &mut runtime(), &mut audit).unwrap();
        assert!(s.decide(&decision("dir-1", Decision::Reject, 5), "op-1", 5, &mut audit).unwrap().is_empty());
        let last = audit.entries().last().unwrap();
        assert_eq!(last.get("decision"), Some("reject"));
        assert_eq!(last.get("operator"), Some("ana"));
        assert!(matches!(
            s.decide(&decision("dir-9", Decision::Accept, 5), "op-1", 5, &mut audit),
            Err(ActionError::UnknownDirective(_))
        ));
    }

    #[test]
    fn expiry() {
        let mut s = service(false);
        let mut audit = AuditLog::new();
        assert!(s.expire_pending(0, &mut audit).is_empty());
        let mut d = directive("dir-1", reroute(), Mode::Manual);
        d.expires_min = Some(1);
        s.dispatch(&d, 0, &mut runtime(), &mut audit).unwrap();
        let mut d2 = d.clone();
        d2.id = "dir-2".into();
        s.dispatch(&d2, 0, &mut runtime(), &mut audit).unwrap();
        assert!(s.expire_pending(60_000, &mut audit).is_empty());
        assert_eq!(
            s.decide(&decision("dir-2", Decision::Accept, 60_001), "op-1", 60_001, &mut audit),
            Err(ActionError::Expired("dir-2".into()))
        );
        assert_eq!(s.expire_pending(60_001, &mut audit), vec!["dir-1"]);
    }

    #[test]
    fn auto_apply_and_subscriptions() {
        let mut s = service(true);
        let mut rt = runtime();
        let mut audit = AuditLog::new();
        let ev = s.dispatch(&directive("dir-1", reroute(), Mode::Manual), 0, &mut rt, &mut audit).unwrap();
        assert_eq!(ev[0].etype, "Command");
        assert!(s.recommendations().is_empty());
        s.dispatch(&directive("dir-2", ActionKind::Subscribe("Q".into()), Mode::Auto), 0, &mut rt, &mut audit)
            .unwrap();
        s.dispatch(&directive("dir-3", ActionKind::Subscribe("Q".into()), Mode::Auto), 0, &mut rt, &mut audit)
            .unwrap();
        s.dispatch(&directive("dir-4", ActionKind::Subscribe("Nope".into()), Mode::Auto), 0, &mut rt, &mut audit)
            .unwrap();
        let outcomes: Vec<_> = audit
            .query(&crate::audit::AuditFilter::kind(AuditKind::Directive))
            .iter()
            .map(|e| e.get("outcome").unwrap().to_string())
            .collect();
        assert_eq!(outcomes, vec!["commanded", "subscribed", "noop", "failed"]);
        assert!(rt.is_subscribed("Q"));
        let decoded = OperatorDecision::from_event(&decision("dir-1", Decision::Accept, 7).to_event("op-1")).unwrap();
        assert_eq!(decoded, decision("dir-1", Decision::Accept, 7));
    }
}
