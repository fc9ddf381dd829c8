//! Goal lifecycle, subscription management and traversal of the network on
//! each detected situation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::model::{ActionKind, ActionNode, GoalId, Mode, SanError, SanModel};
use crate::audit::{AuditKind, AuditLog};
use crate::context::{lookup_key, table_lookup, Snapshot};
use crate::event::{Event, Millis};
use crate::expr::{EvalError, Expr, Scope, Value};
use crate::syntax::render_template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GoalState {
    Inactive,
    Active,
    Achieved,
}

impl GoalState {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalState::Inactive => "inactive",
            GoalState::Active => "active",
            GoalState::Achieved => "achieved",
        }
    }
}

impl fmt::Display for GoalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully resolved instruction produced by a traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub id: String,
    pub goal: String,
    pub action: String,
    /// Payload with every template rendered.
    pub kind: ActionKind,
    pub mode: Mode,
    pub priority: i64,
    pub situation: String,
    /// Id of the triggering detection.
    pub detection: String,
    pub ctx_version: u64,
    pub expires_min: Option<i64>,
    pub audience: Option<String>,
    pub t: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubChange {
    Add(String),
    Remove(String),
}

pub struct SanRuntime {
    model: Arc<SanModel>,
    states: Vec<GoalState>,
    subscribed: Vec<String>,
    changes: Vec<SubChange>,
    next_directive: u64,
}

impl SanRuntime {
    pub fn new(model: Arc<SanModel>) -> Self {
        SanRuntime {
            states: vec![GoalState::Inactive; model.goals.len()],
            model,
            subscribed: Vec::new(),
            changes: Vec::new(),
            next_directive: 0,
        }
    }

    pub fn model(&self) -> &Arc<SanModel> {
        &self.model
    }

    /// Activate the root and its ungated descendants and subscribe to the
    /// situations they reference. Returns the initial subscription set.
    pub fn activate(&mut self, t: Millis, audit: &mut AuditLog) -> Vec<String> {
        let root = self.model.root();
        let mut newly = Vec::new();
        if self.states[root] == GoalState::Inactive {
            self.set_active(root, t, "load", audit, &mut newly);
        }
        self.subscribe_for(&newly, "load", t, audit);
        self.subscribed.clone()
    }

    pub fn subscriptions(&self) -> &[String] {
        &self.subscribed
    }

    pub fn is_subscribed(&self, pattern: &str) -> bool {
        self.subscribed.iter().any(|p| p == pattern)
    }

    /// Subscription changes since the last call, in the order they happened.
    pub fn take_subscription_changes(&mut self) -> Vec<SubChange> {
        std::mem::take(&mut self.changes)
    }

    pub fn goal_states(&self) -> BTreeMap<String, GoalState> {
        self.model
            .goals
            .iter()
            .zip(&self.states)
            .map(|(g, s)| (g.name.clone(), *s))
            .collect()
    }

    /// Goal states in depth-first declaration order.
    pub fn goal_state_list(&self) -> Vec<(String, GoalState)> {
        self.model
            .goals
            .iter()
            .zip(&self.states)
            .map(|(g, s)| (g.name.clone(), *s))
            .collect()
    }

    /// Active with every ancestor active.
    fn live(&self, g: GoalId) -> bool {
        let mut at = Some(g);
        while let Some(x) = at {
            if self.states[x] != GoalState::Active {
                return false;
            }
            at = self.model.goals[x].parent;
        }
        true
    }

    fn set_active(&mut self, g: GoalId, t: Millis, cause: &str, audit: &mut AuditLog, newly: &mut Vec<GoalId>) {
        self.states[g] = GoalState::Active;
        audit.record(
            t,
            AuditKind::Activation,
            [("goal", self.model.goals[g].name.as_str()), ("cause", cause)],
        );
        newly.push(g);
        let children = self.model.goals[g].children.clone();
        for c in children {
            if self.states[c] == GoalState::Inactive && self.model.goals[c].activated_by.is_none() {
                self.set_active(c, t, cause, audit, newly);
            }
        }
    }

    /// Patterns a goal refers to: its own situations and its reactions'.
    fn situations_of(&self, g: GoalId) -> Vec<String> {
        let goal = &self.model.goals[g];
        let mut out: Vec<String> = goal
            .activated_by
            .iter()
            .chain(goal.achieved_by.iter())
            .cloned()
            .collect();
        for a in &goal.actions {
            out.push(self.model.actions[*a].situation.clone());
        }
        out
    }

    fn subscribe_for(&mut self, goals: &[GoalId], cause: &str, t: Millis, audit: &mut AuditLog) {
        for g in goals {
            for p in self.situations_of(*g) {
                if !self.is_subscribed(&p) {
                    self.add(&p, cause, t, audit);
                }
            }
        }
    }

    fn add(&mut self, pattern: &str, cause: &str, t: Millis, audit: &mut AuditLog) {
        self.subscribed.push(pattern.to_string());
        self.changes.push(SubChange::Add(pattern.to_string()));
        audit.record(
            t,
            AuditKind::Subscribe,
            [("op", "add"), ("pattern", pattern), ("cause", cause)],
        );
    }

    fn remove(&mut self, pattern: &str, cause: &str, t: Millis, audit: &mut AuditLog) {
        self.subscribed.retain(|p| p != pattern);
        self.changes.push(SubChange::Remove(pattern.to_string()));
        audit.record(
            t,
            AuditKind::Subscribe,
            [("op", "remove"), ("pattern", pattern), ("cause", cause)],
        );
    }

    /// Apply a Subscribe or Unsubscribe directive. Returns whether the
    /// subscription set changed; repeated requests are audited no-ops.
    pub fn apply_subscription(
        &mut self,
        subscribe: bool,
        pattern: &str,
        cause: &str,
        t: Millis,
        audit: &mut AuditLog,
    ) -> Result<bool, SanError> {
        if self.model.pattern(pattern).is_none() {
            return Err(SanError::UnknownPattern(pattern.to_string()));
        }
        let present = self.is_subscribed(pattern);
        match (subscribe, present) {
            (true, false) => self.add(pattern, cause, t, audit),
            (false, true) => self.remove(pattern, cause, t, audit),
            _ => {
                audit.record(
                    t,
                    AuditKind::Subscribe,
                    [("op", "noop"), ("pattern", pattern), ("cause", cause)],
                );
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Traverse the network for one detection: goal transitions first, then
    /// the reactions of live goals ordered by (priority, declaration).
    pub fn on_situation(&mut self, det: &Event, snapshot: &Snapshot, audit: &mut AuditLog) -> Vec<Directive> {
        let t = det.t_end;
        audit.record(
            t,
            AuditKind::Detection,
            [
                ("id", det.id.clone()),
                ("pattern", det.etype.clone()),
                ("parents", det.parents.join(",")),
                ("t_start", det.t_start.to_string()),
            ],
        );
        let model = self.model.clone();
        let situation = det.etype.as_str();

        let mut newly = Vec::new();
        let mut achieved = false;
        for g in 0..model.goals.len() {
            let goal = &model.goals[g];
            let parent_live = goal.parent.is_none_or(|p| self.live(p));
            if self.states[g] == GoalState::Inactive
                && parent_live
                && goal.activated_by.as_deref() == Some(situation)
            {
                self.set_active(g, t, &det.id, audit, &mut newly);
            } else if self.live(g) && goal.achieved_by.as_deref() == Some(situation) {
                self.states[g] = GoalState::Achieved;
                audit.record(
                    t,
                    AuditKind::Achievement,
                    [("goal", goal.name.as_str()), ("cause", det.id.as_str())],
                );
                achieved = true;
            }
        }
        newly.retain(|g| self.live(*g));
        self.subscribe_for(&newly, &det.id, t, audit);
        if achieved {
            self.drop_achieved_subscriptions(&det.id, t, audit);
        }

        let mut reacting: Vec<&ActionNode> = model
            .actions
            .iter()
            .filter(|a| a.situation == situation && self.live(a.goal))
            .collect();
        reacting.sort_by_key(|a| (a.priority, a.decl));

        let scope = CondScope {
            det,
            model: &model,
            snapshot,
        };
        let mut memo: BTreeMap<String, Result<bool, EvalError>> = BTreeMap::new();
        // (condition, failed conjuncts, vetoed actions) in first-seen order
        let mut vetoes: Vec<(String, Vec<String>, Vec<String>)> = Vec::new();
        let mut out = Vec::new();
        for a in reacting {
            let goal = &model.goals[a.goal].name;
            if let Some(cond) = &a.condition {
                let resolved = match cond.resolve_keys(&mut |p| attr_text(det, p)) {
                    Ok(r) => r,
                    Err(p) => {
                        skip(audit, t, a, goal, det, &format!("placeholder `{p}` cannot be resolved"), snapshot.version);
                        continue;
                    }
                };
                let text = resolved.to_string();
                let verdict = memo
                    .entry(text.clone())
                    .or_insert_with(|| resolved.eval_bool(&scope))
                    .clone();
                match verdict {
                    Ok(true) => {}
                    Ok(false) => {
                        match vetoes.iter_mut().find(|v| v.0 == text) {
                            Some(v) => v.2.push(a.name.clone()),
                            None => vetoes.push((text, failed_conjuncts(&resolved, &scope), vec![a.name.clone()])),
                        }
                        continue;
                    }
                    Err(e) => {
                        skip(audit, t, a, goal, det, &e.to_string(), snapshot.version);
                        continue;
                    }
                }
            }
            let kind = match render_kind(&a.kind, det, snapshot) {
                Ok(k) => k,
                Err(p) => {
                    skip(audit, t, a, goal, det, &format!("placeholder `{p}` cannot be resolved"), snapshot.version);
                    continue;
                }
            };
            self.next_directive += 1;
            out.push(Directive {
                id: format!("dir-{}", self.next_directive),
                goal: goal.clone(),
                action: a.name.clone(),
                kind,
                mode: a.mode,
                priority: a.priority,
                situation: situation.to_string(),
                detection: det.id.clone(),
                ctx_version: snapshot.version,
                expires_min: a.expires_min,
                audience: a.audience.clone(),
                t,
            });
        }
        for (condition, failed, actions) in vetoes {
            audit.record(
                t,
                AuditKind::Veto,
                [
                    ("detection", det.id.clone()),
                    ("actions", actions.join(",")),
                    ("condition", condition),
                    ("failed", failed.join("; ")),
                    ("ctx_version", snapshot.version.to_string()),
                ],
            );
        }
        out
    }

    /// Unsubscribe patterns that are referenced only inside achieved subtrees.
    fn drop_achieved_subscriptions(&mut self, cause: &str, t: Millis, audit: &mut AuditLog) {
        let model = self.model.clone();
        let in_achieved = |g: GoalId| {
            let mut at = Some(g);
            while let Some(x) = at {
                if self.states[x] == GoalState::Achieved {
                    return true;
                }
                at = model.goals[x].parent;
            }
            false
        };
        let mut drop = Vec::new();
        for p in &self.subscribed {
            let refs: Vec<GoalId> = (0..model.goals.len())
                .filter(|g| self.situations_of(*g).contains(p))
                .collect();
            if !refs.is_empty() && refs.iter().all(|g| in_achieved(*g)) {
                drop.push(p.clone());
            }
        }
        for p in drop {
            self.remove(&p, cause, t, audit);
        }
    }
}

fn attr_text(det: &Event, placeholder: &str) -> Option<String> {
    det.attr(placeholder).map(|v| v.key_string())
}

fn render(template: &str, det: &Event, snapshot: &Snapshot) -> Result<String, String> {
    render_template(template, |p| {
        if p.contains('.') {
            attr_text(det, p)
        } else {
            snapshot.get(p).map(Value::key_string)
        }
    })
}

fn render_kind(kind: &ActionKind, det: &Event, snapshot: &Snapshot) -> Result<ActionKind, String> {
    Ok(match kind {
        ActionKind::Notify { audience, message } => ActionKind::Notify {
            audience: audience.clone(),
            message: render(message, det, snapshot)?,
        },
        ActionKind::Command { target, verb, args } => ActionKind::Command {
            target: target.clone(),
            verb: verb.clone(),
            args: args
                .iter()
                .map(|(k, v)| Ok((k.clone(), render(v, det, snapshot)?)))
                .collect::<Result<_, String>>()?,
        },
        ActionKind::Subscribe(p) => ActionKind::Subscribe(render(p, det, snapshot)?),
        ActionKind::Unsubscribe(p) => ActionKind::Unsubscribe(render(p, det, snapshot)?),
    })
}

fn skip(audit: &mut AuditLog, t: Millis, a: &ActionNode, goal: &str, det: &Event, reason: &str, version: u64) {
    audit.record(
        t,
        AuditKind::Skip,
        [
            ("action", a.name.as_str()),
            ("goal", goal),
            ("detection", det.id.as_str()),
            ("reason", reason),
            ("ctx_version", &version.to_string()),
        ],
    );
}

fn failed_conjuncts(cond: &Expr, scope: &CondScope) -> Vec<String> {
    cond.conjuncts()
        .into_iter()
        .filter(|c| c.eval_bool(scope) != Ok(true))
        .map(|c| c.to_string())
        .collect()
}

/// Conditions see context keys and the detection's `var.attr` attributes.
struct CondScope<'a> {
    det: &'a Event,
    model: &'a SanModel,
    snapshot: &'a Snapshot,
}

impl Scope for CondScope<'_> {
    fn attr(&self, var: &str, attr: &str) -> Result<Value, EvalError> {
        self.det
            .attr(&format!("{var}.{attr}"))
            .map(Value::from)
            .ok_or_else(|| EvalError::MissingAttr(var.into(), attr.into()))
    }

    fn key(&self, name: &str) -> Result<Value, EvalError> {
        lookup_key(self.snapshot, &self.model.schema, name)
    }

    fn in_table(&self, table: &str, key: &str, needle: &str) -> Result<bool, EvalError> {
        table_lookup(&self.model.tables, table, key, needle)
    }
}
