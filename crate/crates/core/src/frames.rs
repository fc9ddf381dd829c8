//! Serve-mode wire frames: a kind tag, one space, and a canonical event line.
//!
//! `DEC` and `HELLO` travel client to server; every other kind, and `HELLO`,
//! server to client. State that is not itself a bus event (context changes,
//! goal states, recommendation status) is carried in synthetic events that
//! never enter the bus.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::action::{Decision, OperatorDecision, RecStatus};
use crate::engine::{Engine, Rejection};
use crate::event::{decode, encode, DecodeError, Event, Millis};
use crate::expr::Value;
use crate::run::QueuedDecision;
use crate::san::GoalState;
use crate::sim::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FrameKind {
    Hello,
    Snapshot,
    Evt,
    Sit,
    Rec,
    Ctx,
    Goal,
    Dec,
}

impl FrameKind {
    pub const ALL: [FrameKind; 8] = [
        FrameKind::Hello,
        FrameKind::Snapshot,
        FrameKind::Evt,
        FrameKind::Sit,
        FrameKind::Rec,
        FrameKind::Ctx,
        FrameKind::Goal,
        FrameKind::Dec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Hello => "HELLO",
            FrameKind::Snapshot => "SNAPSHOT",
            FrameKind::Evt => "EVT",
            FrameKind::Sit => "SIT",
            FrameKind::Rec => "REC",
            FrameKind::Ctx => "CTX",
            FrameKind::Goal => "GOAL",
            FrameKind::Dec => "DEC",
        }
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("unknown frame kind `{0}`")]
    UnknownKind(String),
    #[error("frame has no payload")]
    MissingPayload,
    #[error("bad payload: {0}")]
    Payload(#[from] DecodeError),
    #[error("clients may only send HELLO and DEC, got {0}")]
    NotClientFrame(FrameKind),
    #[error("bad decision: {0}")]
    Decision(String),
}

impl FromStr for FrameKind {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FrameKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FrameError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub event: Event,
}

impl Frame {
    pub fn new(kind: FrameKind, event: Event) -> Self {
        Frame { kind, event }
    }

    pub fn encode(&self) -> String {
        format!("{} {}", self.kind, encode(&self.event))
    }

    pub fn parse(line: &str) -> Result<Frame, FrameError> {
        let line = line.trim_end_matches(['\r', '\n']);
        let (kind, payload) = line.split_once(' ').ok_or(FrameError::MissingPayload)?;
        Ok(Frame {
            kind: kind.parse()?,
            event: decode(payload)?,
        })
    }

    /// Parse a frame a client sent. `Ok(None)` for HELLO.
    pub fn parse_client(line: &str) -> Result<Option<QueuedDecision>, FrameError> {
        let f = Frame::parse(line)?;
        match f.kind {
            FrameKind::Hello => Ok(None),
            FrameKind::Dec => {
                let d = OperatorDecision::from_event(&f.event).map_err(|e| FrameError::Decision(e.to_string()))?;
                Ok(Some(QueuedDecision {
                    directive_id: d.directive_id,
                    decision: d.decision,
                    operator: d.operator,
                }))
            }
            other => Err(FrameError::NotClientFrame(other)),
        }
    }

    /// The DEC frame a client sends for a decision.
    pub fn decision(id: &str, directive: &str, decision: Decision, operator: &str, t: Millis) -> Frame {
        let d = OperatorDecision {
            directive_id: directive.into(),
            decision,
            operator: operator.into(),
            decided_at: t,
        };
        Frame::new(FrameKind::Dec, d.to_event(id))
    }
}

fn scalar(v: &Value) -> crate::event::Scalar {
    v.to_scalar()
}

/// Turns engine state changes into frames, remembering what it already sent.
#[derive(Default)]
pub struct FrameBuilder {
    goals: BTreeMap<String, GoalState>,
    journal_seen: usize,
    recs: BTreeMap<String, RecStatus>,
    next: u64,
}

impl FrameBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn synthetic(&mut self, etype: &str, t: Millis) -> Event {
        self.next += 1;
        Event::simple(format!("frame-{}", self.next), etype, "serve.state", t, "serve")
    }

    pub fn hello(&mut self, scenario: &str, model: &str) -> Frame {
        let e = self
            .synthetic("Hello", 0)
            .with_attr("scenario", scenario)
            .with_attr("model", model);
        Frame::new(FrameKind::Hello, e)
    }

    /// Full current state as flat attributes.
    pub fn snapshot(&mut self, engine: &Engine, world: &World) -> Frame {
        let mut e = self.synthetic("Snapshot", world.now()).with_attr("tick", world.tick as i64);
        for (g, s) in engine.runtime().goal_states() {
            e = e.with_attr(format!("goal.{g}"), s.as_str());
        }
        for (k, v) in &engine.context().snapshot().values {
            e = e.with_attr(format!("ctx.{k}"), scalar(v));
        }
        for r in engine.actions().recommendations() {
            e = e.with_attr(format!("rec.{}", r.directive_id), r.status.as_str());
        }
        for t in &world.trucks {
            e = e
                .with_attr(format!("truck.{}.x", t.id), t.pos.x)
                .with_attr(format!("truck.{}.y", t.id), t.pos.y);
        }
        for z in &world.zones {
            e = e
                .with_attr(format!("zone.{}.x", z.id), z.center.x)
                .with_attr(format!("zone.{}.y", z.id), z.center.y)
                .with_attr(format!("zone.{}.r", z.id), z.radius);
        }
        Frame::new(FrameKind::Snapshot, e)
    }

    /// Frames for newly published events and for state changes since the
    /// previous call.
    pub fn frames(&mut self, engine: &Engine, events: &[Arc<Event>], rejections: &[Rejection]) -> Vec<Frame> {
        let now = engine.now();
        let mut out = Vec::new();
        for e in events {
            out.push(Frame::new(FrameKind::Evt, e.as_ref().clone()));
            if e.source == "cep" {
                out.push(Frame::new(FrameKind::Sit, e.as_ref().clone()));
            }
            if e.etype == "Recommendation" {
                out.push(Frame::new(FrameKind::Rec, e.as_ref().clone()));
            }
        }
        let journal = engine.context().journal();
        for c in &journal[self.journal_seen.min(journal.len())..] {
            let mut e = self
                .synthetic("ContextChange", c.t)
                .with_attr("version", c.version as i64)
                .with_attr("cause", c.cause.as_str());
            for (k, v) in &c.changes {
                e = e.with_attr(format!("ctx.{k}"), scalar(v));
            }
            out.push(Frame::new(FrameKind::Ctx, e));
        }
        self.journal_seen = journal.len();
        for (g, s) in engine.runtime().goal_states() {
            if self.goals.get(&g) != Some(&s) {
                let e = self
                    .synthetic("GoalState", now)
                    .with_attr("goal", g.as_str())
                    .with_attr("state", s.as_str());
                out.push(Frame::new(FrameKind::Goal, e));
                self.goals.insert(g, s);
            }
        }
        for r in engine.actions().recommendations() {
            let known = self.recs.insert(r.directive_id.clone(), r.status);
            // A fresh recommendation is announced by its own REC frame.
            if known.is_some_and(|k| k != r.status) {
                let e = self
                    .synthetic("RecommendationStatus", now)
                    .with_attr("directive", r.directive_id.as_str())
                    .with_attr("status", r.status.as_str());
                out.push(Frame::new(FrameKind::Rec, e));
            }
        }
        for r in rejections {
            let status = engine
                .actions()
                .recommendation(&r.directive)
                .map_or("unknown", |p| p.status.as_str());
            let e = self
                .synthetic("RecommendationStatus", now)
                .with_attr("directive", r.directive.as_str())
                .with_attr("status", status)
                .with_attr("error", r.error.to_string());
            out.push(Frame::new(FrameKind::Rec, e));
        }
        out
    }
}
