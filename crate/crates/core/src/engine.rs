//! The serialized monitoring flow: bus deliveries drive the context store,
//! the CEP engine, the SAN runtime and the action service.
//!
//! Every event enters through [`Engine::inject`], which publishes it and then
//! pumps the bus until no engine subscriber has anything queued. A run is
//! therefore a deterministic function of its sequence of injected events,
//! which is what replay relies on.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::action::{ActionError, ActionService, OperatorDecision, DECISION_TOPIC};
use crate::audit::AuditLog;
use crate::bus::{Broker, BusError, SubId};
use crate::cep::{CepEngine, CepError};
use crate::context::{ContextError, ContextStore};
use crate::event::{Event, Millis};
use crate::san::{SanModel, SanRuntime, SubChange};

pub const CLOCK_TOPIC: &str = "sim.clock";

const CLOCK: &str = "clock";
const CONTEXT: &str = "context";
const CEP: &str = "cep";
const ACTION: &str = "action";
const SAN: &str = "san";
const SUBSCRIBERS: [&str; 5] = [CLOCK, CONTEXT, CEP, ACTION, SAN];

/// Sources whose events the engine itself produces.
pub const ENGINE_SOURCES: [&str; 2] = ["cep", "action"];

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Cep(#[from] CepError),
    #[error("context update from {event}: {source}")]
    Context { event: String, source: ContextError },
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// A decision that could not be applied, kept for the operator channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub event: String,
    pub directive: String,
    pub error: ActionError,
}

pub struct Engine {
    bus: Arc<Broker>,
    cep: CepEngine,
    context: ContextStore,
    runtime: SanRuntime,
    actions: ActionService,
    audit: AuditLog,
    san_subs: BTreeMap<String, SubId>,
    rejections: Vec<Rejection>,
    now: Millis,
}

impl Engine {
    pub fn new(model: Arc<SanModel>, services: impl IntoIterator<Item = String>, auto_apply: bool) -> Self {
        let bus = Arc::new(Broker::new());
        let subscribe = |who: &str, filter: &str| {
            bus.subscribe(who, filter, None).expect("static filters are valid");
        };
        subscribe(CLOCK, CLOCK_TOPIC);
        subscribe(CONTEXT, "*");
        subscribe(CEP, "*");
        subscribe(ACTION, DECISION_TOPIC);
        Engine {
            cep: CepEngine::new(),
            context: ContextStore::new(model.schema.clone(), model.rules.clone(), model.tables.clone()),
            runtime: SanRuntime::new(model),
            actions: ActionService::new(services, auto_apply),
            audit: AuditLog::new(),
            san_subs: BTreeMap::new(),
            rejections: Vec::new(),
            now: 0,
            bus,
        }
    }

    /// Activate the goal network and register its initial situations.
    pub fn start(&mut self, t: Millis) -> Result<Vec<String>, EngineError> {
        let subs = self.runtime.activate(t, &mut self.audit);
        self.sync_subscriptions()?;
        Ok(subs)
    }

    pub fn bus(&self) -> &Arc<Broker> {
        &self.bus
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn context(&self) -> &ContextStore {
        &self.context
    }

    pub fn runtime(&self) -> &SanRuntime {
        &self.runtime
    }

    pub fn actions(&self) -> &ActionService {
        &self.actions
    }

    pub fn cep(&self) -> &CepEngine {
        &self.cep
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn take_rejections(&mut self) -> Vec<Rejection> {
        std::mem::take(&mut self.rejections)
    }

    /// Publish one event and process everything it causes. Returns every
    /// event published in the process, starting with `event` itself.
    pub fn inject(&mut self, event: Event) -> Result<Vec<Arc<Event>>, EngineError> {
        let from = self.bus.log_len();
        self.now = self.now.max(event.t_end);
        self.bus.publish(event)?;
        self.pump()?;
        Ok(self.bus.log_since(from))
    }

    fn publish_all(&self, events: Vec<Event>) -> Result<(), EngineError> {
        for e in events {
            self.bus.publish(e)?;
        }
        Ok(())
    }

    fn pump(&mut self) -> Result<(), EngineError> {
        while let Some((who, d)) = self.bus.next_for(&SUBSCRIBERS) {
            let e = d.event;
            match who.as_str() {
                CLOCK => {
                    self.cep.expire(e.t_end);
                    self.actions.expire_pending(e.t_end, &mut self.audit);
                }
                CONTEXT => {
                    self.context.apply(&e).map_err(|source| EngineError::Context {
                        event: e.id.clone(),
                        source,
                    })?;
                }
                CEP => {
                    let detections = self.cep.ingest(&e)?;
                    self.publish_all(detections)?;
                }
                ACTION => match OperatorDecision::from_event(&e) {
                    Ok(dec) => match self.actions.decide(&dec, &e.id, e.t_end, &mut self.audit) {
                        Ok(events) => self.publish_all(events)?,
                        Err(error) => self.rejections.push(Rejection {
                            event: e.id.clone(),
                            directive: dec.directive_id,
                            error,
                        }),
                    },
                    Err(error) => self.rejections.push(Rejection {
                        event: e.id.clone(),
                        directive: e.attr_str("directive").unwrap_or_default().to_string(),
                        error,
                    }),
                },
                SAN => {
                    // Deliveries queued before an unsubscribe are dropped.
                    if !self.runtime.is_subscribed(&e.etype) {
                        continue;
                    }
                    let snapshot = self.context.snapshot();
                    let directives = self.runtime.on_situation(&e, &snapshot, &mut self.audit);
                    self.sync_subscriptions()?;
                    for d in directives {
                        let events = self.actions.dispatch(&d, e.t_end, &mut self.runtime, &mut self.audit)?;
                        self.sync_subscriptions()?;
                        self.publish_all(events)?;
                    }
                }
                _ => unreachable!("delivery for unknown subscriber {who}"),
            }
        }
        Ok(())
    }

    /// Mirror runtime subscription changes into the CEP engine and the bus.
    fn sync_subscriptions(&mut self) -> Result<(), EngineError> {
        for change in self.runtime.take_subscription_changes() {
            match change {
                SubChange::Add(p) => {
                    if let Some(pattern) = self.runtime.model().pattern(&p) {
                        self.cep.register(pattern.clone());
                    }
                    let id = self.bus.subscribe(SAN, &format!("cep.{p}"), None)?;
                    self.san_subs.insert(p, id);
                }
                SubChange::Remove(p) => {
                    self.cep.unregister(&p);
                    if let Some(id) = self.san_subs.remove(&p) {
                        self.bus.unsubscribe(&id);
                    }
                }
            }
        }
        Ok(())
    }
}
