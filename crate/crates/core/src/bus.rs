//! Topic-based publish/subscribe broker.
//!
//! Publishes are serialized into a single total order (a global sequence
//! number). Each publish is appended to its topic log and to the run log,
//! then queued once into the inbox of every active subscription whose
//! filters match. Subscribers drain their inbox; [`Broker::next_for`] pops
//! deliveries across a group of subscribers in global publish order, which
//! is how the engine processes its own subscriptions deterministically.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::event::{is_valid_topic, Event, InvalidEvent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("invalid event: {0}")]
    InvalidEvent(#[from] InvalidEvent),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
}

/// Dot-separated topic pattern. A trailing `*` segment matches one or more
/// remaining segments; a lone `*` matches every topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFilter {
    prefix: Vec<String>,
    wildcard: bool,
}

impl TopicFilter {
    pub fn matches(&self, topic: &str) -> bool {
        let mut segs = topic.split('.');
        for want in &self.prefix {
            match segs.next() {
                Some(seg) if seg == want => {}
                _ => return false,
            }
        }
        let rest = segs.count();
        if self.wildcard {
            rest >= 1
        } else {
            rest == 0
        }
    }
}

impl FromStr for TopicFilter {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BusError::InvalidFilter(s.to_string());
        if s.is_empty() {
            return Err(bad());
        }
        let mut segs: Vec<&str> = s.split('.').collect();
        let wildcard = segs.last() == Some(&"*");
        if wildcard {
            segs.pop();
        }
        let prefix = segs.join(".");
        if !prefix.is_empty() && !is_valid_topic(&prefix) {
            return Err(bad());
        }
        Ok(TopicFilter {
            prefix: segs.into_iter().map(str::to_string).collect(),
            wildcard,
        })
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = self.prefix.clone();
        if self.wildcard {
            parts.push("*".into());
        }
        f.write_str(&parts.join("."))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubId(pub String);

impl fmt::Display for SubId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub sub_id: SubId,
    pub subscriber: String,
    pub topic_filter: TopicFilter,
    pub etype_filter: Option<String>,
    pub active: bool,
    ordinal: u64,
}

impl Subscription {
    pub fn matches(&self, event: &Event) -> bool {
        self.topic_filter.matches(&event.topic)
            && self
                .etype_filter
                .as_deref()
                .is_none_or(|et| et == event.etype)
    }
}

/// One event queued for one subscription.
#[derive(Debug, Clone)]
pub struct Delivery {
    /// Global publish sequence number of the event.
    pub seq: u64,
    pub sub_id: SubId,
    pub event: Arc<Event>,
    ordinal: u64,
}

impl Delivery {
    fn order_key(&self) -> (u64, u64) {
        (self.seq, self.ordinal)
    }
}

/// Append-only log of one topic, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct TopicLog {
    pub topic: String,
    pub entries: Vec<Arc<Event>>,
}

#[derive(Default)]
struct State {
    subs: Vec<Subscription>,
    inboxes: BTreeMap<String, VecDeque<Delivery>>,
    topics: BTreeMap<String, TopicLog>,
    log: Vec<Arc<Event>>,
    ids: HashSet<String>,
    next_seq: u64,
    next_sub: u64,
}

/// Thread-safe broker; all operations take the internal lock, which is the
/// serialization point for the total publish order.
#[derive(Default)]
pub struct Broker {
    state: Mutex<State>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Publish an event; returns the number of deliveries made.
    pub fn publish(&self, event: Event) -> Result<usize, BusError> {
        event.validate()?;
        let mut st = self.lock();
        if st.ids.contains(&event.id) {
            return Err(InvalidEvent::DuplicateId(event.id).into());
        }
        st.ids.insert(event.id.clone());
        let seq = st.next_seq;
        st.next_seq += 1;

        let event = Arc::new(event);
        st.log.push(event.clone());
        st.topics
            .entry(event.topic.clone())
            .or_insert_with(|| TopicLog {
                topic: event.topic.clone(),
                entries: Vec::new(),
            })
            .entries
            .push(event.clone());

        let targets: Vec<(String, SubId, u64)> = st
            .subs
            .iter()
            .filter(|s| s.active && s.matches(&event))
            .map(|s| (s.subscriber.clone(), s.sub_id.clone(), s.ordinal))
            .collect();
        for (subscriber, sub_id, ordinal) in &targets {
            st.inboxes
                .entry(subscriber.clone())
                .or_default()
                .push_back(Delivery {
                    seq,
                    sub_id: sub_id.clone(),
                    event: event.clone(),
                    ordinal: *ordinal,
                });
        }
        Ok(targets.len())
    }

    pub fn subscribe(
        &self,
        subscriber: &str,
        topic_filter: &str,
        etype_filter: Option<&str>,
    ) -> Result<SubId, BusError> {
        let filter: TopicFilter = topic_filter.parse()?;
        let mut st = self.lock();
        let ordinal = st.next_sub;
        st.next_sub += 1;
        let sub_id = SubId(format!("sub-{ordinal}"));
        st.subs.push(Subscription {
            sub_id: sub_id.clone(),
            subscriber: subscriber.to_string(),
            topic_filter: filter,
            etype_filter: etype_filter.map(str::to_string),
            active: true,
            ordinal,
        });
        Ok(sub_id)
    }

    /// Deactivate a subscription. Returns whether it was active.
    pub fn unsubscribe(&self, sub_id: &SubId) -> bool {
        let mut st = self.lock();
        match st.subs.iter_mut().find(|s| &s.sub_id == sub_id) {
            Some(s) if s.active => {
                s.active = false;
                true
            }
            _ => false,
        }
    }

    /// Take every queued delivery for one subscriber, in publish order.
    pub fn drain(&self, subscriber: &str) -> Vec<Delivery> {
        let mut st = self.lock();
        st.inboxes
            .get_mut(subscriber)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn pending(&self, subscriber: &str) -> usize {
        self.lock().inboxes.get(subscriber).map_or(0, VecDeque::len)
    }

    /// Pop the earliest queued delivery across `subscribers`, ordered by
    /// publish sequence and then subscription creation order.
    pub fn next_for(&self, subscribers: &[&str]) -> Option<(String, Delivery)> {
        let mut st = self.lock();
        let who = subscribers
            .iter()
            .filter_map(|name| {
                st.inboxes
                    .get(*name)
                    .and_then(VecDeque::front)
                    .map(|d| (d.order_key(), *name))
            })
            .min()?
            .1;
        let delivery = st.inboxes.get_mut(who)?.pop_front()?;
        Some((who.to_string(), delivery))
    }

    /// Full publish order of the run.
    pub fn log(&self) -> Vec<Arc<Event>> {
        self.lock().log.clone()
    }

    pub fn log_len(&self) -> usize {
        self.lock().log.len()
    }

    pub fn log_since(&self, from: usize) -> Vec<Arc<Event>> {
        let st = self.lock();
        st.log.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn topic_log(&self, topic: &str) -> Option<TopicLog> {
        self.lock().topics.get(topic).cloned()
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.lock().subs.clone()
    }

    pub fn subscription(&self, sub_id: &SubId) -> Option<Subscription> {
        self.lock().subs.iter().find(|s| &s.sub_id == sub_id).cloned()
    }
}

/// Events a subscriber holding `sub` would have received from `log`.
pub fn replay<E: AsRef<Event>>(log: &[E], sub: &Subscription) -> Vec<Event> {
    log.iter()
        .map(AsRef::as_ref)
        .filter(|e| sub.matches(e))
        .cloned()
        .collect()
}

impl AsRef<Event> for Event {
    fn as_ref(&self) -> &Event {
        self
    }
}
