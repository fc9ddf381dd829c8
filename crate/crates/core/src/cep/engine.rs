//! Incremental detection over an ordered event stream.
//!
//! Each pattern node keeps the matches it produced so far when its parent
//! needs them for later combination (children of AND, non-final operands of
//! SEQ). When an event arrives, every node computes the matches that contain
//! it, bottom-up; root matches become candidate detections.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::pattern::{Node, Pattern, Policy, SeqItem};
use crate::event::{Event, Millis};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CepError {
    #[error("event `{id}` ends at {t_end}, before the stream position {last}")]
    OutOfOrderEvent { id: String, t_end: Millis, last: Millis },
}

#[derive(Debug)]
struct Ev {
    ord: u64,
    event: Arc<Event>,
}

#[derive(Debug, Clone)]
struct Match {
    bind: Vec<Option<Arc<Ev>>>,
    start: Millis,
    end: Millis,
}

impl Match {
    fn ords(&self) -> Vec<Option<u64>> {
        self.bind.iter().map(|b| b.as_ref().map(|e| e.ord)).collect()
    }

    fn refs(&self) -> Vec<Option<&Event>> {
        self.bind.iter().map(|b| b.as_deref().map(|e| &*e.event)).collect()
    }

    fn merge(&self, other: &Match) -> Match {
        let bind = self
            .bind
            .iter()
            .zip(&other.bind)
            .map(|(a, b)| a.clone().or_else(|| b.clone()))
            .collect();
        Match {
            bind,
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    fn shares_event(&self, other: &Match) -> bool {
        let mine: BTreeSet<u64> = self.bind.iter().flatten().map(|e| e.ord).collect();
        other.bind.iter().flatten().any(|e| mine.contains(&e.ord))
    }
}

/// Per-pattern detection state.
struct Matcher {
    pattern: Arc<Pattern>,
    stores: Vec<Vec<Match>>,
    negated_types: BTreeSet<String>,
    negated: Vec<Arc<Ev>>,
    /// End of the last kept detection per partition (first policy only).
    kept: BTreeMap<Option<String>, Millis>,
}

impl Matcher {
    fn new(pattern: Arc<Pattern>) -> Self {
        let mut negated_types = BTreeSet::new();
        for n in &pattern.nodes {
            if let Node::Seq(items) = n {
                for i in items {
                    if let SeqItem::Not(t) = i {
                        negated_types.insert(t.clone());
                    }
                }
            }
        }
        Matcher {
            stores: vec![Vec::new(); pattern.nodes.len()],
            pattern,
            negated_types,
            negated: Vec::new(),
            kept: BTreeMap::new(),
        }
    }

    fn fits(&self, m: &Match) -> bool {
        m.end - m.start <= self.pattern.window_ms
    }

    fn step(&mut self, e: &Arc<Ev>) -> Vec<Match> {
        let p = self.pattern.clone();
        let width = p.leaves.len();
        let mut new: Vec<Vec<Match>> = vec![Vec::new(); p.nodes.len()];
        for n in 0..p.nodes.len() {
            new[n] = match &p.nodes[n] {
                Node::Leaf(l) => {
                    if p.leaves[*l].etype == e.event.etype {
                        let mut bind = vec![None; width];
                        bind[*l] = Some(e.clone());
                        vec![Match {
                            bind,
                            start: e.event.t_start,
                            end: e.event.t_end,
                        }]
                    } else {
                        Vec::new()
                    }
                }
                Node::Or(cs) => cs.iter().flat_map(|c| new[*c].iter().cloned()).collect(),
                Node::And(cs) => self.and_matches(cs, &new),
                Node::Seq(items) => self.seq_matches(items, &new),
            };
        }

        let root = p.root();
        let mut candidates: Vec<Match> = std::mem::take(&mut new[root])
            .into_iter()
            .filter(|m| p.guard_holds(&m.refs()))
            .collect();
        candidates.sort_by_cached_key(|m| (m.end, m.start, m.ords()));

        for (n, matches) in new.into_iter().enumerate() {
            if p.stored[n] {
                self.stores[n].extend(matches);
            }
        }
        if self.negated_types.contains(&e.event.etype) {
            self.negated.push(e.clone());
        }

        match p.policy {
            Policy::Every => candidates,
            Policy::First => {
                let mut out = Vec::new();
                for m in candidates {
                    let part = p.partition_of(&m.refs());
                    if self.kept.get(&part).is_some_and(|end| m.start <= *end) {
                        continue;
                    }
                    self.kept.insert(part.clone(), m.end);
                    self.consume(&part);
                    out.push(m);
                }
                out
            }
        }
    }

    /// Drop stored partials whose partition is known and equal to `part`.
    fn consume(&mut self, part: &Option<String>) {
        let p = self.pattern.clone();
        let leaf = p.partition.as_ref().map(|pk| pk.leaf);
        for store in &mut self.stores {
            store.retain(|m| {
                let known = match leaf {
                    None => true,
                    Some(l) => m.bind[l].is_some(),
                };
                !(known && &p.partition_of(&m.refs()) == part)
            });
        }
    }

    fn and_matches(&self, cs: &[usize], new: &[Vec<Match>]) -> Vec<Match> {
        let mut out = Vec::new();
        for (i, c) in cs.iter().enumerate() {
            for m in &new[*c] {
                let others: Vec<usize> = cs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| *c).collect();
                self.and_extend(m.clone(), &others, &mut out);
            }
        }
        out
    }

    fn and_extend(&self, acc: Match, rest: &[usize], out: &mut Vec<Match>) {
        let Some((first, tail)) = rest.split_first() else {
            out.push(acc);
            return;
        };
        for m in &self.stores[*first] {
            if acc.shares_event(m) {
                continue;
            }
            let merged = acc.merge(m);
            if self.fits(&merged) {
                self.and_extend(merged, tail, out);
            }
        }
    }

    fn seq_matches(&self, items: &[SeqItem], new: &[Vec<Match>]) -> Vec<Match> {
        let positives: Vec<usize> = items
            .iter()
            .filter_map(|i| match i {
                SeqItem::Pos(c) => Some(*c),
                SeqItem::Not(_) => None,
            })
            .collect();
        let negated: Vec<&str> = items
            .iter()
            .filter_map(|i| match i {
                SeqItem::Not(t) => Some(t.as_str()),
                SeqItem::Pos(_) => None,
            })
            .collect();
        let (last, earlier) = positives.split_last().expect("SEQ has operands");
        let mut out = Vec::new();
        for m in &new[*last] {
            let hi = m.start;
            let mut chains = Vec::new();
            self.seq_extend(m.clone(), m.start, earlier, &mut chains);
            for (chain, lo) in chains {
                let blocked = self.negated.iter().any(|c| {
                    negated.contains(&c.event.etype.as_str())
                        && c.event.t_start > lo
                        && c.event.t_end < hi
                });
                if !blocked {
                    out.push(chain);
                }
            }
        }
        out
    }

    /// Extend right-to-left: `rest` are the operands still to bind, the
    /// last of which must end before `next_start`.
    fn seq_extend(&self, acc: Match, next_start: Millis, rest: &[usize], out: &mut Vec<(Match, Millis)>) {
        let Some((prev, init)) = rest.split_last() else {
            let lo = acc.start;
            out.push((acc, lo));
            return;
        };
        for m in &self.stores[*prev] {
            if m.end >= next_start {
                continue;
            }
            let merged = acc.merge(m);
            if self.fits(&merged) {
                self.seq_extend(merged, m.start, init, out);
            }
        }
    }

    fn expire(&mut self, now: Millis) -> usize {
        let w = self.pattern.window_ms;
        let mut purged = 0;
        for store in &mut self.stores {
            let before = store.len();
            store.retain(|m| m.start + w >= now);
            purged += before - store.len();
        }
        self.negated.retain(|c| c.event.t_start + w >= now);
        self.kept.retain(|_, end| *end + w >= now);
        purged
    }

    fn partials(&self) -> usize {
        self.stores.iter().map(Vec::len).sum()
    }
}

/// Detection engine over the set of currently registered patterns.
#[derive(Default)]
pub struct CepEngine {
    matchers: Vec<Matcher>,
    last: Millis,
    ord: u64,
    next_id: u64,
}

impl CepEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start detecting `pattern` from the next event on. Returns false if a
    /// pattern with that name is already registered.
    pub fn register(&mut self, pattern: Arc<Pattern>) -> bool {
        if self.is_registered(&pattern.name) {
            return false;
        }
        self.matchers.push(Matcher::new(pattern));
        true
    }

    /// Stop detecting and drop all partial state of a pattern.
    pub fn unregister(&mut self, name: &str) -> bool {
        let before = self.matchers.len();
        self.matchers.retain(|m| m.pattern.name != name);
        before != self.matchers.len()
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.matchers.iter().any(|m| m.pattern.name == name)
    }

    pub fn registered(&self) -> Vec<String> {
        self.matchers.iter().map(|m| m.pattern.name.clone()).collect()
    }

    /// Feed one event; returns the detections it completes, per pattern in
    /// registration order.
    pub fn ingest(&mut self, event: &Event) -> Result<Vec<Event>, CepError> {
        if event.t_end < self.last {
            return Err(CepError::OutOfOrderEvent {
                id: event.id.clone(),
                t_end: event.t_end,
                last: self.last,
            });
        }
        self.last = event.t_end;
        let ev = Arc::new(Ev {
            ord: self.ord,
            event: Arc::new(event.clone()),
        });
        self.ord += 1;
        let mut out = Vec::new();
        for i in 0..self.matchers.len() {
            for m in self.matchers[i].step(&ev) {
                self.next_id += 1;
                let id = format!("cep-{}", self.next_id);
                out.push(self.matchers[i].pattern.detection(id, &m.refs()));
            }
        }
        Ok(out)
    }

    /// Drop partial matches whose window closed before `now`; returns how
    /// many were removed. Later events must not end before `now`.
    pub fn expire(&mut self, now: Millis) -> usize {
        self.last = self.last.max(now);
        self.matchers.iter_mut().map(|m| m.expire(now)).sum()
    }

    pub fn partial_count(&self) -> usize {
        self.matchers.iter().map(Matcher::partials).sum()
    }
}
