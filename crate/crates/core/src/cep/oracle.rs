//! Reference semantics by exhaustive enumeration.
//!
//! Every node denotes the set of bindings over the whole log that satisfy it;
//! the policy is applied afterwards as a filter. Exponential by design and
//! only meant for small logs and differential testing.

use thiserror::Error;

use super::pattern::{Node, NodeId, Pattern, Policy, SeqItem};
use crate::event::{Event, Millis};

pub const MAX_LOG: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("log has {0} events; the oracle accepts at most {MAX_LOG}")]
    LogTooLarge(usize),
    #[error("log is not ordered by end time at event {0}")]
    Unordered(usize),
}

type Binding = Vec<Option<usize>>;

struct Ctx<'a> {
    p: &'a Pattern,
    log: &'a [Event],
}

impl Ctx<'_> {
    fn span(&self, b: &Binding) -> (Millis, Millis) {
        let idx = b.iter().flatten();
        let start = idx.clone().map(|i| self.log[*i].t_start).min().unwrap_or(0);
        let end = idx.map(|i| self.log[*i].t_end).max().unwrap_or(0);
        (start, end)
    }

    fn in_window(&self, b: &Binding) -> bool {
        let (s, e) = self.span(b);
        e - s <= self.p.window_ms
    }

    fn union(a: &Binding, b: &Binding) -> Binding {
        a.iter().zip(b).map(|(x, y)| x.or(*y)).collect()
    }

    fn disjoint(a: &Binding, b: &Binding) -> bool {
        !a.iter().flatten().any(|i| b.iter().flatten().any(|j| i == j))
    }

    fn denote(&self, n: NodeId) -> Vec<Binding> {
        let width = self.p.leaves.len();
        let out: Vec<Binding> = match &self.p.nodes[n] {
            Node::Leaf(l) => self
                .log
                .iter()
                .enumerate()
                .filter(|(_, e)| e.etype == self.p.leaves[*l].etype)
                .map(|(i, _)| {
                    let mut b = vec![None; width];
                    b[*l] = Some(i);
                    b
                })
                .collect(),
            Node::Or(cs) => cs.iter().flat_map(|c| self.denote(*c)).collect(),
            Node::And(cs) => {
                let mut acc: Vec<Binding> = vec![vec![None; width]];
                for c in cs {
                    let sub = self.denote(*c);
                    acc = acc
                        .iter()
                        .flat_map(|a| {
                            sub.iter()
                                .filter(|s| Self::disjoint(a, s))
                                .map(|s| Self::union(a, s))
                                .filter(|b| self.in_window(b))
                                .collect::<Vec<_>>()
                        })
                        .collect();
                }
                acc
            }
            Node::Seq(items) => {
                // (binding, start of first operand, start of latest operand, end of latest operand)
                let mut acc: Vec<(Binding, Option<Millis>, Millis, Option<Millis>)> =
                    vec![(vec![None; width], None, 0, None)];
                for it in items {
                    let SeqItem::Pos(c) = it else { continue };
                    let sub = self.denote(*c);
                    let mut next = Vec::new();
                    for (a, first, _, prev_end) in &acc {
                        for s in &sub {
                            let (s_start, s_end) = self.span(s);
                            if prev_end.is_some_and(|pe| pe >= s_start) {
                                continue;
                            }
                            let b = Self::union(a, s);
                            if self.in_window(&b) {
                                next.push((b, first.or(Some(s_start)), s_start, Some(s_end)));
                            }
                        }
                    }
                    acc = next;
                }
                let negated: Vec<&String> = items
                    .iter()
                    .filter_map(|i| match i {
                        SeqItem::Not(t) => Some(t),
                        SeqItem::Pos(_) => None,
                    })
                    .collect();
                acc.into_iter()
                    .filter(|(_, lo, hi, _)| {
                        let lo = lo.unwrap_or(0);
                        !self.log.iter().any(|c| {
                            negated.contains(&&c.etype) && c.t_start > lo && c.t_end < *hi
                        })
                    })
                    .map(|(b, ..)| b)
                    .collect()
            }
        };
        out
    }
}

/// All detections of `p` over `log`, sorted by (t_end, t_start, binding).
pub fn match_oracle(p: &Pattern, log: &[Event]) -> Result<Vec<Event>, OracleError> {
    if log.len() > MAX_LOG {
        return Err(OracleError::LogTooLarge(log.len()));
    }
    if let Some(i) = (1..log.len()).find(|i| log[*i].t_end < log[i - 1].t_end) {
        return Err(OracleError::Unordered(i));
    }
    let ctx = Ctx { p, log };
    let refs = |b: &Binding| -> Vec<Option<&Event>> { b.iter().map(|i| i.map(|i| &log[i])).collect() };

    let mut found: Vec<(usize, Millis, Millis, Binding)> = ctx
        .denote(p.root())
        .into_iter()
        .filter(|b| p.guard_holds(&refs(b)))
        .map(|b| {
            let (s, e) = ctx.span(&b);
            let emitted = b.iter().flatten().copied().max().unwrap_or(0);
            (emitted, e, s, b)
        })
        .collect();
    found.sort();

    if p.policy == Policy::First {
        let mut kept: Vec<(Option<String>, Millis)> = Vec::new();
        found.retain(|(_, e, s, b)| {
            let part = p.partition_of(&refs(b));
            match kept.iter_mut().find(|(k, _)| *k == part) {
                Some((_, end)) if *s <= *end => false,
                Some((_, end)) => {
                    *end = *e;
                    true
                }
                None => {
                    kept.push((part, *e));
                    true
                }
            }
        });
    }

    let mut out: Vec<(Millis, Millis, Binding)> = found.into_iter().map(|(_, e, s, b)| (e, s, b)).collect();
    out.sort();
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, b))| p.detection(format!("oracle-{}", i + 1), &refs(&b)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::Tables;
    use std::sync::Arc;

    fn pattern(src: &str) -> Pattern {
        Pattern::compile(src, Arc::new(Tables::new())).unwrap()
    }

    fn ev(id: &str, etype: &str, t: Millis) -> Event {
        Event::simple(id, etype, "test", t, "test")
    }

    #[test]
    fn empty_log() {
        let p = pattern("PATTERN P = SEQ(a:A, b:B) WITHIN 10");
        assert_eq!(match_oracle(&p, &[]).unwrap(), vec![]);
    }

    #[test]
    fn not_between() {
        let p = pattern("PATTERN P = SEQ(a:A, NOT(C), b:B) WITHIN 10000");
        let log = [ev("1", "A", 1000), ev("2", "C", 2000), ev("3", "B", 3000)];
        assert!(match_oracle(&p, &log).unwrap().is_empty());
        assert_eq!(match_oracle(&p, &[ev("1", "A", 1000), ev("3", "B", 3000)]).unwrap().len(), 1);
    }

    #[test]
    fn refuses_large_logs() {
        let p = pattern("PATTERN P = SEQ(a:A, b:B) WITHIN 10");
        let log: Vec<Event> = (0..51).map(|i| ev(&i.to_string(), "A", i)).collect();
        assert_eq!(match_oracle(&p, &log), Err(OracleError::LogTooLarge(51)));
    }

    #[test]
    fn and_and_or() {
        let p = pattern("PATTERN P = AND(a:A, OR(b:B, c:C)) WITHIN 100 POLICY every");
        let log = [ev("1", "B", 10), ev("2", "A", 20), ev("3", "C", 30), ev("4", "A", 500)];
        let d = match_oracle(&p, &log).unwrap();
        let parents: Vec<Vec<String>> = d.iter().map(|d| d.parents.clone()).collect();
        assert_eq!(parents, vec![vec!["2", "1"], vec!["2", "3"]]);
    }
}
