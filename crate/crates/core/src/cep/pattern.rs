//! Pattern language: parsing, validation and the compiled form shared by the
//! incremental engine and the reference oracle.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::event::{Event, Millis, Scalar};
use crate::expr::{parse_expr, EvalError, Expr, Scope, Value};
use crate::syntax::{Cursor, Pos, SyntaxError, Tok};
use crate::tables::Tables;

pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternErrorKind {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("window must be positive, got {0}")]
    InvalidWindow(i64),
    #[error("variable `{0}` is not bound by any event reference")]
    UnboundVariable(String),
    #[error("NOT is only allowed between the first and last operand of SEQ")]
    MisplacedNot,
    #[error("pattern depth {0} exceeds the limit of {MAX_DEPTH}")]
    DepthExceeded(usize),
    #[error("variable `{0}` is bound more than once")]
    DuplicateVariable(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("{0} needs at least two operands")]
    Arity(&'static str),
    #[error("duplicate clause {0}")]
    DuplicateClause(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: {kind}")]
pub struct PatternError {
    pub pos: Pos,
    pub kind: PatternErrorKind,
}

impl From<SyntaxError> for PatternError {
    fn from(e: SyntaxError) -> Self {
        PatternError {
            pos: e.pos,
            kind: PatternErrorKind::Parse(e.msg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// At most one detection per partition per window span; partials of
    /// the partition are consumed by a detection.
    #[default]
    First,
    Every,
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum SeqItem {
    Pos(NodeId),
    Not(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Index into [`Pattern::leaves`].
    Leaf(usize),
    Seq(Vec<SeqItem>),
    And(Vec<NodeId>),
    Or(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub var: String,
    pub etype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionKey {
    pub var: String,
    pub attr: String,
    pub leaf: usize,
}

/// A validated pattern.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub name: String,
    /// Nodes in post-order; the root is last.
    pub nodes: Vec<Node>,
    /// Event references in textual order.
    pub leaves: Vec<Leaf>,
    pub window_ms: Millis,
    pub guard: Option<Expr>,
    pub partition: Option<PartitionKey>,
    pub policy: Policy,
    pub tables: Arc<Tables>,
    /// Whether a node's matches must be kept for later combination.
    pub(crate) stored: Vec<bool>,
}

impl Pattern {
    pub fn compile(src: &str, tables: Arc<Tables>) -> Result<Pattern, Vec<PatternError>> {
        let mut cur = Cursor::new(src).map_err(|e| vec![e.into()])?;
        let p = parse_pattern(&mut cur, tables)?;
        if !cur.at_eof() {
            return Err(vec![cur.unexpected("end of pattern").into()]);
        }
        Ok(p)
    }

    pub fn root(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn leaf_of(&self, var: &str) -> Option<usize> {
        self.leaves.iter().position(|l| l.var == var)
    }

    pub fn depth(&self) -> usize {
        fn d(p: &Pattern, n: NodeId) -> usize {
            match &p.nodes[n] {
                Node::Leaf(_) => 1,
                Node::And(cs) | Node::Or(cs) => 1 + cs.iter().map(|c| d(p, *c)).max().unwrap_or(0),
                Node::Seq(items) => {
                    1 + items
                        .iter()
                        .map(|i| match i {
                            SeqItem::Pos(c) => d(p, *c),
                            SeqItem::Not(_) => 1,
                        })
                        .max()
                        .unwrap_or(0)
                }
            }
        }
        d(self, self.root())
    }

    /// Every event type the pattern reacts to, including negated ones.
    pub fn etypes(&self) -> Vec<String> {
        let mut out: Vec<String> = self.leaves.iter().map(|l| l.etype.clone()).collect();
        for n in &self.nodes {
            if let Node::Seq(items) = n {
                for i in items {
                    if let SeqItem::Not(t) = i {
                        out.push(t.clone());
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Evaluate the guard over a binding (one optional event per leaf).
    /// Missing attributes, unbound variables and type errors make it false.
    pub fn guard_holds(&self, bind: &[Option<&Event>]) -> bool {
        match &self.guard {
            None => true,
            Some(g) => g
                .eval_bool(&Bindings {
                    pattern: self,
                    bind,
                })
                .unwrap_or(false),
        }
    }

    /// Partition value of a binding; `None` when the key is unbound or missing.
    pub fn partition_of(&self, bind: &[Option<&Event>]) -> Option<String> {
        let pk = self.partition.as_ref()?;
        bind[pk.leaf]?.attr(&pk.attr).map(Scalar::key_string)
    }

    /// Build the complex event for a binding.
    pub fn detection(&self, id: String, bind: &[Option<&Event>]) -> Event {
        let bound: Vec<(&Leaf, &Event)> = self
            .leaves
            .iter()
            .zip(bind)
            .filter_map(|(l, e)| e.map(|e| (l, e)))
            .collect();
        let t_start = bound.iter().map(|(_, e)| e.t_start).min().unwrap_or(0);
        let t_end = bound.iter().map(|(_, e)| e.t_end).max().unwrap_or(0);
        let mut ev = Event {
            id,
            etype: self.name.clone(),
            topic: format!("cep.{}", self.name),
            t_start,
            t_end,
            source: "cep".into(),
            parents: bound.iter().map(|(_, e)| e.id.clone()).collect(),
            attrs: BTreeMap::new(),
        };
        for (leaf, e) in bound {
            for (k, v) in &e.attrs {
                ev.attrs.insert(format!("{}.{}", leaf.var, k), v.clone());
            }
        }
        ev
    }
}

struct Bindings<'a> {
    pattern: &'a Pattern,
    bind: &'a [Option<&'a Event>],
}

impl Scope for Bindings<'_> {
    fn attr(&self, var: &str, attr: &str) -> Result<Value, EvalError> {
        let leaf = self
            .pattern
            .leaf_of(var)
            .ok_or_else(|| EvalError::UnboundVariable(var.into()))?;
        let ev = self.bind[leaf].ok_or_else(|| EvalError::UnboundVariable(var.into()))?;
        ev.attr(attr)
            .map(Value::from)
            .ok_or_else(|| EvalError::MissingAttr(var.into(), attr.into()))
    }

    fn key(&self, name: &str) -> Result<Value, EvalError> {
        Err(EvalError::UnboundVariable(name.into()))
    }

    fn in_table(&self, table: &str, key: &str, needle: &str) -> Result<bool, EvalError> {
        self.pattern
            .tables
            .get(table)
            .map(|t| t.contains(key, needle))
            .ok_or_else(|| EvalError::UnknownTable(table.into()))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn node(p: &Pattern, n: NodeId, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let list = |f: &mut fmt::Formatter<'_>, op: &str, cs: &[NodeId]| -> fmt::Result {
                write!(f, "{op}(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    node(p, *c, f)?;
                }
                f.write_str(")")
            };
            match &p.nodes[n] {
                Node::Leaf(l) => write!(f, "{}:{}", p.leaves[*l].var, p.leaves[*l].etype),
                Node::And(cs) => list(f, "AND", cs),
                Node::Or(cs) => list(f, "OR", cs),
                Node::Seq(items) => {
                    f.write_str("SEQ(")?;
                    for (i, it) in items.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        match it {
                            SeqItem::Pos(c) => node(p, *c, f)?,
                            SeqItem::Not(t) => write!(f, "NOT({t})")?,
                        }
                    }
                    f.write_str(")")
                }
            }
        }
        write!(f, "PATTERN {} = ", self.name)?;
        node(self, self.root(), f)?;
        write!(f, " WITHIN {}", self.window_ms)?;
        if let Some(pk) = &self.partition {
            write!(f, " PARTITION BY {}.{}", pk.var, pk.attr)?;
        }
        if let Some(g) = &self.guard {
            write!(f, " WHERE {g}")?;
        }
        match self.policy {
            Policy::First => f.write_str(" POLICY first"),
            Policy::Every => f.write_str(" POLICY every"),
        }
    }
}

/// Parsed but unvalidated pattern expression.
enum PExpr {
    Leaf { var: String, etype: String, pos: Pos },
    Not { etype: String, pos: Pos },
    Seq(Vec<PExpr>, Pos),
    And(Vec<PExpr>, Pos),
    Or(Vec<PExpr>, Pos),
}

fn parse_pexpr(cur: &mut Cursor) -> Result<PExpr, SyntaxError> {
    let pos = cur.pos();
    let head = cur.plain_ident()?;
    match head.as_str() {
        "SEQ" | "AND" | "OR" if cur.is_sym("(") => {
            cur.advance();
            let mut items = vec![parse_pexpr(cur)?];
            while cur.eat_sym(",") {
                items.push(parse_pexpr(cur)?);
            }
            cur.expect_sym(")")?;
            Ok(match head.as_str() {
                "SEQ" => PExpr::Seq(items, pos),
                "AND" => PExpr::And(items, pos),
                _ => PExpr::Or(items, pos),
            })
        }
        "NOT" | "NOTBETWEEN" if cur.is_sym("(") => {
            cur.advance();
            let etype = cur.plain_ident()?;
            cur.expect_sym(")")?;
            Ok(PExpr::Not { etype, pos })
        }
        _ => {
            cur.expect_sym(":")?;
            let etype = cur.plain_ident()?;
            Ok(PExpr::Leaf {
                var: head,
                etype,
                pos,
            })
        }
    }
}

struct Builder {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    errors: Vec<PatternError>,
}

impl Builder {
    fn err(&mut self, pos: Pos, kind: PatternErrorKind) {
        self.errors.push(PatternError { pos, kind });
    }

    fn depth(e: &PExpr) -> usize {
        match e {
            PExpr::Leaf { .. } | PExpr::Not { .. } => 1,
            PExpr::Seq(cs, _) | PExpr::And(cs, _) | PExpr::Or(cs, _) => {
                1 + cs.iter().map(Self::depth).max().unwrap_or(0)
            }
        }
    }

    /// Flatten into post-order. `None` only for a misplaced NOT.
    fn build(&mut self, e: PExpr) -> Option<NodeId> {
        let id = match e {
            PExpr::Leaf { var, etype, pos } => {
                if self.leaves.iter().any(|l| l.var == var) {
                    self.err(pos, PatternErrorKind::DuplicateVariable(var.clone()));
                }
                self.leaves.push(Leaf { var, etype });
                Node::Leaf(self.leaves.len() - 1)
            }
            PExpr::Not { pos, .. } => {
                self.err(pos, PatternErrorKind::MisplacedNot);
                return None;
            }
            PExpr::And(cs, pos) => {
                if cs.len() < 2 {
                    self.err(pos, PatternErrorKind::Arity("AND"));
                }
                Node::And(cs.into_iter().filter_map(|c| self.build(c)).collect())
            }
            PExpr::Or(cs, pos) => {
                if cs.len() < 2 {
                    self.err(pos, PatternErrorKind::Arity("OR"));
                }
                Node::Or(cs.into_iter().filter_map(|c| self.build(c)).collect())
            }
            PExpr::Seq(cs, pos) => {
                let n = cs.len();
                let positives = cs.iter().filter(|c| !matches!(c, PExpr::Not { .. })).count();
                if positives < 2 {
                    self.err(pos, PatternErrorKind::Arity("SEQ"));
                }
                let mut items = Vec::new();
                for (i, c) in cs.into_iter().enumerate() {
                    match c {
                        PExpr::Not { etype, pos } => {
                            if i == 0 || i + 1 == n {
                                self.err(pos, PatternErrorKind::MisplacedNot);
                            }
                            items.push(SeqItem::Not(etype));
                        }
                        other => {
                            if let Some(id) = self.build(other) {
                                items.push(SeqItem::Pos(id));
                            }
                        }
                    }
                }
                Node::Seq(items)
            }
        };
        self.nodes.push(id);
        Some(self.nodes.len() - 1)
    }
}

/// Parse one `PATTERN` definition at the cursor.
pub fn parse_pattern(cur: &mut Cursor, tables: Arc<Tables>) -> Result<Pattern, Vec<PatternError>> {
    let start = cur.pos();
    let syntax = |e: SyntaxError| vec![PatternError::from(e)];
    cur.expect_kw("PATTERN").map_err(syntax)?;
    let name = cur.plain_ident().map_err(syntax)?;
    cur.expect_sym("=").map_err(syntax)?;
    let expr = parse_pexpr(cur).map_err(syntax)?;
    cur.expect_kw("WITHIN").map_err(syntax)?;
    let window_pos = cur.pos();
    let window_ms = cur.int().map_err(syntax)?;

    let mut errors = Vec::new();
    let mut partition: Option<(String, String, Pos)> = None;
    let mut guard: Option<(Expr, Pos)> = None;
    let mut policy: Option<Policy> = None;
    loop {
        let pos = cur.pos();
        if cur.eat_kw("PARTITION") {
            cur.expect_kw("BY").map_err(syntax)?;
            let var = cur.plain_ident().map_err(syntax)?;
            cur.expect_sym(".").map_err(syntax)?;
            let attr = cur.plain_ident().map_err(syntax)?;
            if partition.replace((var, attr, pos)).is_some() {
                errors.push(PatternError {
                    pos,
                    kind: PatternErrorKind::DuplicateClause("PARTITION BY"),
                });
            }
        } else if cur.eat_kw("WHERE") {
            let g = parse_expr(cur).map_err(syntax)?;
            if guard.replace((g, pos)).is_some() {
                errors.push(PatternError {
                    pos,
                    kind: PatternErrorKind::DuplicateClause("WHERE"),
                });
            }
        } else if cur.eat_kw("POLICY") {
            let p = match cur.advance() {
                Tok::Ident(s) if s == "first" => Policy::First,
                Tok::Ident(s) if s == "every" => Policy::Every,
                _ => return Err(syntax(SyntaxError::new(pos, "expected `first` or `every`"))),
            };
            if policy.replace(p).is_some() {
                errors.push(PatternError {
                    pos,
                    kind: PatternErrorKind::DuplicateClause("POLICY"),
                });
            }
        } else {
            break;
        }
    }

    if window_ms <= 0 {
        errors.push(PatternError {
            pos: window_pos,
            kind: PatternErrorKind::InvalidWindow(window_ms),
        });
    }
    let depth = Builder::depth(&expr);
    if depth > MAX_DEPTH {
        errors.push(PatternError {
            pos: start,
            kind: PatternErrorKind::DepthExceeded(depth),
        });
    }
    let mut b = Builder {
        nodes: Vec::new(),
        leaves: Vec::new(),
        errors: Vec::new(),
    };
    if b.build(expr).is_none() {
        // a bare NOT as the whole expression; keep an empty root for shape
        b.nodes.push(Node::And(Vec::new()));
    }
    errors.append(&mut b.errors);

    let bound = |v: &str| b.leaves.iter().position(|l| l.var == v);
    let partition = match partition {
        Some((var, attr, pos)) => match bound(&var) {
            Some(leaf) => Some(PartitionKey { var, attr, leaf }),
            None => {
                errors.push(PatternError {
                    pos,
                    kind: PatternErrorKind::UnboundVariable(var),
                });
                None
            }
        },
        None => None,
    };
    if let Some((g, pos)) = &guard {
        for v in g.vars() {
            if bound(&v).is_none() {
                errors.push(PatternError {
                    pos: *pos,
                    kind: PatternErrorKind::UnboundVariable(v),
                });
            }
        }
        for k in g.keys() {
            errors.push(PatternError {
                pos: *pos,
                kind: PatternErrorKind::UnboundVariable(k),
            });
        }
        for t in g.tables() {
            if !tables.contains_key(&t) {
                errors.push(PatternError {
                    pos: *pos,
                    kind: PatternErrorKind::UnknownTable(t),
                });
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let mut stored = vec![false; b.nodes.len()];
    for n in &b.nodes {
        match n {
            Node::And(cs) => cs.iter().for_each(|c| stored[*c] = true),
            Node::Seq(items) => {
                let pos: Vec<NodeId> = items
                    .iter()
                    .filter_map(|i| match i {
                        SeqItem::Pos(c) => Some(*c),
                        SeqItem::Not(_) => None,
                    })
                    .collect();
                for c in &pos[..pos.len() - 1] {
                    stored[*c] = true;
                }
            }
            Node::Leaf(_) | Node::Or(_) => {}
        }
    }

    Ok(Pattern {
        name,
        nodes: b.nodes,
        leaves: b.leaves,
        window_ms,
        guard: guard.map(|(g, _)| g),
        partition,
        policy: policy.unwrap_or_default(),
        tables,
        stored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::Table;

    fn tables() -> Arc<Tables> {
        let mut t = Tables::new();
        t.insert(
            "customer_zones".into(),
            Table::parse("customer zone\nC3 Z3\n").unwrap(),
        );
        Arc::new(t)
    }

    fn kinds(src: &str) -> Vec<PatternErrorKind> {
        Pattern::compile(src, tables())
            .unwrap_err()
            .into_iter()
            .map(|e| e.kind)
            .collect()
    }

    #[test]
    fn pilot_pattern_compiles() {
        let p = Pattern::compile(
            "PATTERN ExtraStopOpportunity = SEQ(r:ReturneeRequest, z:TruckEnteredZone) \
             WITHIN 10_800_000 PARTITION BY r.customer \
             WHERE z.zone in table(customer_zones, r.customer) POLICY first",
            tables(),
        )
        .unwrap();
        assert_eq!(p.leaves.len(), 2);
        assert_eq!(p.window_ms, 10_800_000);
        assert_eq!(p.policy, Policy::First);
        assert_eq!(p.partition.as_ref().unwrap().leaf, 0);
        assert_eq!(p.depth(), 2);
        // first operand is stored for combination, the last is not
        assert_eq!(p.stored, vec![true, false, false]);
    }

    #[test]
    fn reports_every_error() {
        let ks = kinds("PATTERN P = SEQ(a:A, NOT(C), b:B) WITHIN 0 WHERE z.k > 1 and x.k == 2");
        assert_eq!(
            ks,
            vec![
                PatternErrorKind::InvalidWindow(0),
                PatternErrorKind::UnboundVariable("z".into()),
                PatternErrorKind::UnboundVariable("x".into()),
            ]
        );
    }

    #[test]
    fn structural_errors() {
        assert_eq!(
            kinds("PATTERN P = SEQ(NOT(C), a:A, b:B) WITHIN 10"),
            vec![PatternErrorKind::MisplacedNot]
        );
        assert_eq!(
            kinds("PATTERN P = AND(a:A, NOT(C)) WITHIN 10"),
            vec![PatternErrorKind::MisplacedNot]
        );
        assert_eq!(
            kinds("PATTERN P = SEQ(a:A, a:B) WITHIN 10"),
            vec![PatternErrorKind::DuplicateVariable("a".into())]
        );
        assert_eq!(
            kinds("PATTERN P = SEQ(a:A, b:B) WITHIN 10 WHERE a.k in table(nope, b.k)"),
            vec![PatternErrorKind::UnknownTable("nope".into())]
        );
        assert_eq!(
            kinds("PATTERN P = SEQ(a:A, NOT(C)) WITHIN 10"),
            vec![PatternErrorKind::Arity("SEQ"), PatternErrorKind::MisplacedNot]
        );
        assert!(matches!(
            kinds("PATTERN P = SEQ(a:A b:B) WITHIN 10")[..],
            [PatternErrorKind::Parse(_)]
        ));
        let deep: String = (0..8).map(|i| format!("SEQ(x{i}:X, ")).collect::<String>()
            + "y:Y"
            + &")".repeat(8);
        assert_eq!(
            kinds(&format!("PATTERN P = {deep} WITHIN 10")),
            vec![PatternErrorKind::DepthExceeded(9)]
        );
    }

    #[test]
    fn display_round_trips() {
        let src = "PATTERN P = SEQ(a:A, NOT(C), OR(b:B, AND(c:C, d:D))) WITHIN 500 \
                   PARTITION BY a.k WHERE a.k == b.k POLICY every";
        let p = Pattern::compile(src, tables()).unwrap();
        let again = Pattern::compile(&p.to_string(), tables()).unwrap();
        assert_eq!(p.to_string(), again.to_string());
        assert_eq!(p.nodes, again.nodes);
        assert_eq!(p.etypes(), vec!["A", "B", "C", "D"]);
    }
}
