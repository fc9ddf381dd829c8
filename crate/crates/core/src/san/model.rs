//! SAN documents: grammar, model types and validation.
//!
//! ```text
//! MODEL Pilot
//! CONTEXT {
//!     clock: clock
//!     fuel_{truck}: decimal
//!     delay_T1: integer = 0
//!     ON FuelLevel SET fuel_{truck} = event.level
//! }
//! TABLES { customer_zones: "customer_zones.tbl" }
//! PATTERNS { PATTERN ... }
//! GOAL Root {
//!     GOAL Child ACTIVATED BY P { ACTION a IF fuel_{x.truck} > 1.0 NOTIFY ops "..." }
//!     SUBGOAL Other
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::cep::pattern::{parse_pattern, PatternErrorKind};
use crate::cep::Pattern;
use crate::context::{ContextRule, KeyDecl, Schema};
use crate::expr::{parse_expr, Expr, Value, ValueType};
use crate::syntax::{placeholders, Cursor, Pos, SyntaxError, Tok};
use crate::tables::{Table, Tables};

pub type GoalId = usize;
pub type ActionId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Auto,
    Manual,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Auto => "auto",
            Mode::Manual => "manual",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    Notify { audience: String, message: String },
    Command {
        target: String,
        verb: String,
        args: Vec<(String, String)>,
    },
    Subscribe(String),
    Unsubscribe(String),
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Notify { .. } => "notify",
            ActionKind::Command { .. } => "command",
            ActionKind::Subscribe(_) => "subscribe",
            ActionKind::Unsubscribe(_) => "unsubscribe",
        }
    }

    fn templates(&self) -> Vec<&str> {
        match self {
            ActionKind::Notify { message, .. } => vec![message],
            ActionKind::Command { args, .. } => args.iter().map(|(_, v)| v.as_str()).collect(),
            ActionKind::Subscribe(p) | ActionKind::Unsubscribe(p) => vec![p],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionNode {
    pub name: String,
    pub goal: GoalId,
    /// Pattern whose detections trigger this reaction.
    pub situation: String,
    pub condition: Option<Expr>,
    /// Lower runs earlier; ties keep declaration order.
    pub priority: i64,
    pub mode: Mode,
    /// Recommendation lifetime override, in minutes.
    pub expires_min: Option<i64>,
    /// Recipient of recommendations for manual commands.
    pub audience: Option<String>,
    pub kind: ActionKind,
    /// Position in document order across the whole model.
    pub decl: usize,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub name: String,
    pub parent: Option<GoalId>,
    pub children: Vec<GoalId>,
    pub activated_by: Option<String>,
    pub achieved_by: Option<String>,
    pub actions: Vec<ActionId>,
    pub pos: Pos,
}

#[derive(Debug, Clone)]
pub struct SanModel {
    pub name: String,
    pub schema: Arc<Schema>,
    pub rules: Vec<ContextRule>,
    pub tables: Arc<Tables>,
    pub patterns: Vec<Arc<Pattern>>,
    /// Goals in depth-first declaration order; the root is first.
    pub goals: Vec<Goal>,
    pub actions: Vec<ActionNode>,
}

impl SanModel {
    pub fn root(&self) -> GoalId {
        0
    }

    pub fn pattern(&self, name: &str) -> Option<&Arc<Pattern>> {
        self.patterns.iter().find(|p| p.name == name)
    }

    pub fn goal(&self, name: &str) -> Option<GoalId> {
        self.goals.iter().position(|g| g.name == name)
    }

    /// Whether some pattern could satisfy a possibly templated pattern name.
    pub fn admits_pattern(&self, raw: &str) -> bool {
        match raw.find('{') {
            None => self.pattern(raw).is_some(),
            Some(i) => self.patterns.iter().any(|p| p.name.starts_with(&raw[..i])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SanError {
    #[error("{0}")]
    Parse(String),
    #[error("pattern: {0}")]
    Pattern(PatternErrorKind),
    #[error("unknown pattern `{0}`")]
    UnknownPattern(String),
    #[error("unknown goal `{0}`")]
    UnknownGoal(String),
    #[error("goal cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("template variable `{0}` is not bound by the triggering situation")]
    TemplateUnbound(String),
    #[error("context key `{0}` is not declared")]
    UndeclaredKey(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("initial value of `{key}` is {found}, declared {expected}")]
    InitTypeMismatch {
        key: String,
        expected: ValueType,
        found: ValueType,
    },
    #[error("table `{name}`: {msg}")]
    Table { name: String, msg: String },
    #[error("goal `{0}` has more than one parent")]
    MultipleParents(String),
    #[error("model needs exactly one root goal, found {}", if .0.is_empty() { "none".to_string() } else { .0.join(", ") })]
    Roots(Vec<String>),
    #[error("action `{0}` has no situation: add ON <pattern> or ACTIVATED BY on its goal")]
    MissingSituation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: error: {kind}")]
pub struct Diagnostic {
    pub pos: Pos,
    pub kind: SanError,
}

impl From<SyntaxError> for Diagnostic {
    fn from(e: SyntaxError) -> Self {
        Diagnostic {
            pos: e.pos,
            kind: SanError::Parse(e.msg),
        }
    }
}

/// Raw goal as written; subgoal references are resolved afterwards.
struct RawGoal {
    name: String,
    pos: Pos,
    activated_by: Option<(String, Pos)>,
    achieved_by: Option<(String, Pos)>,
    /// Inline goals (index into raw goals) and references, in body order.
    body: Vec<BodyItem>,
    top_level: bool,
}

enum BodyItem {
    Goal(usize),
    SubGoal(String, Pos),
    Action(usize),
}

struct RawAction {
    node: ActionNode,
    situation: Option<(String, Pos)>,
}

struct Parser<'a> {
    cur: Cursor,
    diags: Vec<Diagnostic>,
    load: &'a mut dyn FnMut(&str) -> Result<String, String>,
    name: Option<String>,
    schema: Schema,
    rules: Vec<(ContextRule, Pos)>,
    tables: Tables,
    patterns: Vec<Arc<Pattern>>,
    goals: Vec<RawGoal>,
    actions: Vec<RawAction>,
}

/// Parse and validate a SAN document. `load` reads table files named in
/// the TABLES section. All diagnostics are reported, ordered by position.
pub fn parse_san(
    text: &str,
    load: &mut dyn FnMut(&str) -> Result<String, String>,
) -> Result<SanModel, Vec<Diagnostic>> {
    let cur = Cursor::new(text).map_err(|e| vec![e.into()])?;
    let mut p = Parser {
        cur,
        diags: Vec::new(),
        load,
        name: None,
        schema: Schema::default(),
        rules: Vec::new(),
        tables: Tables::new(),
        patterns: Vec::new(),
        goals: Vec::new(),
        actions: Vec::new(),
    };
    if let Err(e) = p.document() {
        p.diags.push(e.into());
        p.diags.sort_by_key(|d| d.pos);
        return Err(p.diags);
    }
    let model = p.finish();
    match model {
        Ok(m) => Ok(m),
        Err(mut diags) => {
            diags.sort_by_key(|d| d.pos);
            Err(diags)
        }
    }
}

impl Parser<'_> {
    fn diag(&mut self, pos: Pos, kind: SanError) {
        self.diags.push(Diagnostic { pos, kind });
    }

    fn document(&mut self) -> Result<(), SyntaxError> {
        while !self.cur.at_eof() {
            if self.cur.eat_kw("MODEL") {
                self.name = Some(self.cur.plain_ident()?);
            } else if self.cur.eat_kw("CONTEXT") {
                self.context()?;
            } else if self.cur.eat_kw("TABLES") {
                self.tables()?;
            } else if self.cur.eat_kw("PATTERNS") {
                self.patterns()?;
            } else if self.cur.is_kw("GOAL") {
                self.goal(true)?;
            } else if !self.cur.eat_sym(";") {
                return Err(self.cur.unexpected("MODEL, CONTEXT, TABLES, PATTERNS or GOAL"));
            }
        }
        Ok(())
    }

    fn context(&mut self) -> Result<(), SyntaxError> {
        self.cur.expect_sym("{")?;
        while !self.cur.eat_sym("}") {
            if self.cur.eat_sym(";") {
                continue;
            }
            let pos = self.cur.pos();
            if self.cur.eat_kw("ON") {
                let on_etype = self.cur.plain_ident()?;
                self.cur.expect_kw("SET")?;
                let mut assignments = Vec::new();
                loop {
                    let key = self.cur.ident()?;
                    self.cur.expect_sym("=")?;
                    let expr = parse_expr(&mut self.cur)?;
                    assignments.push((key, expr));
                    if !self.cur.eat_sym(",") {
                        break;
                    }
                }
                self.rules.push((
                    ContextRule {
                        on_etype,
                        assignments,
                    },
                    pos,
                ));
                continue;
            }
            let name = self.cur.ident()?;
            self.cur.expect_sym(":")?;
            let ty_pos = self.cur.pos();
            let ty_name = self.cur.plain_ident()?;
            let ty = ValueType::parse(&ty_name);
            if ty.is_none() {
                self.diag(ty_pos, SanError::UnknownType(ty_name));
            }
            let init = if self.cur.eat_sym("=") {
                Some(self.literal()?)
            } else {
                None
            };
            if self.schema.decls.iter().any(|d| d.name == name) {
                self.diag(pos, SanError::DuplicateName(name.clone()));
            }
            if let (Some(ty), Some(v)) = (ty, &init) {
                if !ty.accepts(v) {
                    self.diag(
                        pos,
                        SanError::InitTypeMismatch {
                            key: name.clone(),
                            expected: ty,
                            found: v.value_type(),
                        },
                    );
                }
            }
            self.schema.decls.push(KeyDecl {
                name,
                ty: ty.unwrap_or(ValueType::String),
                init,
            });
        }
        Ok(())
    }

    fn literal(&mut self) -> Result<Value, SyntaxError> {
        let neg = self.cur.eat_sym("-");
        let v = match self.cur.advance() {
            Tok::Int(v) => Value::Int(if neg { -v } else { v }),
            Tok::Dec(v) => Value::Dec(if neg { -v } else { v }),
            Tok::Str(s) if !neg => Value::Str(s),
            Tok::Clock(m) if !neg => Value::Clock(m),
            Tok::Ident(s) if !neg && s == "true" => Value::Bool(true),
            Tok::Ident(s) if !neg && s == "false" => Value::Bool(false),
            _ => return Err(self.cur.error("expected a literal value")),
        };
        Ok(v)
    }

    fn tables(&mut self) -> Result<(), SyntaxError> {
        self.cur.expect_sym("{")?;
        while !self.cur.eat_sym("}") {
            if self.cur.eat_sym(";") {
                continue;
            }
            let pos = self.cur.pos();
            let name = self.cur.plain_ident()?;
            self.cur.expect_sym(":")?;
            let file = self.cur.string()?;
            if self.tables.contains_key(&name) {
                self.diag(pos, SanError::DuplicateName(name.clone()));
            }
            match (self.load)(&file).and_then(|text| Table::parse(&text).map_err(|e| e.to_string())) {
                Ok(t) => {
                    self.tables.insert(name, t);
                }
                Err(msg) => self.diag(pos, SanError::Table { name, msg }),
            }
        }
        Ok(())
    }

    fn patterns(&mut self) -> Result<(), SyntaxError> {
        self.cur.expect_sym("{")?;
        let tables = Arc::new(self.tables.clone());
        while !self.cur.eat_sym("}") {
            if self.cur.eat_sym(";") {
                continue;
            }
            let pos = self.cur.pos();
            match parse_pattern(&mut self.cur, tables.clone()) {
                Ok(p) => {
                    if self.patterns.iter().any(|q| q.name == p.name) {
                        self.diag(pos, SanError::DuplicateName(p.name.clone()));
                    }
                    self.patterns.push(Arc::new(p));
                }
                Err(errs) => {
                    for e in errs {
                        if let PatternErrorKind::Parse(msg) = e.kind {
                            return Err(SyntaxError::new(e.pos, msg));
                        }
                        self.diag(e.pos, SanError::Pattern(e.kind));
                    }
                }
            }
        }
        Ok(())
    }

    fn goal(&mut self, top_level: bool) -> Result<usize, SyntaxError> {
        self.cur.expect_kw("GOAL")?;
        let pos = self.cur.pos();
        let name = self.cur.plain_ident()?;
        let mut activated_by = None;
        let mut achieved_by = None;
        loop {
            if self.cur.eat_kw("ACTIVATED") {
                self.cur.expect_kw("BY")?;
                let p = self.cur.pos();
                activated_by = Some((self.cur.plain_ident()?, p));
            } else if self.cur.eat_kw("ACHIEVED") {
                self.cur.expect_kw("BY")?;
                let p = self.cur.pos();
                achieved_by = Some((self.cur.plain_ident()?, p));
            } else {
                break;
            }
        }
        let id = self.goals.len();
        self.goals.push(RawGoal {
            name,
            pos,
            activated_by,
            achieved_by,
            body: Vec::new(),
            top_level,
        });
        self.cur.expect_sym("{")?;
        while !self.cur.eat_sym("}") {
            if self.cur.eat_sym(";") {
                continue;
            }
            if self.cur.is_kw("GOAL") {
                let child = self.goal(false)?;
                self.goals[id].body.push(BodyItem::Goal(child));
            } else if self.cur.eat_kw("SUBGOAL") {
                let p = self.cur.pos();
                let name = self.cur.plain_ident()?;
                self.goals[id].body.push(BodyItem::SubGoal(name, p));
            } else if self.cur.eat_kw("ACTION") {
                let a = self.action(id)?;
                self.goals[id].body.push(BodyItem::Action(a));
            } else {
                return Err(self.cur.unexpected("GOAL, SUBGOAL, ACTION or `}`"));
            }
        }
        Ok(id)
    }

    fn action(&mut self, goal: usize) -> Result<usize, SyntaxError> {
        let pos = self.cur.pos();
        let name = self.cur.plain_ident()?;
        let mut situation = None;
        let mut condition = None;
        let mut priority = 0;
        let mut mode = Mode::Auto;
        let mut expires_min = None;
        let mut audience = None;
        let kind = loop {
            if self.cur.eat_kw("ON") {
                let p = self.cur.pos();
                situation = Some((self.cur.plain_ident()?, p));
            } else if self.cur.eat_kw("IF") {
                condition = Some(parse_expr(&mut self.cur)?);
            } else if self.cur.eat_kw("PRIORITY") {
                priority = self.cur.int()?;
            } else if self.cur.eat_kw("MODE") {
                mode = match self.cur.advance() {
                    Tok::Ident(s) if s == "auto" => Mode::Auto,
                    Tok::Ident(s) if s == "manual" => Mode::Manual,
                    _ => return Err(self.cur.error("expected `auto` or `manual`")),
                };
            } else if self.cur.eat_kw("EXPIRES") {
                let p = self.cur.pos();
                let m = self.cur.int()?;
                if m <= 0 {
                    return Err(SyntaxError::new(p, "EXPIRES needs a positive number of minutes"));
                }
                expires_min = Some(m);
            } else if self.cur.eat_kw("AUDIENCE") {
                audience = Some(self.cur.plain_ident()?);
            } else if self.cur.eat_kw("NOTIFY") {
                let audience = self.cur.plain_ident()?;
                let message = self.cur.string()?;
                break ActionKind::Notify { audience, message };
            } else if self.cur.eat_kw("COMMAND") {
                let target = self.cur.plain_ident()?;
                let verb = self.cur.plain_ident()?;
                let mut args = Vec::new();
                while matches!(self.cur.peek(), Tok::Ident(_)) && *self.cur.peek_at(1) == Tok::Sym("=") {
                    let k = self.cur.plain_ident()?;
                    self.cur.expect_sym("=")?;
                    args.push((k, self.cur.string()?));
                }
                break ActionKind::Command { target, verb, args };
            } else if self.cur.eat_kw("SUBSCRIBE") {
                break ActionKind::Subscribe(self.cur.ident()?);
            } else if self.cur.eat_kw("UNSUBSCRIBE") {
                break ActionKind::Unsubscribe(self.cur.ident()?);
            } else {
                return Err(self.cur.unexpected("action clause or NOTIFY, COMMAND, SUBSCRIBE, UNSUBSCRIBE"));
            }
        };
        let decl = self.actions.len();
        self.actions.push(RawAction {
            node: ActionNode {
                name,
                goal,
                situation: String::new(),
                condition,
                priority,
                mode,
                expires_min,
                audience,
                kind,
                decl,
                pos,
            },
            situation,
        });
        Ok(decl)
    }

    fn check_pattern(&mut self, name: &str, pos: Pos) {
        if !self.patterns.iter().any(|p| p.name == name) {
            self.diag(pos, SanError::UnknownPattern(name.to_string()));
        }
    }

    fn finish(mut self) -> Result<SanModel, Vec<Diagnostic>> {
        // context rules
        let rules = std::mem::take(&mut self.rules);
        for (rule, pos) in &rules {
            for (key, expr) in &rule.assignments {
                if !self.schema.admits(key) {
                    self.diag(*pos, SanError::UndeclaredKey(key.clone()));
                }
                for k in expr.keys() {
                    if !self.schema.admits(&k) {
                        self.diag(*pos, SanError::UndeclaredKey(k));
                    }
                }
                for v in expr.vars() {
                    if v != "event" {
                        self.diag(*pos, SanError::TemplateUnbound(v));
                    }
                }
            }
        }

        // names
        let mut seen = BTreeSet::new();
        let names: Vec<(String, Pos)> = self
            .goals
            .iter()
            .map(|g| (g.name.clone(), g.pos))
            .chain(self.actions.iter().map(|a| (a.node.name.clone(), a.node.pos)))
            .collect();
        for (n, pos) in names {
            if !seen.insert(n.clone()) {
                self.diag(pos, SanError::DuplicateName(n));
            }
        }

        // goal situations
        let refs: Vec<(String, Pos)> = self
            .goals
            .iter()
            .flat_map(|g| g.activated_by.iter().chain(g.achieved_by.iter()).cloned())
            .collect();
        for (n, pos) in refs {
            self.check_pattern(&n, pos);
        }

        // actions: situation, templates, condition keys
        for i in 0..self.actions.len() {
            let goal = self.actions[i].node.goal;
            let situation = self.actions[i]
                .situation
                .clone()
                .or_else(|| self.goals[goal].activated_by.clone());
            let pos = self.actions[i].node.pos;
            let Some((sit, sit_pos)) = situation else {
                let n = self.actions[i].node.name.clone();
                self.diag(pos, SanError::MissingSituation(n));
                continue;
            };
            self.check_pattern(&sit, sit_pos);
            self.actions[i].node.situation = sit.clone();
            let vars: Vec<String> = self
                .patterns
                .iter()
                .find(|p| p.name == sit)
                .map(|p| p.leaves.iter().map(|l| l.var.clone()).collect())
                .unwrap_or_default();
            let known_pattern = self.patterns.iter().any(|p| p.name == sit);

            let mut holes: Vec<String> = Vec::new();
            for t in self.actions[i].node.kind.templates() {
                holes.extend(placeholders(t));
            }
            let mut cond_vars = Vec::new();
            if let Some(c) = &self.actions[i].node.condition {
                for k in c.keys() {
                    holes.extend(placeholders(&k));
                    if !self.schema.admits(&k) {
                        self.diags.push(Diagnostic {
                            pos,
                            kind: SanError::UndeclaredKey(k.clone()),
                        });
                    }
                }
                cond_vars = c.vars();
            }
            for h in holes {
                match h.split_once('.') {
                    Some((var, _)) => {
                        if known_pattern && !vars.iter().any(|v| v == var) {
                            self.diag(pos, SanError::TemplateUnbound(h.clone()));
                        }
                    }
                    None => {
                        if self.schema.type_of(&h).is_none() {
                            self.diag(pos, SanError::TemplateUnbound(h.clone()));
                        }
                    }
                }
            }
            for v in cond_vars {
                if known_pattern && !vars.contains(&v) {
                    self.diag(pos, SanError::TemplateUnbound(v));
                }
            }
            if let ActionKind::Subscribe(p) | ActionKind::Unsubscribe(p) = &self.actions[i].node.kind {
                let ok = match p.find('{') {
                    None => self.patterns.iter().any(|q| &q.name == p),
                    Some(j) => self.patterns.iter().any(|q| q.name.starts_with(&p[..j])),
                };
                if !ok {
                    let p = p.clone();
                    self.diag(pos, SanError::UnknownPattern(p));
                }
            }
        }

        // goal tree
        let by_name: BTreeMap<String, usize> = self
            .goals
            .iter()
            .enumerate()
            .map(|(i, g)| (g.name.clone(), i))
            .rev()
            .collect();
        let mut parent: Vec<Option<usize>> = vec![None; self.goals.len()];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.goals.len()];
        #[allow(clippy::needless_range_loop)]
        for g in 0..self.goals.len() {
            let mut kids = Vec::new();
            let mut bad = Vec::new();
            for item in &self.goals[g].body {
                match item {
                    BodyItem::Goal(c) => kids.push((*c, self.goals[*c].pos)),
                    BodyItem::SubGoal(n, pos) => match by_name.get(n) {
                        Some(c) if self.goals[*c].top_level => kids.push((*c, *pos)),
                        Some(_) => bad.push((*pos, SanError::MultipleParents(n.clone()))),
                        None => bad.push((*pos, SanError::UnknownGoal(n.clone()))),
                    },
                    BodyItem::Action(_) => {}
                }
            }
            for (pos, kind) in bad {
                self.diag(pos, kind);
            }
            for (c, pos) in kids {
                if parent[c].is_some() {
                    let n = self.goals[c].name.clone();
                    self.diag(pos, SanError::MultipleParents(n));
                    continue;
                }
                parent[c] = Some(g);
                children[g].push(c);
            }
        }
        // cycles: follow parent links
        let mut in_cycle = vec![false; self.goals.len()];
        for start in 0..self.goals.len() {
            let mut path = vec![start];
            let mut at = start;
            while let Some(p) = parent[at] {
                if p == start {
                    if !in_cycle[start] {
                        for g in &path {
                            in_cycle[*g] = true;
                        }
                        let names: Vec<String> = std::iter::once(p)
                            .chain(path.iter().rev().copied())
                            .map(|g| self.goals[g].name.clone())
                            .collect();
                        let pos = self.goals[start].pos;
                        self.diag(pos, SanError::CycleDetected(names));
                    }
                    break;
                }
                if path.contains(&p) {
                    break;
                }
                path.push(p);
                at = p;
            }
        }
        let roots: Vec<usize> = (0..self.goals.len()).filter(|g| parent[*g].is_none()).collect();
        if self.goals.is_empty() || (roots.len() != 1 && !in_cycle.contains(&true)) {
            let names = roots.iter().map(|g| self.goals[*g].name.clone()).collect();
            let pos = roots.get(1).map(|g| self.goals[*g].pos).unwrap_or_default();
            self.diag(pos, SanError::Roots(names));
        }

        if !self.diags.is_empty() {
            return Err(self.diags);
        }

        // depth-first arena
        let mut order = Vec::new();
        fn dfs(g: usize, children: &[Vec<usize>], order: &mut Vec<usize>) {
            order.push(g);
            for c in &children[g] {
                dfs(*c, children, order);
            }
        }
        dfs(roots[0], &children, &mut order);
        let mut index = vec![0; self.goals.len()];
        for (new, old) in order.iter().enumerate() {
            index[*old] = new;
        }
        let goals: Vec<Goal> = order
            .iter()
            .map(|old| {
                let raw = &self.goals[*old];
                Goal {
                    name: raw.name.clone(),
                    parent: parent[*old].map(|p| index[p]),
                    children: children[*old].iter().map(|c| index[*c]).collect(),
                    activated_by: raw.activated_by.as_ref().map(|(n, _)| n.clone()),
                    achieved_by: raw.achieved_by.as_ref().map(|(n, _)| n.clone()),
                    actions: raw
                        .body
                        .iter()
                        .filter_map(|b| match b {
                            BodyItem::Action(a) => Some(*a),
                            _ => None,
                        })
                        .collect(),
                    pos: raw.pos,
                }
            })
            .collect();
        let actions = self
            .actions
            .into_iter()
            .map(|mut a| {
                a.node.goal = index[a.node.goal];
                a.node
            })
            .collect();
        Ok(SanModel {
            name: self.name.unwrap_or_else(|| "model".into()),
            schema: Arc::new(self.schema),
            rules: rules.into_iter().map(|(r, _)| r).collect(),
            tables: Arc::new(self.tables),
            patterns: self.patterns,
            goals,
            actions,
        })
    }
}
