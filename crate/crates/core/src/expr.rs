//! Typed values and the boolean/arithmetic expression language used by
//! pattern guards, context rules and action conditions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::Scalar;
use crate::syntax::{render_template, Cursor, SyntaxError, Tok};

/// Typed scalar used by expressions and the context store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Int(i64),
    Dec(f64),
    Bool(bool),
    Str(String),
    /// Minutes since midnight.
    Clock(u32),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Int(_) => ValueType::Integer,
            Value::Dec(_) => ValueType::Decimal,
            Value::Bool(_) => ValueType::Boolean,
            Value::Str(_) => ValueType::String,
            Value::Clock(_) => ValueType::Clock,
        }
    }

    /// Rendering used for template substitution and table joins.
    pub fn key_string(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            other => other.to_string(),
        }
    }

    pub fn to_scalar(&self) -> Scalar {
        match self {
            Value::Int(v) => Scalar::Int(*v),
            Value::Dec(v) => Scalar::Dec(*v),
            Value::Bool(v) => Scalar::Bool(*v),
            Value::Str(v) => Scalar::Str(v.clone()),
            Value::Clock(_) => Scalar::Str(self.to_string()),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Dec(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<&Scalar> for Value {
    fn from(s: &Scalar) -> Self {
        match s {
            Scalar::Str(v) => Value::Str(v.clone()),
            Scalar::Int(v) => Value::Int(*v),
            Scalar::Dec(v) => Value::Dec(*v),
            Scalar::Bool(v) => Value::Bool(*v),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Dec(v) => write!(f, "{v:?}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
            Value::Clock(m) => write!(f, "{:02}:{:02}", m / 60, m % 60),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Integer,
    Decimal,
    Boolean,
    String,
    Clock,
}

impl ValueType {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "integer" => ValueType::Integer,
            "decimal" => ValueType::Decimal,
            "boolean" => ValueType::Boolean,
            "string" => ValueType::String,
            "clock" => ValueType::Clock,
            _ => return None,
        })
    }

    /// Whether a value of type `v` may be stored under this type.
    /// Integers widen to decimals; nothing else converts.
    pub fn accepts(self, v: &Value) -> bool {
        v.value_type() == self || (self == ValueType::Decimal && matches!(v, Value::Int(_)))
    }

    /// Coerce an accepted value to this type.
    pub fn coerce(self, v: Value) -> Value {
        match (self, v) {
            (ValueType::Decimal, Value::Int(i)) => Value::Dec(i as f64),
            (_, v) => v,
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Integer => "integer",
            ValueType::Decimal => "decimal",
            ValueType::Boolean => "boolean",
            ValueType::String => "string",
            ValueType::Clock => "clock",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    /// `var.attr`: attribute of a bound event.
    Attr { var: String, attr: String },
    /// Context key, possibly templated (`fuel_{z.truck}`).
    Key(String),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// `needle in table(name, key)`.
    InTable {
        needle: Box<Expr>,
        table: String,
        key: Box<Expr>,
    },
    /// `clock_of(minutes)`: integer minutes to clock-of-day.
    ClockOf(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("attribute `{0}.{1}` is missing")]
    MissingAttr(String, String),
    #[error("context key `{0}` has never been written")]
    UnknownContextKey(String),
    #[error("context key `{0}` is not declared")]
    UndeclaredKey(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("placeholder `{0}` cannot be resolved")]
    UnresolvedPlaceholder(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("arithmetic overflow")]
    Overflow,
    #[error("division by zero")]
    DivisionByZero,
}

/// Name resolution for evaluation.
pub trait Scope {
    fn attr(&self, var: &str, attr: &str) -> Result<Value, EvalError>;
    fn key(&self, name: &str) -> Result<Value, EvalError>;
    fn in_table(&self, table: &str, key: &str, needle: &str) -> Result<bool, EvalError>;
}

impl Expr {
    pub fn eval(&self, scope: &dyn Scope) -> Result<Value, EvalError> {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Attr { var, attr } => scope.attr(var, attr),
            Expr::Key(name) => scope.key(name),
            Expr::Not(e) => match e.eval(scope)? {
                Value::Bool(b) => Ok(Value::Bool(!b)),
                other => Err(type_err("not", &other)),
            },
            Expr::Neg(e) => match e.eval(scope)? {
                Value::Int(v) => v.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
                Value::Dec(v) => Ok(Value::Dec(-v)),
                other => Err(type_err("-", &other)),
            },
            Expr::Bin(op, l, r) => {
                // both sides are always evaluated so errors never hide behind short-circuiting
                let l = l.eval(scope)?;
                let r = r.eval(scope)?;
                binary(*op, l, r)
            }
            Expr::InTable { needle, table, key } => {
                let needle = needle.eval(scope)?.key_string();
                let key = key.eval(scope)?.key_string();
                scope.in_table(table, &key, &needle).map(Value::Bool)
            }
            Expr::ClockOf(e) => match e.eval(scope)? {
                Value::Int(m) => Ok(Value::Clock(m.rem_euclid(24 * 60) as u32)),
                Value::Clock(m) => Ok(Value::Clock(m)),
                other => Err(type_err("clock_of", &other)),
            },
        }
    }

    /// Evaluate and require a boolean result.
    pub fn eval_bool(&self, scope: &dyn Scope) -> Result<bool, EvalError> {
        match self.eval(scope)? {
            Value::Bool(b) => Ok(b),
            other => Err(EvalError::Type(format!(
                "condition yields {} instead of boolean",
                other.value_type()
            ))),
        }
    }

    /// Top-level `and` operands, left to right.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::Bin(BinOp::And, l, r) => {
                let mut out = l.conjuncts();
                out.extend(r.conjuncts());
                out
            }
            other => vec![other],
        }
    }

    /// Every `var` referenced via `var.attr`.
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Attr { var, .. } = e {
                if !out.contains(var) {
                    out.push(var.clone());
                }
            }
        });
        out
    }

    /// Every context key referenced (raw, possibly templated).
    pub fn keys(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Key(k) = e {
                if !out.contains(k) {
                    out.push(k.clone());
                }
            }
        });
        out
    }

    pub fn tables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::InTable { table, .. } = e {
                if !out.contains(table) {
                    out.push(table.clone());
                }
            }
        });
        out
    }

    fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Not(e) | Expr::Neg(e) | Expr::ClockOf(e) => e.walk(f),
            Expr::Bin(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            Expr::InTable { needle, key, .. } => {
                needle.walk(f);
                key.walk(f);
            }
            Expr::Lit(_) | Expr::Attr { .. } | Expr::Key(_) => {}
        }
    }

    /// Substitute placeholders in templated context keys. The error names
    /// the first placeholder `lookup` could not resolve.
    pub fn resolve_keys(
        &self,
        lookup: &mut dyn FnMut(&str) -> Option<String>,
    ) -> Result<Expr, String> {
        Ok(match self {
            Expr::Key(k) => Expr::Key(render_template(k, &mut *lookup)?),
            Expr::Lit(_) | Expr::Attr { .. } => self.clone(),
            Expr::Not(e) => Expr::Not(Box::new(e.resolve_keys(lookup)?)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.resolve_keys(lookup)?)),
            Expr::ClockOf(e) => Expr::ClockOf(Box::new(e.resolve_keys(lookup)?)),
            Expr::Bin(op, l, r) => Expr::Bin(
                *op,
                Box::new(l.resolve_keys(lookup)?),
                Box::new(r.resolve_keys(lookup)?),
            ),
            Expr::InTable { needle, table, key } => Expr::InTable {
                needle: Box::new(needle.resolve_keys(lookup)?),
                table: table.clone(),
                key: Box::new(key.resolve_keys(lookup)?),
            },
        })
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, ..) => op.prec(),
            Expr::Not(_) => 3,
            Expr::InTable { .. } => 4,
            Expr::Neg(_) => 7,
            _ => 8,
        }
    }
}

fn type_err(op: &str, v: &Value) -> EvalError {
    EvalError::Type(format!("`{op}` not defined for {}", v.value_type()))
}

fn binary(op: BinOp, l: Value, r: Value) -> Result<Value, EvalError> {
    use Value::*;
    let mismatch = |l: &Value, r: &Value| {
        EvalError::Type(format!(
            "`{}` not defined for {} and {}",
            op.symbol(),
            l.value_type(),
            r.value_type()
        ))
    };
    match op {
        BinOp::And | BinOp::Or => match (&l, &r) {
            (Bool(a), Bool(b)) => Ok(Bool(if op == BinOp::And { *a && *b } else { *a || *b })),
            _ => Err(mismatch(&l, &r)),
        },
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = match (&l, &r) {
                (Int(a), Int(b)) => a.partial_cmp(b),
                (Str(a), Str(b)) => a.partial_cmp(b),
                (Clock(a), Clock(b)) => a.partial_cmp(b),
                (Bool(a), Bool(b)) if matches!(op, BinOp::Eq | BinOp::Ne) => a.partial_cmp(b),
                _ => match (l.as_f64(), r.as_f64()) {
                    (Some(a), Some(b)) => a.partial_cmp(&b),
                    _ => return Err(mismatch(&l, &r)),
                },
            };
            let Some(ord) = ord else {
                return Ok(Bool(op == BinOp::Ne));
            };
            use std::cmp::Ordering::*;
            Ok(Bool(match op {
                BinOp::Eq => ord == Equal,
                BinOp::Ne => ord != Equal,
                BinOp::Lt => ord == Less,
                BinOp::Le => ord != Greater,
                BinOp::Gt => ord == Greater,
                _ => ord != Less,
            }))
        }
        BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => match (&l, &r) {
            (Int(a), Int(b)) => match op {
                BinOp::Add => a.checked_add(*b).map(Int).ok_or(EvalError::Overflow),
                BinOp::Sub => a.checked_sub(*b).map(Int).ok_or(EvalError::Overflow),
                BinOp::Mul => a.checked_mul(*b).map(Int).ok_or(EvalError::Overflow),
                _ if *b == 0 => Err(EvalError::DivisionByZero),
                _ => Ok(Dec(*a as f64 / *b as f64)),
            },
            _ => match (l.as_f64(), r.as_f64()) {
                (Some(a), Some(b)) => match op {
                    BinOp::Add => Ok(Dec(a + b)),
                    BinOp::Sub => Ok(Dec(a - b)),
                    BinOp::Mul => Ok(Dec(a * b)),
                    _ if b == 0.0 => Err(EvalError::DivisionByZero),
                    _ => Ok(Dec(a / b)),
                },
                _ => Err(mismatch(&l, &r)),
            },
        },
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.prec() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Lit(Value::Str(s)) => write!(f, "{s:?}"),
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Attr { var, attr } => write!(f, "{var}.{attr}"),
            Expr::Key(k) => f.write_str(k),
            Expr::Not(e) => {
                f.write_str("not ")?;
                child(f, e, 3)
            }
            Expr::Neg(e) => {
                f.write_str("-")?;
                child(f, e, 8)
            }
            Expr::Bin(op, l, r) => {
                let p = op.prec();
                // comparisons are non-associative, arithmetic left-associative
                let lmin = if p == 4 { 5 } else { p };
                child(f, l, lmin)?;
                write!(f, " {} ", op.symbol())?;
                child(f, r, p + 1)
            }
            Expr::InTable { needle, table, key } => {
                child(f, needle, 5)?;
                write!(f, " in table({table}, {key})")
            }
            Expr::ClockOf(e) => write!(f, "clock_of({e})"),
        }
    }
}

/// Parse a complete expression from source text.
pub fn parse_expr_str(src: &str) -> Result<Expr, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    let e = parse_expr(&mut cur)?;
    if !cur.at_eof() {
        return Err(cur.unexpected("end of expression"));
    }
    Ok(e)
}

/// Parse an expression, stopping at the first token that cannot continue it.
pub fn parse_expr(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    parse_or(cur)
}

fn parse_or(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    let mut e = parse_and(cur)?;
    while cur.eat_kw("or") {
        let r = parse_and(cur)?;
        e = Expr::Bin(BinOp::Or, Box::new(e), Box::new(r));
    }
    Ok(e)
}

fn parse_and(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    let mut e = parse_not(cur)?;
    while cur.eat_kw("and") {
        let r = parse_not(cur)?;
        e = Expr::Bin(BinOp::And, Box::new(e), Box::new(r));
    }
    Ok(e)
}

fn parse_not(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    if cur.eat_kw("not") || cur.eat_sym("!") {
        return Ok(Expr::Not(Box::new(parse_not(cur)?)));
    }
    parse_cmp(cur)
}

fn parse_cmp(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    let l = parse_add(cur)?;
    let op = match cur.peek() {
        Tok::Sym("==") => BinOp::Eq,
        Tok::Sym("!=") => BinOp::Ne,
        Tok::Sym("<") => BinOp::Lt,
        Tok::Sym("<=") => BinOp::Le,
        Tok::Sym(">") => BinOp::Gt,
        Tok::Sym(">=") => BinOp::Ge,
        Tok::Ident(s) if s == "in" => {
            cur.advance();
            cur.expect_kw("table")?;
            cur.expect_sym("(")?;
            let table = cur.plain_ident()?;
            cur.expect_sym(",")?;
            let key = parse_expr(cur)?;
            cur.expect_sym(")")?;
            return Ok(Expr::InTable {
                needle: Box::new(l),
                table,
                key: Box::new(key),
            });
        }
        _ => return Ok(l),
    };
    cur.advance();
    let r = parse_add(cur)?;
    Ok(Expr::Bin(op, Box::new(l), Box::new(r)))
}

fn parse_add(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    let mut e = parse_mul(cur)?;
    loop {
        let op = match cur.peek() {
            Tok::Sym("+") => BinOp::Add,
            Tok::Sym("-") => BinOp::Sub,
            _ => return Ok(e),
        };
        cur.advance();
        let r = parse_mul(cur)?;
        e = Expr::Bin(op, Box::new(e), Box::new(r));
    }
}

fn parse_mul(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    let mut e = parse_unary(cur)?;
    loop {
        let op = match cur.peek() {
            Tok::Sym("*") => BinOp::Mul,
            Tok::Sym("/") => BinOp::Div,
            _ => return Ok(e),
        };
        cur.advance();
        let r = parse_unary(cur)?;
        e = Expr::Bin(op, Box::new(e), Box::new(r));
    }
}

fn parse_unary(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    if cur.eat_sym("-") {
        return Ok(match parse_unary(cur)? {
            Expr::Lit(Value::Int(v)) => Expr::Lit(Value::Int(-v)),
            Expr::Lit(Value::Dec(v)) => Expr::Lit(Value::Dec(-v)),
            e => Expr::Neg(Box::new(e)),
        });
    }
    parse_primary(cur)
}

const RESERVED: [&str; 5] = ["and", "or", "not", "in", "table"];

fn parse_primary(cur: &mut Cursor) -> Result<Expr, SyntaxError> {
    match cur.peek().clone() {
        Tok::Int(v) => {
            cur.advance();
            Ok(Expr::Lit(Value::Int(v)))
        }
        Tok::Dec(v) => {
            cur.advance();
            Ok(Expr::Lit(Value::Dec(v)))
        }
        Tok::Str(s) => {
            cur.advance();
            Ok(Expr::Lit(Value::Str(s)))
        }
        Tok::Clock(m) => {
            cur.advance();
            Ok(Expr::Lit(Value::Clock(m)))
        }
        Tok::Sym("(") => {
            cur.advance();
            let e = parse_expr(cur)?;
            cur.expect_sym(")")?;
            Ok(e)
        }
        Tok::Ident(name) => {
            if RESERVED.contains(&name.as_str()) {
                return Err(cur.unexpected("operand"));
            }
            cur.advance();
            match name.as_str() {
                "true" => return Ok(Expr::Lit(Value::Bool(true))),
                "false" => return Ok(Expr::Lit(Value::Bool(false))),
                "clock_of" => {
                    cur.expect_sym("(")?;
                    let e = parse_expr(cur)?;
                    cur.expect_sym(")")?;
                    return Ok(Expr::ClockOf(Box::new(e)));
                }
                _ => {}
            }
            if cur.eat_sym(".") {
                if name.contains('{') {
                    return Err(cur.error(format!("placeholder not allowed in variable `{name}`")));
                }
                let attr = cur.plain_ident()?;
                Ok(Expr::Attr { var: name, attr })
            } else {
                Ok(Expr::Key(name))
            }
        }
        _ => Err(cur.unexpected("operand")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct Env(HashMap<String, Value>);

    impl Scope for Env {
        fn attr(&self, var: &str, attr: &str) -> Result<Value, EvalError> {
            self.0
                .get(&format!("{var}.{attr}"))
                .cloned()
                .ok_or_else(|| EvalError::MissingAttr(var.into(), attr.into()))
        }
        fn key(&self, name: &str) -> Result<Value, EvalError> {
            self.0
                .get(name)
                .cloned()
                .ok_or_else(|| EvalError::UnknownContextKey(name.into()))
        }
        fn in_table(&self, _: &str, key: &str, needle: &str) -> Result<bool, EvalError> {
            Ok(key == "C3" && needle == "Z3")
        }
    }

    fn env(pairs: &[(&str, Value)]) -> Env {
        Env(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
    }

    fn eval(src: &str, e: &Env) -> Result<Value, EvalError> {
        parse_expr_str(src).unwrap().eval(e)
    }

    #[test]
    fn precedence() {
        let e = env(&[]);
        assert_eq!(eval("1 + 2 * 3 == 7", &e), Ok(Value::Bool(true)));
        assert_eq!(eval("not 1 > 2 and true", &e), Ok(Value::Bool(true)));
        assert_eq!(eval("true or false and false", &e), Ok(Value::Bool(true)));
        assert_eq!(eval("7 / 2", &e), Ok(Value::Dec(3.5)));
        assert_eq!(eval("-(2 - 5)", &e), Ok(Value::Int(3)));
    }

    #[test]
    fn context_conditions() {
        let e = env(&[
            ("fuel_T1", Value::Dec(20.0)),
            ("clock", Value::Clock(16 * 60)),
        ]);
        assert_eq!(eval("fuel_T1 >= 15.0", &e), Ok(Value::Bool(true)));
        assert_eq!(eval("fuel_T1 >= 15", &e), Ok(Value::Bool(true)));
        assert_eq!(eval("clock < 17:00", &e), Ok(Value::Bool(true)));
        assert_eq!(
            eval("delay_T1 <= 30", &e),
            Err(EvalError::UnknownContextKey("delay_T1".into()))
        );
        assert!(matches!(eval("clock < 5", &e), Err(EvalError::Type(_))));
    }

    #[test]
    fn no_short_circuit() {
        let e = env(&[]);
        assert!(eval("false and missing > 1", &e).is_err());
        assert!(eval("true or missing > 1", &e).is_err());
    }

    #[test]
    fn table_membership() {
        let e = env(&[("z.zone", Value::Str("Z3".into())), ("r.customer", Value::Str("C3".into()))]);
        assert_eq!(
            eval("z.zone in table(customer_zones, r.customer)", &e),
            Ok(Value::Bool(true))
        );
    }

    #[test]
    fn display_round_trips() {
        for src in [
            "fuel_{z.truck} >= 15.0 and clock < 17:00 and delay_{z.truck} <= 30",
            "not (a.k == 1 or b.k != \"x\")",
            "(1 + 2) * 3 - -4",
            "z.zone in table(t, r.customer) and a.level - b.level >= 0.15",
            "clock_of(event.minute_of_day) == 08:05",
        ] {
            let e = parse_expr_str(src).unwrap();
            let again = parse_expr_str(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src}");
        }
        let e = parse_expr_str("a and b and (c or d)").unwrap();
        let parts: Vec<String> = e.conjuncts().iter().map(|c| c.to_string()).collect();
        assert_eq!(parts, vec!["a", "b", "c or d"]);
    }

    #[test]
    fn key_templates_resolve() {
        let e = parse_expr_str("fuel_{z.truck} >= 15.0").unwrap();
        let r = e
            .resolve_keys(&mut |p| (p == "z.truck").then(|| "T1".to_string()))
            .unwrap();
        assert_eq!(r.to_string(), "fuel_T1 >= 15.0");
        assert_eq!(e.resolve_keys(&mut |_| None), Err("z.truck".to_string()));
    }

    #[test]
    fn value_serde_tags() {
        assert_eq!(serde_json::to_string(&Value::Dec(1.5)).unwrap(), r#"{"dec":1.5}"#);
        assert_eq!(serde_json::to_string(&Value::Clock(480)).unwrap(), r#"{"clock":480}"#);
        let v: Value = serde_json::from_str(r#"{"int":3}"#).unwrap();
        assert_eq!(v, Value::Int(3));
    }

    #[test]
    fn widening() {
        assert!(ValueType::Decimal.accepts(&Value::Int(3)));
        assert!(!ValueType::Integer.accepts(&Value::Dec(3.0)));
        assert_eq!(ValueType::Decimal.coerce(Value::Int(3)), Value::Dec(3.0));
    }
}
