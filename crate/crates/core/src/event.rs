//! Canonical event model and its line-oriented wire encoding.
//!
//! Every record on the bus is an [`Event`]: simple events come from adapters
//! and sensors (`t_start == t_end`, no parents), complex events are derived
//! from constituents and list them in `parents`.
//!
//! The wire format is one JSON object per line. The canonical encoder writes
//! fields in a fixed order (`id, etype, topic, t_start, t_end, source,
//! parents, attrs`) with attribute keys sorted, so `encode` is a pure
//! function of the event value. The decoder accepts any field order.

use std::collections::BTreeMap;
use std::fmt;

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};
use thiserror::Error;

/// Logical time in milliseconds.
pub type Millis = i64;

/// Attribute value carried by an event. Attributes are flat: no nesting.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Str(String),
    Int(i64),
    Dec(f64),
    Bool(bool),
}

impl Scalar {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(v) => Some(*v as f64),
            Scalar::Dec(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Scalar::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Canonical single-token rendering, used for partition keys and table joins.
    pub fn key_string(&self) -> String {
        match self {
            Scalar::Str(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Str(s) => f.write_str(s),
            Scalar::Int(v) => write!(f, "{v}"),
            // Debug keeps the trailing ".0" so decimals stay distinguishable.
            Scalar::Dec(v) => write!(f, "{v:?}"),
            Scalar::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Dec(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Str(v) => s.serialize_str(v),
            Scalar::Int(v) => s.serialize_i64(*v),
            Scalar::Dec(v) => s.serialize_f64(*v),
            Scalar::Bool(v) => s.serialize_bool(*v),
        }
    }
}

/// A timestamped, typed, attributed record.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: String,
    pub etype: String,
    pub topic: String,
    pub t_start: Millis,
    pub t_end: Millis,
    pub source: String,
    /// Constituent event ids; empty for simple events.
    pub parents: Vec<String>,
    pub attrs: BTreeMap<String, Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidEvent {
    #[error("event id is empty")]
    EmptyId,
    #[error("event type is empty")]
    EmptyType,
    #[error("invalid topic {0:?}")]
    BadTopic(String),
    #[error("t_start {t_start} is after t_end {t_end}")]
    InvertedInterval { t_start: Millis, t_end: Millis },
    #[error("simple event must have t_start == t_end")]
    SimpleWithSpan,
    #[error("attribute {0:?} is not a finite decimal")]
    NonFinite(String),
    #[error("duplicate event id {0:?}")]
    DuplicateId(String),
}

impl Event {
    /// A simple (instantaneous, parentless) event.
    pub fn simple(
        id: impl Into<String>,
        etype: impl Into<String>,
        topic: impl Into<String>,
        t: Millis,
        source: impl Into<String>,
    ) -> Self {
        Event {
            id: id.into(),
            etype: etype.into(),
            topic: topic.into(),
            t_start: t,
            t_end: t,
            source: source.into(),
            parents: Vec::new(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn with_parents(mut self, parents: Vec<String>) -> Self {
        self.parents = parents;
        self
    }

    pub fn attr(&self, key: &str) -> Option<&Scalar> {
        self.attrs.get(key)
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Scalar::as_str)
    }

    pub fn is_simple(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn validate(&self) -> Result<(), InvalidEvent> {
        if self.id.is_empty() {
            return Err(InvalidEvent::EmptyId);
        }
        if self.etype.is_empty() {
            return Err(InvalidEvent::EmptyType);
        }
        if !is_valid_topic(&self.topic) {
            return Err(InvalidEvent::BadTopic(self.topic.clone()));
        }
        if self.t_start > self.t_end {
            return Err(InvalidEvent::InvertedInterval {
                t_start: self.t_start,
                t_end: self.t_end,
            });
        }
        if self.parents.is_empty() && self.t_start != self.t_end {
            return Err(InvalidEvent::SimpleWithSpan);
        }
        for (k, v) in &self.attrs {
            if let Scalar::Dec(d) = v {
                if !d.is_finite() {
                    return Err(InvalidEvent::NonFinite(k.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Concrete topics are non-empty dot-separated segments without wildcards.
pub fn is_valid_topic(topic: &str) -> bool {
    !topic.is_empty()
        && topic
            .split('.')
            .all(|seg| !seg.is_empty() && !seg.contains('*') && !seg.chars().any(char::is_whitespace))
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        struct Attrs<'a>(&'a BTreeMap<String, Scalar>);
        impl Serialize for Attrs<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                let mut map = s.serialize_map(Some(self.0.len()))?;
                for (k, v) in self.0 {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }

        let mut st = s.serialize_struct("Event", 8)?;
        st.serialize_field("id", &self.id)?;
        st.serialize_field("etype", &self.etype)?;
        st.serialize_field("topic", &self.topic)?;
        st.serialize_field("t_start", &self.t_start)?;
        st.serialize_field("t_end", &self.t_end)?;
        st.serialize_field("source", &self.source)?;
        st.serialize_field("parents", &self.parents)?;
        st.serialize_field("attrs", &Attrs(&self.attrs))?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("field {0:?} has the wrong type")]
    BadType(String),
    #[error("malformed event line: {0}")]
    BadStructure(String),
}

/// Canonical encoding of one event, without the trailing newline.
pub fn encode(event: &Event) -> String {
    serde_json::to_string(event).expect("event serialization is infallible")
}

const FIELDS: [&str; 8] = [
    "id", "etype", "topic", "t_start", "t_end", "source", "parents", "attrs",
];

/// Decode one line of the wire format. Field order is not significant.
pub fn decode(line: &str) -> Result<Event, DecodeError> {
    let value: serde_json::Value = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
        .map_err(|e| DecodeError::BadStructure(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DecodeError::BadStructure("expected a JSON object".into()))?;
    if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(DecodeError::BadStructure(format!("unknown field {extra:?}")));
    }

    let field = |name: &'static str| obj.get(name).ok_or(DecodeError::MissingField(name));
    let string = |name: &'static str| -> Result<String, DecodeError> {
        field(name)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| DecodeError::BadType(name.to_string()))
    };
    let int = |name: &'static str| -> Result<i64, DecodeError> {
        field(name)?
            .as_i64()
            .ok_or_else(|| DecodeError::BadType(name.to_string()))
    };

    let id = string("id")?;
    let etype = string("etype")?;
    let topic = string("topic")?;
    let t_start = int("t_start")?;
    let t_end = int("t_end")?;
    let source = string("source")?;

    let parents = field("parents")?
        .as_array()
        .ok_or_else(|| DecodeError::BadType("parents".into()))?
        .iter()
        .map(|p| {
            p.as_str()
                .map(str::to_string)
                .ok_or_else(|| DecodeError::BadType("parents".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut attrs = BTreeMap::new();
    let raw_attrs = field("attrs")?
        .as_object()
        .ok_or_else(|| DecodeError::BadType("attrs".into()))?;
    for (k, v) in raw_attrs {
        let scalar = match v {
            serde_json::Value::String(s) => Scalar::Str(s.clone()),
            serde_json::Value::Bool(b) => Scalar::Bool(*b),
            serde_json::Value::Number(n) if n.is_i64() => Scalar::Int(n.as_i64().unwrap_or_default()),
            serde_json::Value::Number(n) if n.is_f64() => Scalar::Dec(n.as_f64().unwrap_or_default()),
            _ => return Err(DecodeError::BadType(format!("attrs.{k}"))),
        };
        attrs.insert(k.clone(), scalar);
    }

    let event = Event {
        id,
        etype,
        topic,
        t_start,
        t_end,
        source,
        parents,
        attrs,
    };
    event
        .validate()
        .map_err(|e| DecodeError::BadStructure(e.to_string()))?;
    Ok(event)
}

/// Decode a whole newline-delimited log, skipping blank lines.
pub fn decode_log(text: &str) -> Result<Vec<Event>, (usize, DecodeError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| decode(l).map_err(|e| (i + 1, e)))
        .collect()
}

/// Encode a sequence of events as a newline-terminated log.
pub fn encode_log<'a>(events: impl IntoIterator<Item = &'a Event>) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&encode(e));
        out.push('\n');
    }
    out
}
