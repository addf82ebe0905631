//! Canonical document serialization.
//!
//! Every signed or persisted structure in this toolkit is expressed as a
//! [`Value`] tree and serialized to a single deterministic byte form, so that
//! signatures and golden files are stable across platforms and releases.
//!
//! The encoding rules:
//!
//! - UTF-8 throughout, no insignificant whitespace
//! - map keys sorted lexicographically by code point
//! - integers in base 10 with no leading zeros
//! - strings escape only `"` and `\`
//! - byte payloads encoded as lowercase hex strings
//!
//! The textual shape is JSON-like (`{"a":"x","b":1}`) but deliberately
//! restricted: the only value kinds are maps with string keys, arrays,
//! strings, integers, booleans, and byte strings. Anything else is
//! unrepresentable by construction.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// A canonical document value.
///
/// `Bytes` serializes as a lowercase hex string; a parsed document therefore
/// reports such fields as `Str`, and typed readers decode them with
/// [`Value::as_bytes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Map(BTreeMap<String, Value>),
    Array(Vec<Value>),
    Str(String),
    Int(i64),
    Bool(bool),
    Bytes(Vec<u8>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocError {
    #[error("parse error at byte {0}: {1}")]
    Parse(usize, String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has wrong type: expected {expected}")]
    WrongType {
        field: String,
        expected: &'static str,
    },
    #[error("field `{0}` is not valid hex")]
    BadHex(String),
    #[error("field `{field}` out of range: {detail}")]
    OutOfRange { field: String, detail: String },
}

impl Value {
    pub fn map() -> MapBuilder {
        MapBuilder(BTreeMap::new())
    }

    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    /// Serialize to the canonical byte form.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out);
        out
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Value::Map(m) => {
                out.push(b'{');
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        out.push(b',');
                    }
                    write_string(k, out);
                    out.push(b':');
                    v.write(out);
                }
                out.push(b'}');
            }
            Value::Array(a) => {
                out.push(b'[');
                for (i, v) in a.iter().enumerate() {
                    if i > 0 {
                        out.push(b',');
                    }
                    v.write(out);
                }
                out.push(b']');
            }
            Value::Str(s) => write_string(s, out),
            Value::Int(n) => out.extend_from_slice(n.to_string().as_bytes()),
            Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
            Value::Bytes(b) => write_string(&hex::encode(b), out),
        }
    }

    /// Parse canonical bytes back into a value tree.
    ///
    /// The parser accepts exactly the output grammar of [`Value::to_bytes`];
    /// it never produces `Bytes` (hex fields come back as `Str`).
    pub fn parse(input: &[u8]) -> Result<Value, DocError> {
        let mut p = Parser { input, pos: 0 };
        let v = p.value()?;
        if p.pos != p.input.len() {
            return Err(DocError::Parse(
                p.pos,
                "trailing bytes after document".into(),
            ));
        }
        Ok(v)
    }

    // ---- typed accessors used by document readers ----

    pub fn as_map(&self) -> Result<&BTreeMap<String, Value>, DocError> {
        match self {
            Value::Map(m) => Ok(m),
            _ => Err(DocError::WrongType {
                field: "<root>".into(),
                expected: "map",
            }),
        }
    }

    pub fn as_array(&self) -> Result<&[Value], DocError> {
        match self {
            Value::Array(a) => Ok(a),
            _ => Err(DocError::WrongType {
                field: "<root>".into(),
                expected: "array",
            }),
        }
    }

    pub fn get<'a>(&'a self, field: &str) -> Result<&'a Value, DocError> {
        self.as_map()?
            .get(field)
            .ok_or_else(|| DocError::MissingField(field.to_string()))
    }

    pub fn get_opt<'a>(&'a self, field: &str) -> Option<&'a Value> {
        match self {
            Value::Map(m) => m.get(field),
            _ => None,
        }
    }

    pub fn get_str(&self, field: &str) -> Result<&str, DocError> {
        match self.get(field)? {
            Value::Str(s) => Ok(s),
            _ => Err(DocError::WrongType {
                field: field.into(),
                expected: "string",
            }),
        }
    }

    pub fn get_int(&self, field: &str) -> Result<i64, DocError> {
        match self.get(field)? {
            Value::Int(n) => Ok(*n),
            _ => Err(DocError::WrongType {
                field: field.into(),
                expected: "integer",
            }),
        }
    }

    pub fn get_u64(&self, field: &str) -> Result<u64, DocError> {
        let n = self.get_int(field)?;
        u64::try_from(n).map_err(|_| DocError::OutOfRange {
            field: field.into(),
            detail: format!("{n} is negative"),
        })
    }

    pub fn get_u32(&self, field: &str) -> Result<u32, DocError> {
        let n = self.get_int(field)?;
        u32::try_from(n).map_err(|_| DocError::OutOfRange {
            field: field.into(),
            detail: format!("{n} does not fit in u32"),
        })
    }

    pub fn get_bool(&self, field: &str) -> Result<bool, DocError> {
        match self.get(field)? {
            Value::Bool(b) => Ok(*b),
            _ => Err(DocError::WrongType {
                field: field.into(),
                expected: "boolean",
            }),
        }
    }

    pub fn get_array(&self, field: &str) -> Result<&[Value], DocError> {
        match self.get(field)? {
            Value::Array(a) => Ok(a),
            _ => Err(DocError::WrongType {
                field: field.into(),
                expected: "array",
            }),
        }
    }

    pub fn get_map(&self, field: &str) -> Result<&Value, DocError> {
        let v = self.get(field)?;
        match v {
            Value::Map(_) => Ok(v),
            _ => Err(DocError::WrongType {
                field: field.into(),
                expected: "map",
            }),
        }
    }

    /// Read a hex-encoded byte field (accepts `Bytes` for unserialized trees).
    pub fn get_bytes(&self, field: &str) -> Result<Vec<u8>, DocError> {
        match self.get(field)? {
            Value::Bytes(b) => Ok(b.clone()),
            Value::Str(s) => hex::decode(s).map_err(|_| DocError::BadHex(field.into())),
            _ => Err(DocError::WrongType {
                field: field.into(),
                expected: "hex string",
            }),
        }
    }

    pub fn str_value(&self) -> Result<&str, DocError> {
        match self {
            Value::Str(s) => Ok(s),
            _ => Err(DocError::WrongType {
                field: "<element>".into(),
                expected: "string",
            }),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.to_bytes()))
    }
}

/// Fluent builder for map documents.
pub struct MapBuilder(BTreeMap<String, Value>);

impl MapBuilder {
    pub fn field(mut self, key: impl Into<String>, value: Value) -> Self {
        self.0.insert(key.into(), value);
        self
    }

    pub fn field_str(self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.field(key, Value::Str(value.into()))
    }

    pub fn field_int(self, key: impl Into<String>, value: i64) -> Self {
        self.field(key, Value::Int(value))
    }

    pub fn field_u64(self, key: impl Into<String>, value: u64) -> Self {
        // persisted integers stay within i64; callers never reach this bound
        self.field(
            key,
            Value::Int(i64::try_from(value).expect("u64 field exceeds i64 range")),
        )
    }

    pub fn field_bool(self, key: impl Into<String>, value: bool) -> Self {
        self.field(key, Value::Bool(value))
    }

    pub fn field_bytes(self, key: impl Into<String>, value: impl AsRef<[u8]>) -> Self {
        self.field(key, Value::Bytes(value.as_ref().to_vec()))
    }

    pub fn field_opt(self, key: impl Into<String>, value: Option<Value>) -> Self {
        match value {
            Some(v) => self.field(key, v),
            None => self,
        }
    }

    pub fn build(self) -> Value {
        Value::Map(self.0)
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for &b in s.as_bytes() {
        match b {
            b'"' => out.extend_from_slice(b"\\\""),
            b'\\' => out.extend_from_slice(b"\\\\"),
            _ => out.push(b),
        }
    }
    out.push(b'"');
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> DocError {
        DocError::Parse(self.pos, msg.into())
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn bump(&mut self) -> Result<u8, DocError> {
        let b = self
            .peek()
            .ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(b)
    }

    fn expect(&mut self, b: u8) -> Result<(), DocError> {
        let got = self.bump()?;
        if got != b {
            self.pos -= 1;
            return Err(self.err(format!("expected `{}`, found `{}`", b as char, got as char)));
        }
        Ok(())
    }

    fn value(&mut self) -> Result<Value, DocError> {
        match self
            .peek()
            .ok_or_else(|| self.err("unexpected end of input"))?
        {
            b'{' => self.map(),
            b'[' => self.array(),
            b'"' => Ok(Value::Str(self.string()?)),
            b't' | b'f' => self.boolean(),
            b'-' | b'0'..=b'9' => self.integer(),
            other => Err(self.err(format!("unexpected byte `{}`", other as char))),
        }
    }

    fn map(&mut self) -> Result<Value, DocError> {
        self.expect(b'{')?;
        let mut m = BTreeMap::new();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Value::Map(m));
        }
        let mut prev_key: Option<String> = None;
        loop {
            let key = self.string()?;
            if let Some(prev) = &prev_key {
                if key.as_str() <= prev.as_str() {
                    return Err(self.err(format!(
                        "map keys not strictly sorted: `{key}` after `{prev}`"
                    )));
                }
            }
            self.expect(b':')?;
            let v = self.value()?;
            prev_key = Some(key.clone());
            m.insert(key, v);
            match self.bump()? {
                b',' => continue,
                b'}' => break,
                _ => {
                    self.pos -= 1;
                    return Err(self.err("expected `,` or `}` in map"));
                }
            }
        }
        Ok(Value::Map(m))
    }

    fn array(&mut self) -> Result<Value, DocError> {
        self.expect(b'[')?;
        let mut a = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::Array(a));
        }
        loop {
            a.push(self.value()?);
            match self.bump()? {
                b',' => continue,
                b']' => break,
                _ => {
                    self.pos -= 1;
                    return Err(self.err("expected `,` or `]` in array"));
                }
            }
        }
        Ok(Value::Array(a))
    }

    fn string(&mut self) -> Result<String, DocError> {
        self.expect(b'"')?;
        let mut bytes = Vec::new();
        loop {
            match self.bump()? {
                b'"' => break,
                b'\\' => match self.bump()? {
                    b'"' => bytes.push(b'"'),
                    b'\\' => bytes.push(b'\\'),
                    other => {
                        self.pos -= 1;
                        return Err(self.err(format!("invalid escape `\\{}`", other as char)));
                    }
                },
                other => bytes.push(other),
            }
        }
        String::from_utf8(bytes).map_err(|_| self.err("string is not valid UTF-8"))
    }

    fn boolean(&mut self) -> Result<Value, DocError> {
        if self.input[self.pos..].starts_with(b"true") {
            self.pos += 4;
            Ok(Value::Bool(true))
        } else if self.input[self.pos..].starts_with(b"false") {
            self.pos += 5;
            Ok(Value::Bool(false))
        } else {
            Err(self.err("expected `true` or `false`"))
        }
    }

    fn integer(&mut self) -> Result<Value, DocError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.err("expected digits"));
        }
        let digits = &self.input[digits_start..self.pos];
        if digits.len() > 1 && digits[0] == b'0' {
            return Err(self.err("leading zeros are not canonical"));
        }
        let text = std::str::from_utf8(&self.input[start..self.pos]).unwrap();
        let n: i64 = text
            .parse()
            .map_err(|_| DocError::Parse(start, format!("integer `{text}` out of range")))?;
        if text == "-0" {
            return Err(DocError::Parse(
                start,
                "negative zero is not canonical".into(),
            ));
        }
        Ok(Value::Int(n))
    }
}
