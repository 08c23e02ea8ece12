use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// A parameter value as written in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
    List(Vec<ParamValue>),
}

impl ParamValue {
    pub(crate) fn from_toml(value: &toml::Value) -> Result<Self, String> {
        Ok(match value {
            toml::Value::Boolean(b) => ParamValue::Bool(*b),
            toml::Value::Integer(i) => ParamValue::Int(*i),
            toml::Value::Float(f) => ParamValue::Real(*f),
            toml::Value::String(s) => ParamValue::Str(s.clone()),
            toml::Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    let v = ParamValue::from_toml(item)?;
                    if matches!(v, ParamValue::List(_)) {
                        return Err("nested lists are not supported".into());
                    }
                    if let Some(first) = out.first() {
                        if std::mem::discriminant(first) != std::mem::discriminant(&v) {
                            return Err("list elements must share one type".into());
                        }
                    }
                    out.push(v);
                }
                ParamValue::List(out)
            }
            toml::Value::Datetime(_) => return Err("datetime values are not supported".into()),
            toml::Value::Table(_) => return Err("table values are not supported".into()),
        })
    }

    /// Text substituted into commands and paths. Lists join with single spaces.
    pub fn to_text(&self) -> String {
        match self {
            ParamValue::List(items) => items
                .iter()
                .map(ParamValue::to_text)
                .collect::<Vec<_>>()
                .join(" "),
            other => other.to_string(),
        }
    }

    /// Values a `{name}` path placeholder ranges over.
    pub fn to_text_list(&self) -> Vec<String> {
        match self {
            ParamValue::List(items) => items.iter().map(ParamValue::to_text).collect(),
            other => vec![other.to_string()],
        }
    }

    /// Fixed textual encoding used for fingerprints. Type-tagged so that `1`,
    /// `1.0` and `"1"` never collide.
    pub fn canonical(&self) -> String {
        match self {
            ParamValue::Bool(b) => format!("b:{b}"),
            ParamValue::Int(i) => format!("i:{i}"),
            ParamValue::Real(r) => format!("r:{}", format_real(*r)),
            ParamValue::Str(s) => format!("s:{}", serde_json::Value::String(s.clone())),
            ParamValue::List(items) => {
                let inner: Vec<String> = items.iter().map(ParamValue::canonical).collect();
                format!("l:[{}]", inner.join(","))
            }
        }
    }
}

fn format_real(r: f64) -> String {
    let s = r.to_string();
    if r.is_finite() && !s.contains(['.', 'e', 'E']) {
        format!("{s}.0")
    } else {
        s
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(r) => f.write_str(&format_real(*r)),
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::List(_) => f.write_str(&self.to_text()),
        }
    }
}

/// Name → value map. Ordered by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParameterSet {
    entries: BTreeMap<String, ParamValue>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ParamValue) -> Option<ParamValue> {
        self.entries.insert(name.into(), value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Key-wise shadowing: entries of `overlay` replace entries of `self`.
    pub fn overlaid(&self, overlay: &ParameterSet) -> ParameterSet {
        let mut entries = self.entries.clone();
        for (k, v) in &overlay.entries {
            entries.insert(k.clone(), v.clone());
        }
        ParameterSet { entries }
    }

    /// Canonical serialization of the named parameters: one `name=value` line
    /// per name, names sorted. Unknown names encode as `name=?`.
    pub fn canonical_subset<'a, I>(&self, names: I) -> String
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut names: Vec<&String> = names.into_iter().collect();
        names.sort();
        names.dedup();
        let mut out = String::new();
        for name in names {
            out.push_str(name);
            out.push('=');
            match self.entries.get(name) {
                Some(v) => out.push_str(&v.canonical()),
                None => out.push('?'),
            }
            out.push('\n');
        }
        out
    }
}

impl FromIterator<(String, ParamValue)> for ParameterSet {
    fn from_iter<T: IntoIterator<Item = (String, ParamValue)>>(iter: T) -> Self {
        ParameterSet {
            entries: iter.into_iter().collect(),
        }
    }
}
