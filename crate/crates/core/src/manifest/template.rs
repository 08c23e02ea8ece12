//! Filename patterns with `{placeholder}` fields.
//!
//! Grammar, applied to every pattern and task command:
//!
//! * `{name}` substitutes the binding for `name`;
//! * `{name:0N}` substitutes it left-padded with zeros to at least `N` characters;
//! * `{param:NAME}` substitutes the value of parameter `NAME`;
//! * `{{` and `}}` are literal braces.
//!
//! Names are tokens (`[A-Za-z0-9_-]+`). Nothing else is accepted inside braces.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("invalid pattern `{pattern}`: {reason}")]
    Syntax { pattern: String, reason: String },
    #[error("unknown template alias `{0}`")]
    UnknownAlias(String),
    #[error("no binding for placeholder `{name}` in `{pattern}`")]
    MissingBinding { pattern: String, name: String },
}

/// What a field refers to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldKey {
    /// `{name}` or `{name:0N}`.
    Name(String),
    /// `{param:NAME}`.
    Param(String),
}

impl FieldKey {
    /// Key used in binding maps: `name` or `param:NAME`.
    pub fn binding_key(&self) -> String {
        match self {
            FieldKey::Name(n) => n.clone(),
            FieldKey::Param(p) => format!("param:{p}"),
        }
    }
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKey::Name(n) => f.write_str(n),
            FieldKey::Param(p) => write!(f, "param:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub key: FieldKey,
    pub width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Field(Field),
}

/// A parsed pattern. Keeps its source text for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    source: String,
    segments: Vec<Segment>,
}

pub(crate) fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl Pattern {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let err = |reason: &str| TemplateError::Syntax {
            pattern: source.to_string(),
            reason: reason.to_string(),
        };
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    literal.push('}');
                }
                '}' => return Err(err(&format!("unmatched `}}` at offset {pos}"))),
                '{' => {
                    let rest = &source[pos + 1..];
                    let close = rest
                        .find('}')
                        .ok_or_else(|| err(&format!("unclosed `{{` at offset {pos}")))?;
                    let body = &rest[..close];
                    if body.contains('{') {
                        return Err(err("nested `{` inside placeholder"));
                    }
                    let field = parse_field(body).map_err(|r| err(&r))?;
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Field(field));
                    // skip the body and the closing brace
                    for _ in 0..body.chars().count() + 1 {
                        chars.next();
                    }
                }
                _ => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Pattern {
            source: source.to_string(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn fields(&self) -> impl Iterator<Item = &Field> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Field(f) => Some(f),
            Segment::Literal(_) => None,
        })
    }

    /// Distinct field keys in order of first appearance.
    pub fn keys(&self) -> Vec<FieldKey> {
        let mut out: Vec<FieldKey> = Vec::new();
        for f in self.fields() {
            if !out.contains(&f.key) {
                out.push(f.key.clone());
            }
        }
        out
    }

    pub fn uses_name(&self, name: &str) -> bool {
        self.fields()
            .any(|f| matches!(&f.key, FieldKey::Name(n) if n == name))
    }

    pub fn is_constant(&self) -> bool {
        self.fields().next().is_none()
    }

    /// Substitutes every field using `lookup`. The first unresolved key is reported.
    pub fn expand_with<'a, F>(&self, mut lookup: F) -> Result<String, TemplateError>
    where
        F: FnMut(&FieldKey) -> Option<&'a str>,
    {
        let mut out = String::with_capacity(self.source.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Field(f) => {
                    let value = lookup(&f.key).ok_or_else(|| TemplateError::MissingBinding {
                        pattern: self.source.clone(),
                        name: f.key.binding_key(),
                    })?;
                    push_padded(&mut out, value, f.width);
                }
            }
        }
        Ok(out)
    }

    /// Substitutes fields from a binding map keyed by [`FieldKey::binding_key`].
    /// Bindings the pattern does not use are ignored.
    pub fn expand(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        self.expand_with(|k| bindings.get(&k.binding_key()).map(String::as_str))
    }

    /// Cartesian product over per-key value lists. Keys vary in order of first
    /// appearance, the leftmost outermost.
    pub fn enumerate(
        &self,
        lists: &BTreeMap<String, Vec<String>>,
    ) -> Result<Vec<String>, TemplateError> {
        let keys = self.keys();
        let mut axes: Vec<&[String]> = Vec::with_capacity(keys.len());
        for key in &keys {
            let list = lists
                .get(&key.binding_key())
                .ok_or_else(|| TemplateError::MissingBinding {
                    pattern: self.source.clone(),
                    name: key.binding_key(),
                })?;
            axes.push(list.as_slice());
        }
        if axes.iter().any(|a| a.is_empty()) {
            return Ok(Vec::new());
        }
        let total: usize = axes.iter().map(|a| a.len()).product();
        let mut out = Vec::with_capacity(total);
        let mut cursor = vec![0usize; axes.len()];
        loop {
            out.push(self.expand_with(|k| {
                let i = keys.iter().position(|x| x == k)?;
                Some(axes[i][cursor[i]].as_str())
            })?);
            // odometer increment, rightmost fastest
            let mut i = axes.len();
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                cursor[i] += 1;
                if cursor[i] < axes[i].len() {
                    break;
                }
                cursor[i] = 0;
            }
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn parse_field(body: &str) -> Result<Field, String> {
    let (name, spec) = match body.split_once(':') {
        Some((n, s)) => (n, Some(s)),
        None => (body, None),
    };
    if !is_token(name) {
        return Err(format!("placeholder name `{name}` is not a token"));
    }
    match spec {
        None => Ok(Field {
            key: FieldKey::Name(name.to_string()),
            width: None,
        }),
        Some(s) if s.len() >= 2 && s.starts_with('0') && s.bytes().all(|b| b.is_ascii_digit()) => {
            let width = s[1..]
                .parse()
                .map_err(|_| format!("bad padding width `{s}`"))?;
            Ok(Field {
                key: FieldKey::Name(name.to_string()),
                width: Some(width),
            })
        }
        Some(s) if name == "param" && is_token(s) => Ok(Field {
            key: FieldKey::Param(s.to_string()),
            width: None,
        }),
        Some(s) => Err(format!(
            "unsupported format `{s}` (only zero padding `:0N` is allowed)"
        )),
    }
}

fn push_padded(out: &mut String, value: &str, width: Option<usize>) {
    if let Some(w) = width {
        for _ in value.chars().count()..w {
            out.push('0');
        }
    }
    out.push_str(value);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn lists(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn expands_recording() {
        let p = Pattern::parse("sub{recording}_raw").unwrap();
        assert_eq!(p.expand(&bind(&[("recording", "01")])).unwrap(), "sub01_raw");
    }

    #[test]
    fn zero_padding() {
        let p = Pattern::parse("out/{recording:03}/x").unwrap();
        assert_eq!(p.expand(&bind(&[("recording", "7")])).unwrap(), "out/007/x");
        // wider values are left alone
        assert_eq!(p.expand(&bind(&[("recording", "1234")])).unwrap(), "out/1234/x");
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let p = Pattern::parse("a/{x}/{y}").unwrap();
        let err = p.expand(&bind(&[("x", "p")])).unwrap_err();
        assert_eq!(
            err,
            TemplateError::MissingBinding {
                pattern: "a/{x}/{y}".into(),
                name: "y".into()
            }
        );
    }

    #[test]
    fn extra_bindings_ignored() {
        let p = Pattern::parse("{a}").unwrap();
        assert_eq!(p.expand(&bind(&[("a", "1"), ("b", "2")])).unwrap(), "1");
    }

    #[test]
    fn escapes_and_param_fields() {
        let p = Pattern::parse("awk '{{print}}' --hp {param:bandpass_low}").unwrap();
        assert_eq!(p.keys(), vec![FieldKey::Param("bandpass_low".into())]);
        let out = p.expand(&bind(&[("param:bandpass_low", "0.1")])).unwrap();
        assert_eq!(out, "awk '{print}' --hp 0.1");
    }

    #[test]
    fn syntax_errors() {
        for bad in ["a{b", "a}b", "{}", "{a b}", "{x:5}", "{x:.2f}", "{{a}", "{a{b}}"] {
            assert!(
                matches!(Pattern::parse(bad), Err(TemplateError::Syntax { .. })),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn enumerate_product_order() {
        let p = Pattern::parse("{a}-{b}").unwrap();
        let out = p
            .enumerate(&lists(&[("a", &["x", "y"]), ("b", &["1", "2"])]))
            .unwrap();
        assert_eq!(out, vec!["x-1", "x-2", "y-1", "y-2"]);
    }

    #[test]
    fn enumerate_recordings() {
        let p = Pattern::parse("sub{recording}_raw").unwrap();
        let out = p.enumerate(&lists(&[("recording", &["01", "02"])])).unwrap();
        assert_eq!(out, vec!["sub01_raw", "sub02_raw"]);
    }

    #[test]
    fn enumerate_empty_list_is_empty() {
        let p = Pattern::parse("{a}-{b}").unwrap();
        let out = p.enumerate(&lists(&[("a", &["x"]), ("b", &[])])).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn repeated_placeholder_shares_value() {
        let p = Pattern::parse("{a}/{a}_{b}").unwrap();
        let out = p
            .enumerate(&lists(&[("a", &["x", "y"]), ("b", &["1"])]))
            .unwrap();
        assert_eq!(out, vec!["x/x_1", "y/y_1"]);
    }

    #[test]
    fn constant_pattern_enumerates_once() {
        let p = Pattern::parse("fixed.txt").unwrap();
        assert!(p.is_constant());
        assert_eq!(p.enumerate(&BTreeMap::new()).unwrap(), vec!["fixed.txt"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn piece() -> impl Strategy<Value = String> {
            prop_oneof![
                "[a-z/_.]{0,4}".prop_map(|s| s),
                "[a-c]".prop_map(|n| format!("{{{n}}}")),
            ]
        }

        proptest! {
            #[test]
            fn expansion_leaves_no_brace(pieces in proptest::collection::vec(piece(), 0..6),
                                         values in proptest::collection::vec("[a-z0-9]{1,3}", 3)) {
                let src: String = pieces.concat();
                let p = Pattern::parse(&src).unwrap();
                let b = bind(&[("a", &values[0]), ("b", &values[1]), ("c", &values[2])]);
                let out = p.expand(&b).unwrap();
                prop_assert!(!out.contains('{'), "brace left in {}", out);
            }

            #[test]
            fn enumerate_len_is_product(na in 0usize..4, nb in 0usize..4, nc in 0usize..3) {
                let p = Pattern::parse("{a}/{b}.{c}").unwrap();
                let mk = |n: usize, tag: &str| (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>();
                let mut l = BTreeMap::new();
                l.insert("a".to_string(), mk(na, "a"));
                l.insert("b".to_string(), mk(nb, "b"));
                l.insert("c".to_string(), mk(nc, "c"));
                prop_assert_eq!(p.enumerate(&l).unwrap().len(), na * nb * nc);
            }
        }
    }
}
