use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use super::{EngineError, RunContext};
use crate::manifest::TaskInstance;
use crate::paths;

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_file(path: &Path) -> io::Result<Self> {
        let mut file = File::open(path)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = file.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(Digest(hasher.finalize().into()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

/// Content digests deciding whether an instance is up to date.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub script: Option<Digest>,
    pub inputs: BTreeMap<String, Digest>,
    pub params: Digest,
    pub command: Digest,
}

/// The task's script: the first whitespace-separated token of `command` that
/// names an existing regular file inside `root`. Returned root-relative.
pub fn script_path(command: &str, root: &Path) -> Option<String> {
    let root_abs = paths::absolute(root);
    command.split_whitespace().find_map(|raw| {
        let token = raw.trim_matches(|c| c == '"' || c == '\'');
        if token.is_empty() || token.starts_with('-') || token.contains('{') {
            return None;
        }
        let candidate = paths::absolute(&paths::resolve(&root_abs, token));
        let rel = candidate.strip_prefix(&root_abs).ok()?;
        if rel.as_os_str().is_empty() || !candidate.is_file() {
            return None;
        }
        Some(paths::to_slash(rel))
    })
}

pub(crate) fn param_digest(instance: &TaskInstance, ctx: &RunContext) -> Digest {
    Digest::of_bytes(ctx.params.canonical_subset(&instance.param_refs).as_bytes())
}

pub(crate) fn script_digest(instance: &TaskInstance, ctx: &RunContext) -> io::Result<Option<Digest>> {
    script_path(&instance.command, ctx.root)
        .map(|p| Digest::of_file(&paths::resolve(ctx.root, &p)))
        .transpose()
}

/// Fingerprints an instance. Every dep must be readable.
pub fn fingerprint(instance: &TaskInstance, ctx: &RunContext) -> Result<Fingerprint, EngineError> {
    let io_err = |path: &str, source| EngineError::Io {
        path: path.into(),
        source,
    };
    let mut inputs = BTreeMap::new();
    for dep in &instance.deps {
        let d = Digest::of_file(&paths::resolve(ctx.root, dep)).map_err(|e| io_err(dep, e))?;
        inputs.insert(dep.clone(), d);
    }
    Ok(Fingerprint {
        script: script_digest(instance, ctx).map_err(|e| io_err(&instance.command, e))?,
        inputs,
        params: param_digest(instance, ctx),
        command: Digest::of_bytes(instance.command.as_bytes()),
    })
}
