//! Comment lines written at the top of every output file.
//!
//! The first line is `retsync <version> config_digest=<hex> seed=<n>`; any
//! further lines are `key=value` pairs.

use crate::error::{invalid, Result};

pub const TOOL: &str = "retsync";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(config_digest: &str, seed: u64) -> Self {
        Self {
            version: VERSION.to_string(),
            config_digest: config_digest.to_string(),
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn lines(&self) -> Vec<String> {
        let mut v = vec![format!(
            "{TOOL} {} config_digest={} seed={}",
            self.version, self.config_digest, self.seed
        )];
        v.extend(self.extra.iter().map(|(k, val)| format!("{k}={val}")));
        v
    }

    /// Reads back the lines produced by [`Provenance::lines`]. Unrelated
    /// comment lines after the first are ignored.
    pub fn parse(comments: &[String]) -> Result<Self> {
        let first = comments
            .first()
            .ok_or_else(|| invalid("missing provenance comment"))?;
        let bad = || invalid(format!("malformed provenance line '{first}'"));
        let mut parts = first.split_whitespace();
        if parts.next() != Some(TOOL) {
            return Err(bad());
        }
        let version = parts.next().ok_or_else(bad)?.to_string();
        let config_digest = parts
            .next()
            .and_then(|p| p.strip_prefix("config_digest="))
            .ok_or_else(bad)?
            .to_string();
        let seed = parts
            .next()
            .and_then(|p| p.strip_prefix("seed="))
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad)?;
        let extra = comments[1..]
            .iter()
            .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect();
        Ok(Self {
            version,
            config_digest,
            seed,
            extra,
        })
    }
}
