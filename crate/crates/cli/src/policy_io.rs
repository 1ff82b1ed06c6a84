//! JSON form of policies. Thresholds are numbers or the string `"inf"`.

use std::path::Path;

use aoii_core::optimizer::Policy;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(pub f64);

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Threshold;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Threshold, E> {
                Ok(Threshold(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Threshold, E> {
                match v {
                    "inf" | "Infinity" | "infinity" => Ok(Threshold(f64::INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    /// Full `N x N` matrix; row `j` holds the thresholds of cycle `j`, the
    /// diagonal is ignored.
    Esat(Vec<Vec<Threshold>>),
    Eat(Vec<Threshold>),
    St(Threshold),
    /// Poisson sampling intensity.
    Ps(f64),
}

impl PolicySpec {
    pub fn to_policy(&self) -> Policy {
        let raw = |v: &[Threshold]| v.iter().map(|t| t.0).collect::<Vec<_>>();
        match self {
            PolicySpec::Esat(rows) => Policy::Esat(rows.iter().map(|r| raw(r)).collect()),
            PolicySpec::Eat(t) => Policy::Eat(raw(t)),
            PolicySpec::St(t) => Policy::St(t.0),
            PolicySpec::Ps(g) => Policy::Ps(*g),
        }
    }

    pub fn from_policy(p: &Policy) -> PolicySpec {
        let wrap = |v: &[f64]| v.iter().map(|&t| Threshold(t)).collect::<Vec<_>>();
        match p {
            Policy::Esat(rows) => PolicySpec::Esat(rows.iter().map(|r| wrap(r)).collect()),
            Policy::Eat(t) => PolicySpec::Eat(wrap(t)),
            Policy::St(t) => PolicySpec::St(Threshold(*t)),
            Policy::Ps(g) => PolicySpec::Ps(*g),
        }
    }

    /// Reads the `policy` field of an `optimize` JSON output.
    pub fn from_artifact(path: &Path) -> Result<PolicySpec, CliError> {
        #[derive(Deserialize)]
        struct Artifact {
            policy: PolicySpec,
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("policy_file: cannot read {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let a: Artifact = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("policy_file {}: {}: {}", path.display(), e.path(), e.inner())))?;
        Ok(a.policy)
    }

    /// Compact single-cell rendering for CSV: thresholds joined by `;`,
    /// ESAT rows separated by `|`.
    pub fn compact(&self) -> String {
        let t = |x: &Threshold| if x.0.is_infinite() { "inf".to_string() } else { format!("{}", x.0) };
        let join = |v: &[Threshold]| v.iter().map(t).collect::<Vec<_>>().join(";");
        match self {
            PolicySpec::Esat(rows) => rows.iter().map(|r| join(r)).collect::<Vec<_>>().join("|"),
            PolicySpec::Eat(v) => join(v),
            PolicySpec::St(x) => t(x),
            PolicySpec::Ps(g) => format!("{g}"),
        }
    }
}
