//! Scenario files (JSON).
//!
//! ```json
//! {
//!   "agents": 2,
//!   "bad": ["Spy"],
//!   "variant": { "omit_prefs_in_finished": false },
//!   "bounds": { "max_events": 10, "sid_pool": [0], "pref_pool": [0, 1] },
//!   "properties": "all",
//!   "possibility": false
//! }
//! ```
//!
//! Missing keys take defaults; unknown keys are rejected.

use std::collections::BTreeSet;

use serde::Deserialize;
use serde_json::Value;

use crate::algebra::AgentName;
use crate::explorer::{Bounds, FakeMode};
use crate::properties::PropertyId;
use crate::rules::{RuleId, VariantFlags};
use crate::syntax::parse_agent_name;
use crate::trace::Scenario;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_agents")]
    agents: i64,
    #[serde(default = "default_bad")]
    bad: Vec<String>,
    #[serde(default)]
    variant: VariantFlags,
    #[serde(default)]
    bounds: BoundsFile,
    #[serde(default = "default_properties")]
    properties: Value,
    #[serde(default)]
    possibility: bool,
}

fn default_agents() -> i64 {
    2
}

fn default_bad() -> Vec<String> {
    vec!["Spy".to_string()]
}

fn default_properties() -> Value {
    Value::String("all".to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    max_events: Option<i64>,
    max_fresh_nonces: Option<i64>,
    sid_pool: Option<Vec<i64>>,
    pref_pool: Option<Vec<i64>>,
    enabled_rules: Option<Value>,
    max_states: Option<i64>,
    fake_mode: Option<String>,
    stop_when_decided: Option<bool>,
}

fn non_negative(field: &str, v: i64) -> Result<usize, ConfigError> {
    usize::try_from(v).map_err(|_| bad(field, format!("must be non-negative, got {v}")))
}

fn pool(field: &str, v: &[i64]) -> Result<Vec<u64>, ConfigError> {
    if v.is_empty() {
        return Err(bad(field, "must not be empty"));
    }
    let set: BTreeSet<u64> = v
        .iter()
        .map(|x| u64::try_from(*x).map_err(|_| bad(field, format!("must be non-negative, got {x}"))))
        .collect::<Result<_, _>>()?;
    Ok(set.into_iter().collect())
}

fn names<T>(
    field: &str,
    v: &Value,
    all: impl Fn() -> Vec<T>,
    lookup: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, ConfigError> {
    match v {
        Value::String(s) if s == "all" => Ok(all()),
        Value::Array(items) => items
            .iter()
            .map(|item| {
                let s = item
                    .as_str()
                    .ok_or_else(|| bad(field, format!("expected a name, found {item}")))?;
                lookup(s).ok_or_else(|| bad(field, format!("unknown name '{s}'")))
            })
            .collect(),
        other => Err(bad(field, format!("expected \"all\" or a list of names, found {other}"))),
    }
}

impl BoundsFile {
    fn into_bounds(self) -> Result<Bounds, ConfigError> {
        let mut b = Bounds::default();
        if let Some(v) = self.max_events {
            b.max_events = non_negative("bounds.max_events", v)?;
        }
        if let Some(v) = self.max_fresh_nonces {
            b.max_fresh_nonces = non_negative("bounds.max_fresh_nonces", v)?;
        }
        if let Some(v) = &self.sid_pool {
            b.sid_pool = pool("bounds.sid_pool", v)?;
        }
        if let Some(v) = &self.pref_pool {
            b.pref_pool = pool("bounds.pref_pool", v)?;
        }
        if let Some(v) = &self.enabled_rules {
            b.enabled_rules = names(
                "bounds.enabled_rules",
                v,
                || RuleId::ALL.to_vec(),
                RuleId::from_name,
            )?
            .into_iter()
            .collect();
        }
        if let Some(v) = self.max_states {
            b.max_states = non_negative("bounds.max_states", v)?;
        }
        if let Some(v) = &self.fake_mode {
            b.fake_mode = match v.as_str() {
                "on_demand" => FakeMode::OnDemand,
                "eager" => FakeMode::Eager,
                other => {
                    return Err(bad(
                        "bounds.fake_mode",
                        format!("expected \"on_demand\" or \"eager\", found \"{other}\""),
                    ))
                }
            };
        }
        if let Some(v) = self.stop_when_decided {
            b.stop_when_decided = v;
        }
        Ok(b)
    }
}

/// Parses and validates a scenario file.
pub fn parse_scenario(src: &str) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = serde_json::from_str(src).map_err(|e| {
        let msg = e.to_string();
        // serde names the offending key in the message itself
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("<document>")
            .to_string();
        bad(&field, msg)
    })?;
    let agents = non_negative("agents", file.agents)?;
    if agents == 0 {
        return Err(bad("agents", "need at least one friend"));
    }
    let agents = u32::try_from(agents).map_err(|_| bad("agents", "too many agents"))?;
    let mut s = Scenario::with_friends(agents);
    s.bad.clear();
    for name in &file.bad {
        match parse_agent_name(name) {
            Some(AgentName::Server) => {
                return Err(bad("bad", "the certification authority cannot be compromised"))
            }
            Some(AgentName::Friend(i)) if i == 0 || i > agents => {
                return Err(bad("bad", format!("{name} is not one of the {agents} friends")))
            }
            Some(a) => {
                s.bad.insert(a);
            }
            None => return Err(bad("bad", format!("unknown agent '{name}'"))),
        }
    }
    if !s.bad.contains(&AgentName::Spy) {
        return Err(bad("bad", "must contain Spy"));
    }
    s.variant = file.variant;
    s.bounds = file.bounds.into_bounds()?;
    s.properties = names(
        "properties",
        &file.properties,
        || PropertyId::SAFETY.to_vec(),
        PropertyId::from_name,
    )?;
    s.possibility = file.possibility;
    s.validate().map_err(|e| bad("bad", e.to_string()))?;
    Ok(s)
}
