//! Operator configuration.
//!
//! One `key: value;` pair per line, `#` starts a comment:
//!
//! ```text
//! NF id: nf1;
//! NF instance id: ins1;
//! driver: flatkvs;
//! endpoint: local;
//! flush interval us: 1000;
//! ```
//!
//! `endpoint` defaults to `local` and `flush interval us` to 1000.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::driver::DriverRegistry;
use crate::key::check_token;

pub const DEFAULT_FLUSH_INTERVAL: Duration = Duration::from_micros(1000);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlexConfig {
    pub driver_label: String,
    pub endpoint: String,
    #[serde(serialize_with = "micros")]
    pub flush_interval: Duration,
    pub nf_id: String,
    pub instance_id: String,
}

fn micros<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u128(d.as_micros())
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key: value;`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("unknown driver {0:?}")]
    UnknownDriver(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("bad flush interval {0:?}: must be a positive number of microseconds")]
    BadDuration(String),
    #[error("invalid {field}: {value:?}")]
    InvalidValue { field: &'static str, value: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

const NF_ID: &str = "NF id";
const INSTANCE_ID: &str = "NF instance id";
const DRIVER: &str = "driver";
const ENDPOINT: &str = "endpoint";
const FLUSH_INTERVAL: &str = "flush interval us";

impl FlexConfig {
    pub fn new(nf_id: &str, instance_id: &str, driver_label: &str) -> Self {
        Self {
            driver_label: driver_label.to_owned(),
            endpoint: "local".to_owned(),
            flush_interval: DEFAULT_FLUSH_INTERVAL,
            nf_id: nf_id.to_owned(),
            instance_id: instance_id.to_owned(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse_config(&std::fs::read_to_string(path)?)
    }

    /// Renders the config in the file format accepted by [`parse_config`].
    pub fn to_file_text(&self) -> String {
        format!(
            "{NF_ID}: {};\n{INSTANCE_ID}: {};\n{DRIVER}: {};\n{ENDPOINT}: {};\n{FLUSH_INTERVAL}: {};\n",
            self.nf_id,
            self.instance_id,
            self.driver_label,
            self.endpoint,
            self.flush_interval.as_micros()
        )
    }

    pub fn validate(&self, registry: &DriverRegistry) -> Result<(), ConfigError> {
        check_token(&self.nf_id)
            .map_err(|_| ConfigError::InvalidValue { field: "NF id", value: self.nf_id.clone() })?;
        check_token(&self.instance_id)
            .map_err(|_| ConfigError::InvalidValue { field: "NF instance id", value: self.instance_id.clone() })?;
        if !registry.contains(&self.driver_label) {
            return Err(ConfigError::UnknownDriver(self.driver_label.clone()));
        }
        if !valid_endpoint(&self.endpoint) {
            return Err(ConfigError::InvalidValue { field: "endpoint", value: self.endpoint.clone() });
        }
        if self.flush_interval.is_zero() {
            return Err(ConfigError::BadDuration("0".into()));
        }
        Ok(())
    }
}

/// `local` or `host:port`.
pub fn valid_endpoint(e: &str) -> bool {
    if e == "local" {
        return true;
    }
    match e.rsplit_once(':') {
        Some((host, port)) => !host.is_empty() && !host.contains(char::is_whitespace) && port.parse::<u16>().is_ok(),
        None => false,
    }
}

/// Parses a config against the default driver registry.
pub fn parse_config(text: &str) -> Result<FlexConfig, ConfigError> {
    parse_config_with(text, &DriverRegistry::default())
}

pub fn parse_config_with(text: &str, registry: &DriverRegistry) -> Result<FlexConfig, ConfigError> {
    let mut nf_id = None;
    let mut instance_id = None;
    let mut driver = None;
    let mut endpoint = None;
    let mut interval = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = || ConfigError::Syntax { line: line_no, text: raw.to_owned() };
        let body = line.strip_suffix(';').ok_or_else(syntax)?;
        let (key, value) = body.split_once(':').ok_or_else(syntax)?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() || value.contains(';') {
            return Err(syntax());
        }
        let slot = match key {
            NF_ID => &mut nf_id,
            INSTANCE_ID => &mut instance_id,
            DRIVER => &mut driver,
            ENDPOINT => &mut endpoint,
            FLUSH_INTERVAL => &mut interval,
            _ => return Err(ConfigError::UnknownKey { line: line_no, key: key.to_owned() }),
        };
        if slot.replace(value.to_owned()).is_some() {
            return Err(ConfigError::DuplicateKey { line: line_no, key: key.to_owned() });
        }
    }

    let flush_interval = match interval {
        None => DEFAULT_FLUSH_INTERVAL,
        Some(v) => match v.parse::<u64>() {
            Ok(us) if us > 0 => Duration::from_micros(us),
            _ => return Err(ConfigError::BadDuration(v)),
        },
    };
    let cfg = FlexConfig {
        driver_label: driver.ok_or(ConfigError::MissingField(DRIVER))?,
        endpoint: endpoint.unwrap_or_else(|| "local".to_owned()),
        flush_interval,
        nf_id: nf_id.ok_or(ConfigError::MissingField(NF_ID))?,
        instance_id: instance_id.ok_or(ConfigError::MissingField(INSTANCE_ID))?,
    };
    cfg.validate(registry)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str =
        "NF id: nf1;\nNF instance id: ins1;\ndriver: flatkvs;\nendpoint: local;\nflush interval us: 1000;\n";

    #[test]
    fn parses_full_config() {
        let cfg = parse_config(SAMPLE).unwrap();
        assert_eq!(
            cfg,
            FlexConfig {
                driver_label: "flatkvs".into(),
                endpoint: "local".into(),
                flush_interval: Duration::from_micros(1000),
                nf_id: "nf1".into(),
                instance_id: "ins1".into(),
            }
        );
        assert_eq!(parse_config(&cfg.to_file_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_blank_lines_and_defaults() {
        let cfg =
            parse_config("# operator file\n\nNF id: nf1; # trailing\nNF instance id: ins1;\ndriver: resp;\n").unwrap();
        assert_eq!(cfg.endpoint, "local");
        assert_eq!(cfg.flush_interval, DEFAULT_FLUSH_INTERVAL);
        assert_eq!(cfg.driver_label, "resp");
    }

    #[test]
    fn zero_interval_is_bad_duration() {
        let text = SAMPLE.replace("1000", "0");
        assert!(matches!(parse_config(&text), Err(ConfigError::BadDuration(_))));
        let text = SAMPLE.replace("1000", "1ms");
        assert!(matches!(parse_config(&text), Err(ConfigError::BadDuration(_))));
    }

    #[test]
    fn unknown_driver() {
        let text = SAMPLE.replace("flatkvs", "nosuch");
        assert!(matches!(parse_config(&text), Err(ConfigError::UnknownDriver(d)) if d == "nosuch"));
    }

    #[test]
    fn syntax_errors() {
        for bad in ["NF id nf1;", "NF id: nf1", ": x;", "NF id: ;", "NF id: a; b;"] {
            assert!(matches!(parse_config(bad), Err(ConfigError::Syntax { .. })), "{bad}");
        }
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        assert!(matches!(parse_config("color: red;"), Err(ConfigError::UnknownKey { .. })));
        let dup = format!("{SAMPLE}driver: resp;\n");
        assert!(matches!(parse_config(&dup), Err(ConfigError::DuplicateKey { .. })));
    }

    #[test]
    fn missing_fields() {
        assert!(matches!(parse_config("NF id: nf1;\ndriver: flatkvs;"), Err(ConfigError::MissingField(INSTANCE_ID))));
        assert!(matches!(parse_config("NF id: nf1;\nNF instance id: i;"), Err(ConfigError::MissingField(DRIVER))));
    }

    #[test]
    fn invalid_tokens_and_endpoints() {
        let text = SAMPLE.replace("nf1", "n@f");
        assert!(matches!(parse_config(&text), Err(ConfigError::InvalidValue { .. })));
        let text = SAMPLE.replace("endpoint: local", "endpoint: nowhere");
        assert!(matches!(parse_config(&text), Err(ConfigError::InvalidValue { .. })));
        assert!(valid_endpoint("127.0.0.1:6379"));
        assert!(valid_endpoint("redis.example:6379"));
        assert!(!valid_endpoint("host:99999"));
    }
}
