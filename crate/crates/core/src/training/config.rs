//! Flat `key=value` configuration text.

use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {0}: expected key=value")]
    Syntax(usize),
    #[error("{0}: invalid value {1:?}")]
    Invalid(String, String),
    #[error("unknown key {0}")]
    UnknownKey(String),
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
/// Keys may repeat (order is kept).
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax(i + 1));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::Invalid(key.to_string(), value.to_string()))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Invalid(key.to_string(), value.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines() {
        let kv = parse_kv("# c\nsteps = 20\n\nlr_max=1e-3\nbond=C C single 0\n").unwrap();
        assert_eq!(kv[0], ("steps".into(), "20".into()));
        assert_eq!(kv[2].1, "C C single 0");
        assert_eq!(parse_kv("oops"), Err(ConfigError::Syntax(1)));
        assert_eq!(parse_value::<usize>("steps", "20"), Ok(20));
        assert!(parse_value::<usize>("steps", "x").is_err());
        assert_eq!(parse_bool("b", "off"), Ok(false));
    }
}
