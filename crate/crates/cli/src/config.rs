//! Line-oriented `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub const SUBCOMMANDS: [&str; 10] = [
    "witness",
    "solve-coboundary",
    "split",
    "spectrum",
    "gh-report",
    "kernel-dim",
    "constant-cohomology",
    "kam",
    "rigidity-step",
    "cg-decay",
];

const GOLDEN: &str = "1, 1.618033988749895";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("line {line}: `{key}` expects {expected}, got {value:?}")]
    TypeError {
        line: usize,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("line {line}: unknown key `{key}` for {subcommand}")]
    UnknownKey { line: usize, key: String, subcommand: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown subcommand `{0}`")]
    UnknownSubcommand(String),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingKey(_) => "MissingKey",
            Self::TypeError { .. } => "TypeError",
            Self::UnknownKey { .. } => "UnknownKey",
            Self::DuplicateKey { .. } => "DuplicateKey",
            Self::Syntax { .. } => "Syntax",
            Self::UnknownSubcommand(_) => "UnknownSubcommand",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Real,
    /// Non-negative integer.
    Count,
    Int,
    /// Comma-separated reals; integers and `a/b` fractions allowed.
    List,
    Text,
    /// A real or `none`.
    OptReal,
    /// A path or `none`.
    OptText,
}

impl Kind {
    fn expected(self) -> &'static str {
        match self {
            Kind::Real => "a real number",
            Kind::Count => "a non-negative integer",
            Kind::Int => "an integer",
            Kind::List => "a comma-separated list of numbers",
            Kind::Text => "a string",
            Kind::OptReal => "a real number or `none`",
            Kind::OptText => "a string or `none`",
        }
    }

    fn check(self, v: &str) -> bool {
        match self {
            Kind::Real => parse_real(v).is_some(),
            Kind::Count => v.parse::<u64>().is_ok(),
            Kind::Int => v.parse::<i64>().is_ok(),
            Kind::List => parse_list(v).is_some(),
            Kind::Text | Kind::OptText => !v.is_empty(),
            Kind::OptReal => v == "none" || parse_real(v).is_some(),
        }
    }
}

/// A real written as a decimal or a fraction `a/b`.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    let x = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse::<f64>().ok()?,
    };
    x.is_finite().then_some(x)
}

pub fn parse_list(s: &str) -> Option<Vec<f64>> {
    let v: Option<Vec<f64>> = s.split(',').map(parse_real).collect();
    v.filter(|v| !v.is_empty())
}

#[derive(Clone)]
struct KeySpec {
    name: &'static str,
    kind: Kind,
    /// `None` marks a required key.
    default: Option<&'static str>,
}

const fn key(name: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec {
        name,
        kind,
        default: Some(default),
    }
}

const fn required(name: &'static str, kind: Kind) -> KeySpec {
    KeySpec { name, kind, default: None }
}

fn schema(sub: &str) -> Option<Vec<KeySpec>> {
    use Kind::*;
    let mut keys = vec![key("seed", Count, "1"), key("out", Text, "out")];
    let action = || {
        vec![
            key("alpha", List, GOLDEN),
            key("beta", List, "1"),
            key("mu", Real, "0"),
        ]
    };
    let corpus = || {
        vec![
            key("k", Count, "8"),
            key("n", Count, "4"),
            key("m", Count, "16"),
            key("samples", Count, "10"),
            key("decay", Real, "8"),
            key("r", Real, "1"),
        ]
    };
    let extra = match sub {
        "witness" => vec![required("alpha", List), key("gamma", OptReal, "none"), key("k", Count, "64")],
        "solve-coboundary" => [action(), corpus(), vec![key("tol", Real, "1e-9")]].concat(),
        "split" => [action(), corpus()].concat(),
        "spectrum" => [action(), vec![required("n", Int), key("m", Count, "32")]].concat(),
        "gh-report" => [
            action(),
            vec![key("n", Count, "20"), key("m", Count, "64"), key("k", Count, "32")],
        ]
        .concat(),
        "kernel-dim" => [
            action(),
            vec![
                key("n", Count, "10"),
                key("m", Count, "32"),
                key("k", Count, "16"),
                key("tol", Real, "1e-9"),
            ],
        ]
        .concat(),
        "constant-cohomology" => [action(), vec![key("algebra_file", OptText, "none")]].concat(),
        "kam" => vec![
            key("omega", List, GOLDEN),
            key("eps", Real, "1e-3"),
            key("k", Count, "64"),
            key("max_iter", Count, "8"),
            key("floor", Real, "1e-13"),
            key("grid", Count, "256"),
        ],
        "rigidity-step" => [
            action(),
            vec![
                key("perturbation_file", OptText, "none"),
                key("cutoff", OptReal, "none"),
                key("samples", Count, "20"),
                key("k", Count, "4"),
                key("n", Count, "2"),
                key("m", Count, "16"),
                key("decay", Real, "2"),
                key("scales", List, "1e-4, 1e-3, 1e-2"),
                key("threshold", Real, "0.1"),
            ],
        ]
        .concat(),
        "cg-decay" => vec![
            key("s", Real, "0"),
            key("order", Real, "2"),
            key("n", Count, "20"),
            key("samples", Count, "30"),
            key("k", Count, "4"),
            key("m", Count, "32"),
            key("decay", Real, "4"),
        ],
        _ => return None,
    };
    keys.extend(extra);
    Some(keys)
}

/// A validated configuration: every key of the subcommand is present.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: String,
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    fn spec(&self, name: &str) -> Option<KeySpec> {
        schema(&self.subcommand)?.into_iter().find(|k| k.name == name)
    }

    /// Sets a key, validating its type; `line` is reported in errors.
    pub fn set(&mut self, name: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let name = &normalize(name);
        let spec = self.spec(name).ok_or_else(|| ConfigError::UnknownKey {
            line,
            key: name.to_string(),
            subcommand: self.subcommand.clone(),
        })?;
        let value = value.trim();
        if !spec.kind.check(value) {
            return Err(ConfigError::TypeError {
                line,
                key: name.to_string(),
                expected: spec.kind.expected(),
                value: value.to_string(),
            });
        }
        self.values.insert(name.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or_else(|| panic!("no key {name}"))
    }

    pub fn real(&self, name: &str) -> f64 {
        parse_real(self.raw(name)).expect("validated")
    }

    pub fn int(&self, name: &str) -> i64 {
        self.raw(name).parse().expect("validated")
    }

    pub fn count(&self, name: &str) -> usize {
        self.raw(name).parse().expect("validated")
    }

    pub fn list(&self, name: &str) -> Vec<f64> {
        parse_list(self.raw(name)).expect("validated")
    }

    pub fn opt_real(&self, name: &str) -> Option<f64> {
        match self.raw(name) {
            "none" => None,
            v => parse_real(v),
        }
    }

    pub fn opt_text(&self, name: &str) -> Option<&str> {
        match self.raw(name) {
            "none" => None,
            v => Some(v),
        }
    }

    pub fn seed(&self) -> u64 {
        self.raw("seed").parse().expect("validated")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for ExperimentConfig {
    /// The text form read by [`parse_config`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subcommand = {}", self.subcommand)?;
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn split_line(line: usize, body: &str) -> Result<(&str, &str), ConfigError> {
    let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return Err(ConfigError::Syntax { line });
    }
    Ok((k, v.trim()))
}

/// Keys are case-insensitive; `K` and `k` name the same truncation.
fn normalize(k: &str) -> String {
    k.to_ascii_lowercase()
}

/// Parses a configuration whose text names the subcommand with
/// `subcommand = ...`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut sub = None;
    for (line, body) in lines(text) {
        let (k, v) = split_line(line, body)?;
        if normalize(k) == "subcommand" {
            sub = Some(v.to_string());
        }
    }
    let sub = sub.ok_or_else(|| ConfigError::MissingKey("subcommand".into()))?;
    parse_config_for(&sub, text)
}

/// Parses a configuration for a known subcommand, filling defaults.
pub fn parse_config_for(subcommand: &str, text: &str) -> Result<ExperimentConfig, ConfigError> {
    let spec = schema(subcommand).ok_or_else(|| ConfigError::UnknownSubcommand(subcommand.to_string()))?;
    let mut cfg = ExperimentConfig {
        subcommand: subcommand.to_string(),
        values: BTreeMap::new(),
    };
    let mut seen = BTreeMap::new();
    for (line, body) in lines(text) {
        let (k, v) = split_line(line, body)?;
        let k = normalize(k);
        let k = k.as_str();
        if k == "subcommand" {
            if v != subcommand {
                return Err(ConfigError::TypeError {
                    line,
                    key: k.into(),
                    expected: "the selected subcommand",
                    value: v.into(),
                });
            }
            continue;
        }
        if seen.insert(k.to_string(), line).is_some() {
            return Err(ConfigError::DuplicateKey { line, key: k.into() });
        }
        cfg.set(k, v, line)?;
    }
    for k in &spec {
        if !cfg.values.contains_key(k.name) {
            match k.default {
                Some(d) => {
                    cfg.values.insert(k.name.to_string(), d.to_string());
                }
                None => return Err(ConfigError::MissingKey(k.name.to_string())),
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_only() {
        let c = parse_config_for("gh-report", "").unwrap();
        assert_eq!(c.count("n"), 20);
        assert_eq!(c.list("alpha"), vec![1.0, 1.618033988749895]);
        assert_eq!(c.seed(), 1);
        let c = parse_config("# comment\nsubcommand = kam\n").unwrap();
        assert_eq!(c.count("k"), 64);
        assert_eq!(c.real("eps"), 1e-3);
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_config_for("kam", "eps = 1e-3\nK = abc\n").unwrap_err();
        assert!(matches!(e, ConfigError::TypeError { line: 2, .. }), "{e:?}");
        let e = parse_config_for("kam", "eps = 1e-3\nwidth = 3\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { line: 2, .. }));
        let e = parse_config_for("kam", "eps = 1e-3\n\nk = abc\n").unwrap_err();
        assert!(matches!(e, ConfigError::TypeError { line: 3, .. }), "{e:?}");
        assert_eq!(parse_config_for("witness", "").unwrap_err(), ConfigError::MissingKey("alpha".into()));
        assert!(matches!(parse_config_for("kam", "just text"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(parse_config_for("kam", "k = 1\nk = 2"), Err(ConfigError::DuplicateKey { line: 2, .. })));
        assert!(matches!(parse_config(""), Err(ConfigError::MissingKey(_))));
        assert!(matches!(parse_config_for("nope", ""), Err(ConfigError::UnknownSubcommand(_))));
    }

    #[test]
    fn fractions_and_options() {
        let c = parse_config_for("rigidity-step", "alpha = 1, 1/2\ncutoff = 3\n").unwrap();
        assert_eq!(c.list("alpha"), vec![1.0, 0.5]);
        assert_eq!(c.opt_real("cutoff"), Some(3.0));
        assert_eq!(c.opt_text("perturbation_file"), None);
    }
}
