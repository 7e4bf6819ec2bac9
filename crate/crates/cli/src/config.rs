//! `key=value` configuration files and their resolution against flags.
//!
//! Blank lines and `#` comments are skipped. A file with `[section]` headers
//! is read from its `[config]` section only, so a run manifest doubles as a
//! configuration file.

use std::collections::BTreeMap;
use std::path::Path;

use elastreg_core::{Method, RegistrationConfig, ScaleSchedule};

use crate::args::{Common, MethodArg};
use crate::{CliError, CliResult};

pub const DEFAULT_FRAME_SIZE: usize = 256;

const KEYS: [&str; 12] = [
    "method",
    "both",
    "scales",
    "alpha",
    "mu",
    "lambda",
    "grid",
    "two_level",
    "iterate",
    "seed",
    "frame_size",
    "jobs",
];

/// Everything a command needs besides its positional inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub registration: RegistrationConfig,
    pub method: MethodArg,
    pub both: bool,
    pub seed: u64,
    pub frame_size: usize,
    pub jobs: Option<usize>,
}

impl Resolved {
    pub fn primary_method(&self) -> Method {
        match self.method {
            MethodArg::Mpir => Method::Mpir,
            MethodArg::Meir if self.registration.iterate_twice => Method::MeirIterated,
            MethodArg::Meir => Method::Meir,
        }
    }

    /// Methods to run, elastic first.
    pub fn methods(&self) -> Vec<Method> {
        if !self.both {
            return vec![self.primary_method()];
        }
        let meir = if self.registration.iterate_twice {
            Method::MeirIterated
        } else {
            Method::Meir
        };
        vec![meir, Method::Mpir]
    }

    /// Lines that [`parse_file`] reads back into the same configuration.
    pub fn to_lines(&self) -> Vec<String> {
        let r = &self.registration;
        let scales: Vec<String> = r.schedule.thetas().iter().map(|t| t.to_string()).collect();
        let mut lines = vec![
            format!("method={}", method_name(self.method)),
            format!("both={}", self.both),
            format!("scales={}", scales.join(",")),
            format!("alpha={}", r.elastic.alpha),
            format!("mu={}", r.elastic.mu),
            format!("lambda={}", r.elastic.lambda),
            format!("grid={}", r.grid_n),
            format!("two_level={}", r.prereg_two_level),
            format!("iterate={}", if r.iterate_twice { 2 } else { 1 }),
            format!("seed={}", self.seed),
            format!("frame_size={}", self.frame_size),
        ];
        if let Some(j) = self.jobs {
            lines.push(format!("jobs={j}"));
        }
        lines
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Mpir => "mpir",
        MethodArg::Meir => "meir",
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn parse_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    let sectioned = text.lines().any(|l| l.trim_start().starts_with('['));
    let mut in_config = !sectioned;
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            in_config = line == "[config]";
            continue;
        }
        if !in_config {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(usage(format!("config line {}: unknown key '{}'", n + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

pub fn parse_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| elastreg_core::Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_text(&text)
}

fn value<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> CliResult<Option<T>> {
    map.get(key)
        .map(|v| v.parse().map_err(|_| usage(format!("config key {key}: cannot parse '{v}'"))))
        .transpose()
}

pub fn parse_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("{what}: cannot parse '{t}'"))))
        .collect()
}

/// Flags win over the file, the file over the defaults.
pub fn resolve(flags: &Common) -> CliResult<Resolved> {
    let file = match &flags.config {
        Some(p) => parse_file(p)?,
        None => BTreeMap::new(),
    };
    let mut reg = RegistrationConfig::default();

    let method = match flags.method {
        Some(m) => m,
        None => match file.get("method").map(String::as_str) {
            None | Some("meir") => MethodArg::Meir,
            Some("mpir") => MethodArg::Mpir,
            Some(other) => return Err(usage(format!("unknown method '{other}'"))),
        },
    };
    let both = flags.both || value::<bool>(&file, "both")?.unwrap_or(false);
    let scales = flags.scales.clone().or_else(|| file.get("scales").cloned());
    if let Some(s) = scales {
        reg.schedule = ScaleSchedule::new(parse_list(&s, "scales")?).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(a) = flags.alpha.or(value(&file, "alpha")?) {
        reg.elastic.alpha = a;
    }
    if let Some(m) = flags.mu.or(value(&file, "mu")?) {
        reg.elastic.mu = m;
    }
    if let Some(l) = flags.lambda.or(value(&file, "lambda")?) {
        reg.elastic.lambda = l;
    }
    if let Some(g) = flags.grid.or(value(&file, "grid")?) {
        reg.grid_n = g;
    }
    reg.prereg_two_level = flags.two_level || value::<bool>(&file, "two_level")?.unwrap_or(false);
    match flags.iterate.or(value(&file, "iterate")?) {
        None | Some(2) => reg.iterate_twice = true,
        Some(1) => reg.iterate_twice = false,
        Some(n) => return Err(usage(format!("--iterate must be 1 or 2, got {n}"))),
    }
    reg.validate().map_err(|e| usage(e.to_string()))?;

    let frame_size = flags.frame_size.or(value(&file, "frame_size")?).unwrap_or(DEFAULT_FRAME_SIZE);
    if frame_size < 8 {
        return Err(usage(format!("frame size {frame_size} is too small")));
    }
    let jobs = flags.jobs.or(value(&file, "jobs")?);
    if jobs == Some(0) {
        return Err(usage("--jobs must be positive"));
    }
    Ok(Resolved {
        registration: reg,
        method,
        both,
        seed: flags.seed.or(value(&file, "seed")?).unwrap_or(0),
        frame_size,
        jobs,
    })
}
