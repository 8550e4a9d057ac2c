//! Run configuration in TOML.
//!
//! Every key is optional; omitted keys take the nominal values. Units per key:
//!
//! | key | unit |
//! |---|---|
//! | `output_dir` | path |
//! | `frequency_hz` | Hz |
//! | `compensation` | X_C2/X_L2, in (0, 1); overrides `network.c2` |
//! | `d_pc_factor` | dimensionless multiplier on `converter.d_pc` |
//! | `converter.r`, `network.r2`, `network.r_load` | Ω |
//! | `converter.l`, `network.l1`, `network.l2` | H |
//! | `converter.c`, `network.c2` | F |
//! | `converter.k_pac`, `converter.k_vp` | A/V |
//! | `converter.k_iac`, `converter.k_vi` | A/(V·s) |
//! | `converter.k_cp` | V/A |
//! | `converter.k_ci` | V/(A·s) |
//! | `converter.d_pc` | rad/s/MW |
//! | `converter.tau_p` | s |
//! | `converter.p_ref` | W |
//! | `converter.v_ref` | V (dq magnitude) |
//! | `converter.i_sat` | A (dq magnitude) |
//! | `converter.limiter` | `constant-angle`, `q-priority` or `none` |
//! | `converter.droop` | bool |
//! | `network.e_b` | V, line-to-line RMS |
//! | `solver.rtol` | relative tolerance |
//! | `solver.atol` | fraction of each state's scale |
//! | `solver.output_dt`, `solver.t_end` | s |
//! | `scenario.name` | text |
//! | `scenario.fault` | `LG`, `LLG` or `LLLG` |
//! | `scenario.t_apply`, `scenario.t_clear`, `scenario.t_end` | s |
//! | `scenario.r_fault` | Ω |
//! | `scenario.pulse` | `{ t_on = s, t_off = s, delta = V }` |

use std::fmt;
use std::path::{Path, PathBuf};

use gfc_dp::network::{FaultKind, FaultSpec};
use gfc_dp::params::{
    self, compensation_to_capacitance, GfcParams, LimiterMode, NetworkParams,
};
use gfc_dp::simulate::{ReferencePulse, Scenario, FAULT_APPLY, FAULT_CLEAR};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub output_dir: PathBuf,
    pub frequency_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensation: Option<f64>,
    pub d_pc_factor: f64,
    pub converter: ConverterConfig,
    pub network: NetworkConfig,
    pub solver: SolverConfig,
    #[serde(rename = "scenario", skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterConfig {
    pub r: f64,
    pub l: f64,
    pub c: f64,
    pub k_pac: f64,
    pub k_iac: f64,
    pub k_vp: f64,
    pub k_vi: f64,
    pub k_cp: f64,
    pub k_ci: f64,
    pub d_pc: f64,
    pub tau_p: f64,
    pub p_ref: f64,
    pub v_ref: f64,
    pub i_sat: f64,
    pub limiter: LimiterMode,
    pub droop: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub l1: f64,
    pub r2: f64,
    pub l2: f64,
    pub c2: f64,
    pub r_load: f64,
    pub e_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub output_dt: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limiter: Option<LimiterMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub droop: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensation: Option<f64>,
    #[serde(default = "default_apply")]
    pub t_apply: f64,
    #[serde(default = "default_clear")]
    pub t_clear: f64,
    #[serde(default = "default_fault_resistance")]
    pub r_fault: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub t_on: f64,
    pub t_off: f64,
    pub delta: f64,
}

fn default_apply() -> f64 {
    FAULT_APPLY
}

fn default_clear() -> f64 {
    FAULT_CLEAR
}

fn default_fault_resistance() -> f64 {
    params::FAULT_RESISTANCE
}

impl Default for Config {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            frequency_hz: params::NOMINAL_FREQUENCY_HZ,
            compensation: None,
            d_pc_factor: 1.0,
            converter: ConverterConfig::default(),
            network: NetworkConfig::default(),
            solver: SolverConfig::default(),
            scenarios: Vec::new(),
        }
    }
}

impl Default for ConverterConfig {
    fn default() -> Self {
        let g = GfcParams::<f64>::default();
        Self {
            r: g.r,
            l: g.l,
            c: g.c,
            k_pac: g.k_pac,
            k_iac: g.k_iac,
            k_vp: g.k_vp,
            k_vi: g.k_vi,
            k_cp: g.k_cp,
            k_ci: g.k_ci,
            d_pc: params::DROOP_RAD_PER_S_PER_MW,
            tau_p: g.tau_p,
            p_ref: g.p_ref,
            v_ref: g.v_ref,
            i_sat: g.i_sat,
            limiter: g.limiter,
            droop: g.droop,
        }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let n = NetworkParams::<f64>::default();
        Self { l1: n.l1, r2: n.r2, l2: n.l2, c2: n.c2, r_load: n.r_load, e_b: params::GRID_VOLTAGE }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = Scenario::default();
        Self { rtol: s.rtol, atol: s.atol, output_dt: s.output_dt, t_end: s.t_end }
    }
}

/// A configuration problem, located where possible.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        if let Some(k) = &self.key {
            write!(f, ": key `{k}`")?;
            if let Some(u) = unit_of(k) {
                write!(f, " (expected {u})")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Expected unit or form of a dotted key; scenario keys are given as `scenario.<key>`.
pub fn unit_of(key: &str) -> Option<&'static str> {
    Some(match key {
        "output_dir" => "a path",
        "frequency_hz" => "Hz",
        "compensation" | "scenario.compensation" => "a ratio X_C2/X_L2 in (0, 1)",
        "d_pc_factor" => "a positive multiplier",
        "converter.r" | "network.r2" | "network.r_load" | "scenario.r_fault" => "Ω",
        "converter.l" | "network.l1" | "network.l2" => "H",
        "converter.c" | "network.c2" => "F",
        "converter.k_pac" | "converter.k_vp" => "A/V",
        "converter.k_iac" | "converter.k_vi" => "A/(V·s)",
        "converter.k_cp" => "V/A",
        "converter.k_ci" => "V/(A·s)",
        "converter.d_pc" => "rad/s/MW",
        "converter.tau_p" | "solver.output_dt" | "solver.t_end" => "s",
        "scenario.t_apply" | "scenario.t_clear" | "scenario.t_end" => "s",
        "converter.p_ref" => "W",
        "converter.v_ref" => "V",
        "converter.i_sat" => "A",
        "converter.limiter" | "scenario.limiter" => "one of constant-angle, q-priority, none",
        "converter.droop" | "scenario.droop" => "a boolean",
        "network.e_b" => "V line-to-line RMS",
        "solver.rtol" => "a positive relative tolerance",
        "solver.atol" => "a positive fraction of state scale",
        "scenario.name" => "text",
        "scenario.fault" => "one of LG, LLG, LLLG",
        "scenario.pulse" => "{ t_on = s, t_off = s, delta = V }",
        _ => return None,
    })
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { origin: origin.clone(), line: None, key: None, message: e.to_string() })?;
    Config::parse(&text, &origin)
}

impl Config {
    pub fn parse(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            let key = line.and_then(|l| key_at_line(text, l)).or_else(|| quoted_field(e.message()));
            ConfigError { origin: origin.into(), line, key, message: e.message().trim().to_string() }
        })?;
        cfg.validate(text, origin)?;
        Ok(cfg)
    }

    /// TOML text that parses back to an equal configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    fn validate(&self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let err = |key: &str, scenario: Option<usize>, message: String| {
            let short = key.rsplit('.').next().unwrap_or(key);
            ConfigError { origin: origin.into(), line: find_key(text, key, scenario).or(find_key(text, short, scenario)), key: Some(key.into()), message }
        };
        let c = &self.converter;
        let n = &self.network;
        let positive = [
            ("frequency_hz", self.frequency_hz),
            ("d_pc_factor", self.d_pc_factor),
            ("converter.l", c.l),
            ("converter.c", c.c),
            ("converter.tau_p", c.tau_p),
            ("converter.v_ref", c.v_ref),
            ("converter.i_sat", c.i_sat),
            ("network.l1", n.l1),
            ("network.l2", n.l2),
            ("network.c2", n.c2),
            ("solver.rtol", self.solver.rtol),
            ("solver.atol", self.solver.atol),
            ("solver.output_dt", self.solver.output_dt),
            ("solver.t_end", self.solver.t_end),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(key, None, format!("must be positive and finite, got {v}")));
            }
        }
        let non_negative = [
            ("converter.r", c.r),
            ("converter.k_pac", c.k_pac),
            ("converter.k_iac", c.k_iac),
            ("converter.k_vp", c.k_vp),
            ("converter.k_vi", c.k_vi),
            ("converter.k_cp", c.k_cp),
            ("converter.k_ci", c.k_ci),
            ("converter.d_pc", c.d_pc),
            ("network.r2", n.r2),
            ("network.r_load", n.r_load),
            ("network.e_b", n.e_b),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(err(key, None, format!("must be non-negative and finite, got {v}")));
            }
        }
        if !c.p_ref.is_finite() {
            return Err(err("converter.p_ref", None, format!("must be finite, got {}", c.p_ref)));
        }
        if let Some(level) = self.compensation {
            if !(level > 0.0 && level < 1.0) {
                return Err(err("compensation", None, format!("must lie in (0, 1), got {level}")));
            }
        }
        let mut names = std::collections::HashSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            let at = Some(i);
            if s.name.is_empty() || !s.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
                return Err(err("scenario.name", at, format!("`{}` must be non-empty and use only letters, digits, `-`, `_`, `.`", s.name)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(err("scenario.name", at, format!("duplicate scenario name `{}`", s.name)));
            }
            if let Some(f) = &s.fault {
                f.parse::<FaultKind>().map_err(|e| err("scenario.fault", at, e.to_string()))?;
                if !(s.t_clear > s.t_apply && s.t_apply >= 0.0) {
                    return Err(err("scenario.t_clear", at, format!("fault window [{}, {}) is empty", s.t_apply, s.t_clear)));
                }
                if !(s.r_fault > 0.0) {
                    return Err(err("scenario.r_fault", at, format!("must be positive, got {}", s.r_fault)));
                }
                let t_end = s.t_end.unwrap_or(self.solver.t_end);
                if !(t_end > s.t_clear) {
                    return Err(err("scenario.t_end", at, format!("{t_end} must exceed the clearing time {}", s.t_clear)));
                }
            }
            if let Some(level) = s.compensation {
                if !(level > 0.0 && level < 1.0) {
                    return Err(err("scenario.compensation", at, format!("must lie in (0, 1), got {level}")));
                }
            }
            if let Some(t) = s.t_end {
                if !(t > 0.0) {
                    return Err(err("scenario.t_end", at, format!("must be positive, got {t}")));
                }
            }
            if let Some(p) = s.pulse {
                if !(p.t_off > p.t_on && p.t_on >= 0.0 && p.delta.is_finite()) {
                    return Err(err("scenario.pulse", at, "needs t_off > t_on ≥ 0 and a finite delta".into()));
                }
            }
        }
        Ok(())
    }

    fn omega(&self) -> f64 {
        std::f64::consts::TAU * self.frequency_hz
    }

    pub fn gfc_params(&self) -> GfcParams<f64> {
        let c = &self.converter;
        let w = self.omega();
        GfcParams {
            r: c.r,
            l: c.l,
            c: c.c,
            k_pac: c.k_pac,
            k_iac: c.k_iac,
            k_vp: c.k_vp,
            k_vi: c.k_vi,
            k_cp: c.k_cp,
            k_ci: c.k_ci,
            d_pc: c.d_pc * 1e-6 * self.d_pc_factor,
            tau_p: c.tau_p,
            p_ref: c.p_ref,
            v_ref: c.v_ref,
            i_sat: c.i_sat,
            omega_c: w,
            omega_s: w,
            limiter: c.limiter,
            droop: c.droop,
        }
    }

    pub fn network_params(&self) -> NetworkParams<f64> {
        let n = &self.network;
        let w = self.omega();
        let c2 = match self.compensation {
            Some(level) => compensation_to_capacitance(level, n.l2, w).expect("validated level"),
            None => n.c2,
        };
        NetworkParams {
            l1: n.l1,
            r2: n.r2,
            l2: n.l2,
            c2,
            r_load: n.r_load,
            e_b: Complex::new(n.e_b / std::f64::consts::SQRT_2, 0.0),
            omega_s: w,
        }
    }

    /// Fault-free scenario with the configured parameters and solver settings.
    pub fn base_scenario(&self) -> Scenario {
        Scenario {
            name: "steady".into(),
            gfc: self.gfc_params(),
            net: self.network_params(),
            fault: None,
            pulse: None,
            t_end: self.solver.t_end,
            rtol: self.solver.rtol,
            atol: self.solver.atol,
            output_dt: self.solver.output_dt,
        }
    }

    /// Fault at the load bus over the standard window, droop disabled.
    pub fn fault_scenario(&self, kind: FaultKind, limiter: Option<LimiterMode>) -> Scenario {
        let mut s = self.base_scenario();
        if let Some(l) = limiter {
            s.gfc.limiter = l;
        }
        s.gfc.droop = false;
        s.fault = Some(FaultSpec::new(kind, FAULT_APPLY, FAULT_CLEAR));
        s.name = format!("{}-{}", kind.to_string().to_lowercase(), s.gfc.limiter);
        s
    }

    /// The configured scenario list.
    pub fn scenarios(&self) -> Vec<Scenario> {
        self.scenarios
            .iter()
            .map(|sc| {
                let mut s = self.base_scenario();
                s.name = sc.name.clone();
                if let Some(l) = sc.limiter {
                    s.gfc.limiter = l;
                }
                if let Some(d) = sc.droop {
                    s.gfc.droop = d;
                }
                if let Some(level) = sc.compensation {
                    s.net.c2 = compensation_to_capacitance(level, s.net.l2, s.net.omega_s).expect("validated level");
                }
                if let Some(t) = sc.t_end {
                    s.t_end = t;
                }
                if let Some(kind) = &sc.fault {
                    let kind: FaultKind = kind.parse().expect("validated fault kind");
                    let mut f = FaultSpec::new(kind, sc.t_apply, sc.t_clear);
                    f.r_fault = sc.r_fault;
                    s.fault = Some(f);
                }
                s.pulse = sc.pulse.map(|p| ReferencePulse { t_on: p.t_on, t_off: p.t_off, delta: p.delta });
                s
            })
            .collect()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Tracks `[table]` and `[[scenario]]` headers while scanning lines.
fn for_each_entry(text: &str, mut f: impl FnMut(usize, &str, Option<usize>, &str) -> bool) {
    let mut table = String::new();
    let mut scenario: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if let Some(h) = line.strip_prefix("[[").and_then(|r| r.strip_suffix("]]")) {
            table = h.trim().to_string();
            scenario = Some(scenario.map_or(0, |n| n + 1));
            continue;
        }
        if let Some(h) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            table = h.trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim().trim_matches('"');
            let dotted = if table.is_empty() { k.to_string() } else { format!("{table}.{k}") };
            let sc = if table == "scenario" { scenario } else { None };
            if f(i + 1, &dotted, sc, k) {
                return;
            }
        }
    }
}

/// Dotted key assigned on line `line`, if any.
fn key_at_line(text: &str, line: usize) -> Option<String> {
    let mut found = None;
    for_each_entry(text, |l, dotted, _, _| {
        if l == line {
            found = Some(dotted.to_string());
            true
        } else {
            false
        }
    });
    found
}

/// Line of a dotted key, within the `scenario`-th `[[scenario]]` table when given.
fn find_key(text: &str, key: &str, scenario: Option<usize>) -> Option<usize> {
    let mut found = None;
    for_each_entry(text, |l, dotted, sc, _| {
        if dotted == key && sc == scenario {
            found = Some(l);
            true
        } else {
            false
        }
    });
    found
}

fn quoted_field(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::parse(text, "test.toml")
    }

    #[test]
    fn empty_file_gives_nominal_parameters() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.gfc_params(), GfcParams::default());
        assert_eq!(cfg.network_params(), NetworkParams::default());
        assert!(cfg.scenarios().is_empty());
    }

    #[test]
    fn droop_is_read_in_megawatt_units() {
        let cfg = parse("[converter]\nd_pc = 0.0174\n").unwrap();
        assert!((cfg.gfc_params().d_pc - 1.74e-8).abs() < 1e-22);
    }

    #[test]
    fn droop_factor_scales_the_coefficient() {
        let cfg = parse("d_pc_factor = 0.98\n").unwrap();
        let expected = 0.98 * GfcParams::<f64>::default().d_pc;
        assert!((cfg.gfc_params().d_pc - expected).abs() < 1e-22);
    }

    #[test]
    fn compensation_sets_series_capacitance() {
        let cfg = parse("compensation = 0.8325\n").unwrap();
        let n = cfg.network_params();
        assert!((n.compensation_level() - 0.8325).abs() < 1e-12);
        assert!((n.c2 - 3.521e-3).abs() < 1e-6);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let e = parse("d_pc_factor = 1.0\n\n[converter]\nk_vp = 2.0\nbogus = 3\n").unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn wrong_type_names_key_and_unit() {
        let e = parse("[converter]\nd_pc = \"fast\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert_eq!(e.key.as_deref(), Some("converter.d_pc"));
        assert!(e.to_string().contains("rad/s/MW"), "{e}");
    }

    #[test]
    fn out_of_range_value_is_located() {
        let e = parse("# header\ncompensation = 1.2\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.to_string().contains("(0, 1)"), "{e}");

        let e = parse("[network]\nl2 = -1.0\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.to_string().contains("network.l2") && e.to_string().contains(" H)"), "{e}");
    }

    #[test]
    fn scenario_errors_point_at_their_table() {
        let text = "[[scenario]]\nname = \"a\"\nfault = \"LG\"\n\n[[scenario]]\nname = \"b\"\nfault = \"XG\"\n";
        let e = parse(text).unwrap_err();
        assert_eq!(e.line, Some(7), "{e}");
        assert_eq!(e.key.as_deref(), Some("scenario.fault"));
    }

    #[test]
    fn scenarios_apply_their_overrides() {
        let text = r#"
[[scenario]]
name = "lg-q"
fault = "LG"
limiter = "q-priority"
droop = false
compensation = 0.82

[[scenario]]
name = "pulse"
t_end = 2.0
pulse = { t_on = 0.1, t_off = 0.15, delta = 100.0 }
"#;
        let cfg = parse(text).unwrap();
        let s = cfg.scenarios();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].gfc.limiter, LimiterMode::QPriority);
        assert!(!s[0].gfc.droop);
        assert_eq!(s[0].fault.unwrap().kind, FaultKind::LineToGround);
        assert!((s[0].compensation() - 0.82).abs() < 1e-12);
        assert!(s[1].fault.is_none());
        assert_eq!(s[1].t_end, 2.0);
        assert_eq!(s[1].pulse.unwrap().delta, 100.0);
        for sc in &s {
            sc.validate().unwrap();
        }
    }

    #[test]
    fn emitted_config_round_trips() {
        let text = r#"
output_dir = "runs"
compensation = 0.8325
d_pc_factor = 0.98

[converter]
limiter = "none"
k_vp = 2.5

[[scenario]]
name = "llg"
fault = "LLG"
t_clear = 0.2
"#;
        let cfg = parse(text).unwrap();
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.scenarios(), again.scenarios());
        assert_eq!(cfg.gfc_params(), again.gfc_params());
    }

    #[test]
    fn default_config_round_trips() {
        let cfg = Config::default();
        assert_eq!(parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
