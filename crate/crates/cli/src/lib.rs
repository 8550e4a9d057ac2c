//! Command-line front end: configuration, command dispatch and artifact output.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use gfc_dp::modal::{self, GainGroup, ModeTarget};
use gfc_dp::network::FaultKind;
use gfc_dp::oracle::{compare_envelopes, run_oracle, OracleOptions, COMPARED_SIGNALS};
use gfc_dp::params::LimiterMode;
use gfc_dp::simulate::{run_scenario, Scenario};

use crate::config::{parse_config, Config};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "GFC_DP_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARNING: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Damping ratio below which a mode is flagged.
pub const LOW_DAMPING: f64 = 0.01;

/// Envelope error limits used by `compare-oracle` (fault window, pre-fault).
pub const FAULT_WINDOW_LIMIT: f64 = 0.03;
pub const PRE_FAULT_LIMIT: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(name = "gfc-dp", version, about = "Phasor simulation and modal analysis of a grid-forming converter")]
struct Cli {
    /// TOML configuration; nominal parameters when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the environment and the configuration).
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run time-domain scenarios and write their series and summaries.
    Simulate(SimulateArgs),
    /// Write the state matrix at the operating point.
    Linearize,
    /// Eigenvalues, participations and modeshape of the operating point.
    Modes(ModesArgs),
    /// Track one mode while scaling a gain group.
    Sweep(SweepArgs),
    /// Run a fault scenario in both models and report envelope errors.
    CompareOracle(CompareArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Fault study at the load bus (LG, LLG, LLLG); droop disabled.
    #[arg(long)]
    fault: Option<FaultKind>,
    /// Limiter override (constant-angle, q-priority, none).
    #[arg(long)]
    limiter: Option<LimiterMode>,
    /// Run only the configured scenario with this name.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Args, Debug)]
struct ModesArgs {
    /// Frequency of the mode whose participation and modeshape are written (Hz).
    #[arg(long, default_value_t = 6.54)]
    near: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Gain group: outer, inner (inner-voltage) or droop.
    #[arg(long)]
    group: GainGroup,
    /// Factors as start:stop:count, inclusive.
    #[arg(long)]
    factors: String,
    /// Track the oscillatory mode nearest this frequency (Hz).
    #[arg(long, default_value_t = 6.54, conflicts_with = "least_damped")]
    near: f64,
    /// Track the least damped mode instead.
    #[arg(long)]
    least_damped: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Fault type (LG, LLG, LLLG).
    #[arg(long, default_value = "LG")]
    fault: FaultKind,
    /// Limiter override (constant-angle, q-priority, none).
    #[arg(long)]
    limiter: Option<LimiterMode>,
    /// Oracle step (µs).
    #[arg(long, default_value_t = 1.0)]
    dt_us: f64,
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Clean) => EXIT_OK,
        Ok(Outcome::Warnings(w)) => {
            for line in w {
                eprintln!("warning: {line}");
            }
            EXIT_WARNING
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

enum Outcome {
    Clean,
    Warnings(Vec<String>),
}

impl Outcome {
    fn from(warnings: Vec<String>) -> Self {
        if warnings.is_empty() {
            Self::Clean
        } else {
            Self::Warnings(warnings)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<Outcome> {
    let cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => Config::default(),
    };
    let out = cli
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("effective-config.toml"), cfg.to_toml())?;

    match cli.command {
        Command::Simulate(a) => simulate(&cfg, &out, a),
        Command::Linearize => linearize(&cfg, &out),
        Command::Modes(a) => modes(&cfg, &out, a),
        Command::Sweep(a) => sweep(&cfg, &out, a),
        Command::CompareOracle(a) => compare(&cfg, &out, a),
    }
}

fn simulate(cfg: &Config, out: &Path, a: SimulateArgs) -> anyhow::Result<Outcome> {
    let mut scenarios: Vec<Scenario> = if let Some(kind) = a.fault {
        vec![cfg.fault_scenario(kind, a.limiter)]
    } else if cfg.scenarios.is_empty() {
        vec![cfg.base_scenario()]
    } else {
        cfg.scenarios()
    };
    if let Some(name) = &a.scenario {
        scenarios.retain(|s| &s.name == name);
        if scenarios.is_empty() {
            bail!("no configured scenario named `{name}`");
        }
    }
    if a.fault.is_none() {
        if let Some(l) = a.limiter {
            for s in &mut scenarios {
                s.gfc.limiter = l;
            }
        }
    }
    let mut warnings = Vec::new();
    for s in &scenarios {
        let r = run_scenario(s).with_context(|| format!("scenario `{}`", s.name))?;
        let csv = out.join(format!("{}.csv", s.name));
        r.series.write_csv(&csv)?;
        std::fs::write(out.join(format!("{}.summary.txt", s.name)), r.summary.to_text())?;
        let get = |k: &str| r.summary.get(k).unwrap_or("?").to_string();
        println!(
            "{}: peak |i2_p| = {} A, peak |i_ref_lim|/i_sat = {}, min |v1_p| = {} V, runtime {} s -> {}",
            s.name,
            get("peak_i2_p_mag_a"),
            get("peak_i_ref_lim_over_sat"),
            get("min_v1_p_mag_v"),
            get("runtime_s"),
            csv.display()
        );
        if r.max_limited_reference > s.gfc.i_sat * (1.0 + 1e-9) {
            warnings.push(format!("{}: limited current reference exceeded the saturation current", s.name));
        }
    }
    Ok(Outcome::from(warnings))
}

fn linearize(cfg: &Config, out: &Path) -> anyhow::Result<Outcome> {
    let (eq, lin) = modal::linearize(&cfg.gfc_params(), &cfg.network_params())?;
    let path = out.join("a_matrix.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["state".to_string()];
    header.extend(lin.labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in lin.labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..lin.a.ncols()).map(|j| format!("{:.15e}", lin.a[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut text = String::new();
    let _ = writeln!(text, "p_c_w = {:.9e}", eq.p_c);
    let _ = writeln!(text, "theta_rad = {:.12e}", eq.state.gfc.theta);
    let _ = writeln!(text, "iterations = {}", eq.iterations);
    let _ = writeln!(text, "residual = {:.3e}", eq.residual);
    let _ = writeln!(text, "states = {}", lin.labels.len());
    std::fs::write(out.join("equilibrium.txt"), text)?;
    println!("{}×{} state matrix at P_c = {:.3} MW -> {}", lin.a.nrows(), lin.a.ncols(), eq.p_c / 1e6, path.display());
    Ok(Outcome::Clean)
}

fn modes(cfg: &Config, out: &Path, a: ModesArgs) -> anyhow::Result<Outcome> {
    let (_, lin) = modal::linearize(&cfg.gfc_params(), &cfg.network_params())?;
    let report = lin.modes()?;
    report.write_modes_csv(&out.join("modes.csv"))?;
    report.write_participation_csv(&out.join("participation.csv"))?;
    let near = report.mode_near(a.near).ok_or_else(|| anyhow!("no oscillatory mode found"))?;
    report.write_compass_csv(near.index, &out.join("compass.csv"))?;

    let mut warnings = Vec::new();
    println!("{:>12} {:>12} {:>10} {:>10}  {:<14} flag", "re", "im", "f_hz", "zeta", "top_state");
    for m in report.modes() {
        if m.eigenvalue.im <= 0.0 && m.index != near.index {
            continue;
        }
        let top = report.dominant_states(m.index)[0].0.clone();
        let mut flag = String::new();
        if m.damping < LOW_DAMPING {
            flag.push_str(if m.eigenvalue.re >= 0.0 { "UNSTABLE" } else { "LOW-DAMPING" });
            warnings.push(format!("mode at {:.3} Hz has damping ratio {:.4}", m.frequency_hz, m.damping));
        }
        if m.index == near.index {
            flag.push_str(if flag.is_empty() { "<- selected" } else { " <- selected" });
        }
        println!(
            "{:>12.4} {:>12.4} {:>10.4} {:>10.5}  {:<14} {}",
            m.eigenvalue.re, m.eigenvalue.im, m.frequency_hz, m.damping, top, flag
        );
    }
    if report.is_near_defective() {
        warnings.push(format!("eigenvector condition {:.3e}: participations may be unreliable", report.condition));
    }
    println!("selected mode: {:.4} Hz, ζ = {:.5}", near.frequency_hz, near.damping);
    Ok(Outcome::from(warnings))
}

fn sweep(cfg: &Config, out: &Path, a: SweepArgs) -> anyhow::Result<Outcome> {
    let factors = modal::parse_factors(&a.factors)?;
    let target = if a.least_damped { ModeTarget::LeastDamped } else { ModeTarget::NearestFrequency(a.near) };
    let points = modal::sensitivity_sweep(&cfg.gfc_params(), &cfg.network_params(), a.group, &factors, target)?;
    let path = out.join(format!("sweep-{}.csv", a.group));
    modal::write_sweep_csv(a.group, &points, &path)?;
    let mut warnings = Vec::new();
    for p in &points {
        match (p.eigenvalue, &p.error) {
            (Some(l), _) => println!("{:.6} {:>12.5} {:>12.5} {:>9.4} Hz ζ = {:.5}", p.factor, l.re, l.im, modal::frequency_hz(l), modal::damping_ratio(l)),
            (None, e) => {
                let why = e.clone().unwrap_or_else(|| "mode not tracked".into());
                println!("{:.6} failed: {why}", p.factor);
                warnings.push(format!("factor {}: {why}", p.factor));
            }
        }
    }
    println!("{} points -> {}", points.len(), path.display());
    Ok(Outcome::from(warnings))
}

fn compare(cfg: &Config, out: &Path, a: CompareArgs) -> anyhow::Result<Outcome> {
    let scenario = cfg.fault_scenario(a.fault, a.limiter);
    let dp = run_scenario(&scenario)?;
    let opts = OracleOptions { dt: a.dt_us * 1e-6, ..Default::default() };
    let oracle = run_oracle(&scenario, &opts)?;
    let report = compare_envelopes(&dp.series, &scenario, &oracle)?;
    dp.series.write_csv(&out.join(format!("{}.csv", scenario.name)))?;
    oracle.record.write_csv(&out.join(format!("{}.oracle.csv", scenario.name)))?;
    let mut text = report.to_text();
    let _ = writeln!(text, "oracle.dt = {:.3e}", oracle.dt);
    let _ = writeln!(text, "oracle.energy_imbalance = {:.6e}", oracle.energy.relative_imbalance());
    std::fs::write(out.join(format!("{}.comparison.txt", scenario.name)), &text)?;

    let mut warnings = Vec::new();
    for signal in COMPARED_SIGNALS {
        for (window, limit) in [("pre", PRE_FAULT_LIMIT), ("fault", FAULT_WINDOW_LIMIT), ("post", f64::INFINITY)] {
            if let Some(e) = report.get(signal, window) {
                let mark = if e.rms < limit { "" } else { "  exceeds limit" };
                println!("{signal} {window:>5}: rms {:.4} max {:.4}{mark}", e.rms, e.max);
                if e.rms >= limit {
                    warnings.push(format!("{signal} {window}-window rms error {:.4} ≥ {limit}", e.rms));
                }
            }
        }
    }
    Ok(Outcome::from(warnings))
}
