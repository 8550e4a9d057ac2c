//! Scenario execution: operating point, event-segmented integration and output.
//!
//! Time-series columns, in order:
//!
//! - `t`
//! - converter states: `x1_d.dq.0.re`, `x1_d.dq.2.re`, `x1_d.dq.2.im`, `x1_d.dq.2.mag`, likewise
//!   for `x1_q`, `x2_d`, `x2_q`, `x3_d`, `x3_q`, `x4_d`, `x4_q`
//! - `v_int.dc.0.re`, `p_filt.dc.0.re`, `theta_c.dc.0.re`
//! - network states `i2_p`, `i2_n`, `i2_z`, `i_p`, `i_n`, `vc2_p`, `vc2_n`, `vc2_z`:
//!   `<name>.pnz.1.re`, `.im`, `.mag`
//! - load-bus voltage `v1_p`, `v1_n`, `v1_z`: `.pnz.1.re`, `.im`, `.mag`
//! - `p_c.dc.0.re`, `v.dq.0.mag`, `it.dq.0.mag`, `it.dq.2.mag`
//! - `i_ref.dq.0.mag`, `i_ref_lim_d.dq.0.re`, `i_ref_lim_q.dq.0.re`, `i_ref_lim.dq.0.mag`,
//!   `limiter.flag.0.re` (0 pass, 1 constant-angle clamp, 2 q hold, 3 q clamp)
//! - reconstructed waveforms `i2_a.abc.inst.re`, `i2_b…`, `i2_c…`, `v1_a…`, `v1_b…`, `v1_c…`

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::equilibrium::{differencing_steps, find_equilibrium, Equilibrium, NewtonOptions};
use crate::error::{Error, Result};
use crate::gfc::LimiterBranch;
use crate::integrate::{integrate_adaptive, IntegratorOptions, IntegratorStats, OdeSystem};
use crate::network::{sequence_to_abc, FaultKind, FaultSpec};
use crate::params::{compensation_to_capacitance, GfcParams, LimiterMode, NetworkParams};
use crate::system::{state_scales, SystemModel, SystemState, STATE_LEN};

impl OdeSystem for SystemModel<f64> {
    fn dim(&self) -> usize {
        STATE_LEN
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        self.derivatives(t, x, dx)
    }

    fn jacobian_steps(&self, _x: &[f64]) -> Vec<f64> {
        differencing_steps(&self.scales())
    }
}

/// A rectangular step added to the voltage magnitude reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePulse {
    pub t_on: f64,
    pub t_off: f64,
    /// Added to the reference while active (V).
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub gfc: GfcParams<f64>,
    pub net: NetworkParams<f64>,
    pub fault: Option<FaultSpec<f64>>,
    pub pulse: Option<ReferencePulse>,
    pub t_end: f64,
    pub rtol: f64,
    /// Absolute tolerance as a fraction of each state's scale.
    pub atol: f64,
    /// Output sample spacing (s).
    pub output_dt: f64,
}

pub const FAULT_APPLY: f64 = 0.1;
pub const FAULT_CLEAR: f64 = 0.18;

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "steady".into(),
            gfc: GfcParams::default(),
            net: NetworkParams::default(),
            fault: None,
            pulse: None,
            t_end: 0.5,
            rtol: 1e-6,
            atol: 1e-6,
            output_dt: 1e-4,
        }
    }
}

impl Scenario {
    /// Fault at the load bus applied at 0.1 s and cleared at 0.18 s; droop disabled.
    pub fn fault_study(kind: FaultKind, limiter: LimiterMode, compensation: f64) -> Result<Self> {
        let mut s = Self::default().with_compensation(compensation)?;
        s.name = format!("{}-{}", kind.to_string().to_lowercase(), limiter);
        s.gfc.limiter = limiter;
        s.gfc.droop = false;
        s.fault = Some(FaultSpec::new(kind, FAULT_APPLY, FAULT_CLEAR));
        Ok(s)
    }

    pub fn with_compensation(mut self, level: f64) -> Result<Self> {
        self.net.c2 = compensation_to_capacitance(level, self.net.l2, self.net.omega_s)?;
        Ok(self)
    }

    pub fn compensation(&self) -> f64 {
        self.net.compensation_level()
    }

    pub fn validate(&self) -> Result<()> {
        self.gfc.validate()?;
        self.net.validate()?;
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Domain("solver tolerances must be positive".into()));
        }
        if !(self.t_end > 0.0) || !(self.output_dt > 0.0) {
            return Err(Error::Domain("t_end and output_dt must be positive".into()));
        }
        if let Some(f) = &self.fault {
            f.validate()?;
            if !(self.t_end > f.t_clear) {
                return Err(Error::Domain(format!("t_end = {} must exceed the fault clearing time {}", self.t_end, f.t_clear)));
            }
        }
        if let Some(p) = &self.pulse {
            if !(p.t_off > p.t_on && p.t_on >= 0.0) {
                return Err(Error::Domain("reference pulse must have t_off > t_on ≥ 0".into()));
            }
        }
        Ok(())
    }

    /// Event times inside `(0, t_end)`, sorted and deduplicated.
    pub fn events(&self) -> Vec<f64> {
        let mut ev = Vec::new();
        if let Some(f) = &self.fault {
            ev.extend([f.t_apply, f.t_clear]);
        }
        if let Some(p) = &self.pulse {
            ev.extend([p.t_on, p.t_off]);
        }
        ev.retain(|t| *t > 0.0 && *t < self.t_end);
        ev.sort_by(f64::total_cmp);
        ev.dedup();
        ev
    }

    /// Model valid on the segment starting at `t`.
    pub fn model_at(&self, t: f64) -> Result<SystemModel<f64>> {
        let mut gfc = self.gfc.clone();
        if let Some(p) = &self.pulse {
            if t >= p.t_on && t < p.t_off {
                gfc.v_ref += p.delta;
            }
        }
        let fault = self.fault.as_ref().filter(|f| f.is_active(t));
        SystemModel::new(gfc, self.net.clone(), fault)
    }

    /// Same circuit, parameters and events; tolerances, sampling and name may differ.
    pub fn same_physics(&self, other: &Self) -> bool {
        self.gfc == other.gfc && self.net == other.net && self.fault == other.fault && self.pulse == other.pulse && self.t_end == other.t_end
    }

    pub fn steady_model(&self) -> Result<SystemModel<f64>> {
        SystemModel::new(self.gfc.clone(), self.net.clone(), None)
    }

    pub fn integrator_options(&self) -> IntegratorOptions {
        let atol = state_scales(&self.gfc).iter().map(|s| s * self.atol).collect();
        IntegratorOptions::new(self.rtol, atol)
    }
}

/// Column-oriented numeric table with a leading `t` column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.12e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

const GFC_FIELDS: [&str; 4] = ["x1", "x2", "x3", "x4"];
const NET_FIELDS: [&str; 8] = ["i2_p", "i2_n", "i2_z", "i_p", "i_n", "vc2_p", "vc2_n", "vc2_z"];

/// Stable column list of the scenario time series.
pub fn time_series_columns() -> Vec<String> {
    let mut c = vec!["t".to_string()];
    for f in GFC_FIELDS {
        for axis in ["d", "q"] {
            c.push(format!("{f}_{axis}.dq.0.re"));
            for part in ["re", "im", "mag"] {
                c.push(format!("{f}_{axis}.dq.2.{part}"));
            }
        }
    }
    c.extend(["v_int.dc.0.re", "p_filt.dc.0.re", "theta_c.dc.0.re"].map(String::from));
    for n in NET_FIELDS.iter().chain(["v1_p", "v1_n", "v1_z"].iter()) {
        for part in ["re", "im", "mag"] {
            c.push(format!("{n}.pnz.1.{part}"));
        }
    }
    c.extend(
        [
            "p_c.dc.0.re",
            "v.dq.0.mag",
            "it.dq.0.mag",
            "it.dq.2.mag",
            "i_ref.dq.0.mag",
            "i_ref_lim_d.dq.0.re",
            "i_ref_lim_q.dq.0.re",
            "i_ref_lim.dq.0.mag",
            "limiter.flag.0.re",
        ]
        .map(String::from),
    );
    for sig in ["i2", "v1"] {
        for ph in ["a", "b", "c"] {
            c.push(format!("{sig}_{ph}.abc.inst.re"));
        }
    }
    c
}

/// Derived quantities at one instant.
#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub row_len: usize,
    pub limited_dc_magnitude: f64,
    pub branch: LimiterBranch,
}

fn build_row(model: &SystemModel<f64>, t: f64, s: &SystemState<f64>) -> Result<(Vec<f64>, Sample)> {
    let ev = model.evaluate(t, s)?;
    let mut row = Vec::with_capacity(128);
    row.push(t);
    let g = &s.gfc;
    for f in [g.x1, g.x2, g.x3, g.x4] {
        for (dc, h2) in [(f.dc.d, f.second.d), (f.dc.q, f.second.q)] {
            row.extend([dc.re, h2.re, h2.im, h2.norm()]);
        }
    }
    row.extend([g.v_int, g.p_filt, g.theta]);
    let n = &s.net;
    let v1 = ev.net.v1;
    for c in [n.i2.p, n.i2.n, n.i2.z, n.i.p, n.i.n, n.vc2.p, n.vc2.n, n.vc2.z, v1.p, v1.n, v1.z] {
        row.extend([c.re, c.im, c.norm()]);
    }
    let gv = &ev.gfc;
    let lim = gv.i_ref_limited.dc;
    let lim_mag = lim.dc_magnitude();
    row.extend([
        gv.p_c,
        gv.v.dc.dc_magnitude(),
        gv.i_t.dc.dc_magnitude(),
        gv.i_t.second.d.norm().hypot(gv.i_t.second.q.norm()),
        gv.i_ref.dc.dc_magnitude(),
        lim.d.re,
        lim.q.re,
        lim_mag,
        f64::from(gv.branch.code()),
    ]);
    let phase = model.net.omega_s * t;
    row.extend(sequence_to_abc(n.i2, phase));
    row.extend(sequence_to_abc(v1, phase));
    let sample = Sample { row_len: row.len(), limited_dc_magnitude: lim_mag, branch: gv.branch };
    Ok((row, sample))
}

/// Peak and settling figures of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub series: TimeSeries,
    pub summary: Summary,
    pub equilibrium: Equilibrium,
    pub final_state: SystemState<f64>,
    pub stats: IntegratorStats,
    /// Largest limited dc current-reference magnitude seen at any accepted step.
    pub max_limited_reference: f64,
    /// Limiter branches seen at accepted steps, in order of first appearance.
    pub branches_seen: Vec<LimiterBranch>,
}

/// Runs a scenario from its equilibrium.
pub fn run_scenario(scenario: &Scenario) -> Result<SimulationResult> {
    let start = Instant::now();
    scenario.validate()?;
    let equilibrium = find_equilibrium(&scenario.steady_model()?, None, &NewtonOptions::default())?;
    run_from(scenario, &equilibrium.state, equilibrium.clone(), start)
}

/// Runs a scenario from a given initial state.
pub fn run_from_state(scenario: &Scenario, x0: &SystemState<f64>, equilibrium: Equilibrium) -> Result<SimulationResult> {
    scenario.validate()?;
    run_from(scenario, x0, equilibrium, Instant::now())
}

fn run_from(scenario: &Scenario, x0: &SystemState<f64>, equilibrium: Equilibrium, start: Instant) -> Result<SimulationResult> {
    let opts = scenario.integrator_options();
    let mut series = TimeSeries::new(time_series_columns());
    let n_out = (scenario.t_end / scenario.output_dt).round() as usize;
    let grid = |k: usize| (k as f64 * scenario.output_dt).min(scenario.t_end);

    let mut bounds = vec![0.0];
    bounds.extend(scenario.events());
    bounds.push(scenario.t_end);

    let mut x = x0.pack();
    let mut next_out = 0usize;
    let mut stats = IntegratorStats::default();
    let mut max_lim = 0.0f64;
    let mut branches_seen: Vec<LimiterBranch> = Vec::new();
    let note_branch = |b: LimiterBranch, seen: &mut Vec<LimiterBranch>| {
        if !seen.contains(&b) {
            seen.push(b);
        }
    };

    for seg in bounds.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let model = scenario.model_at(a)?;
        let last_segment = b >= scenario.t_end;
        // Algebraic outputs at the segment start already see the new network.
        let (_, s0) = build_row(&model, a, &SystemState::unpack(&x)?)?;
        max_lim = max_lim.max(s0.limited_dc_magnitude);
        note_branch(s0.branch, &mut branches_seen);

        let emit = |t: f64, state: &[f64], rows: &mut Vec<Vec<f64>>| -> Result<()> {
            let (row, _) = build_row(&model, t, &SystemState::unpack(state)?)?;
            rows.push(row);
            Ok(())
        };
        while next_out <= n_out && grid(next_out) <= a + 1e-15 && grid(next_out) >= a - 1e-15 {
            emit(grid(next_out), &x, &mut series.rows)?;
            next_out += 1;
        }
        let (x_end, st) = integrate_adaptive(&model, &x, a, b, &opts, |step| {
            let end = SystemState::unpack(step.x1)?;
            let (_, s) = build_row(&model, step.t1, &end)?;
            max_lim = max_lim.max(s.limited_dc_magnitude);
            note_branch(s.branch, &mut branches_seen);
            while next_out <= n_out {
                let tg = grid(next_out);
                let inside = tg <= step.t1 && (tg < b || last_segment);
                if !inside {
                    break;
                }
                let xi = if tg >= step.t1 { step.x1.to_vec() } else { step.interpolate(tg) };
                emit(tg, &xi, &mut series.rows)?;
                next_out += 1;
            }
            Ok(())
        })?;
        x = x_end;
        stats.accepted += st.accepted;
        stats.rejected += st.rejected;
        stats.rhs_evaluations += st.rhs_evaluations;
        stats.jacobians += st.jacobians;
        stats.factorizations += st.factorizations;
    }

    let final_state = SystemState::unpack(&x)?;
    let summary = summarize(scenario, &series, &equilibrium, &stats, max_lim, &branches_seen, start.elapsed().as_secs_f64());
    Ok(SimulationResult { series, summary, equilibrium, final_state, stats, max_limited_reference: max_lim, branches_seen })
}

fn summarize(
    sc: &Scenario,
    ts: &TimeSeries,
    eq: &Equilibrium,
    stats: &IntegratorStats,
    max_lim: f64,
    branches: &[LimiterBranch],
    runtime: f64,
) -> Summary {
    let mut s = Summary::default();
    let peak = |name: &str| ts.column(name).map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).unwrap_or(f64::NAN);
    s.push("scenario", &sc.name);
    s.push("fault", sc.fault.map(|f| f.kind.to_string()).unwrap_or_else(|| "none".into()));
    s.push("limiter", sc.gfc.limiter);
    s.push("droop", sc.gfc.droop);
    s.push("compensation", format!("{:.6}", sc.compensation()));
    s.push("equilibrium_p_c_w", format!("{:.6e}", eq.p_c));
    s.push("equilibrium_theta_rad", format!("{:.9}", eq.state.gfc.theta));
    s.push("equilibrium_iterations", eq.iterations);
    s.push("i_sat_a", format!("{:.6e}", sc.gfc.i_sat));
    s.push("peak_i2_p_mag_a", format!("{:.6e}", peak("i2_p.pnz.1.mag")));
    s.push("peak_it_dc_mag_a", format!("{:.6e}", peak("it.dq.0.mag")));
    s.push("peak_i_ref_lim_mag_a", format!("{:.6e}", max_lim));
    s.push("peak_i_ref_lim_over_sat", format!("{:.9}", max_lim / sc.gfc.i_sat));
    s.push("min_v1_p_mag_v", format!("{:.6e}", ts.column("v1_p.pnz.1.mag").map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min)).unwrap_or(f64::NAN)));
    let flags = ts.column("limiter.flag.0.re").unwrap_or_default();
    let sat = flags.iter().filter(|f| **f > 0.0).count();
    s.push("saturated_fraction", format!("{:.6}", sat as f64 / flags.len().max(1) as f64));
    s.push("limiter_branches", branches.iter().map(|b| format!("{b:?}")).collect::<Vec<_>>().join(","));
    if let Some(f) = &sc.fault {
        s.push("settling_after_clear_s", format!("{:.6}", settling_after(ts, "i2_p.pnz.1.mag", f.t_clear, 0.02)));
    }
    s.push("steps_accepted", stats.accepted);
    s.push("steps_rejected", stats.rejected);
    s.push("rhs_evaluations", stats.rhs_evaluations);
    s.push("runtime_s", format!("{runtime:.3}"));
    s
}

/// Time after `t0` until `column` stays within `band` (relative) of its final value.
pub fn settling_after(ts: &TimeSeries, column: &str, t0: f64, band: f64) -> f64 {
    let Some(vals) = ts.column(column) else { return f64::NAN };
    let times = ts.times();
    let Some(&last) = vals.last() else { return f64::NAN };
    let tol = band * last.abs().max(f64::MIN_POSITIVE);
    let mut settled = t0;
    for (t, v) in times.iter().zip(&vals) {
        if *t >= t0 && (v - last).abs() > tol {
            settled = *t;
        }
    }
    settled - t0
}
