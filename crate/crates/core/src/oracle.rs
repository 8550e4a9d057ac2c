//! Fixed-step abc-frame reference of the same circuit with an averaged converter.
//!
//! The converter controls run on instantaneous dq signals obtained by a power-invariant
//! Park transform at `θc + ω_s·t`, through the same controller functions the phasor
//! model uses for its dc order. The limiters act on one-cycle sliding phasors of the
//! dq current reference: while the dc phasor is within the saturation current the
//! reference passes unchanged; otherwise the limited dc phasor plus the reconstructed
//! second-order ripple replaces it.
//!
//! Record columns: `t`, then `<signal>_<phase>` for `i2`, `v1`, `i`, `vc2`, `it`, `v`
//! over phases `a`, `b`, `c`, then `p_c`, `theta_c`, `i_ref_lim_mag`, `limiter_flag`.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_3, TAU};
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::dp::{extract_dp, UniformSamples};
use crate::error::{Error, Result};
use crate::gfc::{apply_limiter, current_controller, inner_voltage_controller, outer_droop_derivatives, Dq, DqDp, GfcState};
use crate::network::{sequence_matrix, sequence_to_abc, FaultSpec, Mat3};
use crate::params::{nominal_current, GfcParams, NetworkParams};
use crate::simulate::{Scenario, TimeSeries};
use crate::system::SystemState;

pub const ORACLE_LEN: usize = 24;
pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_RECORD_STEP: f64 = 2e-5;

/// Oracle state, all instantaneous and real.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleState {
    pub i_t: [f64; 3],
    pub v: [f64; 3],
    pub x1: [f64; 2],
    pub x2: [f64; 2],
    pub v_int: f64,
    pub p_filt: f64,
    pub theta: f64,
    pub i2: [f64; 3],
    pub i: [f64; 3],
    pub vc2: [f64; 3],
}

impl OracleState {
    pub fn pack(&self) -> [f64; ORACLE_LEN] {
        let mut x = [0.0; ORACLE_LEN];
        x[0..3].copy_from_slice(&self.i_t);
        x[3..6].copy_from_slice(&self.v);
        x[6..8].copy_from_slice(&self.x1);
        x[8..10].copy_from_slice(&self.x2);
        x[10] = self.v_int;
        x[11] = self.p_filt;
        x[12] = self.theta;
        x[13..16].copy_from_slice(&self.i2);
        x[16..19].copy_from_slice(&self.i);
        x[19..22].copy_from_slice(&self.vc2);
        x
    }

    pub fn unpack(x: &[f64; ORACLE_LEN]) -> Self {
        let t3 = |k: usize| [x[k], x[k + 1], x[k + 2]];
        Self {
            i_t: t3(0),
            v: t3(3),
            x1: [x[6], x[7]],
            x2: [x[8], x[9]],
            v_int: x[10],
            p_filt: x[11],
            theta: x[12],
            i2: t3(13),
            i: t3(16),
            vc2: t3(19),
        }
    }

    /// Instantaneous state matching a phasor-model state at time `t`.
    pub fn from_phasor(s: &SystemState<f64>, gfc: &GfcParams<f64>, t: f64) -> Self {
        let phase = gfc.omega_s * t;
        let angle = s.gfc.theta + phase;
        let dq_abc = |x: &DqDp<f64>, scale: f64| {
            // dc plus the ±2 orders, evaluated at t in the converter frame
            let e2 = Complex64::from_polar(1.0, 2.0 * phase);
            let d = x.dc.d.re + 2.0 * (x.second.d * e2).re;
            let q = x.dc.q.re + 2.0 * (x.second.q * e2).re;
            inverse_park([d * scale, q * scale], angle)
        };
        Self {
            i_t: dq_abc(&s.gfc.x3, gfc.l.recip()),
            v: dq_abc(&s.gfc.x4, gfc.c.recip()),
            x1: [s.gfc.x1.dc.d.re, s.gfc.x1.dc.q.re],
            x2: [s.gfc.x2.dc.d.re, s.gfc.x2.dc.q.re],
            v_int: s.gfc.v_int,
            p_filt: s.gfc.p_filt,
            theta: s.gfc.theta,
            i2: sequence_to_abc(s.net.i2, phase),
            i: sequence_to_abc(s.net.i, phase),
            vc2: sequence_to_abc(s.net.vc2, phase),
        }
    }
}

/// Power-invariant Park transform at `angle`.
pub fn park(x: [f64; 3], angle: f64) -> [f64; 2] {
    let k = (2.0f64 / 3.0).sqrt();
    let mut dq = [0.0; 2];
    for (r, xr) in x.iter().enumerate() {
        let a = angle - 2.0 * FRAC_PI_3 * r as f64;
        dq[0] += k * xr * a.cos();
        dq[1] -= k * xr * a.sin();
    }
    dq
}

pub fn inverse_park(dq: [f64; 2], angle: f64) -> [f64; 3] {
    let k = (2.0f64 / 3.0).sqrt();
    [0, 1, 2].map(|r| {
        let a = angle - 2.0 * FRAC_PI_3 * r as f64;
        k * (dq[0] * a.cos() - dq[1] * a.sin())
    })
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Real abc load-bus impedance `(I/R_L + G_fault)⁻¹`.
pub fn bus_impedance(r_load: f64, fault: Option<&FaultSpec<f64>>) -> Result<[[f64; 3]; 3]> {
    let mut y = Mat3::<f64>::identity().scale(r_load.recip());
    if let Some(f) = fault {
        y = y.add(&f.abc_conductance());
    }
    let z = y.inverse()?;
    Ok(z.0.map(|row| row.map(|c| c.re)))
}

fn mat_vec(m: &[[f64; 3]; 3], x: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| dot(m[r], x))
}

/// Algebraic and power quantities of one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct OracleOutputs {
    pub v1: [f64; 3],
    pub i_ref: [f64; 2],
    pub i_ref_limited: [f64; 2],
    pub limited_dc_magnitude: f64,
    pub branch_code: u8,
    pub p_c: f64,
    pub p_source: f64,
    pub p_dissipated: f64,
    pub p_delivered: f64,
}

#[derive(Clone, Debug)]
pub struct OracleModel {
    pub gfc: GfcParams<f64>,
    pub net: NetworkParams<f64>,
    pub bus: [[f64; 3]; 3],
}

impl OracleModel {
    pub fn new(gfc: GfcParams<f64>, net: NetworkParams<f64>, fault: Option<&FaultSpec<f64>>) -> Result<Self> {
        let bus = bus_impedance(net.r_load, fault)?;
        Ok(Self { gfc, net, bus })
    }

    /// Inner-loop current reference before limiting.
    pub fn current_reference(&self, t: f64, x: &OracleState) -> [f64; 2] {
        let angle = x.theta + self.gfc.omega_s * t;
        let v = park(x.v, angle);
        let i = park(x.i, angle);
        let g = self.controller_state(x);
        let outer = outer_droop_derivatives(&g, &DqDp::dc(v[0], v[1]), &DqDp::dc(i[0], i[1]), &self.gfc);
        let (_, ir) = inner_voltage_controller(0, g.x1.dc, outer.v_ref.dc, Dq::real(v[0], v[1]), Dq::real(i[0], i[1]), &self.gfc);
        [ir.d.re, ir.q.re]
    }

    fn controller_state(&self, x: &OracleState) -> GfcState<f64> {
        GfcState {
            x1: DqDp::dc(x.x1[0], x.x1[1]),
            x2: DqDp::dc(x.x2[0], x.x2[1]),
            x3: DqDp::zero(),
            x4: DqDp::zero(),
            v_int: x.v_int,
            p_filt: x.p_filt,
            theta: x.theta,
        }
    }

    /// Derivatives given sliding phasors of the current reference.
    pub fn derivatives(&self, t: f64, x: &OracleState, i_ref_dp: &ReferencePhasors) -> (OracleState, OracleOutputs) {
        let p = &self.gfc;
        let n = &self.net;
        let angle = x.theta + p.omega_s * t;
        let v_dq = park(x.v, angle);
        let i_dq = park(x.i, angle);
        let it_dq = park(x.i_t, angle);
        let g = self.controller_state(x);
        let (v, i, it) = (Dq::real(v_dq[0], v_dq[1]), Dq::real(i_dq[0], i_dq[1]), Dq::real(it_dq[0], it_dq[1]));

        let outer = outer_droop_derivatives(&g, &DqDp::dc(v_dq[0], v_dq[1]), &DqDp::dc(i_dq[0], i_dq[1]), p);
        let (dx1, i_ref) = inner_voltage_controller(0, g.x1.dc, outer.v_ref.dc, v, i, p);
        let lim = apply_limiter(p.limiter, &DqDp::dc(i_ref_dp.dc[0], i_ref_dp.dc[1]), p.i_sat);
        let limited = if lim.branch.is_saturated() {
            let ripple = i_ref_dp.ripple(p.omega_s * t);
            Dq::real(lim.out.dc.d.re + ripple[0], lim.out.dc.q.re + ripple[1])
        } else {
            i_ref
        };
        let (dx2, v_t) = current_controller(0, g.x2.dc, limited, it, v, p);
        let v_t_abc = inverse_park([v_t.d.re, v_t.q.re], angle);

        let v1 = mat_vec(&self.bus, [0, 1, 2].map(|r| x.i[r] - x.i2[r]));
        let e = sequence_to_abc(crate::network::Pnz::new(n.e_b, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)), n.omega_s * t);

        let mut d = OracleState::default();
        let mut di = [0.0; 3];
        for r in 0..3 {
            d.i_t[r] = (v_t_abc[r] - x.v[r] - p.r * x.i_t[r]) / p.l;
            d.v[r] = (x.i_t[r] - x.i[r]) / p.c;
            di[r] = (x.v[r] - v1[r]) / n.l1;
            d.i2[r] = (v1[r] - x.vc2[r] - e[r] - n.r2 * x.i2[r]) / n.l2;
            d.vc2[r] = x.i2[r] / n.c2;
        }
        // The transformer carries no zero-sequence current.
        let mean = (di[0] + di[1] + di[2]) / 3.0;
        d.i = di.map(|v| v - mean);
        d.x1 = [dx1.d.re, dx1.q.re];
        d.x2 = [dx2.d.re, dx2.q.re];
        d.v_int = outer.d_v_int;
        d.p_filt = outer.d_p_filt;
        d.theta = outer.d_theta;

        let injection = [0, 1, 2].map(|r| x.i[r] - x.i2[r]);
        let out = OracleOutputs {
            v1,
            i_ref: [i_ref.d.re, i_ref.q.re],
            i_ref_limited: [limited.d.re, limited.q.re],
            limited_dc_magnitude: lim.out.dc.dc_magnitude(),
            branch_code: lim.branch.code(),
            p_c: outer.p_c,
            p_source: dot(v_t_abc, x.i_t),
            p_dissipated: p.r * dot(x.i_t, x.i_t) + n.r2 * dot(x.i2, x.i2) + dot(v1, injection),
            p_delivered: dot(e, x.i2),
        };
        (d, out)
    }

    /// Magnetic and electric energy stored in the circuit (J).
    pub fn stored_energy(&self, x: &OracleState) -> f64 {
        0.5 * (self.gfc.l * dot(x.i_t, x.i_t)
            + self.gfc.c * dot(x.v, x.v)
            + self.net.l1 * dot(x.i, x.i)
            + self.net.l2 * dot(x.i2, x.i2)
            + self.net.c2 * dot(x.vc2, x.vc2))
    }
}

/// Dc and second-order phasors of the dq current reference over the last cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReferencePhasors {
    pub dc: [f64; 2],
    pub second: [Complex64; 2],
}

impl ReferencePhasors {
    /// Second-order content `2·Re(⟨x⟩₂ e^{j2φ})` at base phase `φ`.
    pub fn ripple(&self, phase: f64) -> [f64; 2] {
        let e = Complex64::from_polar(1.0, 2.0 * phase);
        self.second.map(|c| 2.0 * (c * e).re)
    }
}

/// Sliding one-cycle extraction of the dc and second-order phasors.
#[derive(Clone, Debug)]
struct SlidingPhasors {
    buf: VecDeque<([f64; 2], Complex64)>,
    dc: [f64; 2],
    second: [Complex64; 2],
    len: usize,
    omega_s: f64,
}

impl SlidingPhasors {
    /// Window of `len` samples spaced `dt`, pre-filled with a constant reference.
    fn filled(len: usize, dt: f64, omega_s: f64, value: [f64; 2]) -> Self {
        let mut s = Self { buf: VecDeque::with_capacity(len + 1), dc: [0.0; 2], second: [Complex64::new(0.0, 0.0); 2], len, omega_s };
        for k in 0..len {
            s.push(-((len - k) as f64) * dt, value);
        }
        s
    }

    fn push(&mut self, t: f64, v: [f64; 2]) -> ReferencePhasors {
        let rot = Complex64::from_polar(1.0, -2.0 * self.omega_s * t);
        if self.buf.len() == self.len {
            if let Some((old, old_rot)) = self.buf.pop_front() {
                for k in 0..2 {
                    self.dc[k] -= old[k];
                    self.second[k] -= old_rot * old[k];
                }
            }
        }
        self.buf.push_back((v, rot));
        for k in 0..2 {
            self.dc[k] += v[k];
            self.second[k] += rot * v[k];
        }
        let n = self.len as f64;
        ReferencePhasors { dc: self.dc.map(|x| x / n), second: self.second.map(|x| x / n) }
    }
}

pub const RECORD_SIGNALS: [&str; 6] = ["i2", "v1", "i", "vc2", "it", "v"];

pub fn record_columns() -> Vec<String> {
    let mut c = vec!["t".to_string()];
    for s in RECORD_SIGNALS {
        for ph in ["a", "b", "c"] {
            c.push(format!("{s}_{ph}"));
        }
    }
    c.extend(["p_c", "theta_c", "i_ref_lim_mag", "limiter_flag"].map(String::from));
    c
}

/// Uniformly spaced oracle samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WaveformRecord {
    pub dt: f64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl WaveformRecord {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    fn phases(&self, signal: &str) -> Result<[usize; 3]> {
        let idx = |ph: &str| {
            self.index(&format!("{signal}_{ph}")).ok_or_else(|| Error::Structural(format!("record has no `{signal}_{ph}` column")))
        };
        Ok([idx("a")?, idx("b")?, idx("c")?])
    }

    /// Instantaneous positive/negative/zero sequence values of a recorded abc signal.
    pub fn sequence_samples(&self, signal: &str) -> Result<UniformSamples<f64, [Complex64; 3]>> {
        let cols = self.phases(signal)?;
        let s = sequence_matrix::<f64>().conj_transpose();
        let values = self.rows.iter().map(|r| s.mul_vec(cols.map(|c| Complex64::new(r[c], 0.0)))).collect();
        Ok(UniformSamples::new(self.rows.first().map(|r| r[0]).unwrap_or(0.0), self.dt, values))
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

/// Integrated power terms over a run (J).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyAudit {
    pub source: f64,
    pub dissipated: f64,
    pub delivered: f64,
    pub stored_change: f64,
}

impl EnergyAudit {
    /// `|source − dissipated − delivered − Δstored|` relative to the largest term.
    pub fn relative_imbalance(&self) -> f64 {
        let r = self.source - self.dissipated - self.delivered - self.stored_change;
        let scale = [self.source, self.dissipated, self.delivered, self.stored_change].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        r.abs() / scale.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug)]
pub struct OracleRun {
    pub scenario: Scenario,
    pub record: WaveformRecord,
    pub energy: EnergyAudit,
    /// Step actually used (halved once after an instability).
    pub dt: f64,
    pub final_state: OracleState,
    pub max_limited_reference: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleOptions {
    pub dt: f64,
    pub record_dt: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_STEP, record_dt: DEFAULT_RECORD_STEP }
    }
}

/// Runs the scenario from the phasor-model equilibrium.
pub fn run_oracle(scenario: &Scenario, opts: &OracleOptions) -> Result<OracleRun> {
    scenario.validate()?;
    let eq = crate::equilibrium::find_equilibrium(&scenario.steady_model()?, None, &Default::default())?;
    let x0 = OracleState::from_phasor(&eq.state, &scenario.gfc, 0.0);
    run_oracle_from(scenario, &x0, opts)
}

/// Runs from a given state; on instability the step is halved once.
pub fn run_oracle_from(scenario: &Scenario, x0: &OracleState, opts: &OracleOptions) -> Result<OracleRun> {
    if !(opts.dt > 0.0 && opts.dt <= 5e-6) {
        return Err(Error::Domain(format!("oracle step {} s must lie in (0, 5 µs]", opts.dt)));
    }
    match integrate_fixed(scenario, x0, opts.dt, opts.record_dt) {
        Err(Error::OracleUnstable { .. }) => integrate_fixed(scenario, x0, opts.dt / 2.0, opts.record_dt),
        other => other,
    }
}

fn integrate_fixed(scenario: &Scenario, x0: &OracleState, dt: f64, record_dt: f64) -> Result<OracleRun> {
    let steps = (scenario.t_end / dt).round() as usize;
    let record_every = ((record_dt / dt).round() as usize).max(1);
    let period = TAU / scenario.gfc.omega_s;
    let window = ((period / dt).round() as usize).max(1);

    let mut events: Vec<(f64, OracleModel)> = Vec::new();
    let mut times = vec![0.0];
    times.extend(scenario.events());
    for t in times {
        let fault = scenario.fault.as_ref().filter(|f| f.is_active(t));
        let mut gfc = scenario.gfc.clone();
        if let Some(p) = &scenario.pulse {
            if t >= p.t_on && t < p.t_off {
                gfc.v_ref += p.delta;
            }
        }
        events.push((t, OracleModel::new(gfc, scenario.net.clone(), fault)?));
    }
    let model_at = |t: f64| &events.iter().rev().find(|(te, _)| t >= *te - 1e-12).unwrap().1;

    let mut x = *x0;
    let scale_i = 1e3 * nominal_current();
    let mut sliding = SlidingPhasors::filled(window, dt, scenario.gfc.omega_s, model_at(0.0).current_reference(0.0, &x));
    let mut record = WaveformRecord { dt: dt * record_every as f64, columns: record_columns(), rows: Vec::new() };
    let mut energy = EnergyAudit::default();
    let e0 = model_at(0.0).stored_energy(&x);
    let mut prev_power: Option<(f64, f64, f64)> = None;
    let mut max_lim = 0.0f64;

    let add = |a: &OracleState, b: &OracleState, h: f64| {
        let (pa, pb) = (a.pack(), b.pack());
        let mut c = [0.0; ORACLE_LEN];
        for k in 0..ORACLE_LEN {
            c[k] = pa[k] + h * pb[k];
        }
        OracleState::unpack(&c)
    };

    for n in 0..=steps {
        let t = n as f64 * dt;
        let model = model_at(t);
        let ir = model.current_reference(t, &x);
        let dp = sliding.push(t, ir);
        let (k1, out) = model.derivatives(t, &x, &dp);
        max_lim = max_lim.max(out.limited_dc_magnitude);

        let power = (out.p_source, out.p_dissipated, out.p_delivered);
        if let Some(pp) = prev_power {
            energy.source += 0.5 * dt * (pp.0 + power.0);
            energy.dissipated += 0.5 * dt * (pp.1 + power.1);
            energy.delivered += 0.5 * dt * (pp.2 + power.2);
        }
        prev_power = Some(power);

        if n % record_every == 0 {
            let mut row = Vec::with_capacity(record.columns.len());
            row.push(t);
            for s in [x.i2, out.v1, x.i, x.vc2, x.i_t, x.v] {
                row.extend(s);
            }
            row.extend([out.p_c, x.theta, out.limited_dc_magnitude, f64::from(out.branch_code)]);
            record.rows.push(row);
        }
        if n == steps {
            break;
        }

        let (k2, _) = model.derivatives(t + 0.5 * dt, &add(&x, &k1, 0.5 * dt), &dp);
        let (k3, _) = model.derivatives(t + 0.5 * dt, &add(&x, &k2, 0.5 * dt), &dp);
        let (k4, _) = model.derivatives(t + dt, &add(&x, &k3, dt), &dp);
        let (p1, p2, p3, p4) = (k1.pack(), k2.pack(), k3.pack(), k4.pack());
        let mut xs = x.pack();
        for k in 0..ORACLE_LEN {
            xs[k] += dt / 6.0 * (p1[k] + 2.0 * p2[k] + 2.0 * p3[k] + p4[k]);
        }
        x = OracleState::unpack(&xs);
        let bad = xs.iter().any(|v| !v.is_finite())
            || x.i_t.iter().chain(&x.i).chain(&x.i2).any(|v| v.abs() > scale_i);
        if bad {
            return Err(Error::OracleUnstable { dt, t: t + dt });
        }
    }
    energy.stored_change = model_at(scenario.t_end).stored_energy(&x) - e0;
    Ok(OracleRun { scenario: scenario.clone(), record, energy, dt, final_state: x, max_limited_reference: max_lim })
}

/// Envelopes `|⟨x_p⟩₁|` of the recorded line current and load-bus voltage at `times`,
/// named like the phasor-model columns.
pub fn oracle_envelopes(record: &WaveformRecord, times: &[f64], omega_s: f64) -> Result<TimeSeries> {
    let window = TAU / omega_s;
    let i2 = record.sequence_samples("i2")?;
    let v1 = record.sequence_samples("v1")?;
    let p_only = |s: &UniformSamples<f64, [Complex64; 3]>| UniformSamples::new(s.t0, s.dt, s.values.iter().map(|v| v[0]).collect::<Vec<_>>());
    let (i2p, v1p) = (p_only(&i2), p_only(&v1));
    let mut ts = TimeSeries::new(vec!["t".into(), "i2_p.pnz.1.mag".into(), "v1_p.pnz.1.mag".into()]);
    for &t in times {
        ts.rows.push(vec![t, extract_dp(&i2p, t, 1, window, omega_s)?.norm(), extract_dp(&v1p, t, 1, window, omega_s)?.norm()]);
    }
    Ok(ts)
}

/// Error of one envelope over one window, relative to the oracle's pre-fault level.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeError {
    pub signal: String,
    pub window: &'static str,
    pub max: f64,
    pub rms: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonReport {
    pub entries: Vec<EnvelopeError>,
}

impl ComparisonReport {
    pub fn get(&self, signal: &str, window: &str) -> Option<&EnvelopeError> {
        self.entries.iter().find(|e| e.signal == signal && e.window == window)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}.{}.max = {:.6e}", e.signal, e.window, e.max);
            let _ = writeln!(s, "{}.{}.rms = {:.6e}", e.signal, e.window, e.rms);
            let _ = writeln!(s, "{}.{}.samples = {}", e.signal, e.window, e.samples);
        }
        s
    }
}

pub const COMPARED_SIGNALS: [&str; 2] = ["i2_p.pnz.1.mag", "v1_p.pnz.1.mag"];

/// Compares phasor-model envelopes against phasors extracted from the oracle record.
///
/// Windows: `pre` from one cycle after start to fault application, `fault` until
/// clearing, `post` to the end. Errors are divided by the mean oracle envelope of
/// the pre-fault window.
pub fn compare_envelopes(dp: &TimeSeries, dp_scenario: &Scenario, oracle: &OracleRun) -> Result<ComparisonReport> {
    if !dp_scenario.same_physics(&oracle.scenario) {
        return Err(Error::Structural(format!(
            "scenario mismatch: `{}` versus oracle `{}`",
            dp_scenario.name, oracle.scenario.name
        )));
    }
    let sc = &oracle.scenario;
    let omega = sc.gfc.omega_s;
    let period = TAU / omega;
    let t_rec_end = oracle.record.rows.last().map(|r| r[0]).unwrap_or(0.0);
    let times: Vec<f64> = dp.times().into_iter().filter(|t| *t >= period && *t <= t_rec_end).collect();
    let dp_rows: Vec<usize> = (0..dp.rows.len()).filter(|&k| dp.rows[k][0] >= period && dp.rows[k][0] <= t_rec_end).collect();
    let ora = oracle_envelopes(&oracle.record, &times, omega)?;
    let (t_apply, t_clear) = sc.fault.map(|f| (f.t_apply, f.t_clear)).unwrap_or((sc.t_end + 1.0, sc.t_end + 1.0));
    let label = |t: f64| if t < t_apply { "pre" } else if t < t_clear { "fault" } else { "post" };

    let mut report = ComparisonReport::default();
    for (ci, name) in COMPARED_SIGNALS.iter().enumerate() {
        let col = dp.index(name).ok_or_else(|| Error::Structural(format!("phasor series has no `{name}` column")))?;
        let pre: Vec<f64> = times.iter().zip(&ora.rows).filter(|(t, _)| label(**t) == "pre").map(|(_, r)| r[ci + 1]).collect();
        if pre.is_empty() {
            return Err(Error::Domain("no pre-fault samples to normalize against".into()));
        }
        let reference = pre.iter().sum::<f64>() / pre.len() as f64;
        for window in ["pre", "fault", "post"] {
            let errs: Vec<f64> = times
                .iter()
                .zip(&dp_rows)
                .zip(&ora.rows)
                .filter(|((t, _), _)| label(**t) == window)
                .map(|((_, &k), o)| (dp.rows[k][col] - o[ci + 1]) / reference)
                .collect();
            if errs.is_empty() {
                continue;
            }
            let max = errs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
            report.entries.push(EnvelopeError { signal: name.to_string(), window, max, rms, samples: errs.len() });
        }
    }
    Ok(report)
}
