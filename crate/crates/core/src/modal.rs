//! Linearization, eigen-analysis, participation factors and gain sweeps.

use std::path::Path;
use std::str::FromStr;

use faer::c64;
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use rayon::prelude::*;

use crate::equilibrium::{differencing_steps, find_equilibrium, Equilibrium, NewtonOptions};
use crate::error::{Error, Result};
use crate::linalg::{finite_difference_jacobian, DenseLu};
use crate::params::{GfcParams, NetworkParams};
use crate::system::{state_labels, SystemModel, SystemState, STATE_LEN, THETA_INDEX};

/// State matrix of the fault-free model about an operating point.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub a: Mat<f64>,
    /// Indices into the full state vector of the rows/columns of `a`.
    pub indices: Vec<usize>,
    pub labels: Vec<String>,
    /// Typical magnitude of each retained state.
    pub scales: Vec<f64>,
}

impl Linearization {
    /// `D⁻¹ A D` with `D = diag(scales)`: same eigenvalues and participations, far
    /// better conditioned eigenvectors than the SI matrix.
    pub fn scaled(&self) -> Mat<f64> {
        let s = &self.scales;
        Mat::from_fn(self.a.nrows(), self.a.ncols(), |i, j| self.a[(i, j)] * s[j] / s[i])
    }

    pub fn modes(&self) -> Result<ModalReport> {
        eigen_modes(&self.scaled(), &self.labels)
    }
}

/// States that carry dynamics in `model`. With droop disabled the converter angle is
/// a constant and is left out.
pub fn dynamic_states(model: &SystemModel<f64>) -> Vec<usize> {
    (0..STATE_LEN).filter(|&i| model.gfc.droop || i != THETA_INDEX).collect()
}

/// Central-difference Jacobian at `state`, with steps `max(1e-6·scale, 1e-9)` times
/// `step_factor`.
pub fn numeric_jacobian(model: &SystemModel<f64>, state: &SystemState<f64>, step_factor: f64) -> Result<Linearization> {
    if model.bus.faulted {
        return Err(Error::Domain("linearization requires a fault-free network".into()));
    }
    if model.limiter_branch(state)?.is_saturated() {
        return Err(Error::SaturatedOperatingPoint);
    }
    let indices = dynamic_states(model);
    let full = state.pack();
    let all_scales = model.scales();
    let steps: Vec<f64> = {
        let all = differencing_steps(&all_scales);
        indices.iter().map(|&i| all[i] * step_factor).collect()
    };
    let sub: Vec<f64> = indices.iter().map(|&i| full[i]).collect();
    let a = finite_difference_jacobian(
        |z: &[f64], out: &mut [f64]| {
            let mut x = full.clone();
            for (k, &i) in indices.iter().enumerate() {
                x[i] = z[k];
            }
            let mut dx = vec![0.0; STATE_LEN];
            model.derivatives(0.0, &x, &mut dx)?;
            for (k, &i) in indices.iter().enumerate() {
                out[k] = dx[i];
            }
            Ok(())
        },
        &sub,
        &steps,
    )?;
    let names = state_labels();
    Ok(Linearization {
        a,
        labels: indices.iter().map(|&i| names[i].clone()).collect(),
        scales: indices.iter().map(|&i| all_scales[i]).collect(),
        indices,
    })
}

/// Equilibrium followed by the Jacobian.
pub fn linearize(gfc: &GfcParams<f64>, net: &NetworkParams<f64>) -> Result<(Equilibrium, Linearization)> {
    let model = SystemModel::new(gfc.clone(), net.clone(), None)?;
    let eq = find_equilibrium(&model, None, &NewtonOptions::default())?;
    let lin = numeric_jacobian(&model, &eq.state, 1.0)?;
    Ok((eq, lin))
}

/// One mode of the reported set: a real eigenvalue or the upper member of a pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    /// Column of the eigenvector matrices.
    pub index: usize,
    pub eigenvalue: c64,
    pub frequency_hz: f64,
    pub damping: f64,
}

pub fn damping_ratio(l: c64) -> f64 {
    let m = l.norm();
    if m == 0.0 {
        0.0
    } else {
        -l.re / m
    }
}

pub fn frequency_hz(l: c64) -> f64 {
    l.im.abs() / (2.0 * std::f64::consts::PI)
}

/// Time for the envelope to enter a 2% band: `4/|Re λ|`.
pub fn settling_time(l: c64) -> Result<f64> {
    if l.re < 0.0 {
        Ok(4.0 / -l.re)
    } else {
        Err(Error::Domain(format!("mode {l} is not decaying; settling time undefined")))
    }
}

/// Eigenvector condition number above which the decomposition is reported as near-defective.
pub const DEFECTIVE_CONDITION: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct ModalReport {
    pub eigenvalues: Vec<c64>,
    /// Right eigenvectors as columns.
    pub right: Mat<c64>,
    /// Left eigenvectors as rows, scaled so that `left · right = I`.
    pub left: Mat<c64>,
    pub labels: Vec<String>,
    /// Frobenius-norm condition estimate of the right eigenvector matrix.
    pub condition: f64,
}

/// Full eigen-decomposition of a real state matrix.
pub fn eigen_modes(a: &Mat<f64>, labels: &[String]) -> Result<ModalReport> {
    let n = a.nrows();
    if a.ncols() != n || labels.len() != n {
        return Err(Error::Structural(format!("{}×{} matrix with {} labels", n, a.ncols(), labels.len())));
    }
    if (0..n).any(|i| (0..n).any(|j| !a[(i, j)].is_finite())) {
        return Err(Error::Eigen("non-finite entry in the state matrix".into()));
    }
    let evd = a.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let right = evd.U().to_owned();
    let eigenvalues: Vec<c64> = (0..n).map(|i| evd.S()[i]).collect();
    let lu = PartialPivLu::new(right.as_ref());
    let left = lu.solve(Mat::<c64>::identity(n, n));
    let fro = |m: &Mat<c64>| m.norm_l2();
    let condition = fro(&right) * fro(&left);
    if !condition.is_finite() {
        return Err(Error::Eigen("eigenvector matrix is singular".into()));
    }
    Ok(ModalReport { eigenvalues, right, left, labels: labels.to_vec(), condition })
}

impl ModalReport {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_near_defective(&self) -> bool {
        self.condition > DEFECTIVE_CONDITION
    }

    pub fn mode(&self, index: usize) -> Mode {
        let l = self.eigenvalues[index];
        Mode { index, eigenvalue: l, frequency_hz: frequency_hz(l), damping: damping_ratio(l) }
    }

    /// Real modes and upper pair members, sorted by ascending damping ratio.
    pub fn modes(&self) -> Vec<Mode> {
        let mut out: Vec<Mode> = (0..self.dim()).filter(|&i| self.eigenvalues[i].im >= 0.0).map(|i| self.mode(i)).collect();
        out.sort_by(|a, b| a.damping.total_cmp(&b.damping).then(a.eigenvalue.im.total_cmp(&b.eigenvalue.im)));
        out
    }

    /// Unnormalized participations `φ_ki ψ_ik` of every state in mode `index`.
    pub fn participation(&self, index: usize) -> Vec<c64> {
        (0..self.dim()).map(|k| self.right[(k, index)] * self.left[(index, k)]).collect()
    }

    /// Participation magnitudes scaled so the largest is 1.
    pub fn participation_normalized(&self, index: usize) -> Vec<f64> {
        let p: Vec<f64> = self.participation(index).iter().map(|c| c.norm()).collect();
        let max = p.iter().cloned().fold(0.0, f64::max);
        p.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
    }

    /// States ordered by decreasing participation in mode `index`.
    pub fn dominant_states(&self, index: usize) -> Vec<(String, f64)> {
        let p = self.participation_normalized(index);
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        order.into_iter().map(|k| (self.labels[k].clone(), p[k])).collect()
    }

    /// Per-state normalized participation and modeshape angle (degrees). Angles are
    /// those of the right eigenvector entries relative to the most participating state.
    pub fn compass(&self, index: usize) -> Vec<(String, f64, f64)> {
        let p = self.participation_normalized(index);
        let top = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        let reference = self.right[(top, index)].arg();
        (0..p.len())
            .map(|k| {
                let ang = (self.right[(k, index)].arg() - reference).to_degrees();
                let wrapped = (ang + 180.0).rem_euclid(360.0) - 180.0;
                (self.labels[k].clone(), p[k], wrapped)
            })
            .collect()
    }

    /// Oscillatory mode whose frequency is closest to `hz`.
    pub fn mode_near(&self, hz: f64) -> Option<Mode> {
        self.modes()
            .into_iter()
            .filter(|m| m.eigenvalue.im > 0.0)
            .min_by(|a, b| (a.frequency_hz - hz).abs().total_cmp(&(b.frequency_hz - hz).abs()))
    }

    pub fn right_vector(&self, index: usize) -> Vec<c64> {
        (0..self.dim()).map(|k| self.right[(k, index)]).collect()
    }

    pub fn write_modes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["mode", "re", "im", "frequency_hz", "damping", "settling_s", "top_state", "second_state"])?;
        for (n, m) in self.modes().iter().enumerate() {
            let dom = self.dominant_states(m.index);
            let ts = settling_time(m.eigenvalue).map(|t| format!("{t:.6e}")).unwrap_or_else(|_| "inf".into());
            w.write_record([
                n.to_string(),
                format!("{:.12e}", m.eigenvalue.re),
                format!("{:.12e}", m.eigenvalue.im),
                format!("{:.9e}", m.frequency_hz),
                format!("{:.9e}", m.damping),
                ts,
                dom[0].0.clone(),
                dom.get(1).map(|d| d.0.clone()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mode × state matrix of normalized participation magnitudes.
    pub fn write_participation_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["mode".to_string(), "frequency_hz".into(), "damping".into()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (n, m) in self.modes().iter().enumerate() {
            let mut row = vec![n.to_string(), format!("{:.9e}", m.frequency_hz), format!("{:.9e}", m.damping)];
            row.extend(self.participation_normalized(m.index).iter().map(|p| format!("{p:.9e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_compass_csv(&self, index: usize, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["state", "magnitude", "angle_deg"])?;
        for (s, m, a) in self.compass(index) {
            w.write_record([s, format!("{m:.9e}"), format!("{a:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Controller gains scaled together by a sweep factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GainGroup {
    /// Outer voltage-magnitude loop, proportional and integral.
    Outer,
    /// Inner voltage controller, proportional and integral.
    InnerVoltage,
    /// Power-frequency droop coefficient.
    Droop,
}

impl GainGroup {
    pub const ALL: [GainGroup; 3] = [GainGroup::Outer, GainGroup::InnerVoltage, GainGroup::Droop];

    pub fn apply(self, p: &mut GfcParams<f64>, factor: f64) {
        match self {
            Self::Outer => {
                p.k_pac *= factor;
                p.k_iac *= factor;
            }
            Self::InnerVoltage => {
                p.k_vp *= factor;
                p.k_vi *= factor;
            }
            Self::Droop => p.d_pc *= factor,
        }
    }
}

impl FromStr for GainGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "outer" => Ok(Self::Outer),
            "inner" | "inner-voltage" | "voltage" => Ok(Self::InnerVoltage),
            "droop" | "d_pc" => Ok(Self::Droop),
            other => Err(Error::Domain(format!("unknown gain group `{other}` (outer, inner-voltage, droop)"))),
        }
    }
}

impl std::fmt::Display for GainGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Outer => "outer",
            Self::InnerVoltage => "inner-voltage",
            Self::Droop => "droop",
        })
    }
}

/// How the tracked mode is picked at the seed point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeTarget {
    NearestFrequency(f64),
    LeastDamped,
}

impl ModeTarget {
    pub fn select(self, report: &ModalReport) -> Option<Mode> {
        match self {
            Self::NearestFrequency(hz) => report.mode_near(hz),
            Self::LeastDamped => report.modes().into_iter().next(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub factor: f64,
    /// Tracked eigenvalue (upper pair member); `None` where the chain failed.
    pub eigenvalue: Option<c64>,
    pub error: Option<String>,
}

/// Gain factors `a:b:n`, n points inclusive.
pub fn parse_factors(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Domain(format!("factors `{spec}` must be `start:stop:count`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || (n == 1 && a != b) {
        return Err(bad());
    }
    let f: Vec<f64> = if n == 1 { vec![a] } else { (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect() };
    if f.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("factors `{spec}` must all be positive")));
    }
    Ok(f)
}

fn modal_chain(gfc: &GfcParams<f64>, net: &NetworkParams<f64>) -> Result<ModalReport> {
    linearize(gfc, net)?.1.modes()
}

fn overlap(a: &[c64], b: &[c64]) -> f64 {
    let dot: c64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    dot.norm() / (na * nb)
}

/// Re-solves the operating point and eigenvalues for each factor and tracks one mode.
///
/// Points are processed in ascending factor order, tracking outward from the factor
/// closest to 1 by eigenvector overlap, so the result does not depend on input order.
/// The output is sorted by factor.
pub fn sensitivity_sweep(
    gfc: &GfcParams<f64>,
    net: &NetworkParams<f64>,
    group: GainGroup,
    factors: &[f64],
    target: ModeTarget,
) -> Result<Vec<SweepPoint>> {
    if factors.is_empty() || factors.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Domain("sweep factors must be positive and non-empty".into()));
    }
    let mut sorted = factors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let reports: Vec<Result<ModalReport>> = sorted
        .par_iter()
        .map(|&f| {
            let mut p = gfc.clone();
            group.apply(&mut p, f);
            modal_chain(&p, net)
        })
        .collect();

    let ok: Vec<usize> = (0..sorted.len()).filter(|&i| reports[i].is_ok()).collect();
    let seed = ok
        .iter()
        .copied()
        .min_by(|&a, &b| (sorted[a] - 1.0).abs().total_cmp(&(sorted[b] - 1.0).abs()).then(a.cmp(&b)));
    let mut tracked: Vec<Option<usize>> = vec![None; sorted.len()];
    if let Some(s) = seed {
        let rep = reports[s].as_ref().unwrap();
        let m = target.select(rep).ok_or_else(|| Error::Eigen("no mode matches the sweep target".into()))?;
        tracked[s] = Some(m.index);
        for dir in [1isize, -1] {
            let mut prev = (s, m.index);
            let mut i = s as isize + dir;
            while i >= 0 && (i as usize) < sorted.len() {
                let k = i as usize;
                if let Ok(rep) = &reports[k] {
                    let pv = reports[prev.0].as_ref().unwrap().right_vector(prev.1);
                    let best = (0..rep.dim())
                        .filter(|&j| rep.eigenvalues[j].im >= 0.0)
                        .max_by(|&a, &b| overlap(&pv, &rep.right_vector(a)).total_cmp(&overlap(&pv, &rep.right_vector(b))).then(b.cmp(&a)));
                    tracked[k] = best;
                    if let Some(b) = best {
                        prev = (k, b);
                    }
                }
                i += dir;
            }
        }
    }
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, &factor)| match &reports[k] {
            Ok(rep) => SweepPoint { factor, eigenvalue: tracked[k].map(|j| rep.eigenvalues[j]), error: None },
            Err(e) => SweepPoint { factor, eigenvalue: None, error: Some(e.to_string()) },
        })
        .collect())
}

/// Central-difference slope of the tracked mode's real part with respect to the
/// group factor at 1.
pub fn real_part_slope(gfc: &GfcParams<f64>, net: &NetworkParams<f64>, group: GainGroup, target: ModeTarget, step: f64) -> Result<f64> {
    let pts = sensitivity_sweep(gfc, net, group, &[1.0 - step, 1.0, 1.0 + step], target)?;
    let re = |k: usize| {
        pts[k].eigenvalue.map(|l| l.re).ok_or_else(|| Error::Eigen(format!("sweep point {} failed: {:?}", pts[k].factor, pts[k].error)))
    };
    Ok((re(2)? - re(0)?) / (2.0 * step))
}

pub fn write_sweep_csv(group: GainGroup, points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "factor", "re", "im", "frequency_hz", "damping", "status"])?;
    for p in points {
        let (re, im, f, z) = match p.eigenvalue {
            Some(l) => (format!("{:.12e}", l.re), format!("{:.12e}", l.im), format!("{:.9e}", frequency_hz(l)), format!("{:.9e}", damping_ratio(l))),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        let status = p.error.clone().unwrap_or_else(|| "ok".into());
        w.write_record([group.to_string(), format!("{:.9}", p.factor), re, im, f, z, status])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares fit of `c + e^{στ}(a cos ωτ + b sin ωτ)`, `τ = t − t[0]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingDownFit {
    pub sigma: f64,
    pub omega: f64,
    pub offset: f64,
    pub amplitude: f64,
    /// RMS residual relative to the RMS of the oscillatory part.
    pub relative_residual: f64,
}

fn linear_part(t: &[f64], y: &[f64], sigma: f64, omega: f64) -> Option<([f64; 3], f64)> {
    let t0 = t[0];
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (ti, yi) in t.iter().zip(y) {
        let tau = ti - t0;
        let e = (sigma * tau).exp();
        let row = [1.0, e * (omega * tau).cos(), e * (omega * tau).sin()];
        for r in 0..3 {
            aty[r] += row[r] * yi;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let m = Mat::<f64>::from_fn(3, 3, |r, c| ata[r][c]);
    let coef = DenseLu::new(&m).ok()?.solve(&aty)?;
    let mut ss = 0.0;
    for (ti, yi) in t.iter().zip(y) {
        let tau = ti - t0;
        let e = (sigma * tau).exp();
        let r = yi - coef[0] - e * (coef[1] * (omega * tau).cos() + coef[2] * (omega * tau).sin());
        ss += r * r;
    }
    Some(([coef[0], coef[1], coef[2]], ss))
}

/// Fits a decaying sinusoid near angular frequency `omega_guess` (rad/s).
///
/// The linear coefficients are eliminated per trial; the two nonlinear parameters are
/// found by a grid scan followed by a Nelder–Mead refinement.
pub fn fit_ring_down(t: &[f64], y: &[f64], omega_guess: f64) -> Result<RingDownFit> {
    if t.len() != y.len() || t.len() < 8 {
        return Err(Error::Domain("ring-down fit needs at least 8 matching samples".into()));
    }
    if !(omega_guess > 0.0) {
        return Err(Error::Domain("ring-down frequency guess must be positive".into()));
    }
    let span = t[t.len() - 1] - t[0];
    let cost = |p: [f64; 2]| linear_part(t, y, p[0], p[1]).map(|(_, ss)| ss).unwrap_or(f64::INFINITY);
    let mut best = ([0.0, omega_guess], f64::INFINITY);
    let sigma_max = 20.0 / span;
    for i in 0..=80 {
        let s = -sigma_max + 1.25 * sigma_max * i as f64 / 80.0;
        for j in 0..=60 {
            let w = omega_guess * (0.6 + 0.8 * j as f64 / 60.0);
            let c = cost([s, w]);
            if c < best.1 {
                best = ([s, w], c);
            }
        }
    }
    let scale = [sigma_max / 40.0, omega_guess * 0.01];
    let p = nelder_mead(cost, best.0, scale, 400);
    let (coef, ss) = linear_part(t, y, p[0], p[1]).ok_or_else(|| Error::Domain("ring-down fit is degenerate".into()))?;
    let osc: f64 = y.iter().map(|v| (v - coef[0]).powi(2)).sum();
    Ok(RingDownFit {
        sigma: p[0],
        omega: p[1],
        offset: coef[0],
        amplitude: coef[1].hypot(coef[2]),
        relative_residual: (ss / osc.max(f64::MIN_POSITIVE)).sqrt(),
    })
}

fn nelder_mead(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], scale: [f64; 2], iters: usize) -> [f64; 2] {
    let mut s = [x0, [x0[0] + scale[0], x0[1]], [x0[0], x0[1] + scale[1]]];
    let mut v = s.map(&f);
    for _ in 0..iters {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        s = idx.map(|i| s[i]);
        v = idx.map(|i| v[i]);
        let c = [(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0];
        let at = |k: f64| [c[0] + k * (s[2][0] - c[0]), c[1] + k * (s[2][1] - c[1])];
        let r = at(-1.0);
        let fr = f(r);
        if fr < v[0] {
            let e = at(-2.0);
            let fe = f(e);
            (s[2], v[2]) = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < v[1] {
            (s[2], v[2]) = (r, fr);
        } else {
            let k = at(0.5);
            let fk = f(k);
            if fk < v[2] {
                (s[2], v[2]) = (k, fk);
            } else {
                for i in 1..3 {
                    s[i] = [(s[0][0] + s[i][0]) / 2.0, (s[0][1] + s[i][1]) / 2.0];
                    v[i] = f(s[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    s[best]
}
