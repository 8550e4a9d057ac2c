//! Adaptive TR-BDF2 integration for stiff systems.
//!
//! Each step is a trapezoidal stage to `t + γh` followed by a BDF2 stage to
//! `t + h`, with `γ = 2 - √2` so both stages share the iteration matrix
//! `I - (γ/2)·h·J`. The local error estimate is the filtered difference of the
//! three slopes; dense output is cubic Hermite.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{finite_difference_jacobian, DenseLu};

/// A first-order ODE system `dx/dt = f(t, x)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()>;
    /// Differencing steps for the Jacobian.
    fn jacobian_steps(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 1e-7 * v.abs().max(1.0)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct IntegratorOptions {
    pub rtol: f64,
    /// Absolute tolerance per state.
    pub atol: Vec<f64>,
    pub h_initial: Option<f64>,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl IntegratorOptions {
    pub fn new(rtol: f64, atol: Vec<f64>) -> Self {
        Self { rtol, atol, h_initial: None, h_max: f64::INFINITY, h_min: 1e-12, max_steps: 2_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evaluations: usize,
    pub jacobians: usize,
    pub factorizations: usize,
}

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const D: f64 = GAMMA / 2.0;
const NEWTON_MAX: usize = 8;

struct Stepper<'a, S: OdeSystem> {
    sys: &'a S,
    opts: &'a IntegratorOptions,
    n: usize,
    jac: Option<Mat<f64>>,
    jac_fresh: bool,
    lu: Option<(f64, DenseLu)>,
    stats: IntegratorStats,
}

impl<'a, S: OdeSystem> Stepper<'a, S> {
    fn f(&mut self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.stats.rhs_evaluations += 1;
        self.sys.rhs(t, x, out)
    }

    fn refresh_jacobian(&mut self, t: f64, x: &[f64]) -> Result<()> {
        let steps = self.sys.jacobian_steps(x);
        let sys = self.sys;
        let j = finite_difference_jacobian(|y, out| sys.rhs(t, y, out), x, &steps)?;
        self.stats.rhs_evaluations += 2 * self.n + 1;
        self.stats.jacobians += 1;
        self.jac = Some(j);
        self.jac_fresh = true;
        self.lu = None;
        Ok(())
    }

    fn factor(&mut self, h: f64) -> Result<()> {
        if matches!(&self.lu, Some((hh, _)) if *hh == h) {
            return Ok(());
        }
        let j = self.jac.as_ref().expect("Jacobian computed before factorization");
        let m = Mat::<f64>::from_fn(self.n, self.n, |r, c| (if r == c { 1.0 } else { 0.0 }) - D * h * j[(r, c)]);
        self.lu = Some((h, DenseLu::new(&m)?));
        self.stats.factorizations += 1;
        Ok(())
    }

    fn weights(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.opts.atol[i] + self.opts.rtol * a[i].abs().max(b[i].abs())).collect()
    }

    /// Solves `z - d·h·f(t, z) = rhs` by simplified Newton from `z`.
    fn implicit_stage(&mut self, t: f64, h: f64, rhs: &[f64], z: &mut [f64], fz: &mut [f64], w: &[f64]) -> Result<bool> {
        let mut prev_norm = f64::INFINITY;
        for _ in 0..NEWTON_MAX {
            if self.f(t, z, fz).is_err() {
                return Ok(false);
            }
            let res: Vec<f64> = (0..self.n).map(|i| -(z[i] - D * h * fz[i] - rhs[i])).collect();
            let Some(delta) = self.lu.as_ref().unwrap().1.solve(&res) else {
                return Ok(false);
            };
            let norm = rms(&delta, w);
            for i in 0..self.n {
                z[i] += delta[i];
            }
            if !norm.is_finite() {
                return Ok(false);
            }
            if norm < 1e-3 || (prev_norm.is_finite() && norm / prev_norm < 0.9 && norm * norm / (prev_norm - norm) < 0.03) {
                return Ok(self.f(t, z, fz).is_ok());
            }
            if norm > 2.0 * prev_norm {
                return Ok(false);
            }
            prev_norm = norm;
        }
        Ok(false)
    }
}

fn rms(x: &[f64], w: &[f64]) -> f64 {
    (x.iter().zip(w).map(|(a, b)| (a / b).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// One accepted step, with what dense output needs.
#[derive(Clone, Debug)]
pub struct AcceptedStep<'s> {
    pub t0: f64,
    pub t1: f64,
    pub x0: &'s [f64],
    pub x1: &'s [f64],
    pub f0: &'s [f64],
    pub f1: &'s [f64],
}

impl AcceptedStep<'_> {
    /// Cubic Hermite interpolant at `t ∈ [t0, t1]`.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        (0..self.x0.len())
            .map(|i| h00 * self.x0[i] + h10 * h * self.f0[i] + h01 * self.x1[i] + h11 * h * self.f1[i])
            .collect()
    }
}

/// Integrates from `t0` to `t1`, calling `on_step` after every accepted step.
/// Returns the final state and statistics. The interval must be free of
/// discontinuities; callers restart at events.
pub fn integrate_adaptive<S, F>(
    sys: &S,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
    mut on_step: F,
) -> Result<(Vec<f64>, IntegratorStats)>
where
    S: OdeSystem,
    F: FnMut(&AcceptedStep<'_>) -> Result<()>,
{
    let n = sys.dim();
    if x0.len() != n || opts.atol.len() != n {
        return Err(Error::Structural(format!("state of {} / tolerances of {} for a system of {n}", x0.len(), opts.atol.len())));
    }
    if !(opts.rtol > 0.0) || opts.atol.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Domain("integration tolerances must be positive".into()));
    }
    if !(t1 > t0) {
        return Ok((x0.to_vec(), IntegratorStats::default()));
    }
    let mut st = Stepper { sys, opts, n, jac: None, jac_fresh: false, lu: None, stats: IntegratorStats::default() };

    let mut t = t0;
    let mut x = x0.to_vec();
    let mut fx = vec![0.0; n];
    st.f(t, &x, &mut fx)?;
    st.refresh_jacobian(t, &x)?;

    let mut h = match opts.h_initial {
        Some(h) => h,
        None => {
            let w = st.weights(&x, &x);
            let (d0, d1) = (rms(&x, &w), rms(&fx, &w));
            if d0 > 1e-5 && d1 > 1e-5 { (0.01 * d0 / d1).min(1e-3) } else { 1e-6 }
        }
    }
    .min(opts.h_max)
    .min(t1 - t0);

    let k_err = (-3.0 * GAMMA * GAMMA + 4.0 * GAMMA - 2.0) / (12.0 * (2.0 - GAMMA));
    let mut zg = vec![0.0; n];
    let mut fg = vec![0.0; n];
    let mut x1 = vec![0.0; n];
    let mut f1 = vec![0.0; n];

    while t < t1 {
        if st.stats.accepted + st.stats.rejected >= opts.max_steps {
            return Err(Error::StepUnderflow { t, h });
        }
        let last = t + h >= t1 - 1e-12 * t1.abs().max(1.0);
        if last {
            h = t1 - t;
        }
        if h < opts.h_min {
            return Err(Error::StepUnderflow { t, h });
        }
        st.factor(h)?;
        let w = st.weights(&x, &x);

        // Trapezoidal stage to t + γh, predicted by explicit Euler.
        let rhs_g: Vec<f64> = (0..n).map(|i| x[i] + D * h * fx[i]).collect();
        for i in 0..n {
            zg[i] = x[i] + GAMMA * h * fx[i];
        }
        let ok_g = st.implicit_stage(t + GAMMA * h, h, &rhs_g, &mut zg, &mut fg, &w)?;

        // BDF2 stage to t + h, predicted by extrapolation through the two points.
        let mut ok = ok_g;
        if ok {
            let a = 1.0 / (GAMMA * (2.0 - GAMMA));
            let b = (1.0 - GAMMA) * (1.0 - GAMMA) / (GAMMA * (2.0 - GAMMA));
            let rhs1: Vec<f64> = (0..n).map(|i| a * zg[i] - b * x[i]).collect();
            for i in 0..n {
                x1[i] = x[i] + (zg[i] - x[i]) / GAMMA;
            }
            ok = st.implicit_stage(t + h, h, &rhs1, &mut x1, &mut f1, &w)?;
        }

        if !ok {
            st.stats.rejected += 1;
            if !st.jac_fresh {
                st.refresh_jacobian(t, &x)?;
            } else {
                h *= 0.25;
            }
            continue;
        }

        let raw: Vec<f64> = (0..n)
            .map(|i| 2.0 * k_err * h * (fx[i] / GAMMA - fg[i] / (GAMMA * (1.0 - GAMMA)) + f1[i] / (1.0 - GAMMA)))
            .collect();
        let est = st.lu.as_ref().unwrap().1.solve(&raw).unwrap_or_else(|| vec![f64::INFINITY; n]);
        let w = st.weights(&x, &x1);
        let err = rms(&est, &w);

        if err <= 1.0 {
            let step = AcceptedStep { t0: t, t1: t + h, x0: &x, x1: &x1, f0: &fx, f1: &f1 };
            on_step(&step)?;
            st.stats.accepted += 1;
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut x, &mut x1);
            std::mem::swap(&mut fx, &mut f1);
            st.jac_fresh = false;
            let factor = if err > 0.0 { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) } else { 5.0 };
            // Hold the step (and its factorization) when the change would be small.
            if !(0.9..=1.2).contains(&factor) {
                h = (h * factor).min(opts.h_max);
            }
        } else {
            st.stats.rejected += 1;
            let factor = if err.is_finite() { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.9) } else { 0.1 };
            h *= factor;
        }
    }
    Ok((x, st.stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        a: Vec<Vec<f64>>,
    }

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
            for (i, row) in self.a.iter().enumerate() {
                dx[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
            Ok(())
        }
    }

    #[test]
    fn exponential_decay_with_stiff_component() {
        let sys = Linear { a: vec![vec![-1.0, 0.0], vec![0.0, -1e5]] };
        let opts = IntegratorOptions::new(1e-8, vec![1e-10; 2]);
        let (x, stats) = integrate_adaptive(&sys, &[1.0, 1.0], 0.0, 2.0, &opts, |_| Ok(())).unwrap();
        assert!((x[0] - (-2.0f64).exp()).abs() < 1e-6, "{}", x[0]);
        assert!(x[1].abs() < 1e-8);
        // Stiff component must not force explicit-size steps.
        assert!(stats.accepted < 5000, "{stats:?}");
    }

    fn damped_oscillator_error(rtol: f64, h_max: Option<f64>) -> (f64, usize) {
        let w = 2.0 * std::f64::consts::PI * 3.0;
        let sys = Linear { a: vec![vec![-0.2, w], vec![-w, -0.2]] };
        let mut opts = IntegratorOptions::new(rtol, vec![rtol * 1e-2; 2]);
        if let Some(h) = h_max {
            opts.h_max = h;
            opts.h_initial = Some(h);
        }
        let (x, stats) = integrate_adaptive(&sys, &[1.0, 0.0], 0.0, 1.0, &opts, |_| Ok(())).unwrap();
        let decay = (-0.2f64).exp();
        ((x[0] - decay * w.cos()).hypot(x[1] + decay * w.sin()), stats.accepted)
    }

    #[test]
    fn oscillator_reproduced_to_tolerance() {
        let (err, _) = damped_oscillator_error(1e-8, None);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn fixed_step_is_second_order() {
        // Loose tolerances leave the step pinned at h_max.
        let (e1, n1) = damped_oscillator_error(1e3, Some(1e-2));
        let (e2, n2) = damped_oscillator_error(1e3, Some(5e-3));
        assert!(n2 >= 2 * n1 - 1);
        let ratio = e1 / e2;
        assert!((3.6..4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn global_error_tracks_tolerance() {
        // Per-step control of an order-2 method: global error ∝ rtol^(2/3).
        let (coarse, _) = damped_oscillator_error(1e-6, None);
        let (fine, _) = damped_oscillator_error(1e-7, None);
        let ratio = coarse / fine;
        assert!((2.5..8.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn dense_output_and_step_callback() {
        let sys = Linear { a: vec![vec![-2.0]] };
        let opts = IntegratorOptions::new(1e-8, vec![1e-12]);
        let mut last_t = 0.0;
        let mut max_err = 0.0f64;
        integrate_adaptive(&sys, &[1.0], 0.0, 1.0, &opts, |s| {
            assert!(s.t0 == last_t && s.t1 > s.t0);
            last_t = s.t1;
            let tm = 0.5 * (s.t0 + s.t1);
            max_err = max_err.max((s.interpolate(tm)[0] - (-2.0 * tm).exp()).abs());
            Ok(())
        })
        .unwrap();
        assert_eq!(last_t, 1.0);
        assert!(max_err < 1e-6, "{max_err}");
    }

    struct Blowup;

    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
            dx[0] = x[0] * x[0];
            if dx[0].is_finite() { Ok(()) } else { Err(Error::NonFinite { block: "test", t: 0.0 }) }
        }
    }

    #[test]
    fn finite_time_blowup_underflows() {
        let opts = IntegratorOptions::new(1e-6, vec![1e-9]);
        let r = integrate_adaptive(&Blowup, &[1.0], 0.0, 2.0, &opts, |_| Ok(()));
        assert!(matches!(r, Err(Error::StepUnderflow { .. })), "{r:?}");
    }
}
