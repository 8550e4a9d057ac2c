//! Operating point by damped Newton iteration on the flat state derivative.

use crate::error::{Error, Result};
use crate::gfc::LimiterBranch;
use crate::linalg::{finite_difference_jacobian, norm2, norm_inf, DenseLu};
use crate::params::LimiterMode;
use crate::system::{SystemModel, SystemState, STATE_LEN, THETA_INDEX};

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Convergence threshold on `max_i |f_i| / scale_i`.
    pub tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub state: SystemState<f64>,
    pub iterations: usize,
    /// Final scaled residual.
    pub residual: f64,
    /// Instantaneous converter power at the operating point (W).
    pub p_c: f64,
    pub branch: LimiterBranch,
}

/// Differencing step per state: `max(1e-6·scale, 1e-9)`.
pub fn differencing_steps(scales: &[f64]) -> Vec<f64> {
    scales.iter().map(|s| (1e-6 * s).max(1e-9)).collect()
}

/// Solves `ds/dt = 0` for a fault-free model.
///
/// With droop disabled the angle has no dynamics and is held at the guess. When no
/// guess is given in that case, the droop-enabled operating point supplies the angle,
/// so both modes share the same steady state.
pub fn find_equilibrium(
    model: &SystemModel<f64>,
    guess: Option<&SystemState<f64>>,
    opts: &NewtonOptions,
) -> Result<Equilibrium> {
    if model.bus.faulted {
        return Err(Error::Domain("equilibrium requires a fault-free network".into()));
    }
    let start = match guess {
        Some(g) => *g,
        None if !model.gfc.droop => {
            let mut with_droop = model.clone();
            with_droop.gfc.droop = true;
            find_equilibrium(&with_droop, None, opts)?.state
        }
        None => SystemState::flat_start(&model.gfc),
    };

    // First pass without the limiter: the unlimited equations are smooth. When the
    // limiter is inactive at the result, both systems share the operating point.
    let mut smooth = model.clone();
    smooth.gfc.limiter = LimiterMode::None;
    let mut eq = newton(&smooth, &start, opts)?;
    let branch = model.limiter_branch(&eq.state)?;
    if branch.is_saturated() {
        eq = newton(model, &eq.state, opts)?;
    }
    let ev = model.evaluate(0.0, &eq.state)?;
    eq.p_c = ev.gfc.p_c;
    eq.branch = ev.gfc.branch;
    Ok(eq)
}

fn newton(model: &SystemModel<f64>, start: &SystemState<f64>, opts: &NewtonOptions) -> Result<Equilibrium> {
    let scales = model.scales();
    let free: Vec<usize> = (0..STATE_LEN).filter(|&i| model.gfc.droop || i != THETA_INDEX).collect();
    let mut x = start.pack();

    let residual = |x: &[f64], r: &mut [f64]| -> Result<()> {
        let mut dx = vec![0.0; STATE_LEN];
        model.derivatives(0.0, x, &mut dx)?;
        for (k, &i) in free.iter().enumerate() {
            r[k] = dx[i] / scales[i];
        }
        Ok(())
    };
    let n = free.len();
    let mut r = vec![0.0; n];
    residual(&x, &mut r)?;
    let steps = differencing_steps(&scales);

    for iteration in 0..opts.max_iterations {
        let res = norm_inf(&r);
        if res.is_nan() {
            return Err(Error::NoConvergence { iterations: iteration, residual: res });
        }
        if res < opts.tolerance {
            return Ok(finish(x, iteration, res));
        }
        // Jacobian in the scaled variables z = x / scale over the free states.
        let sub_steps: Vec<f64> = free.iter().map(|&i| steps[i]).collect();
        let jac = finite_difference_jacobian(
            |z: &[f64], out: &mut [f64]| {
                let mut full = x.clone();
                for (k, &i) in free.iter().enumerate() {
                    full[i] = z[k];
                }
                residual(&full, out)
            },
            &free.iter().map(|&i| x[i]).collect::<Vec<_>>(),
            &sub_steps,
        )?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = DenseLu::new(&jac)?.solve(&neg).ok_or(Error::SingularJacobian { iteration })?;

        let base = norm2(&r);
        let mut lambda = 1.0;
        let mut trial = x.clone();
        let mut r_trial = vec![0.0; n];
        loop {
            for (k, &i) in free.iter().enumerate() {
                trial[i] = x[i] + lambda * dx[k];
            }
            let ok = residual(&trial, &mut r_trial).is_ok() && norm2(&r_trial) <= (1.0 - 1e-4 * lambda) * base;
            if ok || lambda < 1e-4 {
                break;
            }
            lambda *= 0.5;
        }
        if residual(&trial, &mut r_trial).is_err() {
            return Err(Error::NoConvergence { iterations: iteration + 1, residual: f64::NAN });
        }
        x = trial;
        r = r_trial;
    }
    Err(Error::NoConvergence { iterations: opts.max_iterations, residual: norm_inf(&r) })
}

fn finish(x: Vec<f64>, iterations: usize, residual: f64) -> Equilibrium {
    Equilibrium {
        state: SystemState::unpack(&x).expect("packed state has the right length"),
        iterations,
        residual,
        p_c: f64::NAN,
        branch: LimiterBranch::Pass,
    }
}
