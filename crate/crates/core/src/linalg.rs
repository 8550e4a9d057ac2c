//! Dense linear algebra helpers on top of faer.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::error::{Error, Result};

/// Central-difference Jacobian of `f` at `x` with per-entry steps.
pub fn finite_difference_jacobian<F>(mut f: F, x: &[f64], steps: &[f64]) -> Result<Mat<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x.len();
    if steps.len() != n {
        return Err(Error::Structural(format!("{} differencing steps for {n} states", steps.len())));
    }
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    f(x, &mut fp)?;
    let m = fp.len();
    fm.resize(m, 0.0);
    let mut jac = Mat::<f64>::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = steps[j];
        xp[j] = x[j] + h;
        f(&xp, &mut fp)?;
        xp[j] = x[j] - h;
        f(&xp, &mut fm)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// LU factorization with partial pivoting of a square matrix.
pub struct DenseLu {
    lu: PartialPivLu<f64>,
    n: usize,
}

impl DenseLu {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Structural(format!("LU of a {}×{} matrix", a.nrows(), a.ncols())));
        }
        Ok(Self { lu: a.partial_piv_lu(), n: a.nrows() })
    }

    /// Solves `A x = b`; a non-finite result signals a singular matrix.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| if m.is_nan() || v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let m = [[1.0, -2.0, 0.5], [3.0, 4.0, -1.0], [0.0, 2.5, 7.0]];
        let f = |x: &[f64], y: &mut [f64]| {
            for i in 0..3 {
                y[i] = (0..3).map(|j| m[i][j] * x[j]).sum();
            }
            Ok(())
        };
        let j = finite_difference_jacobian(f, &[1.0, -3.0, 2.0], &[1e-3; 3]).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert!((j[(i, k)] - m[i][k]).abs() <= 1e-8 * m[i][k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn lu_solves_and_flags_singular() {
        let a = Mat::<f64>::from_fn(2, 2, |i, j| [[2.0, 1.0], [1.0, 3.0]][i][j]);
        let x = DenseLu::new(&a).unwrap().solve(&[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        let s = Mat::<f64>::from_fn(2, 2, |i, _| i as f64);
        assert!(DenseLu::new(&s).unwrap().solve(&[1.0, 1.0]).is_none());
    }

    #[test]
    fn inf_norm_propagates_nan() {
        assert_eq!(norm_inf(&[1.0, -3.0]), 3.0);
        assert!(norm_inf(&[1.0, f64::NAN]).is_nan());
    }
}
