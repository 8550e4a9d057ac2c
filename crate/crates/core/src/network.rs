//! Transformer, series-compensated line, resistive load and faults, modelled as
//! order +1 dynamic phasors of positive-, negative- and zero-sequence signals.
//!
//! Only the +1 order is stored. Order -1 follows from pn-pairing:
//! `⟨x_p⟩₋₁ = conj⟨x_n⟩₁`, `⟨x_n⟩₋₁ = conj⟨x_p⟩₁`, `⟨x_z⟩₋₁ = conj⟨x_z⟩₁`.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{NetworkParams, FAULT_RESISTANCE, OPEN_PHASE_RESISTANCE};
use crate::scalar::{complex_is_finite, Scalar};

/// Order +1 phasors of a three-phase quantity in sequence components.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pnz<T> {
    pub p: Complex<T>,
    pub n: Complex<T>,
    pub z: Complex<T>,
}

impl<T: Scalar> Pnz<T> {
    pub fn new(p: Complex<T>, n: Complex<T>, z: Complex<T>) -> Self {
        Self { p, n, z }
    }

    pub fn zero() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        Self { p: z, n: z, z }
    }

    pub fn to_array(self) -> [Complex<T>; 3] {
        [self.p, self.n, self.z]
    }

    pub fn from_array(a: [Complex<T>; 3]) -> Self {
        Self { p: a[0], n: a[1], z: a[2] }
    }

    pub fn map(self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        Self { p: f(self.p), n: f(self.n), z: f(self.z) }
    }

    pub fn max_abs(self) -> T {
        self.p.norm().max(self.n.norm()).max(self.z.norm())
    }

    pub fn is_finite(self) -> bool {
        complex_is_finite(self.p) && complex_is_finite(self.n) && complex_is_finite(self.z)
    }
}

impl<T: Scalar> Add for Pnz<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { p: self.p + o.p, n: self.n + o.n, z: self.z + o.z }
    }
}

impl<T: Scalar> Sub for Pnz<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { p: self.p - o.p, n: self.n - o.n, z: self.z - o.z }
    }
}

impl<T: Scalar> Mul<Complex<T>> for Pnz<T> {
    type Output = Self;
    fn mul(self, k: Complex<T>) -> Self {
        self.map(|x| x * k)
    }
}

impl<T: Scalar> Mul<T> for Pnz<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        self.map(|x| x * k)
    }
}

/// Network dynamic states.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NetworkState<T> {
    /// Line current, load bus towards the source.
    pub i2: Pnz<T>,
    /// Transformer current, converter towards the load bus.
    pub i: Pnz<T>,
    /// Series capacitor voltage.
    pub vc2: Pnz<T>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn is_finite(&self) -> bool {
        self.i2.is_finite() && self.i.is_finite() && self.vc2.is_finite()
    }
}

/// Dense 3×3 complex matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T>(pub [[Complex<T>; 3]; 3]);

impl<T: Scalar> Mat3<T> {
    pub fn zero() -> Self {
        Self([[Complex::new(T::zero(), T::zero()); 3]; 3])
    }

    pub fn identity() -> Self {
        Self::diag([T::one(); 3])
    }

    pub fn diag(d: [T; 3]) -> Self {
        let mut m = Self::zero();
        for (i, v) in d.into_iter().enumerate() {
            m.0[i][i] = Complex::new(v, T::zero());
        }
        m
    }

    pub fn from_real(r: [[T; 3]; 3]) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = Complex::new(r[i][j], T::zero());
            }
        }
        m
    }

    pub fn conj_transpose(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn mul_vec(&self, x: [Complex<T>; 3]) -> [Complex<T>; 3] {
        let mut y = [Complex::new(T::zero(), T::zero()); 3];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.0[i][0] * x[0] + self.0[i][1] * x[1] + self.0[i][2] * x[2];
        }
        y
    }

    pub fn scale(&self, k: T) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|x| *x = *x * k);
        m
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = m.0[i][j] + o.0[i][j];
            }
        }
        m
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = (0..3).fold(Complex::new(T::zero(), T::zero()), |acc, k| acc + self.0[i][k] * o.0[k][j]);
            }
        }
        m
    }

    pub fn determinant(&self) -> Complex<T> {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Inverse by the adjugate.
    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        // Hadamard bound on |det|.
        let bound = self.0.iter().fold(T::one(), |acc, row| {
            acc * row.iter().map(|x| x.norm_sqr()).fold(T::zero(), |a, b| a + b).sqrt()
        });
        if !(det.norm() > T::epsilon() * bound) {
            return Err(Error::Domain("singular 3×3 matrix".into()));
        }
        let a = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut m = Self(adj);
        m.0.iter_mut().flatten().for_each(|x| *x = *x / det);
        Ok(m)
    }
}

/// Power-invariant sequence matrix; `x_abc = S·x_pnz` with columns (p, n, z).
pub fn sequence_matrix<T: Scalar>() -> Mat3<T> {
    let k = T::one() / T::lit(3.0).sqrt();
    let third = T::TAU() / T::lit(3.0);
    let a = Complex::from_polar(k, third);
    let a2 = Complex::from_polar(k, -third);
    let one = Complex::new(k, T::zero());
    Mat3([[one, one, one], [a2, a, one], [a, a2, one]])
}

/// Map an abc-frame matrix into sequence components, `S⁻¹·M·S`.
pub fn fault_matrix_pnz<T: Scalar>(r_abc: &Mat3<T>) -> Mat3<T> {
    let s = sequence_matrix::<T>();
    s.conj_transpose().mul(r_abc).mul(&s)
}

/// Instantaneous abc values of a three-phase quantity from its order ±1 sequence
/// phasors at phase angle `ω_s·t`.
pub fn sequence_to_abc<T: Scalar>(x: Pnz<T>, phase: T) -> [T; 3] {
    let e = Complex::from_polar(T::one(), phase);
    // p(t) = p₁e^{jωt} + conj(n₁)e^{-jωt}; n(t) = conj(p(t)); z(t) = 2·Re(z₁e^{jωt})
    let p_t = x.p * e + x.n.conj() * e.conj();
    let z_t = T::lit(2.0) * (x.z * e).re;
    let s = sequence_matrix::<T>();
    let zk = s.0[0][2].re;
    [0, 1, 2].map(|r| T::lit(2.0) * (s.0[r][0] * p_t).re + zk * z_t)
}

/// Sequence values `S⁻¹·x_abc` of an instantaneous abc sample (complex p, n, z).
pub fn abc_to_sequence<T: Scalar>(x: [T; 3]) -> [Complex<T>; 3] {
    let s = sequence_matrix::<T>().conj_transpose();
    s.mul_vec(x.map(|v| Complex::new(v, T::zero())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// Phase a to ground.
    LineToGround,
    /// Phases a and b to ground.
    DoubleLineToGround,
    /// All three phases to ground.
    ThreePhaseToGround,
}

impl std::str::FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lg" | "l-g" | "line-to-ground" => Ok(Self::LineToGround),
            "llg" | "ll-g" | "double-line-to-ground" => Ok(Self::DoubleLineToGround),
            "lllg" | "lll-g" | "three-phase-to-ground" => Ok(Self::ThreePhaseToGround),
            other => Err(Error::Domain(format!("unknown fault kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LineToGround => "L-G",
            Self::DoubleLineToGround => "LL-G",
            Self::ThreePhaseToGround => "LLL-G",
        })
    }
}

/// A fault at the load bus, active on `[t_apply, t_clear)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultSpec<T> {
    pub kind: FaultKind,
    pub r_fault: T,
    pub r_ground: T,
    pub t_apply: T,
    pub t_clear: T,
}

impl<T: Scalar> FaultSpec<T> {
    pub fn new(kind: FaultKind, t_apply: T, t_clear: T) -> Self {
        Self { kind, r_fault: T::lit(FAULT_RESISTANCE), r_ground: T::zero(), t_apply, t_clear }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_fault > T::zero()) || !(self.r_ground >= T::zero()) {
            return Err(Error::Domain("fault resistances must be positive".into()));
        }
        if !(self.t_clear > self.t_apply) || !(self.t_apply >= T::zero()) {
            return Err(Error::Domain(format!(
                "fault window [{}, {}) must be non-empty and start at t ≥ 0",
                self.t_apply, self.t_clear
            )));
        }
        Ok(())
    }

    pub fn is_active(&self, t: T) -> bool {
        t >= self.t_apply && t < self.t_clear
    }

    /// Per-phase fault resistances; unfaulted phases get a large stand-in value.
    pub fn phase_resistances(&self) -> [T; 3] {
        let open = T::lit(OPEN_PHASE_RESISTANCE);
        let rf = self.r_fault;
        match self.kind {
            FaultKind::LineToGround => [rf, open, open],
            FaultKind::DoubleLineToGround => [rf, rf, open],
            FaultKind::ThreePhaseToGround => [rf, rf, rf],
        }
    }

    /// Inverse of the abc resistance matrix by Sherman-Morrison, which stays accurate
    /// when open phases make the matrix badly scaled.
    pub fn abc_conductance(&self) -> Mat3<T> {
        let g = self.phase_resistances().map(|r| r.recip());
        let denom = T::one() + self.r_ground * (g[0] + g[1] + g[2]);
        let mut m = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = -self.r_ground * g[i] * g[j] / denom;
            }
            m[i][i] = m[i][i] + g[i];
        }
        Mat3::from_real(m)
    }

    /// abc-to-ground resistance matrix: `diag(R_a, R_b, R_c) + R_g·1`.
    pub fn abc_matrix(&self) -> Mat3<T> {
        let r = self.phase_resistances();
        let mut m = [[self.r_ground; 3]; 3];
        for i in 0..3 {
            m[i][i] = m[i][i] + r[i];
        }
        Mat3::from_real(m)
    }
}

/// Algebraic load-bus relation `v1 = Z·(i - i2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadBus<T> {
    pub impedance: Mat3<T>,
    pub faulted: bool,
}

impl<T: Scalar> LoadBus<T> {
    pub fn healthy(r_load: T) -> Self {
        Self { impedance: Mat3::identity().scale(r_load), faulted: false }
    }

    /// Load in parallel with the fault, `(I/R_L + R_f,pnz⁻¹)⁻¹`.
    pub fn with_fault(r_load: T, fault: &FaultSpec<T>) -> Result<Self> {
        let g_fault = fault_matrix_pnz(&fault.abc_conductance());
        let y = Mat3::identity().scale(r_load.recip()).add(&g_fault);
        Ok(Self { impedance: y.inverse()?, faulted: true })
    }

    pub fn voltage(&self, injection: Pnz<T>) -> Pnz<T> {
        Pnz::from_array(self.impedance.mul_vec(injection.to_array()))
    }
}

/// Load-bus voltage `v1` given the transformer and line currents.
pub fn load_bus_voltage<T: Scalar>(bus: &LoadBus<T>, i: Pnz<T>, i2: Pnz<T>) -> Pnz<T> {
    bus.voltage(i - i2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkEvaluation<T> {
    pub deriv: NetworkState<T>,
    pub v1: Pnz<T>,
}

/// Network derivatives for a given converter terminal voltage `v` (order +1 sequence phasors).
/// The transformer blocks zero-sequence current, so `d⟨i_z⟩₁/dt` is identically zero.
pub fn network_derivatives<T: Scalar>(
    x: &NetworkState<T>,
    v: Pnz<T>,
    bus: &LoadBus<T>,
    p: &NetworkParams<T>,
) -> NetworkEvaluation<T> {
    let jw = Complex::new(T::zero(), p.omega_s);
    let v1 = load_bus_voltage(bus, x.i, x.i2);
    let e_b = Pnz::new(p.e_b, Complex::new(T::zero(), T::zero()), Complex::new(T::zero(), T::zero()));

    let di2 = (v1 - x.vc2 - e_b - x.i2 * p.r2 - x.i2 * (jw * p.l2)) * p.l2.recip();
    let mut di = (v - v1 - x.i * (jw * p.l1)) * p.l1.recip();
    di.z = Complex::new(T::zero(), T::zero());
    let dvc2 = (x.i2 - x.vc2 * (jw * p.c2)) * p.c2.recip();

    NetworkEvaluation { deriv: NetworkState { i2: di2, i: di, vc2: dvc2 }, v1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    type C = Complex<f64>;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn close(a: &Mat3<f64>, b: &Mat3<f64>, tol: f64) -> bool {
        a.0.iter().flatten().zip(b.0.iter().flatten()).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn sequence_matrix_is_unitary() {
        let s = sequence_matrix::<f64>();
        assert!(close(&s.conj_transpose().mul(&s), &Mat3::identity(), 1e-14));
        // A balanced positive-sequence abc set maps onto p only.
        let a = C::from_polar(1.0, -std::f64::consts::TAU / 3.0);
        let abc = [c(1.0, 0.0), a, a * a];
        let pnz = s.conj_transpose().mul_vec(abc);
        assert_abs_diff_eq!(pnz[0].norm(), 3f64.sqrt(), epsilon = 1e-12);
        assert!(pnz[1].norm() < 1e-12 && pnz[2].norm() < 1e-12);
    }

    #[test]
    fn abc_reconstruction_matches_phasor_sums() {
        use crate::dp::{reconstruct, Conjugacy, DpSet};
        let x = Pnz::new(c(100.0, -30.0), c(12.0, 4.0), c(-5.0, 8.0));
        let w = 377.0;
        let t = 0.0123;
        let p = DpSet::with_conjugacy(Conjugacy::PnPaired, [(1, x.p), (-1, x.n.conj())]);
        let n = DpSet::with_conjugacy(Conjugacy::PnPaired, [(1, x.n), (-1, x.p.conj())]);
        let z = DpSet::real_signal([(1, x.z)]);
        let seq = [reconstruct(&p, t, w), reconstruct(&n, t, w), reconstruct(&z, t, w)];
        let abc = sequence_matrix::<f64>().mul_vec(seq);
        let got = sequence_to_abc(x, w * t);
        for k in 0..3 {
            assert!(abc[k].im.abs() < 1e-9);
            assert_abs_diff_eq!(abc[k].re, got[k], epsilon = 1e-9);
        }
        let back = abc_to_sequence(got);
        for k in 0..3 {
            assert_abs_diff_eq!((back[k] - seq[k]).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn balanced_fault_is_diagonal() {
        let f = FaultSpec::new(FaultKind::ThreePhaseToGround, 0.1, 0.18);
        let r = fault_matrix_pnz(&f.abc_matrix());
        assert!(close(&r, &Mat3::identity().scale(FAULT_RESISTANCE), 1e-15));
    }

    #[test]
    fn single_phase_fault_couples_all_sequences() {
        let f = FaultSpec::new(FaultKind::LineToGround, 0.1, 0.18);
        let r = fault_matrix_pnz(&f.abc_matrix());
        let avg = (FAULT_RESISTANCE + 2.0 * OPEN_PHASE_RESISTANCE) / 3.0;
        for k in 0..3 {
            assert_abs_diff_eq!(r.0[k][k].re, avg, epsilon = 1e-6);
        }
        assert!(r.0[0][1].norm() > 1e5);
    }

    #[test]
    fn conductance_inverts_resistance() {
        for kind in [FaultKind::LineToGround, FaultKind::DoubleLineToGround, FaultKind::ThreePhaseToGround] {
            let f = FaultSpec { r_ground: 0.3, ..FaultSpec::new(kind, 0.1, 0.18) };
            let prod = f.abc_matrix().mul(&f.abc_conductance());
            assert!(close(&prod, &Mat3::identity(), 1e-9), "{kind}");
        }
    }

    #[test]
    fn ground_resistance_lands_in_zero_sequence() {
        let r_g = 0.5;
        let r = fault_matrix_pnz(&Mat3::from_real([[r_g; 3]; 3]));
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == 2 && j == 2 { 3.0 * r_g } else { 0.0 };
                assert_abs_diff_eq!((r.0[i][j] - c(expected, 0.0)).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn sequence_fault_matrix_matches_brute_force_conjugation() {
        // Direct sums with α computed independently of `sequence_matrix`.
        let f = FaultSpec::new(FaultKind::LineToGround, 0.1, 0.18);
        let r = f.phase_resistances();
        let a = C::new(-0.5, 3f64.sqrt() / 2.0);
        let t = [[c(1.0, 0.0); 3], [a * a, a, c(1.0, 0.0)], [a, a * a, c(1.0, 0.0)]];
        let got = fault_matrix_pnz(&f.abc_matrix());
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = c(0.0, 0.0);
                for (m, rm) in r.iter().enumerate() {
                    acc += t[m][i].conj() * *rm * t[m][j] / 3.0;
                }
                assert!((acc - got.0[i][j]).norm() <= 1e-12 * acc.norm().max(1.0));
            }
        }
    }

    #[test]
    fn bolted_fault_collapses_bus_voltage() {
        let f = FaultSpec { r_fault: 1e-6, ..FaultSpec::new(FaultKind::ThreePhaseToGround, 0.1, 0.18) };
        let inj = Pnz::new(c(1e3, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        let faulted = LoadBus::with_fault(4.0, &f).unwrap().voltage(inj);
        let healthy = LoadBus::healthy(4.0).voltage(inj);
        assert!(faulted.max_abs() < 1e-3 * healthy.max_abs());
    }

    #[test]
    fn source_balanced_by_bus_voltage() {
        let p = NetworkParams::<f64>::default();
        let zero = Pnz::zero();
        // Zero currents and capacitor voltage with e_b = v1 requires a bus that reproduces e_b.
        let x = NetworkState { i2: zero, i: zero, vc2: zero };
        let ev = network_derivatives(&x, zero, &LoadBus::healthy(p.r_load), &p);
        assert_abs_diff_eq!((ev.deriv.i2.p + p.e_b / p.l2).norm(), 0.0, epsilon = 1e-9);
        let p_src = NetworkParams { e_b: c(0.0, 0.0), ..p.clone() };
        let i2 = Pnz::new(c(100.0, -20.0), c(0.0, 0.0), c(0.0, 0.0));
        let ev = network_derivatives(&NetworkState { i2, i: zero, vc2: zero }, zero, &LoadBus::healthy(0.0), &NetworkParams { r2: 0.0, ..p_src });
        let shift = i2 * C::new(0.0, -p.omega_s);
        assert!((ev.deriv.i2 - shift).max_abs() < 1e-9 * shift.max_abs());
    }

    #[test]
    fn open_line_capacitor_only_rotates() {
        let p = NetworkParams::<f64>::default();
        let vc2 = Pnz::new(c(3e3, 4e3), c(-1e3, 0.0), c(0.0, 200.0));
        let x = NetworkState { i2: Pnz::zero(), i: Pnz::zero(), vc2 };
        let ev = network_derivatives(&x, Pnz::zero(), &LoadBus::healthy(p.r_load), &p);
        for (dv, v) in ev.deriv.vc2.to_array().iter().zip(vc2.to_array()) {
            assert_abs_diff_eq!((dv - v * C::new(0.0, -p.omega_s)).norm(), 0.0, epsilon = 1e-6);
            // d|v|²/dt = 2 Re(conj(v)·dv) = 0
            assert!((v.conj() * dv).re.abs() < 1e-6 * v.norm_sqr().max(1.0));
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let m = Mat3([
            [c(2.0, 1.0), c(0.5, 0.0), c(0.0, -1.0)],
            [c(1.0, 0.0), c(3.0, 0.0), c(0.2, 0.3)],
            [c(0.0, 0.0), c(-1.0, 1.0), c(4.0, -2.0)],
        ]);
        assert!(close(&m.mul(&m.inverse().unwrap()), &Mat3::identity(), 1e-14));
        assert!(Mat3::<f64>::zero().inverse().is_err());
    }

    #[test]
    fn healthy_bus_is_the_load_resistance() {
        let bus = LoadBus::healthy(4.0);
        let v1 = load_bus_voltage(&bus, Pnz::new(c(100.0, 5.0), c(1.0, 0.0), c(0.0, 0.0)), Pnz::zero());
        assert_eq!(v1.p, c(400.0, 20.0));
        let same = Pnz::new(c(7.0, -2.0), c(1.0, 1.0), c(0.5, 0.0));
        assert_eq!(load_bus_voltage(&bus, same, same), Pnz::zero());
    }

    #[test]
    fn three_phase_fault_bus_is_parallel_resistance() {
        let f = FaultSpec::new(FaultKind::ThreePhaseToGround, 0.1, 0.18);
        let bus = LoadBus::with_fault(4.0, &f).unwrap();
        let par = 4.0 * FAULT_RESISTANCE / (4.0 + FAULT_RESISTANCE);
        let v1 = bus.voltage(Pnz::new(c(1e4, 0.0), c(0.0, 0.0), c(0.0, 0.0)));
        assert_abs_diff_eq!(v1.p.re, par * 1e4, epsilon = 1e-9);
        assert!(v1.n.norm() < 1e-9 && v1.z.norm() < 1e-9);
    }

    #[test]
    fn single_phase_fault_grounds_phase_a() {
        // Balanced injection; phase a voltage collapses to about R_f·i_a.
        let f = FaultSpec::new(FaultKind::LineToGround, 0.1, 0.18);
        let bus = LoadBus::with_fault(4.0, &f).unwrap();
        let inj = Pnz::new(c(1e4, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        let s = sequence_matrix::<f64>();
        let v_abc = s.mul_vec(bus.voltage(inj).to_array());
        let i_abc = s.mul_vec(inj.to_array());
        assert!(v_abc[0].norm() < 1.01 * FAULT_RESISTANCE * i_abc[0].norm());
        assert_abs_diff_eq!(v_abc[1].norm() / i_abc[1].norm(), 4.0, epsilon = 1e-3);
    }

    #[test]
    fn phasor_steady_state_has_zero_derivative() {
        // Independent nodal solve of the 60 Hz circuit for a given converter voltage.
        let p = NetworkParams::<f64>::default();
        let w = p.omega_s;
        let j = c(0.0, 1.0);
        let v = c(20.6e3 / 2f64.sqrt(), 3.0e3);
        let z1 = j * w * p.l1;
        let z2 = p.r2 + j * w * p.l2 + 1.0 / (j * w * p.c2);
        let y = 1.0 / z1 + 1.0 / p.r_load + 1.0 / z2;
        let v1 = (v / z1 + p.e_b / z2) / y;
        let i = (v - v1) / z1;
        let i2 = (v1 - p.e_b) / z2;
        let vc2 = i2 / (j * w * p.c2);
        let zero = c(0.0, 0.0);
        let x = NetworkState {
            i2: Pnz::new(i2, zero, zero),
            i: Pnz::new(i, zero, zero),
            vc2: Pnz::new(vc2, zero, zero),
        };
        let ev = network_derivatives(&x, Pnz::new(v, zero, zero), &LoadBus::healthy(p.r_load), &p);
        assert_abs_diff_eq!((ev.v1.p - v1).norm(), 0.0, epsilon = 1e-6);
        assert!(ev.deriv.i.max_abs() < 1e-6 * i.norm() / p.l1);
        assert!(ev.deriv.i2.max_abs() < 1e-6 * i2.norm() / p.l2);
        assert!(ev.deriv.vc2.max_abs() < 1e-6 * vc2.norm() / p.c2 * 1e-3);
    }

    #[test]
    fn fault_spec_validation_and_parsing() {
        assert!(FaultSpec::new(FaultKind::LineToGround, 0.2, 0.1).validate().is_err());
        assert!(FaultSpec::new(FaultKind::LineToGround, 0.1, 0.18).validate().is_ok());
        assert_eq!("LL-G".parse::<FaultKind>().unwrap(), FaultKind::DoubleLineToGround);
        assert!("xx".parse::<FaultKind>().is_err());
        let f = FaultSpec::new(FaultKind::LineToGround, 0.1, 0.18);
        assert!(!f.is_active(0.0999) && f.is_active(0.1) && !f.is_active(0.18));
    }

    fn arb_c() -> impl Strategy<Value = C> {
        (-1e4..1e4f64, -1e4..1e4f64).prop_map(|(a, b)| c(a, b))
    }

    fn arb_pnz() -> impl Strategy<Value = Pnz<f64>> {
        (arb_c(), arb_c(), arb_c()).prop_map(|(p, n, z)| Pnz::new(p, n, z))
    }

    proptest! {
        #[test]
        fn faulted_bus_is_passive(inj in arb_pnz(), kind in prop_oneof![
            Just(FaultKind::LineToGround), Just(FaultKind::DoubleLineToGround), Just(FaultKind::ThreePhaseToGround)
        ]) {
            let bus = LoadBus::with_fault(4.0, &FaultSpec::new(kind, 0.1, 0.18)).unwrap();
            let v = bus.voltage(inj);
            let power: f64 = v.to_array().iter().zip(inj.to_array()).map(|(a, b)| (a * b.conj()).re).sum();
            prop_assert!(power >= -1e-9 * inj.max_abs().powi(2));
            // Power drawn never exceeds what the load alone would take.
            let healthy: f64 = 4.0 * inj.to_array().iter().map(|x| x.norm_sqr()).sum::<f64>();
            prop_assert!(power <= healthy * (1.0 + 1e-12));
        }

        #[test]
        fn sequence_fault_matrix_is_hermitian(ra in 1e-4..1e6f64, rb in 1e-4..1e6f64, rc in 1e-4..1e6f64, rg in 0.0..10.0f64) {
            let mut m = [[rg; 3]; 3];
            m[0][0] += ra;
            m[1][1] += rb;
            m[2][2] += rc;
            let r = fault_matrix_pnz(&Mat3::from_real(m));
            let scale = ra.max(rb).max(rc).max(rg);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((r.0[i][j] - r.0[j][i].conj()).norm() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn zero_sequence_transformer_current_is_frozen(i2 in arb_pnz(), i in arb_pnz(), vc in arb_pnz(), v in arb_pnz()) {
            let p = NetworkParams::<f64>::default();
            let ev = network_derivatives(&NetworkState { i2, i, vc2: vc }, v, &LoadBus::healthy(4.0), &p);
            prop_assert_eq!(ev.deriv.i.z, c(0.0, 0.0));
        }
    }
}
