//! Dynamic-phasor algebra.
//!
//! A dynamic phasor `⟨x⟩_k(t)` is the k-th complex Fourier coefficient of a
//! signal over the sliding window `(t - T, t]`, with `T = 2π/ω_s`. This module
//! holds the coefficient container [`DpSet`], the frame rotations between the
//! converter dq frame, the synchronous DQ frame and the pnz sequence frame,
//! coefficient products, waveform reconstruction and windowed extraction.
//!
//! All transforms use the power-invariant convention: the DQ magnitude of a
//! balanced set equals its line-to-line RMS value and `p = v_d i_d + v_q i_q`.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Order set of converter dq/DQ signals.
pub const DQ_ORDERS: [i32; 3] = [-2, 0, 2];
/// Order set of network pnz signals.
pub const PNZ_ORDERS: [i32; 2] = [-1, 1];

/// Relation between the positive and negative orders of a coefficient set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conjugacy {
    /// Real signal: `⟨x⟩_{-k} = ⟨x⟩_k*`. Only `k >= 0` is stored.
    RealSignal,
    /// One half of a p/n pair: `⟨x_n⟩_{-k} = ⟨x_p⟩_k*`. The partner lives in another set.
    PnPaired,
    /// No relation between orders.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Converter-local frame rotating with the control angle.
    Dq,
    /// Synchronously rotating frame.
    Sync,
    /// Positive/negative/zero sequence frame.
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTag<T> {
    frame: Frame,
    omega_s: T,
}

impl<T: Scalar> FrameTag<T> {
    pub fn new(frame: Frame, omega_s: T) -> Result<Self> {
        if !(omega_s > T::zero()) || !omega_s.is_finite() {
            return Err(Error::Domain(format!("base frequency must be positive, got {omega_s}")));
        }
        Ok(Self { frame, omega_s })
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn omega_s(&self) -> T {
        self.omega_s
    }

    /// Transforms exist only between dq and DQ, and between DQ and pnz.
    pub fn transforms_to(&self, other: Frame) -> bool {
        matches!(
            (self.frame, other),
            (Frame::Dq, Frame::Sync)
                | (Frame::Sync, Frame::Dq)
                | (Frame::Sync, Frame::Sequence)
                | (Frame::Sequence, Frame::Sync)
        )
    }
}

/// The dynamic phasors of one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct DpSet<T> {
    coeffs: BTreeMap<i32, Complex<T>>,
    conjugacy: Conjugacy,
}

impl<T: Scalar> DpSet<T> {
    pub fn new(conjugacy: Conjugacy) -> Self {
        Self { coeffs: BTreeMap::new(), conjugacy }
    }

    /// Real-signal set. Negative orders in `coeffs` are folded onto their positive
    /// partner by conjugation; the dc coefficient is projected onto the real axis.
    pub fn real_signal<I>(coeffs: I) -> Self
    where
        I: IntoIterator<Item = (i32, Complex<T>)>,
    {
        let mut set = Self::new(Conjugacy::RealSignal);
        for (k, c) in coeffs {
            set.set(k, c);
        }
        set
    }

    pub fn free<I>(coeffs: I) -> Self
    where
        I: IntoIterator<Item = (i32, Complex<T>)>,
    {
        Self::with_conjugacy(Conjugacy::Free, coeffs)
    }

    pub fn with_conjugacy<I>(conjugacy: Conjugacy, coeffs: I) -> Self
    where
        I: IntoIterator<Item = (i32, Complex<T>)>,
    {
        let mut set = Self::new(conjugacy);
        for (k, c) in coeffs {
            set.set(k, c);
        }
        set
    }

    /// Real-signal set over `orders` with every coefficient zero.
    pub fn zeros(conjugacy: Conjugacy, orders: &[i32]) -> Self {
        Self::with_conjugacy(conjugacy, orders.iter().map(|&k| (k, Complex::new(T::zero(), T::zero()))))
    }

    pub fn conjugacy(&self) -> Conjugacy {
        self.conjugacy
    }

    pub fn set(&mut self, k: i32, c: Complex<T>) {
        match self.conjugacy {
            Conjugacy::RealSignal if k < 0 => {
                self.coeffs.insert(-k, c.conj());
            }
            Conjugacy::RealSignal if k == 0 => {
                self.coeffs.insert(0, Complex::new(c.re, T::zero()));
            }
            _ => {
                self.coeffs.insert(k, c);
            }
        }
    }

    /// Coefficient of order `k`; orders outside the set read as zero.
    pub fn coeff(&self, k: i32) -> Complex<T> {
        let zero = Complex::new(T::zero(), T::zero());
        match self.conjugacy {
            Conjugacy::RealSignal if k < 0 => self.coeffs.get(&-k).map(|c| c.conj()).unwrap_or(zero),
            _ => self.coeffs.get(&k).copied().unwrap_or(zero),
        }
    }

    /// Full order set, including the negative orders implied by real-signal conjugacy.
    pub fn orders(&self) -> BTreeSet<i32> {
        let mut out: BTreeSet<i32> = self.coeffs.keys().copied().collect();
        if self.conjugacy == Conjugacy::RealSignal {
            out.extend(self.coeffs.keys().map(|k| -k));
        }
        out
    }

    /// Stored (non-redundant) coefficients.
    pub fn stored(&self) -> impl Iterator<Item = (i32, Complex<T>)> + '_ {
        self.coeffs.iter().map(|(&k, &c)| (k, c))
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|(&k, &c)| (k, c * alpha)).collect(),
            conjugacy: self.conjugacy,
        }
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> T {
        self.coeffs.values().fold(T::zero(), |m, c| m.max(c.norm()))
    }

    /// Checks the conjugacy invariant of a real-signal set: dc real to `rel_tol`.
    /// Sets with other conjugacy classes trivially pass.
    pub fn is_conjugate_consistent(&self, rel_tol: T) -> bool {
        if self.conjugacy != Conjugacy::RealSignal {
            return true;
        }
        let scale = self.max_abs().max(T::min_positive_value());
        self.orders().into_iter().all(|k| (self.coeff(-k) - self.coeff(k).conj()).norm() <= rel_tol * scale)
    }
}

impl<T: Scalar> Add for &DpSet<T> {
    type Output = DpSet<T>;

    fn add(self, rhs: &DpSet<T>) -> DpSet<T> {
        let conjugacy = if self.conjugacy == rhs.conjugacy { self.conjugacy } else { Conjugacy::Free };
        let orders = self.orders().union(&rhs.orders()).copied().collect::<Vec<_>>();
        DpSet::with_conjugacy(conjugacy, orders.into_iter().map(|k| (k, self.coeff(k) + rhs.coeff(k))))
    }
}

/// Check whether `p` and `n` form a pn-paired couple: `⟨n⟩_{-k} = ⟨p⟩_k*`.
pub fn is_pn_paired<T: Scalar>(p: &DpSet<T>, n: &DpSet<T>, rel_tol: T) -> bool {
    let scale = p.max_abs().max(n.max_abs()).max(T::min_positive_value());
    p.orders()
        .union(&n.orders())
        .all(|&k| (n.coeff(-k) - p.coeff(k).conj()).norm() <= rel_tol * scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    /// Converter dq frame to synchronous DQ frame, `e^{+jθ}`.
    DqToSync,
    /// Synchronous DQ frame to converter dq frame, `e^{-jθ}`.
    SyncToDq,
}

/// Rotates a (d, q) pair of phasor sets by the control angle.
///
/// The angle is treated as constant over the averaging window, so each order is
/// rotated independently by the same real 2x2 rotation.
pub fn rotate_frame<T: Scalar>(
    d: &DpSet<T>,
    q: &DpSet<T>,
    theta: T,
    direction: Rotation,
) -> Result<(DpSet<T>, DpSet<T>)> {
    if d.orders() != q.orders() {
        return Err(Error::Structural(format!(
            "rotate_frame: order sets differ ({:?} vs {:?})",
            d.orders(),
            q.orders()
        )));
    }
    if !theta.is_finite() {
        return Err(Error::Domain("rotate_frame: angle is not finite".into()));
    }
    let (s, c) = theta.sin_cos();
    let s = match direction {
        Rotation::DqToSync => s,
        Rotation::SyncToDq => -s,
    };
    let conjugacy = if d.conjugacy == q.conjugacy { d.conjugacy } else { Conjugacy::Free };
    let mut out_d = DpSet::new(conjugacy);
    let mut out_q = DpSet::new(conjugacy);
    for k in d.orders() {
        let (xd, xq) = (d.coeff(k), q.coeff(k));
        out_d.set(k, xd * c - xq * s);
        out_q.set(k, xd * s + xq * c);
    }
    Ok((out_d, out_q))
}

/// A group of phasor sets in either the synchronous or the sequence frame.
#[derive(Clone, Debug, PartialEq)]
pub enum PhasorGroup<T> {
    /// D, Q over {0, ±2}, optional zero component over {±1}.
    Sync { d: DpSet<T>, q: DpSet<T>, zero: Option<DpSet<T>> },
    /// p, n over {±1}, optional z over {±1}.
    Sequence { p: DpSet<T>, n: DpSet<T>, z: Option<DpSet<T>> },
}

fn require_orders<T: Scalar>(set: &DpSet<T>, expected: &[i32], what: &str) -> Result<()> {
    let want: BTreeSet<i32> = expected.iter().copied().collect();
    if set.orders() != want {
        return Err(Error::Structural(format!(
            "sequence_frame_map: {what} has orders {:?}, expected {:?}",
            set.orders(),
            want
        )));
    }
    Ok(())
}

/// Maps between synchronous DQ phasors (orders 0, ±2) and sequence phasors
/// (orders ±1). The direction is implied by the input variant.
///
/// DQ order k feeds p at k+1 and n at k-1; orders landing outside {±1}
/// (p at +3 from k=+2, n at -3 from k=-2) are dropped. The zero component
/// passes through unchanged.
pub fn sequence_frame_map<T: Scalar>(x: &PhasorGroup<T>) -> Result<PhasorGroup<T>> {
    let sqrt2 = T::SQRT_2();
    let j = Complex::new(T::zero(), T::one());
    match x {
        PhasorGroup::Sync { d, q, zero } => {
            require_orders(d, &DQ_ORDERS, "D")?;
            require_orders(q, &DQ_ORDERS, "Q")?;
            if let Some(z) = zero {
                if !z.orders().is_subset(&PNZ_ORDERS.iter().copied().collect()) {
                    return Err(Error::Structural("sequence_frame_map: zero component must use orders ±1".into()));
                }
            }
            let mut p = DpSet::new(Conjugacy::PnPaired);
            let mut n = DpSet::new(Conjugacy::PnPaired);
            for k in DQ_ORDERS {
                let (xd, xq) = (d.coeff(k), q.coeff(k));
                if PNZ_ORDERS.contains(&(k + 1)) {
                    p.set(k + 1, (xd + j * xq) / sqrt2);
                }
                if PNZ_ORDERS.contains(&(k - 1)) {
                    n.set(k - 1, (xd - j * xq) / sqrt2);
                }
            }
            Ok(PhasorGroup::Sequence { p, n, z: zero.clone() })
        }
        PhasorGroup::Sequence { p, n, z } => {
            require_orders(p, &PNZ_ORDERS, "p")?;
            require_orders(n, &PNZ_ORDERS, "n")?;
            let conjugacy = if is_pn_paired(p, n, T::lit(1e-12)) { Conjugacy::RealSignal } else { Conjugacy::Free };
            let mut d = DpSet::new(conjugacy);
            let mut q = DpSet::new(conjugacy);
            for k in DQ_ORDERS {
                if conjugacy == Conjugacy::RealSignal && k < 0 {
                    continue;
                }
                let (xp, xn) = (p.coeff(k + 1), n.coeff(k - 1));
                d.set(k, (xp + xn) / sqrt2);
                q.set(k, (xp - xn) / (j * sqrt2));
            }
            Ok(PhasorGroup::Sync { d, q, zero: z.clone() })
        }
    }
}

/// Coefficients of the product of two signals: `⟨xy⟩_m = Σ_k ⟨x⟩_k ⟨y⟩_{m-k}`,
/// restricted to `out_orders`. Orders missing from either input count as zero.
pub fn dp_multiply<T: Scalar>(x: &DpSet<T>, y: &DpSet<T>, out_orders: &BTreeSet<i32>) -> DpSet<T> {
    let symmetric = out_orders.iter().all(|k| out_orders.contains(&-k));
    let conjugacy = if x.conjugacy == Conjugacy::RealSignal && y.conjugacy == Conjugacy::RealSignal && symmetric {
        Conjugacy::RealSignal
    } else {
        Conjugacy::Free
    };
    let x_orders = x.orders();
    let y_orders = y.orders();
    let mut out = DpSet::new(conjugacy);
    for &m in out_orders {
        if conjugacy == Conjugacy::RealSignal && m < 0 {
            continue;
        }
        let mut acc = Complex::new(T::zero(), T::zero());
        for &k in &x_orders {
            if y_orders.contains(&(m - k)) {
                acc = acc + x.coeff(k) * y.coeff(m - k);
            }
        }
        out.set(m, acc);
    }
    out
}

/// Truncated Fourier sum `Σ_k ⟨x⟩_k e^{jkω_s t}`. Real-signal sets return a
/// purely real sample.
pub fn reconstruct<T: Scalar>(x: &DpSet<T>, t: T, omega_s: T) -> Complex<T> {
    let sum = x.orders().into_iter().fold(Complex::new(T::zero(), T::zero()), |acc, k| {
        let phase = T::from_i32(k).unwrap() * omega_s * t;
        acc + x.coeff(k) * Complex::new(phase.cos(), phase.sin())
    });
    if x.conjugacy == Conjugacy::RealSignal {
        debug_assert!(
            sum.im.abs() <= T::lit(1e-9) * sum.norm().max(x.max_abs()).max(T::one()),
            "imaginary residue in real-signal reconstruction"
        );
        Complex::new(sum.re, T::zero())
    } else {
        sum
    }
}

/// Uniformly sampled waveform starting at `t0`.
#[derive(Clone, Debug)]
pub struct UniformSamples<T, V> {
    pub t0: T,
    pub dt: T,
    pub values: Vec<V>,
}

impl<T: Scalar, V: Copy> UniformSamples<T, V> {
    pub fn new(t0: T, dt: T, values: Vec<V>) -> Self {
        Self { t0, dt, values }
    }

    pub fn t_end(&self) -> T {
        self.t0 + self.dt * T::from_usize(self.values.len().saturating_sub(1)).unwrap()
    }
}

/// Windowed Fourier coefficient `(1/T) ∫_{t-T}^{t} x(τ) e^{-jkω_s τ} dτ`. The samples are
/// interpolated linearly and each segment is integrated exactly against the exponential.
pub fn extract_dp<T, V>(samples: &UniformSamples<T, V>, t: T, k: i32, window: T, omega_s: T) -> Result<Complex<T>>
where
    T: Scalar,
    V: Copy + Into<Complex<T>>,
{
    let n = samples.values.len();
    if n < 2 || !(samples.dt > T::zero()) {
        return Err(Error::Domain("extract_dp: need at least two samples with positive spacing".into()));
    }
    if !(window > T::zero()) {
        return Err(Error::Domain("extract_dp: window must be positive".into()));
    }
    let per_period = T::TAU() / (omega_s * samples.dt);
    if per_period < T::lit(64.0) - T::lit(1e-9) {
        return Err(Error::Domain(format!(
            "extract_dp: {per_period} samples per fundamental period, need at least 64"
        )));
    }
    let start = t - window;
    let slack = samples.dt * T::lit(1e-6);
    if start < samples.t0 - slack || t > samples.t_end() + slack {
        return Err(Error::Domain(format!(
            "extract_dp: window [{start}, {t}] not covered by samples [{}, {}]",
            samples.t0,
            samples.t_end()
        )));
    }
    let kappa = T::from_i32(k).unwrap() * omega_s;
    let sample_at = |tau: T| -> Complex<T> {
        let pos = ((tau - samples.t0) / samples.dt).max(T::zero());
        let i = pos.floor().to_usize().unwrap_or(0).min(n - 2);
        let frac = (pos - T::from_usize(i).unwrap()).min(T::one());
        let a: Complex<T> = samples.values[i].into();
        let b: Complex<T> = samples.values[i + 1].into();
        a + (b - a) * frac
    };
    // Exact integral of the linearly interpolated signal against e^{-jκτ} on [a, b].
    let segment = |a: T, xa: Complex<T>, b: T, xb: Complex<T>| -> Complex<T> {
        let h = b - a;
        let half = T::lit(0.5);
        if kappa == T::zero() {
            return (xa + xb) * (h * half);
        }
        let ea = Complex::new(T::zero(), -kappa * a).exp();
        let eb = Complex::new(T::zero(), -kappa * b).exp();
        let inv = Complex::new(T::zero(), kappa.recip()); // 1/(-jκ)
        let i0 = (eb - ea) * inv;
        let i1 = eb * inv * h - i0 * inv;
        xa * i0 + (xb - xa) * (i1 / h)
    };

    // interior sample indices strictly inside (start, t)
    let first = ((start - samples.t0) / samples.dt).floor().to_i64().unwrap_or(0) + 1;
    let last = ((t - samples.t0) / samples.dt).ceil().to_i64().unwrap_or(0) - 1;
    let mut prev_tau = start;
    let mut prev_val = sample_at(start);
    let mut acc = Complex::new(T::zero(), T::zero());
    for idx in first.max(0)..=last.min(n as i64 - 1) {
        let tau = samples.t0 + samples.dt * T::from_i64(idx).unwrap();
        if tau <= prev_tau + slack || tau >= t - slack {
            continue;
        }
        let val: Complex<T> = samples.values[idx as usize].into();
        acc = acc + segment(prev_tau, prev_val, tau, val);
        prev_tau = tau;
        prev_val = val;
    }
    acc = acc + segment(prev_tau, prev_val, t, sample_at(t));
    Ok(acc / window)
}
