//! Grid-forming converter in dq-frame dynamic phasors of orders 0 and ±2.
//!
//! The controller chain is droop and outer voltage loop → inner voltage loop →
//! current limiter → current loop → RLC filter. Every per-order kernel takes the
//! order `k` explicitly so the same arithmetic serves the dc (k = 0) path of the
//! time-domain reference model.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex;

use crate::dp::{Conjugacy, DpSet};
use crate::error::{Error, Result};
use crate::params::{GfcParams, LimiterMode};
use crate::scalar::{complex_is_finite, Scalar};

/// One phasor order of a (d, q) signal pair.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dq<T> {
    pub d: Complex<T>,
    pub q: Complex<T>,
}

impl<T: Scalar> Dq<T> {
    pub fn new(d: Complex<T>, q: Complex<T>) -> Self {
        Self { d, q }
    }

    pub fn real(d: T, q: T) -> Self {
        Self { d: Complex::new(d, T::zero()), q: Complex::new(q, T::zero()) }
    }

    pub fn zero() -> Self {
        Self::real(T::zero(), T::zero())
    }

    /// `[[0, -1], [1, 0]]` applied to (d, q).
    pub fn quarter(self) -> Self {
        Self { d: -self.q, q: self.d }
    }

    /// `-jkω·x`, the phasor shift term of the derivative.
    pub fn shift(self, order: i32, omega: T) -> Self {
        let s = Complex::new(T::zero(), -T::from_i32(order).unwrap() * omega);
        Self { d: self.d * s, q: self.q * s }
    }

    pub fn conj(self) -> Self {
        Self { d: self.d.conj(), q: self.q.conj() }
    }

    /// Magnitude of the real parts; meaningful for dc components.
    pub fn dc_magnitude(self) -> T {
        self.d.re.hypot(self.q.re)
    }

    pub fn is_real(self) -> bool {
        self.d.im == T::zero() && self.q.im == T::zero()
    }

    pub fn max_abs(self) -> T {
        self.d.norm().max(self.q.norm())
    }

    pub fn is_finite(self) -> bool {
        complex_is_finite(self.d) && complex_is_finite(self.q)
    }
}

impl<T: Scalar> Add for Dq<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { d: self.d + o.d, q: self.q + o.q }
    }
}

impl<T: Scalar> Sub for Dq<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { d: self.d - o.d, q: self.q - o.q }
    }
}

impl<T: Scalar> Neg for Dq<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { d: -self.d, q: -self.q }
    }
}

impl<T: Scalar> Mul<T> for Dq<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Self { d: self.d * k, q: self.q * k }
    }
}

/// A real dq signal pair over orders {0, ±2}. Only orders 0 and +2 are stored;
/// order -2 is the conjugate of +2 and the dc component is real.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DqDp<T> {
    pub dc: Dq<T>,
    pub second: Dq<T>,
}

impl<T: Scalar> DqDp<T> {
    pub fn new(dc: Dq<T>, second: Dq<T>) -> Self {
        debug_assert!(dc.is_real(), "dc phasors of a real signal must be real");
        Self { dc, second }
    }

    pub fn dc(d: T, q: T) -> Self {
        Self { dc: Dq::real(d, q), second: Dq::zero() }
    }

    pub fn zero() -> Self {
        Self { dc: Dq::zero(), second: Dq::zero() }
    }

    pub fn order(&self, k: i32) -> Dq<T> {
        match k {
            0 => self.dc,
            2 => self.second,
            -2 => self.second.conj(),
            _ => Dq::zero(),
        }
    }

    /// Applies `f(order, value)` to the stored orders.
    pub fn is_finite(&self) -> bool {
        self.dc.is_finite() && self.second.is_finite()
    }

    pub fn map_orders(&self, mut f: impl FnMut(i32, Dq<T>) -> Dq<T>) -> Self {
        Self { dc: f(0, self.dc), second: f(2, self.second) }
    }

    pub fn to_sets(&self) -> (DpSet<T>, DpSet<T>) {
        let d = DpSet::real_signal([(0, self.dc.d), (2, self.second.d)]);
        let q = DpSet::real_signal([(0, self.dc.q), (2, self.second.q)]);
        (d, q)
    }

    pub fn from_sets(d: &DpSet<T>, q: &DpSet<T>) -> Result<Self> {
        for set in [d, q] {
            if set.conjugacy() != Conjugacy::RealSignal {
                return Err(Error::Structural("dq phasors must carry real-signal conjugacy".into()));
            }
            if set.orders().iter().any(|k| ![-2, 0, 2].contains(k)) {
                return Err(Error::Structural(format!("dq phasor orders {:?} outside {{0, ±2}}", set.orders())));
            }
        }
        Ok(Self::new(Dq::new(d.coeff(0), q.coeff(0)), Dq::new(d.coeff(2), q.coeff(2))))
    }
}

/// Controller, filter and droop states of the converter.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GfcState<T> {
    /// Inner voltage-loop integrators.
    pub x1: DqDp<T>,
    /// Current-loop integrators.
    pub x2: DqDp<T>,
    /// Filter inductor flux, `L·i_t`.
    pub x3: DqDp<T>,
    /// Filter capacitor charge, `C·v`.
    pub x4: DqDp<T>,
    /// Outer voltage-loop integrator (V).
    pub v_int: T,
    /// Low-pass filtered power (W).
    pub p_filt: T,
    /// Converter frame angle relative to the synchronous frame (rad), unwrapped.
    pub theta: T,
}

impl<T: Scalar> GfcState<T> {
    pub fn is_finite(&self) -> bool {
        [self.x1, self.x2, self.x3, self.x4].iter().all(|x| x.is_finite())
            && self.v_int.is_finite()
            && self.p_filt.is_finite()
            && self.theta.is_finite()
    }
}

/// Instantaneous power `Σ_{k=0,±2} ⟨v_d⟩_k⟨i_d⟩_{-k} + ⟨v_q⟩_k⟨i_q⟩_{-k}`.
pub fn dq_power<T: Scalar>(v: &DqDp<T>, i: &DqDp<T>) -> T {
    let dc = v.dc.d.re * i.dc.d.re + v.dc.q.re * i.dc.q.re;
    let second = v.second.d * i.second.d.conj() + v.second.q * i.second.q.conj();
    dc + T::lit(2.0) * second.re
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterOutput<T> {
    pub d_v_int: T,
    pub d_p_filt: T,
    pub d_theta: T,
    /// Voltage reference handed to the inner loop (dc d-axis only).
    pub v_ref: DqDp<T>,
    pub p_c: T,
}

/// Droop and outer voltage loop. The outer PI regulates the dc voltage magnitude;
/// the reference has no q-axis and no second-order content.
pub fn outer_droop_derivatives<T: Scalar>(
    state: &GfcState<T>,
    v: &DqDp<T>,
    i: &DqDp<T>,
    p: &GfcParams<T>,
) -> OuterOutput<T> {
    let p_c = dq_power(v, i);
    let err = p.v_ref - v.dc.dc_magnitude();
    let d_theta = if p.droop { p.d_pc * (p.p_ref - state.p_filt) } else { T::zero() };
    OuterOutput {
        d_v_int: p.k_iac * err,
        d_p_filt: (p_c - state.p_filt) / p.tau_p,
        d_theta,
        v_ref: DqDp::dc(p.k_pac * err + state.v_int, T::zero()),
        p_c,
    }
}

/// Inner voltage loop for one order. Returns `(dx1/dt, i_t*)`.
pub fn inner_voltage_controller<T: Scalar>(
    order: i32,
    x1: Dq<T>,
    v_ref: Dq<T>,
    v: Dq<T>,
    i: Dq<T>,
    p: &GfcParams<T>,
) -> (Dq<T>, Dq<T>) {
    let err = v_ref - v;
    let dx1 = err + x1.shift(order, p.omega_s);
    let i_ref = x1 * p.k_vi + err * p.k_vp + v.quarter() * (p.omega_c * p.c) + i;
    (dx1, i_ref)
}

/// Current loop for one order. Returns `(dx2/dt, v_t)`.
pub fn current_controller<T: Scalar>(
    order: i32,
    x2: Dq<T>,
    i_ref: Dq<T>,
    i_t: Dq<T>,
    v: Dq<T>,
    p: &GfcParams<T>,
) -> (Dq<T>, Dq<T>) {
    let err = i_ref - i_t;
    let dx2 = err + x2.shift(order, p.omega_s);
    let v_t = x2 * p.k_ci + err * p.k_cp + i_t.quarter() * (p.omega_c * p.l) + v;
    (dx2, v_t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterOutput<T> {
    pub dx3: Dq<T>,
    pub dx4: Dq<T>,
    pub i_t: Dq<T>,
    pub v: Dq<T>,
}

/// Filter inductor current and capacitor voltage outputs of one order.
pub fn filter_outputs<T: Scalar>(x3: Dq<T>, x4: Dq<T>, p: &GfcParams<T>) -> (Dq<T>, Dq<T>) {
    (x3 * p.l.recip(), x4 * p.c.recip())
}

/// RLC filter for one order.
pub fn filter_derivatives<T: Scalar>(
    order: i32,
    x3: Dq<T>,
    x4: Dq<T>,
    v_t: Dq<T>,
    i: Dq<T>,
    p: &GfcParams<T>,
) -> FilterOutput<T> {
    let (i_t, v) = filter_outputs(x3, x4, p);
    let dx3 = x3 * (-p.r / p.l) - x3.quarter() * p.omega_c + v_t - v + x3.shift(order, p.omega_s);
    let dx4 = -(x4.quarter() * p.omega_c) + i_t - i + x4.shift(order, p.omega_s);
    FilterOutput { dx3, dx4, i_t, v }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LimiterBranch {
    /// Reference below the saturation current; passed through.
    Pass,
    /// Constant-angle limiter clamped the dc magnitude.
    AngleClamp,
    /// Q-priority: dc q held, d reduced to the remaining headroom.
    QHold,
    /// Q-priority: dc q clamped to the saturation current, d zeroed.
    QClamp,
}

impl LimiterBranch {
    pub fn code(self) -> u8 {
        match self {
            Self::Pass => 0,
            Self::AngleClamp => 1,
            Self::QHold => 2,
            Self::QClamp => 3,
        }
    }

    pub fn is_saturated(self) -> bool {
        self != Self::Pass
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limited<T> {
    pub out: DqDp<T>,
    pub branch: LimiterBranch,
}

/// Constant-angle limiter. Saturation is judged on the dc magnitude; when it
/// exceeds `i_sat` the dc components are scaled back along their own angle and
/// the second-order components pass through.
pub fn limit_constant_angle<T: Scalar>(i_ref: &DqDp<T>, i_sat: T) -> Limited<T> {
    let (d0, q0) = (i_ref.dc.d.re, i_ref.dc.q.re);
    let m = d0.hypot(q0);
    if m <= i_sat {
        return Limited { out: *i_ref, branch: LimiterBranch::Pass };
    }
    let theta = q0.atan2(d0);
    let (s, c) = theta.sin_cos();
    Limited {
        out: DqDp::new(Dq::real(i_sat * c, i_sat * s), i_ref.second),
        branch: LimiterBranch::AngleClamp,
    }
}

/// Q-priority limiter: keep the dc q-component, give d whatever headroom is left.
/// The q test uses `|⟨i_tq*⟩₀|` and the clamped q keeps its sign.
pub fn limit_q_priority<T: Scalar>(i_ref: &DqDp<T>, i_sat: T) -> Limited<T> {
    let (d0, q0) = (i_ref.dc.d.re, i_ref.dc.q.re);
    if d0.hypot(q0) <= i_sat {
        return Limited { out: *i_ref, branch: LimiterBranch::Pass };
    }
    let (dc, branch) = if q0.abs() < i_sat {
        (Dq::real((i_sat * i_sat - q0 * q0).sqrt(), q0), LimiterBranch::QHold)
    } else {
        (Dq::real(T::zero(), i_sat.copysign(q0)), LimiterBranch::QClamp)
    };
    Limited { out: DqDp::new(dc, i_ref.second), branch }
}

pub fn apply_limiter<T: Scalar>(mode: LimiterMode, i_ref: &DqDp<T>, i_sat: T) -> Limited<T> {
    match mode {
        LimiterMode::ConstantAngle => limit_constant_angle(i_ref, i_sat),
        LimiterMode::QPriority => limit_q_priority(i_ref, i_sat),
        LimiterMode::None => Limited { out: *i_ref, branch: LimiterBranch::Pass },
    }
}

/// Everything the converter chain produces in one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfcEvaluation<T> {
    pub deriv: GfcState<T>,
    /// Capacitor (terminal) voltage.
    pub v: DqDp<T>,
    /// Filter inductor current.
    pub i_t: DqDp<T>,
    pub v_t: DqDp<T>,
    pub v_ref: DqDp<T>,
    pub i_ref: DqDp<T>,
    pub i_ref_limited: DqDp<T>,
    pub branch: LimiterBranch,
    pub p_c: T,
}

/// Full converter derivative chain given the grid-side current `i` in the dq frame.
pub fn gfc_derivatives<T: Scalar>(state: &GfcState<T>, i: &DqDp<T>, p: &GfcParams<T>) -> GfcEvaluation<T> {
    let (i_t0, v0) = filter_outputs(state.x3.dc, state.x4.dc, p);
    let (i_t2, v2) = filter_outputs(state.x3.second, state.x4.second, p);
    let v = DqDp { dc: v0, second: v2 };
    let i_t = DqDp { dc: i_t0, second: i_t2 };

    let outer = outer_droop_derivatives(state, &v, i, p);

    let mut dx1 = DqDp::zero();
    let mut i_ref = DqDp::zero();
    for k in [0, 2] {
        let (dx, ir) = inner_voltage_controller(k, state.x1.order(k), outer.v_ref.order(k), v.order(k), i.order(k), p);
        set_order(&mut dx1, k, dx);
        set_order(&mut i_ref, k, ir);
    }

    let limited = apply_limiter(p.limiter, &i_ref, p.i_sat);

    let mut dx2 = DqDp::zero();
    let mut v_t = DqDp::zero();
    let mut dx3 = DqDp::zero();
    let mut dx4 = DqDp::zero();
    for k in [0, 2] {
        let (dx, vt) = current_controller(k, state.x2.order(k), limited.out.order(k), i_t.order(k), v.order(k), p);
        set_order(&mut dx2, k, dx);
        set_order(&mut v_t, k, vt);
        let f = filter_derivatives(k, state.x3.order(k), state.x4.order(k), vt, i.order(k), p);
        set_order(&mut dx3, k, f.dx3);
        set_order(&mut dx4, k, f.dx4);
    }

    let deriv = GfcState {
        x1: dx1,
        x2: dx2,
        x3: dx3,
        x4: dx4,
        v_int: outer.d_v_int,
        p_filt: outer.d_p_filt,
        theta: outer.d_theta,
    };
    debug_assert!(
        [deriv.x1.dc, deriv.x2.dc, deriv.x3.dc, deriv.x4.dc].iter().all(|x| x.is_real()),
        "dc derivatives must stay real"
    );
    GfcEvaluation {
        deriv,
        v,
        i_t,
        v_t,
        v_ref: outer.v_ref,
        i_ref,
        i_ref_limited: limited.out,
        branch: limited.branch,
        p_c: outer.p_c,
    }
}

fn set_order<T: Scalar>(x: &mut DqDp<T>, k: i32, value: Dq<T>) {
    match k {
        0 => x.dc = value,
        2 => x.second = value,
        _ => unreachable!("stored orders are 0 and 2"),
    }
}
