//! Converter and network coupled into one flat state vector.
//!
//! Layout (43 reals):
//!
//! | index | content |
//! |-------|---------|
//! | 0..8  | dc converter states `x1..x4`, (d, q) each |
//! | 8..24 | order +2 converter states `x1..x4`, (d, q) each as (re, im) |
//! | 24    | outer-loop integrator |
//! | 25    | filtered power |
//! | 26    | converter angle |
//! | 27..43 | network: `i2` (p, n, z), `i` (p, n), `vC2` (p, n, z), each as (re, im) |

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::gfc::{gfc_derivatives, Dq, DqDp, GfcEvaluation, GfcState, LimiterBranch};
use crate::network::{network_derivatives, FaultSpec, LoadBus, NetworkEvaluation, NetworkState, Pnz};
use crate::params::{nominal_current, GfcParams, NetworkParams};
use crate::scalar::Scalar;

pub const STATE_LEN: usize = 43;
pub const V_INT_INDEX: usize = 24;
pub const P_FILT_INDEX: usize = 25;
pub const THETA_INDEX: usize = 26;
const NET_OFFSET: usize = 27;

const GFC_NAMES: [&str; 8] = ["x1_d", "x1_q", "x2_d", "x2_q", "x3_d", "x3_q", "x4_d", "x4_q"];
const NET_NAMES: [&str; 8] = ["i2_p", "i2_n", "i2_z", "i_p", "i_n", "vc2_p", "vc2_n", "vc2_z"];

/// Names of the flat state entries, in layout order.
pub fn state_labels() -> Vec<String> {
    let mut out: Vec<String> = GFC_NAMES.iter().map(|n| format!("{n}.0")).collect();
    for n in GFC_NAMES {
        out.push(format!("{n}.2.re"));
        out.push(format!("{n}.2.im"));
    }
    out.extend(["v_int", "p_filt", "theta_c"].map(String::from));
    for n in NET_NAMES {
        out.push(format!("{n}.re"));
        out.push(format!("{n}.im"));
    }
    out
}

/// Physical quantity a flat state entry belongs to (`x3_d`, `i2_p`, `theta_c`, ...).
pub fn state_group(index: usize) -> &'static str {
    match index {
        0..=7 => GFC_NAMES[index],
        8..=23 => GFC_NAMES[(index - 8) / 2],
        V_INT_INDEX => "v_int",
        P_FILT_INDEX => "p_filt",
        THETA_INDEX => "theta_c",
        27..=42 => NET_NAMES[(index - NET_OFFSET) / 2],
        _ => panic!("state index {index} out of range"),
    }
}

/// Typical magnitude of each state, used for tolerances, Newton scaling and
/// differencing steps. Voltages scale with the terminal voltage, currents with
/// the nominal current, powers with the power reference, the angle with 1 rad.
pub fn state_scales<T: Scalar>(p: &GfcParams<T>) -> Vec<T> {
    let v_nom = p.v_ref;
    let i_nom = T::lit(nominal_current());
    let per_order = [
        i_nom / p.k_vi.max(T::lit(1e-9)),
        i_nom / p.k_vi.max(T::lit(1e-9)),
        v_nom / p.k_ci.max(T::lit(1e-9)),
        v_nom / p.k_ci.max(T::lit(1e-9)),
        p.l * i_nom,
        p.l * i_nom,
        p.c * v_nom,
        p.c * v_nom,
    ];
    let mut s = per_order.to_vec();
    for v in per_order {
        s.push(v);
        s.push(v);
    }
    s.extend([v_nom, p.p_ref.abs().max(T::one()), T::one()]);
    for k in 0..8 {
        let v = if k < 5 { i_nom } else { v_nom };
        s.push(v);
        s.push(v);
    }
    s
}

/// Structured view of the flat state.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SystemState<T> {
    pub gfc: GfcState<T>,
    pub net: NetworkState<T>,
}

impl<T: Scalar> SystemState<T> {
    pub fn pack(&self) -> Vec<T> {
        let mut x = Vec::with_capacity(STATE_LEN);
        let g = &self.gfc;
        let fields = [g.x1, g.x2, g.x3, g.x4];
        for f in &fields {
            x.push(f.dc.d.re);
            x.push(f.dc.q.re);
        }
        for f in &fields {
            for c in [f.second.d, f.second.q] {
                x.push(c.re);
                x.push(c.im);
            }
        }
        x.extend([g.v_int, g.p_filt, g.theta]);
        let n = &self.net;
        for c in [n.i2.p, n.i2.n, n.i2.z, n.i.p, n.i.n, n.vc2.p, n.vc2.n, n.vc2.z] {
            x.push(c.re);
            x.push(c.im);
        }
        debug_assert_eq!(x.len(), STATE_LEN);
        x
    }

    pub fn unpack(x: &[T]) -> Result<Self> {
        if x.len() != STATE_LEN {
            return Err(Error::Structural(format!("state vector has {} entries, expected {STATE_LEN}", x.len())));
        }
        let cx = |i: usize| Complex::new(x[i], x[i + 1]);
        let field = |k: usize| {
            DqDp::new(Dq::real(x[2 * k], x[2 * k + 1]), Dq::new(cx(8 + 4 * k), cx(10 + 4 * k)))
        };
        let gfc = GfcState {
            x1: field(0),
            x2: field(1),
            x3: field(2),
            x4: field(3),
            v_int: x[V_INT_INDEX],
            p_filt: x[P_FILT_INDEX],
            theta: x[THETA_INDEX],
        };
        let n = |k: usize| cx(NET_OFFSET + 2 * k);
        let zero = Complex::new(T::zero(), T::zero());
        let net = NetworkState {
            i2: Pnz::new(n(0), n(1), n(2)),
            i: Pnz::new(n(3), n(4), zero),
            vc2: Pnz::new(n(5), n(6), n(7)),
        };
        Ok(Self { gfc, net })
    }

    /// Nominal voltages, zero currents, droop and power filter at their references.
    pub fn flat_start(p: &GfcParams<T>) -> Self {
        let gfc = GfcState {
            x4: DqDp::dc(p.c * p.v_ref, T::zero()),
            v_int: p.v_ref,
            p_filt: p.p_ref,
            ..Default::default()
        };
        Self { gfc, net: NetworkState::default() }
    }
}

/// Network transformer current in the sequence frame to converter dq phasors.
pub fn sequence_current_to_dq<T: Scalar>(i: Pnz<T>, theta: T) -> DqDp<T> {
    let s2 = T::SQRT_2();
    let j = Complex::new(T::zero(), T::one());
    let sync = DqDp::new(
        Dq::real(s2 * i.p.re, s2 * i.p.im),
        Dq::new(i.n / s2, j * i.n / s2),
    );
    let (s, c) = theta.sin_cos();
    sync.map_orders(|_, x| Dq::new(x.d * c + x.q * s, x.q * c - x.d * s))
}

/// Converter dq capacitor voltage to order +1 sequence phasors. Order +2 of the
/// positive sequence and the zero sequence have no counterpart and are dropped.
pub fn dq_voltage_to_sequence<T: Scalar>(v: &DqDp<T>, theta: T) -> Pnz<T> {
    let s2 = T::SQRT_2();
    let j = Complex::new(T::zero(), T::one());
    let (s, c) = theta.sin_cos();
    let sync = v.map_orders(|_, x| Dq::new(x.d * c - x.q * s, x.d * s + x.q * c));
    Pnz::new(
        (sync.dc.d + j * sync.dc.q) / s2,
        (sync.second.d - j * sync.second.q) / s2,
        Complex::new(T::zero(), T::zero()),
    )
}

/// The coupled model on one smooth segment: the load bus is either healthy or
/// carries a fixed fault for the whole segment.
#[derive(Clone, Debug)]
pub struct SystemModel<T> {
    pub gfc: GfcParams<T>,
    pub net: NetworkParams<T>,
    pub bus: LoadBus<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct SystemEvaluation<T> {
    pub deriv: SystemState<T>,
    pub gfc: GfcEvaluation<T>,
    pub net: NetworkEvaluation<T>,
    /// Transformer current seen by the converter, dq frame.
    pub i_dq: DqDp<T>,
    /// Converter terminal voltage in the sequence frame.
    pub v_pnz: Pnz<T>,
}

impl<T: Scalar> SystemModel<T> {
    pub fn new(gfc: GfcParams<T>, net: NetworkParams<T>, fault: Option<&FaultSpec<T>>) -> Result<Self> {
        gfc.validate()?;
        net.validate()?;
        let bus = match fault {
            Some(f) => LoadBus::with_fault(net.r_load, f)?,
            None => LoadBus::healthy(net.r_load),
        };
        Ok(Self { gfc, net, bus })
    }

    pub fn scales(&self) -> Vec<T> {
        state_scales(&self.gfc)
    }

    pub fn evaluate(&self, t: T, x: &SystemState<T>) -> Result<SystemEvaluation<T>> {
        let t64 = t.to_f64_lossy();
        let theta = x.gfc.theta;
        let i_dq = sequence_current_to_dq(x.net.i, theta);
        check(i_dq.is_finite() && theta.is_finite(), "interface", t64)?;

        let gfc = gfc_derivatives(&x.gfc, &i_dq, &self.gfc);
        check(gfc.deriv.is_finite(), "converter", t64)?;

        let v_pnz = dq_voltage_to_sequence(&gfc.v, theta);
        let net = network_derivatives(&x.net, v_pnz, &self.bus, &self.net);
        check(net.deriv.is_finite() && net.v1.is_finite(), "network", t64)?;

        Ok(SystemEvaluation { deriv: SystemState { gfc: gfc.deriv, net: net.deriv }, gfc, net, i_dq, v_pnz })
    }

    /// Flat-vector derivative.
    pub fn derivatives(&self, t: T, x: &[T], dx: &mut [T]) -> Result<()> {
        let s = SystemState::unpack(x)?;
        let d = self.evaluate(t, &s)?.deriv.pack();
        dx.copy_from_slice(&d);
        Ok(())
    }

    /// Limiter branch at a given state.
    pub fn limiter_branch(&self, x: &SystemState<T>) -> Result<LimiterBranch> {
        Ok(self.evaluate(T::zero(), x)?.gfc.branch)
    }
}

fn check(ok: bool, block: &'static str, t: f64) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { block, t })
    }
}
