//! Parameter sets and their nominal values.
//!
//! Every quantity is SI. The droop coefficient is stored in rad/s/W; the
//! nominal value of 0.0174 rad/s/MW is converted on construction.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NOMINAL_FREQUENCY_HZ: f64 = 60.0;
pub const FILTER_RESISTANCE: f64 = 0.722e-3;
pub const FILTER_INDUCTANCE: f64 = 44.4e-6;
pub const FILTER_CAPACITANCE: f64 = 1.3e-3;
pub const TRANSFORMER_INDUCTANCE: f64 = 0.176e-3;
pub const LINE_RESISTANCE: f64 = 0.09;
pub const LINE_INDUCTANCE: f64 = 0.0024;
pub const SERIES_CAPACITANCE: f64 = 3.59e-3;
pub const FAULT_RESISTANCE: f64 = 0.756e-3;
pub const LOAD_POWER: f64 = 100e6;
pub const TERMINAL_VOLTAGE: f64 = 20.6e3;
pub const GRID_VOLTAGE: f64 = 20e3;
pub const POWER_REFERENCE: f64 = 400e6;
pub const DROOP_RAD_PER_S_PER_MW: f64 = 0.0174;
pub const DROOP_FILTER_TIME_CONSTANT: f64 = 10e-3;
pub const OUTER_KP: f64 = 0.001;
pub const OUTER_KI: f64 = 0.5;
pub const VOLTAGE_KP: f64 = 2.34;
pub const VOLTAGE_KI: f64 = 5.22;
pub const CURRENT_KP: f64 = 0.16;
pub const CURRENT_KI: f64 = 0.26;
/// Saturation current as a multiple of nominal current.
pub const SATURATION_MULTIPLE: f64 = 1.2;
/// Stand-in for an open fault phase.
pub const OPEN_PHASE_RESISTANCE: f64 = 1e6;

pub fn nominal_omega() -> f64 {
    std::f64::consts::TAU * NOMINAL_FREQUENCY_HZ
}

/// Nominal converter current at rated power and terminal voltage.
pub fn nominal_current() -> f64 {
    POWER_REFERENCE / TERMINAL_VOLTAGE
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LimiterMode {
    #[default]
    ConstantAngle,
    QPriority,
    None,
}

impl std::str::FromStr for LimiterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant-angle" => Ok(Self::ConstantAngle),
            "q-priority" => Ok(Self::QPriority),
            "none" => Ok(Self::None),
            other => Err(Error::Domain(format!("unknown limiter mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for LimiterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ConstantAngle => "constant-angle",
            Self::QPriority => "q-priority",
            Self::None => "none",
        })
    }
}

/// Converter filter, controller gains and setpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct GfcParams<T> {
    pub r: T,
    pub l: T,
    pub c: T,
    pub k_pac: T,
    pub k_iac: T,
    pub k_vp: T,
    pub k_vi: T,
    pub k_cp: T,
    pub k_ci: T,
    /// rad/s/W
    pub d_pc: T,
    pub tau_p: T,
    pub p_ref: T,
    pub v_ref: T,
    pub i_sat: T,
    /// Cross-coupling frequency of the filter and decoupling terms.
    pub omega_c: T,
    /// Base frequency of the phasor orders.
    pub omega_s: T,
    pub limiter: LimiterMode,
    pub droop: bool,
}

impl<T: Scalar> Default for GfcParams<T> {
    fn default() -> Self {
        let l = T::lit;
        Self {
            r: l(FILTER_RESISTANCE),
            l: l(FILTER_INDUCTANCE),
            c: l(FILTER_CAPACITANCE),
            k_pac: l(OUTER_KP),
            k_iac: l(OUTER_KI),
            k_vp: l(VOLTAGE_KP),
            k_vi: l(VOLTAGE_KI),
            k_cp: l(CURRENT_KP),
            k_ci: l(CURRENT_KI),
            d_pc: l(DROOP_RAD_PER_S_PER_MW * 1e-6),
            tau_p: l(DROOP_FILTER_TIME_CONSTANT),
            p_ref: l(POWER_REFERENCE),
            v_ref: l(TERMINAL_VOLTAGE),
            i_sat: l(SATURATION_MULTIPLE * nominal_current()),
            omega_c: l(nominal_omega()),
            omega_s: l(nominal_omega()),
            limiter: LimiterMode::ConstantAngle,
            droop: true,
        }
    }
}

impl<T: Scalar> GfcParams<T> {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            ("k_pac", self.k_pac),
            ("k_iac", self.k_iac),
            ("k_vp", self.k_vp),
            ("k_vi", self.k_vi),
            ("k_cp", self.k_cp),
            ("k_ci", self.k_ci),
            ("d_pc", self.d_pc),
            ("r_filter", self.r),
        ];
        for (name, g) in gains {
            if !(g >= T::zero()) || !g.is_finite() {
                return Err(Error::Domain(format!("{name} must be non-negative and finite, got {g}")));
            }
        }
        for (name, v) in [
            ("l_filter", self.l),
            ("c_filter", self.c),
            ("tau_p", self.tau_p),
            ("i_sat", self.i_sat),
            ("omega_s", self.omega_s),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Transformer, line, load and source.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub l1: T,
    pub r2: T,
    pub l2: T,
    pub c2: T,
    pub r_load: T,
    /// Positive-sequence source phasor `⟨e_bp⟩₁`; all other source phasors are zero.
    pub e_b: Complex<T>,
    pub omega_s: T,
}

impl<T: Scalar> Default for NetworkParams<T> {
    fn default() -> Self {
        let l = T::lit;
        Self {
            l1: l(TRANSFORMER_INDUCTANCE),
            r2: l(LINE_RESISTANCE),
            l2: l(LINE_INDUCTANCE),
            c2: l(SERIES_CAPACITANCE),
            r_load: l(GRID_VOLTAGE * GRID_VOLTAGE / LOAD_POWER),
            // 20 kV line-to-line RMS: DQ magnitude 20 kV, sequence phasor 20 kV/√2.
            e_b: Complex::new(l(GRID_VOLTAGE) / T::SQRT_2(), T::zero()),
            omega_s: l(nominal_omega()),
        }
    }
}

impl<T: Scalar> NetworkParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("c2", self.c2), ("omega_s", self.omega_s)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("r2", self.r2), ("r_load", self.r_load)] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Ratio of series-capacitor reactance to line reactance.
    pub fn compensation_level(&self) -> T {
        T::one() / (self.omega_s * self.c2 * self.omega_s * self.l2)
    }
}

/// Series capacitance giving `X_C2 = level · X_L2`.
pub fn compensation_to_capacitance<T: Scalar>(level: T, l2: T, omega_s: T) -> Result<T> {
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::Domain(format!("compensation level must lie in (0, 1), got {level}")));
    }
    if !(l2 > T::zero()) || !(omega_s > T::zero()) {
        return Err(Error::Domain("line inductance and frequency must be positive".into()));
    }
    Ok(T::one() / (level * omega_s * omega_s * l2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacitance_from_level() {
        let w = nominal_omega();
        let c82 = compensation_to_capacitance(0.82, 0.0024, w).unwrap();
        assert!((c82 - 3.575e-3).abs() < 0.001e-3, "{c82}");
        assert!((c82 - SERIES_CAPACITANCE).abs() / SERIES_CAPACITANCE < 0.005);
        let c8325 = compensation_to_capacitance(0.8325, 0.0024, w).unwrap();
        assert!((c8325 - 3.521e-3).abs() < 0.001e-3, "{c8325}");
    }

    #[test]
    fn capacitance_rejects_levels_outside_unit_interval() {
        let w = nominal_omega();
        for level in [0.0, -0.1, 1.0, 1.5] {
            assert!(compensation_to_capacitance(level, 0.0024, w).is_err());
        }
    }

    #[test]
    fn defaults_follow_nominal_values() {
        let g = GfcParams::<f64>::default();
        assert!((g.d_pc - 1.74e-8).abs() < 1e-20);
        assert!((g.i_sat - 23_300.97).abs() < 0.01);
        let n = NetworkParams::<f64>::default();
        assert_eq!(n.r_load, 4.0);
        assert!((n.compensation_level() - 0.8166).abs() < 1e-3);
        g.validate().unwrap();
        n.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_values() {
        let g = GfcParams::<f64> { tau_p: 0.0, ..Default::default() };
        assert!(g.validate().is_err());
        let g = GfcParams::<f64> { k_vp: -1.0, ..Default::default() };
        assert!(g.validate().is_err());
        let n = NetworkParams::<f64> { c2: 0.0, ..Default::default() };
        assert!(n.validate().is_err());
    }
}
