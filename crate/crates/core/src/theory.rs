//! Closed-form cold-resistor, Johnson-noise and steady-state loop formulas.

use serde::Serialize;

use crate::{Error, Result, BOLTZMANN};

/// A two-amplifier cold resistor: series resistor `r0_ohm` at ambient
/// temperature, with a negative loop product `a1 * a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColdResistorSpec {
    pub r0_ohm: f64,
    pub t_ambient_kelvin: f64,
    pub a1: f64,
    pub a2: f64,
}

impl ColdResistorSpec {
    pub fn new(r0_ohm: f64, t_ambient_kelvin: f64, a1: f64, a2: f64) -> Result<Self> {
        positive("r0_ohm", r0_ohm)?;
        positive("t_ambient_kelvin", t_ambient_kelvin)?;
        loop_amplification(a1, a2)?;
        Ok(Self {
            r0_ohm,
            t_ambient_kelvin,
            a1,
            a2,
        })
    }

    pub fn loop_amplification(&self) -> f64 {
        -self.a1 * self.a2
    }

    pub fn effective_resistance(&self) -> f64 {
        cold_effective_resistance(self.r0_ohm, self.loop_amplification())
    }

    pub fn effective_temperature(&self) -> f64 {
        cold_effective_temperature(self.t_ambient_kelvin, self.loop_amplification())
    }
}

/// Long-run second moments of the two wire voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyMoments {
    /// `<U_A^2>` in V^2.
    pub msq_a: f64,
    /// `<U_B^2>` in V^2.
    pub msq_b: f64,
    /// `<U_A U_B>` in V^2.
    pub cross: f64,
    /// Set when `a1 * a2 > 1`: the formula is finite but the loop cannot reach it.
    pub unreachable: bool,
}

impl SteadyMoments {
    pub fn correlation_coefficient(&self) -> f64 {
        self.cross / (self.msq_a * self.msq_b).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {x}")))
    }
}

/// Magnitude of a negative loop product, `-a1 * a2`.
pub fn loop_amplification(a1: f64, a2: f64) -> Result<f64> {
    let p = a1 * a2;
    if p < 0.0 {
        Ok(-p)
    } else {
        Err(Error::Domain(format!(
            "loop product a1*a2 = {p} is not negative; not a cold resistor"
        )))
    }
}

pub fn cold_effective_resistance(r0_ohm: f64, a_loop: f64) -> f64 {
    debug_assert!(r0_ohm > 0.0 && a_loop >= 0.0);
    r0_ohm / (1.0 + a_loop)
}

pub fn cold_effective_temperature(t_ambient_kelvin: f64, a_loop: f64) -> f64 {
    debug_assert!(t_ambient_kelvin > 0.0 && a_loop >= 0.0);
    t_ambient_kelvin / (1.0 + a_loop)
}

/// Thermal noise voltage spectral density `4kTR` in V^2/Hz.
pub fn johnson_spectrum(t_kelvin: f64, r_ohm: f64) -> Result<f64> {
    positive("temperature", t_kelvin)?;
    positive("resistance", r_ohm)?;
    Ok(4.0 * BOLTZMANN * t_kelvin * r_ohm)
}

/// Noise temperature of a resistor `r_ohm` whose voltage spectrum is `s_u`.
pub fn effective_temperature(s_u: f64, r_ohm: f64) -> Result<f64> {
    positive("spectrum", s_u)?;
    positive("resistance", r_ohm)?;
    Ok(s_u / (4.0 * BOLTZMANN * r_ohm))
}

/// Parallel combination of the two resistors connected to a KLJN wire.
pub fn kljn_parallel(r_a: f64, r_b: f64) -> Result<f64> {
    positive("r_a", r_a)?;
    positive("r_b", r_b)?;
    Ok(r_a * r_b / (r_a + r_b))
}

/// Mean-square KLJN wire voltage, `4 k T_eff R_p df`.
pub fn kljn_wire_msq(t_eff_kelvin: f64, r_p: f64, bandwidth_hz: f64) -> Result<f64> {
    positive("temperature", t_eff_kelvin)?;
    positive("resistance", r_p)?;
    positive("bandwidth", bandwidth_hz)?;
    Ok(4.0 * BOLTZMANN * t_eff_kelvin * r_p * bandwidth_hz)
}

/// Steady-state moments for independent sources of equal variance `sigma_sq`.
pub fn steady_moments(a1: f64, a2: f64, sigma_sq: f64) -> Result<SteadyMoments> {
    steady_moments_general(a1, a2, sigma_sq, sigma_sq, 0.0)
}

/// Moments allowing unequal source variances and a source cross term.
///
/// With `cross_12 = 0` this reduces to [`steady_moments`]; the general form is
/// what a finite Monte Carlo run should be compared against when its measured
/// source statistics are used.
pub fn steady_moments_general(
    a1: f64,
    a2: f64,
    var_1: f64,
    var_2: f64,
    cross_12: f64,
) -> Result<SteadyMoments> {
    let p = a1 * a2;
    if (1.0 - p).abs() < 1e-12 {
        return Err(Error::Singular(format!(
            "a1*a2 = {p} makes 1 - a1*a2 vanish"
        )));
    }
    let d = (1.0 - p) * (1.0 - p);
    Ok(SteadyMoments {
        msq_a: (var_1 + a1 * a1 * var_2 + 2.0 * a1 * cross_12) / d,
        msq_b: (var_2 + a2 * a2 * var_1 + 2.0 * a2 * cross_12) / d,
        cross: (a2 * var_1 + a1 * var_2 + (1.0 + p) * cross_12) / d,
        unreachable: p > 1.0,
    })
}

/// Sign of the wire cross-correlation, which follows the sign of `a1 + a2`.
pub fn expected_sign(a1: f64, a2: f64) -> Sign {
    let s = a1 + a2;
    if s < 0.0 {
        Sign::Negative
    } else if s > 0.0 {
        Sign::Positive
    } else {
        Sign::Zero
    }
}
