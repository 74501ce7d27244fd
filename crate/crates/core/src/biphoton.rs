//! Gaussian SPDC joint spectral amplitude and its sideband network under
//! dual-arm electro-optic phase modulation.
//!
//! The amplitude is taken as the positive square root of the Gaussian joint
//! spectral intensity,
//!
//! ```text
//! f(ν1, ν2) = 2/sqrt(π σa σd) · exp[-(ν1+ν2)²/σd²] · exp[-(ν1-ν2)²/σa²]
//! ```
//!
//! with `ν = ω − ω0` the detuning from the degenerate centre frequency. A
//! sinusoidal phase `β sin(Ωt + θ)` on each arm turns it into
//! `Σ_mn J_m(β1) J_n(β2) e^{i(mθ1+nθ2)} f(ν1 − mΩ1, ν2 − nΩ2)`.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::specfun::{self, bessel_j_sequence, truncation_order};
use crate::{Error, Result, SPEED_OF_LIGHT_NM_PER_PS};

/// How the optical carrier phase `ω0·T` of a reflection is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CarrierPhasePolicy {
    /// Phase of the deepest interface relative to the front surface, in radians.
    /// Intermediate interfaces get a share proportional to their delay.
    Explicit(f64),
    /// `ω0·T_j mod 2π` from the stored centre frequency.
    FromOmega0,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiphotonSpectrum {
    omega0: f64,
    sigma_a: f64,
    sigma_d: f64,
    carrier_phase: CarrierPhasePolicy,
}

impl BiphotonSpectrum {
    /// `omega0` may be `0.0` (unknown) unless the policy is [`CarrierPhasePolicy::FromOmega0`].
    pub fn new(
        omega0: f64,
        sigma_a: f64,
        sigma_d: f64,
        carrier_phase: CarrierPhasePolicy,
    ) -> Result<Self> {
        if !(sigma_a > 0.0 && sigma_a.is_finite()) {
            return Err(Error::domain("sigma_a", sigma_a, "bandwidth must be > 0"));
        }
        if !(sigma_d > 0.0 && sigma_d.is_finite()) {
            return Err(Error::domain("sigma_d", sigma_d, "bandwidth must be > 0"));
        }
        if !(omega0 >= 0.0 && omega0.is_finite()) {
            return Err(Error::domain(
                "omega0",
                omega0,
                "centre frequency must be >= 0",
            ));
        }
        match carrier_phase {
            CarrierPhasePolicy::FromOmega0 if omega0 <= 0.0 => {
                return Err(Error::domain(
                    "omega0",
                    omega0,
                    "carrier phase from omega0 needs omega0 > 0",
                ))
            }
            CarrierPhasePolicy::Explicit(phi) if !phi.is_finite() => {
                return Err(Error::domain("carrier_phase", phi, "must be finite"))
            }
            _ => {}
        }
        Ok(Self {
            omega0,
            sigma_a,
            sigma_d,
            carrier_phase,
        })
    }

    /// Spectrum without a known carrier frequency and an explicit carrier phase.
    pub fn with_bandwidths(sigma_a: f64, sigma_d: f64, carrier_phase: f64) -> Result<Self> {
        Self::new(
            0.0,
            sigma_a,
            sigma_d,
            CarrierPhasePolicy::Explicit(carrier_phase),
        )
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn sigma_a(&self) -> f64 {
        self.sigma_a
    }

    pub fn sigma_d(&self) -> f64 {
        self.sigma_d
    }

    pub fn carrier_phase_policy(&self) -> CarrierPhasePolicy {
        self.carrier_phase
    }

    pub fn with_carrier_phase(&self, policy: CarrierPhasePolicy) -> Result<Self> {
        Self::new(self.omega0, self.sigma_a, self.sigma_d, policy)
    }

    fn norm(&self) -> f64 {
        2.0 / (PI * self.sigma_a * self.sigma_d).sqrt()
    }

    /// Unmodulated amplitude `f(ν1, ν2)`; real, positive and symmetric.
    pub fn jsa_base(&self, nu1: f64, nu2: f64) -> f64 {
        let s = (nu1 + nu2) / self.sigma_d;
        let d = (nu1 - nu2) / self.sigma_a;
        self.norm() * (-(s * s) - d * d).exp()
    }

    /// Phase-modulated amplitude `f_PM(ν1, ν2)`.
    pub fn jsa_pm(&self, network: &SidebandNetwork, nu1: f64, nu2: f64) -> Complex64 {
        network
            .entries()
            .iter()
            .map(|e| e.weight * self.jsa_base(nu1 - e.shift1, nu2 - e.shift2))
            .sum()
    }
}

/// Angular frequency (rad/ps) of light at the given vacuum wavelength.
pub fn omega_from_wavelength(wavelength_nm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS / wavelength_nm
}

/// Anti-diagonal bandwidth `σa` (rad/ps) for a band-pass filter.
///
/// The filter FWHM is converted to angular frequency, `2πc·Δλ/λ²`, and
/// divided by `sqrt(2 ln 2)`, the FWHM of `exp[-2(x/σ)²]` in units of `σ`.
pub fn sigma_from_bandpass(center_nm: f64, fwhm_nm: f64) -> Result<f64> {
    if !(center_nm > 0.0) {
        return Err(Error::domain(
            "center_wavelength_nm",
            center_nm,
            "must be > 0",
        ));
    }
    if !(fwhm_nm > 0.0) {
        return Err(Error::domain("filter_fwhm_nm", fwhm_nm, "must be > 0"));
    }
    let fwhm_omega = 2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS * fwhm_nm / (center_nm * center_nm);
    Ok(fwhm_omega / (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Drive of one electro-optic phase modulator: `φ(t) = β sin(Ωt + θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulationSettings {
    beta: f64,
    omega_rf: f64,
    theta: f64,
}

impl ModulationSettings {
    /// `theta` is wrapped into `[0, 2π)`.
    pub fn new(beta: f64, omega_rf: f64, theta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::domain("beta", beta, "modulation index must be >= 0"));
        }
        if !(omega_rf >= 0.0 && omega_rf.is_finite()) {
            return Err(Error::domain(
                "omega_rf",
                omega_rf,
                "drive frequency must be >= 0",
            ));
        }
        if !theta.is_finite() {
            return Err(Error::domain("theta", theta, "must be finite"));
        }
        Ok(Self {
            beta,
            omega_rf,
            theta: specfun::wrap_angle(theta),
        })
    }

    pub fn unmodulated() -> Self {
        Self {
            beta: 0.0,
            omega_rf: 0.0,
            theta: 0.0,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn omega_rf(&self) -> f64 {
        self.omega_rf
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Modulation index `β = π·V/Vπ` with `V` the drive amplitude, i.e. half of `v_pp`.
///
/// Cable losses are not modelled; `β` itself is the primary configuration input.
pub fn from_drive_voltage(v_pp: f64, v_pi: f64) -> Result<f64> {
    if !(v_pi > 0.0) {
        return Err(Error::domain("v_pi", v_pi, "half-wave voltage must be > 0"));
    }
    if !(v_pp >= 0.0) {
        return Err(Error::domain("v_pp", v_pp, "drive voltage must be >= 0"));
    }
    Ok(PI * 0.5 * v_pp / v_pi)
}

/// One sub-JSA `J_m(β1) J_n(β2) e^{i(mθ1+nθ2)} f(ν1 − mΩ1, ν2 − nΩ2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SidebandEntry {
    pub m: i32,
    pub n: i32,
    /// Real Bessel product `Λ_mn = J_m(β1) J_n(β2)`.
    pub lambda: f64,
    pub weight: Complex64,
    pub shift1: f64,
    pub shift2: f64,
}

impl SidebandEntry {
    /// `Δ⁺ = mΩ1 + nΩ2`
    #[inline]
    pub fn delta_plus(&self) -> f64 {
        self.shift1 + self.shift2
    }

    /// `Δ⁻ = mΩ1 − nΩ2`
    #[inline]
    pub fn delta_minus(&self) -> f64 {
        self.shift1 - self.shift2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SidebandNetwork {
    entries: Vec<SidebandEntry>,
    epsilon: f64,
    arms: [ModulationSettings; 2],
}

impl SidebandNetwork {
    /// Truncated Jacobi-Anger network for two modulated arms.
    ///
    /// Orders run over `|m| ≤ truncation_order(β1, ε)` and `|n| ≤ truncation_order(β2, ε)`;
    /// entries are ordered by `m`, then `n`.
    pub fn build(mod1: ModulationSettings, mod2: ModulationSettings, epsilon: f64) -> Result<Self> {
        let m_max = truncation_order(mod1.beta, epsilon)?;
        let n_max = truncation_order(mod2.beta, epsilon)?;
        let j1 = bessel_j_sequence(m_max, mod1.beta)?;
        let j2 = bessel_j_sequence(n_max, mod2.beta)?;
        let signed = |j: &[f64], k: i32| {
            let v = j[k.unsigned_abs() as usize];
            if k < 0 && k % 2 != 0 {
                -v
            } else {
                v
            }
        };
        let (m_max, n_max) = (m_max as i32, n_max as i32);
        let mut entries = Vec::with_capacity(((2 * m_max + 1) * (2 * n_max + 1)) as usize);
        for m in -m_max..=m_max {
            for n in -n_max..=n_max {
                let lambda = signed(&j1, m) * signed(&j2, n);
                let phase = m as f64 * mod1.theta + n as f64 * mod2.theta;
                entries.push(SidebandEntry {
                    m,
                    n,
                    lambda,
                    weight: Complex64::from_polar(lambda, phase),
                    shift1: m as f64 * mod1.omega_rf,
                    shift2: n as f64 * mod2.omega_rf,
                });
            }
        }
        Ok(Self {
            entries,
            epsilon,
            arms: [mod1, mod2],
        })
    }

    /// The trivial network `{(0, 0) → 1}`.
    pub fn identity(epsilon: f64) -> Result<Self> {
        let off = ModulationSettings::unmodulated();
        Self::build(off, off, epsilon)
    }

    pub fn entries(&self) -> &[SidebandEntry] {
        &self.entries
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn arm1(&self) -> &ModulationSettings {
        &self.arms[0]
    }

    pub fn arm2(&self) -> &ModulationSettings {
        &self.arms[1]
    }

    /// `Σ |weight|²`
    pub fn weight_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.lambda * e.lambda).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Free-function form of [`SidebandNetwork::build`].
pub fn build_sideband_network(
    mod1: ModulationSettings,
    mod2: ModulationSettings,
    epsilon: f64,
) -> Result<SidebandNetwork> {
    SidebandNetwork::build(mod1, mod2, epsilon)
}
