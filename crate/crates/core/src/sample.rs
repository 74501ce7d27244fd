//! Axial sample morphology as a transfer function `H(ω) = Σ_j r_j e^{iωT_j}`.
//!
//! Multiple reflections between layers and transmission losses are not
//! modelled.

use num_complex::Complex64;

use crate::biphoton::{BiphotonSpectrum, CarrierPhasePolicy};
use crate::specfun::{mul_mod_two_pi, wrap_angle};
use crate::{Error, Result, SPEED_OF_LIGHT_MM_PER_PS};

/// A reflecting interface: amplitude reflection coefficient and round-trip delay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub r: f64,
    pub delay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    /// Validates ordering (`delay` starts at 0, strictly increasing) and `r ∈ [0, 1]`.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Precondition("layer stack needs at least one layer".into()))?;
        if first.delay != 0.0 {
            return Err(Error::domain(
                "delay",
                first.delay,
                "first layer defines the origin and must have delay 0",
            ));
        }
        for l in &layers {
            if !(0.0..=1.0).contains(&l.r) {
                return Err(Error::domain(
                    "r",
                    l.r,
                    "reflection coefficient must lie in [0, 1]",
                ));
            }
            if !l.delay.is_finite() {
                return Err(Error::domain("delay", l.delay, "must be finite"));
            }
        }
        if let Some(w) = layers.windows(2).find(|w| w[1].delay <= w[0].delay) {
            return Err(Error::domain(
                "delay",
                w[1].delay,
                "delays must be strictly increasing",
            ));
        }
        Ok(Self { layers })
    }

    /// Two interfaces at 0 and `delay`.
    pub fn two_layer(r1: f64, r2: f64, delay: f64) -> Result<Self> {
        Self::new(vec![Layer { r: r1, delay: 0.0 }, Layer { r: r2, delay }])
    }

    /// Builds a stack from slab thicknesses (mm), refractive indices and power reflectivities.
    ///
    /// `reflectivities` has one more entry than the slab lists; `T_j` is the
    /// cumulative round-trip optical path `2 Σ_{k<j} d_k n_k / c` and `r_j = sqrt(R_j)`.
    pub fn from_physical(
        thicknesses_mm: &[f64],
        refractive_indices: &[f64],
        reflectivities: &[f64],
    ) -> Result<Self> {
        if thicknesses_mm.len() != refractive_indices.len() {
            return Err(Error::Precondition(format!(
                "{} thicknesses but {} refractive indices",
                thicknesses_mm.len(),
                refractive_indices.len()
            )));
        }
        if reflectivities.len() != thicknesses_mm.len() + 1 {
            return Err(Error::Precondition(format!(
                "{} slabs need {} reflectivities, got {}",
                thicknesses_mm.len(),
                thicknesses_mm.len() + 1,
                reflectivities.len()
            )));
        }
        let mut delay = 0.0;
        let mut layers = Vec::with_capacity(reflectivities.len());
        for (j, &big_r) in reflectivities.iter().enumerate() {
            if !(0.0..=1.0).contains(&big_r) {
                return Err(Error::domain(
                    "R",
                    big_r,
                    "power reflectivity must lie in [0, 1]",
                ));
            }
            if j > 0 {
                let d = thicknesses_mm[j - 1];
                let n = refractive_indices[j - 1];
                if !(d >= 0.0) {
                    return Err(Error::domain("thickness_mm", d, "must be >= 0"));
                }
                if !(n >= 1.0) {
                    return Err(Error::domain("n", n, "refractive index must be >= 1"));
                }
                delay += 2.0 * d * n / SPEED_OF_LIGHT_MM_PER_PS;
            }
            layers.push(Layer {
                r: big_r.sqrt(),
                delay,
            });
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Delay of the deepest interface.
    pub fn max_delay(&self) -> f64 {
        self.layers.last().map_or(0.0, |l| l.delay)
    }

    /// Per-layer carrier phases `φ_j` (radians) under the given policy.
    pub fn carrier_phases(&self, spectrum: &BiphotonSpectrum) -> Vec<f64> {
        let t_last = self.max_delay();
        self.layers
            .iter()
            .map(|l| match spectrum.carrier_phase_policy() {
                CarrierPhasePolicy::Explicit(phi) => {
                    if t_last > 0.0 {
                        phi * (l.delay / t_last)
                    } else {
                        0.0
                    }
                }
                CarrierPhasePolicy::FromOmega0 => mul_mod_two_pi(spectrum.omega0(), l.delay),
            })
            .map(wrap_angle)
            .collect()
    }

    /// `H(ω0 + ν) = Σ_j r_j e^{iφ_j} e^{iνT_j}`.
    pub fn transfer(&self, nu: f64, carrier_phases: &[f64]) -> Complex64 {
        self.layers
            .iter()
            .zip(carrier_phases)
            .map(|(l, &phi)| Complex64::from_polar(l.r, phi + nu * l.delay))
            .sum()
    }
}

/// Free-function form of [`LayerStack::from_physical`].
pub fn from_physical_stack(
    thicknesses_mm: &[f64],
    refractive_indices: &[f64],
    reflectivities: &[f64],
) -> Result<LayerStack> {
    LayerStack::from_physical(thicknesses_mm, refractive_indices, reflectivities)
}
