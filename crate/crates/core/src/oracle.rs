//! Brute-force reference for the coincidence integral
//!
//! ```text
//! C(τ) = ∫∫ |f_PM(ν1, ν2) H(ν2) − f_PM(ν2, ν1) H(ν1) e^{i(ν2−ν1)τ}|² dν1 dν2 = G0 − G(τ)
//! ```
//!
//! evaluated on a tensor-product grid in plain detuning coordinates. The
//! sideband sum is rebuilt here term by term from scalar Bessel values, so
//! the only code shared with the closed-form engine is the special-function
//! layer and the sample transfer function.

use num_complex::Complex64;

use crate::biphoton::{BiphotonSpectrum, ModulationSettings};
use crate::exec::Execution;
use crate::sample::LayerStack;
use crate::specfun::{bessel_j, truncation_order, CompensatedSum, DEFAULT_EPSILON};
use crate::{Error, Result};

/// Relative change allowed between a grid and its doubled refinement.
pub const DOUBLING_TOLERANCE: f64 = 1e-3;

/// Gaussian factors with exponent below `-EXPONENT_CUTOFF` are treated as zero.
const EXPONENT_CUTOFF: f64 = 40.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureScheme {
    #[default]
    Simpson,
    Trapezoid,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct QuadratureGrid {
    half_width: f64,
    points_per_axis: usize,
    scheme: QuadratureScheme,
}

impl QuadratureGrid {
    /// `half_width` is in units of `max(σa, σd)`; the grid also covers the largest sideband shift.
    pub fn new(half_width: f64, points_per_axis: usize, scheme: QuadratureScheme) -> Result<Self> {
        if !(half_width >= 5.0 && half_width.is_finite()) {
            return Err(Error::domain("half_width", half_width, "must be >= 5"));
        }
        if points_per_axis < 64 {
            return Err(Error::domain(
                "points_per_axis",
                points_per_axis as f64,
                "must be >= 64",
            ));
        }
        Ok(Self {
            half_width,
            points_per_axis,
            scheme,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn scheme(&self) -> QuadratureScheme {
        self.scheme
    }

    /// The same extent with the node spacing halved.
    pub fn doubled(&self) -> Self {
        Self {
            points_per_axis: 2 * self.node_count() - 1,
            ..*self
        }
    }

    /// Simpson needs an odd node count; an even request is rounded up.
    fn node_count(&self) -> usize {
        match self.scheme {
            QuadratureScheme::Simpson => self.points_per_axis | 1,
            QuadratureScheme::Trapezoid => self.points_per_axis,
        }
    }

    fn weights(&self, step: f64) -> Vec<f64> {
        let n = self.node_count();
        match self.scheme {
            QuadratureScheme::Trapezoid => (0..n)
                .map(|i| {
                    if i == 0 || i == n - 1 {
                        0.5 * step
                    } else {
                        step
                    }
                })
                .collect(),
            QuadratureScheme::Simpson => (0..n)
                .map(|i| {
                    let w = if i == 0 || i == n - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w * step / 3.0
                })
                .collect(),
        }
    }
}

/// Coincidence value and its split into self- and cross-interference.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OracleValue {
    pub c: f64,
    pub g0: f64,
    pub g: f64,
}

impl OracleValue {
    /// Normalised coincidence `Γ = C / G0`.
    pub fn gamma(&self) -> f64 {
        self.c / self.g0
    }
}

#[derive(Clone, Copy, Debug)]
struct Sideband {
    weight: Complex64,
    shift1: f64,
    shift2: f64,
}

fn sidebands(mod1: &ModulationSettings, mod2: &ModulationSettings) -> Result<Vec<Sideband>> {
    let m_max = truncation_order(mod1.beta(), DEFAULT_EPSILON)? as i32;
    let n_max = truncation_order(mod2.beta(), DEFAULT_EPSILON)? as i32;
    let mut out = Vec::new();
    for m in -m_max..=m_max {
        let jm = bessel_j(m, mod1.beta())?;
        for n in -n_max..=n_max {
            let jn = bessel_j(n, mod2.beta())?;
            out.push(Sideband {
                weight: Complex64::from_polar(
                    1.0,
                    m as f64 * mod1.theta() + n as f64 * mod2.theta(),
                ) * (jm * jn),
                shift1: m as f64 * mod1.omega_rf(),
                shift2: n as f64 * mod2.omega_rf(),
            });
        }
    }
    Ok(out)
}

/// Direct `Σ J_m(β1) J_n(β2) e^{i(mθ1+nθ2)} f(ν1 − mΩ1, ν2 − nΩ2)`.
fn f_pm(spectrum: &BiphotonSpectrum, bands: &[Sideband], nu1: f64, nu2: f64) -> Complex64 {
    let (sa, sd) = (spectrum.sigma_a(), spectrum.sigma_d());
    let norm = 2.0 / (std::f64::consts::PI * sa * sd).sqrt();
    let mut acc = Complex64::new(0.0, 0.0);
    for b in bands {
        let x1 = nu1 - b.shift1;
        let x2 = nu2 - b.shift2;
        let s = (x1 + x2) / sd;
        let d = (x1 - x2) / sa;
        let exponent = s * s + d * d;
        if exponent > EXPONENT_CUTOFF {
            continue;
        }
        acc += b.weight * (norm * (-exponent).exp());
    }
    acc
}

/// Sampled integrand pieces `A = f_PM(ν1,ν2)H(ν2)` and `B = f_PM(ν2,ν1)H(ν1)`.
struct Discretisation {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    g0: f64,
    step: f64,
}

impl Discretisation {
    fn build(
        spectrum: &BiphotonSpectrum,
        bands: &[Sideband],
        stack: &LayerStack,
        grid: &QuadratureGrid,
        exec: Execution,
    ) -> Self {
        let max_shift = bands
            .iter()
            .map(|b| b.shift1.abs().max(b.shift2.abs()))
            .fold(0.0, f64::max);
        let extent = grid.half_width * spectrum.sigma_a().max(spectrum.sigma_d()) + max_shift;
        let n = grid.node_count();
        let step = 2.0 * extent / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| -extent + i as f64 * step).collect();
        let weights = grid.weights(step);
        let phases = stack.carrier_phases(spectrum);
        let h: Vec<Complex64> = nodes
            .iter()
            .map(|&nu| stack.transfer(nu, &phases))
            .collect();

        let f: Vec<Complex64> = exec
            .map_indexed(n, |i| {
                nodes
                    .iter()
                    .map(|&nu2| f_pm(spectrum, bands, nodes[i], nu2))
                    .collect::<Vec<_>>()
            })
            .concat();
        let a: Vec<Complex64> = (0..n * n).map(|k| f[k] * h[k % n]).collect();
        let b: Vec<Complex64> = (0..n * n)
            .map(|k| f[(k % n) * n + k / n] * h[k / n])
            .collect();

        let rows = exec.map_indexed(n, |i| {
            let mut acc = CompensatedSum::new();
            for j in 0..n {
                let k = i * n + j;
                acc.add(weights[j] * (a[k].norm_sqr() + b[k].norm_sqr()));
            }
            weights[i] * acc.value()
        });
        let g0 = rows.into_iter().collect::<CompensatedSum>().value();
        Self {
            nodes,
            weights,
            a,
            b,
            g0,
            step,
        }
    }

    fn check_resolution(
        &self,
        spectrum: &BiphotonSpectrum,
        stack: &LayerStack,
        tau: f64,
    ) -> Result<()> {
        let bandwidth_limit = spectrum.sigma_a().min(spectrum.sigma_d()) / 8.0;
        if self.step > bandwidth_limit {
            return Err(Error::Resolution {
                step: self.step,
                limit: bandwidth_limit,
                reason: "step must resolve the narrower spectral bandwidth",
            });
        }
        let lag = stack
            .layers()
            .iter()
            .map(|l| (tau - l.delay).abs())
            .fold(0.0, f64::max);
        if lag > 0.0 {
            let limit = std::f64::consts::TAU / lag / 8.0;
            if self.step > limit {
                return Err(Error::Resolution {
                    step: self.step,
                    limit,
                    reason: "step must resolve the delay oscillation",
                });
            }
        }
        Ok(())
    }

    fn evaluate(&self, tau: f64, exec: Execution) -> OracleValue {
        let n = self.nodes.len();
        let e: Vec<Complex64> = self
            .nodes
            .iter()
            .map(|&nu| Complex64::from_polar(1.0, nu * tau))
            .collect();
        let rows = exec.map_indexed(n, |i| {
            let back = e[i].conj();
            let mut c = CompensatedSum::new();
            let mut g = CompensatedSum::new();
            for j in 0..n {
                let k = i * n + j;
                let shifted = self.b[k] * (e[j] * back);
                let w = self.weights[j];
                c.add(w * (self.a[k] - shifted).norm_sqr());
                g.add(w * 2.0 * (self.a[k].conj() * shifted).re);
            }
            (self.weights[i] * c.value(), self.weights[i] * g.value())
        });
        let mut c = CompensatedSum::new();
        let mut g = CompensatedSum::new();
        for (ci, gi) in rows {
            c.add(ci);
            g.add(gi);
        }
        OracleValue {
            c: c.value(),
            g0: self.g0,
            g: g.value(),
        }
    }
}

fn check_positive(value: &OracleValue, tau: f64) -> Result<()> {
    if value.c < -1e-12 {
        return Err(Error::NonConvergence {
            what: "oracle positivity",
            detail: format!("C({tau}) = {} is negative", value.c),
        });
    }
    Ok(())
}

fn check_doubling(coarse: f64, fine: f64, scale: f64, what: &str) -> Result<()> {
    let change = (fine - coarse).abs() / scale;
    if change > DOUBLING_TOLERANCE {
        return Err(Error::NonConvergence {
            what: "quadrature grid doubling",
            detail: format!("{what} changed by {change:.3e} of G0 (coarse {coarse}, fine {fine})"),
        });
    }
    Ok(())
}

/// `C(τ)` with its `G0`/`G` split, checked against a grid with halved spacing.
pub fn c_tau_oracle(
    spectrum: &BiphotonSpectrum,
    mod1: &ModulationSettings,
    mod2: &ModulationSettings,
    stack: &LayerStack,
    tau: f64,
    grid: &QuadratureGrid,
) -> Result<OracleValue> {
    let mut out = c_tau_oracle_batch(
        spectrum,
        mod1,
        mod2,
        stack,
        &[tau],
        grid,
        Execution::default(),
    )?;
    Ok(out.remove(0))
}

/// [`c_tau_oracle`] over a τ grid, sharing the sampled integrand between delays.
pub fn c_tau_oracle_batch(
    spectrum: &BiphotonSpectrum,
    mod1: &ModulationSettings,
    mod2: &ModulationSettings,
    stack: &LayerStack,
    taus: &[f64],
    grid: &QuadratureGrid,
    exec: Execution,
) -> Result<Vec<OracleValue>> {
    let bands = sidebands(mod1, mod2)?;
    let coarse = Discretisation::build(spectrum, &bands, stack, grid, exec);
    for &tau in taus {
        coarse.check_resolution(spectrum, stack, tau)?;
    }
    let evaluate_all = |d: &Discretisation| -> Vec<OracleValue> {
        if taus.len() == 1 {
            vec![d.evaluate(taus[0], exec)]
        } else {
            exec.map_indexed(taus.len(), |k| d.evaluate(taus[k], Execution::Sequential))
        }
    };
    let coarse_values = evaluate_all(&coarse);
    drop(coarse);
    let fine = Discretisation::build(spectrum, &bands, stack, &grid.doubled(), exec);
    let fine_values = evaluate_all(&fine);

    check_doubling(coarse_values[0].g0, fine.g0, fine.g0, "G0")?;
    for ((tau, lo), hi) in taus.iter().zip(&coarse_values).zip(&fine_values) {
        check_doubling(lo.c, hi.c, fine.g0, &format!("C({tau})"))?;
        check_positive(hi, *tau)?;
    }
    Ok(fine_values)
}

/// Self-interference normalisation by quadrature, with the doubling check.
pub fn g0_quadrature(
    spectrum: &BiphotonSpectrum,
    mod1: &ModulationSettings,
    mod2: &ModulationSettings,
    stack: &LayerStack,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let bands = sidebands(mod1, mod2)?;
    let exec = Execution::default();
    let coarse = Discretisation::build(spectrum, &bands, stack, grid, exec);
    let bandwidth_limit = spectrum.sigma_a().min(spectrum.sigma_d()) / 8.0;
    if coarse.step > bandwidth_limit {
        return Err(Error::Resolution {
            step: coarse.step,
            limit: bandwidth_limit,
            reason: "step must resolve the narrower spectral bandwidth",
        });
    }
    let fine = Discretisation::build(spectrum, &bands, stack, &grid.doubled(), exec);
    check_doubling(coarse.g0, fine.g0, fine.g0, "G0")?;
    Ok(fine.g0)
}

/// Largest pointwise gap between the library's `f_PM(ν2, ν1)` and this module's
/// independent construction of the same swapped amplitude.
pub fn swap_consistency_check(
    spectrum: &BiphotonSpectrum,
    mod1: &ModulationSettings,
    mod2: &ModulationSettings,
    nu_samples: &[(f64, f64)],
) -> Result<f64> {
    let network = crate::biphoton::SidebandNetwork::build(*mod1, *mod2, DEFAULT_EPSILON)?;
    let bands = sidebands(mod1, mod2)?;
    Ok(nu_samples
        .iter()
        .map(|&(nu1, nu2)| {
            (spectrum.jsa_pm(&network, nu2, nu1) - f_pm(spectrum, &bands, nu2, nu1)).norm()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Layer;
    use std::f64::consts::PI;

    fn desk() -> BiphotonSpectrum {
        BiphotonSpectrum::with_bandwidths(2.0, 0.5, PI).unwrap()
    }

    fn mirror() -> LayerStack {
        LayerStack::new(vec![Layer { r: 1.0, delay: 0.0 }]).unwrap()
    }

    fn grid(n: usize) -> QuadratureGrid {
        QuadratureGrid::new(6.0, n, QuadratureScheme::Simpson).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::new(4.0, 128, QuadratureScheme::Simpson).is_err());
        assert!(QuadratureGrid::new(5.0, 63, QuadratureScheme::Simpson).is_err());
        let g = grid(128);
        assert_eq!(g.node_count(), 129);
        assert_eq!(g.doubled().node_count(), 257);
        let w = g.weights(0.1);
        assert!((w.iter().sum::<f64>() - 12.8).abs() < 1e-12);
        let t = QuadratureGrid::new(5.0, 100, QuadratureScheme::Trapezoid).unwrap();
        assert!((t.weights(0.1).iter().sum::<f64>() - 9.9).abs() < 1e-12);
    }

    #[test]
    fn perfect_dip_and_far_field() {
        let off = ModulationSettings::unmodulated();
        let at_zero = c_tau_oracle(&desk(), &off, &off, &mirror(), 0.0, &grid(400)).unwrap();
        assert!(at_zero.c.abs() < 1e-12);
        assert!((at_zero.g0 - 2.0).abs() < 1e-9);
        assert!((at_zero.g - at_zero.g0).abs() < 1e-9);
        let far = c_tau_oracle(&desk(), &off, &off, &mirror(), 20.0, &grid(640)).unwrap();
        assert!((far.gamma() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn split_is_consistent() {
        let m = ModulationSettings::new(1.2, 0.5, 0.0).unwrap();
        let stack = LayerStack::two_layer(0.6, 0.97, 6.0).unwrap();
        let v = c_tau_oracle(&desk(), &m, &m, &stack, 3.0, &grid(512)).unwrap();
        assert!((v.c - (v.g0 - v.g)).abs() < 1e-10 * v.g0);
        assert!(v.c >= 0.0);
    }

    #[test]
    fn resolution_is_enforced() {
        let off = ModulationSettings::unmodulated();
        let stack = LayerStack::two_layer(0.6, 0.97, 6.0).unwrap();
        let err = c_tau_oracle(&desk(), &off, &off, &stack, 3.0, &grid(64)).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
        let err = c_tau_oracle(&desk(), &off, &off, &stack, 200.0, &grid(512)).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
    }

    #[test]
    fn quadrature_g0_unmodulated_mirror() {
        let off = ModulationSettings::unmodulated();
        let g0 = g0_quadrature(&desk(), &off, &off, &mirror(), &grid(400)).unwrap();
        assert!((g0 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn swap_check() {
        let samples: Vec<(f64, f64)> = (0..40)
            .map(|k| (-2.0 + 0.1 * k as f64, 1.5 - 0.07 * k as f64))
            .collect();
        let off = ModulationSettings::unmodulated();
        assert_eq!(
            swap_consistency_check(&desk(), &off, &off, &samples).unwrap(),
            0.0
        );
        let m1 = ModulationSettings::new(1.2, 0.5, 0.3).unwrap();
        let m2 = ModulationSettings::new(0.7, 0.4, 1.1).unwrap();
        assert!(swap_consistency_check(&desk(), &m1, &m2, &samples).unwrap() < 1e-12);

        // fully symmetric drive: the swapped amplitude equals the unswapped one
        let m = ModulationSettings::new(1.2, 0.5, 0.4).unwrap();
        let bands = sidebands(&m, &m).unwrap();
        for &(a, b) in &samples {
            let d = (f_pm(&desk(), &bands, a, b) - f_pm(&desk(), &bands, b, a)).norm();
            assert!(d < 1e-14);
        }
    }
}
