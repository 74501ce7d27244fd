//! Closed-form HOM interferogram of a phase-modulated biphoton.
//!
//! Substituting the sideband network into the cross-interference integral and
//! integrating the Gaussian overlaps in the rotated coordinates
//! `u = ν1 + ν2`, `v = ν1 − ν2` gives, for `H(ω) = Σ_j r_j e^{iωT_j}`,
//!
//! ```text
//! G(τ) = 2 Σ_{mn} Σ_{m'n'} Λ_mn Λ_m'n' · e^{−(Δ⁺−Δ⁺')²/2σd²} · e^{−(Δ⁻+Δ⁻')²/2σa²}
//!        · [ Σ_j r_j² κ(T_j)
//!          + Σ_{j<k} 2 r_j r_k e^{−σd²(T_k−T_j)²/32} cos(φ_jk + (Δ⁺+Δ⁺')(T_k−T_j)/4) κ((T_j+T_k)/2) ]
//!
//! κ(𝒯) = e^{−σa²(𝒯−τ)²/8} cos((Δ⁻−Δ⁻')(𝒯−τ)/2 − Θ),   Θ = (m−m')θ1 + (n−n')θ2
//! ```
//!
//! Every layer pair contributes an artifact at its midpoint delay. The pair
//! coefficient is `2 r_j r_k`: `H*(ω1)H(ω2)` holds one cross term for each
//! ordering of the two layers.
//!
//! The τ-independent normalisation is the same overlap without the delay
//! scan,
//!
//! ```text
//! G0 = 2 Σ Σ Λ_mn Λ_m'n' e^{−(Δ⁺−Δ⁺')²/2σd²} e^{−(Δ⁻−Δ⁻')²/2σa²}
//!      · Σ_{j,k} r_j r_k e^{−(σa²+σd²)D_jk²/32} cos(φ_jk + Θ + (n+n')Ω2·D_jk/2),   D_jk = T_k − T_j
//! ```
//!
//! and the normalised interferogram is `Γ(τ) = 1 − G(τ)/G0`. Values of Γ above
//! one are peaks, values below one are dips.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::biphoton::{
    BiphotonSpectrum, CarrierPhasePolicy, ModulationSettings, SidebandEntry, SidebandNetwork,
};
use crate::exec::Execution;
use crate::sample::LayerStack;
use crate::specfun::CompensatedSum;
use crate::{Error, Result};

/// Features whose Gaussian envelope falls below this are skipped.
const ENVELOPE_CUTOFF: f64 = 1e-18;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineMode {
    /// Full double sum over sideband pairs.
    #[default]
    #[serde(rename = "full")]
    FullSum,
    /// Only `m = m'`, `n = n'`; valid when the pump bandwidth is far below the drive frequency.
    #[serde(rename = "diagonal")]
    Diagonal,
}

impl std::fmt::Display for EngineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineMode::FullSum => "full",
            EngineMode::Diagonal => "diagonal",
        })
    }
}

impl std::str::FromStr for EngineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EngineMode::FullSum),
            "diagonal" => Ok(EngineMode::Diagonal),
            other => Err(Error::config(
                "engine.mode",
                format!("unknown mode `{other}`, expected `full` or `diagonal`"),
            )),
        }
    }
}

/// One `(m, n), (m', n')` term of the double sideband sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SidebandPairTerm {
    pub m: i32,
    pub n: i32,
    pub m_prime: i32,
    pub n_prime: i32,
    pub lambda_product: f64,
    pub delta_plus: f64,
    pub delta_plus_prime: f64,
    pub delta_minus: f64,
    pub delta_minus_prime: f64,
    pub theta_offset: f64,
}

impl SidebandPairTerm {
    pub fn new(a: &SidebandEntry, b: &SidebandEntry, theta1: f64, theta2: f64) -> Self {
        Self {
            m: a.m,
            n: a.n,
            m_prime: b.m,
            n_prime: b.n,
            lambda_product: a.lambda * b.lambda,
            delta_plus: a.delta_plus(),
            delta_plus_prime: b.delta_plus(),
            delta_minus: a.delta_minus(),
            delta_minus_prime: b.delta_minus(),
            theta_offset: (a.m - b.m) as f64 * theta1 + (a.n - b.n) as f64 * theta2,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.m == self.m_prime && self.n == self.n_prime
    }
}

/// `κ(𝒯) = exp[−σa²(𝒯−τ)²/8] · cos[(Δ⁻ − Δ⁻')(𝒯−τ)/2 − Θ]`.
pub fn kappa(term: &SidebandPairTerm, sigma_a: f64, script_t: f64, tau: f64) -> f64 {
    let x = script_t - tau;
    let envelope = (-sigma_a * sigma_a * x * x / 8.0).exp();
    envelope * (0.5 * (term.delta_minus - term.delta_minus_prime) * x - term.theta_offset).cos()
}

/// Pair term reduced to the numbers the sums need.
#[derive(Clone, Copy, Debug)]
struct PreparedTerm {
    /// `2 Λ Λ' e^{−(Δ⁺−Δ⁺')²/2σd²} e^{−(Δ⁻+Δ⁻')²/2σa²}`
    g_weight: f64,
    /// `2 Λ Λ' e^{−(Δ⁺−Δ⁺')²/2σd²} e^{−(Δ⁻−Δ⁻')²/2σa²}`
    g0_weight: f64,
    half_delta_minus: f64,
    theta: f64,
    quarter_delta_plus_sum: f64,
    half_n_sum_omega2: f64,
}

/// A dip (`j = k`) or artifact (`j < k`) centred at `(T_j + T_k)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    pub first: usize,
    pub second: usize,
    pub center: f64,
    pub separation: f64,
    amplitude: f64,
    carrier_phase: f64,
}

impl Feature {
    pub fn is_dip(&self) -> bool {
        self.first == self.second
    }
}

/// Closed-form evaluator for one configuration; build once, evaluate at many delays.
#[derive(Clone, Debug)]
pub struct HomEngine {
    mode: EngineMode,
    sigma_a: f64,
    sigma_d: f64,
    stack: LayerStack,
    carrier_phases: Vec<f64>,
    terms: Arc<[PreparedTerm]>,
    features: Vec<Feature>,
    g0: f64,
}

impl HomEngine {
    pub fn new(
        spectrum: &BiphotonSpectrum,
        network: &SidebandNetwork,
        stack: &LayerStack,
        mode: EngineMode,
    ) -> Result<Self> {
        if network.is_empty() {
            return Err(Error::Precondition("sideband network is empty".into()));
        }
        let terms: Arc<[PreparedTerm]> = prepare_terms(spectrum, network, mode).into();
        let phases = stack.carrier_phases(spectrum);
        Ok(Self::assemble(spectrum, stack, mode, terms, phases))
    }

    fn assemble(
        spectrum: &BiphotonSpectrum,
        stack: &LayerStack,
        mode: EngineMode,
        terms: Arc<[PreparedTerm]>,
        carrier_phases: Vec<f64>,
    ) -> Self {
        let sigma_d = spectrum.sigma_d();
        let layers = stack.layers();
        let mut features = Vec::with_capacity(layers.len() * (layers.len() + 1) / 2);
        for (j, layer) in layers.iter().enumerate() {
            features.push(Feature {
                first: j,
                second: j,
                center: layer.delay,
                separation: 0.0,
                amplitude: layer.r * layer.r,
                carrier_phase: 0.0,
            });
        }
        for j in 0..layers.len() {
            for k in (j + 1)..layers.len() {
                let d = layers[k].delay - layers[j].delay;
                features.push(Feature {
                    first: j,
                    second: k,
                    center: 0.5 * (layers[j].delay + layers[k].delay),
                    separation: d,
                    amplitude: 2.0
                        * layers[j].r
                        * layers[k].r
                        * (-sigma_d * sigma_d * d * d / 32.0).exp(),
                    carrier_phase: carrier_phases[k] - carrier_phases[j],
                });
            }
        }
        let mut engine = Self {
            mode,
            sigma_a: spectrum.sigma_a(),
            sigma_d,
            stack: stack.clone(),
            carrier_phases,
            terms,
            features,
            g0: 0.0,
        };
        engine.g0 = engine.compute_g0();
        engine
    }

    /// Same sideband terms with every layer carrier phase replaced by `policy`.
    ///
    /// Reuses the (expensive) pair list; only the τ-independent normalisation is redone.
    pub fn with_carrier_phase(&self, spectrum: &BiphotonSpectrum) -> Self {
        let phases = self.stack.carrier_phases(spectrum);
        Self::assemble(spectrum, &self.stack, self.mode, self.terms.clone(), phases)
    }

    fn compute_g0(&self) -> f64 {
        let layers = self.stack.layers();
        let spread = self.sigma_a * self.sigma_a + self.sigma_d * self.sigma_d;
        let mut pairs = Vec::new();
        for (j, lj) in layers.iter().enumerate() {
            for (k, lk) in layers.iter().enumerate() {
                let d = lk.delay - lj.delay;
                let amplitude = lj.r * lk.r * (-spread * d * d / 32.0).exp();
                if amplitude > ENVELOPE_CUTOFF || j == k {
                    pairs.push((
                        amplitude,
                        self.carrier_phases[k] - self.carrier_phases[j],
                        d,
                    ));
                }
            }
        }
        let mut acc = CompensatedSum::new();
        for t in self.terms.iter() {
            for &(amplitude, phase, d) in &pairs {
                acc.add(
                    t.g0_weight * amplitude * (phase + t.theta + t.half_n_sum_omega2 * d).cos(),
                );
            }
        }
        acc.value()
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn carrier_phases(&self) -> &[f64] {
        &self.carrier_phases
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Number of sideband pair terms retained after truncation.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Self-interference normalisation `G0`.
    pub fn g0(&self) -> f64 {
        self.g0
    }

    /// Cross-interference term `G(τ)`.
    pub fn g_cross(&self, tau: f64) -> f64 {
        let quarter_sa2 = self.sigma_a * self.sigma_a / 8.0;
        let mut total = CompensatedSum::new();
        for f in &self.features {
            let x = f.center - tau;
            let envelope = (-quarter_sa2 * x * x).exp();
            if envelope < ENVELOPE_CUTOFF {
                continue;
            }
            let mut acc = CompensatedSum::new();
            if f.is_dip() {
                for t in self.terms.iter() {
                    acc.add(t.g_weight * (t.half_delta_minus * x - t.theta).cos());
                }
            } else {
                for t in self.terms.iter() {
                    let carrier = (f.carrier_phase + t.quarter_delta_plus_sum * f.separation).cos();
                    acc.add(t.g_weight * carrier * (t.half_delta_minus * x - t.theta).cos());
                }
            }
            total.add(f.amplitude * envelope * acc.value());
        }
        total.value()
    }

    /// `Γ(τ) = 1 − G(τ)/G0`.
    pub fn gamma(&self, tau: f64) -> f64 {
        1.0 - self.g_cross(tau) / self.g0
    }

    pub fn interferogram(&self, tau_grid: &[f64], exec: Execution) -> Result<Interferogram> {
        check_tau_grid(tau_grid)?;
        let gamma = exec.map_indexed(tau_grid.len(), |i| self.gamma(tau_grid[i]));
        Ok(Interferogram {
            tau_grid: tau_grid.to_vec(),
            gamma,
            g0: self.g0,
            engine_mode: self.mode,
            provenance: String::new(),
        })
    }

    /// Artifact visibility `A = Γ(T/2) − 1` of a two-layer sample; `A > 0` is a peak.
    pub fn artifact_amplitude(&self) -> Result<f64> {
        require_two_layers(&self.stack)?;
        Ok(self.gamma(0.5 * self.stack.max_delay()) - 1.0)
    }
}

fn prepare_terms(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    mode: EngineMode,
) -> Vec<PreparedTerm> {
    let entries = network.entries();
    let (theta1, theta2) = (network.arm1().theta(), network.arm2().theta());
    let omega2 = network.arm2().omega_rf();
    let sa2 = spectrum.sigma_a() * spectrum.sigma_a();
    let sd2 = spectrum.sigma_d() * spectrum.sigma_d();
    let threshold = skip_threshold(network);

    let prepare = |a: &SidebandEntry, b: &SidebandEntry| -> Option<PreparedTerm> {
        let lambda_product = a.lambda * b.lambda;
        if lambda_product.abs() < threshold {
            return None;
        }
        let dp = a.delta_plus() - b.delta_plus();
        let e_plus = (-dp * dp / (2.0 * sd2)).exp();
        let magnitude = 2.0 * lambda_product * e_plus;
        if magnitude.abs() < 2.0 * threshold {
            return None;
        }
        let sum_minus = a.delta_minus() + b.delta_minus();
        let diff_minus = a.delta_minus() - b.delta_minus();
        Some(PreparedTerm {
            g_weight: magnitude * (-sum_minus * sum_minus / (2.0 * sa2)).exp(),
            g0_weight: magnitude * (-diff_minus * diff_minus / (2.0 * sa2)).exp(),
            half_delta_minus: 0.5 * diff_minus,
            theta: (a.m - b.m) as f64 * theta1 + (a.n - b.n) as f64 * theta2,
            quarter_delta_plus_sum: 0.25 * (a.delta_plus() + b.delta_plus()),
            half_n_sum_omega2: 0.5 * (a.n + b.n) as f64 * omega2,
        })
    };

    match mode {
        EngineMode::FullSum => entries
            .iter()
            .flat_map(|a| entries.iter().filter_map(move |b| prepare(a, b)))
            .collect(),
        EngineMode::Diagonal => entries.iter().filter_map(|a| prepare(a, a)).collect(),
    }
}

/// Pair terms with `|Λ Λ'|·e^{−(Δ⁺−Δ⁺')²/2σd²} < ε²·max Λ²` are dropped.
fn skip_threshold(network: &SidebandNetwork) -> f64 {
    let max_sq = network
        .entries()
        .iter()
        .map(|e| e.lambda * e.lambda)
        .fold(0.0, f64::max);
    network.epsilon() * network.epsilon() * max_sq
}

fn require_two_layers(stack: &LayerStack) -> Result<()> {
    if stack.len() == 2 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "operation needs a two-layer stack, got {} layers",
            stack.len()
        )))
    }
}

fn check_tau_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.is_empty() {
        return Err(Error::Precondition("tau grid is empty".into()));
    }
    if tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition(
            "tau grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `G(τ)` of a two-layer sample evaluated term by term, pair-major.
///
/// This is the direct transcription of the double sum; [`HomEngine`] evaluates
/// the same terms in a feature-major order with precomputed weights.
pub fn g_cross_two_layer(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    stack: &LayerStack,
    tau: f64,
) -> Result<f64> {
    require_two_layers(stack)?;
    let (r1, r2) = (stack.layers()[0].r, stack.layers()[1].r);
    let t = stack.max_delay();
    let phi_c = {
        let p = stack.carrier_phases(spectrum);
        p[1] - p[0]
    };
    let (sa, sd) = (spectrum.sigma_a(), spectrum.sigma_d());
    let (theta1, theta2) = (network.arm1().theta(), network.arm2().theta());
    let threshold = skip_threshold(network);
    let artifact_envelope = 2.0 * r1 * r2 * (-sd * sd * t * t / 32.0).exp();

    let mut acc = CompensatedSum::new();
    for a in network.entries() {
        for b in network.entries() {
            let term = SidebandPairTerm::new(a, b, theta1, theta2);
            let dp = term.delta_plus - term.delta_plus_prime;
            let e_plus = (-dp * dp / (2.0 * sd * sd)).exp();
            if term.lambda_product.abs() < threshold
                || (term.lambda_product * e_plus).abs() < threshold
            {
                continue;
            }
            let sm = term.delta_minus + term.delta_minus_prime;
            let e_minus = (-sm * sm / (2.0 * sa * sa)).exp();
            let carrier = (phi_c + 0.5 * (term.delta_plus + term.delta_plus_prime) * 0.5 * t).cos();
            let bracket = r1 * r1 * kappa(&term, sa, 0.0, tau)
                + r2 * r2 * kappa(&term, sa, t, tau)
                + artifact_envelope * carrier * kappa(&term, sa, 0.5 * t, tau);
            acc.add(2.0 * term.lambda_product * e_plus * e_minus * bracket);
        }
    }
    Ok(acc.value())
}

/// `G(τ)` for any number of layers (full sideband sum).
pub fn g_cross_multilayer(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    stack: &LayerStack,
    tau: f64,
) -> Result<f64> {
    Ok(HomEngine::new(spectrum, network, stack, EngineMode::FullSum)?.g_cross(tau))
}

/// Diagonal approximation of `G(τ)` for a two-layer sample.
pub fn g_cross_diagonal(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    stack: &LayerStack,
    tau: f64,
) -> Result<f64> {
    require_two_layers(stack)?;
    Ok(HomEngine::new(spectrum, network, stack, EngineMode::Diagonal)?.g_cross(tau))
}

/// Self-interference normalisation `G0` (full sideband sum).
pub fn g0(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    stack: &LayerStack,
) -> Result<f64> {
    Ok(HomEngine::new(spectrum, network, stack, EngineMode::FullSum)?.g0())
}

/// Normalised interferogram `Γ(τ) = 1 − G(τ)/G0` on `tau_grid`.
pub fn interferogram(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    stack: &LayerStack,
    tau_grid: &[f64],
    mode: EngineMode,
) -> Result<Interferogram> {
    HomEngine::new(spectrum, network, stack, mode)?.interferogram(tau_grid, Execution::default())
}

/// Artifact visibility `Γ(T/2) − 1` of a two-layer sample.
pub fn artifact_amplitude(
    spectrum: &BiphotonSpectrum,
    network: &SidebandNetwork,
    stack: &LayerStack,
    mode: EngineMode,
) -> Result<f64> {
    HomEngine::new(spectrum, network, stack, mode)?.artifact_amplitude()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Interferogram {
    pub tau_grid: Vec<f64>,
    pub gamma: Vec<f64>,
    pub g0: f64,
    pub engine_mode: EngineMode,
    /// Opaque provenance tag, typically the digest of the run configuration.
    pub provenance: String,
}

impl Interferogram {
    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Local minima of Γ that lie below `1 − depth`.
    pub fn dips(&self, depth: f64) -> Vec<f64> {
        self.local_extrema(|prev, cur, next| cur < prev && cur <= next && cur < 1.0 - depth)
    }

    /// Local maxima of Γ that lie above `1 + height`.
    pub fn peaks(&self, height: f64) -> Vec<f64> {
        self.local_extrema(|prev, cur, next| cur > prev && cur >= next && cur > 1.0 + height)
    }

    fn local_extrema(&self, keep: impl Fn(f64, f64, f64) -> bool) -> Vec<f64> {
        self.gamma
            .windows(3)
            .enumerate()
            .filter(|(_, w)| keep(w[0], w[1], w[2]))
            .map(|(i, _)| self.tau_grid[i + 1])
            .collect()
    }
}

/// Complete engine input: source, both modulator arms, sample and evaluation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spectrum: BiphotonSpectrum,
    pub arm1: ModulationSettings,
    pub arm2: ModulationSettings,
    pub stack: LayerStack,
    pub mode: EngineMode,
    pub epsilon: f64,
}

impl Scenario {
    pub fn network(&self) -> Result<SidebandNetwork> {
        SidebandNetwork::build(self.arm1, self.arm2, self.epsilon)
    }

    pub fn engine(&self) -> Result<HomEngine> {
        HomEngine::new(&self.spectrum, &self.network()?, &self.stack, self.mode)
    }

    pub fn artifact_amplitude(&self) -> Result<f64> {
        self.engine()?.artifact_amplitude()
    }

    pub fn interferogram(&self, tau_grid: &[f64], exec: Execution) -> Result<Interferogram> {
        self.engine()?.interferogram(tau_grid, exec)
    }

    /// Both modulators switched off.
    pub fn unmodulated(&self) -> Self {
        Self {
            arm1: ModulationSettings::unmodulated(),
            arm2: ModulationSettings::unmodulated(),
            ..self.clone()
        }
    }

    pub fn with_carrier_phase(&self, phi: f64) -> Result<Self> {
        Ok(Self {
            spectrum: self
                .spectrum
                .with_carrier_phase(CarrierPhasePolicy::Explicit(phi))?,
            ..self.clone()
        })
    }

    pub fn with_mode(&self, mode: EngineMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// Explicit carrier phase that makes the unmodulated main artifact a maximal peak.
///
/// The main artifact sits midway between the front and the deepest interface.
/// The phase is located by a coarse scan over `[0, 2π)` followed by a
/// golden-section refinement.
pub fn calibrate_peak_phase(scenario: &Scenario) -> Result<f64> {
    if scenario.stack.len() < 2 {
        return Err(Error::Precondition(
            "peak calibration needs at least two layers".into(),
        ));
    }
    let base = scenario.unmodulated();
    let template = base.engine()?;
    let tau = 0.5 * scenario.stack.max_delay();
    let amplitude = |phi: f64| -> Result<f64> {
        let spectrum = base
            .spectrum
            .with_carrier_phase(CarrierPhasePolicy::Explicit(phi))?;
        Ok(template.with_carrier_phase(&spectrum).gamma(tau) - 1.0)
    };

    const COARSE: usize = 72;
    let step = std::f64::consts::TAU / COARSE as f64;
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..COARSE {
        let phi = i as f64 * step;
        let a = amplitude(phi)?;
        if a > best.1 {
            best = (phi, a);
        }
    }

    let inv_golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (best.0 - step, best.0 + step);
    let mut x1 = hi - inv_golden * (hi - lo);
    let mut x2 = lo + inv_golden * (hi - lo);
    let (mut f1, mut f2) = (amplitude(x1)?, amplitude(x2)?);
    while hi - lo > 1e-10 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_golden * (hi - lo);
            f1 = amplitude(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_golden * (hi - lo);
            f2 = amplitude(x2)?;
        }
    }
    Ok(crate::specfun::wrap_angle(0.5 * (lo + hi)))
}
