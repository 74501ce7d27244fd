//! Artifact-visibility sweeps, null search and model fitting.
//!
//! Swept values are in engine units: β is dimensionless, frequencies are in
//! rad/ps and the phase difference `θ2 − θ1` is in radians.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::biphoton::{CarrierPhasePolicy, ModulationSettings};
use crate::engine::Scenario;
use crate::exec::Execution;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    BetaBoth,
    BetaArm1,
    BetaArm2,
    FrequencyBoth,
    /// `θ2 = θ1 + x`
    PhaseDifference,
}

impl SweepVariable {
    /// Copy of `base` with the swept quantity set to `x`.
    pub fn apply(self, base: &Scenario, x: f64) -> Result<Scenario> {
        let (a1, a2) = (base.arm1, base.arm2);
        let (arm1, arm2) = match self {
            SweepVariable::BetaBoth => (
                ModulationSettings::new(x, a1.omega_rf(), a1.theta())?,
                ModulationSettings::new(x, a2.omega_rf(), a2.theta())?,
            ),
            SweepVariable::BetaArm1 => (ModulationSettings::new(x, a1.omega_rf(), a1.theta())?, a2),
            SweepVariable::BetaArm2 => (a1, ModulationSettings::new(x, a2.omega_rf(), a2.theta())?),
            SweepVariable::FrequencyBoth => (
                ModulationSettings::new(a1.beta(), x, a1.theta())?,
                ModulationSettings::new(a2.beta(), x, a2.theta())?,
            ),
            SweepVariable::PhaseDifference => (
                a1,
                ModulationSettings::new(a2.beta(), a2.omega_rf(), a1.theta() + x)?,
            ),
        };
        Ok(Scenario {
            arm1,
            arm2,
            ..base.clone()
        })
    }

    fn check_value(self, x: f64) -> Result<()> {
        match self {
            SweepVariable::BetaBoth | SweepVariable::BetaArm1 | SweepVariable::BetaArm2
                if !(x >= 0.0) =>
            {
                Err(Error::domain("beta", x, "must be >= 0"))
            }
            SweepVariable::FrequencyBoth if !(x > 0.0) => {
                Err(Error::domain("omega_rf", x, "must be > 0"))
            }
            SweepVariable::PhaseDifference if !(0.0..=std::f64::consts::TAU).contains(&x) => {
                Err(Error::domain("phase_difference", x, "must lie in [0, 2π]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl SweepRange {
    /// Evenly spaced points including both ends.
    pub fn points(&self) -> Vec<f64> {
        let span = self.stop - self.start;
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.stop
                } else {
                    self.start + span * (i as f64 / last)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    variable: SweepVariable,
    range: SweepRange,
    fixed: Scenario,
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, range: SweepRange, fixed: Scenario) -> Result<Self> {
        if range.count < 2 {
            return Err(Error::domain(
                "count",
                range.count as f64,
                "a sweep needs at least 2 points",
            ));
        }
        if !(range.start < range.stop) || !range.start.is_finite() || !range.stop.is_finite() {
            return Err(Error::domain(
                "start",
                range.start,
                "sweep start must be below stop",
            ));
        }
        variable.check_value(range.start)?;
        variable.check_value(range.stop)?;
        Ok(Self {
            variable,
            range,
            fixed,
        })
    }

    pub fn variable(&self) -> SweepVariable {
        self.variable
    }

    pub fn range(&self) -> SweepRange {
        self.range
    }

    pub fn fixed(&self) -> &Scenario {
        &self.fixed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub artifact_amplitude: f64,
}

/// Artifact amplitude at every grid point, ordered by `x`.
pub fn run_sweep(spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepPoint>> {
    let xs = spec.range.points();
    let amplitudes = exec.try_map_indexed(xs.len(), |i| {
        spec.variable
            .apply(&spec.fixed, xs[i])?
            .artifact_amplitude()
    })?;
    Ok(xs
        .into_iter()
        .zip(amplitudes)
        .map(|(x, artifact_amplitude)| SweepPoint {
            x,
            artifact_amplitude,
        })
        .collect())
}

/// Indices `i` with a sign change between points `i` and `i + 1`.
pub fn sign_changes(points: &[SweepPoint]) -> Vec<usize> {
    points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[0].artifact_amplitude > 0.0) != (w[1].artifact_amplitude > 0.0))
        .map(|(i, _)| i)
        .collect()
}

pub const MAX_BISECTIONS: usize = 60;

/// Relative amplitude accepted as a null.
pub const NULL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullSearch {
    Found {
        omega: f64,
        amplitude: f64,
        iterations: usize,
        bracket: [f64; 2],
    },
    NoNull {
        amplitude_lo: f64,
        amplitude_hi: f64,
    },
}

impl NullSearch {
    pub fn omega(&self) -> Option<f64> {
        match self {
            NullSearch::Found { omega, .. } => Some(*omega),
            NullSearch::NoNull { .. } => None,
        }
    }
}

fn amplitude_at_frequency(fixed: &Scenario, omega: f64) -> Result<f64> {
    SweepVariable::FrequencyBoth
        .apply(fixed, omega)?
        .artifact_amplitude()
}

/// Bisection for the drive frequency (rad/ps, both arms) where the artifact vanishes.
///
/// Stops once `|A(Ω)| < 1e-4·|A(Ω_lo)|`.
pub fn find_null_frequency(fixed: &Scenario, bracket: [f64; 2]) -> Result<NullSearch> {
    let a_lo = amplitude_at_frequency(fixed, bracket[0])?;
    bisect_null(fixed, bracket, a_lo, a_lo.abs())
}

fn bisect_null(
    fixed: &Scenario,
    bracket: [f64; 2],
    a_lo: f64,
    reference: f64,
) -> Result<NullSearch> {
    let [mut lo, mut hi] = bracket;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::domain("bracket", lo, "need 0 < lo < hi"));
    }
    let a_hi = amplitude_at_frequency(fixed, hi)?;
    if (a_lo > 0.0) == (a_hi > 0.0) {
        return Ok(NullSearch::NoNull {
            amplitude_lo: a_lo,
            amplitude_hi: a_hi,
        });
    }
    let tolerance = NULL_TOLERANCE * reference;
    let mut sign_lo = a_lo > 0.0;
    for iteration in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let a = amplitude_at_frequency(fixed, mid)?;
        if a.abs() < tolerance {
            return Ok(NullSearch::Found {
                omega: mid,
                amplitude: a,
                iterations: iteration,
                bracket,
            });
        }
        if (a > 0.0) == sign_lo {
            lo = mid;
            sign_lo = a > 0.0;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        what: "null frequency bisection",
        detail: format!("no |A| < {tolerance:e} within {MAX_BISECTIONS} halvings of [{lo}, {hi}]"),
    })
}

/// Scans `range` (frequencies in rad/ps) for the first sign change and bisects it.
///
/// Unlike [`find_null_frequency`] the endpoints of `range` may share a sign.
/// The null tolerance is relative to the smaller of `|A(range.start)|` and the
/// amplitude at the start of the refined bracket.
pub fn find_first_null(fixed: &Scenario, range: SweepRange, exec: Execution) -> Result<NullSearch> {
    let spec = SweepSpec::new(SweepVariable::FrequencyBoth, range, fixed.clone())?;
    let points = run_sweep(&spec, exec)?;
    match sign_changes(&points).first() {
        None => Ok(NullSearch::NoNull {
            amplitude_lo: points[0].artifact_amplitude,
            amplitude_hi: points[points.len() - 1].artifact_amplitude,
        }),
        Some(&i) => {
            let lo = &points[i];
            let reference = points[0]
                .artifact_amplitude
                .abs()
                .min(lo.artifact_amplitude.abs());
            bisect_null(
                fixed,
                [lo.x, points[i + 1].x],
                lo.artifact_amplitude,
                reference,
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParameter {
    AmplitudeScale,
    BaselineOffset,
    CarrierPhase,
    BetaScale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Model `y(x) = baseline_offset + amplitude_scale · A(x; carrier_phase, beta_scale·β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub amplitude_scale: f64,
    pub baseline_offset: f64,
    pub carrier_phase: f64,
    pub beta_scale: f64,
}

impl ModelParameters {
    pub fn get(&self, p: FitParameter) -> f64 {
        match p {
            FitParameter::AmplitudeScale => self.amplitude_scale,
            FitParameter::BaselineOffset => self.baseline_offset,
            FitParameter::CarrierPhase => self.carrier_phase,
            FitParameter::BetaScale => self.beta_scale,
        }
    }

    fn set(&mut self, p: FitParameter, v: f64) {
        match p {
            FitParameter::AmplitudeScale => self.amplitude_scale = v,
            FitParameter::BaselineOffset => self.baseline_offset = v,
            FitParameter::CarrierPhase => self.carrier_phase = v,
            FitParameter::BetaScale => self.beta_scale = v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub parameter: FitParameter,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitProblem {
    observations: Vec<Observation>,
    free: Vec<FreeParameter>,
    initial: ModelParameters,
    max_iterations: usize,
    seed: u64,
}

pub const DEFAULT_MAX_ITERATIONS: usize = 2000;
pub const MULTI_STARTS: usize = 8;

impl FitProblem {
    /// `initial` supplies the starting point and the values of parameters that are not free.
    pub fn new(
        mut observations: Vec<Observation>,
        free: Vec<FreeParameter>,
        initial: ModelParameters,
    ) -> Result<Self> {
        if observations.len() < 3 {
            return Err(Error::Precondition(format!(
                "a fit needs at least 3 observations, got {}",
                observations.len()
            )));
        }
        if free.is_empty() {
            return Err(Error::Precondition("no free parameters".into()));
        }
        for (i, f) in free.iter().enumerate() {
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower < f.upper) {
                return Err(Error::domain(
                    "bounds",
                    f.lower,
                    "bounds must be finite with lower < upper",
                ));
            }
            if free[..i].iter().any(|g| g.parameter == f.parameter) {
                return Err(Error::Precondition(format!(
                    "{:?} listed twice",
                    f.parameter
                )));
            }
            let v = initial.get(f.parameter);
            if !(f.lower..=f.upper).contains(&v) {
                return Err(Error::domain(
                    "initial",
                    v,
                    "starting value lies outside its bounds",
                ));
            }
        }
        for o in &observations {
            if !(o.x.is_finite() && o.y.is_finite() && o.weight.is_finite() && o.weight >= 0.0) {
                return Err(Error::domain(
                    "observation",
                    o.x,
                    "x, y and weight must be finite, weight >= 0",
                ));
            }
        }
        // canonical order makes the objective independent of input order
        observations.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.weight.total_cmp(&b.weight))
        });
        Ok(Self {
            observations,
            free,
            initial,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0x51de_ba4d,
        })
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub parameters: ModelParameters,
    pub free: Vec<FitParameter>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts: usize,
    /// Best objective after every iteration of the winning start.
    pub objective_history: Vec<f64>,
}

/// Artifact amplitude as a function of the carrier phase at one sweep point.
///
/// For two layers `G(T/2)` and `G0` are both of the form `p + q cos φ + r sin φ`,
/// so three engine evaluations give the curve for every φ.
#[derive(Clone, Copy, Debug)]
struct PhaseHarmonics {
    g: [f64; 3],
    g0: [f64; 3],
}

impl PhaseHarmonics {
    fn new(scenario: &Scenario) -> Result<Self> {
        let engine = scenario.engine()?;
        let tau = 0.5 * scenario.stack.max_delay();
        let eval = |phi: f64| -> Result<(f64, f64)> {
            let spectrum = scenario
                .spectrum
                .with_carrier_phase(CarrierPhasePolicy::Explicit(phi))?;
            let e = engine.with_carrier_phase(&spectrum);
            Ok((e.g_cross(tau), e.g0()))
        };
        let (g_0, n_0) = eval(0.0)?;
        let (g_h, n_h) = eval(std::f64::consts::FRAC_PI_2)?;
        let (g_p, n_p) = eval(std::f64::consts::PI)?;
        let split = |a: f64, h: f64, p: f64| {
            let mean = 0.5 * (a + p);
            [mean, 0.5 * (a - p), h - mean]
        };
        Ok(Self {
            g: split(g_0, g_h, g_p),
            g0: split(n_0, n_h, n_p),
        })
    }

    fn amplitude(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let g = self.g[0] + self.g[1] * c + self.g[2] * s;
        let g0 = self.g0[0] + self.g0[1] * c + self.g0[2] * s;
        -g / g0
    }
}

struct Model<'a> {
    spec: &'a SweepSpec,
    xs: Vec<f64>,
    /// Present when β is held fixed.
    harmonics: Option<Vec<PhaseHarmonics>>,
}

impl<'a> Model<'a> {
    fn new(spec: &'a SweepSpec, problem: &FitProblem, exec: Execution) -> Result<Self> {
        if spec.fixed.stack.len() != 2 {
            return Err(Error::Precondition(
                "fitting needs a two-layer stack".into(),
            ));
        }
        let xs: Vec<f64> = problem.observations.iter().map(|o| o.x).collect();
        let beta_free = problem
            .free
            .iter()
            .any(|f| f.parameter == FitParameter::BetaScale);
        let harmonics = if beta_free {
            None
        } else {
            let beta_scale = problem.initial.beta_scale;
            Some(exec.try_map_indexed(xs.len(), |i| {
                PhaseHarmonics::new(&scaled_scenario(spec, xs[i], beta_scale)?)
            })?)
        };
        Ok(Self {
            spec,
            xs,
            harmonics,
        })
    }

    fn predict(&self, p: &ModelParameters) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match &self.harmonics {
            Some(h) => h.iter().map(|h| h.amplitude(p.carrier_phase)).collect(),
            None => self
                .xs
                .iter()
                .map(|&x| {
                    scaled_scenario(self.spec, x, p.beta_scale)?
                        .with_carrier_phase(p.carrier_phase)?
                        .artifact_amplitude()
                })
                .collect::<Result<_>>()?,
        };
        Ok(raw
            .into_iter()
            .map(|a| p.baseline_offset + p.amplitude_scale * a)
            .collect())
    }
}

fn scaled_scenario(spec: &SweepSpec, x: f64, beta_scale: f64) -> Result<Scenario> {
    let s = spec.variable.apply(&spec.fixed, x)?;
    let scale = |a: ModulationSettings| {
        ModulationSettings::new(a.beta() * beta_scale, a.omega_rf(), a.theta())
    };
    Ok(Scenario {
        arm1: scale(s.arm1)?,
        arm2: scale(s.arm2)?,
        ..s
    })
}

/// Model prediction at each `x`, for synthetic data and residual plots.
pub fn evaluate_model(
    spec: &SweepSpec,
    xs: &[f64],
    parameters: &ModelParameters,
) -> Result<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            let a = scaled_scenario(spec, x, parameters.beta_scale)?
                .with_carrier_phase(parameters.carrier_phase)?
                .artifact_amplitude()?;
            Ok(parameters.baseline_offset + parameters.amplitude_scale * a)
        })
        .collect()
}

/// Model values at `xs` plus Gaussian noise with standard deviation
/// `noise_fraction · max|y|`, drawn from a seeded ChaCha8 stream.
pub fn synthesize_observations(
    spec: &SweepSpec,
    xs: &[f64],
    truth: &ModelParameters,
    noise_fraction: f64,
    seed: u64,
) -> Result<Vec<Observation>> {
    let clean = evaluate_model(spec, xs, truth)?;
    let peak = clean.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    let noise = Normal::new(0.0, noise_fraction * peak)
        .map_err(|e| Error::Precondition(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(xs
        .iter()
        .zip(clean)
        .map(|(&x, y)| Observation {
            x,
            y: y + noise.sample(&mut rng),
            weight: 1.0,
        })
        .collect())
}

/// Weighted least-squares fit of the artifact-visibility model to `problem`.
///
/// Bounded Nelder–Mead with trial points clamped to the box, restarted from
/// [`MULTI_STARTS`] seeded carrier phases when the phase is free.
pub fn fit(problem: &FitProblem, spec: &SweepSpec) -> Result<FitResult> {
    let model = Model::new(spec, problem, Execution::default())?;
    let objective = |v: &[f64]| -> Result<f64> {
        let p = problem.unpack(v);
        let y = model.predict(&p)?;
        Ok(problem
            .observations
            .iter()
            .zip(y)
            .map(|(o, m)| o.weight * (o.y - m) * (o.y - m))
            .sum())
    };

    let phase_axis = problem
        .free
        .iter()
        .position(|f| f.parameter == FitParameter::CarrierPhase);
    let starts = if phase_axis.is_some() {
        MULTI_STARTS
    } else {
        1
    };
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let base: Vec<f64> = problem
        .free
        .iter()
        .map(|f| problem.initial.get(f.parameter))
        .collect();

    let mut best: Option<SimplexOutcome> = None;
    for start in 0..starts {
        let mut x0 = base.clone();
        if let (Some(k), true) = (phase_axis, start > 0) {
            let f = &problem.free[k];
            x0[k] = rng.random_range(f.lower..f.upper);
        }
        let outcome = nelder_mead(&objective, x0, &problem.free, problem.max_iterations)?;
        if best.as_ref().is_none_or(|b| outcome.value < b.value) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");
    Ok(FitResult {
        parameters: problem.unpack(&best.point),
        free: problem.free.iter().map(|f| f.parameter).collect(),
        residual_norm: best.value.sqrt(),
        iterations: best.iterations,
        converged: best.converged,
        starts,
        objective_history: best.history,
    })
}

impl FitProblem {
    fn unpack(&self, v: &[f64]) -> ModelParameters {
        let mut p = self.initial;
        for (f, &x) in self.free.iter().zip(v) {
            p.set(f.parameter, x);
        }
        p
    }
}

struct SimplexOutcome {
    point: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn nelder_mead(
    objective: &dyn Fn(&[f64]) -> Result<f64>,
    x0: Vec<f64>,
    bounds: &[FreeParameter],
    max_iterations: usize,
) -> Result<SimplexOutcome> {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    let dim = x0.len();
    let clamp = |v: &mut Vec<f64>| {
        for (x, b) in v.iter_mut().zip(bounds) {
            *x = x.clamp(b.lower, b.upper);
        }
    };
    let widths: Vec<f64> = bounds.iter().map(|b| b.upper - b.lower).collect();

    let mut simplex = vec![x0.clone()];
    for k in 0..dim {
        let mut v = x0.clone();
        let step = 0.1 * widths[k];
        v[k] = if v[k] + step <= bounds[k].upper {
            v[k] + step
        } else {
            v[k] - step
        };
        simplex.push(v);
    }
    let mut values = simplex
        .iter()
        .map(|v| objective(v))
        .collect::<Result<Vec<_>>>()?;
    let mut history = Vec::new();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[dim] - values[0];
        let size = (1..=dim)
            .flat_map(|i| (0..dim).map(move |k| (i, k)))
            .map(|(i, k)| (simplex[i][k] - simplex[0][k]).abs() / widths[k])
            .fold(0.0, f64::max);
        if spread <= 1e-15 + 1e-12 * values[0].abs() && size < 1e-9 {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|v| v[k]).sum::<f64>() / dim as f64)
            .collect();
        let toward = |coef: f64| -> Vec<f64> {
            let mut v: Vec<f64> = (0..dim)
                .map(|k| centroid[k] + coef * (simplex[dim][k] - centroid[k]))
                .collect();
            clamp(&mut v);
            v
        };

        let reflected = toward(-ALPHA);
        let f_r = objective(&reflected)?;
        if f_r < values[0] {
            let expanded = toward(-ALPHA * GAMMA);
            let f_e = objective(&expanded)?;
            if f_e < f_r {
                simplex[dim] = expanded;
                values[dim] = f_e;
            } else {
                simplex[dim] = reflected;
                values[dim] = f_r;
            }
        } else if f_r < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = f_r;
        } else {
            let (contracted, f_c) = if f_r < values[dim] {
                let c = toward(-ALPHA * RHO);
                let f = objective(&c)?;
                (c, f.min(f64::INFINITY))
            } else {
                let c = toward(RHO);
                let f = objective(&c)?;
                (c, f)
            };
            if f_c < values[dim].min(f_r) {
                simplex[dim] = contracted;
                values[dim] = f_c;
            } else {
                for i in 1..=dim {
                    let mut v: Vec<f64> = (0..dim)
                        .map(|k| simplex[0][k] + SIGMA * (simplex[i][k] - simplex[0][k]))
                        .collect();
                    clamp(&mut v);
                    values[i] = objective(&v)?;
                    simplex[i] = v;
                }
            }
        }
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        debug_assert!(history.last().is_none_or(|&h: &f64| best <= h));
        history.push(best);
    }

    let k = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty simplex");
    Ok(SimplexOutcome {
        point: simplex[k].clone(),
        value: values[k],
        iterations,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biphoton::BiphotonSpectrum;
    use crate::engine::EngineMode;
    use crate::sample::LayerStack;
    use std::f64::consts::PI;

    fn desk(phi: f64) -> Scenario {
        Scenario {
            spectrum: BiphotonSpectrum::with_bandwidths(2.0, 0.5, phi).unwrap(),
            arm1: ModulationSettings::new(1.2, 0.5, 0.0).unwrap(),
            arm2: ModulationSettings::new(1.2, 0.5, 0.0).unwrap(),
            stack: LayerStack::two_layer(0.6, 0.97, 6.0).unwrap(),
            mode: EngineMode::FullSum,
            epsilon: 1e-10,
        }
    }

    fn range(start: f64, stop: f64, count: usize) -> SweepRange {
        SweepRange { start, stop, count }
    }

    #[test]
    fn spec_validation() {
        let s = desk(PI);
        assert!(SweepSpec::new(SweepVariable::BetaBoth, range(0.0, 1.0, 1), s.clone()).is_err());
        assert!(SweepSpec::new(SweepVariable::BetaBoth, range(1.0, 0.0, 5), s.clone()).is_err());
        assert!(SweepSpec::new(SweepVariable::BetaBoth, range(-1.0, 1.0, 5), s.clone()).is_err());
        assert!(
            SweepSpec::new(SweepVariable::FrequencyBoth, range(0.0, 1.0, 5), s.clone()).is_err()
        );
        assert!(SweepSpec::new(
            SweepVariable::PhaseDifference,
            range(0.0, 7.0, 5),
            s.clone()
        )
        .is_err());
        assert!(SweepSpec::new(SweepVariable::PhaseDifference, range(0.0, 2.0 * PI, 5), s).is_ok());
        let pts = range(0.0, 1.0, 4).points();
        assert_eq!(pts.first(), Some(&0.0));
        assert_eq!(pts.last(), Some(&1.0));
    }

    #[test]
    fn apply_sets_the_swept_quantity() {
        let s = desk(PI);
        let p = SweepVariable::PhaseDifference.apply(&s, 1.0).unwrap();
        assert_eq!(p.arm2.theta(), 1.0);
        let b = SweepVariable::BetaArm2.apply(&s, 0.3).unwrap();
        assert_eq!((b.arm1.beta(), b.arm2.beta()), (1.2, 0.3));
        let f = SweepVariable::FrequencyBoth.apply(&s, 0.7).unwrap();
        assert_eq!((f.arm1.omega_rf(), f.arm2.omega_rf()), (0.7, 0.7));
    }

    #[test]
    fn sweep_is_deterministic_and_strategy_independent() {
        let spec = SweepSpec::new(SweepVariable::BetaBoth, range(0.0, 2.0, 9), desk(PI)).unwrap();
        let a = run_sweep(&spec, Execution::Parallel).unwrap();
        let b = run_sweep(&spec, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(a[0].artifact_amplitude > 0.0);
    }

    #[test]
    fn phase_sweep_is_symmetric() {
        // the symmetry is exact once the dip tails have decayed at T/2
        let s = Scenario {
            stack: LayerStack::two_layer(0.6, 0.97, 20.0).unwrap(),
            ..desk(PI)
        };
        let spec =
            SweepSpec::new(SweepVariable::PhaseDifference, range(0.0, 2.0 * PI, 21), s).unwrap();
        let pts = run_sweep(&spec, Execution::Parallel).unwrap();
        for i in 0..pts.len() {
            let j = pts.len() - 1 - i;
            assert!((pts[i].artifact_amplitude - pts[j].artifact_amplitude).abs() < 1e-9);
        }
    }

    #[test]
    fn null_search_same_sign_is_no_null() {
        let s = desk(PI);
        let r = find_null_frequency(&s, [0.1, 0.11]).unwrap();
        assert!(matches!(r, NullSearch::NoNull { .. }));
        assert_eq!(r.omega(), None);
    }

    #[test]
    fn null_search_lies_in_scan_interval() {
        let s = desk(PI);
        let scan = SweepSpec::new(
            SweepVariable::FrequencyBoth,
            range(0.05, 2.0, 1000),
            s.clone(),
        )
        .unwrap();
        let pts = run_sweep(&scan, Execution::Parallel).unwrap();
        let changes = sign_changes(&pts);
        assert!(!changes.is_empty(), "desk config should have a null");
        let i = changes[0];
        let found = find_first_null(&s, range(0.05, 2.0, 40), Execution::Parallel).unwrap();
        let omega = found.omega().unwrap();
        assert!(
            omega >= pts[i].x && omega <= pts[i + 1].x,
            "{omega} not in [{}, {}]",
            pts[i].x,
            pts[i + 1].x
        );
        let a = amplitude_at_frequency(&s, omega).unwrap();
        assert!(a.abs() < 1e-4 * pts[0].artifact_amplitude.abs());
    }

    #[test]
    fn phase_harmonics_reproduce_engine() {
        let s = desk(PI);
        let h = PhaseHarmonics::new(&s).unwrap();
        for phi in [0.0, 0.4, 2.0, PI, 5.5] {
            let direct = s
                .with_carrier_phase(phi)
                .unwrap()
                .artifact_amplitude()
                .unwrap();
            assert!((h.amplitude(phi) - direct).abs() < 1e-13, "{phi}");
        }
    }

    fn beta_spec() -> SweepSpec {
        SweepSpec::new(SweepVariable::BetaBoth, range(0.0, 3.0, 2), desk(PI)).unwrap()
    }

    fn truth() -> ModelParameters {
        ModelParameters {
            amplitude_scale: 1.0,
            baseline_offset: 0.0,
            carrier_phase: 2.8,
            beta_scale: 1.0,
        }
    }

    #[test]
    fn exact_data_recovers_scale() {
        let spec = beta_spec();
        let xs: Vec<f64> = (0..12).map(|i| 0.25 * i as f64).collect();
        let ys = evaluate_model(&spec, &xs, &truth()).unwrap();
        let obs: Vec<Observation> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| Observation { x, y, weight: 1.0 })
            .collect();
        let start = ModelParameters {
            amplitude_scale: 0.5,
            ..truth()
        };
        let free = vec![FreeParameter {
            parameter: FitParameter::AmplitudeScale,
            lower: 0.0,
            upper: 3.0,
        }];
        let problem = FitProblem::new(obs, free, start).unwrap();
        let r = fit(&problem, &spec).unwrap();
        assert!(r.converged);
        assert!((r.parameters.amplitude_scale - 1.0).abs() < 1e-6);
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fit_is_order_independent() {
        let spec = beta_spec();
        let xs: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
        let ys = evaluate_model(&spec, &xs, &truth()).unwrap();
        let mut obs: Vec<Observation> = xs
            .iter()
            .zip(&ys)
            .enumerate()
            .map(|(i, (&x, &y))| Observation {
                x,
                y: y + 0.01 * ((i * 7 % 5) as f64 - 2.0),
                weight: 1.0,
            })
            .collect();
        let free = vec![
            FreeParameter {
                parameter: FitParameter::AmplitudeScale,
                lower: 0.1,
                upper: 3.0,
            },
            FreeParameter {
                parameter: FitParameter::CarrierPhase,
                lower: 0.0,
                upper: 2.0 * PI,
            },
        ];
        let start = ModelParameters {
            carrier_phase: PI,
            ..truth()
        };
        let a = fit(
            &FitProblem::new(obs.clone(), free.clone(), start).unwrap(),
            &spec,
        )
        .unwrap();
        obs.reverse();
        obs.swap(1, 4);
        let b = fit(&FitProblem::new(obs, free, start).unwrap(), &spec).unwrap();
        assert!((a.parameters.amplitude_scale - b.parameters.amplitude_scale).abs() < 1e-10);
        assert!((a.parameters.carrier_phase - b.parameters.carrier_phase).abs() < 1e-10);
    }

    #[test]
    fn beta_scale_path_matches_harmonics_path() {
        let spec = beta_spec();
        let xs = [0.5, 1.0, 2.0];
        let p = ModelParameters {
            beta_scale: 1.1,
            ..truth()
        };
        let ys = evaluate_model(&spec, &xs, &p).unwrap();
        let obs: Vec<Observation> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| Observation { x, y, weight: 1.0 })
            .collect();
        let free = vec![FreeParameter {
            parameter: FitParameter::BetaScale,
            lower: 0.5,
            upper: 1.5,
        }];
        let r = fit(&FitProblem::new(obs, free, truth()).unwrap(), &spec).unwrap();
        assert!(
            (r.parameters.beta_scale - 1.1).abs() < 1e-5,
            "{}",
            r.parameters.beta_scale
        );
    }

    #[test]
    fn problem_validation() {
        let o = |x| Observation {
            x,
            y: 0.0,
            weight: 1.0,
        };
        let free = vec![FreeParameter {
            parameter: FitParameter::AmplitudeScale,
            lower: 0.0,
            upper: 2.0,
        }];
        assert!(FitProblem::new(vec![o(0.0), o(1.0)], free.clone(), truth()).is_err());
        let bad = vec![FreeParameter {
            parameter: FitParameter::AmplitudeScale,
            lower: 0.0,
            upper: f64::INFINITY,
        }];
        assert!(FitProblem::new(vec![o(0.0), o(1.0), o(2.0)], bad, truth()).is_err());
        let outside = vec![FreeParameter {
            parameter: FitParameter::AmplitudeScale,
            lower: 2.0,
            upper: 3.0,
        }];
        assert!(FitProblem::new(vec![o(0.0), o(1.0), o(2.0)], outside, truth()).is_err());
        assert!(FitProblem::new(vec![o(0.0), o(1.0), o(2.0)], free, truth()).is_ok());
    }
}
