//! Run configuration: TOML schema, bundled presets, unit conversion to engine
//! units, run manifests and the CSV formats used by the command-line tool.
//!
//! Config units are the ones used at the bench: frequencies in GHz, angles in
//! degrees, wavelengths in nm, delays in ps. Spectral widths given directly
//! (`sigma_a`, `sigma_d`, `omega_rad_per_ps`) are angular frequencies in rad/ps.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biphoton::{
    from_drive_voltage, omega_from_wavelength, sigma_from_bandpass, BiphotonSpectrum,
    CarrierPhasePolicy, ModulationSettings,
};
use crate::engine::{calibrate_peak_phase, EngineMode, Interferogram, Scenario};
use crate::oracle::{QuadratureGrid, QuadratureScheme};
use crate::sample::{Layer, LayerStack};
use crate::sweeps::{
    FitParameter, FitProblem, FreeParameter, ModelParameters, Observation, SweepPoint, SweepRange,
    SweepSpec, SweepVariable,
};
use crate::{ghz_to_rad_per_ps, Error, Result};

/// Pump linewidth assumed when neither `sigma_d` nor `pump_linewidth_ghz` is given (rad/ps).
pub const DEFAULT_SIGMA_D: f64 = 0.01;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_wavelength_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_fwhm_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_d: Option<f64>,
    /// Converted as `σd = 2π · linewidth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_linewidth_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    /// Degenerate photons sit at half the pump frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_wavelength_nm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_pp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_rad_per_ps: Option<f64>,
    #[serde(default)]
    pub theta_deg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    #[serde(default)]
    pub arm1: ArmConfig,
    #[serde(default)]
    pub arm2: ArmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    /// Amplitude reflection coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Power reflectivity, `r = sqrt(R)`.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub big_r: Option<f64>,
    pub delay_ps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalStackConfig {
    pub thickness_mm: Vec<f64>,
    pub n: Vec<f64>,
    #[serde(rename = "R")]
    pub reflectivity: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalStackConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CarrierPhaseConfig {
    Explicit {
        value_rad: f64,
    },
    #[default]
    CalibratePeak,
    FromOmega0,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_ps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_ps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub mode: EngineMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    crate::specfun::DEFAULT_EPSILON
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: EngineMode::FullSum,
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// `start`/`stop` are in config units: β as is, frequency in GHz, phase difference in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullSearchConfig {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
}

fn default_scan_points() -> usize {
    200
}

/// Partial model parameters; missing entries fall back to defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterValues {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_scale: Option<f64>,
}

impl ParameterValues {
    fn over(&self, base: ModelParameters) -> ModelParameters {
        ModelParameters {
            amplitude_scale: self.amplitude_scale.unwrap_or(base.amplitude_scale),
            baseline_offset: self.baseline_offset.unwrap_or(base.baseline_offset),
            carrier_phase: self.carrier_phase.unwrap_or(base.carrier_phase),
            beta_scale: self.beta_scale.unwrap_or(base.beta_scale),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub truth: ParameterValues,
    #[serde(default)]
    pub noise_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV with header `x,y[,weight]`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    /// Generate observations on the sweep grid instead of reading them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "default_free")]
    pub free: Vec<FitParameter>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<FitParameter, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<ParameterValues>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_free() -> Vec<FitParameter> {
    vec![FitParameter::AmplitudeScale, FitParameter::CarrierPhase]
}

fn default_max_iterations() -> usize {
    crate::sweeps::DEFAULT_MAX_ITERATIONS
}

fn default_bounds(p: FitParameter) -> [f64; 2] {
    match p {
        FitParameter::AmplitudeScale => [0.0, 10.0],
        FitParameter::BaselineOffset => [-1.0, 1.0],
        FitParameter::CarrierPhase => [0.0, TAU],
        FitParameter::BetaScale => [0.5, 1.5],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub tau_start_ps: f64,
    pub tau_stop_ps: f64,
    pub tau_count: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    pub points_per_axis: usize,
    #[serde(default)]
    pub scheme: QuadratureScheme,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_half_width() -> f64 {
    6.0
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub modulation: ModulationConfig,
    pub sample: SampleConfig,
    #[serde(default)]
    pub carrier_phase: CarrierPhaseConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_search: Option<NullSearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateConfig>,
}

/// Parses a TOML document; schema errors carry the offending key path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text)
        .map_err(|e| Error::config("<document>", e.to_string().trim_end()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string().trim_end())
    })
}

/// Canonical TOML text; `parse_config(&render(c))` reproduces `c`.
pub fn render(config: &RunConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::config("<document>", e.to_string()))
}

/// Names of the bundled presets.
pub const PRESETS: [&str; 3] = ["paper-2mm", "paper-si-3layer", "desk-oracle"];

pub fn preset_text(name: &str) -> Option<&'static str> {
    let name = name.strip_prefix("presets/").unwrap_or(name);
    let name = name.strip_suffix(".toml").unwrap_or(name);
    match name {
        "paper-2mm" => Some(include_str!("../presets/paper-2mm.toml")),
        "paper-si-3layer" => Some(include_str!("../presets/paper-si-3layer.toml")),
        "desk-oracle" => Some(include_str!("../presets/desk-oracle.toml")),
        _ => None,
    }
}

/// A parsed configuration and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory that relative paths inside the config resolve against.
    pub base_dir: PathBuf,
    pub origin: String,
}

/// Reads a config file, falling back to a bundled preset (`paper-2mm` or `presets/paper-2mm`).
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return Ok(LoadedConfig {
            config: parse_config(&text)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            origin: path.display().to_string(),
        });
    }
    let name = path.to_string_lossy();
    match preset_text(&name) {
        Some(text) => Ok(LoadedConfig {
            config: parse_config(text)?,
            base_dir: PathBuf::from("."),
            origin: format!("preset:{}", name.trim_start_matches("presets/")),
        }),
        None => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "config `{name}` is neither a file nor a bundled preset ({})",
                PRESETS.join(", ")
            ),
        ))),
    }
}

/// SHA-256 of the config's canonical JSON form (keys sorted, defaults applied).
pub fn config_digest(config: &RunConfig) -> String {
    let value = serde_json::to_value(config).expect("config is always serialisable");
    let canonical = serde_json::to_string(&value).expect("json value is always serialisable");
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, format!("must be > 0, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, format!("must be >= 0, got {v}")))
    }
}

fn exactly_one<T>(
    path: &str,
    a: Option<T>,
    b: Option<T>,
    names: (&str, &str),
) -> Result<Option<T>> {
    match (a, b) {
        (Some(_), Some(_)) => Err(Error::config(
            path,
            format!("give either `{}` or `{}`, not both", names.0, names.1),
        )),
        (a, b) => Ok(a.or(b)),
    }
}

/// Wraps a library error with the config key it came from.
fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl SourceConfig {
    fn resolve(&self, policy: CarrierPhasePolicy) -> Result<BiphotonSpectrum> {
        let band = match (self.center_wavelength_nm, self.filter_fwhm_nm) {
            (Some(c), Some(w)) => Some(
                sigma_from_bandpass(
                    positive("source.center_wavelength_nm", c)?,
                    positive("source.filter_fwhm_nm", w)?,
                )
                .map_err(at("source.filter_fwhm_nm"))?,
            ),
            (None, Some(_)) => {
                return Err(Error::config(
                    "source.center_wavelength_nm",
                    "required with filter_fwhm_nm",
                ))
            }
            _ => None,
        };
        let sigma_a = exactly_one(
            "source.sigma_a",
            self.sigma_a,
            band,
            ("sigma_a", "filter_fwhm_nm"),
        )?
        .ok_or_else(|| {
            Error::config(
                "source.sigma_a",
                "give sigma_a or center_wavelength_nm + filter_fwhm_nm",
            )
        })?;
        let sigma_a = positive("source.sigma_a", sigma_a)?;

        let linewidth = self
            .pump_linewidth_ghz
            .map(|g| positive("source.pump_linewidth_ghz", g).map(ghz_to_rad_per_ps))
            .transpose()?;
        let sigma_d = exactly_one(
            "source.sigma_d",
            self.sigma_d,
            linewidth,
            ("sigma_d", "pump_linewidth_ghz"),
        )?
        .unwrap_or(DEFAULT_SIGMA_D);
        let sigma_d = positive("source.sigma_d", sigma_d)?;

        let from_pump = self
            .pump_wavelength_nm
            .map(|l| {
                positive("source.pump_wavelength_nm", l).map(|l| 0.5 * omega_from_wavelength(l))
            })
            .transpose()?;
        let omega0 = exactly_one(
            "source.omega0",
            self.omega0,
            from_pump,
            ("omega0", "pump_wavelength_nm"),
        )?
        .or_else(|| self.center_wavelength_nm.map(omega_from_wavelength))
        .unwrap_or(0.0);
        let omega0 = non_negative("source.omega0", omega0)?;

        BiphotonSpectrum::new(omega0, sigma_a, sigma_d, policy).map_err(at("source"))
    }
}

impl ArmConfig {
    fn resolve(&self, path: &str) -> Result<ModulationSettings> {
        let key = |k: &str| format!("{path}.{k}");
        let from_voltage = match (self.v_pp, self.v_pi) {
            (Some(vpp), Some(vpi)) => Some(
                from_drive_voltage(
                    non_negative(&key("v_pp"), vpp)?,
                    positive(&key("v_pi"), vpi)?,
                )
                .map_err(at(&key("v_pp")))?,
            ),
            (None, None) => None,
            _ => {
                return Err(Error::config(
                    key("v_pp"),
                    "v_pp and v_pi must be given together",
                ))
            }
        };
        let beta =
            exactly_one(&key("beta"), self.beta, from_voltage, ("beta", "v_pp"))?.unwrap_or(0.0);
        let beta = non_negative(&key("beta"), beta)?;
        let from_ghz = self
            .freq_ghz
            .map(|f| non_negative(&key("freq_ghz"), f).map(ghz_to_rad_per_ps))
            .transpose()?;
        let omega = exactly_one(
            &key("freq_ghz"),
            from_ghz,
            self.omega_rad_per_ps,
            ("freq_ghz", "omega_rad_per_ps"),
        )?;
        let omega = match omega {
            Some(w) => non_negative(&key("omega_rad_per_ps"), w)?,
            None if beta == 0.0 => 0.0,
            None => {
                return Err(Error::config(
                    key("freq_ghz"),
                    "a modulated arm needs a drive frequency",
                ))
            }
        };
        if !self.theta_deg.is_finite() {
            return Err(Error::config(key("theta_deg"), "must be finite"));
        }
        ModulationSettings::new(beta, omega, self.theta_deg.to_radians()).map_err(at(path))
    }
}

impl SampleConfig {
    fn resolve(&self) -> Result<LayerStack> {
        match (&self.layers, &self.physical) {
            (Some(_), Some(_)) => Err(Error::config(
                "sample",
                "give either `layers` or `physical`, not both",
            )),
            (None, None) => Err(Error::config("sample", "give `layers` or `physical`")),
            (Some(layers), None) => {
                let mut out = Vec::with_capacity(layers.len());
                for (i, l) in layers.iter().enumerate() {
                    let key = |k: &str| format!("sample.layers[{i}].{k}");
                    let r = match (l.r, l.big_r) {
                        (Some(_), Some(_)) => {
                            return Err(Error::config(key("r"), "give either `r` or `R`"))
                        }
                        (Some(r), None) => r,
                        (None, Some(big)) => {
                            if !(0.0..=1.0).contains(&big) {
                                return Err(Error::config(
                                    key("R"),
                                    format!("must lie in [0, 1], got {big}"),
                                ));
                            }
                            big.sqrt()
                        }
                        (None, None) => {
                            return Err(Error::config(key("r"), "missing reflection coefficient"))
                        }
                    };
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::config(
                            key("r"),
                            format!("must lie in [0, 1], got {r}"),
                        ));
                    }
                    non_negative(&key("delay_ps"), l.delay_ps)?;
                    out.push(Layer {
                        r,
                        delay: l.delay_ps,
                    });
                }
                LayerStack::new(out).map_err(at("sample.layers"))
            }
            (None, Some(p)) => {
                for (i, &d) in p.thickness_mm.iter().enumerate() {
                    non_negative(&format!("sample.physical.thickness_mm[{i}]"), d)?;
                }
                for (i, &n) in p.n.iter().enumerate() {
                    if !(n >= 1.0 && n.is_finite()) {
                        return Err(Error::config(
                            format!("sample.physical.n[{i}]"),
                            format!("must be >= 1, got {n}"),
                        ));
                    }
                }
                for (i, &r) in p.reflectivity.iter().enumerate() {
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::config(
                            format!("sample.physical.R[{i}]"),
                            format!("must lie in [0, 1], got {r}"),
                        ));
                    }
                }
                LayerStack::from_physical(&p.thickness_mm, &p.n, &p.reflectivity)
                    .map_err(at("sample.physical"))
            }
        }
    }
}

impl SweepConfig {
    /// Config units to engine units.
    pub fn to_engine(&self, x: f64) -> f64 {
        match self.variable {
            SweepVariable::FrequencyBoth => ghz_to_rad_per_ps(x),
            SweepVariable::PhaseDifference => x.to_radians(),
            _ => x,
        }
    }

    /// Engine units back to config units (exact inverse of [`to_engine`](Self::to_engine) up to rounding).
    pub fn from_engine(&self, x: f64) -> f64 {
        match self.variable {
            SweepVariable::FrequencyBoth => crate::rad_per_ps_to_ghz(x),
            SweepVariable::PhaseDifference => x.to_degrees(),
            _ => x,
        }
    }

    fn spec(&self, fixed: &Scenario) -> Result<SweepSpec> {
        let range = SweepRange {
            start: self.to_engine(self.start),
            stop: self.to_engine(self.stop),
            count: self.count,
        };
        SweepSpec::new(self.variable, range, fixed.clone()).map_err(at("sweep"))
    }
}

/// Everything a command needs, in engine units.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedRun {
    /// Carrier phase already fixed (calibrated or explicit) unless it follows `omega0`.
    pub scenario: Scenario,
    pub carrier_phase_mode: &'static str,
    pub tau_grid: Vec<f64>,
    pub digest: String,
}

impl RunConfig {
    /// Converts to engine units, applying defaults and the carrier-phase policy.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        self.resolve_with_mode(self.engine.mode)
    }

    pub fn resolve_with_mode(&self, mode: EngineMode) -> Result<ResolvedRun> {
        let policy = match self.carrier_phase {
            CarrierPhaseConfig::Explicit { value_rad } if !value_rad.is_finite() => {
                return Err(Error::config("carrier_phase.value_rad", "must be finite"))
            }
            CarrierPhaseConfig::Explicit { value_rad } => CarrierPhasePolicy::Explicit(value_rad),
            CarrierPhaseConfig::CalibratePeak => CarrierPhasePolicy::Explicit(0.0),
            CarrierPhaseConfig::FromOmega0 => CarrierPhasePolicy::FromOmega0,
        };
        let spectrum = self.source.resolve(policy)?;
        let arm1 = self.modulation.arm1.resolve("modulation.arm1")?;
        let arm2 = self.modulation.arm2.resolve("modulation.arm2")?;
        let stack = self.sample.resolve()?;
        let epsilon = self.engine.epsilon;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::config(
                "engine.epsilon",
                format!("must lie in (0, 1), got {epsilon}"),
            ));
        }
        let mut scenario = Scenario {
            spectrum,
            arm1,
            arm2,
            stack,
            mode,
            epsilon,
        };
        let carrier_phase_mode = match self.carrier_phase {
            CarrierPhaseConfig::Explicit { .. } => "explicit",
            CarrierPhaseConfig::FromOmega0 => "from_omega0",
            CarrierPhaseConfig::CalibratePeak => {
                if scenario.stack.len() >= 2 {
                    let phi = calibrate_peak_phase(&scenario)?;
                    scenario = scenario.with_carrier_phase(phi)?;
                }
                "calibrate_peak"
            }
        };
        let tau_grid = self.tau_grid(&scenario.stack)?;
        Ok(ResolvedRun {
            scenario,
            carrier_phase_mode,
            tau_grid,
            digest: config_digest(self),
        })
    }

    fn tau_grid(&self, stack: &LayerStack) -> Result<Vec<f64>> {
        let start = self.scan.start_ps.unwrap_or(-2.0);
        let stop = self.scan.stop_ps.unwrap_or(stack.max_delay() + 2.0);
        let step = positive("scan.step_ps", self.scan.step_ps.unwrap_or(0.01))?;
        if !(start < stop) {
            return Err(Error::config(
                "scan.stop_ps",
                format!("must exceed start_ps ({start}), got {stop}"),
            ));
        }
        let count = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
        if count > 10_000_000 {
            return Err(Error::config(
                "scan.step_ps",
                format!("{count} delays requested"),
            ));
        }
        Ok((0..count).map(|k| start + k as f64 * step).collect())
    }
}

impl ResolvedRun {
    pub fn sweep_spec(&self, config: &RunConfig) -> Result<SweepSpec> {
        config
            .sweep
            .as_ref()
            .ok_or_else(|| Error::config("sweep", "section missing"))?
            .spec(&self.scenario)
    }

    /// Current explicit carrier phase, or `None` when it follows `omega0`.
    pub fn carrier_phase(&self) -> Option<f64> {
        match self.scenario.spectrum.carrier_phase_policy() {
            CarrierPhasePolicy::Explicit(phi) => Some(phi),
            CarrierPhasePolicy::FromOmega0 => None,
        }
    }

    /// Resolved parameters in engine units, for manifests.
    pub fn describe(&self) -> serde_json::Value {
        let s = &self.scenario;
        let arm = |a: &ModulationSettings| {
            serde_json::json!({
                "beta": a.beta(),
                "omega_rf_rad_per_ps": a.omega_rf(),
                "theta_rad": a.theta(),
            })
        };
        serde_json::json!({
            "sigma_a_rad_per_ps": s.spectrum.sigma_a(),
            "sigma_d_rad_per_ps": s.spectrum.sigma_d(),
            "omega0_rad_per_ps": s.spectrum.omega0(),
            "carrier_phase_mode": self.carrier_phase_mode,
            "carrier_phase_rad": self.carrier_phase(),
            "arm1": arm(&s.arm1),
            "arm2": arm(&s.arm2),
            "layers": s.stack.layers().iter().map(|l| serde_json::json!({"r": l.r, "delay_ps": l.delay})).collect::<Vec<_>>(),
            "engine_mode": s.mode,
            "epsilon": s.epsilon,
            "tau_grid": {
                "start_ps": self.tau_grid.first(),
                "stop_ps": self.tau_grid.last(),
                "count": self.tau_grid.len(),
            },
        })
    }
}

impl ValidateConfig {
    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.half_width, self.points_per_axis, self.scheme)
            .map_err(at("validate"))
    }

    pub fn taus(&self) -> Result<Vec<f64>> {
        if self.tau_count < 2 || !(self.tau_start_ps < self.tau_stop_ps) {
            return Err(Error::config(
                "validate",
                "need tau_count >= 2 and tau_start_ps < tau_stop_ps",
            ));
        }
        let n = self.tau_count - 1;
        Ok((0..=n)
            .map(|i| {
                self.tau_start_ps + (self.tau_stop_ps - self.tau_start_ps) * (i as f64 / n as f64)
            })
            .collect())
    }
}

impl FitConfig {
    /// Builds the fit problem; observation x values are in sweep config units.
    pub fn problem(
        &self,
        run: &ResolvedRun,
        sweep: &SweepConfig,
        base_dir: &Path,
    ) -> Result<FitProblem> {
        let spec = sweep.spec(&run.scenario)?;
        let defaults = ModelParameters {
            amplitude_scale: 1.0,
            baseline_offset: 0.0,
            carrier_phase: run.carrier_phase().unwrap_or(std::f64::consts::PI),
            beta_scale: 1.0,
        };
        let observations = match (&self.observations, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "fit",
                    "give either `observations` or `synthetic`, not both",
                ))
            }
            (None, None) => return Err(Error::config("fit.observations", "missing")),
            (Some(path), None) => read_observations(&base_dir.join(path))?
                .into_iter()
                .map(|o| Observation {
                    x: sweep.to_engine(o.x),
                    ..o
                })
                .collect(),
            (None, Some(syn)) => {
                if !(syn.noise_fraction >= 0.0) {
                    return Err(Error::config(
                        "fit.synthetic.noise_fraction",
                        "must be >= 0",
                    ));
                }
                let xs = spec.range().points();
                crate::sweeps::synthesize_observations(
                    &spec,
                    &xs,
                    &syn.truth.over(defaults),
                    syn.noise_fraction,
                    syn.seed,
                )?
            }
        };
        let free = self
            .free
            .iter()
            .map(|&p| {
                let [lower, upper] = self
                    .bounds
                    .get(&p)
                    .copied()
                    .unwrap_or_else(|| default_bounds(p));
                FreeParameter {
                    parameter: p,
                    lower,
                    upper,
                }
            })
            .collect();
        let initial = self.initial.clone().unwrap_or_default().over(defaults);
        let mut problem = FitProblem::new(observations, free, initial)
            .map_err(at("fit"))?
            .with_max_iterations(self.max_iterations);
        if let Some(seed) = self.seed {
            problem = problem.with_seed(seed);
        }
        Ok(problem)
    }
}

/// Metadata written next to every command's output.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_origin: String,
    pub config_digest: String,
    pub tool_version: String,
    pub timestamp: String,
    pub engine_mode: EngineMode,
    pub threads: usize,
    pub resolved: serde_json::Value,
    pub duration_s: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        origin: &str,
        run: &ResolvedRun,
        threads: usize,
        duration: std::time::Duration,
    ) -> Self {
        Self {
            command: command.to_string(),
            config_origin: origin.to_string(),
            config_digest: run.digest.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            engine_mode: run.scenario.mode,
            threads,
            resolved: run.describe(),
            duration_s: duration.as_secs_f64(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value).map_err(std::io::Error::from)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// `tau_ps,gamma`
pub fn write_interferogram_csv(path: &Path, interferogram: &Interferogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["tau_ps", "gamma"])?;
    for (t, g) in interferogram.tau_grid.iter().zip(&interferogram.gamma) {
        w.write_record([t.to_string(), g.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `x,artifact_amplitude`, with `x` already in the caller's units.
pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "artifact_amplitude"])?;
    for p in points {
        w.write_record([p.x.to_string(), p.artifact_amplitude.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `x,y[,weight]` observations; a missing weight column means unit weights.
pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["x", "y"] && names != ["x", "y", "weight"] {
        return Err(Error::config(
            path.display().to_string(),
            format!(
                "observation header must be `x,y[,weight]`, got `{}`",
                names.join(",")
            ),
        ));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [source]
        sigma_a = 2.0
        sigma_d = 0.5

        [sample]
        layers = [{ r = 0.6, delay_ps = 0.0 }, { r = 0.97, delay_ps = 6.0 }]
    "#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = parse_config(MINIMAL).unwrap();
        let run = cfg.resolve().unwrap();
        let net = run.scenario.network().unwrap();
        assert_eq!(net.len(), 1);
        assert_eq!(run.scenario.spectrum.sigma_a(), 2.0);
        assert_eq!(run.carrier_phase_mode, "calibrate_peak");
        assert!((run.carrier_phase().unwrap() - std::f64::consts::PI).abs() < 1e-6);
        assert_eq!(run.tau_grid.first(), Some(&-2.0));
        assert!((run.tau_grid.last().unwrap() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn slab_preset_conversions() {
        let cfg = parse_config(preset_text("presets/paper-2mm").unwrap()).unwrap();
        let run = cfg.resolve().unwrap();
        let s = &run.scenario;
        assert!((s.spectrum.sigma_a() - 99.989_146_266_381_5).abs() < 1e-9);
        assert_eq!(s.spectrum.sigma_d(), 0.01);
        assert!((s.spectrum.omega0() - 2_328.370_293).abs() < 1e-3);
        assert_eq!(s.stack.max_delay(), 20.1);
        assert!((s.stack.layers()[0].r - 0.6).abs() < 1e-15);
        assert!((s.stack.layers()[1].r - 0.974_679_434_480_896_4).abs() < 1e-15);
        assert_eq!((s.arm1.beta(), s.arm2.beta()), (5.42, 4.48));
        assert!((s.arm1.omega_rf() - 0.079_796_453_401_180_7).abs() < 1e-15);
    }

    #[test]
    fn all_presets_parse_and_round_trip() {
        for name in PRESETS {
            let cfg = parse_config(preset_text(name).unwrap()).unwrap();
            let again = parse_config(&render(&cfg).unwrap()).unwrap();
            assert_eq!(cfg, again, "{name}");
            assert_eq!(config_digest(&cfg), config_digest(&again));
        }
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(
            r#"
            [sample]
            layers = [{ delay_ps = 0.0, r = 0.6 }, { delay_ps = 6.0, r = 0.97 }]
            [source]
            sigma_d = 0.5
            sigma_a = 2.0
            "#,
        )
        .unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        let c = parse_config(&MINIMAL.replace("0.97", "0.96")).unwrap();
        assert_ne!(config_digest(&a), config_digest(&c));
    }

    #[test]
    fn schema_errors_name_the_key() {
        let err =
            parse_config(&MINIMAL.replace("sigma_d = 0.5", "sigma_d = \"wide\"")).unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path == "source.sigma_d"),
            "{err}"
        );
        let err = parse_config(&MINIMAL.replace("sigma_d", "sigma_dd")).unwrap_err();
        assert!(err.to_string().contains("sigma_dd"), "{err}");
    }

    #[test]
    fn negative_thickness_is_a_range_error() {
        let text = r#"
            [source]
            sigma_a = 2.0
            [sample.physical]
            thickness_mm = [-2.0]
            n = [1.5]
            R = [0.36, 0.95]
        "#;
        let err = parse_config(text).unwrap().resolve().unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "sample.physical.thickness_mm[0]");
                assert!(message.contains("-2"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn alternative_forms_are_exclusive() {
        let both = MINIMAL.replace(
            "sigma_a = 2.0",
            "sigma_a = 2.0\ncenter_wavelength_nm = 800.0\nfilter_fwhm_nm = 40.0",
        );
        assert!(parse_config(&both).unwrap().resolve().is_err());
        let voltage =
            format!("{MINIMAL}\n[modulation.arm1]\nv_pp = 6.0\nv_pi = 3.48\nfreq_ghz = 12.7\n");
        let run = parse_config(&voltage).unwrap().resolve().unwrap();
        assert!((run.scenario.arm1.beta() - std::f64::consts::PI * 3.0 / 3.48).abs() < 1e-12);
        let no_freq = format!("{MINIMAL}\n[modulation.arm2]\nbeta = 1.0\n");
        let err = parse_config(&no_freq).unwrap().resolve().unwrap_err();
        assert!(matches!(err, Error::Config { path, .. } if path == "modulation.arm2.freq_ghz"));
    }

    #[test]
    fn observations_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        std::fs::write(&p, "x,y\n0.0,0.5\n1.0,0.25\n").unwrap();
        let obs = read_observations(&p).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1].weight, 1.0);
        std::fs::write(&p, "x,y,weight\n0.0,0.5,2.0\n").unwrap();
        assert_eq!(read_observations(&p).unwrap()[0].weight, 2.0);
        std::fs::write(&p, "a,b\n0.0,0.5\n").unwrap();
        assert!(read_observations(&p).is_err());
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_sweep_csv(
            &p,
            &[SweepPoint {
                x: 0.5,
                artifact_amplitude: -0.25,
            }],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "x,artifact_amplitude\n0.5,-0.25\n"
        );
    }
}
