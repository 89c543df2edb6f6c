//! Experiment configuration: a TOML document with nested sections, every
//! section optional and defaulting to the reference design.

use std::fmt;
use std::path::Path;

use classd::stability::SweepParam;
use classd::{AmplifierParams, Error, InputSignal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Steady,
    Stability,
    Sweep,
    Tf,
    Simulate,
    Predict,
    Compare,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Steady => "steady",
            Experiment::Stability => "stability",
            Experiment::Sweep => "sweep",
            Experiment::Tf => "tf",
            Experiment::Simulate => "simulate",
            Experiment::Predict => "predict",
            Experiment::Compare => "compare",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
    /// JSON with every number written as a decimal string.
    JsonPrecise,
}

/// Circuit parameters; omitted keys take the reference values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub r: Option<f64>,
    pub l: Option<f64>,
    pub c: Option<f64>,
    pub period: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub omega1: Option<f64>,
    pub k: Option<u8>,
}

impl ParamsSection {
    pub fn resolve(&self) -> AmplifierParams {
        let d = AmplifierParams::reference(0);
        AmplifierParams {
            r: self.r.unwrap_or(d.r),
            l: self.l.unwrap_or(d.l),
            c: self.c.unwrap_or(d.c),
            period: self.period.unwrap_or(d.period),
            c1: self.c1.unwrap_or(d.c1),
            c2: self.c2.unwrap_or(d.c2),
            c3: self.c3.unwrap_or(d.c3),
            omega1: self.omega1.unwrap_or(d.omega1),
            k: self.k.unwrap_or(d.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatingPointSection {
    /// Constant inputs at which steady, stability and tf are evaluated.
    pub u0: Vec<f64>,
}

impl Default for OperatingPointSection {
    fn default() -> Self {
        Self { u0: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub scale: Scale,
    /// Operating point of the monodromy analysis at each grid point.
    pub u0: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            param: "c1".into(),
            lo: 1.0e5,
            hi: 4.5e5,
            points: 30,
            scale: Scale::Linear,
            u0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Parameter bisected for the stability threshold.
    pub threshold_param: String,
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            threshold_param: "c1".into(),
            lo: 1.5e5,
            hi: 3.0e5,
            tol: classd::stability::DEFAULT_THRESHOLD_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfSection {
    /// Hz.
    pub f_min: f64,
    pub f_max: f64,
    pub points: usize,
    pub scale: Scale,
}

impl Default for TfSection {
    fn default() -> Self {
        Self {
            f_min: 20.0,
            f_max: 20_000.0,
            points: 61,
            scale: Scale::Log,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Truncation order of the slow-time expansion (0 or 1).
    pub order: u8,
    /// Trapezoid samples per input period for the Fourier coefficients.
    pub samples: usize,
    /// Time-series output (`predict --samples`).
    pub sample_rate: f64,
    /// Seconds; defaults to one input period.
    pub duration: Option<f64>,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            order: 1,
            samples: 4096,
            sample_rate: 192_000.0,
            duration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Harmonics `1..=harmonics` are tracked.
    pub harmonics: usize,
    /// `|f1_sim - f1_analytic| / |f1_analytic|`.
    pub fundamental_rel_tol: f64,
    /// Relative magnitude difference for `n >= 2`.
    pub harmonic_rel_tol: f64,
    /// Analytic magnitudes below this are treated as zero.
    pub zero_floor: f64,
    /// Bound on the simulated magnitude where the analytic one is zero.
    pub zero_abs_tol: f64,
    pub dc_abs_tol: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            harmonics: 4,
            fundamental_rel_tol: 1e-2,
            harmonic_rel_tol: 0.1,
            zero_floor: 1e-12,
            zero_abs_tol: 1e-5,
            dc_abs_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<String>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment run by `classd run`.
    pub experiment: Option<Experiment>,
    /// Reserved; every computation is deterministic.
    pub seed: u64,
    /// Input periods discarded before analysis (carrier periods for constant input).
    pub transient_periods: usize,
    /// Input periods in the analysis window (carrier periods for constant input).
    pub analysis_periods: usize,
    pub n_max: usize,
    pub params: ParamsSection,
    pub input: InputSignal,
    pub operating_point: OperatingPointSection,
    pub sweep: SweepSection,
    pub stability: StabilitySection,
    pub tf: TfSection,
    pub predict: PredictSection,
    pub compare: CompareSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            transient_periods: 20,
            analysis_periods: 1,
            n_max: classd::spectral::DEFAULT_N_MAX,
            params: ParamsSection::default(),
            input: InputSignal::sine(0.8, 1000.0),
            operating_point: OperatingPointSection::default(),
            sweep: SweepSection::default(),
            stability: StabilitySection::default(),
            tf: TfSection::default(),
            predict: PredictSection::default(),
            compare: CompareSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn key_error(key: &str, reason: impl fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {reason}"))
}

fn param_error(section: &str, e: Error) -> CliError {
    match e {
        Error::InvalidParameter { field, reason } => key_error(&format!("{section}.{field}"), reason),
        Error::Saturation(v) => key_error("input", format!("peak |u| = {v} must be below 1")),
        other => CliError::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn params(&self) -> AmplifierParams {
        self.params.resolve()
    }

    pub fn sweep_param(&self) -> CliResult<SweepParam> {
        parse_param("sweep.param", &self.sweep.param)
    }

    pub fn threshold_param(&self) -> CliResult<SweepParam> {
        parse_param("stability.threshold_param", &self.stability.threshold_param)
    }

    /// Checks every invariant, naming the offending key.
    pub fn validate(&self) -> CliResult<()> {
        self.params().validate().map_err(|e| param_error("params", e))?;
        self.input.validate().map_err(|e| param_error("input", e))?;
        if self.n_max == 0 {
            return Err(key_error("n_max", "must be at least 1"));
        }
        if self.analysis_periods == 0 {
            return Err(key_error("analysis_periods", "must be at least 1"));
        }
        for &u in &self.operating_point.u0 {
            if !(u.abs() < 1.0) {
                return Err(key_error("operating_point.u0", format!("{u} must lie in (-1, 1)")));
            }
        }
        if self.operating_point.u0.is_empty() {
            return Err(key_error("operating_point.u0", "needs at least one value"));
        }
        self.sweep_param()?;
        check_range("sweep", self.sweep.lo, self.sweep.hi, self.sweep.points, self.sweep.scale)?;
        if !(self.sweep.u0.abs() < 1.0) {
            return Err(key_error("sweep.u0", "must lie in (-1, 1)"));
        }
        self.threshold_param()?;
        if !(self.stability.lo < self.stability.hi) {
            return Err(key_error("stability.lo", "must be below stability.hi"));
        }
        if !(self.stability.tol > 0.0) {
            return Err(key_error("stability.tol", "must be positive"));
        }
        check_range("tf", self.tf.f_min, self.tf.f_max, self.tf.points, self.tf.scale)?;
        if self.predict.order > 1 {
            return Err(key_error("predict.order", "must be 0 or 1"));
        }
        if !(self.predict.sample_rate > 0.0) {
            return Err(key_error("predict.sample_rate", "must be positive"));
        }
        if matches!(self.predict.duration, Some(d) if !(d > 0.0)) {
            return Err(key_error("predict.duration", "must be positive"));
        }
        if self.compare.harmonics == 0 || self.compare.harmonics > self.n_max {
            return Err(key_error("compare.harmonics", format!("must lie in 1..={}", self.n_max)));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration (after overrides), hex encoded.
    /// The output section is left out: where results go does not change them.
    pub fn hash(&self) -> String {
        let mut resolved = serde_json::to_value(self).expect("config serializes");
        resolved["params"] = serde_json::to_value(self.params()).expect("params serialize");
        resolved.as_object_mut().expect("config is a table").remove("output");
        let digest = Sha256::digest(resolved.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_range(section: &str, lo: f64, hi: f64, points: usize, scale: Scale) -> CliResult<()> {
    let (lo_key, hi_key) = match section {
        "tf" => ("tf.f_min", "tf.f_max"),
        _ => ("sweep.lo", "sweep.hi"),
    };
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(key_error(lo_key, format!("must be finite and below {hi_key}")));
    }
    if points < 2 {
        return Err(key_error(&format!("{section}.points"), "must be at least 2"));
    }
    if scale == Scale::Log && lo <= 0.0 {
        return Err(key_error(lo_key, "must be positive on a log scale"));
    }
    Ok(())
}

fn parse_param(key: &str, name: &str) -> CliResult<SweepParam> {
    name.parse()
        .map_err(|_| key_error(key, format!("unknown parameter `{name}`")))
}

/// `points` values from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, points: usize, scale: Scale) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points)
        .map(|i| {
            let s = i as f64 / last;
            match (i, scale) {
                (0, _) => lo,
                (i, _) if i + 1 == points => hi,
                (_, Scale::Linear) => lo + (hi - lo) * s,
                (_, Scale::Log) => (lo.ln() + (hi.ln() - lo.ln()) * s).exp(),
            }
        })
        .collect()
}
