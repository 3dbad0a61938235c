//! Experiment configuration. Every section is optional so that a config file
//! can be as small as `{"model": {"builtin": "pair"}}`; command-line flags are
//! applied on top of the file and the merged result is what gets hashed and
//! echoed into the summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use qmfs::conditional_gaussian::{IntegrationConfig, MeasurementChannel, Waveform};
use qmfs::fixtures;
use qmfs::model_library::{self, ModelBundle};
use qmfs::phase_space::ObservableSet;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
    /// Overrides for named tolerances, before `--tol-scale`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<ForceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub koopman: Option<KoopmanSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<SpinSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<CircuitSpec>,
}

/// Either `{"builtin": "pair", "params": {"m": 1.0}}` or `{"file": "model.json"}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    /// Label of a builtin observable (`"Q"`, `"q"`, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    /// Explicit phase-space row; takes the place of `observable`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    pub k: f64,
    #[serde(default = "one")]
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    /// Index into the model's force couplings.
    #[serde(default)]
    pub coupling: usize,
    pub waveform: WaveformSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WaveformSpec {
    Constant { value: f64 },
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl From<WaveformSpec> for Waveform {
    fn from(w: WaveformSpec) -> Self {
        match w {
            WaveformSpec::Constant { value } => Waveform::Constant { value },
            WaveformSpec::Sinusoid { amplitude, frequency, phase } => Waveform::Sinusoid { amplitude, frequency, phase },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub cov_stride: usize,
}

impl From<IntegrationSpec> for IntegrationConfig {
    fn from(s: IntegrationSpec) -> Self {
        IntegrationConfig { dt: s.dt, t_final: s.t_final, cov_stride: s.cov_stride }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub master: u64,
    #[serde(default)]
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// Observable sets to test, as label lists.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sets: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    /// Amplitude used to drive Monte Carlo trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KoopmanSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    /// Coherent amplitudes `[re, im]`, one per Fock mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<[f64; 2]>,
    /// `"auto"`, `"top-levels"` or `"low-lying"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub j_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub verify: bool,
    #[serde(default)]
    pub propagate: bool,
    /// Truth-table CSV (`x,f0,f1,...`) to synthesize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesize: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn model_spec_mut(&mut self) -> &mut ModelSpec {
        self.model.get_or_insert_with(ModelSpec::default)
    }
}

/// A resolved model: the bundle plus physical coordinate labels.
pub struct ResolvedModel {
    pub name: String,
    pub bundle: ModelBundle,
    pub labels: Vec<String>,
    /// `(m, omega, hbar)` of the matching single oscillator.
    pub reference: (f64, f64, f64),
    /// File models carry no known QMFS sets.
    pub from_file: bool,
}

fn take_params(name: &str, params: &BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<Vec<f64>, CliError> {
    if let Some(bad) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        let names: Vec<&str> = allowed.iter().map(|(a, _)| *a).collect();
        return Err(CliError::Input(format!("model {name} has no parameter {bad} (expected one of {names:?})")));
    }
    Ok(allowed.iter().map(|(k, d)| params.get(*k).copied().unwrap_or(*d)).collect())
}

pub fn resolve_model(spec: Option<&ModelSpec>) -> Result<ResolvedModel, CliError> {
    let spec = spec.ok_or_else(|| CliError::Input("no model given (use --model or a config file)".into()))?;
    match (&spec.builtin, &spec.file) {
        (Some(name), None) => resolve_builtin(name, &spec.params),
        (None, Some(path)) => {
            if !spec.params.is_empty() {
                return Err(CliError::Input("params only apply to builtin models".into()));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let (model, set) = fixtures::parse_model(&text)?;
            let labels = (0..model.dim()).map(|i| format!("x{i}")).collect();
            let mut observables = BTreeMap::new();
            if let Some(set) = set {
                observables.insert("file".to_string(), set);
            }
            let hbar = model.hbar();
            Ok(ResolvedModel {
                name: path.display().to_string(),
                bundle: ModelBundle {
                    model,
                    named_bases: BTreeMap::new(),
                    qmfs_sets: Vec::new(),
                    observables,
                    metadata: BTreeMap::new(),
                    description: format!("model file {}", path.display()),
                },
                labels,
                reference: (1.0, 1.0, hbar),
                from_file: true,
            })
        }
        _ => Err(CliError::Input("model needs exactly one of builtin or file".into())),
    }
}

fn resolve_builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ResolvedModel, CliError> {
    let pair_labels = || ["q", "p", "q'", "p'"].iter().map(|s| s.to_string()).collect();
    let (bundle, labels, reference) = match name {
        "single" => {
            let v = take_params(name, params, &[("m", 1.0), ("omega", 1.0), ("hbar", 1.0)])?;
            let b = model_library::single_oscillator(v[0], v[1], v[2])?;
            (b, vec!["q".to_string(), "p".to_string()], (v[0], v[1], v[2]))
        }
        "pair" => {
            let v = take_params(name, params, &[("m", 1.0), ("omega", 1.0), ("hbar", 1.0)])?;
            (model_library::oscillator_pair(v[0], v[1], v[2])?, pair_labels(), (v[0], v[1], v[2]))
        }
        "sideband" => {
            let v = take_params(name, params, &[("omega", 1.0), ("hbar", 1.0), ("carrier", 0.0)])?;
            let mut b = model_library::sideband_model(v[0], v[1])?;
            if v[2] != 0.0 {
                b = model_library::with_carrier(b, v[2]);
            }
            (b, pair_labels(), (1.0, v[0], v[1]))
        }
        "spin-hp" => {
            let v = take_params(name, params, &[("j0", 8.0), ("gamma_b0", 1.0), ("hbar", 1.0)])?;
            let b = model_library::spin_pair_hp(v[0], v[1], v[2])?;
            (b, pair_labels(), (1.0 / v[1], v[1], v[2]))
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown model {other} (builtins: single, pair, sideband, spin-hp)"
            )))
        }
    };
    Ok(ResolvedModel { name: name.to_string(), bundle, labels, reference, from_file: false })
}

impl ResolvedModel {
    pub fn observable(&self, label: &str) -> Result<Array1<f64>, CliError> {
        self.bundle
            .observable_row(label)
            .ok_or_else(|| CliError::Input(format!("model {} has no observable {label}", self.name)))
    }

    pub fn set(&self, labels: &[String]) -> Result<ObservableSet, CliError> {
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        Ok(self.bundle.observable_set(&refs)?)
    }

    /// Default measured observable: first member of the first QMFS, else the
    /// first labelled observable.
    pub fn default_observable(&self) -> Option<String> {
        self.bundle
            .qmfs_sets
            .first()
            .or_else(|| self.bundle.observables.values().next())
            .and_then(|s| s.labels().first().cloned())
    }

    pub fn channels(&self, specs: &[ChannelSpec]) -> Result<(Vec<MeasurementChannel>, Vec<String>), CliError> {
        let mut channels = Vec::new();
        let mut labels = Vec::new();
        for (i, c) in specs.iter().enumerate() {
            let (s, label) = match (&c.observable, &c.s) {
                (Some(l), None) => (self.observable(l)?, l.clone()),
                (None, Some(s)) => (Array1::from(s.clone()), format!("c{i}")),
                _ => return Err(CliError::Input(format!("channel {i} needs exactly one of observable or s"))),
            };
            if s.len() != self.bundle.model.dim() {
                return Err(CliError::Input(format!("channel {i} row has length {}", s.len())));
            }
            channels.push(MeasurementChannel::new(s, c.k, c.eta)?);
            labels.push(label);
        }
        Ok((channels, labels))
    }
}
