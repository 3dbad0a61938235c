use std::io::Write;

use clap::Args;
use ndarray::Array1;

use qmfs::conditional_gaussian::{
    physicality_margin, simulate_batch, trajectory_seed, write_trajectory_csv, ForceDrive, GaussianState,
    IntegrationConfig,
};

use super::{Context, ModelArgs};
use crate::config::{
    resolve_model, ChannelSpec, DriveSpec, ExperimentConfig, IntegrationSpec, ResolvedModel, WaveformSpec,
};
use crate::summary::{Report, SeedReport, Tolerances, SEED_DERIVATION};
use crate::CliError;

/// Measurement, drive and integration flags shared by `simulate` and `force`.
#[derive(Args, Debug, Clone)]
pub struct MeasureArgs {
    /// Measured observable label (repeatable; one channel each).
    #[arg(long = "observable", value_name = "LABEL")]
    pub observables: Vec<String>,
    /// Measurement strength for every channel.
    #[arg(long)]
    pub k: Option<f64>,
    /// Detection efficiency for every channel.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
}

impl MeasureArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if !self.observables.is_empty() {
            cfg.channels = self
                .observables
                .iter()
                .map(|l| ChannelSpec { observable: Some(l.clone()), s: None, k: 1.0, eta: 1.0 })
                .collect();
        }
        for c in &mut cfg.channels {
            c.k = self.k.unwrap_or(c.k);
            c.eta = self.eta.unwrap_or(c.eta);
        }
        if (self.k.is_some() || self.eta.is_some()) && cfg.channels.is_empty() {
            // Channel on the model's default observable, filled in at run time.
            cfg.channels.push(ChannelSpec {
                observable: None,
                s: None,
                k: self.k.unwrap_or(1.0),
                eta: self.eta.unwrap_or(1.0),
            });
        }
        if self.dt.is_some() || self.t_final.is_some() {
            let i = cfg.integration.get_or_insert(IntegrationSpec { dt: 0.01, t_final: 10.0, cov_stride: 0 });
            i.dt = self.dt.unwrap_or(i.dt);
            i.t_final = self.t_final.unwrap_or(i.t_final);
        }
    }
}

/// Channels with missing observables resolved to the model default.
pub fn resolve_channels(resolved: &ResolvedModel, specs: &[ChannelSpec]) -> Result<Vec<ChannelSpec>, CliError> {
    let mut specs = specs.to_vec();
    if specs.is_empty() {
        specs.push(ChannelSpec { observable: None, s: None, k: 1.0, eta: 1.0 });
    }
    for c in &mut specs {
        if c.observable.is_none() && c.s.is_none() {
            c.observable = Some(
                resolved
                    .default_observable()
                    .ok_or_else(|| CliError::Input("model has no labelled observable to measure".into()))?,
            );
        }
    }
    Ok(specs)
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub measure: MeasureArgs,
    /// Store every N-th covariance in the CSV (0: endpoints only).
    #[arg(long)]
    pub cov_stride: Option<usize>,
    /// Sinusoidal force `A sin(w t + phase)` on the first coupling.
    #[arg(long)]
    pub force_amplitude: Option<f64>,
    #[arg(long, requires = "force_amplitude")]
    pub force_frequency: Option<f64>,
    #[arg(long, requires = "force_amplitude")]
    pub force_phase: Option<f64>,
}

impl SimulateArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        self.model.apply(cfg);
        self.measure.apply(cfg);
        if let Some(stride) = self.cov_stride {
            cfg.integration.get_or_insert(IntegrationSpec { dt: 0.01, t_final: 10.0, cov_stride: 0 }).cov_stride = stride;
        }
        if let Some(amplitude) = self.force_amplitude {
            cfg.drive = Some(DriveSpec {
                coupling: 0,
                waveform: WaveformSpec::Sinusoid {
                    amplitude,
                    frequency: self.force_frequency.unwrap_or(1.0),
                    phase: self.force_phase.unwrap_or(0.0),
                },
            });
        }
    }
}

pub fn drive(resolved: &ResolvedModel, spec: Option<&DriveSpec>) -> Result<Option<ForceDrive>, CliError> {
    spec.map(|d| {
        let coupling = resolved.bundle.model.force_couplings().get(d.coupling).cloned().ok_or_else(|| {
            CliError::Input(format!("model has no force coupling {}", d.coupling))
        })?;
        Ok(ForceDrive { coupling, waveform: d.waveform.into() })
    })
    .transpose()
}

pub fn initial_state(resolved: &ResolvedModel, mean: Option<&Vec<f64>>) -> Result<GaussianState, CliError> {
    let model = &resolved.bundle.model;
    let mean = match mean {
        Some(m) if m.len() != model.dim() => {
            return Err(CliError::Input(format!("initial_mean has length {}, expected {}", m.len(), model.dim())))
        }
        Some(m) => Array1::from(m.clone()),
        None => Array1::zeros(model.dim()),
    };
    Ok(GaussianState::isotropic(model, mean)?)
}

pub fn run(cfg: &ExperimentConfig, ctx: &Context, tol: &mut Tolerances) -> Result<Report, CliError> {
    let resolved = resolve_model(cfg.model.as_ref())?;
    let specs = resolve_channels(&resolved, &cfg.channels)?;
    let (channels, channel_labels) = resolved.channels(&specs)?;
    let integration: IntegrationConfig = cfg
        .integration
        .unwrap_or(IntegrationSpec { dt: 0.01, t_final: 10.0, cov_stride: 0 })
        .into();
    let master = cfg.seeds.map(|s| s.master).unwrap_or(0);
    let batch = cfg.seeds.map(|s| s.batch).filter(|&b| b > 0).unwrap_or(1);
    let state = initial_state(&resolved, cfg.initial_mean.as_ref())?;
    let force = drive(&resolved, cfg.drive.as_ref())?;
    let phys_tol = tol.get("physicality", 1e-9);

    let model = &resolved.bundle.model;
    let trajectories = simulate_batch(model, &state, &channels, force.as_ref(), &integration, master, batch, ctx.parallel)?;

    let mut report = Report::new();
    let mut worst_margin = f64::INFINITY;
    for (i, tr) in trajectories.iter().enumerate() {
        let (path, mut out) = ctx.create(&format!("trajectories/traj_{i:04}.csv"))?;
        write_trajectory_csv(&mut out, tr, &resolved.labels, &channel_labels, true)?;
        out.flush()?;
        report.outputs.push(path);
        worst_margin = worst_margin.min(physicality_margin(tr.final_cov(), model)?);
    }
    let finite = trajectories.iter().all(|t| t.means.iter().chain(t.records.iter()).all(|x| x.is_finite()));
    report.flag("finite_output", finite, "means and records are finite");
    report.check(
        "physicality",
        worst_margin,
        phys_tol,
        worst_margin >= -phys_tol,
        "min eigenvalue of V + i(hbar/2)Omega at T",
    );
    report.seeds = Some(SeedReport {
        master,
        batch,
        derivation: SEED_DERIVATION,
        trajectory_seeds: (0..batch as u64).map(|i| trajectory_seed(master, i)).collect(),
    });
    Ok(report)
}
