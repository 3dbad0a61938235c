use std::io::Write;

use clap::Args;
use ndarray::Array1;

use qmfs::conditional_gaussian::{
    augmented_posterior_std, estimate_force, force_posterior_std, simulate_batch, trajectory_seed, ForceDrive,
    IntegrationConfig, MeasurementChannel, Waveform,
};
use qmfs::model_library::single_oscillator;

use super::simulate::{initial_state, resolve_channels, MeasureArgs};
use super::{Context, ModelArgs};
use crate::config::{resolve_model, ExperimentConfig, ForceSpec, IntegrationSpec};
use crate::summary::{Report, SeedReport, Tolerances, SEED_DERIVATION};
use crate::CliError;

/// Prior variance of the amplitude in the augmented flow; its information is
/// subtracted again, so the value only needs to dominate the posterior.
const AUGMENTED_PRIOR_VAR: f64 = 100.0;

#[derive(Args, Debug)]
pub struct ForceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub measure: MeasureArgs,
    /// Comma-separated strengths for the comparison table.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Vec<f64>,
    /// Template frequency (default: the oscillator frequency).
    #[arg(long)]
    pub frequency: Option<f64>,
    /// True amplitude driving the Monte Carlo trajectories (with --batch).
    #[arg(long)]
    pub truth: Option<f64>,
}

impl ForceArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        self.model.apply(cfg);
        self.measure.apply(cfg);
        let spec = cfg.force.get_or_insert_with(ForceSpec::default);
        if !self.k_values.is_empty() {
            spec.k_values = self.k_values.clone();
        }
        spec.frequency = self.frequency.or(spec.frequency);
        spec.truth = self.truth.or(spec.truth);
    }
}

struct Setup {
    model: qmfs::phase_space::LinearModel,
    v0: ndarray::Array2<f64>,
    coupling: Array1<f64>,
}

impl Setup {
    fn stds(&self, channels: &[MeasurementChannel], template: &Waveform, cfg: &IntegrationConfig) -> Result<(f64, f64), CliError> {
        let filter = force_posterior_std(&self.model, &self.v0, channels, &self.coupling, template, cfg)?;
        let augmented =
            augmented_posterior_std(&self.model, &self.v0, channels, &self.coupling, template, cfg, AUGMENTED_PRIOR_VAR)?;
        Ok((filter, augmented))
    }
}

pub fn run(cfg: &ExperimentConfig, ctx: &Context, tol: &mut Tolerances) -> Result<Report, CliError> {
    let resolved = resolve_model(cfg.model.as_ref())?;
    let specs = resolve_channels(&resolved, &cfg.channels)?;
    let spec = cfg.force.clone().unwrap_or_default();
    let integration: IntegrationConfig =
        cfg.integration.unwrap_or(IntegrationSpec { dt: 0.01, t_final: 20.0, cov_stride: 0 }).into();
    let (m, omega, hbar) = resolved.reference;
    let template = Waveform::Sinusoid { amplitude: 1.0, frequency: spec.frequency.unwrap_or(omega), phase: 0.0 };
    let route_tol = tol.get("route_agreement", 1e-2);

    let coupling_index = cfg.drive.as_ref().map(|d| d.coupling).unwrap_or(0);
    let coupling = resolved
        .bundle
        .model
        .force_couplings()
        .get(coupling_index)
        .cloned()
        .ok_or_else(|| CliError::Input(format!("model has no force coupling {coupling_index}")))?;
    let state = initial_state(&resolved, cfg.initial_mean.as_ref())?;
    let target = Setup { model: resolved.bundle.model.clone(), v0: state.cov().clone(), coupling };
    let single = single_oscillator(m, omega, hbar)?;
    let reference = Setup {
        v0: ndarray::Array2::eye(2) * (hbar / 2.0),
        coupling: single.model.force_couplings()[0].clone(),
        model: single.model,
    };

    let k_values = if spec.k_values.is_empty() { vec![specs[0].k] } else { spec.k_values.clone() };
    let mut report = Report::new();
    let (path, mut csv) = ctx.create("force.csv")?;
    writeln!(csv, "model,k,eta,posterior_std,augmented_std,single_std,single_augmented_std,ratio")?;
    for &k in &k_values {
        let scaled: Vec<_> = specs.iter().map(|c| crate::config::ChannelSpec { k, ..c.clone() }).collect();
        let (channels, _) = resolved.channels(&scaled)?;
        let eta = specs[0].eta;
        let single_channel = MeasurementChannel::new(Array1::from(vec![1.0, 0.0]), k, eta)?;
        let (pf, pa) = target.stds(&channels, &template, &integration)?;
        let (sf, sa) = reference.stds(&[single_channel], &template, &integration)?;
        let gap = ((pf / pa) - 1.0).abs().max(((sf / sa) - 1.0).abs());
        report.below(format!("route_agreement[k={k}]"), gap, route_tol);
        writeln!(csv, "{},{k},{eta},{pf:e},{pa:e},{sf:e},{sa:e},{:e}", resolved.name, pf / sf)?;
    }
    csv.flush()?;
    report.outputs.push(path);

    let batch = cfg.seeds.map(|s| s.batch).unwrap_or(0);
    if batch > 0 {
        if batch < 2 {
            return Err(CliError::Input("Monte Carlo needs --batch of at least 2".into()));
        }
        let master = cfg.seeds.map(|s| s.master).unwrap_or(0);
        let truth = spec.truth.unwrap_or(0.3);
        let sigma_tol = tol.get("monte_carlo_sigma", 3.0);
        let scaled: Vec<_> = specs.iter().map(|c| crate::config::ChannelSpec { k: k_values[0], ..c.clone() }).collect();
        let (channels, _) = resolved.channels(&scaled)?;
        let (_, predicted) = target.stds(&channels, &template, &integration)?;
        let drive = ForceDrive { coupling: target.coupling.clone(), waveform: template.scaled(truth) };
        let trajs =
            simulate_batch(&target.model, &state, &channels, Some(&drive), &integration, master, batch, ctx.parallel)?;
        let estimates: Vec<f64> = trajs
            .iter()
            .map(|tr| estimate_force(tr, &target.model, &channels, &target.coupling, &template, &integration).map(|e| e.amplitude))
            .collect::<Result<_, _>>()?;
        let (mc_path, mut mc) = ctx.create("force_mc.csv")?;
        writeln!(mc, "index,seed,estimate")?;
        for (i, e) in estimates.iter().enumerate() {
            writeln!(mc, "{i},{},{e:e}", trajs[i].seed)?;
        }
        mc.flush()?;
        report.outputs.push(mc_path);

        let n = batch as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mean_z = (mean - truth) / (predicted / n.sqrt());
        let sd_z = (sd - predicted) / (predicted / (2.0 * (n - 1.0)).sqrt());
        report.check(
            "monte_carlo_mean",
            mean_z.abs(),
            sigma_tol,
            mean_z.abs() < sigma_tol,
            format!("mean {mean:.5} vs truth {truth} (sigma units)"),
        );
        report.check(
            "monte_carlo_std",
            sd_z.abs(),
            sigma_tol,
            sd_z.abs() < sigma_tol,
            format!("sample std {sd:.5} vs augmented prediction {predicted:.5} (sigma units)"),
        );
        report.seeds = Some(SeedReport {
            master,
            batch,
            derivation: SEED_DERIVATION,
            trajectory_seeds: (0..batch as u64).map(|i| trajectory_seed(master, i)).collect(),
        });
    }
    Ok(report)
}
