use clap::Args;

use qmfs::spin_exact::{sweep, write_sweep_csv};

use super::{strictly_decreasing, Context};
use crate::config::{ExperimentConfig, SpinSpec};
use crate::summary::{Report, Tolerances};
use crate::CliError;

#[derive(Args, Debug)]
pub struct SpinArgs {
    /// Comma-separated spin sizes J0.
    #[arg(long, value_delimiter = ',')]
    pub j_values: Vec<f64>,
    #[arg(long)]
    pub gamma_b0: Option<f64>,
    #[arg(long)]
    pub hbar: Option<f64>,
    /// Initial HP displacement of q.
    #[arg(long)]
    pub displacement: Option<f64>,
    /// Excitation cutoff of the low-lying subspace.
    #[arg(long)]
    pub excitations: Option<usize>,
    /// Time pair `t,t'` for the commutator checks.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    pub times: Vec<f64>,
}

impl SpinArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let spec = cfg.spin.get_or_insert_with(SpinSpec::default);
        if !self.j_values.is_empty() {
            spec.j_values = self.j_values.clone();
        }
        spec.gamma_b0 = self.gamma_b0.or(spec.gamma_b0);
        spec.hbar = self.hbar.or(spec.hbar);
        spec.displacement = self.displacement.or(spec.displacement);
        spec.excitations = self.excitations.or(spec.excitations);
        if self.times.len() == 2 {
            spec.times = Some((self.times[0], self.times[1]));
        }
    }
}

pub fn run(cfg: &ExperimentConfig, ctx: &Context, tol: &mut Tolerances) -> Result<Report, CliError> {
    let spec = cfg.spin.clone().unwrap_or_default();
    let j_values = if spec.j_values.is_empty() { vec![2.0, 4.0, 8.0, 16.0] } else { spec.j_values.clone() };
    if j_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Input("J0 values must be strictly increasing".into()));
    }
    let identity_tol = tol.get("identity", 1e-10);
    let rows = sweep(
        &j_values,
        spec.gamma_b0.unwrap_or(1.0),
        spec.hbar.unwrap_or(1.0),
        spec.displacement.unwrap_or(0.4),
        spec.times.unwrap_or((0.3, 1.4)),
        spec.excitations.unwrap_or(2),
    )?;
    let (path, out) = ctx.create("spin_sweep.csv")?;
    write_sweep_csv(out, &rows)?;

    let mut report = Report::new();
    report.outputs.push(path);
    for r in &rows {
        report.below(format!("identity[J0={}]", r.j0), r.residual_norm, identity_tol);
    }
    if rows.len() > 1 {
        let low: Vec<f64> = rows.iter().map(|r| r.low_excitation_norm).collect();
        let hp: Vec<f64> = rows.iter().map(|r| r.hp_deviation).collect();
        report.flag("low_excitation_monotone", strictly_decreasing(&low), "low-excitation norm decreases with J0");
        report.flag("hp_deviation_monotone", strictly_decreasing(&hp), "HP deviation decreases with J0");
    }
    Ok(report)
}
