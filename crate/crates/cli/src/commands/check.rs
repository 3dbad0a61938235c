use std::io::Write;

use clap::Args;
use ndarray::Array2;

use qmfs::fock_oracle::{build_koopman_hamiltonian, commutator_residual, koopman_operators, Guard, PolyKoopman, Propagator};
use qmfs::linalg;
use qmfs::phase_space::{is_qmfs_with_tol, max_commutator_on_grid, LinearModel, ObservableSet, DEFAULT_QMFS_TOL};
use qmfs::poly::{Monomial, Poly};

use super::{conserves_excitation, Context, ModelArgs};
use crate::config::{resolve_model, CheckSpec, ExperimentConfig, ResolvedModel};
use crate::summary::{Report, Tolerances};
use crate::CliError;

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Observable set to test, comma-separated labels (repeatable).
    #[arg(long = "set", value_name = "LABELS")]
    pub sets: Vec<String>,
    /// Fock levels per mode for the oracle.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Points per axis of the linear-engine time grid.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Points per axis of the oracle time grid.
    #[arg(long)]
    pub oracle_grid: Option<usize>,
    /// Time grids span [0, t_max].
    #[arg(long)]
    pub t_max: Option<f64>,
}

impl CheckArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        self.model.apply(cfg);
        let spec = cfg.check.get_or_insert_with(CheckSpec::default);
        if !self.sets.is_empty() {
            spec.sets = self
                .sets
                .iter()
                .map(|s| s.split(',').map(|l| l.trim().to_string()).collect())
                .collect();
        }
        spec.levels = self.levels.or(spec.levels);
        spec.grid = self.grid.or(spec.grid);
        spec.oracle_grid = self.oracle_grid.or(spec.oracle_grid);
        spec.t_max = self.t_max.or(spec.t_max);
    }
}

/// QMFS sets, then every named set split into consecutive pairs.
fn default_sets(resolved: &ResolvedModel) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    let bundle = &resolved.bundle;
    for set in bundle.qmfs_sets.iter().chain(bundle.observables.values()) {
        for chunk in set.labels().chunks(2) {
            let labels = chunk.to_vec();
            if !out.contains(&labels) {
                out.push(labels);
            }
        }
    }
    out
}

/// Whether every row of `set` lies in the row span of `qmfs`.
fn in_span(set: &ObservableSet, qmfs: &ObservableSet) -> bool {
    let s = qmfs.rows();
    let r = set.rows();
    let Ok(gram_inv) = linalg::inverse(&s.dot(&s.t())) else {
        return false;
    };
    let coeffs = r.dot(&s.t()).dot(&gram_inv);
    let residual = linalg::max_abs(&(r - &coeffs.dot(s)));
    residual < 1e-10 * (1.0 + linalg::max_abs(r))
}

/// Closed 2x2 dynamics `d/dt (X0, X1) = M (X0, X1)` on the set, if any.
fn closed_dynamics(model: &LinearModel, set: &ObservableSet) -> Option<Array2<f64>> {
    let r = set.rows();
    if r.nrows() != 2 {
        return None;
    }
    let ra = r.dot(model.drift());
    let m = ra.dot(&r.t()).dot(&linalg::inverse(&r.dot(&r.t())).ok()?);
    let residual = linalg::max_abs(&(&ra - &m.dot(r)));
    (residual < 1e-10 * (1.0 + linalg::max_abs(&ra))).then_some(m)
}

/// Koopman generator `f = M00 Q + M01 Pi`, `g = -(M10 Q + M11 Pi)`, with Fock
/// length scales matched to harmonic motion when `M` is of that form.
fn koopman_from_dynamics(m: &Array2<f64>, hbar: f64) -> Result<PolyKoopman, CliError> {
    let f = Poly::new(vec![Monomial::single(1, 0, m[[0, 0]]), Monomial::single(0, 1, m[[0, 1]])]);
    let g = Poly::new(vec![Monomial::single(1, 0, -m[[1, 0]]), Monomial::single(0, 1, -m[[1, 1]])]);
    let pk = PolyKoopman::new(vec![f], vec![g], Poly::zero(), hbar)?;
    let harmonic = m[[0, 0]] == 0.0 && m[[1, 1]] == 0.0 && m[[0, 1]] > 0.0 && m[[1, 0]] < 0.0;
    Ok(if harmonic {
        let mass = 1.0 / m[[0, 1]];
        let omega = (-m[[1, 0]] * m[[0, 1]]).sqrt();
        pk.with_scales(mass, omega)
    } else {
        pk
    })
}

pub fn grid(points: usize, t_max: f64) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points).map(|k| t_max * k as f64 / (points - 1) as f64).collect()
}

pub fn run(cfg: &ExperimentConfig, ctx: &Context, tol: &mut Tolerances) -> Result<Report, CliError> {
    let resolved = resolve_model(cfg.model.as_ref())?;
    let spec = cfg.check.clone().unwrap_or_default();
    let sets = if spec.sets.is_empty() { default_sets(&resolved) } else { spec.sets.clone() };
    if sets.is_empty() {
        return Err(CliError::Input("no observable sets to check".into()));
    }
    let levels = spec.levels.unwrap_or(20);
    let t_max = spec.t_max.unwrap_or(10.0);
    let times = grid(spec.grid.unwrap_or(20), t_max);
    let oracle_times = grid(spec.oracle_grid.unwrap_or(8), t_max);
    let model = &resolved.bundle.model;
    let hbar = model.hbar();
    let qmfs_tol = tol.get("qmfs", DEFAULT_QMFS_TOL);
    let grid_tol = tol.get("linear_grid", 1e-10);
    let oracle_tol = tol.get("oracle", 1e-8);

    let mut report = Report::new();
    let (path, mut csv) = ctx.create("check.csv")?;
    writeln!(
        csv,
        "set,expected,verdict,max_scaled_residual,witness,linear_grid,oracle_levels,oracle_guard,oracle_residual"
    )?;
    for labels in &sets {
        let name = labels.join(",");
        let set = resolved.set(labels)?;
        let expected = (!resolved.from_file).then(|| resolved.bundle.qmfs_sets.iter().any(|q| in_span(&set, q)));
        let verdict = is_qmfs_with_tol(model, &set, qmfs_tol)?;
        let witness = verdict
            .witness
            .map(|w| format!("i={} j={} row={} col={}", w.i, w.j, w.row, w.col))
            .unwrap_or_default();
        let grid_residual = max_commutator_on_grid(model, &set, &times)?;
        let verdict_text = if verdict.is_qmfs() { "QMFS" } else { "not QMFS" };
        match expected {
            Some(e) => report.check(
                format!("verdict[{name}]"),
                verdict.max_scaled_residual,
                qmfs_tol,
                e == verdict.is_qmfs(),
                format!("{verdict_text}; expected {}", if e { "QMFS" } else { "not QMFS" }),
            ),
            None => report.flag(format!("verdict[{name}]"), true, verdict_text),
        }

        let mut oracle_cells = (String::new(), String::new(), String::new());
        if verdict.is_qmfs() {
            report.below(format!("linear_grid[{name}]"), grid_residual / hbar, grid_tol);
            if let Some(m) = closed_dynamics(model, &set) {
                let pk = koopman_from_dynamics(&m, hbar)?;
                let space = pk.space(levels)?;
                let h = build_koopman_hamiltonian(&pk, &space)?;
                let guard = if conserves_excitation(&h, &space) { Guard::TopLevels(2) } else { Guard::LowLying(2) };
                let prop = Propagator::new(&h, hbar)?;
                let ops = koopman_operators(&space, 1)?;
                // Koopman variables carry the set's own units: X0 = Q, X1 = Pi.
                let r = commutator_residual(&prop, &space, &[ops.q[0].clone(), ops.pi[0].clone()], &oracle_times, guard)?;
                report.check(
                    format!("oracle[{name}]"),
                    r.max_residual / hbar,
                    oracle_tol,
                    r.max_residual / hbar < oracle_tol,
                    format!("N = {levels}, {}", r.guard),
                );
                oracle_cells = (levels.to_string(), r.guard.clone(), format!("{:e}", r.max_residual));
            }
        }
        writeln!(
            csv,
            "\"{name}\",{},{verdict_text},{:e},{witness},{:e},{},\"{}\",{}",
            expected.map(|e| if e { "QMFS" } else { "not QMFS" }).unwrap_or(""),
            verdict.max_scaled_residual,
            grid_residual,
            oracle_cells.0,
            oracle_cells.1,
            oracle_cells.2
        )?;
    }
    csv.flush()?;
    report.outputs.push(path);
    Ok(report)
}
