use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use ndarray::{Array1, Array2};

use qmfs::fixtures::parse_poly_koopman;
use qmfs::fock_oracle::{
    build_koopman_hamiltonian, commutator_residual, expectation, guarded_commutator, koopman_operators,
    time_ordered_unitary, FockSpace, Guard, KoopmanOperators, PolyKoopman, Propagator,
};
use qmfs::koopman_classical::{flow_map, transport_density, ClassicalFlow, WeightedSamples};
use qmfs::linalg::{self, CMatrix, C64};
use qmfs::poly::{Monomial, Poly};

use super::{conserves_excitation, strictly_decreasing, Context};
use crate::config::{ExperimentConfig, KoopmanSpec};
use crate::summary::{Report, Tolerances};
use crate::CliError;

/// Midpoint step for time-dependent generators.
const TIME_ORDERED_STEP: f64 = 1e-2;

#[derive(Args, Debug)]
pub struct KoopmanArgs {
    /// PolyKoopman JSON (default: f = Pi + 0.1 Q^2, g = Q).
    #[arg(long, value_name = "FILE")]
    pub file: Option<PathBuf>,
    /// Comma-separated Fock levels per mode.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<usize>,
    /// Comma-separated comparison times (multiples of --dt).
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,
    /// Coherent amplitudes as re,im pairs, one pair per mode.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha: Vec<f64>,
    /// auto, top-levels or low-lying.
    #[arg(long)]
    pub guard: Option<String>,
    #[arg(long)]
    pub guard_size: Option<usize>,
    /// Gauss-Hermite nodes per dimension.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Classical RK4 step.
    #[arg(long)]
    pub dt: Option<f64>,
}

impl KoopmanArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let spec = cfg.koopman.get_or_insert_with(KoopmanSpec::default);
        if self.file.is_some() {
            spec.file = self.file.clone();
        }
        if !self.levels.is_empty() {
            spec.levels = self.levels.clone();
        }
        if !self.times.is_empty() {
            spec.times = self.times.clone();
        }
        if !self.alpha.is_empty() {
            spec.alpha = self.alpha.chunks(2).map(|c| [c[0], c.get(1).copied().unwrap_or(0.0)]).collect();
        }
        spec.guard = self.guard.clone().or(spec.guard.take());
        spec.guard_size = self.guard_size.or(spec.guard_size);
        spec.nodes = self.nodes.or(spec.nodes);
        spec.dt = self.dt.or(spec.dt);
    }
}

fn default_generator() -> Result<PolyKoopman, CliError> {
    let f = Poly::new(vec![Monomial::single(0, 1, 1.0), Monomial::single(2, 0, 0.1)]);
    let g = Poly::new(vec![Monomial::single(1, 0, 1.0)]);
    Ok(PolyKoopman::new(vec![f], vec![g], Poly::zero(), 1.0)?)
}

/// Heisenberg pictures of the `(Q_j, Pi_j)` at a list of times.
enum Evolution {
    Static(Propagator),
    TimeOrdered(Vec<CMatrix>),
}

impl Evolution {
    fn new(pk: &PolyKoopman, space: &FockSpace, h: &CMatrix, times: &[f64]) -> Result<Self, CliError> {
        if pk.is_time_dependent() {
            let us = times
                .iter()
                .map(|&t| time_ordered_unitary(pk, space, t, (t / TIME_ORDERED_STEP).ceil() as usize))
                .collect::<Result<_, _>>()?;
            Ok(Evolution::TimeOrdered(us))
        } else {
            Ok(Evolution::Static(Propagator::new(h, pk.hbar)?))
        }
    }

    fn residual(&self, space: &FockSpace, ops: &[CMatrix], times: &[f64], guard: Guard) -> Result<(f64, String, usize), CliError> {
        match self {
            Evolution::Static(prop) => {
                let r = commutator_residual(prop, space, ops, times, guard)?;
                Ok((r.max_residual, r.guard, r.guard_dim))
            }
            Evolution::TimeOrdered(us) => {
                let idx = guard.indices(&space.spec);
                let evolved: Vec<Vec<CMatrix>> = us
                    .iter()
                    .map(|u| ops.iter().map(|x| linalg::dagger(u).dot(x).dot(u)).collect())
                    .collect();
                let mut worst: f64 = 0.0;
                for a in &evolved {
                    for b in &evolved {
                        for x in a {
                            for y in b {
                                let c = guarded_commutator(x, y, &idx);
                                worst = worst.max(linalg::spectral_norm(c.view())?);
                            }
                        }
                    }
                }
                Ok((worst, guard.describe(), idx.len()))
            }
        }
    }

    fn state(&self, psi: &Array1<C64>, k: usize, t: f64) -> Array1<C64> {
        match self {
            Evolution::Static(prop) => prop.evolve_state(psi, t),
            Evolution::TimeOrdered(us) => us[k].dot(psi),
        }
    }
}

fn pick_guard(spec: &KoopmanSpec, h: &CMatrix, space: &FockSpace) -> Result<Guard, CliError> {
    let size = spec.guard_size.unwrap_or(2);
    match spec.guard.as_deref().unwrap_or("auto") {
        "auto" if conserves_excitation(h, space) => Ok(Guard::TopLevels(size)),
        "auto" | "low-lying" => Ok(Guard::LowLying(size)),
        "top-levels" => Ok(Guard::TopLevels(size)),
        other => Err(CliError::Input(format!("unknown guard {other} (auto, top-levels, low-lying)"))),
    }
}

fn variables(ops: &KoopmanOperators) -> Vec<CMatrix> {
    ops.q.iter().chain(&ops.pi).cloned().collect()
}

pub fn run(cfg: &ExperimentConfig, ctx: &Context, tol: &mut Tolerances) -> Result<Report, CliError> {
    let spec = cfg.koopman.clone().unwrap_or_default();
    let pk = match &spec.file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            parse_poly_koopman(&text)?
        }
        None => default_generator()?,
    };
    let pairs = pk.pairs;
    let modes = pk.n_modes();
    let levels = if spec.levels.is_empty() { vec![10, 15, 20, 25] } else { spec.levels.clone() };
    let times = if spec.times.is_empty() { vec![0.0, 0.5, 1.0, 1.5, 2.0] } else { spec.times.clone() };
    let alpha: Vec<C64> = if spec.alpha.is_empty() {
        (0..modes).map(|m| if m < pairs { C64::new(0.3, 0.0) } else { C64::new(0.0, 0.2) }).collect()
    } else {
        spec.alpha.iter().map(|a| C64::new(a[0], a[1])).collect()
    };
    if alpha.len() != modes {
        return Err(CliError::Input(format!("need {modes} coherent amplitudes, got {}", alpha.len())));
    }
    if times.iter().any(|t| *t < 0.0) {
        return Err(CliError::Input("times must be non-negative".into()));
    }
    let oracle_tol = tol.get("oracle", 1e-5);
    let fraction = tol.get("expectation_fraction", 1e-2);
    let floor = tol.get("expectation_floor", 1e-6);

    let mut report = Report::new();
    let (res_path, mut res_csv) = ctx.create("koopman_residuals.csv")?;
    writeln!(res_csv, "levels,guard,guard_dim,residual")?;
    let mut residuals = Vec::new();
    let mut oracle_means: Vec<Vec<f64>> = Vec::new();
    let largest = *levels.iter().max().ok_or_else(|| CliError::Input("no levels".into()))?;
    for &n in &levels {
        let space = pk.space(n)?;
        let h = build_koopman_hamiltonian(&pk, &space)?;
        let guard = pick_guard(&spec, &h, &space)?;
        let ops = koopman_operators(&space, pairs)?;
        let evolution = Evolution::new(&pk, &space, &h, &times)?;
        let (r, guard_text, guard_dim) = evolution.residual(&space, &variables(&ops), &times, guard)?;
        writeln!(res_csv, "{n},\"{guard_text}\",{guard_dim},{r:e}")?;
        residuals.push(r);
        if n == largest {
            let psi = space.coherent_state(&alpha)?;
            oracle_means = times
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let state = evolution.state(&psi, k, t);
                    ops.q.iter().map(|q| expectation(q, &state).re).collect()
                })
                .collect();
        }
    }
    res_csv.flush()?;
    report.outputs.push(res_path);
    let at_largest = residuals[levels.iter().position(|&n| n == largest).unwrap()];
    report.check(format!("oracle[N={largest}]"), at_largest / pk.hbar, oracle_tol, at_largest / pk.hbar < oracle_tol, "");
    if levels.len() > 1 {
        let mut sorted: Vec<(usize, f64)> = levels.iter().copied().zip(residuals.iter().copied()).collect();
        sorted.sort_by_key(|p| p.0);
        let values: Vec<f64> = sorted.iter().map(|p| p.1).collect();
        report.flag("oracle_monotone", strictly_decreasing(&values), "residual decreases with N");
    }

    // In a coherent state the commuting (Q_j, Pi_j) are jointly Gaussian:
    // Q_j from the real part on mode j, Pi_j from the imaginary part on mode M + j.
    let (hbar, mass, omega) = (pk.hbar, pk.mass, pk.omega);
    let mut mean = Array1::zeros(2 * pairs);
    let mut cov = Array2::zeros((2 * pairs, 2 * pairs));
    for j in 0..pairs {
        mean[j] = (2.0 * hbar / (mass * omega)).sqrt() * alpha[j].re;
        mean[pairs + j] = (2.0 * hbar * mass * omega).sqrt() * alpha[pairs + j].im;
        cov[[j, j]] = hbar / (2.0 * mass * omega);
        cov[[pairs + j, pairs + j]] = hbar * mass * omega / 2.0;
    }
    let flow = ClassicalFlow::from_koopman(&pk, spec.dt.unwrap_or(1e-3))?;
    let nodes = spec.nodes.unwrap_or(if pairs == 1 { 12 } else { 8 });
    let samples = WeightedSamples::gauss_hermite(&mean, &cov, nodes)?;

    let (exp_path, mut exp_csv) = ctx.create("koopman_expectations.csv")?;
    writeln!(exp_csv, "time,observable,classical_ensemble,point_trajectory,oracle,tolerance")?;
    let mut worst_ratio: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let ensemble = transport_density(&flow, &samples, t)?.mean;
        let point = flow_map(&flow, mean.as_slice().unwrap(), t)?;
        for j in 0..pairs {
            let limit = (fraction * (ensemble[j] - point[j]).abs()).max(floor);
            let gap = (ensemble[j] - oracle_means[k][j]).abs();
            worst_ratio = worst_ratio.max(gap / limit);
            writeln!(exp_csv, "{t},Q{j},{:e},{:e},{:e},{limit:e}", ensemble[j], point[j], oracle_means[k][j])?;
        }
    }
    exp_csv.flush()?;
    report.outputs.push(exp_path);
    report.check(
        "expectation_gap",
        worst_ratio,
        1.0,
        worst_ratio <= 1.0,
        format!("|ensemble - oracle| / max({fraction:e} |ensemble - point|, {floor:e}), worst over times"),
    );
    Ok(report)
}
