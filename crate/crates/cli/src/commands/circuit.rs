use std::path::{Path, PathBuf};

use clap::Args;

use qmfs::stroboscopic::{
    build_classical_function, dense_oracle_check, propagate_z, write_truth_table_csv, BoolFunc, ReversibleCircuit,
    MAX_DENSE_BITS,
};

use super::Context;
use crate::config::{CircuitSpec, ExperimentConfig};
use crate::summary::{Report, Tolerances};
use crate::CliError;

#[derive(Args, Debug)]
pub struct CircuitArgs {
    /// Circuit text file (`bits N`, then `X t` / `CX c t` / `CCX c1 c2 t`).
    #[arg(long, value_name = "FILE")]
    pub file: Option<PathBuf>,
    /// Compare the propagated Z images with dense conjugation.
    #[arg(long)]
    pub verify: bool,
    /// Export the Z images as a truth table.
    #[arg(long)]
    pub propagate: bool,
    /// Truth-table CSV to synthesize (columns `x`, optional `x0..`, then targets).
    #[arg(long, value_name = "TABLE")]
    pub synthesize: Option<PathBuf>,
}

impl CircuitArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let spec = cfg.circuit.get_or_insert_with(CircuitSpec::default);
        if self.file.is_some() {
            spec.file = self.file.clone();
        }
        spec.verify |= self.verify;
        spec.propagate |= self.propagate;
        if self.synthesize.is_some() {
            spec.synthesize = self.synthesize.clone();
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Reads a truth table. Input-bit columns `x0, x1, ...` are skipped; every
/// other column after `x` is a target.
pub fn parse_truth_table(text: &str) -> Result<(Vec<String>, Vec<BoolFunc>), CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| CliError::Input("empty truth table".into()))?.split(',').map(str::trim).collect();
    if header.first() != Some(&"x") {
        return Err(CliError::Input("truth table must start with an x column".into()));
    }
    let is_input = |h: &str| h.strip_prefix('x').is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()));
    let targets: Vec<usize> = (1..header.len()).filter(|&i| !is_input(header[i])).collect();
    if targets.is_empty() {
        return Err(CliError::Input("truth table has no target columns".into()));
    }
    let mut rows: Vec<(usize, Vec<bool>)> = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(CliError::Input(format!("truth table row {} has {} cells", k + 1, cells.len())));
        }
        let x: usize = cells[0].parse().map_err(|e| CliError::Input(format!("row {}: {e}", k + 1)))?;
        let bits = targets
            .iter()
            .map(|&i| match cells[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(CliError::Input(format!("row {}: expected 0 or 1, got {other}", k + 1))),
            })
            .collect::<Result<_, _>>()?;
        rows.push((x, bits));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(CliError::Input("truth table rows must cover x = 0..2^n exactly once".into()));
    }
    let funcs = (0..targets.len())
        .map(|t| BoolFunc::from_table(&rows.iter().map(|r| r.1[t]).collect::<Vec<_>>()))
        .collect::<Result<_, _>>()?;
    Ok((targets.iter().map(|&i| header[i].to_string()).collect(), funcs))
}

fn verify_dense(report: &mut Report, name: &str, c: &ReversibleCircuit) -> Result<(), CliError> {
    if c.n_bits() > MAX_DENSE_BITS {
        return Err(CliError::Input(format!(
            "dense verification is limited to {MAX_DENSE_BITS} bits, circuit has {}",
            c.n_bits()
        )));
    }
    let check = dense_oracle_check(c)?;
    report.check(
        format!("{name}_dense_deviation"),
        check.max_deviation.max(check.max_offdiagonal).max(check.max_commutator) as f64,
        0.0,
        check.is_exact(),
        format!(
            "integer dense conjugation: deviation {}, off-diagonal {}, commutator {}",
            check.max_deviation, check.max_offdiagonal, check.max_commutator
        ),
    );
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, ctx: &Context, _tol: &mut Tolerances) -> Result<Report, CliError> {
    let spec = cfg.circuit.clone().unwrap_or_default();
    if spec.file.is_none() && spec.synthesize.is_none() {
        return Err(CliError::Input("circuit needs --file or --synthesize".into()));
    }
    let mut report = Report::new();
    if let Some(path) = &spec.file {
        let circuit: ReversibleCircuit = read(path)?.parse()?;
        let n = circuit.n_bits();
        if spec.propagate || !spec.verify {
            let images = (0..n).map(|j| propagate_z(&circuit, j)).collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<String> = (0..n).map(|j| format!("f{j}")).collect();
            let (out_path, out) = ctx.create("propagation.csv")?;
            write_truth_table_csv(out, &images, &labels)?;
            report.outputs.push(out_path);
        }
        if spec.verify {
            verify_dense(&mut report, "circuit", &circuit)?;
        }
    }
    if let Some(path) = &spec.synthesize {
        let (labels, targets) = parse_truth_table(&read(path)?)?;
        let synthesis = build_classical_function(&targets)?;
        let out_path = ctx.write("synthesized.txt", &synthesis.circuit.to_text())?;
        report.outputs.push(out_path);
        report.flag(
            "synthesis_round_trip",
            synthesis.verify(&targets)?,
            format!(
                "{} gates on {} bits; outputs {:?} on bits {:?}",
                synthesis.circuit.gates().len(),
                synthesis.circuit.n_bits(),
                labels,
                synthesis.output_bits
            ),
        );
        if spec.verify && synthesis.circuit.n_bits() <= MAX_DENSE_BITS {
            verify_dense(&mut report, "synthesized", &synthesis.circuit)?;
        }
    }
    Ok(report)
}
