pub mod check;
pub mod circuit;
pub mod force;
pub mod koopman;
pub mod simulate;
pub mod spin;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;

use qmfs::fock_oracle::FockSpace;
use qmfs::linalg::{self, CMatrix};

use crate::config::{ExperimentConfig, ModelSpec};
use crate::CliError;

pub struct Context {
    pub dir: PathBuf,
    pub parallel: bool,
}

impl Context {
    pub fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(&path)?;
        Ok((path, BufWriter::new(file)))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(name)?;
        w.write_all(contents.as_bytes())?;
        w.flush()?;
        Ok(path)
    }
}

/// Model selection flags shared by `check`, `simulate` and `force`.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Builtin model: single, pair, sideband, spin-hp.
    #[arg(long, value_name = "NAME", conflicts_with = "model_file")]
    pub model: Option<String>,
    /// JSON model file.
    #[arg(long, value_name = "FILE")]
    pub model_file: Option<PathBuf>,
    /// Builtin parameter, e.g. `--param omega=2`.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s}"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

impl ModelArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(name) = &self.model {
            let keep = cfg.model.as_ref().filter(|m| m.builtin.as_deref() == Some(name.as_str()));
            let params = keep.map(|m| m.params.clone()).unwrap_or_default();
            cfg.model = Some(ModelSpec { builtin: Some(name.clone()), params, file: None });
        }
        if let Some(path) = &self.model_file {
            cfg.model = Some(ModelSpec { builtin: None, params: Default::default(), file: Some(path.clone()) });
        }
        for (k, v) in &self.params {
            cfg.model_spec_mut().params.insert(k.clone(), *v);
        }
    }
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Whether `h` commutes with the total excitation number, in which case the
/// top-level guard is exact.
pub fn conserves_excitation(h: &CMatrix, space: &FockSpace) -> bool {
    let mut n = CMatrix::zeros(h.raw_dim());
    for mode in 0..space.spec.n_modes {
        let a = space.annihilation(mode);
        n = n + linalg::dagger(&a).dot(&a);
    }
    let scale = linalg::max_abs_c(h).max(1.0);
    linalg::max_abs_c(&linalg::commutator(h, &n)) < 1e-10 * scale
}
