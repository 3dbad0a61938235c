//! Symplectic linear-system core.
//!
//! Phase-space vectors are ordered `(q1, p1, q2, p2, ...)`. A quadratic
//! Hamiltonian `H = x^T G x / 2` generates the Heisenberg flow
//! `dx/dt = A x` with `A = Omega G`, and linear observables `s . x` have
//! c-number two-time commutators
//!
//! ```text
//! [s_j . x(t), s_k . x(t')] = i hbar s_j^T Phi(t) Omega Phi(t')^T s_k,   Phi(t) = exp(A t).
//! ```

use ndarray::{Array1, Array2, Axis};

use crate::error::{QmfsError, Result};
use crate::linalg::{self, CMatrix, C64};

/// Largest `|A t|_1` accepted by [`LinearModel::transfer_matrix`].
pub const DEFAULT_EXP_BOUND: f64 = 50.0;

/// Default scaled-residual tolerance for [`is_qmfs`].
pub const DEFAULT_QMFS_TOL: f64 = 1e-10;

/// Block-diagonal symplectic form with one `[[0, 1], [-1, 0]]` block per mode.
pub fn symplectic_form(n_modes: usize) -> Array2<f64> {
    let mut omega = Array2::zeros((2 * n_modes, 2 * n_modes));
    for k in 0..n_modes {
        omega[[2 * k, 2 * k + 1]] = 1.0;
        omega[[2 * k + 1, 2 * k]] = -1.0;
    }
    omega
}

/// Hamilton's equations in matrix form, `A = Omega G`.
pub fn build_drift(g: &Array2<f64>, omega: &Array2<f64>) -> Result<Array2<f64>> {
    let n = omega.nrows();
    if g.dim() != (n, n) || omega.ncols() != n {
        return Err(QmfsError::Dimension(format!(
            "G is {:?} but Omega is {:?}",
            g.dim(),
            omega.dim()
        )));
    }
    let asym = linalg::max_asymmetry(g);
    if asym != 0.0 {
        return Err(QmfsError::NotSymmetric { asymmetry: asym });
    }
    Ok(omega.dot(g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    n_modes: usize,
    hbar: f64,
    hamiltonian: Array2<f64>,
    drift: Array2<f64>,
    omega: Array2<f64>,
    force_couplings: Vec<Array1<f64>>,
}

impl LinearModel {
    pub fn new(n_modes: usize, hbar: f64, g: Array2<f64>) -> Result<Self> {
        if n_modes == 0 {
            return Err(QmfsError::InvalidInput("n_modes must be positive".into()));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(QmfsError::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(QmfsError::InvalidInput("G has non-finite entries".into()));
        }
        let omega = symplectic_form(n_modes);
        let drift = build_drift(&g, &omega)?;
        Ok(Self {
            n_modes,
            hbar,
            hamiltonian: g,
            drift,
            omega,
            force_couplings: Vec::new(),
        })
    }

    pub fn with_force_coupling(mut self, b: Array1<f64>) -> Result<Self> {
        if b.len() != self.dim() {
            return Err(QmfsError::Dimension(format!(
                "force coupling has length {}, expected {}",
                b.len(),
                self.dim()
            )));
        }
        self.force_couplings.push(b);
        Ok(self)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn hamiltonian(&self) -> &Array2<f64> {
        &self.hamiltonian
    }

    pub fn drift(&self) -> &Array2<f64> {
        &self.drift
    }

    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    pub fn force_couplings(&self) -> &[Array1<f64>] {
        &self.force_couplings
    }

    /// `Phi(t) = exp(A t)`, rejecting `|A t|_1 > 50`.
    pub fn transfer_matrix(&self, t: f64) -> Result<Array2<f64>> {
        self.transfer_matrix_bounded(t, DEFAULT_EXP_BOUND)
    }

    pub fn transfer_matrix_bounded(&self, t: f64, bound: f64) -> Result<Array2<f64>> {
        if !t.is_finite() {
            return Err(QmfsError::InvalidInput(format!("non-finite time {t}")));
        }
        if t == 0.0 {
            return Ok(Array2::eye(self.dim()));
        }
        let at = &self.drift * t;
        let norm = linalg::one_norm(&at);
        if norm > bound {
            return Err(QmfsError::ExponentialBound { norm, bound });
        }
        linalg::expm(&at)
    }

    /// Re-expresses the model in canonical coordinates `y = T x`.
    ///
    /// `T` must be symplectic; force couplings transform as vectors.
    pub fn rebased(&self, t: &Array2<f64>) -> Result<LinearModel> {
        let n = self.dim();
        if t.dim() != (n, n) {
            return Err(QmfsError::Dimension(format!("basis change is {:?}", t.dim())));
        }
        let t_inv = linalg::inverse(t)?;
        let g = linalg::symmetrize(&t_inv.t().dot(&self.hamiltonian).dot(&t_inv));
        let mut model = LinearModel::new(self.n_modes, self.hbar, g)?;
        for b in &self.force_couplings {
            model = model.with_force_coupling(t.dot(b))?;
        }
        Ok(model)
    }
}

/// Rows of `S` define linear observables `s . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSet {
    rows: Array2<f64>,
    labels: Vec<String>,
}

impl ObservableSet {
    pub fn new(rows: Array2<f64>, labels: Vec<String>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(QmfsError::InvalidInput("observable set is empty".into()));
        }
        if labels.len() != rows.nrows() {
            return Err(QmfsError::Dimension(format!(
                "{} labels for {} observables",
                labels.len(),
                rows.nrows()
            )));
        }
        for (row, label) in rows.axis_iter(Axis(0)).zip(&labels) {
            if row.iter().all(|x| *x == 0.0) {
                return Err(QmfsError::InvalidInput(format!("observable {label} is zero")));
            }
        }
        Ok(Self { rows, labels })
    }

    pub fn from_rows(rows: &[(&str, Vec<f64>)]) -> Result<Self> {
        let width = rows.first().map(|r| r.1.len()).unwrap_or(0);
        let mut m = Array2::zeros((rows.len(), width));
        for (i, (_, r)) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(QmfsError::Dimension("ragged observable rows".into()));
            }
            m.row_mut(i).assign(&Array1::from(r.clone()));
        }
        Self::new(m, rows.iter().map(|r| r.0.to_string()).collect())
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn row(&self, label: &str) -> Option<Array1<f64>> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.rows.row(i).to_owned())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<ObservableSet> {
        let rows = self.rows.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        ObservableSet::new(rows, labels)
    }

    /// The same observables in coordinates `y = T x`: `s_y = T^{-T} s_x`.
    pub fn rebased(&self, t: &Array2<f64>) -> Result<ObservableSet> {
        let t_inv = linalg::inverse(t)?;
        ObservableSet::new(self.rows.dot(&t_inv), self.labels.clone())
    }
}

fn check_set(model: &LinearModel, set: &ObservableSet) -> Result<()> {
    if set.rows().ncols() != model.dim() {
        return Err(QmfsError::Dimension(format!(
            "observables have width {}, model dimension is {}",
            set.rows().ncols(),
            model.dim()
        )));
    }
    Ok(())
}

/// `K(t, t') = i hbar S Phi(t) Omega Phi(t')^T S^T`.
pub fn two_time_commutator(
    model: &LinearModel,
    set: &ObservableSet,
    t: f64,
    t_prime: f64,
) -> Result<CMatrix> {
    check_set(model, set)?;
    let s = set.rows();
    let left = s.dot(&model.transfer_matrix(t)?);
    let right = s.dot(&model.transfer_matrix(t_prime)?);
    let k = left.dot(model.omega()).dot(&right.t());
    Ok(k.mapv(|x| C64::new(0.0, model.hbar() * x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Qmfs,
    NotQmfs,
}

/// Location of the largest scaled Krylov residual `(S A^i Omega (A^T)^j S^T)[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub i: usize,
    pub j: usize,
    pub row: usize,
    pub col: usize,
    pub scaled_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QmfsReport {
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub max_scaled_residual: f64,
    pub tolerance: f64,
}

impl QmfsReport {
    pub fn is_qmfs(&self) -> bool {
        self.verdict == Verdict::Qmfs
    }
}

pub fn is_qmfs(model: &LinearModel, set: &ObservableSet) -> Result<QmfsReport> {
    is_qmfs_with_tol(model, set, DEFAULT_QMFS_TOL)
}

/// Exact algebraic QND test.
///
/// Expanding `Phi(t) = sum_i t^i A^i / i!`, the two-time commutator vanishes
/// for all `(t, t')` iff every `S A^i Omega (A^T)^j S^T` vanishes. By
/// Cayley-Hamilton each `A^i` with `i >= 2n` is a combination of lower
/// powers, so `0 <= i, j <= 2n - 1` suffices. Entry `(r, c)` of term `(i, j)`
/// is scaled by `|s_r| |s_c| |A|^(i+j)` before comparison with `tol`.
pub fn is_qmfs_with_tol(model: &LinearModel, set: &ObservableSet, tol: f64) -> Result<QmfsReport> {
    check_set(model, set)?;
    let dim = model.dim();
    let a = model.drift();
    let a_norm = linalg::frobenius(a);
    let s = set.rows();
    let row_norms: Vec<f64> = s
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect();

    // Krylov blocks S A^i, i = 0..2n-1.
    let mut blocks = Vec::with_capacity(dim);
    let mut current = s.to_owned();
    for _ in 0..dim {
        blocks.push(current.clone());
        current = current.dot(a);
    }

    let mut best: Option<Witness> = None;
    let mut max_scaled: f64 = 0.0;
    for (i, left) in blocks.iter().enumerate() {
        let left_omega = left.dot(model.omega());
        for (j, right) in blocks.iter().enumerate() {
            let term = left_omega.dot(&right.t());
            let a_scale = a_norm.powi((i + j) as i32);
            for ((r, c), value) in term.indexed_iter() {
                if *value == 0.0 {
                    continue;
                }
                let scale = row_norms[r] * row_norms[c] * a_scale;
                let scaled = if scale > 0.0 { value.abs() / scale } else { f64::INFINITY };
                if scaled > max_scaled {
                    max_scaled = scaled;
                    best = Some(Witness {
                        i,
                        j,
                        row: r,
                        col: c,
                        scaled_residual: scaled,
                    });
                }
            }
        }
    }

    let verdict = if max_scaled <= tol {
        Verdict::Qmfs
    } else {
        Verdict::NotQmfs
    };
    Ok(QmfsReport {
        verdict,
        witness: if verdict == Verdict::NotQmfs { best } else { None },
        max_scaled_residual: max_scaled,
        tolerance: tol,
    })
}

/// Time-grid diagnostic: largest `|K(t, t')|` over `times x times`.
pub fn max_commutator_on_grid(
    model: &LinearModel,
    set: &ObservableSet,
    times: &[f64],
) -> Result<f64> {
    check_set(model, set)?;
    let s = set.rows();
    let projected: Vec<Array2<f64>> = times
        .iter()
        .map(|&t| model.transfer_matrix(t).map(|phi| s.dot(&phi)))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for left in &projected {
        let lo = left.dot(model.omega());
        for right in &projected {
            let k = lo.dot(&right.t());
            worst = worst.max(model.hbar() * linalg::max_abs(&k));
        }
    }
    Ok(worst)
}

/// Frequency response `c (i w I - A)^{-1} b` from a force coupling `b` to the
/// observable `c . x`.
pub fn transfer_function(model: &LinearModel, c: &Array1<f64>, b: &Array1<f64>, freq: f64) -> Result<C64> {
    let n = model.dim();
    if c.len() != n || b.len() != n {
        return Err(QmfsError::Dimension(format!("need vectors of length {n}")));
    }
    let m = CMatrix::from_shape_fn((n, n), |(i, j)| {
        let diag = if i == j { C64::new(0.0, freq) } else { C64::new(0.0, 0.0) };
        diag - model.drift()[[i, j]]
    });
    let x = linalg::solve_complex(&m, &b.mapv(|v| C64::new(v, 0.0)))?;
    Ok(c.iter().zip(x.iter()).map(|(ci, xi)| xi * *ci).sum())
}

/// Maximum of `|Phi Omega Phi^T - Omega|`.
pub fn symplectic_defect(phi: &Array2<f64>, omega: &Array2<f64>) -> f64 {
    linalg::max_abs(&(phi.dot(omega).dot(&phi.t()) - omega))
}
