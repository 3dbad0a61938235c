//! Two collective spins of length `j` precessing about `z`.
//!
//! With `H = -gamma B0 (J_z + J'_z)` each transverse component rotates,
//! `J_x(t) = J_x cos wt + J_y sin wt`, so for
//! `Q = (J_x + J'_x) / sqrt(hbar j)` the two-time commutator is exactly
//!
//! ```text
//! [Q(t), Q(t')] = i hbar sin(w (t' - t)) (J_z + J'_z) / (hbar j)
//! ```
//!
//! which vanishes on states with `J_z + J'_z = 0` up to corrections of order
//! `1/j`. The unprimed spin is polarized along `+z`, the primed one along
//! `-z`, and the Holstein-Primakoff quadratures are
//! `q = J_x/sqrt(hbar j)`, `p = J_y/sqrt(hbar j)`, `q' = J'_x/sqrt(hbar j)`,
//! `p' = -J'_y/sqrt(hbar j)`.

use std::io::Write;

use ndarray::{Array1, Array2};

use crate::error::{QmfsError, Result};
use crate::fock_oracle;
use crate::linalg::{self, CMatrix, C64};
use crate::model_library;

pub const DEFAULT_SPIN_CAP: usize = 4096;

/// Single-spin matrices `(J_x, J_y, J_z)` in the `|j, m>` basis ordered
/// `m = j, j-1, ..., -j`.
pub fn spin_matrices(j: f64, hbar: f64) -> Result<(CMatrix, CMatrix, CMatrix)> {
    let d = spin_dim(j)?;
    let mut jp = CMatrix::zeros((d, d));
    let mut jz = CMatrix::zeros((d, d));
    for k in 0..d {
        let m = j - k as f64;
        jz[[k, k]] = C64::new(hbar * m, 0.0);
        if k > 0 {
            // J+ |m> = hbar sqrt(j(j+1) - m(m+1)) |m+1>
            jp[[k - 1, k]] = C64::new(hbar * (j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jm = linalg::dagger(&jp);
    let jx = (&jp + &jm) * C64::new(0.5, 0.0);
    let jy = (&jp - &jm) * C64::new(0.0, -0.5);
    Ok((jx, jy, jz))
}

fn spin_dim(j: f64) -> Result<usize> {
    let twice = 2.0 * j;
    if !(twice >= 1.0) || twice.fract() != 0.0 || twice > 1e6 {
        return Err(QmfsError::InvalidInput(format!("2 j must be a positive integer, got j = {j}")));
    }
    Ok(twice as usize + 1)
}

#[derive(Debug, Clone)]
pub struct SpinPair {
    pub j0: f64,
    pub gamma_b0: f64,
    pub hbar: f64,
    pub jx: CMatrix,
    pub jy: CMatrix,
    pub jz: CMatrix,
    pub jx_p: CMatrix,
    pub jy_p: CMatrix,
    pub jz_p: CMatrix,
    /// Diagonal of `H = -gamma B0 (J_z + J'_z)`; the product basis is its eigenbasis.
    pub energies: Array1<f64>,
    single_dim: usize,
}

pub fn build_spin_pair(j0: f64, gamma_b0: f64, hbar: f64) -> Result<SpinPair> {
    build_spin_pair_capped(j0, gamma_b0, hbar, DEFAULT_SPIN_CAP)
}

pub fn build_spin_pair_capped(j0: f64, gamma_b0: f64, hbar: f64, cap: usize) -> Result<SpinPair> {
    let d = spin_dim(j0)?;
    if d * d > cap {
        return Err(QmfsError::DimensionCap { dim: d * d, cap });
    }
    if !(gamma_b0.is_finite() && hbar > 0.0) {
        return Err(QmfsError::InvalidInput("gamma B0 must be finite and hbar positive".into()));
    }
    let (jx, jy, jz) = spin_matrices(j0, hbar)?;
    let id = CMatrix::eye(d);
    let energies = Array1::from_shape_fn(d * d, |idx| {
        let (a, b) = (idx / d, idx % d);
        -gamma_b0 * (jz[[a, a]].re + jz[[b, b]].re)
    });
    Ok(SpinPair {
        j0,
        gamma_b0,
        hbar,
        jx: linalg::kron(&jx, &id),
        jy: linalg::kron(&jy, &id),
        jz: linalg::kron(&jz, &id),
        jx_p: linalg::kron(&id, &jx),
        jy_p: linalg::kron(&id, &jy),
        jz_p: linalg::kron(&id, &jz),
        energies,
        single_dim: d,
    })
}

impl SpinPair {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn single_dim(&self) -> usize {
        self.single_dim
    }

    pub fn hamiltonian(&self) -> CMatrix {
        Array2::from_diag(&self.energies.mapv(|e| C64::new(e, 0.0)))
    }

    fn hp_scale(&self) -> f64 {
        (self.hbar * self.j0).sqrt()
    }

    /// `Q = (J_x + J'_x) / sqrt(hbar j)`.
    pub fn collective_q(&self) -> CMatrix {
        (&self.jx + &self.jx_p) * C64::new(1.0 / self.hp_scale(), 0.0)
    }

    /// `Pi = p - p' = (J_y + J'_y) / sqrt(hbar j)`.
    pub fn collective_pi(&self) -> CMatrix {
        (&self.jy + &self.jy_p) * C64::new(1.0 / self.hp_scale(), 0.0)
    }

    pub fn total_jz(&self) -> CMatrix {
        &self.jz + &self.jz_p
    }

    /// `e^{iHt/hbar} O e^{-iHt/hbar}` using the diagonal `H`.
    pub fn heisenberg(&self, op: &CMatrix, t: f64) -> CMatrix {
        let phase: Vec<C64> = self
            .energies
            .iter()
            .map(|e| C64::from_polar(1.0, e * t / self.hbar))
            .collect();
        Array2::from_shape_fn(op.dim(), |(k, l)| op[[k, l]] * phase[k] * phase[l].conj())
    }

    pub fn evolve_state(&self, psi: &Array1<C64>, t: f64) -> Array1<C64> {
        Array1::from_shape_fn(psi.len(), |k| {
            psi[k] * C64::from_polar(1.0, -self.energies[k] * t / self.hbar)
        })
    }

    /// Product-basis index of `|j, j - a> (x) |j, -j + b>`.
    pub fn excitation_index(&self, a: usize, b: usize) -> usize {
        a * self.single_dim + (self.single_dim - 1 - b)
    }

    /// Basis states with at most `n` spin flips away from the oppositely
    /// polarized reference `|j, j> (x) |j, -j>`.
    pub fn low_excitation_indices(&self, n: usize) -> Vec<usize> {
        let top = self.single_dim - 1;
        let mut idx = Vec::new();
        for a in 0..=n.min(top) {
            for b in 0..=(n - a).min(top) {
                idx.push(self.excitation_index(a, b));
            }
        }
        idx.sort_unstable();
        idx
    }

    /// Oppositely polarized reference rotated by `theta` about `y` on the
    /// unprimed spin and by `-theta` on the primed one, so both transverse
    /// `x` components point the same way.
    pub fn displaced_reference(&self, theta: f64) -> Result<Array1<C64>> {
        let d = self.single_dim;
        let (_, jy, _) = spin_matrices(self.j0, self.hbar)?;
        let mut up = Array1::zeros(d);
        up[0] = C64::new(1.0, 0.0);
        let mut down = Array1::zeros(d);
        down[d - 1] = C64::new(1.0, 0.0);
        let up = rotate(&jy, theta, self.hbar, &up)?;
        let down = rotate(&jy, -theta, self.hbar, &down)?;
        Ok(Array1::from_shape_fn(d * d, |idx| up[idx / d] * down[idx % d]))
    }
}

/// `exp(-i theta J / hbar) psi` for a Hermitian generator `J`.
fn rotate(generator: &CMatrix, theta: f64, hbar: f64, psi: &Array1<C64>) -> Result<Array1<C64>> {
    if theta == 0.0 {
        return Ok(psi.clone());
    }
    let (vals, vecs) = linalg::eigh(generator)?;
    let coeffs = linalg::dagger(&vecs).dot(psi);
    let phased = Array1::from_shape_fn(coeffs.len(), |k| {
        coeffs[k] * C64::from_polar(1.0, -theta * vals[k] / hbar)
    });
    Ok(vecs.dot(&phased))
}

fn expectation(op: &CMatrix, psi: &Array1<C64>) -> f64 {
    psi.mapv(|z| z.conj()).dot(&op.dot(psi)).re
}

/// `|[Q(t), Q(t')] - i hbar sin(w (t' - t)) (J_z + J'_z)/(hbar j)|_max`,
/// with `w = gamma B0`.
pub fn qmfs_commutator_identity(pair: &SpinPair, t: f64, t_prime: f64) -> f64 {
    let q = pair.collective_q();
    let lhs = linalg::commutator(&pair.heisenberg(&q, t), &pair.heisenberg(&q, t_prime));
    let rhs = closed_form_commutator(pair, t, t_prime);
    linalg::max_abs_c(&(lhs - rhs))
}

pub fn closed_form_commutator(pair: &SpinPair, t: f64, t_prime: f64) -> CMatrix {
    let s = (pair.gamma_b0 * (t_prime - t)).sin();
    pair.total_jz() * C64::new(0.0, s / pair.j0)
}

/// Spectral norm of `[Q(t), Q(t')]` on the `<= n`-flip subspace, in units of `hbar`.
pub fn low_excitation_norm(pair: &SpinPair, n: usize, t: f64, t_prime: f64) -> Result<f64> {
    let idx = pair.low_excitation_indices(n);
    let q = pair.collective_q();
    let block = fock_oracle::guarded_commutator(&pair.heisenberg(&q, t), &pair.heisenberg(&q, t_prime), &idx);
    Ok(linalg::spectral_norm(block.view())? / pair.hbar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpComparison {
    pub times: Vec<f64>,
    pub exact_mean: Vec<f64>,
    pub exact_var: Vec<f64>,
    pub model_mean: Vec<f64>,
    pub model_var: Vec<f64>,
    /// Largest of the relative mean and variance mismatches.
    pub deviation: f64,
    pub theta: f64,
}

/// Exact `<Q(t)>`, `Var Q(t)` for a displaced polarized state against the
/// Gaussian oscillator-pair model over one Larmor period.
///
/// `displacement` is the Holstein-Primakoff coherent displacement of each of
/// `q` and `q'`; the spin rotation angle satisfies
/// `2 sqrt(hbar j) sin(theta/2) = displacement`. Mean errors are scaled by
/// `max(max_t |<Q>_model|, sqrt(Var_model))`, variance errors by `Var_model`.
pub fn hp_agreement(pair: &SpinPair, displacement: f64, n_times: usize) -> Result<HpComparison> {
    if pair.gamma_b0 <= 0.0 {
        return Err(QmfsError::InvalidInput("Larmor frequency must be positive".into()));
    }
    let ratio = displacement / (2.0 * pair.hp_scale());
    if !(ratio.abs() <= 1.0) {
        return Err(QmfsError::InvalidInput(format!(
            "displacement {displacement} exceeds the spin length"
        )));
    }
    let theta = 2.0 * ratio.asin();
    let psi0 = pair.displaced_reference(theta)?;
    let q = pair.collective_q();
    let q2 = q.dot(&q);

    let bundle = model_library::spin_pair_hp(pair.j0, pair.gamma_b0, pair.hbar)?;
    let model = &bundle.model;
    let q_row = bundle
        .observable_row("Q")
        .ok_or_else(|| QmfsError::InvalidInput("model lacks Q".into()))?;
    let mut mean0 = Array1::zeros(4);
    mean0[0] = displacement;
    mean0[2] = displacement;
    // Coherent states of the HP model: vacuum covariance (hbar/2) diag(1/(m w), m w), m w = 1.
    let cov0 = Array2::eye(4) * (pair.hbar / 2.0);

    let period = 2.0 * std::f64::consts::PI / pair.gamma_b0;
    let n_times = n_times.max(2);
    let mut out = HpComparison {
        times: Vec::with_capacity(n_times),
        exact_mean: Vec::new(),
        exact_var: Vec::new(),
        model_mean: Vec::new(),
        model_var: Vec::new(),
        deviation: 0.0,
        theta,
    };
    for k in 0..n_times {
        let t = period * k as f64 / (n_times - 1) as f64;
        let psi = pair.evolve_state(&psi0, t);
        let m = expectation(&q, &psi);
        let v = expectation(&q2, &psi) - m * m;
        let phi = model.transfer_matrix(t)?;
        let s = phi.t().dot(&q_row);
        out.times.push(t);
        out.exact_mean.push(m);
        out.exact_var.push(v);
        out.model_mean.push(s.dot(&mean0));
        out.model_var.push(s.dot(&cov0.dot(&s)));
    }
    let amp = out.model_mean.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    for k in 0..n_times {
        let scale = amp.max(out.model_var[k].sqrt());
        let dm = (out.exact_mean[k] - out.model_mean[k]).abs() / scale;
        let dv = (out.exact_var[k] - out.model_var[k]).abs() / out.model_var[k];
        out.deviation = out.deviation.max(dm).max(dv);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub j0: f64,
    pub residual_norm: f64,
    pub low_excitation_norm: f64,
    pub hp_deviation: f64,
}

/// Identity residual, low-excitation commutator norm and HP deviation per `j`.
pub fn sweep(
    j_values: &[f64],
    gamma_b0: f64,
    hbar: f64,
    displacement: f64,
    times: (f64, f64),
    excitations: usize,
) -> Result<Vec<SweepRow>> {
    j_values
        .iter()
        .map(|&j0| {
            let pair = build_spin_pair(j0, gamma_b0, hbar)?;
            Ok(SweepRow {
                j0,
                residual_norm: qmfs_commutator_identity(&pair, times.0, times.1),
                low_excitation_norm: low_excitation_norm(&pair, excitations, times.0, times.1)?,
                hp_deviation: hp_agreement(&pair, displacement, 65)?.deviation,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "J0,residual_norm,low_excitation_norm,hp_deviation")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.j0, r.residual_norm, r.low_excitation_norm, r.hp_deviation)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_half_is_pauli() {
        let (jx, jy, jz) = spin_matrices(0.5, 1.0).unwrap();
        assert!((jx[[0, 1]] - C64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((jy[[0, 1]] - C64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((jz[[1, 1]] - C64::new(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn angular_momentum_algebra() {
        for j in [0.5, 1.0, 2.5, 4.0] {
            let hbar = 0.8;
            let (jx, jy, jz) = spin_matrices(j, hbar).unwrap();
            let c = linalg::commutator(&jx, &jy);
            let expected = &jz * C64::new(0.0, hbar);
            assert!(linalg::max_abs_c(&(c - expected)) < 1e-13);
        }
    }

    #[test]
    fn spectrum_is_sum_of_zeeman_levels() {
        let pair = build_spin_pair(1.5, 2.0, 1.0).unwrap();
        let mut e: Vec<f64> = pair.energies.to_vec();
        e.sort_by(f64::total_cmp);
        let mut expected = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                expected.push(-2.0 * ((1.5 - a as f64) + (1.5 - b as f64)));
            }
        }
        expected.sort_by(f64::total_cmp);
        assert_eq!(e, expected);
    }

    #[test]
    fn opposite_polarization_has_zero_total_jz() {
        let pair = build_spin_pair(3.0, 1.0, 1.0).unwrap();
        let psi = pair.displaced_reference(0.0).unwrap();
        assert_eq!(expectation(&pair.total_jz(), &psi), 0.0);
    }

    #[test]
    fn rotation_direction() {
        let pair = build_spin_pair(2.0, 1.0, 1.0).unwrap();
        let psi = pair.displaced_reference(0.3).unwrap();
        let sx = 2.0 * 0.3f64.sin();
        assert!((expectation(&pair.jx, &psi) - sx).abs() < 1e-12);
        assert!((expectation(&pair.jx_p, &psi) - sx).abs() < 1e-12);
        assert!((expectation(&pair.jz, &psi) - 2.0 * 0.3f64.cos()).abs() < 1e-12);
        assert!((expectation(&pair.jz_p, &psi) + 2.0 * 0.3f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn equal_times_commute() {
        let pair = build_spin_pair(2.0, 1.3, 1.0).unwrap();
        let q = pair.heisenberg(&pair.collective_q(), 0.7);
        assert_eq!(linalg::max_abs_c(&linalg::commutator(&q, &q)), 0.0);
    }

    #[test]
    fn cap_enforced() {
        assert!(matches!(
            build_spin_pair(32.0, 1.0, 1.0),
            Err(QmfsError::DimensionCap { dim: 4225, .. })
        ));
        assert!(build_spin_pair(0.75, 1.0, 1.0).is_err());
    }

    #[test]
    fn low_excitation_indices_count() {
        let pair = build_spin_pair(2.0, 1.0, 1.0).unwrap();
        assert_eq!(pair.low_excitation_indices(2).len(), 6);
        assert_eq!(pair.excitation_index(0, 0), 4);
    }
}
