//! Truncated Fock-space brute force.
//!
//! Builds quadrature operators on `N` levels per mode, assembles the general
//! Koopman Hamiltonian
//!
//! ```text
//! H = 1/2 sum_j (P_j f_j + f_j P_j + Phi_j g_j + g_j Phi_j) + h
//! ```
//!
//! with polynomial `f, g, h` in the commuting variables `(Q, Pi)`, evolves
//! operators exactly by dense diagonalization, and measures two-time
//! commutators on a guarded subspace that excludes the truncation boundary.
//!
//! Mode layout for `M` pairs: modes `0..M` carry `(Q_j, P_j)`, modes
//! `M..2M` carry `(Phi_j, Pi_j)`. Mode 0 is the most significant tensor
//! factor.

use ndarray::{Array1, Array2, Axis};

use crate::error::{QmfsError, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::poly::{Poly, MAX_DEGREE};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSpec {
    pub n_levels: usize,
    pub n_modes: usize,
    /// Levels of total excitation removed by the default guard.
    pub guard_levels: usize,
    /// Largest tolerated top-level population for a trusted evolution.
    pub guard_fraction: f64,
    pub cap: usize,
}

impl TruncationSpec {
    pub fn new(n_levels: usize, n_modes: usize) -> Result<Self> {
        let spec = Self {
            n_levels,
            n_modes,
            guard_levels: 2,
            guard_fraction: 1e-6,
            cap: DEFAULT_DIMENSION_CAP,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 2 || self.n_modes == 0 {
            return Err(QmfsError::InvalidInput(format!(
                "need at least 2 levels and 1 mode, got {} / {}",
                self.n_levels, self.n_modes
            )));
        }
        let dim = self.dim_checked().ok_or(QmfsError::DimensionCap {
            dim: usize::MAX,
            cap: self.cap,
        })?;
        if dim > self.cap {
            return Err(QmfsError::DimensionCap { dim, cap: self.cap });
        }
        Ok(())
    }

    fn dim_checked(&self) -> Option<usize> {
        (0..self.n_modes).try_fold(1usize, |acc, _| acc.checked_mul(self.n_levels))
    }

    pub fn dim(&self) -> usize {
        self.n_levels.pow(self.n_modes as u32)
    }

    /// Occupation numbers of basis state `index`.
    pub fn occupations(&self, index: usize) -> Vec<usize> {
        let mut occ = vec![0; self.n_modes];
        let mut rest = index;
        for k in (0..self.n_modes).rev() {
            occ[k] = rest % self.n_levels;
            rest /= self.n_levels;
        }
        occ
    }

    pub fn index_of(&self, occ: &[usize]) -> usize {
        occ.iter().fold(0, |acc, &n| acc * self.n_levels + n)
    }
}

/// Subspace on which commutator residuals are reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Guard {
    /// Basis states with total excitation `<= N - 1 - levels`.
    TopLevels(usize),
    /// Basis states with total excitation `<= max_total`.
    LowLying(usize),
}

impl Guard {
    pub fn indices(&self, spec: &TruncationSpec) -> Vec<usize> {
        let limit = match *self {
            Guard::TopLevels(g) => (spec.n_levels - 1).saturating_sub(g),
            Guard::LowLying(m) => m,
        };
        (0..spec.dim())
            .filter(|&i| spec.occupations(i).iter().sum::<usize>() <= limit)
            .collect()
    }

    pub fn describe(&self) -> String {
        match *self {
            Guard::TopLevels(g) => format!("total excitation <= N-1-{g}"),
            Guard::LowLying(m) => format!("total excitation <= {m}"),
        }
    }
}

/// Quadrature operators on a truncated Fock space with length scale
/// `sqrt(hbar / (mass omega))`.
#[derive(Debug, Clone)]
pub struct FockSpace {
    pub spec: TruncationSpec,
    pub hbar: f64,
    pub mass: f64,
    pub omega: f64,
}

impl FockSpace {
    pub fn new(spec: TruncationSpec, hbar: f64, mass: f64, omega: f64) -> Result<Self> {
        spec.validate()?;
        if !(hbar > 0.0 && mass > 0.0 && omega > 0.0) {
            return Err(QmfsError::InvalidInput(
                "hbar, mass scale and frequency scale must be positive".into(),
            ));
        }
        Ok(Self { spec, hbar, mass, omega })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Single-mode annihilation operator on `N` levels.
    pub fn ladder(n_levels: usize) -> CMatrix {
        let mut a = CMatrix::zeros((n_levels, n_levels));
        for n in 1..n_levels {
            a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
        }
        a
    }

    fn embed(&self, single: &CMatrix, mode: usize) -> CMatrix {
        let n = self.spec.n_levels;
        let id = CMatrix::eye(n);
        let mut out = if mode == 0 { single.clone() } else { id.clone() };
        for k in 1..self.spec.n_modes {
            out = linalg::kron(&out, if k == mode { single } else { &id });
        }
        out
    }

    pub fn annihilation(&self, mode: usize) -> CMatrix {
        self.embed(&Self::ladder(self.spec.n_levels), mode)
    }

    /// `(q, p)` with `q = sqrt(hbar/2 m w)(a + a^dag)`, `p = i sqrt(hbar m w/2)(a^dag - a)`.
    pub fn single_mode_quadratures(&self) -> (CMatrix, CMatrix) {
        let a = Self::ladder(self.spec.n_levels);
        let ad = linalg::dagger(&a);
        let xq = (self.hbar / (2.0 * self.mass * self.omega)).sqrt();
        let xp = (self.hbar * self.mass * self.omega / 2.0).sqrt();
        let q = (&a + &ad) * C64::new(xq, 0.0);
        let p = (&ad - &a) * C64::new(0.0, xp);
        (q, p)
    }

    pub fn quadratures(&self, mode: usize) -> (CMatrix, CMatrix) {
        let (q, p) = self.single_mode_quadratures();
        (self.embed(&q, mode), self.embed(&p, mode))
    }

    /// Operator `s . x` for a phase-space row in `(q1, p1, q2, p2, ...)` order.
    pub fn linear_observable(&self, s: &Array1<f64>) -> Result<CMatrix> {
        if s.len() != 2 * self.spec.n_modes {
            return Err(QmfsError::Dimension(format!("observable row has length {}", s.len())));
        }
        let mut out = CMatrix::zeros((self.dim(), self.dim()));
        for mode in 0..self.spec.n_modes {
            let (cq, cp) = (s[2 * mode], s[2 * mode + 1]);
            if cq == 0.0 && cp == 0.0 {
                continue;
            }
            let (q, p) = self.quadratures(mode);
            out = out + q * C64::new(cq, 0.0) + p * C64::new(cp, 0.0);
        }
        Ok(out)
    }

    /// `H = x^T G x / 2` in symmetric operator form.
    pub fn quadratic_hamiltonian(&self, g: &Array2<f64>) -> Result<CMatrix> {
        let n = 2 * self.spec.n_modes;
        if g.dim() != (n, n) {
            return Err(QmfsError::Dimension(format!("G is {:?}", g.dim())));
        }
        let ops: Vec<CMatrix> = (0..self.spec.n_modes)
            .flat_map(|m| {
                let (q, p) = self.quadratures(m);
                [q, p]
            })
            .collect();
        let mut h = CMatrix::zeros((self.dim(), self.dim()));
        for i in 0..n {
            for j in 0..n {
                if g[[i, j]] != 0.0 {
                    h = h + ops[i].dot(&ops[j]) * C64::new(0.5 * g[[i, j]], 0.0);
                }
            }
        }
        Ok(symmetrize_hermitian(&h))
    }

    /// Product coherent state with amplitudes `alphas`, normalized after truncation.
    pub fn coherent_state(&self, alphas: &[C64]) -> Result<Array1<C64>> {
        if alphas.len() != self.spec.n_modes {
            return Err(QmfsError::Dimension("one amplitude per mode required".into()));
        }
        let n = self.spec.n_levels;
        let factors: Vec<Vec<C64>> = alphas
            .iter()
            .map(|alpha| {
                let mut c = Vec::with_capacity(n);
                let mut term = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
                for k in 0..n {
                    if k > 0 {
                        term = term * alpha / (k as f64).sqrt();
                    }
                    c.push(term);
                }
                c
            })
            .collect();
        let mut psi = Array1::from_shape_fn(self.dim(), |i| {
            self.spec
                .occupations(i)
                .iter()
                .zip(&factors)
                .fold(C64::new(1.0, 0.0), |acc, (&k, f)| acc * f[k])
        });
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        psi.mapv_inplace(|z| z / norm);
        Ok(psi)
    }

    /// Total population in basis states with any mode on its top level.
    pub fn top_level_population(&self, psi: &Array1<C64>) -> f64 {
        let top = self.spec.n_levels - 1;
        psi.iter()
            .enumerate()
            .filter(|(i, _)| self.spec.occupations(*i).contains(&top))
            .map(|(_, z)| z.norm_sqr())
            .sum()
    }
}

fn symmetrize_hermitian(h: &CMatrix) -> CMatrix {
    (h + &linalg::dagger(h)) * C64::new(0.5, 0.0)
}

/// Koopman Hamiltonian data: `M` pairs with polynomial `f_j`, `g_j`, `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyKoopman {
    pub pairs: usize,
    pub f: Vec<Poly>,
    pub g: Vec<Poly>,
    pub h: Poly,
    pub hbar: f64,
    pub mass: f64,
    pub omega: f64,
}

impl PolyKoopman {
    pub fn new(f: Vec<Poly>, g: Vec<Poly>, h: Poly, hbar: f64) -> Result<Self> {
        let pk = Self {
            pairs: f.len(),
            f,
            g,
            h,
            hbar,
            mass: 1.0,
            omega: 1.0,
        };
        pk.validate()?;
        Ok(pk)
    }

    /// `f = Pi/m`, `g = m w^2 Q`, `h = 0`: the oscillator pair
    /// `H = P Pi/m + m w^2 Phi Q`.
    pub fn harmonic(m: f64, omega: f64, hbar: f64) -> Result<Self> {
        use crate::poly::Monomial;
        let mut pk = Self::new(
            vec![Poly::new(vec![Monomial::single(0, 1, 1.0 / m)])],
            vec![Poly::new(vec![Monomial::single(1, 0, m * omega * omega)])],
            Poly::zero(),
            hbar,
        )?;
        pk.mass = m;
        pk.omega = omega;
        Ok(pk)
    }

    /// `f_j = dH~/dPi_j`, `g_j = dH~/dQ_j` for a classical Hamiltonian `H~(Q, Pi)`.
    pub fn from_classical_hamiltonian(pairs: usize, h_tilde: &Poly, hbar: f64) -> Result<Self> {
        let f = (0..pairs).map(|j| h_tilde.d_dpi(j)).collect();
        let g = (0..pairs).map(|j| h_tilde.d_dq(j)).collect();
        Self::new(f, g, Poly::zero(), hbar)
    }

    pub fn with_scales(mut self, mass: f64, omega: f64) -> Self {
        self.mass = mass;
        self.omega = omega;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.pairs > 2 {
            return Err(QmfsError::InvalidInput(format!(
                "pair count must be 1 or 2, got {}",
                self.pairs
            )));
        }
        if self.g.len() != self.pairs {
            return Err(QmfsError::Dimension("f and g must have one entry per pair".into()));
        }
        if !(self.hbar > 0.0) {
            return Err(QmfsError::InvalidInput("hbar must be positive".into()));
        }
        for p in self.f.iter().chain(&self.g).chain(std::iter::once(&self.h)) {
            p.validate(self.pairs, MAX_DEGREE)?;
        }
        Ok(())
    }

    pub fn is_time_dependent(&self) -> bool {
        self.f.iter().chain(&self.g).chain(std::iter::once(&self.h)).any(Poly::is_time_dependent)
    }

    pub fn n_modes(&self) -> usize {
        2 * self.pairs
    }

    pub fn space(&self, n_levels: usize) -> Result<FockSpace> {
        FockSpace::new(TruncationSpec::new(n_levels, self.n_modes())?, self.hbar, self.mass, self.omega)
    }
}

/// Named QMFS-variable operators for a Koopman space.
pub struct KoopmanOperators {
    pub q: Vec<CMatrix>,
    pub p: Vec<CMatrix>,
    pub phi: Vec<CMatrix>,
    pub pi: Vec<CMatrix>,
}

pub fn koopman_operators(space: &FockSpace, pairs: usize) -> Result<KoopmanOperators> {
    if space.spec.n_modes != 2 * pairs {
        return Err(QmfsError::Dimension(format!(
            "{} modes cannot hold {pairs} pairs",
            space.spec.n_modes
        )));
    }
    let mut ops = KoopmanOperators { q: vec![], p: vec![], phi: vec![], pi: vec![] };
    for j in 0..pairs {
        let (q, p) = space.quadratures(j);
        let (phi, pi) = space.quadratures(pairs + j);
        ops.q.push(q);
        ops.p.push(p);
        ops.phi.push(phi);
        ops.pi.push(pi);
    }
    Ok(ops)
}

fn matrix_power(m: &CMatrix, k: u32, cache: &mut Vec<CMatrix>) -> CMatrix {
    if cache.is_empty() {
        cache.push(CMatrix::eye(m.nrows()));
    }
    while cache.len() <= k as usize {
        let next = cache.last().unwrap().dot(m);
        cache.push(next);
    }
    cache[k as usize].clone()
}

/// Operator for a polynomial in the commuting `(Q, Pi)` at time `t`.
pub fn poly_operator(poly: &Poly, ops: &KoopmanOperators, t: f64) -> CMatrix {
    let dim = ops.q[0].nrows();
    let pairs = ops.q.len();
    let mut q_cache: Vec<Vec<CMatrix>> = vec![Vec::new(); pairs];
    let mut pi_cache: Vec<Vec<CMatrix>> = vec![Vec::new(); pairs];
    let mut out = CMatrix::zeros((dim, dim));
    for m in &poly.terms {
        let c = m.coef * m.time.value(t);
        if c == 0.0 {
            continue;
        }
        let mut term = CMatrix::eye(dim);
        for j in 0..pairs {
            if m.q_pows[j] > 0 {
                term = term.dot(&matrix_power(&ops.q[j], m.q_pows[j], &mut q_cache[j]));
            }
            if m.pi_pows[j] > 0 {
                term = term.dot(&matrix_power(&ops.pi[j], m.pi_pows[j], &mut pi_cache[j]));
            }
        }
        // Factors act on different modes and commute; symmetrize against
        // rounding in the truncated products.
        out = out + symmetrize_hermitian(&term) * C64::new(c, 0.0);
    }
    out
}

/// Dense Koopman Hamiltonian at time `t`.
pub fn build_koopman_hamiltonian_at(pk: &PolyKoopman, space: &FockSpace, t: f64) -> Result<CMatrix> {
    pk.validate()?;
    let ops = koopman_operators(space, pk.pairs)?;
    let dim = space.dim();
    let mut h = poly_operator(&pk.h, &ops, t);
    let half = C64::new(0.5, 0.0);
    for j in 0..pk.pairs {
        if !pk.f[j].is_zero() {
            let f = poly_operator(&pk.f[j], &ops, t);
            h = h + (ops.p[j].dot(&f) + f.dot(&ops.p[j])) * half;
        }
        if !pk.g[j].is_zero() {
            let g = poly_operator(&pk.g[j], &ops, t);
            h = h + (ops.phi[j].dot(&g) + g.dot(&ops.phi[j])) * half;
        }
    }
    debug_assert_eq!(h.nrows(), dim);
    let scale = linalg::max_abs_c(&h).max(1.0);
    let deviation = linalg::hermitian_deviation(&h);
    if deviation > 1e-12 * scale {
        return Err(QmfsError::NotHermitian { deviation });
    }
    Ok(symmetrize_hermitian(&h))
}

pub fn build_koopman_hamiltonian(pk: &PolyKoopman, space: &FockSpace) -> Result<CMatrix> {
    build_koopman_hamiltonian_at(pk, space, 0.0)
}

/// Exact propagator of a time-independent Hamiltonian.
#[derive(Debug, Clone)]
pub struct Propagator {
    energies: Array1<f64>,
    vectors: CMatrix,
    vectors_dag: CMatrix,
    hbar: f64,
}

impl Propagator {
    pub fn new(h: &CMatrix, hbar: f64) -> Result<Self> {
        let deviation = linalg::hermitian_deviation(h);
        if deviation > 1e-10 * linalg::max_abs_c(h).max(1.0) {
            return Err(QmfsError::NotHermitian { deviation });
        }
        let (energies, vectors) = linalg::eigh(h)?;
        let vectors_dag = linalg::dagger(&vectors);
        Ok(Self { energies, vectors, vectors_dag, hbar })
    }

    pub fn energies(&self) -> &Array1<f64> {
        &self.energies
    }

    pub fn to_eigenbasis(&self, op: &CMatrix) -> CMatrix {
        self.vectors_dag.dot(op).dot(&self.vectors)
    }

    /// `O(t) = e^{iHt/hbar} O e^{-iHt/hbar}` from an eigenbasis operator.
    pub fn heisenberg_from_eigenbasis(&self, op_eig: &CMatrix, t: f64) -> CMatrix {
        let phases: Vec<C64> = self
            .energies
            .iter()
            .map(|e| C64::from_polar(1.0, e * t / self.hbar))
            .collect();
        let rotated = Array2::from_shape_fn(op_eig.dim(), |(k, l)| {
            op_eig[[k, l]] * phases[k] * phases[l].conj()
        });
        self.vectors.dot(&rotated).dot(&self.vectors_dag)
    }

    pub fn heisenberg(&self, op: &CMatrix, t: f64) -> CMatrix {
        if t == 0.0 {
            return op.clone();
        }
        self.heisenberg_from_eigenbasis(&self.to_eigenbasis(op), t)
    }

    /// `e^{-iHt/hbar} psi`.
    pub fn evolve_state(&self, psi: &Array1<C64>, t: f64) -> Array1<C64> {
        let coeffs = self.vectors_dag.dot(psi);
        let phased = Array1::from_shape_fn(coeffs.len(), |k| {
            coeffs[k] * C64::from_polar(1.0, -self.energies[k] * t / self.hbar)
        });
        self.vectors.dot(&phased)
    }
}

/// Unitary of a time-dependent Koopman Hamiltonian by midpoint exponentials.
pub fn time_ordered_unitary(pk: &PolyKoopman, space: &FockSpace, t: f64, steps: usize) -> Result<CMatrix> {
    let dim = space.dim();
    let mut u = CMatrix::eye(dim);
    if t == 0.0 {
        return Ok(u);
    }
    let steps = steps.max(1);
    let dt = t / steps as f64;
    for k in 0..steps {
        let h = build_koopman_hamiltonian_at(pk, space, (k as f64 + 0.5) * dt)?;
        let (e, v) = linalg::eigh(&h)?;
        let phase = Array1::from_shape_fn(dim, |i| C64::from_polar(1.0, -e[i] * dt / pk.hbar));
        let step_u = (&v * &phase.view().insert_axis(Axis(0))).dot(&linalg::dagger(&v));
        u = step_u.dot(&u);
    }
    Ok(u)
}

#[derive(Debug, Clone)]
pub struct HeisenbergOp {
    pub op: CMatrix,
    pub top_population: f64,
    pub trusted: bool,
}

/// Heisenberg-evolved operator, flagged untrusted when any test state leaks
/// more than `guard_fraction` into the top truncation level.
pub fn heisenberg_op(
    prop: &Propagator,
    space: &FockSpace,
    op: &CMatrix,
    t: f64,
    test_states: &[Array1<C64>],
) -> HeisenbergOp {
    let top_population = test_states
        .iter()
        .map(|psi| space.top_level_population(&prop.evolve_state(psi, t)))
        .fold(0.0, f64::max);
    HeisenbergOp {
        op: prop.heisenberg(op, t),
        top_population,
        trusted: top_population <= space.spec.guard_fraction,
    }
}

/// `P [X, Y] P` restricted to the guard indices.
pub fn guarded_commutator(x: &CMatrix, y: &CMatrix, guard: &[usize]) -> CMatrix {
    let xr = x.select(Axis(0), guard);
    let xc = x.select(Axis(1), guard);
    let yr = y.select(Axis(0), guard);
    let yc = y.select(Axis(1), guard);
    xr.dot(&yc) - yr.dot(&xc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `max |P [O_j(t), O_k(t')] P| / hbar` (spectral norm).
    pub max_residual: f64,
    /// `(j, k, t, t')` of the maximum.
    pub worst: (usize, usize, f64, f64),
    pub guard: String,
    pub guard_dim: usize,
}

/// Largest guarded two-time commutator over all operator pairs and all
/// `(t, t')` in `times x times`.
///
/// `|[X, Y]| = |[Y, X]|`, so each unordered pair is evaluated once, and the
/// Frobenius norm bounds the spectral norm from above, which lets most
/// candidates skip the eigenvalue solve.
pub fn commutator_residual(
    prop: &Propagator,
    space: &FockSpace,
    ops: &[CMatrix],
    times: &[f64],
    guard: Guard,
) -> Result<ResidualReport> {
    let idx = guard.indices(&space.spec);
    let eig_ops: Vec<CMatrix> = ops.iter().map(|o| prop.to_eigenbasis(o)).collect();
    // (time index, op index, guarded rows, guarded columns)
    let mut evolved = Vec::with_capacity(times.len() * ops.len());
    for (a, &t) in times.iter().enumerate() {
        for (j, o) in eig_ops.iter().enumerate() {
            let full = prop.heisenberg_from_eigenbasis(o, t);
            evolved.push((a, j, full.select(Axis(0), &idx), full.select(Axis(1), &idx)));
        }
    }
    let mut report = ResidualReport {
        max_residual: 0.0,
        worst: (0, 0, 0.0, 0.0),
        guard: guard.describe(),
        guard_dim: idx.len(),
    };
    for (u, (a, j, xr, xc)) in evolved.iter().enumerate() {
        for (b, k, yr, yc) in &evolved[u + 1..] {
            let c = xr.dot(yc) - yr.dot(xc);
            let frob = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / space.hbar;
            if frob <= report.max_residual {
                continue;
            }
            let norm = linalg::spectral_norm(c.view())? / space.hbar;
            if norm > report.max_residual {
                report.max_residual = norm;
                report.worst = (*j, *k, times[*a], times[*b]);
            }
        }
    }
    Ok(report)
}

/// `P [X(t), Y(t')] P` on a guard, for comparison with closed forms.
pub fn guarded_two_time_commutator(
    prop: &Propagator,
    x: &CMatrix,
    y: &CMatrix,
    t: f64,
    t_prime: f64,
    guard: &[usize],
) -> CMatrix {
    guarded_commutator(&prop.heisenberg(x, t), &prop.heisenberg(y, t_prime), guard)
}

pub fn expectation(op: &CMatrix, psi: &Array1<C64>) -> C64 {
    psi.mapv(|z| z.conj()).dot(&op.dot(psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn canonical_commutator_away_from_top_level() {
        let space = FockSpace::new(TruncationSpec::new(12, 1).unwrap(), 0.7, 1.3, 2.0).unwrap();
        let (q, p) = space.quadratures(0);
        let comm = linalg::commutator(&q, &p);
        for i in 0..11 {
            for j in 0..11 {
                let expected = if i == j { C64::new(0.0, 0.7) } else { c(0.0) };
                assert!((comm[[i, j]] - expected).norm() < 1e-13, "{i} {j}");
            }
        }
        // The defect lives entirely on the top level.
        assert!((comm[[11, 11]] - C64::new(0.0, 0.7 * (1.0 - 12.0))).norm() < 1e-12);
    }

    #[test]
    fn vacuum_position_variance() {
        let space = FockSpace::new(TruncationSpec::new(6, 1).unwrap(), 1.0, 1.0, 3.0).unwrap();
        let (q, _) = space.quadratures(0);
        let q2 = q.dot(&q);
        assert!((q2[[0, 0]].re - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn two_levels_are_pauli_matrices() {
        let space = FockSpace::new(TruncationSpec::new(2, 1).unwrap(), 2.0, 1.0, 1.0).unwrap();
        let (q, p) = space.quadratures(0);
        // q = sigma_x, p = sigma_y for hbar = 2, m = w = 1.
        assert!((q[[0, 1]] - c(1.0)).norm() < 1e-15 && (q[[1, 0]] - c(1.0)).norm() < 1e-15);
        assert!((p[[0, 1]] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((p[[1, 0]] - C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn dimension_cap() {
        assert!(matches!(
            TruncationSpec::new(9, 4),
            Err(QmfsError::DimensionCap { dim: 6561, cap: 4096 })
        ));
        assert!(TruncationSpec::new(1, 1).is_err());
    }

    #[test]
    fn zero_koopman_is_zero() {
        let pk = PolyKoopman::new(vec![Poly::zero()], vec![Poly::zero()], Poly::zero(), 1.0).unwrap();
        let h = build_koopman_hamiltonian(&pk, &pk.space(4).unwrap()).unwrap();
        assert_eq!(linalg::max_abs_c(&h), 0.0);
    }

    #[test]
    fn harmonic_koopman_matches_pair_hamiltonian() {
        let (m, w) = (1.0, 1.0);
        let pk = PolyKoopman::harmonic(m, w, 1.0).unwrap();
        let space = pk.space(8).unwrap();
        let h = build_koopman_hamiltonian(&pk, &space).unwrap();
        let ops = koopman_operators(&space, 1).unwrap();
        let expected = ops.p[0].dot(&ops.pi[0]) * c(1.0 / m) + ops.phi[0].dot(&ops.q[0]) * c(m * w * w);
        assert!(linalg::max_abs_c(&(h - expected)) < 1e-12);
    }

    #[test]
    fn nonlinear_generator_reproduces_flow_field() {
        // [Q, H] = i hbar f(Q, Pi) for f = Pi + 0.1 Q^2.
        let f = Poly::new(vec![Monomial::single(0, 1, 1.0), Monomial::single(2, 0, 0.1)]);
        let g = Poly::new(vec![Monomial::single(1, 0, 1.0)]);
        let pk = PolyKoopman::new(vec![f.clone()], vec![g], Poly::zero(), 1.0).unwrap();
        let space = pk.space(14).unwrap();
        let h = build_koopman_hamiltonian(&pk, &space).unwrap();
        assert!(linalg::hermitian_deviation(&h) < 1e-12);
        let ops = koopman_operators(&space, 1).unwrap();
        let lhs = linalg::commutator(&ops.q[0], &h);
        let rhs = poly_operator(&f, &ops, 0.0) * C64::new(0.0, 1.0);
        let guard = Guard::LowLying(8).indices(&space.spec);
        let diff = (&lhs - &rhs).select(Axis(0), &guard).select(Axis(1), &guard);
        assert!(linalg::max_abs_c(&diff) < 1e-12);
    }

    #[test]
    fn heisenberg_at_zero_is_identity_map() {
        let pk = PolyKoopman::harmonic(1.0, 1.0, 1.0).unwrap();
        let space = pk.space(6).unwrap();
        let prop = Propagator::new(&build_koopman_hamiltonian(&pk, &space).unwrap(), 1.0).unwrap();
        let ops = koopman_operators(&space, 1).unwrap();
        assert_eq!(prop.heisenberg(&ops.q[0], 0.0), ops.q[0]);
    }

    #[test]
    fn untrusted_flag_on_leaking_state() {
        let pk = PolyKoopman::harmonic(1.0, 1.0, 1.0).unwrap();
        let space = pk.space(6).unwrap();
        let prop = Propagator::new(&build_koopman_hamiltonian(&pk, &space).unwrap(), 1.0).unwrap();
        let ops = koopman_operators(&space, 1).unwrap();
        let vac = space.coherent_state(&[c(0.0), c(0.0)]).unwrap();
        let hot = space.coherent_state(&[c(2.0), c(0.0)]).unwrap();
        assert!(heisenberg_op(&prop, &space, &ops.q[0], 1.0, &[vac.clone()]).trusted);
        assert!(!heisenberg_op(&prop, &space, &ops.q[0], 1.0, &[vac, hot]).trusted);
    }

    #[test]
    fn time_ordered_unitary_matches_static_propagator() {
        let pk = PolyKoopman::harmonic(1.0, 1.0, 1.0).unwrap();
        let space = pk.space(5).unwrap();
        let h = build_koopman_hamiltonian(&pk, &space).unwrap();
        let prop = Propagator::new(&h, 1.0).unwrap();
        let u = time_ordered_unitary(&pk, &space, 0.8, 3).unwrap();
        let psi = space.coherent_state(&[c(0.3), c(-0.2)]).unwrap();
        let a = u.dot(&psi);
        let b = prop.evolve_state(&psi, 0.8);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
    }
}
