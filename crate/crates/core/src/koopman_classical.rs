//! Classical characteristics of the Koopman generator.
//!
//! The commuting pair `(Q, Pi)` obeys
//!
//! ```text
//! dQ_j/dt = f_j(Q, Pi, t),   dPi_j/dt = -g_j(Q, Pi, t)
//! ```
//!
//! for any polynomial `f, g`, Hamiltonian or not. Densities are carried along
//! these characteristics as weighted samples.
//!
//! State vectors are laid out `(Q_1..Q_M, Pi_1..Pi_M)`.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{QmfsError, Result};
use crate::fock_oracle::PolyKoopman;
use crate::linalg;
use crate::poly::{Poly, MAX_DEGREE};

/// States with Euclidean norm above this are reported as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// Relative step-halving error accepted by [`integrate`].
pub const STEP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalFlow {
    pairs: usize,
    f: Vec<Poly>,
    g: Vec<Poly>,
    pub dt: f64,
    pub step_tol: f64,
}

impl ClassicalFlow {
    pub fn new(f: Vec<Poly>, g: Vec<Poly>, dt: f64) -> Result<Self> {
        let pairs = f.len();
        if pairs == 0 || g.len() != pairs {
            return Err(QmfsError::Dimension("f and g need one polynomial per pair".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(QmfsError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        for p in f.iter().chain(&g) {
            p.validate(pairs, MAX_DEGREE)?;
        }
        Ok(Self { pairs, f, g, dt, step_tol: STEP_TOL })
    }

    pub fn from_koopman(pk: &PolyKoopman, dt: f64) -> Result<Self> {
        Self::new(pk.f.clone(), pk.g.clone(), dt)
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn dim(&self) -> usize {
        2 * self.pairs
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Array1<f64> {
        let (q, pi) = x.split_at(self.pairs);
        let mut v = Array1::zeros(self.dim());
        for j in 0..self.pairs {
            v[j] = self.f[j].eval(q, pi, t);
            v[self.pairs + j] = -self.g[j].eval(q, pi, t);
        }
        v
    }

    /// Jacobian of the vector field at `x`.
    pub fn velocity_jacobian(&self, x: &[f64], t: f64) -> Array2<f64> {
        let m = self.pairs;
        let (q, pi) = x.split_at(m);
        let mut jac = Array2::zeros((2 * m, 2 * m));
        for j in 0..m {
            for k in 0..m {
                jac[[j, k]] = self.f[j].d_dq(k).eval(q, pi, t);
                jac[[j, m + k]] = self.f[j].d_dpi(k).eval(q, pi, t);
                jac[[m + j, k]] = -self.g[j].d_dq(k).eval(q, pi, t);
                jac[[m + j, m + k]] = -self.g[j].d_dpi(k).eval(q, pi, t);
            }
        }
        jac
    }

    fn rk4_step(&self, x: &Array1<f64>, t: f64, h: f64) -> Array1<f64> {
        let k1 = self.velocity(x.as_slice().unwrap(), t);
        let x2 = x + &(&k1 * (0.5 * h));
        let k2 = self.velocity(x2.as_slice().unwrap(), t + 0.5 * h);
        let x3 = x + &(&k2 * (0.5 * h));
        let k3 = self.velocity(x3.as_slice().unwrap(), t + 0.5 * h);
        let x4 = x + &(&k3 * h);
        let k4 = self.velocity(x4.as_slice().unwrap(), t + h);
        x + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0))
    }

    fn run(&self, x0: &Array1<f64>, t_final: f64, h: f64, record: bool) -> Result<(Vec<Array1<f64>>, Array1<f64>)> {
        let steps = (t_final / h).round() as usize;
        let mut x = x0.clone();
        let mut path = Vec::new();
        if record {
            path.reserve(steps + 1);
            path.push(x.clone());
        }
        for k in 0..steps {
            let t = k as f64 * h;
            x = self.rk4_step(&x, t, h);
            let norm = x.dot(&x).sqrt();
            if !(norm <= DIVERGENCE_NORM) {
                return Err(QmfsError::Diverged { time: t + h, norm });
            }
            if record {
                path.push(x.clone());
            }
        }
        Ok((path, x))
    }

    fn steps_for(&self, t_final: f64) -> Result<usize> {
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(QmfsError::InvalidInput(format!("bad final time {t_final}")));
        }
        let steps = (t_final / self.dt).round();
        if (steps * self.dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
            return Err(QmfsError::InvalidInput(format!(
                "final time {t_final} is not a multiple of dt {}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalTrajectory {
    pub times: Array1<f64>,
    /// Row `k` is the state at `times[k]`.
    pub states: Array2<f64>,
    /// Relative difference against the half-step run at `t_final`.
    pub step_error: f64,
}

impl ClassicalTrajectory {
    pub fn final_state(&self) -> Array1<f64> {
        self.states.row(self.states.nrows() - 1).to_owned()
    }
}

fn check_start(flow: &ClassicalFlow, x0: &[f64]) -> Result<Array1<f64>> {
    if x0.len() != flow.dim() {
        return Err(QmfsError::Dimension(format!(
            "initial state has length {}, flow needs {}",
            x0.len(),
            flow.dim()
        )));
    }
    Ok(Array1::from(x0.to_vec()))
}

fn relative_gap(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt() / b.dot(b).sqrt().max(1.0)
}

/// RK4 trajectory from `x0 = (Q0, Pi0)` with a step-halving error check.
pub fn integrate(flow: &ClassicalFlow, x0: &[f64], t_final: f64) -> Result<ClassicalTrajectory> {
    let x0 = check_start(flow, x0)?;
    let steps = flow.steps_for(t_final)?;
    let (path, end) = flow.run(&x0, t_final, flow.dt, true)?;
    let (_, fine) = flow.run(&x0, t_final, 0.5 * flow.dt, false)?;
    let step_error = relative_gap(&end, &fine);
    if step_error > flow.step_tol {
        return Err(QmfsError::StepSize { error: step_error, tolerance: flow.step_tol });
    }
    let mut states = Array2::zeros((steps + 1, flow.dim()));
    for (k, x) in path.iter().enumerate() {
        states.row_mut(k).assign(x);
    }
    let times = Array1::from_shape_fn(steps + 1, |k| k as f64 * flow.dt);
    Ok(ClassicalTrajectory { times, states, step_error })
}

/// Final state without the step check, for ensemble transport.
pub fn flow_map(flow: &ClassicalFlow, x0: &[f64], t_final: f64) -> Result<Array1<f64>> {
    let x0 = check_start(flow, x0)?;
    flow.steps_for(t_final)?;
    Ok(flow.run(&x0, t_final, flow.dt, false)?.1)
}

/// Final state and tangent map `d x(T) / d x0`, integrated together.
pub fn flow_with_jacobian(flow: &ClassicalFlow, x0: &[f64], t_final: f64) -> Result<(Array1<f64>, Array2<f64>)> {
    let mut x = check_start(flow, x0)?;
    let steps = flow.steps_for(t_final)?;
    let n = flow.dim();
    let h = flow.dt;
    let mut jac = Array2::<f64>::eye(n);
    let field = |x: &Array1<f64>, j: &Array2<f64>, t: f64| {
        let s = x.as_slice().unwrap();
        (flow.velocity(s, t), flow.velocity_jacobian(s, t).dot(j))
    };
    for k in 0..steps {
        let t = k as f64 * h;
        let (k1, l1) = field(&x, &jac, t);
        let (k2, l2) = field(&(&x + &(&k1 * (0.5 * h))), &(&jac + &(&l1 * (0.5 * h))), t + 0.5 * h);
        let (k3, l3) = field(&(&x + &(&k2 * (0.5 * h))), &(&jac + &(&l2 * (0.5 * h))), t + 0.5 * h);
        let (k4, l4) = field(&(&x + &(&k3 * h)), &(&jac + &(&l3 * h)), t + h);
        x = &x + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0));
        jac = &jac + &((l1 + &l2 * 2.0 + &l3 * 2.0 + l4) * (h / 6.0));
        let norm = x.dot(&x).sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(QmfsError::Diverged { time: t + h, norm });
        }
    }
    Ok((x, jac))
}

/// Phase-space volume factor `det(d x(T) / d x0)`.
pub fn volume_factor(flow: &ClassicalFlow, x0: &[f64], t_final: f64) -> Result<f64> {
    let (_, jac) = flow_with_jacobian(flow, x0, t_final)?;
    Ok(det(&jac))
}

fn det(a: &Array2<f64>) -> f64 {
    // Small matrices only (2M <= 4); Gaussian elimination with pivoting.
    let mut m = a.clone();
    let n = m.nrows();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
        if m[[p, c]] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                m.swap([p, k], [c, k]);
            }
            d = -d;
        }
        d *= m[[c, c]];
        for r in c + 1..n {
            let factor = m[[r, c]] / m[[c, c]];
            for k in c..n {
                m[[r, k]] -= factor * m[[c, k]];
            }
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    /// Row per sample, columns `(Q.., Pi..)`.
    pub points: Array2<f64>,
    /// Normalized weights.
    pub weights: Array1<f64>,
}

impl WeightedSamples {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() != weights.len() || points.nrows() == 0 {
            return Err(QmfsError::Dimension("need one weight per sample and at least one sample".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) || points.iter().any(|x| !x.is_finite()) {
            return Err(QmfsError::InvalidInput("non-finite sample".into()));
        }
        let total = weights.sum();
        if !(total > 0.0) {
            return Err(QmfsError::InvalidInput("weights must have positive sum".into()));
        }
        Ok(Self { points, weights: weights / total })
    }

    pub fn delta(x: &[f64]) -> Self {
        Self {
            points: Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap(),
            weights: Array1::ones(1),
        }
    }

    pub fn mean(&self) -> Array1<f64> {
        self.points.t().dot(&self.weights)
    }

    pub fn cov(&self) -> Array2<f64> {
        let mu = self.mean();
        let centered = &self.points - &mu.view().insert_axis(ndarray::Axis(0));
        let weighted = &centered * &self.weights.view().insert_axis(ndarray::Axis(1));
        weighted.t().dot(&centered)
    }

    /// Product Gauss-Hermite grid for a Gaussian with the given moments,
    /// `nodes` points per dimension. Exact for polynomial moments of
    /// degree `< 2 nodes`.
    pub fn gauss_hermite(mean: &Array1<f64>, cov: &Array2<f64>, nodes: usize) -> Result<Self> {
        let dim = mean.len();
        let (x, w) = hermite_rule(nodes)?;
        let root = sqrt_psd(cov)?;
        let count = nodes.pow(dim as u32);
        let mut points = Array2::zeros((count, dim));
        let mut weights = Array1::zeros(count);
        for idx in 0..count {
            let mut rest = idx;
            let mut z = Array1::zeros(dim);
            let mut weight = 1.0;
            for d in 0..dim {
                let k = rest % nodes;
                rest /= nodes;
                z[d] = x[k];
                weight *= w[k];
            }
            points.row_mut(idx).assign(&(mean + &root.dot(&z)));
            weights[idx] = weight;
        }
        Self::new(points, weights)
    }

    /// Seeded Monte Carlo draw from a Gaussian.
    pub fn monte_carlo(mean: &Array1<f64>, cov: &Array2<f64>, count: usize, seed: u64) -> Result<Self> {
        let dim = mean.len();
        let root = sqrt_psd(cov)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Array2::zeros((count, dim));
        for mut row in points.rows_mut() {
            let z = Array1::from_shape_fn(dim, |_| StandardNormal.sample(&mut rng));
            row.assign(&(mean + &root.dot(&z)));
        }
        Self::new(points, Array1::ones(count))
    }
}

fn sqrt_psd(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = linalg::eigh_real(&linalg::symmetrize(cov))?;
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if vals.iter().any(|&v| v < -1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(QmfsError::InvalidInput("sample covariance is not positive semidefinite".into()));
    }
    let sqrt_vals = vals.mapv(|v| v.max(0.0).sqrt());
    Ok(&vecs * &sqrt_vals.view().insert_axis(ndarray::Axis(0)))
}

/// Probabilists' Gauss-Hermite nodes and weights (weights sum to one),
/// from the eigenproblem of the Jacobi matrix.
pub fn hermite_rule(nodes: usize) -> Result<(Array1<f64>, Array1<f64>)> {
    if nodes == 0 {
        return Err(QmfsError::InvalidInput("need at least one quadrature node".into()));
    }
    let mut jacobi = Array2::zeros((nodes, nodes));
    for k in 1..nodes {
        let off = (k as f64).sqrt();
        jacobi[[k - 1, k]] = off;
        jacobi[[k, k - 1]] = off;
    }
    let (x, v) = linalg::eigh_real(&jacobi)?;
    let w = v.row(0).mapv(|c| c * c);
    Ok((x, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transported {
    pub samples: WeightedSamples,
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Pushes every sample along its characteristic to `t_final`.
pub fn transport_density(flow: &ClassicalFlow, samples: &WeightedSamples, t_final: f64) -> Result<Transported> {
    let rows: Vec<Array1<f64>> = samples
        .points
        .outer_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x0| flow_map(flow, &x0.to_vec(), t_final))
        .collect::<Result<_>>()?;
    let mut points = Array2::zeros(samples.points.dim());
    for (k, r) in rows.iter().enumerate() {
        points.row_mut(k).assign(r);
    }
    let moved = WeightedSamples { points, weights: samples.weights.clone() };
    Ok(Transported { mean: moved.mean(), cov: moved.cov(), samples: moved })
}

/// `f = dH/dPi`, `g = dH/dQ` for a classical Hamiltonian `H(Q, Pi)`.
pub fn hamiltonian_flow(pairs: usize, h_tilde: &Poly, dt: f64) -> Result<ClassicalFlow> {
    let f = (0..pairs).map(|j| h_tilde.d_dpi(j)).collect();
    let g = (0..pairs).map(|j| h_tilde.d_dq(j)).collect();
    ClassicalFlow::new(f, g, dt)
}

/// Linearly damped oscillator: `f = Pi/m`, `g = m w^2 Q + gamma Pi`.
/// Phase-space area contracts as `exp(-gamma t)`.
pub fn damped_flow(m: f64, omega: f64, gamma: f64, dt: f64) -> Result<ClassicalFlow> {
    use crate::poly::Monomial;
    ClassicalFlow::new(
        vec![Poly::new(vec![Monomial::single(0, 1, 1.0 / m)])],
        vec![Poly::new(vec![
            Monomial::single(1, 0, m * omega * omega),
            Monomial::single(0, 1, gamma),
        ])],
        dt,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;

    fn harmonic(m: f64, w: f64, dt: f64) -> ClassicalFlow {
        ClassicalFlow::from_koopman(&PolyKoopman::harmonic(m, w, 1.0).unwrap(), dt).unwrap()
    }

    #[test]
    fn harmonic_closed_form() {
        let (m, w) = (2.0, 1.5);
        let flow = harmonic(m, w, 1e-3);
        let traj = integrate(&flow, &[0.3, -0.4], 3.0).unwrap();
        for (k, &t) in traj.times.iter().enumerate().step_by(250) {
            let q = 0.3 * (w * t).cos() + (-0.4 / (m * w)) * (w * t).sin();
            let pi = -0.4 * (w * t).cos() - 0.3 * m * w * (w * t).sin();
            assert!((traj.states[[k, 0]] - q).abs() < 1e-10);
            assert!((traj.states[[k, 1]] - pi).abs() < 1e-10);
        }
    }

    #[test]
    fn step_error_is_reported() {
        let flow = harmonic(1.0, 1.0, 0.5);
        assert!(matches!(
            integrate(&flow, &[1.0, 0.0], 10.0),
            Err(QmfsError::StepSize { .. })
        ));
    }

    #[test]
    fn blowup_is_detected() {
        // dQ/dt = Q^2 from Q0 = 1 blows up at t = 1.
        let flow = ClassicalFlow::new(
            vec![Poly::new(vec![Monomial::single(2, 0, 1.0)])],
            vec![Poly::zero()],
            1e-3,
        )
        .unwrap();
        assert!(matches!(flow_map(&flow, &[1.0, 0.0], 2.0), Err(QmfsError::Diverged { .. })));
    }

    #[test]
    fn hermite_rule_moments() {
        let (x, w) = hermite_rule(6).unwrap();
        let moment = |p: i32| x.iter().zip(w.iter()).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-14);
        assert!(moment(1).abs() < 1e-14);
        assert!((moment(2) - 1.0).abs() < 1e-13);
        assert!((moment(4) - 3.0).abs() < 1e-12);
        assert!((moment(10) - 945.0).abs() < 1e-8);
    }

    #[test]
    fn delta_ensemble_is_integrate() {
        let flow = harmonic(1.0, 1.0, 1e-2);
        let out = transport_density(&flow, &WeightedSamples::delta(&[0.5, 0.1]), 1.0).unwrap();
        let direct = integrate(&flow, &[0.5, 0.1], 1.0).unwrap().final_state();
        assert_eq!(out.mean, direct);
    }

    #[test]
    fn damped_area_contracts() {
        let gamma = 0.3;
        let flow = damped_flow(1.0, 1.0, gamma, 1e-3).unwrap();
        let v = volume_factor(&flow, &[1.0, 0.0], 2.0).unwrap();
        assert!((v - (-gamma * 2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn hamiltonian_volume_preserved() {
        // H = Pi^2/2 + Q^2/2 + Q^4/4.
        let h = Poly::new(vec![
            Monomial::single(0, 2, 0.5),
            Monomial::single(2, 0, 0.5),
            Monomial::single(4, 0, 0.25),
        ]);
        let flow = hamiltonian_flow(1, &h, 1e-3).unwrap();
        let v = volume_factor(&flow, &[1.2, -0.3], 5.0).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }
}
