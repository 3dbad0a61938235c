//! Continuous measurement of linear observables on Gaussian states.
//!
//! A channel monitoring `s . x` with strength `k` and efficiency `eta`
//! produces the record
//!
//! ```text
//! dy = s^T mu dt + dW / sqrt(4 eta k)
//! ```
//!
//! and injects back-action diffusion `D = hbar^2 k (Omega s)(Omega s)^T`. The
//! conditional covariance follows the Riccati flow
//!
//! ```text
//! dV/dt = A V + V A^T + sum D_ba + D_extra - sum 4 k eta (V s)(V s)^T
//! ```
//!
//! With `eta = 1` the steady conditional state is pure.

use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{QmfsError, Result};
use crate::linalg;
use crate::phase_space::LinearModel;

/// Largest accepted `|A|_1 dt` for trajectory integration.
pub const MAX_DRIFT_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: Array1<f64>,
    cov: Array2<f64>,
}

impl GaussianState {
    /// Validates symmetry and the uncertainty relation `V + i(hbar/2) Omega >= 0`.
    pub fn new(mean: Array1<f64>, cov: Array2<f64>, model: &LinearModel) -> Result<Self> {
        let n = model.dim();
        if mean.len() != n || cov.dim() != (n, n) {
            return Err(QmfsError::Dimension(format!(
                "state has mean {} / cov {:?} for a {n}-dimensional model",
                mean.len(),
                cov.dim()
            )));
        }
        let scale = linalg::max_abs(&cov).max(f64::MIN_POSITIVE);
        let asym = linalg::max_asymmetry(&cov);
        if asym > 1e-13 * scale {
            return Err(QmfsError::NotSymmetric { asymmetry: asym });
        }
        let min_eig = linalg::uncertainty_min_eigenvalue(&cov, model.omega(), model.hbar())?;
        if min_eig < -1e-10 * model.hbar() {
            return Err(QmfsError::Unphysical { min_eigenvalue: min_eig });
        }
        Ok(Self { mean, cov })
    }

    /// Every quadrature at variance `hbar/2` (coherent state of unit-scale modes).
    pub fn isotropic(model: &LinearModel, mean: Array1<f64>) -> Result<Self> {
        let cov = Array2::eye(model.dim()) * (0.5 * model.hbar());
        Self::new(mean, cov, model)
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Array2<f64> {
        &self.cov
    }
}

/// `cov` with the momentum of `mode` sign-flipped (partial transpose).
pub fn partial_transpose(cov: &Array2<f64>, mode: usize) -> Array2<f64> {
    let mut flip = Array1::ones(cov.nrows());
    flip[2 * mode + 1] = -1.0;
    Array2::from_shape_fn(cov.dim(), |(i, j)| cov[[i, j]] * flip[i] * flip[j])
}

/// Smallest eigenvalue of `cov + i(hbar/2)Omega`; negative means unphysical.
pub fn physicality_margin(cov: &Array2<f64>, model: &LinearModel) -> Result<f64> {
    linalg::uncertainty_min_eigenvalue(cov, model.omega(), model.hbar())
}

/// `S V S^T`.
pub fn project_cov(cov: &Array2<f64>, rows: &Array2<f64>) -> Array2<f64> {
    rows.dot(cov).dot(&rows.t())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementChannel {
    s: Array1<f64>,
    strength: f64,
    efficiency: f64,
}

impl MeasurementChannel {
    pub fn new(s: Array1<f64>, strength: f64, efficiency: f64) -> Result<Self> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(QmfsError::InvalidInput(format!("strength must be >= 0, got {strength}")));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(QmfsError::InvalidInput(format!(
                "efficiency must lie in (0, 1], got {efficiency}"
            )));
        }
        if s.iter().all(|x| *x == 0.0) {
            return Err(QmfsError::InvalidInput("measured observable is zero".into()));
        }
        Ok(Self { s, strength, efficiency })
    }

    pub fn observable(&self) -> &Array1<f64> {
        &self.s
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// `4 k eta`, the information rate per unit observable variance.
    pub fn measurement_rate(&self) -> f64 {
        4.0 * self.strength * self.efficiency
    }
}

/// Force waveform `F(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Waveform {
    Constant { value: f64 },
    /// `amplitude * sin(frequency t + phase)`.
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
}

impl Waveform {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Waveform::Constant { value } => value,
            Waveform::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (frequency * t + phase).sin()
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Waveform {
        match *self {
            Waveform::Constant { value } => Waveform::Constant { value: value * factor },
            Waveform::Sinusoid { amplitude, frequency, phase } => Waveform::Sinusoid {
                amplitude: amplitude * factor,
                frequency,
                phase,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceDrive {
    pub coupling: Array1<f64>,
    pub waveform: Waveform,
}

/// `D = hbar^2 k (Omega s)(Omega s)^T`.
pub fn backaction_diffusion(model: &LinearModel, channel: &MeasurementChannel) -> Result<Array2<f64>> {
    if channel.s.len() != model.dim() {
        return Err(QmfsError::Dimension(format!(
            "channel has width {}, model dimension is {}",
            channel.s.len(),
            model.dim()
        )));
    }
    let w = model.omega().dot(&channel.s);
    let h2k = model.hbar() * model.hbar() * channel.strength;
    Ok(outer(&w, &w) * h2k)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Deterministic covariance flow for a fixed set of channels.
#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    drift: Array2<f64>,
    diffusion: Array2<f64>,
    gains: Vec<(Array1<f64>, f64)>,
}

impl RiccatiProblem {
    pub fn new(model: &LinearModel, channels: &[MeasurementChannel]) -> Result<Self> {
        let n = model.dim();
        let mut diffusion = Array2::zeros((n, n));
        let mut gains = Vec::with_capacity(channels.len());
        for ch in channels {
            diffusion += &backaction_diffusion(model, ch)?;
            gains.push((ch.s.clone(), ch.measurement_rate()));
        }
        Ok(Self {
            drift: model.drift().clone(),
            diffusion,
            gains,
        })
    }

    /// Adds a user-supplied diffusion (thermal noise) matrix.
    pub fn with_extra_diffusion(mut self, d_extra: &Array2<f64>) -> Result<Self> {
        if d_extra.dim() != self.diffusion.dim() {
            return Err(QmfsError::Dimension(format!("D_extra is {:?}", d_extra.dim())));
        }
        self.diffusion += d_extra;
        Ok(self)
    }

    /// Replaces the drift by `A - gamma` (environment damping).
    pub fn with_damping(mut self, gamma: &Array2<f64>) -> Result<Self> {
        if gamma.dim() != self.drift.dim() {
            return Err(QmfsError::Dimension(format!("damping is {:?}", gamma.dim())));
        }
        self.drift -= gamma;
        Ok(self)
    }

    pub fn drift(&self) -> &Array2<f64> {
        &self.drift
    }

    pub fn diffusion(&self) -> &Array2<f64> {
        &self.diffusion
    }

    pub fn rhs(&self, v: &Array2<f64>) -> Array2<f64> {
        let av = self.drift.dot(v);
        let mut out = &av + &av.t() + &self.diffusion;
        for (s, rate) in &self.gains {
            let vs = v.dot(s);
            out -= &(outer(&vs, &vs) * *rate);
        }
        out
    }

    pub fn rk4_step(&self, v: &Array2<f64>, h: f64) -> Array2<f64> {
        let k1 = self.rhs(v);
        let k2 = self.rhs(&(v + &(&k1 * (0.5 * h))));
        let k3 = self.rhs(&(v + &(&k2 * (0.5 * h))));
        let k4 = self.rhs(&(v + &(&k3 * h)));
        let next = v + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0));
        linalg::symmetrize(&next)
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiConfig {
    /// Stationarity threshold on `|dV/dt| / |V|`.
    pub tol: f64,
    /// Give up after this much integration time.
    pub horizon: f64,
    pub initial_step: f64,
    /// Step-doubling local error tolerance (relative).
    pub local_tol: f64,
    /// When set, stationarity is judged on `W V` only (rows of `W`), so that
    /// unobserved directions are allowed to keep diffusing.
    pub watch: Option<Array2<f64>>,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            horizon: 1e4,
            initial_step: 1e-3,
            local_tol: 1e-11,
            watch: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyCovariance {
    pub cov: Array2<f64>,
    pub time: f64,
    pub rate: f64,
    pub steps: usize,
}

fn stationarity_rate(problem: &RiccatiProblem, v: &Array2<f64>, watch: Option<&Array2<f64>>) -> f64 {
    let r = problem.rhs(v);
    match watch {
        Some(w) => {
            let num = linalg::frobenius(&w.dot(&r));
            let den = linalg::frobenius(&w.dot(v)).max(f64::MIN_POSITIVE);
            num / den
        }
        None => linalg::frobenius(&r) / linalg::frobenius(v).max(f64::MIN_POSITIVE),
    }
}

/// Integrates the Riccati flow from `v0` until stationary, with adaptive
/// step-doubling RK4.
pub fn steady_covariance(
    problem: &RiccatiProblem,
    v0: &Array2<f64>,
    cfg: &RiccatiConfig,
) -> Result<SteadyCovariance> {
    if v0.dim() != problem.drift.dim() {
        return Err(QmfsError::Dimension(format!("initial covariance is {:?}", v0.dim())));
    }
    let watch = cfg.watch.as_ref();
    let mut v = v0.clone();
    let mut t = 0.0;
    let mut h = cfg.initial_step;
    let mut steps = 0usize;
    let mut rate = stationarity_rate(problem, &v, watch);
    while t < cfg.horizon {
        if rate < cfg.tol {
            return Ok(SteadyCovariance { cov: v, time: t, rate, steps });
        }
        let full = problem.rk4_step(&v, h);
        let half = problem.rk4_step(&problem.rk4_step(&v, 0.5 * h), 0.5 * h);
        let scale = linalg::frobenius(&half).max(f64::MIN_POSITIVE);
        let err = linalg::frobenius(&(&full - &half)) / scale;
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= cfg.local_tol {
            v = half;
            t += h;
            steps += 1;
            rate = stationarity_rate(problem, &v, watch);
            let grow = if err == 0.0 { 4.0 } else { (0.9 * (cfg.local_tol / err).powf(0.2)).min(4.0) };
            h *= grow.max(1.0);
        } else {
            h *= (0.9 * (cfg.local_tol / err).powf(0.2)).max(0.1);
        }
    }
    Err(QmfsError::NotConverged {
        time: t,
        rate,
        last: Box::new(v),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Store every `cov_stride`-th covariance (0 stores only the endpoints).
    pub cov_stride: usize,
}

impl IntegrationConfig {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    fn validate(&self, model: &LinearModel) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= self.dt) {
            return Err(QmfsError::InvalidInput(format!(
                "need dt > 0 and T >= dt, got dt = {}, T = {}",
                self.dt, self.t_final
            )));
        }
        let value = linalg::one_norm(model.drift()) * self.dt;
        if value > MAX_DRIFT_STEP {
            return Err(QmfsError::StepTooLarge {
                value,
                limit: MAX_DRIFT_STEP,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per stored time.
    pub means: Array2<f64>,
    /// Integrated records `y_c(t)`, one column per channel, `y(0) = 0`.
    pub records: Array2<f64>,
    /// `(time index, covariance)` pairs.
    pub covariances: Vec<(usize, Array2<f64>)>,
    pub seed: u64,
}

impl Trajectory {
    pub fn final_mean(&self) -> Array1<f64> {
        self.means.row(self.means.nrows() - 1).to_owned()
    }

    pub fn final_cov(&self) -> &Array2<f64> {
        &self.covariances.last().expect("trajectory stores its endpoint").1
    }
}

/// Standard-normal increments for one channel.
///
/// Step `n` consumes words `4n .. 4n + 3` of the ChaCha8 stream selected by
/// `(seed, channel)`; two 53-bit uniforms feed one Box-Muller draw. The value
/// at step `n` is therefore a pure function of `(seed, channel, n)`.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, channel: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(channel);
        Self { rng }
    }

    pub fn at(seed: u64, channel: u64, step: u64) -> f64 {
        let mut s = Self::new(seed, channel);
        s.rng.set_word_pos(4 * step as u128);
        s.next_normal()
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        let u2 = ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Per-trajectory seed from a master seed (SplitMix64 finalizer).
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shared deterministic pieces of the discretized filter.
struct Discretization {
    phi: Array2<f64>,
    phi_b: Option<Array1<f64>>,
    b: Option<Array1<f64>>,
    dt: f64,
}

impl Discretization {
    fn new(model: &LinearModel, coupling: Option<&Array1<f64>>, dt: f64) -> Result<Self> {
        let phi = model.transfer_matrix(dt)?;
        let b = coupling.cloned();
        let phi_b = b.as_ref().map(|b| phi.dot(b));
        Ok(Self { phi, phi_b, b, dt })
    }

    /// Trapezoidal drive increment `(dt/2)(Phi b F(t_n) + b F(t_{n+1}))`.
    fn drive(&self, waveform: &Waveform, t: f64) -> Option<Array1<f64>> {
        let (b, phi_b) = (self.b.as_ref()?, self.phi_b.as_ref()?);
        let f0 = waveform.value(t);
        let f1 = waveform.value(t + self.dt);
        Some((phi_b * f0 + b * f1) * (0.5 * self.dt))
    }
}

/// Conditional mean and covariance under continuous measurement.
///
/// The mean takes exponential Euler-Maruyama steps
/// `mu' = Phi(dt) mu + drive + sum sqrt(4 k eta) V s dW`; the covariance takes
/// RK4 Riccati steps on the same grid. Deterministic in `seed`.
pub fn evolve_conditional(
    model: &LinearModel,
    state0: &GaussianState,
    channels: &[MeasurementChannel],
    force: Option<&ForceDrive>,
    cfg: &IntegrationConfig,
    seed: u64,
) -> Result<Trajectory> {
    cfg.validate(model)?;
    let n = model.dim();
    if state0.mean.len() != n {
        return Err(QmfsError::Dimension("initial state does not match model".into()));
    }
    GaussianState::new(state0.mean.clone(), state0.cov.clone(), model)?;
    let problem = RiccatiProblem::new(model, channels)?;
    let disc = Discretization::new(model, force.map(|f| &f.coupling), cfg.dt)?;
    if let Some(f) = force {
        if f.coupling.len() != n {
            return Err(QmfsError::Dimension("force coupling does not match model".into()));
        }
    }

    let steps = cfg.steps();
    let mut streams: Vec<NoiseStream> = (0..channels.len())
        .map(|c| NoiseStream::new(seed, c as u64))
        .collect();

    let mut times = Vec::with_capacity(steps + 1);
    let mut means = Array2::zeros((steps + 1, n));
    let mut records = Array2::zeros((steps + 1, channels.len()));
    let mut covariances = vec![(0, state0.cov.clone())];

    let mut mu = state0.mean.clone();
    let mut v = state0.cov.clone();
    means.row_mut(0).assign(&mu);
    times.push(0.0);
    let sqrt_dt = cfg.dt.sqrt();

    for step in 0..steps {
        let t = step as f64 * cfg.dt;
        let mut next = disc.phi.dot(&mu);
        if let Some(f) = force {
            if let Some(d) = disc.drive(&f.waveform, t) {
                next += &d;
            }
        }
        for (c, ch) in channels.iter().enumerate() {
            let dw = streams[c].next_normal() * sqrt_dt;
            let rate = ch.measurement_rate();
            let signal = ch.s.dot(&mu) * cfg.dt;
            let dy = if rate > 0.0 { signal + dw / rate.sqrt() } else { f64::NAN };
            records[[step + 1, c]] = records[[step, c]] + dy;
            if rate > 0.0 {
                next += &(v.dot(&ch.s) * (rate.sqrt() * dw));
            }
        }
        v = problem.rk4_step(&v, cfg.dt);
        mu = next;
        times.push((step + 1) as f64 * cfg.dt);
        means.row_mut(step + 1).assign(&mu);
        let store = step + 1 == steps || (cfg.cov_stride > 0 && (step + 1) % cfg.cov_stride == 0);
        if store {
            covariances.push((step + 1, v.clone()));
        }
    }

    Ok(Trajectory {
        times,
        means,
        records,
        covariances,
        seed,
    })
}

/// Runs `count` trajectories with seeds `trajectory_seed(master, i)`.
/// Output order is by index, identical for serial and parallel execution.
#[allow(clippy::too_many_arguments)]
pub fn simulate_batch(
    model: &LinearModel,
    state0: &GaussianState,
    channels: &[MeasurementChannel],
    force: Option<&ForceDrive>,
    cfg: &IntegrationConfig,
    master_seed: u64,
    count: usize,
    parallel: bool,
) -> Result<Vec<Trajectory>> {
    let run = |i: usize| {
        evolve_conditional(model, state0, channels, force, cfg, trajectory_seed(master_seed, i as u64))
    };
    if parallel {
        (0..count).into_par_iter().map(run).collect()
    } else {
        (0..count).map(run).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceEstimate {
    pub amplitude: f64,
    pub posterior_std: f64,
    pub information: f64,
}

/// Innovation sensitivity of the amplitude-free filter to a unit force
/// amplitude, and the resulting Fisher information.
///
/// Treating the amplitude as an extra state with zero dynamics, the filter
/// that ignores it leaves an estimation error that is exactly `theta xi(t)`
/// with `xi' = (Phi - sum 4 k eta V s s^T dt) xi + drive(template)`, `xi(0) = 0`.
/// Innovations are then `theta s^T xi dt` plus white noise of variance
/// `dt / (4 k eta)`, which gives the flat-prior augmented posterior in
/// closed form.
struct Sensitivity {
    /// Per step, per channel: `s_c^T xi_n dt`.
    responses: Vec<Vec<f64>>,
    information: f64,
}

fn sensitivity(
    model: &LinearModel,
    v0: &Array2<f64>,
    channels: &[MeasurementChannel],
    coupling: &Array1<f64>,
    template: &Waveform,
    cfg: &IntegrationConfig,
) -> Result<Sensitivity> {
    cfg.validate(model)?;
    if coupling.iter().all(|x| *x == 0.0) {
        return Err(QmfsError::SingularInformation("force coupling is zero".into()));
    }
    let problem = RiccatiProblem::new(model, channels)?;
    let disc = Discretization::new(model, Some(coupling), cfg.dt)?;
    let n = model.dim();
    let steps = cfg.steps();
    let mut xi = Array1::zeros(n);
    let mut v = v0.clone();
    let mut responses = Vec::with_capacity(steps);
    let mut information = 0.0;
    for step in 0..steps {
        let t = step as f64 * cfg.dt;
        let mut row = Vec::with_capacity(channels.len());
        let mut next = disc.phi.dot(&xi);
        if let Some(d) = disc.drive(template, t) {
            next += &d;
        }
        for ch in channels {
            let rate = ch.measurement_rate();
            let sx = ch.s.dot(&xi);
            row.push(sx * cfg.dt);
            information += rate * sx * sx * cfg.dt;
            next -= &(v.dot(&ch.s) * (rate * sx * cfg.dt));
        }
        responses.push(row);
        xi = next;
        v = problem.rk4_step(&v, cfg.dt);
    }
    if !(information > 0.0) {
        return Err(QmfsError::SingularInformation(
            "template produces no response in the measured observables".into(),
        ));
    }
    Ok(Sensitivity { responses, information })
}

/// Analytic posterior standard deviation of the template amplitude.
pub fn force_posterior_std(
    model: &LinearModel,
    v0: &Array2<f64>,
    channels: &[MeasurementChannel],
    coupling: &Array1<f64>,
    template: &Waveform,
    cfg: &IntegrationConfig,
) -> Result<f64> {
    Ok(sensitivity(model, v0, channels, coupling, template, cfg)?
        .information
        .sqrt()
        .recip())
}

/// Maximum-likelihood amplitude of `template` from a recorded trajectory.
///
/// The trajectory must come from [`evolve_conditional`] with the same model,
/// channels and integration grid; its first mean and covariance are the prior.
pub fn estimate_force(
    trajectory: &Trajectory,
    model: &LinearModel,
    channels: &[MeasurementChannel],
    coupling: &Array1<f64>,
    template: &Waveform,
    cfg: &IntegrationConfig,
) -> Result<ForceEstimate> {
    let steps = cfg.steps();
    if trajectory.means.nrows() != steps + 1 || trajectory.records.ncols() != channels.len() {
        return Err(QmfsError::Dimension(
            "trajectory does not match the integration grid or channels".into(),
        ));
    }
    let v0 = &trajectory.covariances[0].1;
    let sens = sensitivity(model, v0, channels, coupling, template, cfg)?;

    let problem = RiccatiProblem::new(model, channels)?;
    let phi = model.transfer_matrix(cfg.dt)?;
    let mut mu = trajectory.means.row(0).to_owned();
    let mut v = v0.clone();
    let mut score = 0.0;
    for step in 0..steps {
        let mut next = phi.dot(&mu);
        for (c, ch) in channels.iter().enumerate() {
            let rate = ch.measurement_rate();
            let dy = trajectory.records[[step + 1, c]] - trajectory.records[[step, c]];
            let innovation = dy - ch.s.dot(&mu) * cfg.dt;
            score += rate / cfg.dt * sens.responses[step][c] * innovation;
            next += &(v.dot(&ch.s) * (rate * innovation));
        }
        mu = next;
        v = problem.rk4_step(&v, cfg.dt);
    }
    Ok(ForceEstimate {
        amplitude: score / sens.information,
        posterior_std: sens.information.sqrt().recip(),
        information: sens.information,
    })
}

/// Posterior standard deviation of the amplitude from the augmented
/// continuous Riccati flow over `(x, theta)` with prior variance
/// `prior_var` on `theta`, with the prior's information removed.
pub fn augmented_posterior_std(
    model: &LinearModel,
    v0: &Array2<f64>,
    channels: &[MeasurementChannel],
    coupling: &Array1<f64>,
    template: &Waveform,
    cfg: &IntegrationConfig,
    prior_var: f64,
) -> Result<f64> {
    cfg.validate(model)?;
    let n = model.dim();
    let base = RiccatiProblem::new(model, channels)?;
    let mut v = Array2::zeros((n + 1, n + 1));
    v.slice_mut(ndarray::s![..n, ..n]).assign(v0);
    v[[n, n]] = prior_var;

    let mut diffusion = Array2::zeros((n + 1, n + 1));
    diffusion.slice_mut(ndarray::s![..n, ..n]).assign(base.diffusion());
    let gains: Vec<(Array1<f64>, f64)> = channels
        .iter()
        .map(|ch| {
            let mut s = Array1::zeros(n + 1);
            s.slice_mut(ndarray::s![..n]).assign(&ch.s);
            (s, ch.measurement_rate())
        })
        .collect();
    let drift_at = |t: f64| {
        let mut a = Array2::zeros((n + 1, n + 1));
        a.slice_mut(ndarray::s![..n, ..n]).assign(model.drift());
        let f = template.value(t);
        for i in 0..n {
            a[[i, n]] = coupling[i] * f;
        }
        a
    };
    let rhs = |t: f64, v: &Array2<f64>| {
        let av = drift_at(t).dot(v);
        let mut out = &av + &av.t() + &diffusion;
        for (s, rate) in &gains {
            let vs = v.dot(s);
            out -= &(outer(&vs, &vs) * *rate);
        }
        out
    };
    let h = cfg.dt;
    for step in 0..cfg.steps() {
        let t = step as f64 * h;
        let k1 = rhs(t, &v);
        let k2 = rhs(t + 0.5 * h, &(&v + &(&k1 * (0.5 * h))));
        let k3 = rhs(t + 0.5 * h, &(&v + &(&k2 * (0.5 * h))));
        let k4 = rhs(t + h, &(&v + &(&k3 * h)));
        v = linalg::symmetrize(&(&v + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0))));
    }
    let information = 1.0 / v[[n, n]] - 1.0 / prior_var;
    if !(information > 0.0) {
        return Err(QmfsError::SingularInformation("augmented flow gained no information".into()));
    }
    Ok(information.sqrt().recip())
}

/// Writes a trajectory as CSV: `time, mean_*, yrecord_*` and, when `with_cov`,
/// the upper triangle `cov_i_j` on rows where a covariance was stored.
pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    trajectory: &Trajectory,
    mean_labels: &[String],
    channel_labels: &[String],
    with_cov: bool,
) -> Result<()> {
    let n = trajectory.means.ncols();
    if mean_labels.len() != n || channel_labels.len() != trajectory.records.ncols() {
        return Err(QmfsError::Dimension("CSV labels do not match trajectory".into()));
    }
    let mut header: Vec<String> = vec!["time".into()];
    header.extend(mean_labels.iter().map(|l| format!("mean_{l}")));
    header.extend(channel_labels.iter().map(|l| format!("yrecord_{l}")));
    if with_cov {
        for i in 0..n {
            for j in i..n {
                header.push(format!("cov_{i}_{j}"));
            }
        }
    }
    writeln!(out, "{}", header.join(","))?;

    let mut cov_iter = trajectory.covariances.iter().peekable();
    for (row, t) in trajectory.times.iter().enumerate() {
        let mut fields: Vec<String> = vec![format!("{t}")];
        fields.extend(trajectory.means.row(row).iter().map(|x| format!("{x}")));
        fields.extend(trajectory.records.row(row).iter().map(|x| format!("{x}")));
        if with_cov {
            let stored = match cov_iter.peek() {
                Some((idx, _)) if *idx == row => cov_iter.next().map(|c| &c.1),
                _ => None,
            };
            for i in 0..n {
                for j in i..n {
                    fields.push(stored.map(|c| format!("{}", c[[i, j]])).unwrap_or_default());
                }
            }
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_library::{oscillator_pair, single_oscillator, QMFS_BASIS};
    use ndarray::array;

    #[test]
    fn diffusion_examples() {
        let single = single_oscillator(1.0, 1.0, 1.0).unwrap().model;
        let ch = MeasurementChannel::new(array![1.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(backaction_diffusion(&single, &ch).unwrap(), array![[0.0, 0.0], [0.0, 1.0]]);

        let ch0 = MeasurementChannel::new(array![1.0, 0.0], 0.0, 1.0).unwrap();
        assert_eq!(backaction_diffusion(&single, &ch0).unwrap(), Array2::<f64>::zeros((2, 2)));

        let pair = oscillator_pair(1.0, 1.0, 1.0).unwrap();
        let q = MeasurementChannel::new(array![1.0, 0.0, 1.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(pair.model.omega().dot(q.observable()), array![0.0, -1.0, 0.0, -1.0]);
        let d = backaction_diffusion(&pair.model, &q).unwrap();
        assert_eq!(d[[1, 1]], d[[3, 3]]);
        let t = pair.basis(QMFS_BASIS).unwrap();
        let projected = t.dot(&d).dot(&t.t());
        // (Q, Pi) are indices 0 and 3 in the collective basis.
        for (a, b) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!(projected[[a, b]].abs() < 1e-14);
        }
    }

    #[test]
    fn channel_validation() {
        assert!(MeasurementChannel::new(array![0.0, 0.0], 1.0, 1.0).is_err());
        assert!(MeasurementChannel::new(array![1.0, 0.0], -1.0, 1.0).is_err());
        assert!(MeasurementChannel::new(array![1.0, 0.0], 1.0, 0.0).is_err());
        assert!(MeasurementChannel::new(array![1.0, 0.0], 1.0, 1.5).is_err());
    }

    #[test]
    fn state_validation() {
        let model = single_oscillator(1.0, 1.0, 1.0).unwrap().model;
        assert!(GaussianState::new(array![0.0, 0.0], array![[0.1, 0.0], [0.0, 0.1]], &model).is_err());
        assert!(GaussianState::new(array![0.0, 0.0], array![[1.0, 0.2], [0.1, 1.0]], &model).is_err());
        assert!(GaussianState::isotropic(&model, array![1.0, 0.0]).is_ok());
    }

    #[test]
    fn noise_stream_is_counter_addressable() {
        let mut s = NoiseStream::new(42, 3);
        let seq: Vec<f64> = (0..10).map(|_| s.next_normal()).collect();
        for (n, x) in seq.iter().enumerate() {
            assert_eq!(*x, NoiseStream::at(42, 3, n as u64));
        }
        assert_ne!(NoiseStream::at(42, 3, 0), NoiseStream::at(42, 4, 0));
    }

    #[test]
    fn noiseless_flow_follows_transfer_matrix() {
        let model = oscillator_pair(1.0, 1.0, 1.0).unwrap().model;
        let state = GaussianState::isotropic(&model, array![1.0, -0.5, 0.3, 2.0]).unwrap();
        let cfg = IntegrationConfig { dt: 1e-2, t_final: 5.0, cov_stride: 0 };
        let traj = evolve_conditional(&model, &state, &[], None, &cfg, 1).unwrap();
        let expected = model.transfer_matrix(5.0).unwrap().dot(state.mean());
        let got = traj.final_mean();
        assert!(linalg::max_abs(&(&got - &expected).insert_axis(Axis(0))) < 1e-12);
    }

    #[test]
    fn rejects_large_steps() {
        let model = single_oscillator(1.0, 10.0, 1.0).unwrap().model;
        let state = GaussianState::isotropic(&model, array![0.0, 0.0]).unwrap();
        let cfg = IntegrationConfig { dt: 0.1, t_final: 1.0, cov_stride: 0 };
        assert!(matches!(
            evolve_conditional(&model, &state, &[], None, &cfg, 0),
            Err(QmfsError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn lyapunov_limit_without_measurement() {
        let model = single_oscillator(1.0, 1.0, 1.0).unwrap().model;
        let gamma = array![[0.0, 0.0], [0.0, 0.3]];
        let d_extra = array![[0.0, 0.0], [0.0, 0.6]];
        let problem = RiccatiProblem::new(&model, &[])
            .unwrap()
            .with_damping(&gamma)
            .unwrap()
            .with_extra_diffusion(&d_extra)
            .unwrap();
        let steady = steady_covariance(&problem, &(Array2::eye(2) * 0.5), &RiccatiConfig::default()).unwrap();
        let a = problem.drift();
        let residual = a.dot(&steady.cov) + steady.cov.dot(&a.t()) + &d_extra;
        assert!(linalg::max_abs(&residual) < 1e-10);
    }

    #[test]
    fn unmonitored_oscillator_does_not_converge() {
        let model = single_oscillator(1.0, 1.0, 1.0).unwrap().model;
        let problem = RiccatiProblem::new(&model, &[])
            .unwrap()
            .with_extra_diffusion(&array![[0.0, 0.0], [0.0, 1.0]])
            .unwrap();
        let cfg = RiccatiConfig { horizon: 50.0, ..Default::default() };
        match steady_covariance(&problem, &(Array2::eye(2) * 0.5), &cfg) {
            Err(QmfsError::NotConverged { last, .. }) => assert!(last[[0, 0]] > 10.0),
            other => panic!("expected divergence diagnosis, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_record_recovers_amplitude() {
        // Zero efficiency noise is impossible, so emulate a noise-free record by
        // building it from the deterministic mean.
        let model = oscillator_pair(1.0, 1.0, 1.0).unwrap().model;
        let state = GaussianState::isotropic(&model, Array1::zeros(4)).unwrap();
        let ch = MeasurementChannel::new(array![1.0, 0.0, 1.0, 0.0], 2.0, 1.0).unwrap();
        let cfg = IntegrationConfig { dt: 1e-3, t_final: 5.0, cov_stride: 0 };
        let b = array![0.0, 1.0, 0.0, 0.0];
        let template = Waveform::Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
        let drive = ForceDrive { coupling: b.clone(), waveform: template };
        let mut traj = evolve_conditional(&model, &state, &[], Some(&drive), &cfg, 0).unwrap();
        let mut y = Array2::zeros((traj.times.len(), 1));
        for n in 0..traj.times.len() - 1 {
            y[[n + 1, 0]] = y[[n, 0]] + ch.observable().dot(&traj.means.row(n)) * cfg.dt;
        }
        traj.records = y;
        let est = estimate_force(&traj, &model, &[ch], &b, &template, &cfg).unwrap();
        assert!((est.amplitude - 1.0).abs() < 1e-10, "{}", est.amplitude);
    }

    #[test]
    fn zero_template_is_singular() {
        let model = single_oscillator(1.0, 1.0, 1.0).unwrap().model;
        let ch = MeasurementChannel::new(array![1.0, 0.0], 1.0, 1.0).unwrap();
        let cfg = IntegrationConfig { dt: 1e-2, t_final: 1.0, cov_stride: 0 };
        let zero = Waveform::Constant { value: 0.0 };
        let r = force_posterior_std(&model, &(Array2::eye(2) * 0.5), &[ch.clone()], &array![0.0, 1.0], &zero, &cfg);
        assert!(matches!(r, Err(QmfsError::SingularInformation(_))));
        let one = Waveform::Constant { value: 1.0 };
        let r = force_posterior_std(&model, &(Array2::eye(2) * 0.5), &[ch], &array![0.0, 0.0], &one, &cfg);
        assert!(matches!(r, Err(QmfsError::SingularInformation(_))));
    }

    #[test]
    fn partial_transpose_flips_one_momentum() {
        let v = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64);
        let v = &v + &v.t();
        let pt = partial_transpose(&v, 1);
        assert_eq!(pt[[3, 0]], -v[[3, 0]]);
        assert_eq!(pt[[3, 3]], v[[3, 3]]);
        assert_eq!(pt[[1, 0]], v[[1, 0]]);
    }
}
