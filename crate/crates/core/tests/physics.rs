use ndarray::{array, Array1, Array2};

use qmfs::conditional_gaussian::{
    backaction_diffusion, force_posterior_std, simulate_batch, GaussianState, IntegrationConfig, MeasurementChannel,
    Waveform,
};
use qmfs::fock_oracle::{expectation, FockSpace, PolyKoopman, Propagator, TruncationSpec};
use qmfs::koopman_classical::{flow_map, hamiltonian_flow, integrate, transport_density, ClassicalFlow, WeightedSamples};
use qmfs::linalg::C64;
use qmfs::model_library::{oscillator_pair, single_oscillator};
use qmfs::phase_space::transfer_function;
use qmfs::poly::{Monomial, Poly};

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn linear_moments_match_fock_evolution() {
    // Basis scales deliberately differ from the model so H is not diagonal.
    let (m, w, hbar) = (1.3, 0.8, 1.0);
    let model = single_oscillator(m, w, hbar).unwrap().model;
    let space = FockSpace::new(TruncationSpec::new(60, 1).unwrap(), hbar, 1.0, 1.0).unwrap();
    let h = space.quadratic_hamiltonian(model.hamiltonian()).unwrap();
    let prop = Propagator::new(&h, hbar).unwrap();
    let (q, p) = space.quadratures(0);
    let psi0 = space.coherent_state(&[C64::new(0.4, -0.3)]).unwrap();

    let moments = |psi: &Array1<C64>| {
        let ops = [&q, &p];
        let mean = Array1::from_shape_fn(2, |i| expectation(ops[i], psi).re);
        let cov = Array2::from_shape_fn((2, 2), |(i, j)| {
            let sym = (ops[i].dot(ops[j]) + ops[j].dot(ops[i])) * C64::new(0.5, 0.0);
            expectation(&sym, psi).re - mean[i] * mean[j]
        });
        (mean, cov)
    };
    let (mean0, cov0) = moments(&psi0);
    for t in [0.3, 1.1, 2.5, 4.0] {
        let phi = model.transfer_matrix(t).unwrap();
        let (mean, cov) = moments(&prop.evolve_state(&psi0, t));
        assert!((&mean - &phi.dot(&mean0)).iter().all(|x| x.abs() < 1e-7), "t = {t}");
        assert!(max_abs(&(&cov - &phi.dot(&cov0).dot(&phi.t()))) < 1e-7, "t = {t}");
    }
}

#[test]
fn negative_mass_pair_is_number_difference() {
    let (m, w, hbar, n) = (0.7, 1.6, 1.0, 7);
    let bundle = oscillator_pair(m, w, hbar).unwrap();
    let space = FockSpace::new(TruncationSpec::new(n, 2).unwrap(), hbar, m, w).unwrap();
    let h = space.quadratic_hamiltonian(bundle.model.hamiltonian()).unwrap();
    // Away from the top level of either mode, H = hbar w (n1 - n2).
    for i in 0..space.dim() {
        let oi = space.spec.occupations(i);
        for j in 0..space.dim() {
            let oj = space.spec.occupations(j);
            if oi.iter().chain(&oj).any(|&k| k + 1 >= n) {
                continue;
            }
            let expect = if i == j { hbar * w * (oi[0] as f64 - oi[1] as f64) } else { 0.0 };
            assert!((h[[i, j]] - C64::new(expect, 0.0)).norm() < 1e-12, "{oi:?} {oj:?}");
        }
    }
}

#[test]
fn transfer_function_has_oscillator_resonance() {
    let (m, w) = (2.0, 1.5);
    let model = single_oscillator(m, w, 1.0).unwrap().model;
    let c = array![1.0, 0.0];
    let b = array![0.0, 1.0];
    for f in [0.1, 0.9, 1.4, 1.6, 3.0] {
        let value = transfer_function(&model, &c, &b, f).unwrap();
        let expect = 1.0 / (m * (w * w - f * f)).abs();
        assert!((value.norm() - expect).abs() < 1e-10 * expect, "f = {f}");
    }
}

#[test]
fn gaussian_ensemble_under_linear_flow() {
    let (m, w) = (1.0, 1.3);
    let flow = ClassicalFlow::from_koopman(&PolyKoopman::harmonic(m, w, 1.0).unwrap(), 1e-3).unwrap();
    let mean = array![0.4, -0.2];
    let cov = array![[0.5, 0.1], [0.1, 0.3]];
    let samples = WeightedSamples::gauss_hermite(&mean, &cov, 6).unwrap();
    let t: f64 = 1.7;
    let out = transport_density(&flow, &samples, t).unwrap();
    let (c, s) = ((w * t).cos(), (w * t).sin());
    // Q' = Pi/m, Pi' = -m w^2 Q
    let phi = array![[c, s / (m * w)], [-m * w * s, c]];
    assert!((&out.mean - &phi.dot(&mean)).iter().all(|x| x.abs() < 1e-9));
    assert!(max_abs(&(&out.cov - &phi.dot(&cov).dot(&phi.t()))) < 1e-9);
    let point = flow_map(&flow, &[0.4, -0.2], t).unwrap();
    assert!((&point - &out.mean).iter().all(|x| x.abs() < 1e-9));
}

#[test]
fn anharmonic_hamiltonian_flow_conserves_energy() {
    let h = Poly::new(vec![
        Monomial::single(2, 0, 0.5),
        Monomial::single(0, 2, 0.5),
        Monomial::single(4, 0, 0.1),
    ]);
    let flow = hamiltonian_flow(1, &h, 1e-3).unwrap();
    let traj = integrate(&flow, &[0.8, 0.3], 10.0).unwrap();
    let e0 = h.eval(&[0.8], &[0.3], 0.0);
    let end = traj.final_state();
    let e1 = h.eval(&[end[0]], &[end[1]], 0.0);
    assert!((e1 - e0).abs() < 1e-9 * e0.abs());
}

/// Unconditional covariance: `V' = A V + V A^T + D` by plain RK4.
fn lyapunov(a: &Array2<f64>, d: &Array2<f64>, v0: &Array2<f64>, t: f64, steps: usize) -> Array2<f64> {
    let h = t / steps as f64;
    let f = |v: &Array2<f64>| a.dot(v) + v.dot(&a.t()) + d;
    let mut v = v0.clone();
    for _ in 0..steps {
        let k1 = f(&v);
        let k2 = f(&(&v + &(&k1 * (h / 2.0))));
        let k3 = f(&(&v + &(&k2 * (h / 2.0))));
        let k4 = f(&(&v + &(&k3 * h)));
        v = &v + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
    }
    v
}

#[test]
fn ensemble_of_conditional_states_reproduces_heating() {
    let model = single_oscillator(1.0, 1.0, 1.0).unwrap().model;
    let channel = MeasurementChannel::new(array![1.0, 0.0], 1.0, 1.0).unwrap();
    let state = GaussianState::isotropic(&model, Array1::zeros(2)).unwrap();
    let cfg = IntegrationConfig { dt: 2e-3, t_final: 2.0, cov_stride: 0 };
    let n = 400;
    let runs = simulate_batch(&model, &state, &[channel.clone()], None, &cfg, 11, n, true).unwrap();

    let d = backaction_diffusion(&model, &channel).unwrap();
    let expect = lyapunov(model.drift(), &d, state.cov(), cfg.t_final, 4000);
    let cond = runs[0].final_cov().clone();
    for i in 0..2 {
        for j in 0..2 {
            let products: Vec<f64> = runs
                .iter()
                .map(|r| {
                    let mu = r.final_mean();
                    mu[i] * mu[j]
                })
                .collect();
            let avg = products.iter().sum::<f64>() / n as f64;
            let var = products.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let gap = (avg + cond[[i, j]] - expect[[i, j]]).abs();
            assert!(gap < 4.0 * se + 1e-3, "({i},{j}): gap {gap}, se {se}");
        }
    }
}

fn force_std(bundle_pair: bool, k: f64, eta: f64) -> f64 {
    let bundle = if bundle_pair { oscillator_pair(1.0, 1.0, 1.0) } else { single_oscillator(1.0, 1.0, 1.0) }.unwrap();
    let label = if bundle_pair { "Q" } else { "q" };
    let s = bundle.observable_row(label).unwrap();
    let channel = MeasurementChannel::new(s, k, eta).unwrap();
    let v0 = Array2::eye(bundle.model.dim()) * 0.5;
    let template = Waveform::Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
    let cfg = IntegrationConfig { dt: 1e-2, t_final: 20.0, cov_stride: 0 };
    let coupling = bundle.model.force_couplings()[0].clone();
    force_posterior_std(&bundle.model, &v0, &[channel], &coupling, &template, &cfg).unwrap()
}

#[test]
fn qmfs_force_width_depends_only_on_detected_rate() {
    // Back action never reaches the measured QMFS, so only k eta matters.
    let a = force_std(true, 4.0, 0.5);
    let b = force_std(true, 2.0, 1.0);
    assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
    let single_a = force_std(false, 4.0, 0.5);
    let single_b = force_std(false, 2.0, 1.0);
    assert!((single_a - single_b).abs() > 1e-3 * single_b);
}

#[test]
fn qmfs_force_width_scales_as_inverse_root_efficiency() {
    // Holds once the record, not the initial-state prior, carries the information;
    // the prior can only narrow the width further.
    let full = force_std(true, 16.0, 1.0);
    for eta in [0.5, 0.25] {
        let ratio = force_std(true, 16.0, eta) / full;
        let expect = 1.0 / eta.sqrt();
        assert!(ratio <= expect * (1.0 + 1e-9), "eta = {eta}: {ratio} vs {expect}");
        assert!((ratio - expect).abs() < 0.05 * expect, "eta = {eta}: {ratio} vs {expect}");
    }
}
