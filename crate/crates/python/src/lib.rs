//! Python bindings: linear models and QMFS verdicts, conditional Gaussian
//! filtering, force estimation, the Koopman oracle, the spin sweep and
//! reversible circuits. Matrices cross the boundary as nested lists.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qmfs::conditional_gaussian::{
    augmented_posterior_std, force_posterior_std, simulate_batch, steady_covariance, GaussianState,
    IntegrationConfig, MeasurementChannel, RiccatiConfig, RiccatiProblem, Waveform,
};
use qmfs::error::QmfsError;
use qmfs::fixtures::parse_poly_koopman;
use qmfs::fock_oracle::{build_koopman_hamiltonian, commutator_residual, koopman_operators, Guard, Propagator};
use qmfs::model_library::{self, ModelBundle};
use qmfs::phase_space::{self, ObservableSet};
use qmfs::spin_exact;
use qmfs::stroboscopic::{self, BoolFunc};

fn err(e: QmfsError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array2(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]))
}

fn to_lists(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Quadratic model `H = x^T G x / 2` in `(q1, p1, q2, p2, ...)` order.
#[pyclass(name = "LinearModel", frozen)]
struct PyLinearModel {
    inner: phase_space::LinearModel,
    observables: BTreeMap<String, Vec<f64>>,
}

fn from_bundle(b: ModelBundle) -> PyLinearModel {
    let mut observables = BTreeMap::new();
    for set in b.observables.values().chain(&b.qmfs_sets) {
        for (label, row) in set.labels().iter().zip(set.rows().outer_iter()) {
            observables.entry(label.clone()).or_insert_with(|| row.to_vec());
        }
    }
    PyLinearModel { inner: b.model, observables }
}

impl PyLinearModel {
    fn set(&self, labels: &[String]) -> PyResult<ObservableSet> {
        let rows = labels
            .iter()
            .map(|l| {
                self.observables
                    .get(l)
                    .map(|r| (l.as_str(), r.clone()))
                    .ok_or_else(|| PyValueError::new_err(format!("unknown observable {l}")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        ObservableSet::from_rows(&rows).map_err(err)
    }

    fn channels(&self, labels: &[String], k: f64, eta: f64) -> PyResult<Vec<MeasurementChannel>> {
        labels
            .iter()
            .map(|l| {
                let s = self.observables.get(l).ok_or_else(|| PyValueError::new_err(format!("unknown observable {l}")))?;
                MeasurementChannel::new(Array1::from(s.clone()), k, eta).map_err(err)
            })
            .collect()
    }
}

#[pymethods]
impl PyLinearModel {
    #[new]
    #[pyo3(signature = (n_modes, g, hbar = 1.0, force_couplings = Vec::new()))]
    fn new(n_modes: usize, g: Vec<Vec<f64>>, hbar: f64, force_couplings: Vec<Vec<f64>>) -> PyResult<Self> {
        let mut model = phase_space::LinearModel::new(n_modes, hbar, to_array2(&g)?).map_err(err)?;
        for b in force_couplings {
            model = model.with_force_coupling(Array1::from(b)).map_err(err)?;
        }
        let mut observables = BTreeMap::new();
        for k in 0..n_modes {
            let mut q = vec![0.0; 2 * n_modes];
            q[2 * k] = 1.0;
            let mut p = vec![0.0; 2 * n_modes];
            p[2 * k + 1] = 1.0;
            observables.insert(format!("q{k}"), q);
            observables.insert(format!("p{k}"), p);
        }
        Ok(Self { inner: model, observables })
    }

    /// Builtin model by name: single, pair, sideband or spin-hp.
    #[staticmethod]
    #[pyo3(signature = (name, m = 1.0, omega = 1.0, hbar = 1.0, j0 = 8.0))]
    fn builtin(name: &str, m: f64, omega: f64, hbar: f64, j0: f64) -> PyResult<Self> {
        let bundle = match name {
            "single" => model_library::single_oscillator(m, omega, hbar),
            "pair" => model_library::oscillator_pair(m, omega, hbar),
            "sideband" => model_library::sideband_model(omega, hbar),
            "spin-hp" => model_library::spin_pair_hp(j0, omega, hbar),
            other => return Err(PyValueError::new_err(format!("unknown model {other}"))),
        }
        .map_err(err)?;
        Ok(from_bundle(bundle))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn observables(&self) -> BTreeMap<String, Vec<f64>> {
        self.observables.clone()
    }

    fn drift(&self) -> Vec<Vec<f64>> {
        to_lists(self.inner.drift())
    }

    fn transfer_matrix(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_lists(&self.inner.transfer_matrix(t).map_err(err)?))
    }

    /// `(is_qmfs, max_scaled_residual, witness)` with witness
    /// `(i, j, row, col)` or None.
    fn is_qmfs(&self, labels: Vec<String>) -> PyResult<(bool, f64, Option<(usize, usize, usize, usize)>)> {
        let r = phase_space::is_qmfs(&self.inner, &self.set(&labels)?).map_err(err)?;
        Ok((r.is_qmfs(), r.max_scaled_residual, r.witness.map(|w| (w.i, w.j, w.row, w.col))))
    }

    /// Imaginary part of `[X_a(t), X_b(t')]` for the labelled observables.
    fn two_time_commutator(&self, labels: Vec<String>, t: f64, t_prime: f64) -> PyResult<Vec<Vec<f64>>> {
        let k = phase_space::two_time_commutator(&self.inner, &self.set(&labels)?, t, t_prime).map_err(err)?;
        Ok(k.outer_iter().map(|r| r.iter().map(|z| z.im).collect()).collect())
    }

    fn max_commutator_on_grid(&self, labels: Vec<String>, times: Vec<f64>) -> PyResult<f64> {
        phase_space::max_commutator_on_grid(&self.inner, &self.set(&labels)?, &times).map_err(err)
    }

    /// Stationary conditional covariance under continuous measurement.
    #[pyo3(signature = (measured, k, eta = 1.0))]
    fn steady_covariance(&self, measured: Vec<String>, k: f64, eta: f64) -> PyResult<Vec<Vec<f64>>> {
        let channels = self.channels(&measured, k, eta)?;
        let problem = RiccatiProblem::new(&self.inner, &channels).map_err(err)?;
        let v0 = Array2::eye(self.inner.dim()) * (self.inner.hbar() / 2.0);
        let steady = steady_covariance(&problem, &v0, &RiccatiConfig::default()).map_err(err)?;
        Ok(to_lists(&steady.cov))
    }

    /// Seeded conditional trajectories; each is `(times, means, records)`.
    #[pyo3(signature = (measured, k, eta = 1.0, dt = 0.01, t_final = 1.0, seed = 0, batch = 1))]
    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn simulate(
        &self,
        measured: Vec<String>,
        k: f64,
        eta: f64,
        dt: f64,
        t_final: f64,
        seed: u64,
        batch: usize,
    ) -> PyResult<Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
        let channels = self.channels(&measured, k, eta)?;
        let state = GaussianState::isotropic(&self.inner, Array1::zeros(self.inner.dim())).map_err(err)?;
        let cfg = IntegrationConfig { dt, t_final, cov_stride: 0 };
        let trajs = simulate_batch(&self.inner, &state, &channels, None, &cfg, seed, batch, true).map_err(err)?;
        Ok(trajs.into_iter().map(|t| (t.times, to_lists(&t.means), to_lists(&t.records))).collect())
    }

    /// Posterior std of a `sin(frequency t)` force amplitude by the filter
    /// sensitivity route and by the augmented Riccati flow.
    #[pyo3(signature = (measured, k, eta = 1.0, frequency = 1.0, dt = 0.01, t_final = 20.0))]
    fn force_posterior_std(
        &self,
        measured: Vec<String>,
        k: f64,
        eta: f64,
        frequency: f64,
        dt: f64,
        t_final: f64,
    ) -> PyResult<(f64, f64)> {
        let channels = self.channels(&measured, k, eta)?;
        let coupling = self
            .inner
            .force_couplings()
            .first()
            .cloned()
            .ok_or_else(|| PyValueError::new_err("model has no force coupling"))?;
        let template = Waveform::Sinusoid { amplitude: 1.0, frequency, phase: 0.0 };
        let cfg = IntegrationConfig { dt, t_final, cov_stride: 0 };
        let v0 = Array2::eye(self.inner.dim()) * (self.inner.hbar() / 2.0);
        let filter = force_posterior_std(&self.inner, &v0, &channels, &coupling, &template, &cfg).map_err(err)?;
        let augmented =
            augmented_posterior_std(&self.inner, &v0, &channels, &coupling, &template, &cfg, 100.0).map_err(err)?;
        Ok((filter, augmented))
    }
}

/// Guarded two-time commutator residual of the Koopman variables `(Q, Pi)`
/// for a PolyKoopman JSON document, on a low-lying guard.
#[pyfunction]
#[pyo3(signature = (generator_json, levels, times, guard_excitation = 2))]
fn koopman_residual(generator_json: &str, levels: usize, times: Vec<f64>, guard_excitation: usize) -> PyResult<f64> {
    let pk = parse_poly_koopman(generator_json).map_err(err)?;
    let space = pk.space(levels).map_err(err)?;
    let h = build_koopman_hamiltonian(&pk, &space).map_err(err)?;
    let prop = Propagator::new(&h, pk.hbar).map_err(err)?;
    let ops = koopman_operators(&space, pk.pairs).map_err(err)?;
    let vars: Vec<_> = ops.q.iter().chain(&ops.pi).cloned().collect();
    let r = commutator_residual(&prop, &space, &vars, &times, Guard::LowLying(guard_excitation)).map_err(err)?;
    Ok(r.max_residual)
}

/// Rows `(J0, residual_norm, low_excitation_norm, hp_deviation)`.
#[pyfunction]
#[pyo3(signature = (j_values, gamma_b0 = 1.0, hbar = 1.0, displacement = 0.4))]
fn spin_sweep(j_values: Vec<f64>, gamma_b0: f64, hbar: f64, displacement: f64) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let rows = spin_exact::sweep(&j_values, gamma_b0, hbar, displacement, (0.3, 1.4), 2).map_err(err)?;
    Ok(rows.into_iter().map(|r| (r.j0, r.residual_norm, r.low_excitation_norm, r.hp_deviation)).collect())
}

/// X / CX / CCX circuit.
#[pyclass(name = "ReversibleCircuit", frozen)]
struct PyCircuit {
    inner: stroboscopic::ReversibleCircuit,
}

#[pymethods]
impl PyCircuit {
    /// Parses the `bits N` text format.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: text.parse().map_err(err)? })
    }

    /// Synthesizes targets given as truth tables (lists of 0/1 of length 2^n).
    /// Returns the circuit and the bit holding each target.
    #[staticmethod]
    fn synthesize(tables: Vec<Vec<bool>>) -> PyResult<(Self, Vec<usize>)> {
        let targets = tables.iter().map(|t| BoolFunc::from_table(t)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let s = stroboscopic::build_classical_function(&targets).map_err(err)?;
        if !s.verify(&targets).map_err(err)? {
            return Err(PyValueError::new_err("synthesized circuit failed verification"));
        }
        Ok((Self { inner: s.circuit }, s.output_bits))
    }

    #[getter]
    fn n_bits(&self) -> usize {
        self.inner.n_bits()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn apply(&self, x: usize) -> PyResult<usize> {
        if x >> self.inner.n_bits() != 0 {
            return Err(PyValueError::new_err("input out of range"));
        }
        Ok(self.inner.apply(x))
    }

    /// Truth table of the Heisenberg image of `Z_j`.
    fn propagate_z(&self, j: usize) -> PyResult<Vec<bool>> {
        let f = stroboscopic::propagate_z(&self.inner, j).map_err(err)?;
        Ok((0..f.len()).map(|x| f.eval(x)).collect())
    }

    /// True when the dense integer conjugation matches `propagate_z` exactly.
    fn verify_dense(&self) -> PyResult<bool> {
        Ok(stroboscopic::dense_oracle_check(&self.inner).map_err(err)?.is_exact())
    }
}

#[pymodule]
fn pyqmfs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearModel>()?;
    m.add_class::<PyCircuit>()?;
    m.add_function(wrap_pyfunction!(koopman_residual, m)?)?;
    m.add_function(wrap_pyfunction!(spin_sweep, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
