//! Constructors for the concrete QMFS instances: a single (possibly
//! negative-mass) oscillator, the positive/negative-mass pair with its
//! collective/relative canonical transform, the two-sideband modulation
//! picture and the Holstein-Primakoff spin pair.

use std::collections::BTreeMap;

use ndarray::{array, Array1, Array2};

use crate::error::{QmfsError, Result};
use crate::phase_space::{LinearModel, ObservableSet};

pub const PHYSICAL_BASIS: &str = "physical";
pub const QMFS_BASIS: &str = "qmfs";

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: LinearModel,
    /// Change-of-basis matrices `T` with `y = T x`, keyed by basis name.
    pub named_bases: BTreeMap<String, Array2<f64>>,
    /// Observable sets known to be QMFSs, in physical coordinates.
    pub qmfs_sets: Vec<ObservableSet>,
    /// Other labelled observables (collective variables, quadrature amplitudes).
    pub observables: BTreeMap<String, ObservableSet>,
    pub metadata: BTreeMap<String, f64>,
    pub description: String,
}

impl ModelBundle {
    pub fn basis(&self, name: &str) -> Option<&Array2<f64>> {
        self.named_bases.get(name)
    }

    /// Looks up a single labelled row across the named observable sets and
    /// the QMFS sets.
    pub fn observable_row(&self, label: &str) -> Option<Array1<f64>> {
        self.observables
            .values()
            .chain(self.qmfs_sets.iter())
            .find_map(|set| set.row(label))
    }

    pub fn observable_set(&self, labels: &[&str]) -> Result<ObservableSet> {
        let rows = labels
            .iter()
            .map(|l| {
                self.observable_row(l)
                    .map(|r| (*l, r.to_vec()))
                    .ok_or_else(|| QmfsError::InvalidInput(format!("unknown observable {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ObservableSet::from_rows(&rows)
    }
}

fn check_params(m: f64, omega: f64, hbar: f64) -> Result<()> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(QmfsError::InvalidInput(format!("omega must be positive, got {omega}")));
    }
    if m == 0.0 || !m.is_finite() {
        return Err(QmfsError::InvalidInput(format!("mass must be finite and non-zero, got {m}")));
    }
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(QmfsError::InvalidInput(format!("hbar must be positive, got {hbar}")));
    }
    Ok(())
}

/// `H = p^2/2m + m omega^2 q^2/2`. A negative `m` inverts the whole
/// Hamiltonian: same frequency, reversed phase-space circulation.
pub fn single_oscillator(m: f64, omega: f64, hbar: f64) -> Result<ModelBundle> {
    check_params(m, omega, hbar)?;
    let g = array![[m * omega * omega, 0.0], [0.0, 1.0 / m]];
    let model = LinearModel::new(1, hbar, g)?.with_force_coupling(array![0.0, 1.0])?;
    let mut named_bases = BTreeMap::new();
    named_bases.insert(PHYSICAL_BASIS.to_string(), Array2::eye(2));
    let mut observables = BTreeMap::new();
    observables.insert(
        "physical".to_string(),
        ObservableSet::from_rows(&[("q", vec![1.0, 0.0]), ("p", vec![0.0, 1.0])])?,
    );
    let mut metadata = BTreeMap::new();
    metadata.insert("m".into(), m);
    metadata.insert("omega".into(), omega);
    Ok(ModelBundle {
        model,
        named_bases,
        qmfs_sets: Vec::new(),
        observables,
        metadata,
        description: format!("single oscillator, m = {m}, omega = {omega}"),
    })
}

/// Rows map `(q, p, q', p')` to `(Q, P, Phi, Pi)`:
/// `Q = q + q'`, `P = (p + p')/2`, `Phi = (q - q')/2`, `Pi = p - p'`.
pub fn collective_transform() -> Array2<f64> {
    array![
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 0.5, 0.0, 0.5],
        [0.5, 0.0, -0.5, 0.0],
        [0.0, 1.0, 0.0, -1.0]
    ]
}

/// Positive-mass oscillator `(q, p)` plus negative-mass oscillator
/// `(q', p')` at the same frequency. External force couples to `p`.
pub fn oscillator_pair(m: f64, omega: f64, hbar: f64) -> Result<ModelBundle> {
    check_params(m, omega, hbar)?;
    if m < 0.0 {
        return Err(QmfsError::InvalidInput("pair mass must be positive".into()));
    }
    let k = m * omega * omega;
    let g = Array2::from_diag(&array![k, 1.0 / m, -k, -1.0 / m]);
    let model = LinearModel::new(2, hbar, g)?.with_force_coupling(array![0.0, 1.0, 0.0, 0.0])?;

    let t = collective_transform();
    let mut named_bases = BTreeMap::new();
    named_bases.insert(PHYSICAL_BASIS.to_string(), Array2::eye(4));
    named_bases.insert(QMFS_BASIS.to_string(), t.clone());

    let row = |i: usize| t.row(i).to_vec();
    let q_pi = ObservableSet::from_rows(&[("Q", row(0)), ("Pi", row(3))])?;
    let phi_p = ObservableSet::from_rows(&[("Phi", row(2)), ("P", row(1))])?;

    let mut observables = BTreeMap::new();
    observables.insert(
        "physical".to_string(),
        ObservableSet::from_rows(&[
            ("q", vec![1.0, 0.0, 0.0, 0.0]),
            ("p", vec![0.0, 1.0, 0.0, 0.0]),
            ("q'", vec![0.0, 0.0, 1.0, 0.0]),
            ("p'", vec![0.0, 0.0, 0.0, 1.0]),
        ])?,
    );
    observables.insert(
        "collective".to_string(),
        ObservableSet::from_rows(&[("Q", row(0)), ("P", row(1)), ("Phi", row(2)), ("Pi", row(3))])?,
    );

    let mut metadata = BTreeMap::new();
    metadata.insert("m".into(), m);
    metadata.insert("omega".into(), omega);
    Ok(ModelBundle {
        model,
        named_bases,
        qmfs_sets: vec![q_pi, phi_p],
        observables,
        metadata,
        description: format!("positive/negative-mass oscillator pair, m = {m}, omega = {omega}"),
    })
}

/// Blue/red sidebands at `Omega +- omega` in the modulation picture, i.e.
/// the pair with `m = 1`, plus the quadrature amplitudes
///
/// ```text
/// alpha1 = (1/2) sqrt(omega/hbar) (Q + i Pi/omega)
/// alpha2 =       sqrt(omega/hbar) (-i Phi + P/omega)
/// ```
///
/// exposed as real `(Re, Im)` observable rows. The quadrature components of
/// the field `E = E1 cos(Omega t) + E2 sin(Omega t)` are
/// `E_k = sqrt(hbar Omega) (alpha_k + alpha_k^dagger)`; the carrier `Omega` is
/// not dynamical here and is only recorded as metadata when supplied.
pub fn sideband_model(omega_mod: f64, hbar: f64) -> Result<ModelBundle> {
    let mut bundle = oscillator_pair(1.0, omega_mod, hbar)?;
    let t = collective_transform();
    let scale = (omega_mod / hbar).sqrt();
    let q = t.row(0).to_owned();
    let p = t.row(1).to_owned();
    let phi = t.row(2).to_owned();
    let pi = t.row(3).to_owned();

    let alpha1 = ObservableSet::from_rows(&[
        ("Re alpha1", (&q * (0.5 * scale)).to_vec()),
        ("Im alpha1", (&pi * (0.5 * scale / omega_mod)).to_vec()),
    ])?;
    let alpha2 = ObservableSet::from_rows(&[
        ("Re alpha2", (&p * (scale / omega_mod)).to_vec()),
        ("Im alpha2", (&phi * (-scale)).to_vec()),
    ])?;
    bundle.observables.insert("alpha1".into(), alpha1);
    bundle.observables.insert("alpha2".into(), alpha2);
    bundle.description = format!("two-sideband modulation picture, omega = {omega_mod}");
    Ok(bundle)
}

/// Records the carrier frequency on a sideband bundle.
pub fn with_carrier(mut bundle: ModelBundle, carrier: f64) -> ModelBundle {
    bundle.metadata.insert("carrier".into(), carrier);
    bundle
}

/// Two oppositely polarized spin ensembles of size `J0` precessing at
/// `gamma_B0`, in the Holstein-Primakoff quadratic approximation with
/// `q = Jx/sqrt(J0)`, `p = Jy/sqrt(J0)`, `q' = Jx'/sqrt(J0)`, `p' = -Jy'/sqrt(J0)`:
///
/// `H = (gamma_B0/2)(q^2 + p^2 - q'^2 - p'^2)`.
///
/// This is the oscillator pair with `omega = gamma_B0` and `m = 1/gamma_B0`.
pub fn spin_pair_hp(j0: f64, gamma_b0: f64, hbar: f64) -> Result<ModelBundle> {
    if !(j0 > 0.0 && j0.is_finite()) {
        return Err(QmfsError::InvalidInput(format!("J0 must be positive, got {j0}")));
    }
    if !(gamma_b0 > 0.0 && gamma_b0.is_finite()) {
        return Err(QmfsError::InvalidInput(format!("gamma B0 must be positive, got {gamma_b0}")));
    }
    let mut bundle = oscillator_pair(1.0 / gamma_b0, gamma_b0, hbar)?;
    bundle.metadata.insert("J0".into(), j0);
    bundle.metadata.insert("gamma_B0".into(), gamma_b0);
    bundle.description = format!("Holstein-Primakoff spin pair, J0 = {j0}, gamma B0 = {gamma_b0}");
    Ok(bundle)
}
