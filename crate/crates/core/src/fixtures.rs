//! JSON file formats for linear models and polynomial Koopman generators.
//!
//! Linear model:
//!
//! ```json
//! {"n_modes": 2, "hbar": 1.0, "G": [[...], ...],
//!  "force_couplings": [[0, 1, 0, 0]],
//!  "observables": [{"label": "Q", "s": [1, 0, 1, 0]}]}
//! ```
//!
//! Polynomial Koopman generator (exponents are scalars for one pair, arrays
//! for two):
//!
//! ```json
//! {"M": 1, "f": [{"a": 0, "b": 1, "coef": 1.0}], "g": [...], "h": []}
//! ```
//!
//! For `M = 2`, `f` and `g` are lists of term lists, one per pair. Unknown
//! keys are rejected.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{QmfsError, Result};
use crate::fock_oracle::PolyKoopman;
use crate::phase_space::{LinearModel, ObservableSet};
use crate::poly::{Monomial, Poly, TimeFactor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableEntry {
    pub label: String,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_modes: usize,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub force_couplings: Vec<Vec<f64>>,
    #[serde(default)]
    pub observables: Vec<ObservableEntry>,
}

fn one() -> f64 {
    1.0
}

impl ModelFile {
    pub fn build(&self) -> Result<(LinearModel, Option<ObservableSet>)> {
        let n = 2 * self.n_modes;
        if self.g.len() != n || self.g.iter().any(|r| r.len() != n) {
            return Err(QmfsError::Dimension(format!("G must be {n}x{n}")));
        }
        let g = Array2::from_shape_fn((n, n), |(i, j)| self.g[i][j]);
        let mut model = LinearModel::new(self.n_modes, self.hbar, g)?;
        for b in &self.force_couplings {
            model = model.with_force_coupling(Array1::from(b.clone()))?;
        }
        let set = if self.observables.is_empty() {
            None
        } else {
            let rows: Vec<(&str, Vec<f64>)> =
                self.observables.iter().map(|o| (o.label.as_str(), o.s.clone())).collect();
            let set = ObservableSet::from_rows(&rows)?;
            if set.rows().ncols() != n {
                return Err(QmfsError::Dimension(format!("observables must have length {n}")));
            }
            Some(set)
        };
        Ok((model, set))
    }

    pub fn from_model(model: &LinearModel, set: Option<&ObservableSet>) -> Self {
        let to_vecs = |a: &Array2<f64>| a.outer_iter().map(|r| r.to_vec()).collect();
        Self {
            n_modes: model.n_modes(),
            hbar: model.hbar(),
            g: to_vecs(model.hamiltonian()),
            force_couplings: model.force_couplings().iter().map(|b| b.to_vec()).collect(),
            observables: set
                .map(|s| {
                    s.labels()
                        .iter()
                        .zip(s.rows().outer_iter())
                        .map(|(l, r)| ObservableEntry { label: l.clone(), s: r.to_vec() })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
}

pub fn parse_model(json: &str) -> Result<(LinearModel, Option<ObservableSet>)> {
    serde_json::from_str::<ModelFile>(json)?.build()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Single(u32),
    Multi(Vec<u32>),
}

impl Exponent {
    fn to_vec(&self, pairs: usize) -> Result<Vec<u32>> {
        match self {
            Exponent::Single(k) if pairs == 1 => Ok(vec![*k]),
            Exponent::Multi(v) if v.len() == pairs => Ok(v.clone()),
            _ => Err(QmfsError::Dimension(format!("exponent does not match M = {pairs}"))),
        }
    }

    fn from_vec(v: &[u32]) -> Self {
        if v.len() == 1 {
            Exponent::Single(v[0])
        } else {
            Exponent::Multi(v.to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermEntry {
    pub a: Exponent,
    pub b: Exponent,
    pub coef: f64,
    #[serde(default, skip_serializing_if = "TimeFactor::is_constant")]
    pub time: TimeFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairTerms {
    /// `M = 1`: a single term list.
    Flat(Vec<TermEntry>),
    /// One term list per pair.
    Nested(Vec<Vec<TermEntry>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyKoopmanFile {
    #[serde(rename = "M")]
    pub m: usize,
    pub f: PairTerms,
    pub g: PairTerms,
    #[serde(default)]
    pub h: Vec<TermEntry>,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub omega: f64,
}

fn to_poly(terms: &[TermEntry], pairs: usize) -> Result<Poly> {
    terms
        .iter()
        .map(|t| {
            let mut m = Monomial::new(t.a.to_vec(pairs)?, t.b.to_vec(pairs)?, t.coef);
            m.time = t.time;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()
        .map(Poly::new)
}

fn from_poly(p: &Poly) -> Vec<TermEntry> {
    p.terms
        .iter()
        .map(|m| TermEntry {
            a: Exponent::from_vec(&m.q_pows),
            b: Exponent::from_vec(&m.pi_pows),
            coef: m.coef,
            time: m.time,
        })
        .collect()
}

fn per_pair(terms: &PairTerms, pairs: usize) -> Result<Vec<Poly>> {
    let lists: Vec<&[TermEntry]> = match terms {
        PairTerms::Flat(list) if pairs == 1 => vec![list.as_slice()],
        PairTerms::Nested(lists) => lists.iter().map(Vec::as_slice).collect(),
        PairTerms::Flat(_) => {
            return Err(QmfsError::Dimension("M = 2 needs one term list per pair".into()))
        }
    };
    if lists.len() != pairs {
        return Err(QmfsError::Dimension(format!("expected {pairs} term lists, got {}", lists.len())));
    }
    lists.into_iter().map(|l| to_poly(l, pairs)).collect()
}

impl PolyKoopmanFile {
    pub fn build(&self) -> Result<PolyKoopman> {
        let pk = PolyKoopman::new(
            per_pair(&self.f, self.m)?,
            per_pair(&self.g, self.m)?,
            to_poly(&self.h, self.m)?,
            self.hbar,
        )?;
        if !(self.mass > 0.0 && self.omega > 0.0) {
            return Err(QmfsError::InvalidInput("mass and omega scales must be positive".into()));
        }
        Ok(pk.with_scales(self.mass, self.omega))
    }

    pub fn from_koopman(pk: &PolyKoopman) -> Self {
        let wrap = |ps: &[Poly]| {
            if ps.len() == 1 {
                PairTerms::Flat(from_poly(&ps[0]))
            } else {
                PairTerms::Nested(ps.iter().map(from_poly).collect())
            }
        };
        Self {
            m: pk.pairs,
            f: wrap(&pk.f),
            g: wrap(&pk.g),
            h: from_poly(&pk.h),
            hbar: pk.hbar,
            mass: pk.mass,
            omega: pk.omega,
        }
    }
}

pub fn parse_poly_koopman(json: &str) -> Result<PolyKoopman> {
    serde_json::from_str::<PolyKoopmanFile>(json)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip() {
        let json = r#"{"n_modes": 1, "hbar": 0.5, "G": [[2, 0], [0, 1]],
            "force_couplings": [[0, 1]], "observables": [{"label": "q", "s": [1, 0]}]}"#;
        let (model, set) = parse_model(json).unwrap();
        assert_eq!(model.hbar(), 0.5);
        assert_eq!(set.as_ref().unwrap().labels(), &["q".to_string()]);
        let again = serde_json::to_string(&ModelFile::from_model(&model, set.as_ref())).unwrap();
        let (model2, _) = parse_model(&again).unwrap();
        assert_eq!(model2.drift(), model.drift());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_model(r#"{"n_modes": 1, "G": [[1,0],[0,1]], "extra": 1}"#).is_err());
        assert!(parse_poly_koopman(r#"{"M": 1, "f": [], "g": [], "k": []}"#).is_err());
    }

    #[test]
    fn koopman_round_trip() {
        let json = r#"{"M": 1, "f": [{"a": 0, "b": 1, "coef": 1.0}, {"a": 2, "b": 0, "coef": 0.1}],
            "g": [{"a": 1, "b": 0, "coef": 1.0}], "h": []}"#;
        let pk = parse_poly_koopman(json).unwrap();
        assert_eq!(pk.f[0].eval(&[2.0], &[3.0], 0.0), 3.0 + 0.4);
        let text = serde_json::to_string(&PolyKoopmanFile::from_koopman(&pk)).unwrap();
        assert_eq!(parse_poly_koopman(&text).unwrap(), pk);
    }

    #[test]
    fn two_pairs_need_nested_lists() {
        let json = r#"{"M": 2,
            "f": [[{"a": [0, 0], "b": [1, 0], "coef": 1.0}], [{"a": [0, 0], "b": [0, 1], "coef": 1.0}]],
            "g": [[{"a": [1, 0], "b": [0, 0], "coef": 1.0}], [{"a": [0, 1], "b": [0, 0], "coef": 1.0}]]}"#;
        assert_eq!(parse_poly_koopman(json).unwrap().pairs, 2);
        let flat = r#"{"M": 2, "f": [{"a": [0, 0], "b": [1, 0], "coef": 1.0}], "g": []}"#;
        assert!(parse_poly_koopman(flat).is_err());
    }
}
