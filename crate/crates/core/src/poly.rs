//! Real polynomials in the QMFS variables `(Q_1..Q_M, Pi_1..Pi_M)` with
//! optional separable time factors, shared by the Fock oracle and the
//! classical flow.

use serde::{Deserialize, Serialize};

use crate::error::{QmfsError, Result};

/// Default cap on total polynomial degree.
pub const MAX_DEGREE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFactor {
    #[default]
    Constant,
    /// `cos(frequency t + phase)`
    Cos { frequency: f64, phase: f64 },
}

impl TimeFactor {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::Constant => 1.0,
            TimeFactor::Cos { frequency, phase } => (frequency * t + phase).cos(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFactor::Constant)
    }
}

/// `coef * tau(t) * prod_j Q_j^q_pows[j] Pi_j^pi_pows[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub q_pows: Vec<u32>,
    pub pi_pows: Vec<u32>,
    pub coef: f64,
    pub time: TimeFactor,
}

impl Monomial {
    pub fn new(q_pows: Vec<u32>, pi_pows: Vec<u32>, coef: f64) -> Self {
        Self { q_pows, pi_pows, coef, time: TimeFactor::Constant }
    }

    /// Single-pair shorthand `coef Q^a Pi^b`.
    pub fn single(a: u32, b: u32, coef: f64) -> Self {
        Self::new(vec![a], vec![b], coef)
    }

    pub fn degree(&self) -> u32 {
        self.q_pows.iter().chain(&self.pi_pows).sum()
    }

    fn eval(&self, q: &[f64], pi: &[f64], t: f64) -> f64 {
        let mut v = self.coef * self.time.value(t);
        for (x, &k) in q.iter().zip(&self.q_pows) {
            v *= x.powi(k as i32);
        }
        for (x, &k) in pi.iter().zip(&self.pi_pows) {
            v *= x.powi(k as i32);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    pub terms: Vec<Monomial>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<Monomial>) -> Self {
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|m| m.coef == 0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_time_dependent(&self) -> bool {
        self.terms.iter().any(|m| !m.time.is_constant())
    }

    pub fn eval(&self, q: &[f64], pi: &[f64], t: f64) -> f64 {
        self.terms.iter().map(|m| m.eval(q, pi, t)).sum()
    }

    pub fn d_dq(&self, j: usize) -> Poly {
        self.derivative(j, true)
    }

    pub fn d_dpi(&self, j: usize) -> Poly {
        self.derivative(j, false)
    }

    fn derivative(&self, j: usize, wrt_q: bool) -> Poly {
        let terms = self
            .terms
            .iter()
            .filter_map(|m| {
                let pows = if wrt_q { &m.q_pows } else { &m.pi_pows };
                let k = *pows.get(j)?;
                if k == 0 {
                    return None;
                }
                let mut d = m.clone();
                d.coef *= k as f64;
                if wrt_q {
                    d.q_pows[j] -= 1;
                } else {
                    d.pi_pows[j] -= 1;
                }
                Some(d)
            })
            .collect();
        Poly { terms }
    }

    pub fn validate(&self, pairs: usize, max_degree: u32) -> Result<()> {
        for m in &self.terms {
            if m.q_pows.len() != pairs || m.pi_pows.len() != pairs {
                return Err(QmfsError::Dimension(format!(
                    "monomial has {} / {} exponents for {pairs} pairs",
                    m.q_pows.len(),
                    m.pi_pows.len()
                )));
            }
            if !m.coef.is_finite() {
                return Err(QmfsError::InvalidInput("non-finite polynomial coefficient".into()));
            }
            if m.degree() > max_degree {
                return Err(QmfsError::InvalidInput(format!(
                    "monomial degree {} exceeds cap {max_degree}",
                    m.degree()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivatives() {
        // 3 Q^2 Pi + 0.5 Pi^2
        let p = Poly::new(vec![Monomial::single(2, 1, 3.0), Monomial::single(0, 2, 0.5)]);
        assert_eq!(p.eval(&[2.0], &[3.0], 0.0), 3.0 * 4.0 * 3.0 + 0.5 * 9.0);
        assert_eq!(p.d_dq(0).eval(&[2.0], &[3.0], 0.0), 6.0 * 2.0 * 3.0);
        assert_eq!(p.d_dpi(0).eval(&[2.0], &[3.0], 0.0), 3.0 * 4.0 + 3.0);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn degree_cap() {
        let p = Poly::new(vec![Monomial::single(5, 0, 1.0)]);
        assert!(p.validate(1, MAX_DEGREE).is_err());
        let p = Poly::new(vec![Monomial::new(vec![1, 0], vec![0, 0], 1.0)]);
        assert!(p.validate(1, MAX_DEGREE).is_err());
    }

    #[test]
    fn time_factor() {
        let mut m = Monomial::single(0, 0, 2.0);
        m.time = TimeFactor::Cos { frequency: 2.0, phase: 0.0 };
        let p = Poly::new(vec![m]);
        assert!(p.is_time_dependent());
        assert!((p.eval(&[0.0], &[0.0], 0.5) - 2.0 * 1f64.cos()).abs() < 1e-15);
    }
}
