//! Reversible circuits as discrete-time classical subsystems.
//!
//! A circuit of X, CX and CCX gates permutes computational basis states,
//! `U|x> = |pi(x)>`, so every Heisenberg image `U^dag Z_j U` is diagonal with
//! entries `(-1)^{f_j(x)}`, `f_j(x) = bit j of pi(x)`. Bit `j` of a basis index
//! is `(x >> j) & 1`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QmfsError, Result};

pub const MAX_BITS: usize = 16;
pub const MAX_DENSE_BITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    X(usize),
    Cx(usize, usize),
    Ccx(usize, usize, usize),
}

impl Gate {
    fn indices(&self) -> Vec<usize> {
        match *self {
            Gate::X(t) => vec![t],
            Gate::Cx(c, t) => vec![c, t],
            Gate::Ccx(a, b, t) => vec![a, b, t],
        }
    }

    pub fn target(&self) -> usize {
        match *self {
            Gate::X(t) | Gate::Cx(_, t) | Gate::Ccx(_, _, t) => t,
        }
    }

    pub fn apply(&self, x: usize) -> usize {
        let bit = |i: usize| (x >> i) & 1 == 1;
        let flip = match *self {
            Gate::X(_) => true,
            Gate::Cx(c, _) => bit(c),
            Gate::Ccx(a, b, _) => bit(a) && bit(b),
        };
        if flip {
            x ^ (1 << self.target())
        } else {
            x
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::X(t) => write!(f, "X {t}"),
            Gate::Cx(c, t) => write!(f, "CX {c} {t}"),
            Gate::Ccx(a, b, t) => write!(f, "CCX {a} {b} {t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReversibleCircuit {
    n_bits: usize,
    gates: Vec<Gate>,
}

impl ReversibleCircuit {
    pub fn new(n_bits: usize, gates: Vec<Gate>) -> Result<Self> {
        if n_bits == 0 || n_bits > MAX_BITS {
            return Err(QmfsError::InvalidInput(format!(
                "bit count must be in 1..={MAX_BITS}, got {n_bits}"
            )));
        }
        for (k, g) in gates.iter().enumerate() {
            let idx = g.indices();
            if idx.iter().any(|&i| i >= n_bits) {
                return Err(QmfsError::InvalidInput(format!("gate {k} ({g}) index out of range")));
            }
            for a in 0..idx.len() {
                if idx[a + 1..].contains(&idx[a]) {
                    return Err(QmfsError::InvalidInput(format!("gate {k} ({g}) repeats a bit")));
                }
            }
        }
        Ok(Self { n_bits, gates })
    }

    pub fn empty(n_bits: usize) -> Result<Self> {
        Self::new(n_bits, Vec::new())
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn apply(&self, x: usize) -> usize {
        self.gates.iter().fold(x, |x, g| g.apply(x))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &ReversibleCircuit) -> Result<ReversibleCircuit> {
        if self.n_bits != next.n_bits {
            return Err(QmfsError::Dimension("circuits act on different bit counts".into()));
        }
        let mut gates = self.gates.clone();
        gates.extend_from_slice(&next.gates);
        Self::new(self.n_bits, gates)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("bits {}\n", self.n_bits);
        for g in &self.gates {
            s.push_str(&format!("{g}\n"));
        }
        s
    }
}

impl FromStr for ReversibleCircuit {
    type Err = QmfsError;

    /// `bits N` followed by one `X t`, `CX c t` or `CCX c1 c2 t` per line.
    /// Blank lines and `#` comments are ignored.
    fn from_str(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| QmfsError::Parse { line, message };
        let mut n_bits = None;
        let mut gates = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let args: Vec<usize> = words[1..]
                .iter()
                .map(|w| w.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(line_no, format!("bad index in {line:?}: {e}")))?;
            if n_bits.is_none() {
                if words[0] != "bits" || args.len() != 1 {
                    return Err(parse_err(line_no, "first line must be `bits N`".into()));
                }
                n_bits = Some(args[0]);
                continue;
            }
            let gate = match (words[0], args.as_slice()) {
                ("X", &[t]) => Gate::X(t),
                ("CX", &[c, t]) => Gate::Cx(c, t),
                ("CCX", &[a, b, t]) => Gate::Ccx(a, b, t),
                _ => return Err(parse_err(line_no, format!("unknown gate line {line:?}"))),
            };
            gates.push(gate);
        }
        let n_bits = n_bits.ok_or_else(|| parse_err(0, "missing `bits N` header".into()))?;
        ReversibleCircuit::new(n_bits, gates)
    }
}

/// Basis permutation `x -> pi(x)` of a circuit.
pub fn circuit_permutation(c: &ReversibleCircuit) -> Vec<usize> {
    (0..1usize << c.n_bits).map(|x| c.apply(x)).collect()
}

/// Truth table over `n` input bits, packed 64 entries per word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoolFunc {
    n_inputs: usize,
    words: Vec<u64>,
}

impl BoolFunc {
    pub fn from_fn(n_inputs: usize, f: impl Fn(usize) -> bool) -> Result<Self> {
        if n_inputs > MAX_BITS {
            return Err(QmfsError::InvalidInput(format!("at most {MAX_BITS} inputs")));
        }
        let len = 1usize << n_inputs;
        let mut words = vec![0u64; len.div_ceil(64)];
        for x in 0..len {
            if f(x) {
                words[x / 64] |= 1 << (x % 64);
            }
        }
        Ok(Self { n_inputs, words })
    }

    pub fn from_table(table: &[bool]) -> Result<Self> {
        let n = table.len().trailing_zeros() as usize;
        if table.len() != 1 << n {
            return Err(QmfsError::InvalidInput(format!(
                "truth table length {} is not a power of two",
                table.len()
            )));
        }
        Self::from_fn(n, |x| table[x])
    }

    /// `f(x) = x_j`.
    pub fn projection(n_inputs: usize, j: usize) -> Result<Self> {
        Self::from_fn(n_inputs, |x| (x >> j) & 1 == 1)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn len(&self) -> usize {
        1 << self.n_inputs
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, x: usize) -> bool {
        (self.words[x / 64] >> (x % 64)) & 1 == 1
    }

    /// Diagonal of the operator this function represents, `(-1)^{f(x)}`.
    pub fn signs(&self) -> Vec<i32> {
        (0..self.len()).map(|x| if self.eval(x) { -1 } else { 1 }).collect()
    }

    /// Index `j` when `f(x) = x_j`.
    pub fn as_projection(&self) -> Option<usize> {
        (0..self.n_inputs).find(|&j| (0..self.len()).all(|x| self.eval(x) == ((x >> j) & 1 == 1)))
    }

    /// Algebraic normal form: monomials (as input bit masks) whose XOR is `f`.
    pub fn anf(&self) -> Vec<usize> {
        let mut coef: Vec<bool> = (0..self.len()).map(|x| self.eval(x)).collect();
        for j in 0..self.n_inputs {
            for x in 0..self.len() {
                if (x >> j) & 1 == 1 {
                    coef[x] ^= coef[x ^ (1 << j)];
                }
            }
        }
        (0..self.len()).filter(|&m| coef[m]).collect()
    }
}

/// Heisenberg image of `Z_j`: `f_j(x) = bit j of pi(x)`.
pub fn propagate_z(c: &ReversibleCircuit, j: usize) -> Result<BoolFunc> {
    if j >= c.n_bits {
        return Err(QmfsError::InvalidInput(format!("bit {j} outside a {}-bit circuit", c.n_bits)));
    }
    BoolFunc::from_fn(c.n_bits, |x| (c.apply(x) >> j) & 1 == 1)
}

/// Image of `Z_j` after `first` then a later stage whose image is `later`:
/// `x -> later(pi_first(x))`.
pub fn compose(later: &BoolFunc, first: &ReversibleCircuit) -> Result<BoolFunc> {
    if later.n_inputs != first.n_bits {
        return Err(QmfsError::Dimension("stage widths differ".into()));
    }
    BoolFunc::from_fn(first.n_bits, |x| later.eval(first.apply(x)))
}

/// Dense integer matrix product that skips zero entries of `a`.
fn int_matmul(a: &Array2<i32>, b: &Array2<i32>) -> Array2<i32> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for ((i, k), &v) in a.indexed_iter() {
        if v != 0 {
            let row = &b.row(k) * v;
            let mut target = out.row_mut(i);
            target += &row;
        }
    }
    out
}

fn kron_int(a: &Array2<i32>, b: &Array2<i32>) -> Array2<i32> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| a[[i / rb, j / cb]] * b[[i % rb, j % cb]])
}

/// `ops[j]` on qubit `j`, identity elsewhere; qubit `n-1` is the most
/// significant tensor factor so that bit `j` of the index belongs to qubit `j`.
fn tensor(n: usize, mut local: impl FnMut(usize) -> Array2<i32>) -> Array2<i32> {
    let mut out = Array2::from_elem((1, 1), 1);
    for q in (0..n).rev() {
        out = kron_int(&out, &local(q));
    }
    out
}

fn pauli_z_dense(n: usize, j: usize) -> Array2<i32> {
    tensor(n, |q| if q == j { ndarray::array![[1, 0], [0, -1]] } else { Array2::eye(2) })
}

/// Gate unitary from its operator definition, e.g.
/// `CCX = I - P1(a) P1(b) (I - X_t)` with `P1 = |1><1|`.
pub fn gate_unitary(n: usize, gate: &Gate) -> Array2<i32> {
    let id = || Array2::<i32>::eye(2);
    let p1: Array2<i32> = ndarray::array![[0, 0], [0, 1]];
    let i_minus_x: Array2<i32> = ndarray::array![[1, -1], [-1, 1]];
    let controls: Vec<usize> = match *gate {
        Gate::X(_) => vec![],
        Gate::Cx(c, _) => vec![c],
        Gate::Ccx(a, b, _) => vec![a, b],
    };
    let t = gate.target();
    let projector = tensor(n, |q| {
        if controls.contains(&q) {
            p1.clone()
        } else if q == t {
            i_minus_x.clone()
        } else {
            id()
        }
    });
    Array2::eye(1 << n) - projector
}

pub fn circuit_unitary(c: &ReversibleCircuit) -> Result<Array2<i32>> {
    if c.n_bits > MAX_DENSE_BITS {
        return Err(QmfsError::DimensionCap { dim: 1 << c.n_bits, cap: 1 << MAX_DENSE_BITS });
    }
    let n = c.n_bits;
    Ok(c.gates
        .iter()
        .fold(Array2::eye(1 << n), |u, g| int_matmul(&gate_unitary(n, g), &u)))
}

/// `U^dag Z_j U` by dense conjugation.
pub fn heisenberg_z_dense(u: &Array2<i32>, n: usize, j: usize) -> Array2<i32> {
    let ut = u.t().to_owned();
    int_matmul(&ut, &int_matmul(&pauli_z_dense(n, j), u))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseCheck {
    /// Largest entry of `U^dag Z_j U - diag((-1)^{f_j})` over all `j`.
    pub max_deviation: i32,
    /// Largest off-diagonal entry of any image.
    pub max_offdiagonal: i32,
    /// Largest entry of `[U^dag Z_j U, Z_k]` over all `j, k`.
    pub max_commutator: i32,
}

impl DenseCheck {
    pub fn is_exact(&self) -> bool {
        self.max_deviation == 0 && self.max_offdiagonal == 0 && self.max_commutator == 0
    }
}

/// Conjugates every `Z_j` with the dense unitary and compares against
/// [`propagate_z`]; exact integer arithmetic.
pub fn dense_oracle_check(c: &ReversibleCircuit) -> Result<DenseCheck> {
    let n = c.n_bits;
    let u = circuit_unitary(c)?;
    let dim = 1usize << n;
    let z_inputs: Vec<Vec<i32>> = (0..n)
        .map(|k| (0..dim).map(|x| 1 - 2 * ((x >> k) & 1) as i32).collect())
        .collect();
    let mut report = DenseCheck { max_deviation: 0, max_offdiagonal: 0, max_commutator: 0 };
    for j in 0..n {
        let image = heisenberg_z_dense(&u, n, j);
        let signs = propagate_z(c, j)?.signs();
        for ((a, b), &v) in image.indexed_iter() {
            if a == b {
                report.max_deviation = report.max_deviation.max((v - signs[a]).abs());
            } else {
                report.max_offdiagonal = report.max_offdiagonal.max(v.abs());
                report.max_deviation = report.max_deviation.max(v.abs());
            }
            // [M, Z_k]_{ab} = M_ab (z_k(b) - z_k(a))
            for z in &z_inputs {
                report.max_commutator = report.max_commutator.max((v * (z[b] - z[a])).abs());
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesis {
    pub circuit: ReversibleCircuit,
    pub n_inputs: usize,
    /// Bit holding each target after the circuit runs on `|x, 0...0>`.
    pub output_bits: Vec<usize>,
    pub ancilla_bits: Vec<usize>,
}

impl Synthesis {
    /// Worst-case mismatch over all inputs; also requires ancillas to return to 0
    /// and inputs to be preserved.
    pub fn verify(&self, targets: &[BoolFunc]) -> Result<bool> {
        let c = &self.circuit;
        let input_mask = (1usize << self.n_inputs) - 1;
        for x in 0..1usize << self.n_inputs {
            let y = c.apply(x);
            if y & input_mask != x || self.ancilla_bits.iter().any(|&a| (y >> a) & 1 == 1) {
                return Ok(false);
            }
        }
        for (t, &bit) in targets.iter().zip(&self.output_bits) {
            let image = propagate_z(c, bit)?;
            if (0..1usize << self.n_inputs).any(|x| image.eval(x) != t.eval(x)) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// One output bit per non-projection target, each built from its algebraic
/// normal form: X for the constant term, CX per linear term, CCX per
/// quadratic term and an ancilla AND chain for higher degrees. Targets that
/// equal an input bit are read from that bit directly.
pub fn build_classical_function(targets: &[BoolFunc]) -> Result<Synthesis> {
    let n_in = match targets.first() {
        Some(t) => t.n_inputs,
        None => return Err(QmfsError::InvalidInput("no targets".into())),
    };
    if targets.iter().any(|t| t.n_inputs != n_in) {
        return Err(QmfsError::Dimension("targets have different input counts".into()));
    }
    let anfs: Vec<Option<Vec<usize>>> = targets
        .iter()
        .map(|t| if t.as_projection().is_some() { None } else { Some(t.anf()) })
        .collect();
    let n_outputs = anfs.iter().filter(|a| a.is_some()).count();
    let max_degree = anfs
        .iter()
        .flatten()
        .flatten()
        .map(|m| m.count_ones() as usize)
        .max()
        .unwrap_or(0);
    let n_anc = max_degree.saturating_sub(2);
    let total = n_in + n_outputs + n_anc;
    if total > MAX_BITS {
        return Err(QmfsError::Budget(format!(
            "synthesis needs {total} bits ({n_in} inputs, {n_outputs} outputs, {n_anc} ancillas), cap {MAX_BITS}"
        )));
    }
    let ancillas: Vec<usize> = (n_in + n_outputs..total).collect();
    let mut gates = Vec::new();
    let mut output_bits = Vec::with_capacity(targets.len());
    let mut next_out = n_in;
    for (t, anf) in targets.iter().zip(&anfs) {
        let Some(anf) = anf else {
            output_bits.push(t.as_projection().unwrap());
            continue;
        };
        let out = next_out;
        next_out += 1;
        output_bits.push(out);
        for &mono in anf {
            let vars: Vec<usize> = (0..n_in).filter(|&j| (mono >> j) & 1 == 1).collect();
            match vars.len() {
                0 => gates.push(Gate::X(out)),
                1 => gates.push(Gate::Cx(vars[0], out)),
                2 => gates.push(Gate::Ccx(vars[0], vars[1], out)),
                d => {
                    let mut chain = vec![Gate::Ccx(vars[0], vars[1], ancillas[0])];
                    for k in 2..d - 1 {
                        chain.push(Gate::Ccx(ancillas[k - 2], vars[k], ancillas[k - 1]));
                    }
                    gates.extend_from_slice(&chain);
                    gates.push(Gate::Ccx(ancillas[d - 3], vars[d - 1], out));
                    gates.extend(chain.into_iter().rev());
                }
            }
        }
    }
    Ok(Synthesis {
        circuit: ReversibleCircuit::new(total.max(1), gates)?,
        n_inputs: n_in,
        output_bits,
        ancilla_bits: ancillas,
    })
}

/// Uniformly random X/CX/CCX circuit, reproducible from `seed`.
pub fn random_circuit(n_bits: usize, n_gates: usize, seed: u64) -> Result<ReversibleCircuit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gates = Vec::with_capacity(n_gates);
    for _ in 0..n_gates {
        let arity = rng.random_range(1..=n_bits.min(3));
        let mut picks: Vec<usize> = Vec::with_capacity(arity);
        while picks.len() < arity {
            let b = rng.random_range(0..n_bits);
            if !picks.contains(&b) {
                picks.push(b);
            }
        }
        gates.push(match arity {
            1 => Gate::X(picks[0]),
            2 => Gate::Cx(picks[0], picks[1]),
            _ => Gate::Ccx(picks[0], picks[1], picks[2]),
        });
    }
    ReversibleCircuit::new(n_bits, gates)
}

/// Columns `x`, input bits `x0..`, then one column per function.
pub fn write_truth_table_csv<W: Write>(mut out: W, funcs: &[BoolFunc], labels: &[String]) -> Result<()> {
    let Some(first) = funcs.first() else {
        return Err(QmfsError::InvalidInput("no functions to export".into()));
    };
    if labels.len() != funcs.len() || funcs.iter().any(|f| f.n_inputs != first.n_inputs) {
        return Err(QmfsError::Dimension("one label per function, equal input counts".into()));
    }
    let n = first.n_inputs;
    let mut header = vec!["x".to_string()];
    header.extend((0..n).map(|j| format!("x{j}")));
    header.extend(labels.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for x in 0..first.len() {
        let mut row = vec![x.to_string()];
        row.extend((0..n).map(|j| ((x >> j) & 1).to_string()));
        row.extend(funcs.iter().map(|f| u8::from(f.eval(x)).to_string()));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
