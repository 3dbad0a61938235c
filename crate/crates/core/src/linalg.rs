//! Dense linear-algebra helpers shared by the engines: matrix exponential,
//! symplectic spectra, Kronecker products and Hermitian utilities.

use ndarray::{s, Array1, Array2, ArrayView2};
use ndarray_linalg::{EigVals, Eigh, EigValsh, Inverse, Solve, UPLO};
use num_complex::Complex64;

use crate::error::{QmfsError, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

// Higham (2005) [13/13] Pade coefficients and the associated backward-error bound.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

pub fn one_norm(a: &Array2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_asymmetry(a: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Matrix exponential by scaling and squaring with the degree-13 Pade
/// approximant.
pub fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(QmfsError::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let norm = one_norm(a);
    if norm == 0.0 {
        return Ok(Array2::eye(n));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let id = Array2::<f64>::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let b = &PADE13;

    let inner_u = a6.dot(&(&a6 * b[13] + &a4 * b[11] + &a2 * b[9]));
    let u = scaled.dot(&(inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]));
    let inner_v = a6.dot(&(&a6 * b[12] + &a4 * b[10] + &a2 * b[8]));
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = solve_matrix(&q, &p)?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Solves `a X = b` column by column.
pub fn solve_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let inv = a.inv()?;
    Ok(inv.dot(b))
}

pub fn solve_complex(a: &CMatrix, b: &Array1<C64>) -> Result<Array1<C64>> {
    Ok(a.solve(b)?)
}

pub fn inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(a.inv()?)
}

/// Williamson symplectic eigenvalues of a positive covariance matrix,
/// sorted ascending, one per mode.
pub fn symplectic_eigenvalues(cov: &Array2<f64>, omega: &Array2<f64>) -> Result<Vec<f64>> {
    let m = omega.dot(cov);
    let eig = m.eigvals()?;
    let mut nus: Vec<f64> = eig.iter().map(|z| z.im.abs()).collect();
    nus.sort_by(|a, b| a.total_cmp(b));
    Ok(nus.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect())
}

/// Smallest eigenvalue of `cov + i (hbar/2) omega`.
pub fn uncertainty_min_eigenvalue(
    cov: &Array2<f64>,
    omega: &Array2<f64>,
    hbar: f64,
) -> Result<f64> {
    let m: CMatrix = Array2::from_shape_fn(cov.dim(), |(i, j)| {
        C64::new(cov[[i, j]], 0.5 * hbar * omega[[i, j]])
    });
    min_eigenvalue_hermitian(&m)
}

pub fn min_eigenvalue_hermitian(m: &CMatrix) -> Result<f64> {
    let vals = m.eigvalsh(UPLO::Upper)?;
    Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Eigenvalues ascending, eigenvectors as columns with `M V = V diag(e)`.
pub fn eigh(m: &CMatrix) -> Result<(Array1<f64>, CMatrix)> {
    let (e, mut v) = m.eigh(UPLO::Upper)?;
    // ndarray-linalg 0.18 hands back the complex conjugate of the eigenvectors
    // for complex input. Test a fixed mixture of all pairs and conjugate when needed.
    let n = m.nrows();
    let r = Array1::from_shape_fn(n, |k| C64::new(1.0 + k as f64 / n as f64, 0.0));
    let er = Array1::from_shape_fn(n, |k| r[k] * e[k]);
    let residual = |v: &CMatrix| {
        let diff = m.dot(&v.dot(&r)) - v.dot(&er);
        diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
    };
    let v_conj = v.mapv(|z| z.conj());
    if residual(&v_conj) < residual(&v) {
        v = v_conj;
    }
    Ok((e, v))
}

pub fn eigh_real(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    Ok(m.eigh(UPLO::Upper)?)
}

pub fn to_complex(a: &Array2<f64>) -> CMatrix {
    a.mapv(|x| C64::new(x, 0.0))
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) - b.dot(a)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMatrix::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, &x| *o = aij * x);
        }
    }
    out
}

pub fn hermitian_deviation(a: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Spectral norm via the largest eigenvalue of `A^dagger A`.
pub fn spectral_norm(a: ArrayView2<C64>) -> Result<f64> {
    let owned = a.to_owned();
    let gram = dagger(&owned).dot(&owned);
    let vals = gram.eigvalsh(UPLO::Upper)?;
    Ok(vals.iter().fold(0.0f64, |m, x| m.max(*x)).sqrt())
}

pub fn max_abs_c(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}
