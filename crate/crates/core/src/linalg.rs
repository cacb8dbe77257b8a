//! Dense symmetric eigen-decomposition.
//!
//! Two solvers share one result type:
//!
//! * [`jacobi_eigen`]: cyclic Jacobi rotations, all eigenpairs. Used for
//!   every matrix up to [`JACOBI_MAX_DIM`].
//! * [`tridiagonal_top_eigen`]: Householder tridiagonalization, implicit QL
//!   for the spectrum and inverse iteration for the requested leading
//!   eigenvectors. Used above that size, where Jacobi's `O(n³)` per sweep
//!   becomes prohibitive (multi-channel 5×5 patches give `n` in the
//!   thousands).

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("eigen-solver did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("matrix is not {0}x{0}")]
    BadShape(usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Eigenpairs sorted by descending eigenvalue. `vectors[i]` pairs with
/// `values[i]` and has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

pub const JACOBI_MAX_DIM: usize = 160;

fn check(a: &[f64], n: usize) -> Result<(), LinalgError> {
    if a.len() != n * n {
        return Err(LinalgError::BadShape(n));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(())
}

/// Leading `k` eigenpairs of the symmetric row-major `n×n` matrix `a`.
pub fn top_eigen(a: &[f64], n: usize, k: usize) -> Result<SymEigen, LinalgError> {
    let k = k.min(n);
    if n <= JACOBI_MAX_DIM {
        let mut e = jacobi_eigen(a, n)?;
        e.values.truncate(k);
        e.vectors.truncate(k);
        Ok(e)
    } else {
        tridiagonal_top_eigen(a, n, k)
    }
}

/// All eigenpairs by cyclic Jacobi rotations.
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<SymEigen, LinalgError> {
    check(a, n)?;
    const MAX_SWEEPS: usize = 100;
    let mut m = a.to_vec();
    // v is stored column-major so that eigenvector j is v[j*n..(j+1)*n]
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= 1e-30 * total || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for r in 0..n {
                    let arp = m[r * n + p];
                    let arq = m[r * n + q];
                    m[r * n + p] = c * arp - s * arq;
                    m[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = m[p * n + r];
                    let aqr = m[q * n + r];
                    m[p * n + r] = c * apr - s * aqr;
                    m[q * n + r] = s * apr + c * aqr;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                let (vp, vq) = (p * n, q * n);
                for r in 0..n {
                    let x = v[vp + r];
                    let y = v[vq + r];
                    v[vp + r] = c * x - s * y;
                    v[vq + r] = s * x + c * y;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence(MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    Ok(SymEigen {
        values: order.iter().map(|&i| m[i * n + i]).collect(),
        vectors: order.iter().map(|&i| v[i * n..(i + 1) * n].to_vec()).collect(),
    })
}

struct Householder {
    /// reflector `I - beta v vᵀ` acting on coordinates `offset..n`
    offset: usize,
    beta: f64,
    v: Vec<f64>,
}

/// Reduces `a` to tridiagonal form `Qᵀ A Q = T`. Returns the diagonal, the
/// off-diagonal (`off[i]` couples `i` and `i+1`) and the reflectors whose
/// product is `Q`.
fn tridiagonalize(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<Householder>) {
    let mut m = a.to_vec();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut reflectors = Vec::new();
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let start = k + 1;
        let len = n - start;
        let mut x: Vec<f64> = (start..n).map(|i| m[i * n + k]).collect();
        let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
        diag[k] = m[k * n + k];
        if sigma == 0.0 {
            off[k] = x[0];
            continue;
        }
        let norm = libm::sqrt(x[0] * x[0] + sigma);
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        x[0] -= alpha;
        let vnorm2 = x[0] * x[0] + sigma;
        let beta = 2.0 / vnorm2;
        off[k] = alpha;
        // p = beta * A v over the trailing block
        let mut pv = 0.0;
        for (ii, i) in (start..n).enumerate() {
            let row = &m[i * n + start..i * n + n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(&x) {
                acc += a * b;
            }
            p[ii] = beta * acc;
            pv += p[ii] * x[ii];
        }
        // w = p - (beta/2)(pᵀv) v ; A -= v wᵀ + w vᵀ
        let half = 0.5 * beta * pv;
        for ii in 0..len {
            p[ii] -= half * x[ii];
        }
        for (ii, i) in (start..n).enumerate() {
            let (vi, wi) = (x[ii], p[ii]);
            let row = &mut m[i * n + start..i * n + n];
            for ((a, &vj), &wj) in row.iter_mut().zip(&x).zip(&p[..len]) {
                *a -= vi * wj + wi * vj;
            }
        }
        reflectors.push(Householder { offset: start, beta, v: x });
    }
    if n > 0 {
        diag[n - 1] = m[(n - 1) * n + (n - 1)];
    }
    (diag, off, reflectors)
}

/// All eigenvalues of a symmetric tridiagonal matrix by implicit QL.
fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..off.len()].copy_from_slice(off);
    const MAX_ITERS: usize = 60;
    // couplings below rounding level of the whole matrix are dropped too;
    // the purely relative test alone stalls inside large clusters of
    // numerically zero eigenvalues (rank-deficient covariances)
    let norm = d.iter().zip(&e).fold(0.0f64, |m, (a, b)| m.max(a.abs() + 2.0 * b.abs()));
    let floor = f64::EPSILON * norm;
    for l in 0..n {
        let mut iters = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iters += 1;
            if iters > MAX_ITERS {
                return Err(LinalgError::NoConvergence(MAX_ITERS));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

/// Solves `(T - shift I) x = b` in place for tridiagonal `T` using Gaussian
/// elimination with partial pivoting; zero pivots are replaced by `tiny`.
fn tridiagonal_solve(diag: &[f64], off: &[f64], shift: f64, tiny: f64, b: &mut [f64]) {
    let n = diag.len();
    let mut u0 = vec![0.0; n];
    let mut u1 = vec![0.0; n];
    let mut u2 = vec![0.0; n];
    let mut mult = vec![0.0; n];
    let mut swapped = vec![false; n];
    let sup = |i: usize| if i + 1 < n { off[i] } else { 0.0 };
    let mut cur = (diag[0] - shift, sup(0), 0.0);
    for i in 0..n.saturating_sub(1) {
        let next = (off[i], diag[i + 1] - shift, sup(i + 1));
        let (piv, other) = if next.0.abs() > cur.0.abs() {
            swapped[i] = true;
            (next, cur)
        } else {
            (cur, next)
        };
        let p0 = if piv.0 == 0.0 { tiny } else { piv.0 };
        let f = other.0 / p0;
        u0[i] = p0;
        u1[i] = piv.1;
        u2[i] = piv.2;
        mult[i] = f;
        cur = (other.1 - f * piv.1, other.2 - f * piv.2, 0.0);
    }
    u0[n - 1] = if cur.0 == 0.0 { tiny } else { cur.0 };
    for i in 0..n.saturating_sub(1) {
        if swapped[i] {
            b.swap(i, i + 1);
        }
        b[i + 1] -= mult[i] * b[i];
    }
    for i in (0..n).rev() {
        let mut acc = b[i];
        if i + 1 < n {
            acc -= u1[i] * b[i + 1];
        }
        if i + 2 < n {
            acc -= u2[i] * b[i + 2];
        }
        b[i] = acc / u0[i];
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
}

/// Leading `k` eigenpairs through tridiagonalization.
pub fn tridiagonal_top_eigen(a: &[f64], n: usize, k: usize) -> Result<SymEigen, LinalgError> {
    check(a, n)?;
    let k = k.min(n);
    if n == 0 || k == 0 {
        return Ok(SymEigen { values: Vec::new(), vectors: Vec::new() });
    }
    let (diag, off, reflectors) = tridiagonalize(a, n);
    let mut values = tridiagonal_eigenvalues(&diag, &off)?;
    values.sort_by(|x, y| y.total_cmp(x));
    values.truncate(k);
    let scale = diag.iter().chain(&off).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    let mut tvecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &lambda in &values {
        // deterministic, non-degenerate start vector
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * libm::sin(i as f64 * 1.618_033_988_75)).collect();
        normalize(&mut x);
        for _ in 0..4 {
            tridiagonal_solve(&diag, &off, lambda, tiny, &mut x);
            orthogonalize(&mut x, &tvecs);
            orthogonalize(&mut x, &tvecs);
            if normalize(&mut x) == 0.0 || x.iter().any(|v| !v.is_finite()) {
                return Err(LinalgError::NoConvergence(4));
            }
        }
        tvecs.push(x);
    }
    let mut vectors = Vec::with_capacity(k);
    for t in tvecs {
        let mut x = t;
        for h in reflectors.iter().rev() {
            let tail = &mut x[h.offset..];
            let d: f64 = tail.iter().zip(&h.v).map(|(a, b)| a * b).sum();
            let f = h.beta * d;
            tail.iter_mut().zip(&h.v).for_each(|(a, b)| *a -= f * b);
        }
        vectors.push(x);
    }
    // reflectors are orthogonal; a final pass removes accumulated rounding
    for i in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(i);
        orthogonalize(&mut rest[0], done);
        normalize(&mut rest[0]);
    }
    Ok(SymEigen { values, vectors })
}
