//! Small dense helpers shared by the system, norm and matching code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Point on the unit circle in the `lambda = e^{-j theta}` convention.
pub fn unit_point(theta: f64) -> C64 {
    C64::new(theta.cos(), -theta.sin())
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|v| C64::new(v, 0.0))
}

/// Spectral radius of a real square matrix; zero for the empty matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let n = a.nrows();
    let lower = (0..n).all(|i| (i + 1..n).all(|j| a[(i, j)] == 0.0));
    let upper = (0..n).all(|i| (0..i).all(|j| a[(i, j)] == 0.0));
    if lower || upper {
        return (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    }
    if let Some(schur) = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 200 * n.max(10)) {
        return schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    // QR sweeps can stall on defective matrices (shift registers); fall back
    // to Gelfand's formula by repeated squaring
    let mut p = a.clone();
    let mut log_scale = 0.0_f64;
    let mut est = f64::INFINITY;
    for k in 1..=60 {
        p = &p * &p;
        let nrm = p.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        p /= nrm;
        log_scale = 2.0 * log_scale + nrm.ln();
        let next = (log_scale / 2f64.powi(k)).exp();
        if (next - est).abs() <= 1e-12 * next {
            return next;
        }
        est = next;
    }
    est
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in descending
/// order. 1x1 and 2x2 are closed form; larger sizes go through nalgebra.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    match n {
        0 => (Vec::new(), CMat::zeros(0, 0)),
        1 => (vec![m[(0, 0)].re], CMat::from_element(1, 1, ONE)),
        2 => {
            let a = m[(0, 0)].re;
            let d = m[(1, 1)].re;
            let b = m[(0, 1)];
            let half = 0.5 * (a - d);
            let r = (half * half + b.norm_sqr()).sqrt();
            let mean = 0.5 * (a + d);
            let (l1, l2) = (mean + r, mean - r);
            if b.norm() <= 1e-300 {
                // already diagonal
                return if a >= d {
                    (vec![a, d], CMat::identity(2, 2))
                } else {
                    let mut v = CMat::zeros(2, 2);
                    v[(1, 0)] = ONE;
                    v[(0, 1)] = ONE;
                    (vec![d, a], v)
                };
            }
            // (A - l I) x = 0 with x = [b, l - a]
            let mut v = CMat::zeros(2, 2);
            for (col, l) in [l1, l2].into_iter().enumerate() {
                let x0 = b;
                let x1 = C64::new(l - a, 0.0);
                let nrm = (x0.norm_sqr() + x1.norm_sqr()).sqrt();
                v[(0, col)] = x0 / nrm;
                v[(1, col)] = x1 / nrm;
            }
            (vec![l1, l2], v)
        }
        _ => {
            let eig = nalgebra::SymmetricEigen::new(m.clone());
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
            let mut vecs = CMat::zeros(n, n);
            for (c, &i) in idx.iter().enumerate() {
                vecs.set_column(c, &eig.eigenvectors.column(i));
            }
            (vals, vecs)
        }
    }
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn hermitian_max_eig(m: &CMat) -> f64 {
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let half = 0.5 * (a - d);
        return 0.5 * (a + d) + (half * half + m[(0, 1)].norm_sqr()).sqrt();
    }
    hermitian_eigen(m).0.first().copied().unwrap_or(0.0)
}

/// `f(M)` for Hermitian `M`, applied through the eigenvalues.
pub fn hermitian_fn(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let n = vals.len();
    let mut out = CMat::zeros(n, n);
    for (k, &l) in vals.iter().enumerate() {
        let fl = f(l);
        for i in 0..n {
            let vi = vecs[(i, k)] * fl;
            for j in 0..n {
                out[(i, j)] += vi * vecs[(j, k)].conj();
            }
        }
    }
    out
}

/// Largest singular value of a dense complex matrix.
pub fn sigma_max_dense(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() <= 2 || m.ncols() <= 2 {
        let gram = if m.ncols() <= m.nrows() {
            m.adjoint() * m
        } else {
            m * m.adjoint()
        };
        return hermitian_max_eig(&gram).max(0.0).sqrt();
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    // conj(a) . b
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

pub(crate) fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Outcome of an iterative extreme-eigenvalue computation.
#[derive(Debug, Clone, Copy)]
pub struct KrylovEstimate {
    pub value: f64,
    pub converged: bool,
    pub steps: usize,
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator
/// given only its action, by Lanczos with full reorthogonalization and
/// explicit restarts from the current Ritz vector.
///
/// Converged when the Ritz residual falls below `tol * theta`, or when the
/// Ritz value has stopped moving (relative change below `tol * 1e-2`)
/// which is the relevant test for tightly clustered top eigenvalues.
pub fn lanczos_max_eig(
    dim: usize,
    apply: &dyn Fn(&[C64], &mut [C64]),
    start: &[C64],
    tol: f64,
    max_steps: usize,
    restarts: usize,
) -> KrylovEstimate {
    let mut v0: Vec<C64> = start.to_vec();
    let mut total = 0;
    let mut best = 0.0_f64;
    let max_steps = max_steps.min(dim).max(1);
    for _ in 0..=restarts {
        let nrm = norm2(&v0);
        if nrm == 0.0 {
            return KrylovEstimate {
                value: 0.0,
                converged: true,
                steps: total,
            };
        }
        let mut basis: Vec<Vec<C64>> = vec![v0.iter().map(|z| z / nrm).collect()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![ZERO; dim];
        let mut last_theta = f64::NAN;
        let mut ritz: Option<(f64, DVector<f64>)> = None;
        for j in 0..max_steps {
            apply(&basis[j], &mut w);
            total += 1;
            let alpha = dot(&basis[j], &w).re;
            alphas.push(alpha);
            for (wi, qi) in w.iter_mut().zip(&basis[j]) {
                *wi -= qi * alpha;
            }
            if j > 0 {
                let b = betas[j - 1];
                for (wi, qi) in w.iter_mut().zip(&basis[j - 1]) {
                    *wi -= qi * b;
                }
            }
            // classical Gram-Schmidt, repeated only on heavy cancellation
            let mut beta = norm2(&w);
            for _ in 0..2 {
                let coeffs: Vec<C64> = basis.iter().map(|q| dot(q, &w)).collect();
                for (q, c) in basis.iter().zip(&coeffs) {
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= qi * c;
                    }
                }
                let after = norm2(&w);
                let dropped = after < 0.7 * beta;
                beta = after;
                if !dropped {
                    break;
                }
            }
            let check = j + 1 == max_steps || (j + 1) % 4 == 0 || beta <= 1e-14 * alpha.abs().max(1e-300);
            if check {
                let (theta, second, s) = tridiag_top(&alphas, &betas);
                best = best.max(theta);
                let scale = theta.abs().max(1e-300);
                let resid = beta * s[s.len() - 1].abs();
                // Ritz value error is at most resid^2 / gap
                let gap = theta - second;
                let tight = gap > 0.0 && resid * resid <= tol * scale * gap;
                let stalled = last_theta.is_finite() && (theta - last_theta).abs() <= 1e-2 * tol * scale;
                if resid <= tol * scale || tight || stalled || beta <= 1e-14 * scale {
                    return KrylovEstimate {
                        value: theta,
                        converged: true,
                        steps: total,
                    };
                }
                last_theta = theta;
                ritz = Some((theta, s));
            }
            if j + 1 == max_steps || beta == 0.0 {
                break;
            }
            betas.push(beta);
            basis.push(w.iter().map(|z| z / beta).collect());
        }
        // restart from the Ritz vector
        if let Some((_, s)) = ritz {
            let mut y = vec![ZERO; dim];
            for (k, q) in basis.iter().enumerate().take(s.len()) {
                for (yi, qi) in y.iter_mut().zip(q) {
                    *yi += qi * s[k];
                }
            }
            v0 = y;
        }
    }
    KrylovEstimate {
        value: best,
        converged: false,
        steps: total,
    }
}

/// Top Ritz pair and the second Ritz value (`-inf` for one step).
fn tridiag_top(alphas: &[f64], betas: &[f64]) -> (f64, f64, DVector<f64>) {
    let k = alphas.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    let (imax, _) =
        eig.eigenvalues.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
    let second = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (
        eig.eigenvalues[imax],
        second,
        eig.eigenvectors.column(imax).into_owned(),
    )
}

/// Largest eigenvalue of `blockdiag(D_1..D_n) - rho * g g^*` for Hermitian
/// PSD blocks `D_i` and `rho >= 0`, through the secular equation.
pub fn max_eig_block_diag_rank_one(blocks: &[CMat], g: &[C64], rho: f64) -> f64 {
    let mut vals: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut offset = 0;
    for b in blocks {
        let (ev, vecs) = hermitian_eigen(b);
        let m = b.nrows();
        for (k, &l) in ev.iter().enumerate() {
            let mut c = ZERO;
            for i in 0..m {
                c += vecs[(i, k)].conj() * g[offset + i];
            }
            vals.push(l);
            weights.push(c.norm_sqr());
        }
        offset += m;
    }
    if vals.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let d1 = vals[order[0]];
    if rho == 0.0 {
        return d1;
    }
    let d2 = if order.len() > 1 {
        vals[order[1]]
    } else {
        f64::NEG_INFINITY
    };
    let gsq: f64 = weights.iter().sum();
    let mut lo = d2.max(d1 - rho * gsq);
    let mut hi = d1;
    if !(lo < hi) {
        return d1;
    }
    let secular = |lambda: f64| -> f64 {
        let mut s = 0.0;
        for (&d, &w) in vals.iter().zip(&weights) {
            if w != 0.0 {
                s += w / (d - lambda);
            }
        }
        1.0 - rho * s
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
