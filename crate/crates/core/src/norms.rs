//! H-infinity and H2 norms over frequency grids on the upper unit
//! semicircle, plus tap-domain H2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, lanczos_max_eig, sigma_max_dense, unit_point, CMat, C64, ONE};
use crate::lti::{FirMatrix, StateSpace};

/// Dense SVD below this dimension, Krylov iteration above.
pub const DENSE_LIMIT: usize = 64;
pub const DEFAULT_GRID_POINTS: usize = 512;
/// Largest relative change tolerated when the grid is doubled.
pub const DOUBLING_TOL: f64 = 5e-3;
const KRYLOV_TOL: f64 = 1e-10;
const KRYLOV_STEPS: usize = 80;
const KRYLOV_RESTARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Hinf,
    H2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMethod {
    DenseSvd,
    Lanczos,
    /// Largest root of the secular equation of a block-diagonal matrix
    /// minus a rank-one term.
    Secular,
    /// Tap-domain energy.
    Taps,
    /// Frobenius energy integrated over the grid.
    Quadrature,
}

/// Uniform-or-not grid of `theta` in `[0, pi]` with both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    thetas: Vec<f64>,
    pub refine: bool,
    /// Rerun on a doubled grid until the value moves by at most
    /// `DOUBLING_TOL`, at most this many times. Zero disables the check.
    pub max_doublings: usize,
}

impl FrequencyGrid {
    pub fn uniform(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 points, got {points}"
            )));
        }
        let step = std::f64::consts::PI / (points - 1) as f64;
        let mut thetas: Vec<f64> = (0..points).map(|k| k as f64 * step).collect();
        thetas[points - 1] = std::f64::consts::PI;
        Ok(FrequencyGrid {
            thetas,
            refine: true,
            max_doublings: 3,
        })
    }

    pub fn from_thetas(thetas: Vec<f64>) -> Result<Self> {
        if thetas.len() < 2
            || thetas[0] != 0.0
            || *thetas.last().unwrap() != std::f64::consts::PI
            || thetas.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(
                "grid must be strictly increasing from 0 to pi".into(),
            ));
        }
        Ok(FrequencyGrid {
            thetas,
            refine: true,
            max_doublings: 3,
        })
    }

    pub fn with_refine(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }

    pub fn with_doublings(mut self, max_doublings: usize) -> Self {
        self.max_doublings = max_doublings;
        self
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn lambdas(&self) -> Vec<C64> {
        self.thetas.iter().map(|&t| unit_point(t)).collect()
    }

    /// Nested grid with every midpoint inserted (`2N - 1` points).
    pub fn doubled(&self) -> Self {
        let mut thetas = Vec::with_capacity(2 * self.len() - 1);
        for w in self.thetas.windows(2) {
            thetas.push(w[0]);
            thetas.push(0.5 * (w[0] + w[1]));
        }
        thetas.push(*self.thetas.last().unwrap());
        FrequencyGrid {
            thetas,
            refine: self.refine,
            max_doublings: self.max_doublings,
        }
    }

    fn midpoints(&self) -> Vec<f64> {
        self.thetas.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// A computed norm value with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub value: f64,
    /// Frequency of the peak (H-infinity only).
    pub peak_theta: Option<f64>,
    pub grid_size: usize,
    pub method: SigmaMethod,
    /// True when the `1/sqrt(n)` scaling has been applied.
    pub scaled: bool,
    /// Relative change of the value under the last grid doubling.
    pub doubling_shift: Option<f64>,
}

/// Largest singular value with the dimension-based method switch.
pub fn sigma_max(m: &CMat) -> (f64, SigmaMethod) {
    if m.nrows().max(m.ncols()) <= DENSE_LIMIT {
        return (sigma_max_dense(m), SigmaMethod::DenseSvd);
    }
    let cols = m.ncols();
    let rows = m.nrows();
    let apply = |x: &[C64], y: &mut [C64]| {
        let mut t = vec![C64::new(0.0, 0.0); rows];
        for (j, &xj) in x.iter().enumerate().take(cols) {
            for (ti, mij) in t.iter_mut().zip(m.column(j).iter()) {
                *ti += mij * xj;
            }
        }
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = m
                .column(j)
                .iter()
                .zip(&t)
                .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b);
        }
    };
    let start = vec![ONE; cols];
    krylov_or_dense(cols, &apply, &start, || sigma_max_dense(m))
}

/// Krylov estimate of the largest singular value from the Gram action,
/// falling back to `dense` when the iteration stagnates.
pub fn krylov_or_dense(
    dim: usize,
    gram: &dyn Fn(&[C64], &mut [C64]),
    start: &[C64],
    dense: impl FnOnce() -> f64,
) -> (f64, SigmaMethod) {
    let est = lanczos_max_eig(dim, gram, start, KRYLOV_TOL, KRYLOV_STEPS, KRYLOV_RESTARTS);
    log::trace!("Lanczos dim {dim}: {} steps, converged {}", est.steps, est.converged);
    if est.converged {
        (est.value.max(0.0).sqrt(), SigmaMethod::Lanczos)
    } else {
        log::warn!("Lanczos stagnated after {} steps; dense fallback", est.steps);
        (dense(), SigmaMethod::DenseSvd)
    }
}

fn eval_many<F>(sigma: &F, thetas: &[f64]) -> Result<Vec<(f64, SigmaMethod)>>
where
    F: Fn(f64) -> Result<(f64, SigmaMethod)> + Sync,
{
    thetas.par_iter().map(|&t| sigma(t)).collect()
}

struct Sampled {
    thetas: Vec<f64>,
    values: Vec<(f64, SigmaMethod)>,
}

impl Sampled {
    fn peak<F>(&self, sigma: &F, refine: bool) -> Result<(f64, f64, SigmaMethod)>
    where
        F: Fn(f64) -> Result<(f64, SigmaMethod)> + Sync,
    {
        let (k, &(v, m)) =
            self.values.iter().enumerate().fold(
                (0, &self.values[0]),
                |acc, (i, s)| if s.0 > acc.1 .0 { (i, s) } else { acc },
            );
        let mut best = (v, self.thetas[k], m);
        if refine && k > 0 && k + 1 < self.thetas.len() {
            if let Some(t) = parabola_vertex(
                [self.thetas[k - 1], self.thetas[k], self.thetas[k + 1]],
                [self.values[k - 1].0, v, self.values[k + 1].0],
            ) {
                let (vr, mr) = sigma(t)?;
                if vr > best.0 {
                    best = (vr, t, mr);
                }
            }
        }
        Ok(best)
    }

    fn merge_midpoints(&self, mids: &[f64], vals: Vec<(f64, SigmaMethod)>) -> Sampled {
        let n = self.thetas.len();
        let mut thetas = Vec::with_capacity(2 * n - 1);
        let mut values = Vec::with_capacity(2 * n - 1);
        for i in 0..n {
            thetas.push(self.thetas[i]);
            values.push(self.values[i]);
            if i + 1 < n {
                thetas.push(mids[i]);
                values.push(vals[i]);
            }
        }
        Sampled { thetas, values }
    }
}

/// Vertex of the parabola through three points, if it lies inside the
/// bracket and the parabola opens downward.
fn parabola_vertex(t: [f64; 3], v: [f64; 3]) -> Option<f64> {
    let d1 = (v[1] - v[0]) / (t[1] - t[0]);
    let d2 = (v[2] - v[1]) / (t[2] - t[1]);
    let curv = (d2 - d1) / (t[2] - t[0]);
    if !(curv < 0.0) {
        return None;
    }
    // v(t) = v1 + d1 (t - t0) + curv (t - t0)(t - t1)
    let vertex = 0.5 * (t[0] + t[1]) - d1 / (2.0 * curv);
    (vertex > t[0] && vertex < t[2]).then_some(vertex)
}

/// Peak of `sigma(theta)` over the grid with optional parabolic refinement
/// and automatic doubling until the value is stable to `DOUBLING_TOL`.
pub fn hinf_of<F>(sigma: F, grid: &FrequencyGrid) -> Result<CostReport>
where
    F: Fn(f64) -> Result<(f64, SigmaMethod)> + Sync,
{
    let mut sampled = Sampled {
        thetas: grid.thetas.clone(),
        values: eval_many(&sigma, &grid.thetas)?,
    };
    let (mut value, mut peak, mut method) = sampled.peak(&sigma, grid.refine)?;
    let mut shift = None;
    for _ in 0..grid.max_doublings {
        let g = FrequencyGrid {
            thetas: sampled.thetas.clone(),
            refine: grid.refine,
            max_doublings: 0,
        };
        let mids = g.midpoints();
        let vals = eval_many(&sigma, &mids)?;
        sampled = sampled.merge_midpoints(&mids, vals);
        let (v2, p2, m2) = sampled.peak(&sigma, grid.refine)?;
        let rel = (v2 - value).abs() / v2.abs().max(f64::MIN_POSITIVE);
        shift = Some(rel);
        value = v2;
        peak = p2;
        method = m2;
        if rel <= DOUBLING_TOL {
            break;
        }
        log::info!(
            "grid doubled to {} points, peak moved by {:.3e}",
            sampled.thetas.len(),
            rel
        );
    }
    Ok(CostReport {
        value,
        peak_theta: Some(peak),
        grid_size: sampled.thetas.len(),
        method,
        scaled: false,
        doubling_shift: shift,
    })
}

/// H-infinity norm of a matrix-valued evaluator on the unit circle.
pub fn hinf_norm<F>(evaluator: F, grid: &FrequencyGrid) -> Result<CostReport>
where
    F: Fn(C64) -> Result<CMat> + Sync,
{
    hinf_of(|t| evaluator(unit_point(t)).map(|m| sigma_max(&m)), grid)
}

/// Rejects systems that are not stable; their norm is unbounded.
pub fn hinf_norm_system(sys: &StateSpace, grid: &FrequencyGrid) -> Result<CostReport> {
    let (stable, radius) = sys.stability();
    if !stable {
        return Err(Error::Unstable { what: "system", radius });
    }
    hinf_norm(|l| sys.freq_response(l), grid)
}

/// Peak magnitude of a scalar FIR over the grid.
pub fn hinf_norm_fir(fir: &FirMatrix, grid: &FrequencyGrid) -> Result<CostReport> {
    hinf_norm(|l| Ok(fir.eval(l)), grid)
}

/// Trapezoid weights on the half grid for `(1/pi) int_0^pi f`.
pub fn half_circle_weights(thetas: &[f64]) -> Vec<f64> {
    let n = thetas.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = (thetas[k + 1] - thetas[k]) / std::f64::consts::PI;
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// `(1/pi) int_0^pi energy(theta)` by the trapezoid rule, doubled until
/// stable to `tol`. Exact for trigonometric polynomials of degree below
/// `2(N - 1)` on a uniform grid.
pub fn quadrature_energy<F>(energy: F, grid: &FrequencyGrid, tol: f64) -> Result<(f64, usize, Option<f64>)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let integrate = |thetas: &[f64], vals: &[f64]| -> f64 {
        half_circle_weights(thetas).iter().zip(vals).map(|(w, v)| w * v).sum()
    };
    let mut thetas = grid.thetas.clone();
    let mut vals: Vec<f64> = thetas.par_iter().map(|&t| energy(t)).collect::<Result<_>>()?;
    let mut value = integrate(&thetas, &vals);
    let mut shift = None;
    for _ in 0..grid.max_doublings {
        let g = FrequencyGrid {
            thetas: thetas.clone(),
            refine: false,
            max_doublings: 0,
        };
        let mids = g.midpoints();
        let mvals: Vec<f64> = mids.par_iter().map(|&t| energy(t)).collect::<Result<_>>()?;
        let mut nt = Vec::with_capacity(2 * thetas.len() - 1);
        let mut nv = Vec::with_capacity(2 * thetas.len() - 1);
        for i in 0..thetas.len() {
            nt.push(thetas[i]);
            nv.push(vals[i]);
            if i < mids.len() {
                nt.push(mids[i]);
                nv.push(mvals[i]);
            }
        }
        thetas = nt;
        vals = nv;
        let v2 = integrate(&thetas, &vals);
        let rel = (v2 - value).abs() / v2.abs().max(f64::MIN_POSITIVE);
        shift = Some(rel);
        value = v2;
        if rel <= tol {
            break;
        }
    }
    Ok((value, thetas.len(), shift))
}

/// H2 norm from frequency samples, `sqrt((1/pi) int_0^pi |M|_F^2)`.
pub fn h2_norm_grid<F>(evaluator: F, grid: &FrequencyGrid) -> Result<CostReport>
where
    F: Fn(C64) -> Result<CMat> + Sync,
{
    let (energy, size, shift) = quadrature_energy(|t| evaluator(unit_point(t)).map(|m| frobenius_sq(&m)), grid, 1e-10)?;
    Ok(CostReport {
        value: energy.max(0.0).sqrt(),
        peak_theta: None,
        grid_size: size,
        method: SigmaMethod::Quadrature,
        scaled: false,
        doubling_shift: shift,
    })
}

/// `(1/sqrt(n)) |M|_2` from exact taps.
pub fn h2_norm_scaled_fir(fir: &FirMatrix, n: usize) -> CostReport {
    CostReport {
        value: fir.h2_norm() / (n.max(1) as f64).sqrt(),
        peak_theta: None,
        grid_size: 0,
        method: SigmaMethod::Taps,
        scaled: true,
        doubling_shift: None,
    }
}

/// Relative tail energy accepted when truncating an impulse response.
pub const TAIL_TOL: f64 = 1e-8;
const MAX_TAPS: usize = 1 << 16;

/// Impulse response long enough that the estimated tail energy is at most
/// `tol` of the captured energy.
pub fn converged_impulse(sys: &StateSpace, start: usize, tol: f64) -> Result<FirMatrix> {
    let mut taps = start.max(2);
    loop {
        let ir = sys.impulse_response(taps)?;
        let energy = ir.fir.energy();
        let tail = ir.tail.ok_or(Error::Unstable {
            what: "impulse response source",
            radius: sys.spectral_radius(),
        })?;
        if tail * tail <= tol * energy.max(f64::MIN_POSITIVE) || tail == 0.0 {
            return Ok(ir.fir);
        }
        if taps >= MAX_TAPS {
            return Err(Error::TailEnergy {
                tail: tail * tail / energy.max(f64::MIN_POSITIVE),
            });
        }
        taps *= 2;
    }
}

/// `(1/sqrt(n)) |sys|_2` through the impulse response.
pub fn h2_norm_scaled(sys: &StateSpace, n: usize) -> Result<CostReport> {
    let fir = converged_impulse(sys, 256, TAIL_TOL)?;
    Ok(h2_norm_scaled_fir(&fir, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn constant_matrix_norm() {
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(3.0, 0.0),
            C64::new(1.0, 0.0),
        ]));
        let grid = FrequencyGrid::uniform(16).unwrap();
        let r = hinf_norm(|_| Ok(m.clone()), &grid).unwrap();
        assert_relative_eq!(r.value, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn geometric_peak() {
        let sys = StateSpace::siso(0.5, 0.5, 1.0, 1.0);
        let grid = FrequencyGrid::uniform(DEFAULT_GRID_POINTS).unwrap();
        let r = hinf_norm_system(&sys, &grid).unwrap();
        assert!((r.value - 2.0).abs() <= 1e-4);
        assert_eq!(r.peak_theta, Some(0.0));
    }

    #[test]
    fn refinement_recovers_interior_peak() {
        // resonance near theta = 1.0 between coarse grid points
        let r = 0.95_f64;
        let th0 = 1.0_f64;
        let a = DMatrix::from_row_slice(2, 2, &[2.0 * r * th0.cos(), -r * r, 1.0, 0.0]);
        let sys = StateSpace::new(
            a,
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let fine = hinf_norm_system(&sys, &FrequencyGrid::uniform(20001).unwrap().with_doublings(0)).unwrap();
        let coarse = FrequencyGrid::uniform(64).unwrap().with_doublings(0);
        let plain = hinf_norm_system(&sys, &coarse.clone().with_refine(false)).unwrap();
        let refined = hinf_norm_system(&sys, &coarse).unwrap();
        assert!((refined.value - fine.value).abs() <= (plain.value - fine.value).abs());
    }

    #[test]
    fn parabola_vertex_of_exact_parabola() {
        let f = |t: f64| 3.0 - (t - 0.37) * (t - 0.37);
        let v = parabola_vertex([0.1, 0.3, 0.5], [f(0.1), f(0.3), f(0.5)]).unwrap();
        assert_relative_eq!(v, 0.37, epsilon = 1e-12);
        assert!(parabola_vertex([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]).is_none());
    }

    #[test]
    fn h2_examples() {
        let f = FirMatrix::scalar(&[3.0, 4.0]).unwrap();
        assert_relative_eq!(h2_norm_scaled_fir(&f, 1).value, 5.0);
        let sys = StateSpace::siso(0.5, 1.0, 1.0, 0.0);
        // taps 0, 1, 0.5, 0.25, ... energy 1 / (1 - 0.25)
        let r = h2_norm_scaled(&sys, 1).unwrap();
        assert_relative_eq!(r.value, (1.0_f64 / 0.75).sqrt(), max_relative = 1e-8);
        assert!(r.scaled);
    }

    #[test]
    fn unstable_h2_is_an_error() {
        let sys = StateSpace::siso(1.0, 1.0, 1.0, 0.0);
        assert!(h2_norm_scaled(&sys, 1).is_err());
    }

    #[test]
    fn half_circle_weights_sum_to_one() {
        let g = FrequencyGrid::uniform(33).unwrap();
        let s: f64 = half_circle_weights(g.thetas()).iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::uniform(1).is_err());
        assert!(FrequencyGrid::from_thetas(vec![0.0, 2.0, 1.0, std::f64::consts::PI]).is_err());
        let d = FrequencyGrid::uniform(5).unwrap().doubled();
        assert_eq!(d.len(), 9);
        assert_eq!(d.thetas()[8], std::f64::consts::PI);
    }
}
