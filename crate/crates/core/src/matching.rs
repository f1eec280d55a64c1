//! Per-agent model matching `min_Z |H - U Z V|` over FIR `Z`, in the
//! H-infinity (Lawson reweighting) and H2 (tap least squares) norms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_fn, hermitian_max_eig, sigma_max_dense, unit_point, CMat, C64, ZERO};
use crate::lti::{FirMatrix, StateSpace};
use crate::norms::{
    converged_impulse, hinf_norm_fir, hinf_of, BlockKind, FrequencyGrid, NormKind, SigmaMethod, DEFAULT_GRID_POINTS,
    DOUBLING_TOL,
};
use crate::youla::YoulaFactors;

pub const DEFAULT_FIR_ORDER: usize = 64;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingSettings {
    pub fir_order: usize,
    pub grid_points: usize,
    pub max_iterations: usize,
    pub tol_rel: f64,
    /// Weight damping of the Lawson update, in `(0, 1]`.
    pub damping: f64,
    /// Optional bound on `|Z|_inf`.
    pub bound: Option<f64>,
    /// Re-solves on a doubled grid allowed when the cost is not grid-stable.
    pub max_grid_doublings: usize,
}

impl Default for MatchingSettings {
    fn default() -> Self {
        MatchingSettings {
            fir_order: DEFAULT_FIR_ORDER,
            grid_points: DEFAULT_GRID_POINTS,
            max_iterations: 500,
            tol_rel: 1e-6,
            damping: 0.5,
            bound: None,
            max_grid_doublings: 2,
        }
    }
}

/// `min_Z |H - U Z V|` with `U` a column and `V` a row.
#[derive(Debug, Clone)]
pub struct MatchingProblem {
    h: StateSpace,
    u: StateSpace,
    v: StateSpace,
    pub norm: NormKind,
    pub block: BlockKind,
    pub settings: MatchingSettings,
}

fn select_rows(sys: &StateSpace, rows: usize) -> Result<StateSpace> {
    StateSpace::new(
        sys.a().clone(),
        sys.b().clone(),
        sys.c().rows(0, rows).into_owned(),
        sys.d().rows(0, rows).into_owned(),
    )
}

impl MatchingProblem {
    /// Generic instance. The two-block variant appends the channel `Z V`
    /// below `H - U Z V`.
    pub fn new(
        h: StateSpace,
        u: StateSpace,
        v: StateSpace,
        norm: NormKind,
        block: BlockKind,
        settings: MatchingSettings,
    ) -> Result<Self> {
        let (h, u) = match block {
            BlockKind::One => (h, u),
            BlockKind::Two => {
                let zero = StateSpace::static_gain(DMatrix::zeros(1, h.inputs()));
                let minus_one = StateSpace::scalar_gain(-1.0);
                (StateSpace::vstack(&h, &zero)?, StateSpace::vstack(&u, &minus_one)?)
            }
        };
        Self::from_parts(h, u, v, norm, block, settings)
    }

    /// Instance for one agent. The one-block variant keeps only the
    /// regulated rows; the two-block variant keeps the control-weight rows
    /// as the penalty channel.
    pub fn for_agent(
        factors: &YoulaFactors,
        norm: NormKind,
        block: BlockKind,
        settings: MatchingSettings,
    ) -> Result<Self> {
        let rows = match block {
            BlockKind::One => factors.plant.regulated(),
            BlockKind::Two => factors.plant.n_z(),
        };
        Self::from_parts(
            select_rows(&factors.h, rows)?,
            select_rows(&factors.u, rows)?,
            factors.v.clone(),
            norm,
            block,
            settings,
        )
    }

    fn from_parts(
        h: StateSpace,
        u: StateSpace,
        v: StateSpace,
        norm: NormKind,
        block: BlockKind,
        settings: MatchingSettings,
    ) -> Result<Self> {
        if u.inputs() != 1 {
            return Err(Error::dim("U inputs", 1, u.inputs()));
        }
        if v.outputs() != 1 {
            return Err(Error::dim("V outputs", 1, v.outputs()));
        }
        if h.outputs() != u.outputs() || h.inputs() != v.inputs() {
            return Err(Error::dim(
                "H",
                format!("{}x{}", u.outputs(), v.inputs()),
                format!("{}x{}", h.outputs(), h.inputs()),
            ));
        }
        if settings.fir_order == 0 {
            return Err(Error::InvalidParameter("FIR order must be at least 1".into()));
        }
        if !(settings.damping > 0.0 && settings.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping {} outside (0, 1]",
                settings.damping
            )));
        }
        if let Some(g) = settings.bound {
            if !(g > 0.0) {
                return Err(Error::InvalidParameter(format!("bound {g} must be positive")));
            }
        }
        for (what, sys) in [("H", &h), ("U", &u), ("V", &v)] {
            let (stable, radius) = sys.stability();
            if !stable {
                return Err(Error::Unstable { what, radius });
            }
        }
        Ok(MatchingProblem {
            h,
            u,
            v,
            norm,
            block,
            settings,
        })
    }

    pub fn h(&self) -> &StateSpace {
        &self.h
    }
    pub fn u(&self) -> &StateSpace {
        &self.u
    }
    pub fn v(&self) -> &StateSpace {
        &self.v
    }

    fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::uniform(self.settings.grid_points)
    }

    /// Residual matrix `H - U z V` at one frequency.
    pub fn residual_at(&self, z: &FirMatrix, lambda: C64) -> Result<CMat> {
        let h = self.h.freq_response(lambda)?;
        let u = self.u.freq_response(lambda)?;
        let v = self.v.freq_response(lambda)?;
        Ok(h - u * v * z.eval_scalar(lambda))
    }

    /// Objective value for a given `Z` in the problem's norm.
    pub fn cost_of(&self, z: &FirMatrix) -> Result<f64> {
        match self.norm {
            NormKind::Hinf => Ok(self.hinf_cost(z, &self.grid()?)?.0),
            NormKind::H2 => {
                let data = H2Data::new(self, z.len())?;
                Ok(data.cost(&DVector::from_vec(pad(&z.scalar_taps(), data.order))))
            }
        }
    }

    fn hinf_cost(&self, z: &FirMatrix, grid: &FrequencyGrid) -> Result<(f64, Option<f64>)> {
        let grid = grid.clone().with_doublings(1);
        let report = hinf_of(
            |t| {
                Ok((
                    sigma_max_dense(&self.residual_at(z, unit_point(t))?),
                    SigmaMethod::DenseSvd,
                ))
            },
            &grid,
        )?;
        Ok((report.value, report.peak_theta))
    }
}

fn pad(taps: &[f64], len: usize) -> Vec<f64> {
    let mut v = taps.to_vec();
    v.resize(len.max(taps.len()), 0.0);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSolution {
    pub z: Vec<f64>,
    /// Achieved objective value.
    pub cost: f64,
    /// Objective at `Z = 0`.
    pub cost_at_zero: f64,
    /// Per-grid-point value of the residual norm (largest singular value
    /// for H-infinity, Frobenius norm for H2).
    pub profile: Vec<f64>,
    pub grid_size: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Achieved cost minus the best lower bound from the weighted problems
    /// (zero for H2, which is solved exactly).
    pub certificate_gap: f64,
    /// Relative normal-equation residual of the H2 solve.
    pub normal_residual: Option<f64>,
    pub bound_active: bool,
}

impl MatchingSolution {
    pub fn fir(&self) -> FirMatrix {
        FirMatrix::scalar(&self.z).expect("solution has at least one tap")
    }
}

pub fn solve(problem: &MatchingProblem) -> Result<MatchingSolution> {
    match problem.norm {
        NormKind::Hinf => solve_hinf(problem),
        NormKind::H2 => solve_h2(problem),
    }
}

/// Frequency samples of the factors.
struct FrequencyData {
    thetas: Vec<f64>,
    h: Vec<CMat>,
    u: Vec<CMat>,
    v: Vec<CMat>,
}

impl FrequencyData {
    fn new(problem: &MatchingProblem, grid: &FrequencyGrid) -> Result<Self> {
        let mut h = Vec::with_capacity(grid.len());
        let mut u = Vec::with_capacity(grid.len());
        let mut v = Vec::with_capacity(grid.len());
        for &t in grid.thetas() {
            let l = unit_point(t);
            h.push(problem.h.freq_response(l)?);
            u.push(problem.u.freq_response(l)?);
            v.push(problem.v.freq_response(l)?);
        }
        Ok(FrequencyData {
            thetas: grid.thetas().to_vec(),
            h,
            u,
            v,
        })
    }
}

struct LawsonOutcome {
    taps: Vec<f64>,
    upper: f64,
    lower: f64,
    iterations: usize,
    converged: bool,
}

fn lawson(data: &FrequencyData, settings: &MatchingSettings) -> Result<LawsonOutcome> {
    let k_count = data.thetas.len();
    let order = settings.fir_order;
    let m = data.h[0].ncols();
    let mut cos_t = vec![0.0; k_count * order];
    let mut sin_t = vec![0.0; k_count * order];
    for (k, &t) in data.thetas.iter().enumerate() {
        for l in 0..order {
            let (s, c) = (l as f64 * t).sin_cos();
            cos_t[k * order + l] = c;
            sin_t[k * order + l] = s;
        }
    }
    let uv: Vec<CMat> = data.u.iter().zip(&data.v).map(|(u, v)| u * v).collect();
    let u_sq: Vec<f64> = data.u.iter().map(|u| u.norm_squared()).collect();

    let mut weights: Vec<CMat> = vec![CMat::identity(m, m) * C64::new(1.0 / (m * k_count) as f64, 0.0); k_count];
    let mut best = LawsonOutcome {
        taps: vec![0.0; order],
        upper: f64::INFINITY,
        lower: 0.0,
        iterations: 0,
        converged: false,
    };
    let mut prev_upper = f64::NAN;
    let mut a = vec![0.0; k_count];
    let mut g = vec![ZERO; k_count];
    let mut residual_gram = vec![CMat::zeros(m, m); k_count];
    for it in 1..=settings.max_iterations {
        let mut c_sum = 0.0;
        for k in 0..k_count {
            let w = &weights[k];
            let wv = w * data.v[k].adjoint();
            a[k] = u_sq[k] * (&data.v[k] * &wv)[(0, 0)].re;
            g[k] = (data.u[k].adjoint() * &data.h[k] * &wv)[(0, 0)].conj();
            c_sum += (&data.h[k] * w * data.h[k].adjoint()).trace().re;
        }
        let mut gram = DMatrix::<f64>::zeros(order, order);
        let mut col = vec![0.0; order];
        for (d, cd) in col.iter_mut().enumerate() {
            *cd = (0..k_count).map(|k| a[k] * cos_t[k * order + d]).sum();
        }
        for i in 0..order {
            for j in 0..order {
                gram[(i, j)] = col[i.abs_diff(j)];
            }
        }
        let rhs = DVector::from_fn(order, |l, _| {
            (0..k_count)
                .map(|k| g[k].re * cos_t[k * order + l] + g[k].im * sin_t[k * order + l])
                .sum::<f64>()
        });
        let x = solve_spd(gram, &rhs, "Lawson step");
        let lower_sq = c_sum - rhs.dot(&x);
        let lower = lower_sq.max(0.0).sqrt();

        let mut upper = 0.0_f64;
        for k in 0..k_count {
            let mut zr = 0.0;
            let mut zi = 0.0;
            for l in 0..order {
                zr += x[l] * cos_t[k * order + l];
                zi -= x[l] * sin_t[k * order + l];
            }
            let r = &data.h[k] - &uv[k] * C64::new(zr, zi);
            residual_gram[k] = r.adjoint() * r;
            upper = upper.max(hermitian_max_eig(&residual_gram[k]).max(0.0).sqrt());
        }
        best.lower = best.lower.max(lower);
        best.iterations = it;
        if upper < best.upper {
            best.upper = upper;
            best.taps = x.iter().copied().collect();
        }
        if upper <= 1e-14 * best.lower.max(1.0) || (upper - prev_upper).abs() <= settings.tol_rel * upper {
            best.converged = true;
            break;
        }
        prev_upper = upper;

        // W <- (1 - d) W + d S W S / tr, S = (R'R)^{1/4}
        let mut next: Vec<CMat> = Vec::with_capacity(k_count);
        let mut total = 0.0;
        for k in 0..k_count {
            let s = hermitian_fn(&residual_gram[k], |e| e.max(0.0).powf(0.25));
            let w = &s * &weights[k] * &s;
            total += w.trace().re;
            next.push(w);
        }
        if !(total > 0.0) {
            best.converged = true;
            break;
        }
        let d = settings.damping;
        for (w, n) in weights.iter_mut().zip(next) {
            *w = &*w * C64::new(1.0 - d, 0.0) + n * C64::new(d / total, 0.0);
        }
    }
    Ok(best)
}

/// Cholesky solve with a ridge retry on failure.
fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> DVector<f64> {
    if let Some(ch) = gram.clone().cholesky() {
        return ch.solve(rhs);
    }
    log::warn!("{context}: normal equations not positive definite, ridge {RIDGE:e} applied");
    let scale = gram.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    let n = gram.nrows();
    let ridged = gram + DMatrix::identity(n, n) * (RIDGE * scale);
    match ridged.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => ridged.lu().solve(rhs).unwrap_or_else(|| DVector::zeros(n)),
    }
}

/// Minimax solve by Lawson reweighting, re-solved on a doubled grid while
/// the achieved cost is not grid-stable.
pub fn solve_hinf(problem: &MatchingProblem) -> Result<MatchingSolution> {
    if problem.norm != NormKind::Hinf {
        return Err(Error::InvalidParameter("solve_hinf needs an H-infinity problem".into()));
    }
    let mut grid = problem.grid()?.with_doublings(0);
    let mut iterations = 0;
    let mut attempt = 0;
    loop {
        let data = FrequencyData::new(problem, &grid)?;
        let out = lawson(&data, &problem.settings)?;
        iterations += out.iterations;
        let mut z = FirMatrix::scalar(&out.taps)?;
        let mut bound_active = false;
        if let Some(gamma) = problem.settings.bound {
            let znorm = hinf_norm_fir(&z, &grid)?.value;
            if znorm > gamma {
                z = enforce_bound(&z, gamma, &grid)?;
                bound_active = true;
            }
        }
        let (cost, _) = problem.hinf_cost(&z, &grid)?;
        let stable_grid = (cost - out.upper).abs() <= DOUBLING_TOL * cost.max(f64::MIN_POSITIVE);
        if bound_active || stable_grid || attempt >= problem.settings.max_grid_doublings {
            let zero = FirMatrix::zero_scalar(1);
            let (cost_at_zero, _) = problem.hinf_cost(&zero, &grid)?;
            let profile = data
                .thetas
                .iter()
                .map(|&t| problem.residual_at(&z, unit_point(t)).map(|r| sigma_max_dense(&r)))
                .collect::<Result<Vec<_>>>()?;
            // the weighted bound only certifies the unconstrained problem
            let gap = if bound_active {
                f64::NAN
            } else {
                (cost - out.lower).max(0.0)
            };
            return Ok(MatchingSolution {
                z: z.scalar_taps(),
                cost,
                cost_at_zero,
                profile,
                grid_size: grid.len(),
                iterations,
                converged: out.converged,
                certificate_gap: gap,
                normal_residual: None,
                bound_active,
            });
        }
        log::info!(
            "matching cost moved {:.3e} off-grid; re-solving on {} points",
            (cost - out.upper).abs() / cost,
            2 * grid.len() - 1
        );
        grid = grid.doubled();
        attempt += 1;
    }
}

/// Tap-domain data of the H2 problem: impulse responses of `H` and `UV`.
struct H2Data {
    order: usize,
    h_energy: f64,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl H2Data {
    fn new(problem: &MatchingProblem, order: usize) -> Result<Self> {
        let start = (4 * order).max(256);
        let h = converged_impulse(&problem.h, start, 1e-16)?;
        let uv = StateSpace::series(&problem.v, &problem.u)?;
        let g = converged_impulse(&uv, start, 1e-16)?;
        let len = h.len().max(g.len());
        let zero = DMatrix::zeros(problem.h.outputs(), problem.h.inputs());
        let tap =
            |f: &FirMatrix, k: usize| -> DMatrix<f64> { f.taps().get(k).cloned().unwrap_or_else(|| zero.clone()) };
        let ht: Vec<DMatrix<f64>> = (0..len).map(|k| tap(&h, k)).collect();
        let gt: Vec<DMatrix<f64>> = (0..len).map(|k| tap(&g, k)).collect();
        let inner = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.component_mul(b).sum();
        let mut col = vec![0.0; order];
        for (d, cd) in col.iter_mut().enumerate() {
            *cd = (0..len.saturating_sub(d)).map(|t| inner(&gt[t], &gt[t + d])).sum();
        }
        let gram = DMatrix::from_fn(order, order, |i, j| col[i.abs_diff(j)]);
        let rhs = DVector::from_fn(order, |l, _| {
            (0..len.saturating_sub(l)).map(|t| inner(&gt[t], &ht[t + l])).sum()
        });
        Ok(H2Data {
            order,
            h_energy: h.energy(),
            gram,
            rhs,
        })
    }

    fn cost(&self, x: &DVector<f64>) -> f64 {
        let e = self.h_energy - 2.0 * self.rhs.dot(x) + x.dot(&(&self.gram * x));
        e.max(0.0).sqrt()
    }
}

/// Least-squares solve on the taps; the objective is quadratic in them.
pub fn solve_h2(problem: &MatchingProblem) -> Result<MatchingSolution> {
    if problem.norm != NormKind::H2 {
        return Err(Error::InvalidParameter("solve_h2 needs an H2 problem".into()));
    }
    let data = H2Data::new(problem, problem.settings.fir_order)?;
    let x = solve_spd(data.gram.clone(), &data.rhs, "H2 matching");
    let normal_residual = (&data.gram * &x - &data.rhs).amax() / data.rhs.amax().max(data.gram.amax()).max(1.0);
    let mut z = FirMatrix::scalar(x.as_slice())?;
    let grid = problem.grid()?;
    let mut bound_active = false;
    if let Some(gamma) = problem.settings.bound {
        if hinf_norm_fir(&z, &grid)?.value > gamma {
            z = enforce_bound(&z, gamma, &grid)?;
            bound_active = true;
        }
    }
    let cost = data.cost(&DVector::from_vec(z.scalar_taps()));
    let profile = grid
        .thetas()
        .iter()
        .map(|&t| problem.residual_at(&z, unit_point(t)).map(|r| r.norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchingSolution {
        z: z.scalar_taps(),
        cost,
        cost_at_zero: data.h_energy.sqrt(),
        profile,
        grid_size: grid.len(),
        iterations: 1,
        converged: true,
        certificate_gap: 0.0,
        normal_residual: Some(normal_residual),
        bound_active,
    })
}

/// Relative energy of the last quarter of the taps above which the FIR
/// order is doubled.
pub const TAP_TAIL_TOL: f64 = 1e-8;
const MAX_FIR_ORDER: usize = 1024;

/// Energy of the last quarter of the taps relative to the total.
pub fn tail_fraction(taps: &[f64]) -> f64 {
    let total: f64 = taps.iter().map(|t| t * t).sum();
    if total == 0.0 {
        return 0.0;
    }
    let start = taps.len() - (taps.len() / 4).max(1);
    taps[start..].iter().map(|t| t * t).sum::<f64>() / total
}

/// Solves, doubling the FIR order while the tail of the solution carries
/// more than `TAP_TAIL_TOL` of its energy.
pub fn solve_adaptive(problem: &MatchingProblem) -> Result<MatchingSolution> {
    let mut p = problem.clone();
    loop {
        let sol = solve(&p)?;
        let tail = tail_fraction(&sol.z);
        if tail <= TAP_TAIL_TOL || p.settings.fir_order * 2 > MAX_FIR_ORDER {
            if tail > TAP_TAIL_TOL {
                log::warn!("FIR tail fraction {tail:.3e} at the order cap {}", p.settings.fir_order);
            }
            return Ok(sol);
        }
        log::info!(
            "FIR tail fraction {tail:.3e}; doubling order to {}",
            2 * p.settings.fir_order
        );
        p.settings.fir_order *= 2;
    }
}

/// Scales `Z` down to `|Z|_inf = gamma` when it exceeds the bound.
pub fn enforce_bound(z: &FirMatrix, gamma: f64, grid: &FrequencyGrid) -> Result<FirMatrix> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("bound {gamma} must be positive")));
    }
    let norm = hinf_norm_fir(z, grid)?.value;
    if norm <= gamma {
        return Ok(z.clone());
    }
    Ok(z.scale(gamma / norm))
}

/// Decentralized optimum of the first `M` agents for `M = 1..n`: running
/// maximum for H-infinity, root mean square for H2.
pub fn mu_sequence(costs: &[f64], norm: NormKind) -> Vec<f64> {
    let mut out = Vec::with_capacity(costs.len());
    let mut acc = 0.0_f64;
    for (i, &c) in costs.iter().enumerate() {
        match norm {
            NormKind::Hinf => {
                acc = acc.max(c);
                out.push(acc);
            }
            NormKind::H2 => {
                acc += c * c;
                out.push((acc / (i + 1) as f64).sqrt());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gain(k: f64) -> StateSpace {
        StateSpace::scalar_gain(k)
    }

    fn small_settings() -> MatchingSettings {
        MatchingSettings {
            fir_order: 4,
            grid_points: 32,
            ..Default::default()
        }
    }

    #[test]
    fn static_two_block_minimax() {
        let p = MatchingProblem::new(
            gain(2.0),
            gain(1.0),
            gain(1.0),
            NormKind::Hinf,
            BlockKind::Two,
            small_settings(),
        )
        .unwrap();
        let s = solve_hinf(&p).unwrap();
        assert!((s.cost - 2f64.sqrt()).abs() <= 1e-6, "{}", s.cost);
        assert!((s.z[0] - 1.0).abs() <= 1e-5);
        assert!(s.certificate_gap <= 1e-6);
    }

    #[test]
    fn static_one_block_with_bound() {
        let settings = MatchingSettings {
            bound: Some(1.0),
            ..small_settings()
        };
        let p = MatchingProblem::new(
            gain(2.0),
            gain(1.0),
            gain(1.0),
            NormKind::Hinf,
            BlockKind::One,
            settings,
        )
        .unwrap();
        let s = solve_hinf(&p).unwrap();
        assert!(s.bound_active);
        assert_relative_eq!(s.z[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.cost, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn h2_exact_static_match() {
        let p = MatchingProblem::new(
            gain(2.0),
            gain(1.0),
            gain(1.0),
            NormKind::H2,
            BlockKind::One,
            small_settings(),
        )
        .unwrap();
        let s = solve_h2(&p).unwrap();
        assert_relative_eq!(s.z[0], 2.0, epsilon = 1e-12);
        assert!(s.cost <= 1e-9);
    }

    #[test]
    fn h2_delay_causality() {
        let h = FirMatrix::scalar(&[1.0, 1.0]).unwrap().to_state_space();
        let delay = StateSpace::siso(0.0, 1.0, 1.0, 0.0);
        let p = MatchingProblem::new(h, delay, gain(1.0), NormKind::H2, BlockKind::One, small_settings()).unwrap();
        let s = solve_h2(&p).unwrap();
        assert!((s.cost - 1.0).abs() <= 1e-9);
        assert!(s.normal_residual.unwrap() <= 1e-9);
    }

    #[test]
    fn enforce_bound_cases() {
        let grid = FrequencyGrid::uniform(64).unwrap();
        let z = FirMatrix::scalar(&[0.5]).unwrap();
        assert_eq!(enforce_bound(&z, 1.0, &grid).unwrap(), z);
        let z = FirMatrix::scalar(&[2.0]).unwrap();
        assert_eq!(enforce_bound(&z, 1.0, &grid).unwrap().scalar_taps(), vec![1.0]);
        let z = FirMatrix::scalar(&[0.3, -1.2, 0.7]).unwrap();
        let b = enforce_bound(&z, 0.5, &grid).unwrap();
        assert!((hinf_norm_fir(&b, &grid).unwrap().value - 0.5).abs() <= 1e-9);
    }

    #[test]
    fn mu_sequence_examples() {
        assert_eq!(mu_sequence(&[1.0, 2.0], NormKind::Hinf), vec![1.0, 2.0]);
        assert_eq!(mu_sequence(&[2.0, 1.0, 1.5], NormKind::Hinf), vec![2.0, 2.0, 2.0]);
        assert_eq!(mu_sequence(&[3.0, 3.0, 3.0], NormKind::H2), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn dimension_errors() {
        let two = StateSpace::static_gain(DMatrix::zeros(1, 2));
        let r = MatchingProblem::new(
            gain(1.0),
            two,
            gain(1.0),
            NormKind::H2,
            BlockKind::One,
            small_settings(),
        );
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
