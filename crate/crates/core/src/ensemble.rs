//! Heterogeneous agent populations, the block Youla parameter and the
//! structured closed-loop maps `Phi = H - U Q V` and `Psi = T Phi`.
//!
//! Rows of the assembled maps are agent-major: agent `i` owns rows
//! `p i .. p (i + 1)` and columns `m i .. m (i + 1)`. The first `r` rows of
//! each agent are its regulated outputs; the averaging projector `T` acts on
//! those only.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_eig_block_diag_rank_one, sigma_max_dense, unit_point, CMat, C64, ZERO};
use crate::lti::FirMatrix;
use crate::matching::{solve_adaptive, MatchingProblem, MatchingSettings, MatchingSolution};
use crate::norms::{
    h2_norm_scaled, hinf_norm_fir, hinf_norm_system, hinf_of, krylov_or_dense, quadrature_energy, BlockKind,
    CostReport, FrequencyGrid, NormKind, SigmaMethod, DENSE_LIMIT,
};
use crate::youla::{factor_agent, RiccatiWeights, YoulaFactors, DEFAULT_RHO};

pub const A_RANGE: (f64, f64) = (0.5, 1.5);
pub const B_RANGE: (f64, f64) = (0.8, 1.2);
const MAX_RESAMPLES: usize = 1000;
/// Relative slack of the dominance test.
const DOMINANCE_RTOL: f64 = 1e-12;

/// Factor norms of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorNorms {
    pub h_inf: f64,
    pub u_inf: f64,
    pub v_inf: f64,
    pub h_2: f64,
    pub v_2: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub a: f64,
    pub b: f64,
    pub factors: YoulaFactors,
    pub norms: FactorNorms,
}

/// Population maxima of the factor norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub gamma_h: f64,
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub gamma_h2: f64,
    pub gamma_v2: f64,
}

impl Constants {
    fn from_agents(agents: &[Agent]) -> Self {
        let max = |f: &dyn Fn(&FactorNorms) -> f64| agents.iter().map(|a| f(&a.norms)).fold(0.0, f64::max);
        Constants {
            gamma_h: max(&|n| n.h_inf),
            gamma_u: max(&|n| n.u_inf),
            gamma_v: max(&|n| n.v_inf),
            gamma_h2: max(&|n| n.h_2),
            gamma_v2: max(&|n| n.v_2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSettings {
    pub rho: f64,
    pub riccati_state: f64,
    pub riccati_input: f64,
    pub grid_points: usize,
}

impl Default for PopulationSettings {
    fn default() -> Self {
        PopulationSettings {
            rho: DEFAULT_RHO,
            riccati_state: 1.0,
            riccati_input: 1.0,
            grid_points: crate::norms::DEFAULT_GRID_POINTS,
        }
    }
}

impl PopulationSettings {
    fn weights(&self) -> RiccatiWeights {
        RiccatiWeights {
            state: self.riccati_state,
            input: self.riccati_input,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    seed: u64,
    settings: PopulationSettings,
    agents: Vec<Agent>,
    constants: Constants,
    resampled: usize,
}

fn build_agent(a: f64, b: f64, settings: &PopulationSettings, grid: &FrequencyGrid) -> Result<Agent> {
    let factors = factor_agent(a, b, settings.rho, settings.weights())?;
    let norms = FactorNorms {
        h_inf: hinf_norm_system(&factors.h, grid)?.value,
        u_inf: hinf_norm_system(&factors.u, grid)?.value,
        v_inf: hinf_norm_system(&factors.v, grid)?.value,
        h_2: h2_norm_scaled(&factors.h, 1)?.value,
        v_2: h2_norm_scaled(&factors.v, 1)?.value,
    };
    Ok(Agent { a, b, factors, norms })
}

/// Draws `(a_i, b_i)` in order, `a` before `b`, so a population of `n`
/// agents is the prefix of any larger population with the same seed.
pub fn sample_parameters(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = rng.random_range(A_RANGE.0..=A_RANGE.1);
            let b = rng.random_range(B_RANGE.0..=B_RANGE.1);
            (a, b)
        })
        .collect()
}

impl EnsembleModel {
    pub fn sample(n: usize, seed: u64, settings: PopulationSettings) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("population needs n >= 2, got {n}")));
        }
        let grid = FrequencyGrid::uniform(settings.grid_points)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(n);
        let mut resampled = 0;
        while params.len() < n {
            let a = rng.random_range(A_RANGE.0..=A_RANGE.1);
            let b = rng.random_range(B_RANGE.0..=B_RANGE.1);
            match factor_agent(a, b, settings.rho, settings.weights()) {
                Ok(_) => params.push((a, b)),
                Err(e) => {
                    resampled += 1;
                    log::warn!("agent draw a={a} b={b} rejected: {e}");
                    if resampled > MAX_RESAMPLES {
                        return Err(e);
                    }
                }
            }
        }
        let agents = params
            .par_iter()
            .map(|&(a, b)| build_agent(a, b, &settings, &grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(seed, settings, agents, resampled))
    }

    /// Rebuilds a model from explicit parameters (used by snapshots and
    /// hand-made populations).
    pub fn from_parameters(params: &[(f64, f64)], seed: u64, settings: PopulationSettings) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidParameter("empty population".into()));
        }
        let grid = FrequencyGrid::uniform(settings.grid_points)?;
        let agents = params
            .par_iter()
            .map(|&(a, b)| build_agent(a, b, &settings, &grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(seed, settings, agents, 0))
    }

    fn assemble(seed: u64, settings: PopulationSettings, agents: Vec<Agent>, resampled: usize) -> Self {
        let constants = Constants::from_agents(&agents);
        EnsembleModel {
            seed,
            settings,
            agents,
            constants,
            resampled,
        }
    }

    /// The first `n` agents, with constants recomputed over them.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidParameter(format!(
                "prefix {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(Self::assemble(
            self.seed,
            self.settings,
            self.agents[..n].to_vec(),
            self.resampled,
        ))
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }
    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn settings(&self) -> &PopulationSettings {
        &self.settings
    }
    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }
    pub fn constants(&self) -> Constants {
        self.constants
    }
    pub fn resampled(&self) -> usize {
        self.resampled
    }
    pub(crate) fn set_resampled(&mut self, resampled: usize) {
        self.resampled = resampled;
    }
    pub fn parameters(&self) -> Vec<(f64, f64)> {
        self.agents.iter().map(|a| (a.a, a.b)).collect()
    }

    fn shape(&self) -> (usize, usize, usize) {
        let f = &self.agents[0].factors;
        (f.h.outputs(), f.h.inputs(), f.plant.regulated())
    }
}

/// Growth profile `alpha(n) = c n^p` of the dominance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominanceProfile {
    pub c: f64,
    pub p: f64,
}

impl DominanceProfile {
    pub fn new(c: f64, p: f64) -> Result<Self> {
        let prof = DominanceProfile { c, p };
        prof.validate()?;
        Ok(prof)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite() && self.p >= 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dominance profile needs c >= 0 and p >= 0, got c={} p={}",
                self.c, self.p
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.c * (n as f64).powf(self.p)
    }

    /// `alpha = o(sqrt(n))`.
    pub fn is_compliant(&self) -> bool {
        self.p < 0.5
    }
}

/// How the redistributed norm is split over the rows of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    /// Nonnegative weights: every off-diagonal entry is a positive multiple
    /// of the column's diagonal entry.
    Coherent,
    /// Weights of random sign with the same magnitudes.
    Signed,
}

/// Compressed-column off-diagonal coefficients: `Q_ij = c_ij Q_jj`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Coupling {
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub coef: Vec<f64>,
}

impl Coupling {
    fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.coef[r].iter().copied())
    }

    fn column_abs_sum(&self, j: usize) -> f64 {
        self.column(j).map(|(_, c)| c.abs()).sum()
    }

    pub fn nnz(&self) -> usize {
        self.coef.len()
    }
}

/// Block Youla parameter: scalar FIR diagonal and scaled-copy
/// off-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQ {
    diagonal: Vec<FirMatrix>,
    diag_norms: Vec<f64>,
    coupling: Option<Coupling>,
    /// Dense copy of the coupling for wide fanouts.
    dense: Option<DMatrix<f64>>,
}

impl BlockQ {
    /// Diagonal parameter; the entry norms are measured on `grid`.
    pub fn diagonal(entries: Vec<FirMatrix>, grid: &FrequencyGrid) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty block parameter".into()));
        }
        if let Some(e) = entries.iter().find(|e| e.shape() != (1, 1)) {
            return Err(Error::dim("Q entry", "1x1", format!("{:?}", e.shape())));
        }
        let diag_norms = entries
            .par_iter()
            .map(|e| hinf_norm_fir(e, grid).map(|r| r.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockQ {
            diagonal: entries,
            diag_norms,
            coupling: None,
            dense: None,
        })
    }

    pub(crate) fn from_parts(
        diagonal: Vec<FirMatrix>,
        diag_norms: Vec<f64>,
        coupling: Option<Coupling>,
    ) -> Result<Self> {
        let n = diagonal.len();
        if diag_norms.len() != n {
            return Err(Error::dim("diagonal norms", n, diag_norms.len()));
        }
        if let Some(c) = &coupling {
            if c.col_ptr.len() != n + 1
                || c.row_idx.len() != c.coef.len()
                || c.col_ptr.last() != Some(&c.coef.len())
                || c.col_ptr.windows(2).any(|w| w[1] < w[0])
                || c.row_idx.iter().any(|&i| i >= n)
            {
                return Err(Error::InvalidParameter("malformed coupling pattern".into()));
            }
            for j in 0..n {
                if c.column(j).any(|(i, _)| i == j) {
                    return Err(Error::InvalidParameter(format!(
                        "coupling stores diagonal entry ({j}, {j})"
                    )));
                }
            }
        }
        let dense = coupling.as_ref().filter(|c| 8 * c.nnz() >= n * n).map(|c| {
            let mut d = DMatrix::zeros(n, n);
            for j in 0..n {
                for (i, v) in c.column(j) {
                    d[(i, j)] = v;
                }
            }
            d
        });
        Ok(BlockQ {
            diagonal,
            diag_norms,
            coupling,
            dense,
        })
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }
    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }
    pub fn diagonal_entries(&self) -> &[FirMatrix] {
        &self.diagonal
    }
    pub fn diagonal_norms(&self) -> &[f64] {
        &self.diag_norms
    }
    pub fn coupling(&self) -> Option<&Coupling> {
        self.coupling.as_ref()
    }
    pub fn is_diagonal(&self) -> bool {
        self.coupling.as_ref().map_or(true, |c| c.nnz() == 0)
    }

    /// `gamma_Q = max_j |Q_jj|_inf`.
    pub fn gamma_q(&self) -> f64 {
        self.diag_norms.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest `alpha` for which the parameter is column dominant.
    pub fn alpha_actual(&self) -> f64 {
        match &self.coupling {
            None => 0.0,
            Some(c) => (0..self.len())
                .map(|j| {
                    if self.diag_norms[j] > 0.0 {
                        c.column_abs_sum(j)
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max),
        }
    }

    /// Off-diagonal entry `Q_ij`, if stored.
    pub fn entry(&self, i: usize, j: usize) -> Option<FirMatrix> {
        if i == j {
            return self.diagonal.get(j).cloned();
        }
        let c = self.coupling.as_ref()?;
        c.column(j)
            .find(|&(r, _)| r == i)
            .map(|(_, v)| self.diagonal[j].scale(v))
    }

    /// `|Q_ij|_inf` for a stored off-diagonal entry, by homogeneity.
    pub fn entry_norm(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag_norms[j];
        }
        self.coupling
            .as_ref()
            .and_then(|c| c.column(j).find(|&(r, _)| r == i))
            .map_or(0.0, |(_, v)| v.abs() * self.diag_norms[j])
    }

    /// First `n` diagonal entries; only defined for diagonal parameters.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if !self.is_diagonal() {
            return Err(Error::InvalidParameter("prefix of a coupled parameter".into()));
        }
        if n == 0 || n > self.len() {
            return Err(Error::InvalidParameter(format!(
                "prefix {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(BlockQ {
            diagonal: self.diagonal[..n].to_vec(),
            diag_norms: self.diag_norms[..n].to_vec(),
            coupling: None,
            dense: None,
        })
    }

    fn values_at(&self, lambda: C64) -> Vec<C64> {
        self.diagonal.iter().map(|d| d.eval_scalar(lambda)).collect()
    }

    /// `t = C s` with `C = I + coupling`.
    fn mix(&self, s: &[C64], t: &mut [C64]) {
        if let Some(d) = &self.dense {
            let (re, im) = split(s);
            combine(s, &(d * re), &(d * im), t);
            return;
        }
        t.copy_from_slice(s);
        if let Some(c) = &self.coupling {
            for (j, &sj) in s.iter().enumerate() {
                for (i, cij) in c.column(j) {
                    t[i] += sj * cij;
                }
            }
        }
    }

    /// `s = C^T t`.
    fn mix_transpose(&self, t: &[C64], s: &mut [C64]) {
        if let Some(d) = &self.dense {
            let (re, im) = split(t);
            combine(t, &d.tr_mul(&re), &d.tr_mul(&im), s);
            return;
        }
        s.copy_from_slice(t);
        if let Some(c) = &self.coupling {
            for (j, sj) in s.iter_mut().enumerate() {
                for (i, cij) in c.column(j) {
                    *sj += t[i] * cij;
                }
            }
        }
    }
}

fn split(x: &[C64]) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(x.len(), x.iter().map(|z| z.re)),
        DVector::from_iterator(x.len(), x.iter().map(|z| z.im)),
    )
}

/// `out = base + (re + i im)`.
fn combine(base: &[C64], re: &DVector<f64>, im: &DVector<f64>, out: &mut [C64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = base[k] + C64::new(re[k], im[k]);
    }
}

/// Diagonal parameter made of each agent's matching solution.
pub fn selfish_q(
    model: &EnsembleModel,
    norm: NormKind,
    block: BlockKind,
    settings: &MatchingSettings,
) -> Result<(BlockQ, Vec<MatchingSolution>)> {
    let solutions = model
        .agents
        .par_iter()
        .map(|a| {
            let problem = MatchingProblem::for_agent(&a.factors, norm, block, settings.clone())?;
            solve_adaptive(&problem)
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = FrequencyGrid::uniform(settings.grid_points)?;
    let q = BlockQ::diagonal(solutions.iter().map(|s| s.fir()).collect(), &grid)?;
    Ok((q, solutions))
}

/// Redistributes norm off the diagonal: column `j` gets `fanout` random
/// rows `i != j` with `Q_ij = c_ij Q_jj` and `sum_i |c_ij| = alpha(n)`.
/// `fanout = None` uses every other row.
pub fn make_alpha_dominant(
    q: &BlockQ,
    profile: DominanceProfile,
    fanout: Option<usize>,
    allocation: Allocation,
    seed: u64,
) -> Result<BlockQ> {
    profile.validate()?;
    if !q.is_diagonal() {
        return Err(Error::InvalidParameter(
            "dominance construction needs a diagonal parameter".into(),
        ));
    }
    let n = q.len();
    let alpha = profile.alpha(n);
    if alpha == 0.0 || n < 2 {
        return Ok(q.clone());
    }
    let k = fanout.unwrap_or(n - 1);
    if k == 0 || k > n - 1 {
        return Err(Error::InvalidParameter(format!("fanout {k} outside 1..={}", n - 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::with_capacity(n * k);
    let mut coef = Vec::with_capacity(n * k);
    col_ptr.push(0);
    for j in 0..n {
        let mut rows: Vec<usize> = sample_indices(&mut rng, n - 1, k)
            .into_iter()
            .map(|i| if i >= j { i + 1 } else { i })
            .collect();
        rows.sort_unstable();
        let mut w: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|v| *v *= alpha / total);
        } else {
            w.iter_mut().for_each(|v| *v = alpha / k as f64);
        }
        if allocation == Allocation::Signed {
            for v in w.iter_mut() {
                if rng.random::<bool>() {
                    *v = -*v;
                }
            }
        }
        row_idx.extend(rows);
        coef.extend(w);
        col_ptr.push(row_idx.len());
    }
    BlockQ::from_parts(
        q.diagonal.clone(),
        q.diag_norms.clone(),
        Some(Coupling { col_ptr, row_idx, coef }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceCheck {
    pub passes: bool,
    /// `alpha |Q_jj| - sum_{i != j} |Q_ij|` per column.
    pub margins: Vec<f64>,
}

pub fn check_dominance(q: &BlockQ, alpha: f64) -> DominanceCheck {
    let n = q.len();
    let mut margins = Vec::with_capacity(n);
    let mut passes = true;
    for j in 0..n {
        let off = q
            .coupling
            .as_ref()
            .map_or(0.0, |c| c.column_abs_sum(j) * q.diag_norms[j]);
        let allowed = alpha * q.diag_norms[j];
        let margin = allowed - off;
        if margin < -DOMINANCE_RTOL * allowed.max(off) {
            passes = false;
        }
        margins.push(margin);
    }
    DominanceCheck { passes, margins }
}

/// Which rows enter the cost and whether they are averaged out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// Deviation from the population average, `T = I - (1/n) 1 1'`.
    Social,
    /// No averaging.
    Individual,
}

/// Dense `T = I - (1/n) 1 1'`.
pub fn averaging_projector(n: usize) -> DMatrix<f64> {
    let avg = 1.0 / n.max(1) as f64;
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - avg } else { -avg })
}

/// Factor responses and parameter values of a whole population at one
/// frequency.
pub struct Frame<'a> {
    q: &'a BlockQ,
    n: usize,
    p: usize,
    m: usize,
    r: usize,
    h: Vec<C64>,
    u: Vec<C64>,
    v: Vec<C64>,
    qd: Vec<C64>,
}

impl<'a> Frame<'a> {
    pub fn new(model: &EnsembleModel, q: &'a BlockQ, lambda: C64) -> Result<Self> {
        let n = model.len();
        if q.len() != n {
            return Err(Error::dim("block parameter", n, q.len()));
        }
        let (p, m, r) = model.shape();
        let mut h = Vec::with_capacity(n * p * m);
        let mut u = Vec::with_capacity(n * p);
        let mut v = Vec::with_capacity(n * m);
        for agent in &model.agents {
            let f = &agent.factors;
            let hr = f.h.freq_response(lambda)?;
            for row in 0..p {
                for col in 0..m {
                    h.push(hr[(row, col)]);
                }
            }
            u.extend(f.u.freq_response(lambda)?.iter().copied());
            v.extend(f.v.freq_response(lambda)?.iter().copied());
        }
        Ok(Frame {
            q,
            n,
            p,
            m,
            r,
            h,
            u,
            v,
            qd: q.values_at(lambda),
        })
    }

    fn h_at(&self, i: usize, row: usize, col: usize) -> C64 {
        self.h[(i * self.p + row) * self.m + col]
    }

    /// `y = Phi x`.
    fn apply_phi(&self, x: &[C64], y: &mut [C64]) {
        let (n, p, m) = (self.n, self.p, self.m);
        let mut s = vec![ZERO; n];
        for j in 0..n {
            let vx: C64 = (0..m).map(|k| self.v[j * m + k] * x[j * m + k]).sum();
            s[j] = self.qd[j] * vx;
        }
        let mut t = vec![ZERO; n];
        self.q.mix(&s, &mut t);
        for i in 0..n {
            for row in 0..p {
                let mut acc = -self.u[i * p + row] * t[i];
                for col in 0..m {
                    acc += self.h_at(i, row, col) * x[i * m + col];
                }
                y[i * p + row] = acc;
            }
        }
    }

    /// `x = Phi^* y`.
    fn apply_phi_adjoint(&self, y: &[C64], x: &mut [C64]) {
        let (n, p, m) = (self.n, self.p, self.m);
        let mut t = vec![ZERO; n];
        for i in 0..n {
            t[i] = (0..p).map(|row| self.u[i * p + row].conj() * y[i * p + row]).sum();
        }
        let mut s = vec![ZERO; n];
        self.q.mix_transpose(&t, &mut s);
        for j in 0..n {
            let sj = self.qd[j].conj() * s[j];
            for col in 0..m {
                let mut acc = -self.v[j * m + col].conj() * sj;
                for row in 0..p {
                    acc += self.h_at(j, row, col).conj() * y[j * p + row];
                }
                x[j * m + col] = acc;
            }
        }
    }

    /// Applies the row selection and projection in place; `T` is an
    /// orthogonal projector so the Gram needs it once.
    fn project(&self, y: &mut [C64], proj: Projection, block: BlockKind) {
        let (n, p, r) = (self.n, self.p, self.r);
        if proj == Projection::Social {
            for row in 0..r {
                let mean = (0..n).map(|i| y[i * p + row]).sum::<C64>() / n as f64;
                for i in 0..n {
                    y[i * p + row] -= mean;
                }
            }
        }
        if block == BlockKind::One {
            for i in 0..n {
                for row in r..p {
                    y[i * p + row] = ZERO;
                }
            }
        }
    }

    fn gram_apply(&self, x: &[C64], out: &mut [C64], proj: Projection, block: BlockKind) {
        let mut y = vec![ZERO; self.n * self.p];
        self.apply_phi(x, &mut y);
        self.project(&mut y, proj, block);
        self.apply_phi_adjoint(&y, out);
    }

    /// Dense `Phi` (all rows).
    pub fn dense_phi(&self) -> CMat {
        let (n, p, m) = (self.n, self.p, self.m);
        let mut out = CMat::zeros(n * p, n * m);
        for j in 0..n {
            for col in 0..m {
                for row in 0..p {
                    out[(j * p + row, j * m + col)] = self.h_at(j, row, col);
                }
            }
            let mut cols = vec![(j, 1.0)];
            if let Some(c) = &self.q.coupling {
                cols.extend(c.column(j));
            }
            for (i, cij) in cols {
                for row in 0..p {
                    for col in 0..m {
                        out[(i * p + row, j * m + col)] -= self.u[i * p + row] * self.qd[j] * self.v[j * m + col] * cij;
                    }
                }
            }
        }
        out
    }

    /// Dense `Psi`: `T` applied to the regulated rows, other rows kept.
    pub fn dense_psi(&self) -> CMat {
        let mut phi = self.dense_phi();
        let (n, p, r) = (self.n, self.p, self.r);
        for col in 0..phi.ncols() {
            for row in 0..r {
                let mean = (0..n).map(|i| phi[(i * p + row, col)]).sum::<C64>() / n as f64;
                for i in 0..n {
                    phi[(i * p + row, col)] -= mean;
                }
            }
        }
        phi
    }

    /// Dense cost matrix: projected regulated rows, plus the remaining rows
    /// in the two-block case.
    pub fn dense_cost_matrix(&self, proj: Projection, block: BlockKind) -> CMat {
        let full = match proj {
            Projection::Social => self.dense_psi(),
            Projection::Individual => self.dense_phi(),
        };
        let keep: Vec<usize> = (0..self.n * self.p)
            .filter(|row| block == BlockKind::Two || row % self.p < self.r)
            .collect();
        CMat::from_fn(keep.len(), full.ncols(), |i, j| full[(keep[i], j)])
    }

    /// Cost rows of agent `i` in the block-diagonal case.
    fn agent_block(&self, i: usize, block: BlockKind) -> CMat {
        let rows = if block == BlockKind::One { self.r } else { self.p };
        CMat::from_fn(rows, self.m, |row, col| {
            self.h_at(i, row, col) - self.u[i * self.p + row] * self.qd[i] * self.v[i * self.m + col]
        })
    }

    /// Largest singular value of the cost matrix.
    pub fn sigma(&self, proj: Projection, block: BlockKind) -> (f64, SigmaMethod) {
        let n = self.n;
        if self.q.is_diagonal() {
            match proj {
                Projection::Individual => {
                    let s = (0..n)
                        .map(|i| sigma_max_dense(&self.agent_block(i, block)))
                        .fold(0.0, f64::max);
                    return (s, SigmaMethod::DenseSvd);
                }
                Projection::Social if self.r == 1 => {
                    let mut blocks = Vec::with_capacity(n);
                    let mut g = Vec::with_capacity(n * self.m);
                    for i in 0..n {
                        let b = self.agent_block(i, block);
                        g.extend(b.row(0).iter().map(|z| z.conj()));
                        blocks.push(b.adjoint() * b);
                    }
                    let top = max_eig_block_diag_rank_one(&blocks, &g, 1.0 / n as f64);
                    return (top.max(0.0).sqrt(), SigmaMethod::Secular);
                }
                Projection::Social => {}
            }
        }
        let dim = n * self.m;
        let rows = if block == BlockKind::One {
            n * self.r
        } else {
            n * self.p
        };
        if dim.max(rows) <= DENSE_LIMIT {
            return (
                sigma_max_dense(&self.dense_cost_matrix(proj, block)),
                SigmaMethod::DenseSvd,
            );
        }
        let start = start_vector(dim);
        let apply = |x: &[C64], y: &mut [C64]| self.gram_apply(x, y, proj, block);
        krylov_or_dense(dim, &apply, &start, || {
            sigma_max_dense(&self.dense_cost_matrix(proj, block))
        })
    }

    /// Squared Frobenius norm of the cost matrix, in `O(n + nnz)`.
    pub fn energy(&self, proj: Projection, block: BlockKind) -> f64 {
        let (n, p, m, r) = (self.n, self.p, self.m, self.r);
        let mut total = 0.0;
        for j in 0..n {
            let vj: f64 = (0..m).map(|k| self.v[j * m + k].norm_sqr()).sum();
            let qv = self.qd[j].norm_sqr() * vj;
            let rows = if block == BlockKind::One { r } else { p };
            total += self.agent_block(j, block).iter().map(|z| z.norm_sqr()).sum::<f64>();
            if let Some(c) = &self.q.coupling {
                for (i, cij) in c.column(j) {
                    let ui: f64 = (0..rows).map(|row| self.u[i * p + row].norm_sqr()).sum();
                    total += cij * cij * ui * qv;
                }
            }
        }
        if proj == Projection::Social {
            // |T Y|_F^2 = |Y|_F^2 - (1/n) |1' Y|^2 on the regulated rows
            let sums = self.column_sums();
            total -= sums.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        }
        total.max(0.0)
    }

    /// Sums over agents of the regulated rows of `Phi`, one row per
    /// regulated channel (`r x (n m)`, row-major).
    pub fn column_sums(&self) -> Vec<C64> {
        let (n, p, m, r) = (self.n, self.p, self.m, self.r);
        let mut out = vec![ZERO; r * n * m];
        for j in 0..n {
            for row in 0..r {
                // w_j = sum_i C_ij U_i(row)
                let mut w = self.u[j * p + row];
                if let Some(c) = &self.q.coupling {
                    for (i, cij) in c.column(j) {
                        w += self.u[i * p + row] * cij;
                    }
                }
                for col in 0..m {
                    out[row * n * m + j * m + col] = self.h_at(j, row, col) - w * self.qd[j] * self.v[j * m + col];
                }
            }
        }
        out
    }

    /// Largest singular value of `Pi_M (1/n) 1 1' Phi_z`.
    pub fn average_term(&self, m_rows: usize) -> f64 {
        let sums = self.column_sums();
        let cols = self.n * self.m;
        let mat = CMat::from_fn(self.r, cols, |i, j| sums[i * cols + j]);
        (m_rows as f64).sqrt() * sigma_max_dense(&mat) / self.n as f64
    }
}

fn start_vector(dim: usize) -> Vec<C64> {
    // fixed pseudo-random start keeps Krylov runs reproducible
    let mut s: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..dim)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            let a = (s >> 11) as f64 / (1u64 << 53) as f64;
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            let b = (s >> 11) as f64 / (1u64 << 53) as f64;
            C64::new(a + 0.5, b - 0.5)
        })
        .collect()
}

pub fn phi_at(model: &EnsembleModel, q: &BlockQ, lambda: C64) -> Result<CMat> {
    Ok(Frame::new(model, q, lambda)?.dense_phi())
}

pub fn psi_at(model: &EnsembleModel, q: &BlockQ, lambda: C64) -> Result<CMat> {
    Ok(Frame::new(model, q, lambda)?.dense_psi())
}

/// Cost of a given parameter: H-infinity norm of the cost matrix, or its
/// H2 norm scaled by `1/sqrt(n)`.
pub fn ensemble_cost(
    model: &EnsembleModel,
    q: &BlockQ,
    norm: NormKind,
    block: BlockKind,
    proj: Projection,
    grid: &FrequencyGrid,
) -> Result<CostReport> {
    match norm {
        NormKind::Hinf => hinf_of(|t| Ok(Frame::new(model, q, unit_point(t))?.sigma(proj, block)), grid),
        NormKind::H2 => {
            let (energy, size, shift) = quadrature_energy(
                |t| Ok(Frame::new(model, q, unit_point(t))?.energy(proj, block)),
                grid,
                1e-8,
            )?;
            Ok(CostReport {
                value: (energy / model.len() as f64).sqrt(),
                peak_theta: None,
                grid_size: size,
                method: SigmaMethod::Quadrature,
                scaled: true,
                doubling_shift: shift,
            })
        }
    }
}

/// H-infinity norm of the `M`-row truncation of the average term
/// `(1/n) 1 1' Phi` on the regulated rows.
pub fn average_block_norm(
    model: &EnsembleModel,
    q: &BlockQ,
    m_rows: usize,
    grid: &FrequencyGrid,
) -> Result<CostReport> {
    if m_rows == 0 || m_rows > model.len() {
        return Err(Error::InvalidParameter(format!(
            "truncation {m_rows} outside 1..={}",
            model.len()
        )));
    }
    hinf_of(
        |t| {
            Ok((
                Frame::new(model, q, unit_point(t))?.average_term(m_rows),
                SigmaMethod::DenseSvd,
            ))
        },
        grid,
    )
}

/// `(1/sqrt(n)) |(1/n) 1 1' Phi|_2` on the regulated rows.
pub fn average_block_h2(model: &EnsembleModel, q: &BlockQ, grid: &FrequencyGrid) -> Result<CostReport> {
    let (energy, size, shift) = quadrature_energy(
        |t| {
            let f = Frame::new(model, q, unit_point(t))?;
            Ok(f.column_sums().iter().map(|z| z.norm_sqr()).sum())
        },
        grid,
        1e-8,
    )?;
    Ok(CostReport {
        value: energy.sqrt() / model.len() as f64,
        peak_theta: None,
        grid_size: size,
        method: SigmaMethod::Quadrature,
        scaled: true,
        doubling_shift: shift,
    })
}

/// `sqrt(M) [gamma_h + (1 + alpha) gamma_Q gamma_u gamma_v] / sqrt(n)`.
pub fn lemma_bound_hinf(
    m_rows: usize,
    n: usize,
    gamma_h: f64,
    gamma_q: f64,
    gamma_u: f64,
    gamma_v: f64,
    alpha: f64,
) -> f64 {
    (m_rows as f64).sqrt() * (gamma_h + (1.0 + alpha) * gamma_q * gamma_u * gamma_v) / (n as f64).sqrt()
}

/// Terms of the H2 average-term bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H2Bound {
    /// `gamma_h / sqrt(n)` with the H2 constant of `H`.
    pub h_term: f64,
    /// `gamma_u gamma_Q (1 + alpha) / sqrt(n)`.
    pub uq_term: f64,
    /// `uq_term` times the H2 constant of `V`.
    pub uqv_term: f64,
    pub total: f64,
}

pub fn lemma_bound_h2(n: usize, gamma_u: f64, gamma_q: f64, gamma_h2: f64, gamma_v2: f64, alpha: f64) -> H2Bound {
    let sn = (n as f64).sqrt();
    let h_term = gamma_h2 / sn;
    let uq_term = gamma_u * gamma_q * (1.0 + alpha) / sn;
    let uqv_term = uq_term * gamma_v2;
    H2Bound {
        h_term,
        uq_term,
        uqv_term,
        total: h_term + uqv_term,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_model(n: usize) -> EnsembleModel {
        let settings = PopulationSettings {
            grid_points: 64,
            ..Default::default()
        };
        EnsembleModel::sample(n, 11, settings).unwrap()
    }

    fn static_q(values: &[f64]) -> BlockQ {
        let grid = FrequencyGrid::uniform(16).unwrap();
        BlockQ::diagonal(
            values.iter().map(|&v| FirMatrix::scalar(&[v]).unwrap()).collect(),
            &grid,
        )
        .unwrap()
    }

    #[test]
    fn lemma_bound_arithmetic() {
        assert_relative_eq!(lemma_bound_hinf(4, 100, 1.0, 1.0, 1.0, 1.0, 0.0), 0.4, epsilon = 1e-15);
        let a = lemma_bound_hinf(1, 100, 1.0, 2.0, 1.0, 1.0, 0.0);
        let b = lemma_bound_hinf(1, 400, 1.0, 2.0, 1.0, 1.0, 0.0);
        assert_relative_eq!(b, a / 2.0, epsilon = 1e-15);
        assert_relative_eq!(
            lemma_bound_h2(100, 1.0, 1.0, 1.0, 1.0, 3.0).uq_term,
            0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn dominance_examples() {
        let q = static_q(&[1.0, 1.0]);
        assert!(check_dominance(&q, 0.0).passes);
        // single off-diagonal |Q_12| = |Q_22|
        let coupled = BlockQ::from_parts(
            q.diagonal.clone(),
            q.diag_norms.clone(),
            Some(Coupling {
                col_ptr: vec![0, 0, 1],
                row_idx: vec![0],
                coef: vec![1.0],
            }),
        )
        .unwrap();
        let c = check_dominance(&coupled, 1.0);
        assert!(c.passes);
        assert_eq!(c.margins[1], 0.0);
        assert!(!check_dominance(&coupled, 0.5).passes);
        assert_relative_eq!(coupled.alpha_actual(), 1.0);
    }

    #[test]
    fn redistribution_example() {
        let q = static_q(&[1.0, 1.0, 1.0]);
        let out = make_alpha_dominant(
            &q,
            DominanceProfile::new(1.0, 0.0).unwrap(),
            Some(2),
            Allocation::Coherent,
            5,
        )
        .unwrap();
        for j in 0..3 {
            let s: f64 = (0..3).filter(|&i| i != j).map(|i| out.entry_norm(i, j)).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
            assert_eq!(out.entry(j, j), q.entry(j, j));
        }
        let zero = make_alpha_dominant(
            &q,
            DominanceProfile::new(0.0, 0.0).unwrap(),
            None,
            Allocation::Coherent,
            5,
        )
        .unwrap();
        assert_eq!(zero, q);
        assert!(DominanceProfile::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn identical_agents_social_equals_individual() {
        let settings = PopulationSettings {
            grid_points: 64,
            ..Default::default()
        };
        let model = EnsembleModel::from_parameters(&[(1.0, 1.0); 4], 0, settings).unwrap();
        let q = static_q(&[0.2; 4]);
        let grid = FrequencyGrid::uniform(32).unwrap();
        // Phi = I (x) G, so the projected operator is P (x) G with sigma(P) = 1
        let social = ensemble_cost(&model, &q, NormKind::Hinf, BlockKind::One, Projection::Social, &grid).unwrap();
        let indiv = ensemble_cost(
            &model,
            &q,
            NormKind::Hinf,
            BlockKind::One,
            Projection::Individual,
            &grid,
        )
        .unwrap();
        assert_relative_eq!(social.value, indiv.value, max_relative = 1e-8);
    }

    #[test]
    fn structured_matches_dense() {
        let model = tiny_model(3);
        let q = make_alpha_dominant(
            &static_q(&[0.3, -0.2, 0.5]),
            DominanceProfile::new(1.5, 0.0).unwrap(),
            None,
            Allocation::Signed,
            2,
        )
        .unwrap();
        let l = unit_point(0.7);
        let f = Frame::new(&model, &q, l).unwrap();
        let dense = f.dense_phi();
        let x: Vec<C64> = start_vector(6);
        let mut y = vec![ZERO; 6];
        f.apply_phi(&x, &mut y);
        let yd = &dense * nalgebra::DVector::from_column_slice(&x);
        for (a, b) in y.iter().zip(yd.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
        let mut xa = vec![ZERO; 6];
        f.apply_phi_adjoint(&y, &mut xa);
        let xd = dense.adjoint() * nalgebra::DVector::from_column_slice(&y);
        for (a, b) in xa.iter().zip(xd.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        for proj in [Projection::Social, Projection::Individual] {
            for block in [BlockKind::One, BlockKind::Two] {
                let m = f.dense_cost_matrix(proj, block);
                assert_relative_eq!(f.energy(proj, block), m.norm_squared(), max_relative = 1e-12);
            }
        }
    }
}
