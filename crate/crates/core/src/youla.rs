//! Generalized plants, Riccati-based stabilizing gains and the observer-based
//! Youla factorization `closed loop = H - U Q V`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, C64};
use crate::lti::{hcat, lft_lower, vcat, StateSpace, EPS_STAB};

/// Default weight on the control input in the regulated output.
pub const DEFAULT_RHO: f64 = 0.1;

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 10_000;

/// Plant with inputs `[w; u]` and outputs `[z; y]`, `u` and `y` scalar.
///
/// The first `regulated` rows of `z` are the performance outputs; any
/// remaining `z` rows weight the control effort.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPlant {
    sys: StateSpace,
    n_w: usize,
    n_z: usize,
    regulated: usize,
}

impl GeneralizedPlant {
    pub fn new(sys: StateSpace, n_w: usize, n_z: usize, regulated: usize) -> Result<Self> {
        if sys.inputs() != n_w + 1 {
            return Err(Error::dim("plant inputs", n_w + 1, sys.inputs()));
        }
        if sys.outputs() != n_z + 1 {
            return Err(Error::dim("plant outputs", n_z + 1, sys.outputs()));
        }
        if regulated == 0 || regulated > n_z {
            return Err(Error::InvalidParameter(format!(
                "regulated rows {regulated} outside 1..={n_z}"
            )));
        }
        Ok(GeneralizedPlant {
            sys,
            n_w,
            n_z,
            regulated,
        })
    }

    pub fn system(&self) -> &StateSpace {
        &self.sys
    }
    pub fn n_w(&self) -> usize {
        self.n_w
    }
    pub fn n_z(&self) -> usize {
        self.n_z
    }
    pub fn regulated(&self) -> usize {
        self.regulated
    }
    pub fn states(&self) -> usize {
        self.sys.states()
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.sys.a().clone()
    }
    pub fn b1(&self) -> DMatrix<f64> {
        self.sys.b().columns(0, self.n_w).into_owned()
    }
    pub fn b2(&self) -> DMatrix<f64> {
        self.sys.b().columns(self.n_w, 1).into_owned()
    }
    pub fn c1(&self) -> DMatrix<f64> {
        self.sys.c().rows(0, self.n_z).into_owned()
    }
    pub fn c2(&self) -> DMatrix<f64> {
        self.sys.c().rows(self.n_z, 1).into_owned()
    }
    pub fn d11(&self) -> DMatrix<f64> {
        self.sys.d().view((0, 0), (self.n_z, self.n_w)).into_owned()
    }
    pub fn d12(&self) -> DMatrix<f64> {
        self.sys.d().view((0, self.n_w), (self.n_z, 1)).into_owned()
    }
    pub fn d21(&self) -> DMatrix<f64> {
        self.sys.d().view((self.n_z, 0), (1, self.n_w)).into_owned()
    }
    pub fn d22(&self) -> DMatrix<f64> {
        self.sys.d().view((self.n_z, self.n_w), (1, 1)).into_owned()
    }
}

/// Agent of the case study:
///
/// ```text
/// x1(k+1) = x1(k) + x2(k)
/// x2(k+1) = a x2(k) + w(k) + b u(k)
/// y(k)    = -x1(k) + v(k)
/// ```
///
/// with regulated outputs `z = x1` and `xi = rho u`. Inputs are ordered
/// `[w, v, u]`, outputs `[z, xi, y]`.
pub fn build_agent_plant(a: f64, b: f64, rho: f64) -> Result<GeneralizedPlant> {
    if !a.is_finite() || !b.is_finite() || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite agent parameters a={a} b={b} rho={rho}"
        )));
    }
    if !(0.5..=1.5).contains(&a) || !(0.8..=1.2).contains(&b) {
        log::warn!("agent parameters a={a}, b={b} outside the sampled ranges");
    }
    let am = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, a]);
    let bm = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, b]);
    let cm = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
    let dm = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, rho, 0.0, 1.0, 0.0]);
    GeneralizedPlant::new(StateSpace::new(am, bm, cm, dm)?, 2, 2, 1)
}

/// State and input weights of the two Riccati problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiWeights {
    pub state: f64,
    pub input: f64,
}

impl Default for RiccatiWeights {
    fn default() -> Self {
        RiccatiWeights { state: 1.0, input: 1.0 }
    }
}

/// Stabilizing solution of `X = Q + A'XA - A'XB (R + B'XB)^{-1} B'XA` by
/// fixed-point iteration, with the gain `F = -(R + B'XB)^{-1} B'XA`.
pub fn dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    pair: &'static str,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gain = |x: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let s = r + b.transpose() * x * b;
        let rhs = b.transpose() * x * a;
        s.lu().solve(&rhs).map(|k| -k)
    };
    let mut x = q.clone();
    for it in 0..DARE_MAX_ITER {
        let f = gain(&x).ok_or(Error::Infeasible { pair, iterations: it })?;
        // A'XA + A'XB F  ==  A'XA - A'XB (R + B'XB)^{-1} B'XA
        let xa = &x * a;
        let next = q + a.transpose() * &xa + a.transpose() * &x * b * &f;
        let next = 0.5 * (&next + next.transpose());
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Infeasible { pair, iterations: it });
        }
        let delta = (&next - &x).amax();
        x = next;
        if delta <= DARE_TOL * x.amax().max(1.0) {
            let f = gain(&x).ok_or(Error::Infeasible { pair, iterations: it })?;
            let radius = spectral_radius(&(a + b * &f));
            if radius > 1.0 - EPS_STAB {
                return Err(Error::Infeasible { pair, iterations: it });
            }
            return Ok((x, f));
        }
    }
    Err(Error::Infeasible {
        pair,
        iterations: DARE_MAX_ITER,
    })
}

/// State-feedback gain `F` (so `A + B_u F` is stable) and observer gain `L`
/// (so `A + L C_y` is stable).
pub fn stabilizing_gains(plant: &GeneralizedPlant, weights: RiccatiWeights) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if weights.state <= 0.0 || weights.input <= 0.0 {
        return Err(Error::InvalidParameter("Riccati weights must be positive".into()));
    }
    let nx = plant.states();
    let a = plant.a();
    let q = DMatrix::identity(nx, nx) * weights.state;
    let r = DMatrix::identity(1, 1) * weights.input;
    let (_, f) = dare(&a, &plant.b2(), &q, &r, "state-feedback (A, B_u)")?;
    let (_, lt) = dare(&a.transpose(), &plant.c2().transpose(), &q, &r, "observer (A', C_y')")?;
    Ok((f, lt.transpose()))
}

/// Stable factors of one agent with the gains that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct YoulaFactors {
    pub h: StateSpace,
    pub u: StateSpace,
    pub v: StateSpace,
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub plant: GeneralizedPlant,
}

/// Observer-based factorization. With the controller
///
/// ```text
/// xh(k+1) = A xh + B_u u - L r,   r = y - C_y xh - D_yu u,   u = F xh + q
/// ```
///
/// the map from `q` to `z` is `-U`, the map from `w` to `r` is `V` and the
/// closed loop with `q = Q r` is `H - U Q V`.
pub fn youla_factors(plant: &GeneralizedPlant, f: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<YoulaFactors> {
    let nx = plant.states();
    if f.shape() != (1, nx) {
        return Err(Error::dim(
            "F",
            format!("1x{nx}"),
            format!("{}x{}", f.nrows(), f.ncols()),
        ));
    }
    if l.shape() != (nx, 1) {
        return Err(Error::dim(
            "L",
            format!("{nx}x1"),
            format!("{}x{}", l.nrows(), l.ncols()),
        ));
    }
    let (a, b1, b2, c1, c2) = (plant.a(), plant.b1(), plant.b2(), plant.c1(), plant.c2());
    let (d11, d12, d21) = (plant.d11(), plant.d12(), plant.d21());
    let af = &a + &b2 * f;
    let al = &a + l * &c2;
    let cf = &c1 + &d12 * f;

    let mut ah = DMatrix::zeros(2 * nx, 2 * nx);
    ah.view_mut((0, 0), (nx, nx)).copy_from(&af);
    ah.view_mut((0, nx), (nx, nx)).copy_from(&(-(&b2 * f)));
    ah.view_mut((nx, nx), (nx, nx)).copy_from(&al);
    let bl = &b1 + l * &d21;
    let h = StateSpace::new(ah, vcat(&b1, &bl), hcat(&cf, &(-(&d12 * f))), d11)?;
    let u = StateSpace::new(af, b2, -cf, -d12)?;
    let v = StateSpace::new(al, bl, c2, d21)?;
    for (what, sys) in [("H", &h), ("U", &u), ("V", &v)] {
        let (stable, radius) = sys.stability();
        if !stable {
            return Err(Error::Unstable { what, radius });
        }
    }
    Ok(YoulaFactors {
        h,
        u,
        v,
        f: f.clone(),
        l: l.clone(),
        plant: plant.clone(),
    })
}

/// Plant, gains and factors for one case-study agent.
pub fn factor_agent(a: f64, b: f64, rho: f64, weights: RiccatiWeights) -> Result<YoulaFactors> {
    let plant = build_agent_plant(a, b, rho)?;
    let (f, l) = stabilizing_gains(&plant, weights)?;
    youla_factors(&plant, &f, &l)
}

fn require_stable_q(q: &StateSpace) -> Result<()> {
    if q.inputs() != 1 || q.outputs() != 1 {
        return Err(Error::dim("Q", "1x1", format!("{}x{}", q.outputs(), q.inputs())));
    }
    let (stable, radius) = q.stability();
    if !stable {
        return Err(Error::Unstable { what: "Q", radius });
    }
    Ok(())
}

/// Output-feedback controller `y -> u` realizing the parameter `Q`; its
/// state is `[observer state; Q state]`.
pub fn controller_from_q(factors: &YoulaFactors, q: &StateSpace) -> Result<StateSpace> {
    require_stable_q(q)?;
    let plant = &factors.plant;
    let nx = plant.states();
    let nq = q.states();
    let (a, b2, c2, d22) = (plant.a(), plant.b2(), plant.c2(), plant.d22());
    let (f, l) = (&factors.f, &factors.l);
    let (aq, bq, cq, dq) = (q.a(), q.b(), q.c(), q.d());

    // u = E [(F - Dq C2) xh + Cq xq + Dq y],  E = (1 + Dq D22)^{-1}
    let denom = 1.0 + (dq * &d22)[(0, 0)];
    if denom.abs() < 1e-12 {
        return Err(Error::IllPosedLoop);
    }
    let e = 1.0 / denom;
    let mut ux = DMatrix::zeros(1, nx + nq);
    ux.view_mut((0, 0), (1, nx)).copy_from(&((f - dq * &c2) * e));
    ux.view_mut((0, nx), (1, nq)).copy_from(&(cq * e));
    let uy = dq * e;
    // r = y - C2 xh - D22 u
    let mut rx = -(&d22 * &ux);
    {
        let mut v = rx.view_mut((0, 0), (1, nx));
        v -= &c2;
    }
    let ry = DMatrix::identity(1, 1) - &d22 * &uy;

    let mut ak = DMatrix::zeros(nx + nq, nx + nq);
    ak.view_mut((0, 0), (nx, nx)).copy_from(&a);
    ak.view_mut((nx, nx), (nq, nq)).copy_from(aq);
    {
        let mut top = ak.view_mut((0, 0), (nx, nx + nq));
        top += &b2 * &ux - l * &rx;
    }
    {
        let mut bottom = ak.view_mut((nx, 0), (nq, nx + nq));
        bottom += bq * &rx;
    }
    let bk = vcat(&(&b2 * &uy - l * &ry), &(bq * &ry));
    StateSpace::new(ak, bk, ux, uy)
}

/// Observer-based controller with `Q = 0`.
pub fn central_controller(factors: &YoulaFactors) -> Result<StateSpace> {
    controller_from_q(factors, &StateSpace::scalar_gain(0.0))
}

/// Closed loop `w -> z` of the plant with the controller built from `Q`.
pub fn closed_loop(factors: &YoulaFactors, q: &StateSpace) -> Result<StateSpace> {
    let k = controller_from_q(factors, q)?;
    lft_lower(factors.plant.system(), &k, 1, 1)
}

/// Largest residual between the true closed loop and `H - U Q V` over the
/// probe points, relative to `max(1, |closed loop|)` in Frobenius norm.
pub fn verify_parametrization(factors: &YoulaFactors, q: &StateSpace, probes: &[C64]) -> Result<f64> {
    let cl = closed_loop(factors, q)?;
    let mut worst = 0.0_f64;
    for &lambda in probes {
        let truth = cl.freq_response(lambda)?;
        let h = factors.h.freq_response(lambda)?;
        let u = factors.u.freq_response(lambda)?;
        let v = factors.v.freq_response(lambda)?;
        let qv = q.freq_response(lambda)?;
        let model = h - u * qv * v;
        let res = (&truth - model).norm() / truth.norm().max(1.0);
        worst = worst.max(res);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit_point;

    #[test]
    fn agent_plant_layout() {
        let p = build_agent_plant(1.0, 1.0, DEFAULT_RHO).unwrap();
        assert_eq!(p.a(), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(p.b2(), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(p.c2(), DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]));
        assert_eq!(p.d21(), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!((p.n_w(), p.n_z()), (2, 2));
        let p = build_agent_plant(0.5, 0.8, DEFAULT_RHO).unwrap();
        assert!((spectral_radius(&p.a()) - 1.0).abs() < 1e-12);
        assert!(build_agent_plant(f64::NAN, 1.0, 0.1).is_err());
    }

    #[test]
    fn gains_stabilize_case_study_agent() {
        let p = build_agent_plant(1.2, 1.0, DEFAULT_RHO).unwrap();
        let (f, l) = stabilizing_gains(&p, RiccatiWeights::default()).unwrap();
        assert!(spectral_radius(&(p.a() + p.b2() * &f)) < 1.0 - EPS_STAB);
        assert!(spectral_radius(&(p.a() + &l * p.c2())) < 1.0 - EPS_STAB);
    }

    #[test]
    fn unstabilizable_integrator_is_infeasible() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::zeros(1, 1);
        let i = DMatrix::identity(1, 1);
        match dare(&a, &b, &i, &i, "state-feedback (A, B_u)") {
            Err(Error::Infeasible { pair, .. }) => assert!(pair.starts_with("state-feedback")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_q_gives_h() {
        let fac = factor_agent(1.2, 1.0, DEFAULT_RHO, RiccatiWeights::default()).unwrap();
        let probes: Vec<C64> = (0..16).map(|k| unit_point(0.19 * k as f64 + 0.05)).collect();
        let res = verify_parametrization(&fac, &StateSpace::scalar_gain(0.0), &probes).unwrap();
        assert!(res <= 1e-10, "{res}");
        let res = verify_parametrization(&fac, &StateSpace::scalar_gain(0.3), &probes).unwrap();
        assert!(res <= 1e-8, "{res}");
    }

    #[test]
    fn central_controller_realization() {
        let fac = factor_agent(0.9, 1.1, DEFAULT_RHO, RiccatiWeights::default()).unwrap();
        let k = central_controller(&fac).unwrap();
        let p = &fac.plant;
        let expected_a = p.a() + p.b2() * &fac.f + &fac.l * p.c2();
        assert_eq!(k.a(), &expected_a);
        assert_eq!(k.b(), &(-&fac.l));
        assert_eq!(k.c(), &fac.f);
        assert_eq!(k.d()[(0, 0)], 0.0);
    }

    #[test]
    fn unstable_q_rejected() {
        let fac = factor_agent(1.0, 1.0, DEFAULT_RHO, RiccatiWeights::default()).unwrap();
        let q = StateSpace::siso(1.1, 1.0, 1.0, 0.0);
        assert!(matches!(
            controller_from_q(&fac, &q),
            Err(Error::Unstable { what: "Q", .. })
        ));
    }

    #[test]
    fn stable_open_loop_with_zero_gains() {
        // stable scalar plant: x+ = 0.5 x + w + u, z = x, y = x
        let sys = StateSpace::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let plant = GeneralizedPlant::new(sys, 1, 1, 1).unwrap();
        let zero_f = DMatrix::zeros(1, 1);
        let fac = youla_factors(&plant, &zero_f, &zero_f).unwrap();
        let l = unit_point(0.8);
        let h = fac.h.freq_response(l).unwrap()[(0, 0)];
        let open = l / (C64::new(1.0, 0.0) - l * 0.5);
        assert!((h - open).norm() < 1e-13);
    }
}
