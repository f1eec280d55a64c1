//! Discrete-time state-space systems in the `lambda` convention:
//! `M(lambda) = D + C lambda (I - lambda A)^{-1} B = sum_k M_k lambda^k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, to_complex, CMat, C64, ZERO};

/// Stability margin: a system counts as stable when its spectral radius is
/// at most `1 - EPS_STAB`.
pub const EPS_STAB: f64 = 1e-6;

/// Growth past this magnitude in an impulse response is treated as overflow.
pub(crate) const OVERFLOW_GUARD: f64 = 1e150;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if a.ncols() != nx {
            return Err(Error::dim("A", format!("{nx}x{nx}"), format!("{}x{}", nx, a.ncols())));
        }
        if b.nrows() != nx {
            return Err(Error::dim("B rows", nx, b.nrows()));
        }
        if c.ncols() != nx {
            return Err(Error::dim("C columns", nx, c.ncols()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(
                "D",
                format!("{}x{}", c.nrows(), b.ncols()),
                format!("{}x{}", d.nrows(), d.ncols()),
            ));
        }
        if a.iter()
            .chain(b.iter())
            .chain(c.iter())
            .chain(d.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter("non-finite realization entry".into()));
        }
        Ok(StateSpace { a, b, c, d })
    }

    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    pub fn scalar_gain(k: f64) -> Self {
        Self::static_gain(DMatrix::from_element(1, 1, k))
    }

    /// Single-input single-output system from scalar matrices.
    pub fn siso(a: f64, b: f64, c: f64, d: f64) -> Self {
        StateSpace {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            c: DMatrix::from_element(1, 1, c),
            d: DMatrix::from_element(1, 1, d),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn freq_response(&self, lambda: C64) -> Result<CMat> {
        let nx = self.states();
        let d = to_complex(&self.d);
        if nx == 0 {
            return Ok(d);
        }
        let m = CMat::identity(nx, nx) - to_complex(&self.a) * lambda;
        let lu = m.lu();
        let x = lu.solve(&to_complex(&self.b)).ok_or(Error::EvaluationAtPole {
            re: lambda.re,
            im: lambda.im,
        })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::EvaluationAtPole {
                re: lambda.re,
                im: lambda.im,
            });
        }
        Ok(d + to_complex(&self.c) * x * lambda)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Stability flag and spectral radius of `A`.
    pub fn stability(&self) -> (bool, f64) {
        let r = self.spectral_radius();
        (r <= 1.0 - EPS_STAB, r)
    }

    pub fn is_stable(&self) -> bool {
        self.stability().0
    }

    pub fn impulse_response(&self, taps: usize) -> Result<ImpulseResponse> {
        if taps == 0 {
            return Err(Error::InvalidParameter(
                "impulse response needs at least one tap".into(),
            ));
        }
        let mut coeffs = Vec::with_capacity(taps);
        coeffs.push(self.d.clone());
        // ca = C A^{k-1}
        let mut ca = self.c.clone();
        for k in 1..taps {
            let tap = &ca * &self.b;
            if tap.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
                return Err(Error::Overflow { taps: k });
            }
            coeffs.push(tap);
            if k + 1 < taps {
                ca = &ca * &self.a;
            }
        }
        let (stable, rho) = self.stability();
        let tail = if stable && self.states() > 0 {
            let ca_last = if taps == 1 { self.c.clone() } else { &ca * &self.a };
            Some(ca_last.norm() * self.b.norm() / (1.0 - rho))
        } else if self.states() == 0 {
            Some(0.0)
        } else {
            None
        };
        Ok(ImpulseResponse {
            fir: FirMatrix { taps: coeffs },
            tail,
        })
    }

    pub fn negate(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Self {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * k,
            d: &self.d * k,
        }
    }

    /// `second` driven by the output of `first`: `G2(lambda) G1(lambda)`.
    pub fn series(first: &StateSpace, second: &StateSpace) -> Result<StateSpace> {
        if first.outputs() != second.inputs() {
            return Err(Error::dim("series", first.outputs(), second.inputs()));
        }
        let (n1, n2) = (first.states(), second.states());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&first.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&second.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&second.b * &first.c));
        let mut b = DMatrix::zeros(n1 + n2, first.inputs());
        b.view_mut((0, 0), (n1, first.inputs())).copy_from(&first.b);
        b.view_mut((n1, 0), (n2, first.inputs()))
            .copy_from(&(&second.b * &first.d));
        let mut c = DMatrix::zeros(second.outputs(), n1 + n2);
        c.view_mut((0, 0), (second.outputs(), n1))
            .copy_from(&(&second.d * &first.c));
        c.view_mut((0, n1), (second.outputs(), n2)).copy_from(&second.c);
        StateSpace::new(a, b, c, &second.d * &first.d)
    }

    /// Sum of two systems sharing input and output dimensions.
    pub fn parallel(s1: &StateSpace, s2: &StateSpace) -> Result<StateSpace> {
        if s1.inputs() != s2.inputs() || s1.outputs() != s2.outputs() {
            return Err(Error::dim(
                "parallel",
                format!("{}x{}", s1.outputs(), s1.inputs()),
                format!("{}x{}", s2.outputs(), s2.inputs()),
            ));
        }
        let (n1, n2) = (s1.states(), s2.states());
        let a = block_diag(&s1.a, &s2.a);
        let mut b = DMatrix::zeros(n1 + n2, s1.inputs());
        b.view_mut((0, 0), (n1, s1.inputs())).copy_from(&s1.b);
        b.view_mut((n1, 0), (n2, s1.inputs())).copy_from(&s2.b);
        let mut c = DMatrix::zeros(s1.outputs(), n1 + n2);
        c.view_mut((0, 0), (s1.outputs(), n1)).copy_from(&s1.c);
        c.view_mut((0, n1), (s1.outputs(), n2)).copy_from(&s2.c);
        StateSpace::new(a, b, c, &s1.d + &s2.d)
    }

    /// Closed loop `y = G (r + sign * K y)`, output `y`. Negative feedback
    /// is `sign = -1`.
    pub fn feedback(g: &StateSpace, k: &StateSpace, sign: f64) -> Result<StateSpace> {
        if k.inputs() != g.outputs() || k.outputs() != g.inputs() {
            return Err(Error::dim(
                "feedback",
                format!("{}x{}", g.inputs(), g.outputs()),
                format!("{}x{}", k.outputs(), k.inputs()),
            ));
        }
        // P maps [r; u] to [y; y] with y = G (r + u)
        let m = g.inputs();
        let p = g.outputs();
        let b = hcat(&g.b, &g.b);
        let c = vcat(&g.c, &g.c);
        let drow = hcat(&g.d, &g.d);
        let d = vcat(&drow, &drow);
        let plant = StateSpace::new(g.a.clone(), b, c, d)?;
        lft_lower(&plant, &k.scale(sign), p, m)
    }

    /// Stacks two systems with a shared input: `[G1; G2]`.
    pub fn vstack(s1: &StateSpace, s2: &StateSpace) -> Result<StateSpace> {
        if s1.inputs() != s2.inputs() {
            return Err(Error::dim("vstack", s1.inputs(), s2.inputs()));
        }
        let (n1, n2) = (s1.states(), s2.states());
        let mut b = DMatrix::zeros(n1 + n2, s1.inputs());
        b.view_mut((0, 0), (n1, s1.inputs())).copy_from(&s1.b);
        b.view_mut((n1, 0), (n2, s1.inputs())).copy_from(&s2.b);
        let c = block_diag(&s1.c, &s2.c);
        StateSpace::new(block_diag(&s1.a, &s2.a), b, c, vcat(&s1.d, &s2.d))
    }

    /// Time-domain response from initial state `x0`.
    pub fn simulate(&self, inputs: &[DVector<f64>], x0: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if x0.len() != self.states() {
            return Err(Error::dim("initial state", self.states(), x0.len()));
        }
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(inputs.len());
        for u in inputs {
            if u.len() != self.inputs() {
                return Err(Error::dim("input sample", self.inputs(), u.len()));
            }
            out.push(&self.c * &x + &self.d * u);
            x = &self.a * &x + &self.b * u;
        }
        Ok(out)
    }
}

/// Lower linear fractional transformation. The last `n_ctrl` inputs of
/// `plant` are driven by `controller`, which reads the last `n_meas`
/// outputs. The result maps the remaining inputs to the remaining outputs;
/// its state is `[plant state; controller state]`.
pub fn lft_lower(plant: &StateSpace, controller: &StateSpace, n_meas: usize, n_ctrl: usize) -> Result<StateSpace> {
    let (nx, nk) = (plant.states(), controller.states());
    if n_meas > plant.outputs() || n_ctrl > plant.inputs() {
        return Err(Error::dim(
            "lft partition",
            format!("<= {}x{}", plant.outputs(), plant.inputs()),
            format!("{n_meas}x{n_ctrl}"),
        ));
    }
    if controller.inputs() != n_meas || controller.outputs() != n_ctrl {
        return Err(Error::dim(
            "lft controller",
            format!("{n_ctrl}x{n_meas}"),
            format!("{}x{}", controller.outputs(), controller.inputs()),
        ));
    }
    let nw = plant.inputs() - n_ctrl;
    let nz = plant.outputs() - n_meas;
    let b1 = plant.b.columns(0, nw).into_owned();
    let b2 = plant.b.columns(nw, n_ctrl).into_owned();
    let c1 = plant.c.rows(0, nz).into_owned();
    let c2 = plant.c.rows(nz, n_meas).into_owned();
    let d11 = plant.d.view((0, 0), (nz, nw)).into_owned();
    let d12 = plant.d.view((0, nw), (nz, n_ctrl)).into_owned();
    let d21 = plant.d.view((nz, 0), (n_meas, nw)).into_owned();
    let d22 = plant.d.view((nz, nw), (n_meas, n_ctrl)).into_owned();
    let (ak, bk, ck, dk) = (&controller.a, &controller.b, &controller.c, &controller.d);

    // u = Eu (Dk C2 x + Ck xk + Dk D21 w)
    let loop_m = DMatrix::identity(n_ctrl, n_ctrl) - dk * &d22;
    let eu = invert_well_posed(loop_m)?;
    let mut ux = DMatrix::zeros(n_ctrl, nx + nk);
    ux.view_mut((0, 0), (n_ctrl, nx)).copy_from(&(&eu * dk * &c2));
    ux.view_mut((0, nx), (n_ctrl, nk)).copy_from(&(&eu * ck));
    let uw = &eu * dk * &d21;
    // y = [C2 0] + D22 u
    let mut yx = &d22 * &ux;
    {
        let mut v = yx.view_mut((0, 0), (n_meas, nx));
        v += &c2;
    }
    let yw = &d21 + &d22 * &uw;

    let mut a = block_diag(&plant.a, ak);
    {
        let mut top = a.view_mut((0, 0), (nx, nx + nk));
        top += &b2 * &ux;
    }
    {
        let mut bottom = a.view_mut((nx, 0), (nk, nx + nk));
        bottom += bk * &yx;
    }
    let b = vcat(&(&b1 + &b2 * &uw), &(bk * &yw));
    let mut c = &d12 * &ux;
    {
        let mut v = c.view_mut((0, 0), (nz, nx));
        v += &c1;
    }
    let d = &d11 + &d12 * &uw;
    StateSpace::new(a, b, c, d)
}

fn invert_well_posed(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(1.0);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if det.abs() <= 1e-12 * scale.powi(m.nrows() as i32) {
        return Err(Error::IllPosedLoop);
    }
    lu.try_inverse().ok_or(Error::IllPosedLoop)
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

pub(crate) fn vcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// Finite impulse response `M_0, ..., M_{L-1}` with shared `p x m` taps.
#[derive(Debug, Clone, PartialEq)]
pub struct FirMatrix {
    taps: Vec<DMatrix<f64>>,
}

impl FirMatrix {
    pub fn new(taps: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| Error::InvalidParameter("FIR needs at least one tap".into()))?;
        let shape = first.shape();
        if let Some(bad) = taps.iter().find(|t| t.shape() != shape) {
            return Err(Error::dim(
                "FIR tap",
                format!("{:?}", shape),
                format!("{:?}", bad.shape()),
            ));
        }
        Ok(FirMatrix { taps })
    }

    /// Scalar FIR from its coefficients.
    pub fn scalar(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect())
    }

    pub fn zero_scalar(len: usize) -> Self {
        FirMatrix {
            taps: vec![DMatrix::zeros(1, 1); len.max(1)],
        }
    }

    pub fn taps(&self) -> &[DMatrix<f64>] {
        &self.taps
    }

    /// Coefficients of a 1x1 FIR.
    pub fn scalar_taps(&self) -> Vec<f64> {
        self.taps.iter().map(|t| t[(0, 0)]).collect()
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> (usize, usize) {
        self.taps[0].shape()
    }

    pub fn eval(&self, lambda: C64) -> CMat {
        let (p, m) = self.shape();
        let mut acc = CMat::zeros(p, m);
        for t in self.taps.iter().rev() {
            acc = acc * lambda + to_complex(t);
        }
        acc
    }

    /// Scalar evaluation for 1x1 FIRs.
    pub fn eval_scalar(&self, lambda: C64) -> C64 {
        self.taps.iter().rev().fold(ZERO, |acc, t| acc * lambda + t[(0, 0)])
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_squared()).sum()
    }

    pub fn h2_norm(&self) -> f64 {
        self.energy().sqrt()
    }

    pub fn scale(&self, k: f64) -> FirMatrix {
        FirMatrix {
            taps: self.taps.iter().map(|t| t * k).collect(),
        }
    }

    /// Shift-register realization; state dimension `m (L - 1)`.
    pub fn to_state_space(&self) -> StateSpace {
        let (p, m) = self.shape();
        let l = self.len();
        let nx = m * (l - 1);
        let mut a = DMatrix::zeros(nx, nx);
        let mut b = DMatrix::zeros(nx, m);
        let mut c = DMatrix::zeros(p, nx);
        if nx > 0 {
            b.view_mut((0, 0), (m, m)).fill_with_identity();
            for k in 1..l - 1 {
                a.view_mut((k * m, (k - 1) * m), (m, m)).fill_with_identity();
            }
            for k in 1..l {
                c.view_mut((0, (k - 1) * m), (p, m)).copy_from(&self.taps[k]);
            }
        }
        StateSpace {
            a,
            b,
            c,
            d: self.taps[0].clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImpulseResponse {
    pub fir: FirMatrix,
    /// Bound on the magnitude of the truncated tail, present for stable
    /// systems.
    pub tail: Option<f64>,
}
