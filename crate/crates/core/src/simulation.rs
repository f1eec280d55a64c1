//! Closed-loop time-domain runs of decentralized controllers.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Injection, SimulationSettings};
use crate::ensemble::{BlockQ, EnsembleModel};
use crate::lti::{lft_lower, vcat, StateSpace, OVERFLOW_GUARD};
use crate::youla::{controller_from_q, YoulaFactors};
use crate::{Error, Result};

/// One agent sample. `z` is `x_1` (or `x_1 - r` when tracking a reference).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub agent: usize,
    pub w: f64,
    pub v: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub rows: Vec<TrajectoryRow>,
    /// Agents whose run overflowed; their rows stop at the last finite step.
    pub flagged: Vec<usize>,
    pub max_abs_y: f64,
}

pub fn sinusoid(settings: &SimulationSettings, k: usize) -> f64 {
    settings.amplitude * (2.0 * std::f64::consts::PI * k as f64 / settings.period).sin()
}

/// Closed loop `[w, v] -> [z, xi, y, u]` of one agent under the controller
/// built from `q`.
pub fn instrumented_loop(factors: &YoulaFactors, q: &StateSpace) -> Result<StateSpace> {
    let k = controller_from_q(factors, q)?;
    let plant = &factors.plant;
    let sys = plant.system();
    let (nz, nin) = (plant.n_z(), sys.inputs());
    // extra outputs: copies of y and u ahead of the measurement used by the loop
    let u_row = {
        let mut r = DMatrix::zeros(1, nin);
        r[(0, nin - 1)] = 1.0;
        r
    };
    let c1 = sys.c().rows(0, nz).into_owned();
    let c2 = sys.c().rows(nz, 1).into_owned();
    let d1 = sys.d().rows(0, nz).into_owned();
    let d2 = sys.d().rows(nz, 1).into_owned();
    let c = vcat(&vcat(&vcat(&c1, &c2), &DMatrix::zeros(1, sys.states())), &c2);
    let d = vcat(&vcat(&vcat(&d1, &d2), &u_row), &d2);
    let aug = StateSpace::new(sys.a().clone(), sys.b().clone(), c, d)?;
    lft_lower(&aug, &k, 1, 1)
}

/// Drives every agent of a decentralized (diagonal) design with a common
/// sinusoid and i.i.d. Gaussian noise on `w`.
pub fn simulate_population(
    model: &EnsembleModel,
    q: &BlockQ,
    settings: &SimulationSettings,
    seed: u64,
) -> Result<SimulationResult> {
    let n = model.len();
    if q.len() != n {
        return Err(Error::dim("block parameter", n, q.len()));
    }
    if !q.is_diagonal() {
        return Err(Error::InvalidParameter(
            "simulation needs decentralized (diagonal) controllers".into(),
        ));
    }
    let horizon = settings.horizon;
    let normal = Normal::new(0.0, settings.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // step-major draws: sample k of agent i is the (k n + i)-th normal
    let mut noise = vec![0.0; horizon * n];
    for value in noise.iter_mut() {
        *value = normal.sample(&mut rng);
    }
    let reference: Vec<f64> = (0..horizon).map(|k| sinusoid(settings, k)).collect();

    let mut rows = Vec::with_capacity(horizon * n);
    let mut flagged = Vec::new();
    let mut max_abs_y = 0.0_f64;
    for (i, agent) in model.agents().iter().enumerate() {
        let q_sys = q.diagonal_entries()[i].to_state_space();
        let cl = instrumented_loop(&agent.factors, &q_sys)?;
        let inputs: Vec<DVector<f64>> = (0..horizon)
            .map(|k| DVector::from_vec(vec![noise[k * n + i], reference[k]]))
            .collect();
        let outputs = cl.simulate(&inputs, &DVector::zeros(cl.states()))?;
        for (k, out) in outputs.iter().enumerate() {
            if out.iter().any(|x| !x.is_finite() || x.abs() > OVERFLOW_GUARD) {
                log::warn!("agent {i} overflowed at step {k}");
                flagged.push(i);
                break;
            }
            let x1 = out[0];
            let z = match settings.injection {
                Injection::VChannel => x1,
                Injection::Reference => x1 - reference[k],
            };
            max_abs_y = max_abs_y.max(out[2].abs());
            rows.push(TrajectoryRow {
                k,
                agent: i,
                w: inputs[k][0],
                v: inputs[k][1],
                y: out[2],
                z,
                u: out[3],
            });
        }
    }
    rows.sort_by_key(|r| (r.k, r.agent));
    Ok(SimulationResult {
        rows,
        flagged,
        max_abs_y,
    })
}
