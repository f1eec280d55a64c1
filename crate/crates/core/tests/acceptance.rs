//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when
//! any criterion fails. Runs the full scaling and decay studies, so expect
//! several minutes.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mfselfish::config::ExperimentConfig;
use mfselfish::ensemble::{
    averaging_projector, sample_parameters, selfish_q, EnsembleModel, Frame, PopulationSettings,
};
use mfselfish::experiments::{
    decay_records, decay_slopes, prepare, run_scaling, scaling_records, DecayRecord, ScalingRecord, SLOPE_TOL,
};
use mfselfish::linalg::{unit_point, C64};
use mfselfish::lti::{FirMatrix, StateSpace};
use mfselfish::matching::{mu_sequence, solve, solve_adaptive, MatchingProblem, MatchingSettings, MatchingSolution};
use mfselfish::norms::{h2_norm_grid, h2_norm_scaled, hinf_norm_system, BlockKind, FrequencyGrid, NormKind};
use mfselfish::youla::{factor_agent, verify_parametrization, RiccatiWeights, DEFAULT_RHO};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

type Check = mfselfish::Result<Outcome>;

fn gap(r: &ScalingRecord) -> f64 {
    r.cost_compliant.unwrap_or(f64::NAN) - r.cost_selfish.unwrap_or(f64::NAN)
}

fn selfish_flatness(records: &[ScalingRecord], seconds: f64) -> Check {
    let costs: Vec<f64> = records.iter().map(|r| r.cost_selfish.unwrap_or(f64::NAN)).collect();
    let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    Ok(outcome(
        ratio <= 1.05,
        format!("max/min = {ratio:.4} over {min:.4}..{max:.4} (<= 1.05), study took {seconds:.0} s"),
    ))
}

fn compliant_convergence(records: &[ScalingRecord]) -> Check {
    let (first, last) = (&records[0], &records[records.len() - 1]);
    let ratio = gap(last) / gap(first);
    Ok(outcome(
        ratio < 0.5,
        format!(
            "gap n={}: {:.4}, n={}: {:.4}, ratio {ratio:.4} (< 0.5)",
            first.n,
            gap(first),
            last.n,
            gap(last)
        ),
    ))
}

fn violating_growth(records: &[ScalingRecord]) -> Check {
    let (first, last) = (&records[0], &records[records.len() - 1]);
    let (a, b) = (
        first.cost_violating.unwrap_or(f64::NAN),
        last.cost_violating.unwrap_or(f64::NAN),
    );
    let ratio = b / a;
    Ok(outcome(
        ratio > 1.3,
        format!("{a:.4} -> {b:.4}, ratio {ratio:.4} (> 1.3)"),
    ))
}

fn bound_validity(records: &[DecayRecord]) -> Check {
    let hinf: Vec<&DecayRecord> = records.iter().filter(|r| r.norm == NormKind::Hinf).collect();
    let violations = hinf
        .iter()
        .filter(|r| r.measured.is_nan() || r.measured > r.bound)
        .count();
    let worst = hinf.iter().map(|r| r.measured / r.bound).fold(0.0_f64, f64::max);
    Ok(outcome(
        violations == 0 && !hinf.is_empty(),
        format!(
            "{violations} violations over {} points, max measured/bound {worst:.4}",
            hinf.len()
        ),
    ))
}

fn decay_rates(records: &[DecayRecord]) -> Check {
    let slopes: Vec<_> = decay_slopes(records).into_iter().filter(|s| s.p < 0.5).collect();
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for s in &slopes {
        let dev = (s.slope - s.expected).abs();
        worst = worst.max(dev);
        let tag = match (s.norm, s.m) {
            (NormKind::Hinf, Some(m)) => format!("hinf p={} M={m}", s.p),
            _ => format!("h2 p={}", s.p),
        };
        parts.push(format!("{tag}: {:+.3}", s.slope));
    }
    let has_h2 = slopes.iter().any(|s| s.norm == NormKind::H2);
    Ok(outcome(
        !slopes.is_empty() && has_h2 && worst <= SLOPE_TOL,
        format!(
            "max |slope - expected| = {worst:.3} (<= {SLOPE_TOL}); {}",
            parts.join(", ")
        ),
    ))
}

fn random_stable_q(rng: &mut ChaCha8Rng) -> mfselfish::Result<StateSpace> {
    let order = rng.random_range(1..=3);
    let mut normal = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = normal(order, order);
    let (b, c, d) = (normal(order, 1), normal(1, order), normal(1, 1));
    let radius = StateSpace::new(a.clone(), b.clone(), c.clone(), d.clone())?.spectral_radius();
    let a = a * (0.9 / radius.max(1e-12));
    StateSpace::new(a, b, c, d)
}

fn youla_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let agents = sample_parameters(50, 17);
    let qs: Vec<StateSpace> = (0..3)
        .map(|_| random_stable_q(&mut rng))
        .collect::<mfselfish::Result<_>>()?;
    let mut worst = 0.0_f64;
    for &(a, b) in &agents {
        let factors = factor_agent(a, b, DEFAULT_RHO, RiccatiWeights::default())?;
        let probes: Vec<_> = (0..32)
            .map(|_| unit_point(rng.random_range(0.0..std::f64::consts::PI)))
            .collect();
        for q in &qs {
            worst = worst.max(verify_parametrization(&factors, q, &probes)?);
        }
    }
    Ok(outcome(
        worst <= 1e-8,
        format!("max residual {worst:.2e} over 50 agents x 32 points x 3 Q (<= 1e-8)"),
    ))
}

/// Counts candidates that beat `sol`: half global draws bounded by
/// `2 |z*|_1 + 1` per tap, half local perturbations of `z*`.
fn candidates_beating(
    problem: &MatchingProblem,
    sol: &MatchingSolution,
    rng: &mut ChaCha8Rng,
) -> mfselfish::Result<usize> {
    let best = problem.cost_of(&sol.fir())?;
    let scale = 2.0 * sol.z.iter().map(|x| x.abs()).sum::<f64>() + 1.0;
    let mut beaten = 0;
    for k in 0..100 {
        let taps: Vec<f64> = if k % 2 == 0 {
            (0..sol.z.len())
                .map(|_| rng.random_range(-1.0..1.0) * scale / sol.z.len() as f64)
                .collect()
        } else {
            sol.z
                .iter()
                .map(|x| x + 0.05 * rng.random_range(-1.0..1.0) * (x.abs() + 1e-3))
                .collect()
        };
        if problem.cost_of(&FirMatrix::scalar(&taps)?)? < best * (1.0 - 1e-6) {
            beaten += 1;
        }
    }
    Ok(beaten)
}

fn matching_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let small = MatchingSettings {
        fir_order: 8,
        grid_points: 64,
        ..Default::default()
    };
    let gain = StateSpace::scalar_gain;

    let static_two = MatchingProblem::new(
        gain(2.0),
        gain(1.0),
        gain(1.0),
        NormKind::Hinf,
        BlockKind::Two,
        small.clone(),
    )?;
    let s = solve(&static_two)?;
    let static_ok = (s.cost - 2f64.sqrt()).abs() <= 1e-6 && (s.z[0] - 1.0).abs() <= 1e-5;

    let delay = StateSpace::siso(0.0, 1.0, 1.0, 0.0);
    let fir = FirMatrix::scalar(&[1.0, 1.0])?.to_state_space();
    let delay_problem = MatchingProblem::new(fir, delay, gain(1.0), NormKind::H2, BlockKind::One, small)?;
    let d = solve(&delay_problem)?;
    let delay_ok = (d.cost - 1.0).abs() <= 1e-9;

    let mut beaten = candidates_beating(&static_two, &s, &mut rng)? + candidates_beating(&delay_problem, &d, &mut rng)?;
    let mut solves = 2;
    for &(a, b) in &sample_parameters(3, 5) {
        let factors = factor_agent(a, b, DEFAULT_RHO, RiccatiWeights::default())?;
        for norm in [NormKind::Hinf, NormKind::H2] {
            for block in [BlockKind::One, BlockKind::Two] {
                let p = MatchingProblem::for_agent(&factors, norm, block, MatchingSettings::default())?;
                let sol = solve_adaptive(&p)?;
                let mut sized = p.clone();
                sized.settings.fir_order = sol.z.len();
                beaten += candidates_beating(&sized, &sol, &mut rng)?;
                solves += 1;
            }
        }
    }
    Ok(outcome(
        static_ok && delay_ok && beaten == 0,
        format!(
            "static 2-block cost {:.8} z0 {:.6}; delay H2 cost {:.10}; {beaten} of {} candidates beat a solve",
            s.cost,
            s.z[0],
            d.cost,
            solves * 100
        ),
    ))
}

fn norm_oracles(scaling: &[ScalingRecord], decay: &[DecayRecord]) -> Check {
    let grid = FrequencyGrid::uniform(512)?;
    let first_order = StateSpace::siso(0.5, 1.0, 0.5, 1.0);
    let peak = hinf_norm_system(&first_order, &grid)?;
    let peak_ok = (peak.value - 2.0).abs() <= 1e-4;

    let mut shifts: Vec<Option<f64>> = scaling.iter().map(|r| r.max_doubling_shift).collect();
    shifts.extend(decay.iter().map(|r| r.doubling_shift));
    shifts.push(peak.doubling_shift);
    let missing = shifts.iter().filter(|s| s.is_none()).count();
    let worst_shift = shifts.iter().flatten().copied().fold(0.0_f64, f64::max);
    let shift_ok = missing == 0 && worst_shift <= 5e-3;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let taps: Vec<DMatrix<f64>> = (0..8)
        .map(|_| DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let fir = FirMatrix::new(taps)?;
    let freq = h2_norm_grid(|l| Ok(fir.eval(l)), &FrequencyGrid::uniform(64)?)?.value;
    let fir_dev = (freq - fir.h2_norm()).abs() / fir.h2_norm();
    let sys = random_stable_q(&mut rng)?;
    let sys_freq = h2_norm_grid(|l| sys.freq_response(l), &FrequencyGrid::uniform(512)?)?.value;
    let sys_taps = h2_norm_scaled(&sys, 1)?.value;
    let sys_dev = (sys_freq - sys_taps).abs() / sys_taps;
    let parseval_ok = fir_dev <= 1e-6 && sys_dev <= 1e-6;

    Ok(outcome(
        peak_ok && shift_ok && parseval_ok,
        format!(
            "peak {:.8} (2 +- 1e-4); max doubling shift {worst_shift:.2e} over {} values, {missing} unmeasured (<= 5e-3); \
             Parseval FIR {fir_dev:.1e}, state space {sys_dev:.1e} (<= 1e-6)",
            peak.value,
            shifts.len()
        ),
    ))
}

fn projector_suite() -> Check {
    let mut worst = 0.0_f64;
    for n in [2usize, 5, 60] {
        let t = averaging_projector(n);
        let idem = (&t * &t - &t).amax();
        let kills_ones = (&t * DMatrix::from_element(n, 1, 1.0)).amax();
        let norm = t.clone().svd(false, false).singular_values.max();
        worst = worst.max(idem).max(kills_ones).max((norm - 1.0).abs());
    }
    let projector_ok = worst <= 1e-10;

    // the social projection in the cost engine is T on the regulated rows
    // of every agent; the remaining rows are not averaged
    let settings = PopulationSettings {
        grid_points: 64,
        ..Default::default()
    };
    let model = EnsembleModel::sample(5, 4, settings)?;
    let small = MatchingSettings {
        fir_order: 8,
        grid_points: 64,
        ..Default::default()
    };
    let (q, _) = selfish_q(&model, NormKind::Hinf, BlockKind::Two, &small)?;
    let frame = Frame::new(&model, &q, unit_point(0.7))?;
    let (phi, psi) = (frame.dense_phi(), frame.dense_psi());
    let (n, p) = (model.len(), phi.nrows() / model.len());
    let r = model.agents()[0].factors.plant.regulated();
    let regulated = DMatrix::from_fn(p, p, |i, j| if i == j && i < r { 1.0 } else { 0.0 });
    let rest = DMatrix::identity(p, p) - &regulated;
    let t = (averaging_projector(n).kronecker(&regulated) + DMatrix::identity(n, n).kronecker(&rest))
        .map(|x| C64::new(x, 0.0));
    let engine_dev = (t * phi - psi).iter().map(|z| z.norm()).fold(0.0_f64, f64::max);

    let mut mu_ok = true;
    let mut mu_detail = Vec::new();
    for seed in 1..=3 {
        let model = EnsembleModel::sample(20, seed, PopulationSettings::default())?;
        let gamma_h = model.constants().gamma_h;
        for block in [BlockKind::One, BlockKind::Two] {
            let (_, sols) = selfish_q(&model, NormKind::Hinf, block, &MatchingSettings::default())?;
            let costs: Vec<f64> = sols.iter().map(|s| s.cost).collect();
            let mu = mu_sequence(&costs, NormKind::Hinf);
            let monotone = mu.windows(2).all(|w| w[1] >= w[0]);
            let last = *mu.last().unwrap_or(&f64::NAN);
            mu_ok &= monotone && last <= gamma_h;
            mu_detail.push(format!("{last:.3}/{gamma_h:.3}"));
        }
    }
    Ok(outcome(
        projector_ok && engine_dev <= 1e-12 && mu_ok,
        format!(
            "projector identities max dev {worst:.1e} (<= 1e-10); engine vs T {engine_dev:.1e}; mu_20/gamma_h {}",
            mu_detail.join(" ")
        ),
    ))
}

fn determinism() -> Check {
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    let mut csvs = Vec::new();
    for dir in &dirs {
        let config = ExperimentConfig {
            n_list: vec![30, 60, 120],
            deterministic: true,
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        run_scaling(&config)?;
        csvs.push(std::fs::read(dir.path().join("scaling.csv"))?);
    }
    Ok(outcome(
        csvs[0] == csvs[1] && !csvs[0].is_empty(),
        format!(
            "two runs over n = 30, 60, 120: {} bytes each, identical = {}",
            csvs[0].len(),
            csvs[0] == csvs[1]
        ),
    ))
}

fn report(name: &str, check: Check, failures: &mut usize) {
    match check {
        Ok(o) => {
            if !o.passed {
                *failures += 1;
            }
            println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL {name}: error {e}");
        }
    }
}

fn main() -> ExitCode {
    let config = ExperimentConfig {
        deterministic: true,
        ..Default::default()
    };
    let mut failures = 0;

    let started = Instant::now();
    let studies = prepare(&config, *config.n_list.last().unwrap()).and_then(|prepared| {
        let (scaling, _) = scaling_records(&prepared, &config)?;
        let seconds = started.elapsed().as_secs_f64();
        let decay = decay_records(&prepared, &config)?;
        Ok((scaling, seconds, decay))
    });
    match &studies {
        Ok((scaling, seconds, decay)) => {
            report("selfish flatness", selfish_flatness(scaling, *seconds), &mut failures);
            report("compliant convergence", compliant_convergence(scaling), &mut failures);
            report("violating growth", violating_growth(scaling), &mut failures);
            report("average-term bound", bound_validity(decay), &mut failures);
            report("decay rates", decay_rates(decay), &mut failures);
        }
        Err(e) => {
            for name in [
                "selfish flatness",
                "compliant convergence",
                "violating growth",
                "average-term bound",
                "decay rates",
            ] {
                failures += 1;
                println!("FAIL {name}: study error {e}");
            }
        }
    }
    report("youla identity", youla_identity(), &mut failures);
    report("matching oracles", matching_oracles(), &mut failures);
    let (scaling, decay) = match &studies {
        Ok((s, _, d)) => (s.as_slice(), d.as_slice()),
        Err(_) => (&[][..], &[][..]),
    };
    report("norm oracles", norm_oracles(scaling, decay), &mut failures);
    report("projector suite", projector_suite(), &mut failures);
    report("determinism", determinism(), &mut failures);

    println!("{failures} failing criteria");
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
