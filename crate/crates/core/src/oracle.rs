//! Model-aware validation: equilibrium continuation with Hopf detection,
//! single-shooting periodic orbits with Floquet multipliers, and a Fourier
//! fitting baseline.
//!
//! Everything here may read the model equations directly; the CBC pipeline
//! never consumes oracle output during a run, so the model-free discipline
//! of the main method is preserved.

use crate::ode::OdeOptions;
use crate::plant::{PlantError, PlantModel};
use crate::spline::{solve_least_squares, SampleSet, SplineError};
use nalgebra::{Complex, DMatrix, DVector, Matrix2, Vector2};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no equilibrium found near the requested start (Newton stalled at |rhs| = {residual:.3e})")]
    NoEquilibriumFound { residual: f64 },
    #[error("shooting iteration diverged at lambda = {lambda}")]
    ShootingDiverged { lambda: f64 },
    #[error("orbit period collapsed (T = {period:.3e})")]
    PeriodCollapse { period: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Fit(#[from] SplineError),
    #[error(transparent)]
    Knots(#[from] crate::knots::KnotError),
}

fn oracle_ode_options() -> OdeOptions {
    OdeOptions {
        rtol: 1e-10,
        atol: 1e-12,
        h_initial: 1e-6,
        ..OdeOptions::default()
    }
}

/// Time-T flow map of the open-loop model.
pub fn flow(
    model: &PlantModel,
    lambda: f64,
    start: [f64; 2],
    time: f64,
) -> Result<[f64; 2], OracleError> {
    let rhs = |_t: f64, y: &[f64; 2]| model.rhs(*y, lambda, 0.0);
    crate::ode::integrate_to(rhs, 0.0, start, time, oracle_ode_options()).map_err(|e| match e {
        crate::ode::OdeError::Rhs(p) => OracleError::Plant(p),
        crate::ode::OdeError::StepSizeUnderflow { t } => {
            OracleError::Plant(PlantError::StiffnessFailure { t })
        }
        crate::ode::OdeError::MaxStepsExceeded { t, .. } => {
            OracleError::Plant(PlantError::StepBudgetExhausted { t })
        }
        crate::ode::OdeError::NonFinite { .. } => OracleError::Plant(PlantError::NonFinite),
    })
}

fn rhs_vec(model: &PlantModel, lambda: f64, state: [f64; 2]) -> Result<Vector2<f64>, OracleError> {
    let d = model.rhs(state, lambda, 0.0)?;
    Ok(Vector2::new(d[0], d[1]))
}

/// Jacobian of the open-loop right-hand side by central differences.
fn rhs_jacobian(
    model: &PlantModel,
    lambda: f64,
    state: [f64; 2],
) -> Result<Matrix2<f64>, OracleError> {
    let h = 1e-7;
    let mut jac = Matrix2::zeros();
    for col in 0..2 {
        let mut plus = state;
        let mut minus = state;
        plus[col] += h;
        minus[col] -= h;
        let fp = rhs_vec(model, lambda, plus)?;
        let fm = rhs_vec(model, lambda, minus)?;
        for row in 0..2 {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn eigenvalues_2x2(m: &Matrix2<f64>) -> [Complex<f64>; 2] {
    let trace = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = trace * trace / 4.0 - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        [
            Complex::new(trace / 2.0 + root, 0.0),
            Complex::new(trace / 2.0 - root, 0.0),
        ]
    } else {
        let root = (-disc).sqrt();
        [
            Complex::new(trace / 2.0, root),
            Complex::new(trace / 2.0, -root),
        ]
    }
}

/// An equilibrium with its local linearization.
#[derive(Debug, Clone)]
pub struct EquilibriumPoint {
    pub lambda: f64,
    pub state: [f64; 2],
    pub eigenvalues: [Complex<f64>; 2],
    pub stable: bool,
}

/// A Hopf bifurcation located on an equilibrium branch.
#[derive(Debug, Clone)]
pub struct HopfPoint {
    pub lambda: f64,
    pub state: [f64; 2],
}

fn newton_equilibrium(
    model: &PlantModel,
    lambda: f64,
    guess: [f64; 2],
) -> Result<[f64; 2], OracleError> {
    let mut state = guess;
    for _ in 0..50 {
        let f = rhs_vec(model, lambda, state)?;
        if f.norm() < 1e-12 {
            return Ok(state);
        }
        let jac = rhs_jacobian(model, lambda, state)?;
        let step = jac
            .lu()
            .solve(&(-f))
            .ok_or(OracleError::NoEquilibriumFound { residual: f.norm() })?;
        state[0] += step[0];
        state[1] += step[1];
        if !state.iter().all(|v| v.is_finite()) {
            return Err(OracleError::NoEquilibriumFound { residual: f64::INFINITY });
        }
    }
    let residual = rhs_vec(model, lambda, state)?.norm();
    if residual < 1e-10 {
        Ok(state)
    } else {
        Err(OracleError::NoEquilibriumFound { residual })
    }
}

/// Locate the equilibrium near `guess` and report its linearization.
pub fn find_equilibrium(
    model: &PlantModel,
    lambda: f64,
    guess: [f64; 2],
) -> Result<EquilibriumPoint, OracleError> {
    let state = newton_equilibrium(model, lambda, guess)?;
    let jac = rhs_jacobian(model, lambda, state)?;
    let eigenvalues = eigenvalues_2x2(&jac);
    let stable = eigenvalues.iter().all(|e| e.re < 0.0);
    Ok(EquilibriumPoint {
        lambda,
        state,
        eigenvalues,
        stable,
    })
}

/// Natural-parameter equilibrium continuation with Hopf detection.
///
/// Hopf points are flagged where the real part of the complex pair changes
/// sign, then refined by bisection to |Re| < 1e-8.
pub fn equilibrium_branch(
    model: &PlantModel,
    lambda_range: (f64, f64),
    lambda_step: f64,
    initial_guess: [f64; 2],
) -> Result<(Vec<EquilibriumPoint>, Vec<HopfPoint>), OracleError> {
    assert!(lambda_step > 0.0 && lambda_range.1 > lambda_range.0);
    let mut points = Vec::new();
    let mut hopf = Vec::new();
    let mut guess = initial_guess;
    let mut lambda = lambda_range.0;
    while lambda <= lambda_range.1 + 1e-12 {
        let point = find_equilibrium(model, lambda, guess)?;
        guess = point.state;
        if let Some(prev) = points.last() {
            let prev: &EquilibriumPoint = prev;
            let re_prev = complex_pair_re(&prev.eigenvalues);
            let re_curr = complex_pair_re(&point.eigenvalues);
            if let (Some(a), Some(b)) = (re_prev, re_curr) {
                if a * b < 0.0 {
                    hopf.push(refine_hopf(model, prev.lambda, lambda, prev.state)?);
                }
            }
        }
        points.push(point);
        lambda += lambda_step;
    }
    Ok((points, hopf))
}

fn complex_pair_re(eigenvalues: &[Complex<f64>; 2]) -> Option<f64> {
    if eigenvalues[0].im.abs() > 0.0 {
        Some(eigenvalues[0].re)
    } else {
        None
    }
}

fn refine_hopf(
    model: &PlantModel,
    mut lo: f64,
    mut hi: f64,
    guess: [f64; 2],
) -> Result<HopfPoint, OracleError> {
    let mut state = guess;
    let re_at = |lambda: f64, guess: [f64; 2]| -> Result<(f64, [f64; 2]), OracleError> {
        let p = find_equilibrium(model, lambda, guess)?;
        Ok((complex_pair_re(&p.eigenvalues).unwrap_or(0.0), p.state))
    };
    let (mut re_lo, s) = re_at(lo, state)?;
    state = s;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (re_mid, s) = re_at(mid, state)?;
        state = s;
        if re_mid.abs() < 1e-8 {
            return Ok(HopfPoint { lambda: mid, state });
        }
        if re_lo * re_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            re_lo = re_mid;
        }
    }
    Ok(HopfPoint {
        lambda: 0.5 * (lo + hi),
        state,
    })
}

/// A periodic orbit located by single shooting.
#[derive(Debug, Clone)]
pub struct ShootingOrbit {
    pub lambda: f64,
    pub anchor: [f64; 2],
    pub period: f64,
    pub multipliers: [Complex<f64>; 2],
    /// Magnitude of the multiplier away from the trivial +1.
    pub nontrivial_multiplier: f64,
    pub amplitude: f64,
    pub stable: bool,
}

/// Phase reference for the shooting system: orthogonality of the anchor
/// correction to the vector field at a reference point.
#[derive(Debug, Clone, Copy)]
struct PhaseRef {
    point: [f64; 2],
    field: [f64; 2],
}

fn shooting_residual(
    model: &PlantModel,
    lambda: f64,
    anchor: [f64; 2],
    period: f64,
) -> Result<Vector2<f64>, OracleError> {
    let end = flow(model, lambda, anchor, period)?;
    Ok(Vector2::new(end[0] - anchor[0], end[1] - anchor[1]))
}

fn orbit_amplitude(
    model: &PlantModel,
    lambda: f64,
    anchor: [f64; 2],
    period: f64,
) -> Result<f64, OracleError> {
    let rhs = |_t: f64, y: &[f64; 2]| model.rhs(*y, lambda, 0.0);
    let mut stepper = crate::ode::Dopri5::new(rhs, 0.0, anchor, oracle_ode_options())
        .map_err(|_| OracleError::ShootingDiverged { lambda })?;
    let mut min = anchor[0];
    let mut max = anchor[0];
    let n = 2048;
    let dt = period / n as f64;
    let mut next = 0.0;
    while stepper.t() < period {
        let step = stepper.step().map_err(|_| OracleError::ShootingDiverged { lambda })?;
        while next <= step.t1 && next <= period {
            let y = step.eval(next);
            min = min.min(y[0]);
            max = max.max(y[0]);
            next += dt;
        }
        if step.t1 >= period {
            break;
        }
    }
    Ok(0.5 * (max - min))
}

fn monodromy(
    model: &PlantModel,
    lambda: f64,
    anchor: [f64; 2],
    period: f64,
) -> Result<Matrix2<f64>, OracleError> {
    let h = 1e-7;
    let base = flow(model, lambda, anchor, period)?;
    let mut m = Matrix2::zeros();
    for col in 0..2 {
        let mut pert = anchor;
        pert[col] += h;
        let end = flow(model, lambda, pert, period)?;
        for row in 0..2 {
            m[(row, col)] = (end[row] - base[row]) / h;
        }
    }
    Ok(m)
}

fn finish_orbit(
    model: &PlantModel,
    lambda: f64,
    anchor: [f64; 2],
    period: f64,
) -> Result<ShootingOrbit, OracleError> {
    let m = monodromy(model, lambda, anchor, period)?;
    let multipliers = eigenvalues_2x2(&m);
    // The autonomous flow carries a trivial multiplier at +1; the other one
    // decides stability.
    let trivial_idx = if (multipliers[0] - Complex::new(1.0, 0.0)).norm()
        <= (multipliers[1] - Complex::new(1.0, 0.0)).norm()
    {
        0
    } else {
        1
    };
    let nontrivial = multipliers[1 - trivial_idx].norm();
    let amplitude = orbit_amplitude(model, lambda, anchor, period)?;
    Ok(ShootingOrbit {
        lambda,
        anchor,
        period,
        multipliers,
        nontrivial_multiplier: nontrivial,
        amplitude,
        stable: nontrivial < 1.0,
    })
}

/// Newton solve of the shooting system
/// `[flow_T(x0) - x0; <f(ref), x0 - ref>] = 0` for `(x0, T)`.
pub fn shoot_periodic_orbit(
    model: &PlantModel,
    lambda: f64,
    guess_anchor: [f64; 2],
    guess_period: f64,
) -> Result<ShootingOrbit, OracleError> {
    let field = rhs_vec(model, lambda, guess_anchor)?;
    let phase = PhaseRef {
        point: guess_anchor,
        field: [field[0], field[1]],
    };
    let (anchor, period) = shooting_newton(model, lambda, guess_anchor, guess_period, &phase)?;
    reject_equilibrium(model, lambda, anchor)?;
    finish_orbit(model, lambda, anchor, period)
}

/// Vector-field magnitude below which an "orbit" is really an equilibrium:
/// the flow map fixes equilibria for every period, so shooting systems have
/// a degenerate solution family there that corrections must not accept.
const EQUILIBRIUM_FIELD_TOL: f64 = 1e-5;

/// Seed a small periodic orbit emerging from a Hopf point.
///
/// Near the bifurcation, orbits are ellipses of the linearization with
/// angular frequency given by the imaginary part of the eigenvalue pair;
/// a radius sweep finds one the shooting iteration locks onto.
pub fn seed_orbit_near_hopf(
    model: &PlantModel,
    hopf: &HopfPoint,
    lambda: f64,
) -> Result<ShootingOrbit, OracleError> {
    let equilibrium = find_equilibrium(model, lambda, hopf.state)?;
    let omega = equilibrium.eigenvalues[0].im.abs();
    if omega < 1e-8 {
        return Err(OracleError::ShootingDiverged { lambda });
    }
    let period = TAU / omega;
    let scale = equilibrium.state[0].abs().max(equilibrium.state[1].abs()).max(0.1);
    let mut last_error = OracleError::ShootingDiverged { lambda };
    for radius_factor in [0.02, 0.05, 0.1, 0.01] {
        let anchor = [
            equilibrium.state[0] + radius_factor * scale,
            equilibrium.state[1],
        ];
        match shoot_periodic_orbit(model, lambda, anchor, period) {
            Ok(orbit) if orbit.amplitude > 1e-5 => return Ok(orbit),
            Ok(_) => {}
            Err(e) => last_error = e,
        }
    }
    Err(last_error)
}

fn shooting_newton(
    model: &PlantModel,
    lambda: f64,
    guess_anchor: [f64; 2],
    guess_period: f64,
    phase: &PhaseRef,
) -> Result<([f64; 2], f64), OracleError> {
    let mut anchor = guess_anchor;
    let mut period = guess_period;
    let h = 1e-7;
    for _ in 0..30 {
        if period < 1e-6 {
            return Err(OracleError::PeriodCollapse { period });
        }
        let res = shooting_residual(model, lambda, anchor, period)?;
        let phase_res = phase.field[0] * (anchor[0] - phase.point[0])
            + phase.field[1] * (anchor[1] - phase.point[1]);
        let norm = (res.norm_squared() + phase_res * phase_res).sqrt();
        if norm < 1e-10 {
            return Ok((anchor, period));
        }

        // Jacobian in (x0, T) by forward differences.
        let mut jac = nalgebra::Matrix3::zeros();
        for col in 0..2 {
            let mut pert = anchor;
            pert[col] += h;
            let rp = shooting_residual(model, lambda, pert, period)?;
            jac[(0, col)] = (rp[0] - res[0]) / h;
            jac[(1, col)] = (rp[1] - res[1]) / h;
            jac[(2, col)] = phase.field[col];
        }
        let rp = shooting_residual(model, lambda, anchor, period + h)?;
        jac[(0, 2)] = (rp[0] - res[0]) / h;
        jac[(1, 2)] = (rp[1] - res[1]) / h;
        jac[(2, 2)] = 0.0;

        let rhs = nalgebra::Vector3::new(-res[0], -res[1], -phase_res);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(OracleError::ShootingDiverged { lambda })?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(OracleError::ShootingDiverged { lambda });
        }
        // Damped update keeps the period positive through rough patches.
        let mut scale: f64 = 1.0;
        if period + step[2] <= 0.0 {
            scale = 0.5 * period / step[2].abs();
        }
        anchor[0] += scale * step[0];
        anchor[1] += scale * step[1];
        period += scale * step[2];
    }
    let res = shooting_residual(model, lambda, anchor, period)?;
    if res.norm() < 1e-8 {
        Ok((anchor, period))
    } else {
        Err(OracleError::ShootingDiverged { lambda })
    }
}

fn reject_equilibrium(
    model: &PlantModel,
    lambda: f64,
    anchor: [f64; 2],
) -> Result<(), OracleError> {
    let field = rhs_vec(model, lambda, anchor)?;
    if field.norm() < EQUILIBRIUM_FIELD_TOL {
        return Err(OracleError::ShootingDiverged { lambda });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleTermination {
    ParameterBound,
    StepsizeCollapse,
    MaxPoints,
    PeriodCollapse,
}

#[derive(Debug)]
pub struct OracleBranch {
    pub points: Vec<ShootingOrbit>,
    pub termination: OracleTermination,
}

#[derive(Debug, Clone, Copy)]
pub struct ShootingContinuationSettings {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
}

impl Default for ShootingContinuationSettings {
    fn default() -> Self {
        Self {
            initial_step: 0.01,
            min_step: 1e-7,
            max_step: 0.05,
            max_points: 2000,
        }
    }
}

/// Pseudo-arclength continuation of shooting orbits in `(x0, T, lambda)`.
///
/// The parameter is scaled into the arclength norm so folds in `lambda` are
/// rounded; stepsize halves on Newton failure and the run stops when it
/// collapses, when the parameter leaves the range, or at the point budget.
pub fn continue_periodic_shooting(
    model: &PlantModel,
    seed: &ShootingOrbit,
    lambda_range: (f64, f64),
    settings: &ShootingContinuationSettings,
    go_forward: bool,
) -> Result<OracleBranch, OracleError> {
    // Second point from a small natural-parameter step.
    let delta = (lambda_range.1 - lambda_range.0).abs() * 1e-3;
    let lambda2 = if go_forward { seed.lambda + delta } else { seed.lambda - delta };
    let second = shoot_periodic_orbit(model, lambda2, seed.anchor, seed.period)?;

    // The period coordinate is scaled into state-sized units so slow-fast
    // orbits with long periods do not swamp the arclength norm.
    let period_scale = seed.period.max(1.0);
    let pack = |o: &ShootingOrbit| {
        DVector::from_vec(vec![o.anchor[0], o.anchor[1], o.period / period_scale, o.lambda])
    };
    let mut prev = pack(seed);
    let mut curr = pack(&second);
    let mut points = vec![seed.clone(), second.clone()];
    let mut h = settings.initial_step;
    let termination;

    'outer: loop {
        if points.len() >= settings.max_points {
            termination = OracleTermination::MaxPoints;
            break;
        }
        let mut delta = &curr - &prev;
        let dist = delta.norm();
        if dist < 1e-14 {
            termination = OracleTermination::StepsizeCollapse;
            break;
        }
        delta /= dist;

        loop {
            let prediction = &curr + &delta * h;
            let lambda_pred = prediction[3];
            if lambda_pred < lambda_range.0 || lambda_pred > lambda_range.1 {
                termination = OracleTermination::ParameterBound;
                break 'outer;
            }
            match correct_shooting_point(
                model,
                &prediction,
                &delta,
                &points[points.len() - 1],
                period_scale,
                h,
            ) {
                Ok(corrected) => {
                    if corrected[2] * period_scale < 1e-6 {
                        termination = OracleTermination::PeriodCollapse;
                        break 'outer;
                    }
                    let orbit = finish_orbit(
                        model,
                        corrected[3],
                        [corrected[0], corrected[1]],
                        corrected[2] * period_scale,
                    )?;
                    prev = curr.clone();
                    curr = corrected;
                    points.push(orbit);
                    h = (h * 1.3).min(settings.max_step);
                    break;
                }
                Err(_) => {
                    h *= 0.5;
                    if h < settings.min_step {
                        termination = OracleTermination::StepsizeCollapse;
                        break 'outer;
                    }
                }
            }
        }
    }

    Ok(OracleBranch { points, termination })
}

/// Newton correction of the extended shooting system
/// `[flow residual; phase; arclength] = 0` in `(x0, T, lambda)`.
fn correct_shooting_point(
    model: &PlantModel,
    prediction: &DVector<f64>,
    direction: &DVector<f64>,
    reference: &ShootingOrbit,
    period_scale: f64,
    stepsize: f64,
) -> Result<DVector<f64>, OracleError> {
    let field = rhs_vec(model, reference.lambda, reference.anchor)?;
    let phase = PhaseRef {
        point: reference.anchor,
        field: [field[0], field[1]],
    };
    let mut v = prediction.clone();
    let h = 1e-7;

    let eval = |v: &DVector<f64>| -> Result<DVector<f64>, OracleError> {
        let anchor = [v[0], v[1]];
        let period = v[2] * period_scale;
        let lambda = v[3];
        if period < 1e-6 {
            return Err(OracleError::PeriodCollapse { period });
        }
        let res = shooting_residual(model, lambda, anchor, period)?;
        let phase_res = phase.field[0] * (anchor[0] - phase.point[0])
            + phase.field[1] * (anchor[1] - phase.point[1]);
        let arc = (v - prediction).dot(direction);
        Ok(DVector::from_vec(vec![res[0], res[1], phase_res, arc]))
    };

    // Accepted solutions must stay close to the prediction: the arclength
    // plane also contains points of other solution sheets (most visibly the
    // stable sheet on the far side of a fold), which sit far away
    // laterally.
    let accept = |v: &DVector<f64>| -> Result<(), OracleError> {
        reject_equilibrium(model, v[3], [v[0], v[1]])?;
        if (v - prediction).norm() > stepsize {
            return Err(OracleError::ShootingDiverged { lambda: v[3] });
        }
        Ok(())
    };
    let mut f = eval(&v)?;
    for _ in 0..12 {
        if f.norm() < 1e-9 {
            accept(&v)?;
            return Ok(v);
        }
        let mut jac = DMatrix::zeros(4, 4);
        for col in 0..4 {
            let mut pert = v.clone();
            pert[col] += h;
            let fp = eval(&pert)?;
            for row in 0..4 {
                jac[(row, col)] = (fp[row] - f[row]) / h;
            }
        }
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or(OracleError::ShootingDiverged { lambda: v[3] })?;
        if !step.iter().all(|x| x.is_finite()) {
            return Err(OracleError::ShootingDiverged { lambda: v[3] });
        }
        v += &step;
        f = eval(&v)?;
        if step.norm() < 1e-11 && f.norm() < 1e-8 {
            accept(&v)?;
            return Ok(v);
        }
    }
    if f.norm() < 1e-8 {
        accept(&v)?;
        Ok(v)
    } else {
        Err(OracleError::ShootingDiverged { lambda: v[3] })
    }
}

/// One noise-robustness trial: spline and Fourier fits of the same noisy
/// record, each scored against the noise-free signal.
#[derive(Debug, Clone, Copy)]
pub struct NoiseTrialOutcome {
    pub spline_rmse: f64,
    pub fourier_rmse: f64,
}

/// Discretisation robustness study: a deterministic control target is
/// found from open-loop data, the controlled system is re-run with noisy
/// controller measurements, and a `parameters`-coefficient optimized-knot
/// spline is pitted against a Fourier series of the same parameter count,
/// both fitted to the noisy record and scored against the noise-free tap.
#[allow(clippy::too_many_arguments)]
pub fn noise_robustness_trials(
    model: &PlantModel,
    lambda: f64,
    parameters: usize,
    n_seeds: usize,
    master_seed: u64,
    gain: f64,
    noise_variance: f64,
    heuristic: crate::embedding::OriginHeuristic,
) -> Result<Vec<NoiseTrialOutcome>, OracleError> {
    use crate::knots::{optimize_knots, KnotOptimizationConfig};
    use crate::plant::{ControllerConfig, Plant, SteadyStateOptions};
    use crate::rng::derive_seed;
    use crate::spline::{fit_least_squares, KnotVector, PeriodicBasis};

    assert!(parameters >= 5 && parameters % 2 == 1, "odd parameter count >= 5");
    // Fine sampling and a near-per-sample noise hold make the recorded
    // noise effectively independent across samples; noisy runs never settle
    // in coefficients, so a fixed winding budget plays the role of an
    // experiment's settle time.
    let options = SteadyStateOptions {
        samples_per_winding: 2048,
        winding_cap: 12,
        noise_hold_dt: Some(model.period_hint() / 2048.0),
        ..SteadyStateOptions::default()
    };
    let mut plant = Plant::new(*model, model.probe_state(), options);
    let embedding = plant.probe_embedding(lambda, heuristic)?;

    let provisional: Vec<f64> = (1..parameters)
        .map(|i| i as f64 / parameters as f64)
        .collect();
    let provisional_basis = PeriodicBasis::cubic(KnotVector::periodic(&provisional)?);
    let open = plant.run_open_loop_to_steady_state(lambda, &provisional_basis, &embedding)?;
    let knot_config = KnotOptimizationConfig {
        seed: derive_seed(master_seed, "noise-study-knots"),
        ..KnotOptimizationConfig::new(parameters - 1)
    };
    let knot_fit = optimize_knots(&knot_config, &open.encoded)?;
    let basis = PeriodicBasis::cubic(knot_fit.knots.clone());
    let target = fit_least_squares(&basis, &open.encoded)?.curve;

    let harmonics = (parameters - 1) / 2;
    let base_state = plant.state();
    let mut outcomes = Vec::with_capacity(n_seeds);
    for trial in 0..n_seeds {
        let mut rig = Plant::new(*model, base_state, options);
        let controller = ControllerConfig::new(
            gain,
            target.clone(),
            embedding.clone(),
            noise_variance,
            derive_seed(master_seed, &format!("noise-trial-{trial}")),
        );
        let record = rig.run_controlled_to_steady_state(&controller, lambda)?;

        let spline_fit = fit_least_squares(&basis, &record.encoded)?;
        let (fourier, _) = fourier_fit(&record.encoded, harmonics)?;
        let clean = embedding
            .encode_pointwise(&record.true_samples)
            .map_err(PlantError::Embedding)?;
        let mut spline_sq = 0.0;
        let mut fourier_sq = 0.0;
        for (&t, &x) in clean.ts().iter().zip(clean.xs()) {
            let s = spline_fit.curve.eval(t)?;
            let f = fourier.eval(t);
            spline_sq += (s - x) * (s - x);
            fourier_sq += (f - x) * (f - x);
        }
        let n = clean.len() as f64;
        outcomes.push(NoiseTrialOutcome {
            spline_rmse: (spline_sq / n).sqrt(),
            fourier_rmse: (fourier_sq / n).sqrt(),
        });
    }
    Ok(outcomes)
}

/// Truncated Fourier series on the unit interval.
#[derive(Debug, Clone)]
pub struct FourierSeries {
    pub mean: f64,
    pub cos_coefficients: Vec<f64>,
    pub sin_coefficients: Vec<f64>,
    /// Base angular frequency (two pi on the unit domain).
    pub omega: f64,
}

impl FourierSeries {
    pub fn parameter_count(&self) -> usize {
        1 + self.cos_coefficients.len() + self.sin_coefficients.len()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.mean;
        for (k, (a, b)) in self
            .cos_coefficients
            .iter()
            .zip(&self.sin_coefficients)
            .enumerate()
        {
            let arg = self.omega * (k + 1) as f64 * t;
            acc += a * arg.cos() + b * arg.sin();
        }
        acc
    }
}

/// Least-squares Fourier fit with `n` harmonics (2n + 1 parameters).
pub fn fourier_fit(samples: &SampleSet, n_harmonics: usize) -> Result<(FourierSeries, f64), SplineError> {
    let n_params = 2 * n_harmonics + 1;
    if samples.len() < n_params {
        return Err(SplineError::InsufficientSamples {
            needed: n_params,
            got: samples.len(),
        });
    }
    let mut matrix = DMatrix::zeros(samples.len(), n_params);
    for (row, &t) in samples.ts().iter().enumerate() {
        matrix[(row, 0)] = 1.0;
        for k in 1..=n_harmonics {
            let arg = TAU * k as f64 * t;
            matrix[(row, 2 * k - 1)] = arg.cos();
            matrix[(row, 2 * k)] = arg.sin();
        }
    }
    let rhs = DVector::from_column_slice(samples.xs());
    let solution = solve_least_squares(&matrix, &rhs)?;
    let fit_error = (&rhs - &matrix * &solution).norm_squared();
    let mut cos_coefficients = Vec::with_capacity(n_harmonics);
    let mut sin_coefficients = Vec::with_capacity(n_harmonics);
    for k in 1..=n_harmonics {
        cos_coefficients.push(solution[2 * k - 1]);
        sin_coefficients.push(solution[2 * k]);
    }
    Ok((
        FourierSeries {
            mean: solution[0],
            cos_coefficients,
            sin_coefficients,
            omega: TAU,
        },
        fit_error,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn oregonator_equilibrium_closed_form() {
        // y = x and x(1-x) = f x(x-q)/(x+q), independent of epsilon.
        let model = PlantModel::oregonator();
        let point = find_equilibrium(&model, 1.0, [0.4, 0.4]).unwrap();
        let q = 0.025;
        let x = point.state[0];
        assert_abs_diff_eq!(point.state[1], x, epsilon = 1e-9);
        assert_abs_diff_eq!(
            x * (1.0 - x),
            x * (x - q) / (x + q),
            epsilon = 1e-9
        );
        for eps in [0.05, 0.2] {
            let other = PlantModel::Oregonator(crate::plant::OregonatorParams {
                epsilon: eps,
                ..Default::default()
            });
            let p = find_equilibrium(&other, 1.0, [0.4, 0.4]).unwrap();
            assert_abs_diff_eq!(p.state[0], x, epsilon = 1e-8);
        }
    }

    #[test]
    fn perturbed_start_converges_back() {
        let model = PlantModel::oregonator();
        let exact = find_equilibrium(&model, 1.0, [0.4, 0.4]).unwrap();
        let perturbed = find_equilibrium(
            &model,
            1.0,
            [exact.state[0] + 1e-2, exact.state[1] - 1e-2],
        )
        .unwrap();
        assert_abs_diff_eq!(perturbed.state[0], exact.state[0], epsilon = 1e-9);
        assert_abs_diff_eq!(perturbed.state[1], exact.state[1], epsilon = 1e-9);
    }

    #[test]
    fn fourier_recovers_in_span_signal() {
        let ts: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let xs: Vec<f64> = ts.iter().map(|&t| 1.5 + 0.7 * (TAU * t).cos()).collect();
        let samples = SampleSet::new(ts, xs).unwrap();
        let (series, err) = fourier_fit(&samples, 3).unwrap();
        assert!(err < 1e-24, "error {err}");
        assert_abs_diff_eq!(series.mean, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(series.cos_coefficients[0], 0.7, epsilon = 1e-12);
        for k in 1..3 {
            assert_abs_diff_eq!(series.cos_coefficients[k], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(series.sin_coefficients[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fourier_constant_signal() {
        let ts: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let samples = SampleSet::new(ts, vec![2.25; 50]).unwrap();
        let (series, err) = fourier_fit(&samples, 2).unwrap();
        assert!(err < 1e-26);
        assert_abs_diff_eq!(series.mean, 2.25, epsilon = 1e-13);
        assert!(series
            .cos_coefficients
            .iter()
            .chain(&series.sin_coefficients)
            .all(|c| c.abs() < 1e-12));
    }
}
