//! Pseudo-arclength continuation of angle-encoded noninvasive solutions.
//!
//! The zero problem lives in the joint space of target coefficients and the
//! continuation parameter. One residual evaluation runs the plant to steady
//! state, projects the response onto the current basis and subtracts it from
//! the target coefficients; the extended system appends an arclength
//! condition orthogonal to the secant direction, so folds are rounded
//! without a period unknown or integral phase condition anywhere.
//!
//! Between accepted steps the knots and polar origin are re-selected from
//! the latest solution, and the two most recent points are rediscretised
//! onto the new basis so the secant stays well defined.

use crate::embedding::{compute_embedding, AngleEmbedding, OriginHeuristic, PlanarSample};
use crate::knots::{adapt_knots, optimize_knots, KnotError, KnotOptimizationConfig};
use crate::plant::{ControllerConfig, Plant, PlantError, SteadyCycleRecord};
use crate::spline::{
    fit_least_squares, KnotVector, PeriodicBasis, SplineCurve, SplineError,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Grid used to measure solution amplitude (half peak-to-peak).
pub const AMPLITUDE_GRID: usize = 1024;

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("initialization failed at lambda = {lambda}: {source}")]
    InitializationFailed {
        lambda: f64,
        #[source]
        source: PlantError,
    },
    #[error("secant is degenerate: the two most recent points coincide")]
    DegenerateSecant,
    #[error(transparent)]
    Knots(#[from] KnotError),
    #[error(transparent)]
    Fit(#[from] SplineError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// Stepsize policy for the predictor.
#[derive(Debug, Clone, Copy)]
pub enum StepsizeMode {
    Fixed { h: f64 },
    Adaptive(AdaptiveStepsize),
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveStepsize {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    /// Accept when the corrected-to-accepted distance is within this factor
    /// of the prediction stepsize, in either direction.
    pub accept_ratio: f64,
    pub grow: f64,
    pub shrink: f64,
}

impl Default for AdaptiveStepsize {
    fn default() -> Self {
        Self {
            initial: 0.05,
            min: 1e-3,
            max: 0.2,
            accept_ratio: 1.2,
            grow: 1.5,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationConfig {
    /// The two open-loop initialization parameters, in prediction order:
    /// the first prediction moves from the first towards the second.
    pub start_params: (f64, f64),
    pub stepsize: StepsizeMode,
    pub newton_cap: usize,
    /// Forward-difference step for continuation Jacobians.
    pub fd_step: f64,
    /// Newton step / residual norm declaring convergence.
    pub convergence_tol: f64,
    pub amplitude_floor: f64,
    pub param_bounds: (f64, f64),
    pub max_points: usize,
    /// Consecutive correction failures tolerated in fixed-stepsize mode.
    pub max_consecutive_failures: usize,
}

impl ContinuationConfig {
    /// Case-study defaults: adaptive stepsizes for the gene oscillator,
    /// fixed for the Oregonator, direction deciding the initializer order.
    pub fn for_model(model: &crate::plant::PlantModel, direction: Direction) -> Self {
        use crate::plant::PlantModel;
        match model {
            PlantModel::Gene(_) => {
                let (start, h_max) = match direction {
                    Direction::Forward => ((0.03, 0.0301), 0.2),
                    Direction::Backward => ((0.0301, 0.03), 0.1),
                };
                Self {
                    start_params: start,
                    stepsize: StepsizeMode::Adaptive(AdaptiveStepsize {
                        max: h_max,
                        ..Default::default()
                    }),
                    newton_cap: 3,
                    fd_step: model.fd_step(),
                    convergence_tol: 5e-3,
                    amplitude_floor: 0.05,
                    param_bounds: (0.01, 0.05),
                    max_points: 500,
                    max_consecutive_failures: 3,
                }
            }
            PlantModel::Oregonator(_) => {
                let (start, h) = match direction {
                    Direction::Forward => ((0.75, 0.755), 0.1),
                    Direction::Backward => ((0.755, 0.75), 0.05),
                };
                Self {
                    start_params: start,
                    stepsize: StepsizeMode::Fixed { h },
                    newton_cap: 3,
                    fd_step: model.fd_step(),
                    convergence_tol: 5e-3,
                    amplitude_floor: 0.05,
                    param_bounds: (0.4, 1.2),
                    max_points: 500,
                    max_consecutive_failures: 3,
                }
            }
        }
    }

    pub fn initial_stepsize(&self) -> f64 {
        match self.stepsize {
            StepsizeMode::Fixed { h } => h,
            StepsizeMode::Adaptive(a) => a.initial,
        }
    }
}

/// Controller and randomness settings for one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub gain: f64,
    pub heuristic: OriginHeuristic,
    pub noise_variance: f64,
    pub noise_seed: u64,
}

/// An accepted solution with everything in force when it was accepted.
#[derive(Debug, Clone)]
pub struct ContinuationPoint {
    pub lambda: f64,
    /// Target coefficients on the basis recorded in `knots`.
    pub coefficients: DVector<f64>,
    /// Raw steady-cycle measurements backing this point.
    pub raw_samples: Vec<PlanarSample>,
    pub residual_norm: f64,
    pub amplitude: f64,
    /// Stability tag, filled in externally by the oracle when requested.
    pub stability: Option<bool>,
    pub knots: KnotVector,
    pub embedding: AngleEmbedding,
    /// Fit error of the response projection at acceptance.
    pub fit_error: f64,
    pub rms_control_effort: f64,
    pub max_control_effort: f64,
    pub newton_iterations: usize,
    pub converged_by_cap: bool,
    /// Prediction stepsize used to reach this point (zero for initializers).
    pub stepsize: f64,
    pub knot_adaptation_error: f64,
    pub windings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    AmplitudeFloor,
    StepsizeUnderflow,
    ParameterBound,
    Stall,
    DegenerateSecant,
    MaxPoints,
}

impl CorrectionFailure {
    pub fn name(&self) -> &'static str {
        match self {
            CorrectionFailure::Stalled => "stalled",
            CorrectionFailure::SingularJacobian { .. } => "singular-jacobian",
            CorrectionFailure::Evaluation(_) => "evaluation",
        }
    }
}

impl TerminationReason {
    pub fn name(&self) -> &'static str {
        match self {
            TerminationReason::AmplitudeFloor => "amplitude-floor",
            TerminationReason::StepsizeUnderflow => "stepsize-underflow",
            TerminationReason::ParameterBound => "parameter-bound",
            TerminationReason::Stall => "stall",
            TerminationReason::DegenerateSecant => "degenerate-secant",
            TerminationReason::MaxPoints => "max-points",
        }
    }

    /// Whether a run ending this way completed its protocol (as opposed to
    /// giving up mid-branch).
    pub fn is_orderly(&self) -> bool {
        matches!(
            self,
            TerminationReason::AmplitudeFloor | TerminationReason::ParameterBound
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepsizeEvent {
    pub step_index: usize,
    pub stepsize: f64,
    pub accepted: bool,
    /// Corrected-to-predicted distance ratio, when a correction converged.
    pub ratio: Option<f64>,
    /// Failure kind when the correction did not converge.
    pub failure: Option<&'static str>,
}

/// Identity tags of one residual evaluation, for auditing basis consistency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalTag {
    pub step_index: usize,
    pub basis_id: u64,
    pub embedding_id: u64,
}

#[derive(Debug)]
pub struct Branch {
    pub points: Vec<ContinuationPoint>,
    pub direction: Direction,
    pub stepsize_history: Vec<StepsizeEvent>,
    pub termination: TerminationReason,
    pub eval_log: Vec<EvalTag>,
}

/// One residual evaluation environment: the basis and embedding are fixed
/// for the lifetime of the context, which is exactly one prediction-
/// correction step.
pub struct ResidualContext<'a> {
    pub plant: &'a mut Plant,
    pub basis: &'a PeriodicBasis,
    pub embedding: &'a AngleEmbedding,
    pub gain: f64,
    pub noise_variance: f64,
    pub noise_seed: u64,
    pub step_index: usize,
    pub eval_log: &'a mut Vec<EvalTag>,
}

impl ResidualContext<'_> {
    /// Run the plant at `lambda` under the target `coefficients` and return
    /// the coefficient-space residual (target minus fitted response).
    pub fn io_residual(
        &mut self,
        coefficients: &DVector<f64>,
        lambda: f64,
    ) -> Result<(DVector<f64>, SteadyCycleRecord), PlantError> {
        let target = SplineCurve::new(self.basis.clone(), coefficients.clone())
            .map_err(PlantError::Fit)?;
        let controller = ControllerConfig::new(
            self.gain,
            target,
            self.embedding.clone(),
            self.noise_variance,
            self.noise_seed,
        );
        self.eval_log.push(EvalTag {
            step_index: self.step_index,
            basis_id: self.basis.id(),
            embedding_id: self.embedding.id(),
        });
        let record = self.plant.run_controlled_to_steady_state(&controller, lambda)?;
        let residual = coefficients - &record.response_coefficients;
        Ok((residual, record))
    }
}

/// Secant prediction in the joint (coefficients, lambda) space.
///
/// Returns the prediction and the unit secant direction.
pub fn secant_predict(
    prev: (&DVector<f64>, f64),
    curr: (&DVector<f64>, f64),
    stepsize: f64,
) -> Result<(DVector<f64>, DVector<f64>), ContinuationError> {
    let n = prev.0.len();
    assert_eq!(n, curr.0.len(), "points must share a basis");
    let mut delta = DVector::zeros(n + 1);
    for i in 0..n {
        delta[i] = curr.0[i] - prev.0[i];
    }
    delta[n] = curr.1 - prev.1;
    let dist = delta.norm();
    if dist < 1e-12 {
        return Err(ContinuationError::DegenerateSecant);
    }
    let direction = delta / dist;
    let mut prediction = DVector::zeros(n + 1);
    for i in 0..n {
        prediction[i] = curr.0[i];
    }
    prediction[n] = curr.1;
    Ok((prediction.clone() + &direction * stepsize, direction))
}

/// Outcome of a stepsize adaptation decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepDecision {
    Accept { next: f64 },
    Reject { next: f64 },
    TerminateUnderflow,
}

/// Distance-ratio stepsize control: accept when corrected and predicted
/// distances agree within the configured factor, growing the stepsize;
/// otherwise halve and retry, terminating below the minimum.
pub fn adapt_stepsize(ratio: f64, current: f64, params: &AdaptiveStepsize) -> StepDecision {
    let spread = ratio.max(1.0 / ratio);
    if spread <= params.accept_ratio {
        StepDecision::Accept {
            next: (current * params.grow).min(params.max),
        }
    } else {
        let next = current * params.shrink;
        if next < params.min {
            StepDecision::TerminateUnderflow
        } else {
            StepDecision::Reject { next }
        }
    }
}

/// Result of one Newton correction.
#[derive(Debug)]
pub enum CorrectionOutcome {
    Converged(CorrectedSolution),
    Failed(CorrectionFailure),
}

#[derive(Debug)]
pub struct CorrectedSolution {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    pub record: SteadyCycleRecord,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged_by_cap: bool,
}

#[derive(Debug)]
pub enum CorrectionFailure {
    /// The plant stalled at a spurious equilibrium during an evaluation.
    Stalled,
    /// The extended Jacobian was numerically singular.
    SingularJacobian { condition: f64 },
    /// Any other plant/fit failure during the correction.
    Evaluation(PlantError),
}

fn solve_newton_system(
    jacobian: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>, CorrectionFailure> {
    let svd = jacobian.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e12 {
        return Err(CorrectionFailure::SingularJacobian { condition });
    }
    svd.solve(rhs, 0.0)
        .map_err(|_| CorrectionFailure::SingularJacobian { condition })
}

fn classify_plant_error(e: PlantError) -> CorrectionFailure {
    match e {
        PlantError::StalledAtEquilibrium { .. } => CorrectionFailure::Stalled,
        other => CorrectionFailure::Evaluation(other),
    }
}

/// Newton correction of the extended system
/// `[io_residual(beta*, lambda); <v - prediction, direction>] = 0`.
///
/// The Jacobian is forward finite differences with the per-model step, one
/// plant run per column; the arclength row is exact. Convergence is the L2
/// norm of the Newton step or of the residual falling under the tolerance;
/// reaching the iteration cap without it counts as converged-by-cap.
pub fn newton_correct(
    ctx: &mut ResidualContext<'_>,
    prediction: &DVector<f64>,
    direction: &DVector<f64>,
    config: &ContinuationConfig,
) -> Result<CorrectionOutcome, ContinuationError> {
    let n = prediction.len() - 1;
    let h = config.fd_step;
    let tol = config.convergence_tol;

    let mut v = prediction.clone();
    let split = |v: &DVector<f64>| -> (DVector<f64>, f64) { (v.rows(0, n).into_owned(), v[n]) };

    let (beta, lambda) = split(&v);
    let (mut residual, mut record) = match ctx.io_residual(&beta, lambda) {
        Ok(out) => out,
        Err(e) => return Ok(CorrectionOutcome::Failed(classify_plant_error(e))),
    };
    let extended = |residual: &DVector<f64>, v: &DVector<f64>| -> DVector<f64> {
        let mut f = DVector::zeros(n + 1);
        for i in 0..n {
            f[i] = residual[i];
        }
        f[n] = (v - prediction).dot(direction);
        f
    };
    let mut f = extended(&residual, &v);

    // Only a prediction that is exact to well under the tolerance skips
    // correction entirely. Anything else takes at least one Newton step:
    // near folds the solution moves tangentially even when the residual is
    // already small, and that motion is what rounds the fold.
    if f.norm() < 0.1 * tol {
        let residual_norm = residual.norm();
        return Ok(CorrectionOutcome::Converged(CorrectedSolution {
            coefficients: beta,
            lambda,
            record,
            residual_norm,
            iterations: 0,
            converged_by_cap: false,
        }));
    }

    let mut iterations = 0;
    loop {
        iterations += 1;
        // Finite-difference Jacobian: every column is one plant run. A
        // probe can land where the plant cannot hold an oscillation (the
        // parameter column next to a fold overshoots the branch; a large
        // parameter jump can also hand the controller a spurious stable
        // equilibrium). Such probes stall; the column retries with flipped
        // sign, then with shrunken steps, from a restored plant state.
        let mut jacobian = DMatrix::zeros(n + 1, n + 1);
        for col in 0..=n {
            let state_before = ctx.plant.state();
            let mut outcome: Option<(DVector<f64>, f64)> = None;
            let mut last_stall: Option<PlantError> = None;
            'probe: for shrink in [1.0, 0.2, 0.04] {
                for sign in [1.0, -1.0] {
                    let step_signed = sign * shrink * h;
                    let mut v_pert = v.clone();
                    v_pert[col] += step_signed;
                    let (beta_p, lambda_p) = split(&v_pert);
                    match ctx.io_residual(&beta_p, lambda_p) {
                        Ok((r, _)) => {
                            outcome = Some((r, step_signed));
                            break 'probe;
                        }
                        Err(e @ PlantError::StalledAtEquilibrium { .. }) => {
                            ctx.plant.set_state(state_before);
                            last_stall = Some(e);
                        }
                        Err(e) => return Ok(CorrectionOutcome::Failed(classify_plant_error(e))),
                    }
                }
            }
            let Some((residual_p, step_signed)) = outcome else {
                return Ok(CorrectionOutcome::Failed(classify_plant_error(
                    last_stall.unwrap_or(PlantError::NonFinite),
                )));
            };
            for row in 0..n {
                jacobian[(row, col)] = (residual_p[row] - residual[row]) / step_signed;
            }
            jacobian[(n, col)] = direction[col];
        }

        let step = match solve_newton_system(&jacobian, &(-&f)) {
            Ok(s) => s,
            Err(failure) => return Ok(CorrectionOutcome::Failed(failure)),
        };
        if !step.iter().all(|x| x.is_finite()) {
            return Ok(CorrectionOutcome::Failed(CorrectionFailure::Evaluation(
                PlantError::NonFinite,
            )));
        }
        v += &step;

        let (beta, lambda) = split(&v);
        match ctx.io_residual(&beta, lambda) {
            Ok((r, rec)) => {
                residual = r;
                record = rec;
            }
            Err(e) => return Ok(CorrectionOutcome::Failed(classify_plant_error(e))),
        }
        f = extended(&residual, &v);

        let converged = step.norm() < tol || f.norm() < tol;
        if converged || iterations >= config.newton_cap {
            let residual_norm = residual.norm();
            return Ok(CorrectionOutcome::Converged(CorrectedSolution {
                coefficients: beta,
                lambda,
                record,
                residual_norm,
                iterations,
                converged_by_cap: !converged,
            }));
        }
    }
}

/// Re-encode a point's raw samples with a new embedding and refit on a new
/// basis; the parameter is untouched.
pub fn rediscretise(
    point: &ContinuationPoint,
    basis: &PeriodicBasis,
    embedding: &AngleEmbedding,
) -> Result<(DVector<f64>, f64), ContinuationError> {
    let encoded = embedding
        .encode_pointwise(&point.raw_samples)
        .map_err(PlantError::Embedding)?;
    let fit = fit_least_squares(basis, &encoded)?;
    Ok((fit.curve.coefficients().clone(), fit.fit_error))
}

fn amplitude_of(basis: &PeriodicBasis, coefficients: &DVector<f64>) -> Result<f64, SplineError> {
    Ok(SplineCurve::new(basis.clone(), coefficients.clone())?.amplitude(AMPLITUDE_GRID))
}

fn point_from_open_loop(
    lambda: f64,
    record: &SteadyCycleRecord,
    knots: &KnotVector,
    basis: &PeriodicBasis,
    embedding: &AngleEmbedding,
    adaptation_error: f64,
) -> Result<ContinuationPoint, ContinuationError> {
    Ok(ContinuationPoint {
        lambda,
        coefficients: record.response_coefficients.clone(),
        raw_samples: record.samples.clone(),
        residual_norm: 0.0,
        amplitude: amplitude_of(basis, &record.response_coefficients)?,
        stability: None,
        knots: knots.clone(),
        embedding: embedding.clone(),
        fit_error: record.response_fit_error,
        rms_control_effort: record.rms_control_effort,
        max_control_effort: record.max_control_effort,
        newton_iterations: 0,
        converged_by_cap: false,
        stepsize: 0.0,
        knot_adaptation_error: adaptation_error,
        windings: record.windings_used,
    })
}

/// Run one full continuation branch: open-loop initialization at the two
/// start parameters, then the predict-correct-adapt loop until a
/// termination condition fires.
pub fn run_branch(
    plant: &mut Plant,
    setup: &ExperimentSetup,
    config: &ContinuationConfig,
    knot_config: &KnotOptimizationConfig,
    direction: Direction,
) -> Result<Branch, ContinuationError> {
    let (lambda_first, lambda_second) = config.start_params;
    let mut eval_log: Vec<EvalTag> = Vec::new();
    let mut stepsize_history: Vec<StepsizeEvent> = Vec::new();

    // --- Initialization: two open-loop oscillations. ---
    let embedding = plant
        .probe_embedding(lambda_first, setup.heuristic)
        .map_err(|source| ContinuationError::InitializationFailed {
            lambda: lambda_first,
            source,
        })?;
    let provisional_interior: Vec<f64> = (1..=knot_config.n_interior)
        .map(|i| i as f64 / (knot_config.n_interior + 1) as f64)
        .collect();
    let provisional =
        PeriodicBasis::cubic(KnotVector::periodic(&provisional_interior)?);
    let first_record = plant
        .run_open_loop_to_steady_state(lambda_first, &provisional, &embedding)
        .map_err(|source| ContinuationError::InitializationFailed {
            lambda: lambda_first,
            source,
        })?;
    if !first_record.converged {
        return Err(ContinuationError::InitializationFailed {
            lambda: lambda_first,
            source: PlantError::NotConverged {
                windings: first_record.windings_used,
                discrepancy: first_record.discrepancy,
            },
        });
    }

    // Multistart knot selection on the first cycle.
    let knot_fit = optimize_knots(knot_config, &first_record.encoded)?;
    let mut knots = knot_fit.knots.clone();
    let mut basis = PeriodicBasis::cubic(knots.clone());
    let mut current_embedding = embedding;

    let first_fit = fit_least_squares(&basis, &first_record.encoded)?;
    let mut first_point = point_from_open_loop(
        lambda_first,
        &first_record,
        &knots,
        &basis,
        &current_embedding,
        knot_fit.fit_error,
    )?;
    first_point.coefficients = first_fit.curve.coefficients().clone();
    first_point.fit_error = first_fit.fit_error;
    first_point.amplitude = amplitude_of(&basis, &first_point.coefficients)?;

    let second_record = plant
        .run_open_loop_to_steady_state(lambda_second, &basis, &current_embedding)
        .map_err(|source| ContinuationError::InitializationFailed {
            lambda: lambda_second,
            source,
        })?;
    if !second_record.converged {
        return Err(ContinuationError::InitializationFailed {
            lambda: lambda_second,
            source: PlantError::NotConverged {
                windings: second_record.windings_used,
                discrepancy: second_record.discrepancy,
            },
        });
    }
    let second_point = point_from_open_loop(
        lambda_second,
        &second_record,
        &knots,
        &basis,
        &current_embedding,
        knot_fit.fit_error,
    )?;

    let mut points = vec![first_point, second_point];
    // Last plant state known to oscillate; failed corrections can leave the
    // rig stuck at a controller-stabilised equilibrium, and an experiment
    // would be restarted from a healthy state before retrying.
    let mut healthy_state = plant.state();
    let mut stepsize = config.initial_stepsize();
    let mut consecutive_failures = 0usize;
    let mut step_index = 0usize;
    // Best discretisation error seen since the last full multistart; the
    // adaptation fallback triggers against this so slow degradation cannot
    // creep under a step-to-step threshold.
    let mut knot_baseline = knot_fit.fit_error;
    let termination;

    'outer: loop {
        if points.len() >= config.max_points {
            termination = TerminationReason::MaxPoints;
            break;
        }
        {
            let last = points.last().expect("at least two points");
            if last.amplitude < config.amplitude_floor {
                termination = TerminationReason::AmplitudeFloor;
                break;
            }
        }

        // --- Adapt discretisation and embedding to the last solution. ---
        let (new_embedding, new_knots, adaptation_error) = {
            let last = points.last().expect("at least two points");
            let heuristic = setup.heuristic;
            let emb = compute_embedding(&last.raw_samples, heuristic)
                .map_err(PlantError::Embedding)?;
            let reference = emb
                .encode_pointwise(&last.raw_samples)
                .map_err(PlantError::Embedding)?;
            let adapted = adapt_knots(&knots, &reference, knot_config, Some(knot_baseline))?;
            if adapted.used_multistart {
                knot_baseline = adapted.fit_error;
            } else {
                knot_baseline = knot_baseline.min(adapted.fit_error);
            }
            (emb, adapted.knots, adapted.fit_error)
        };
        current_embedding = new_embedding;
        knots = new_knots;
        basis = PeriodicBasis::cubic(knots.clone());

        // --- Rediscretise the two most recent points on the new basis. ---
        let n_points = points.len();
        let (prev_beta, _) = rediscretise(&points[n_points - 2], &basis, &current_embedding)?;
        let (curr_beta, curr_fit_error) =
            rediscretise(&points[n_points - 1], &basis, &current_embedding)?;
        let prev_lambda = points[n_points - 2].lambda;
        let curr_lambda = points[n_points - 1].lambda;

        // --- Predict, correct, adapt the stepsize. ---
        loop {
            step_index += 1;
            // Fixed mode keeps the nominal stepsize but retries failed
            // corrections with temporarily halved predictions; the nominal
            // size is restored on acceptance.
            let effective_stepsize = match config.stepsize {
                StepsizeMode::Fixed { .. } => {
                    stepsize / (1u32 << consecutive_failures.min(8)) as f64
                }
                StepsizeMode::Adaptive(_) => stepsize,
            };
            let (prediction, secant_direction) = match secant_predict(
                (&prev_beta, prev_lambda),
                (&curr_beta, curr_lambda),
                effective_stepsize,
            ) {
                Ok(out) => out,
                Err(ContinuationError::DegenerateSecant) => {
                    termination = TerminationReason::DegenerateSecant;
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            let lambda_pred = prediction[prediction.len() - 1];
            if lambda_pred < config.param_bounds.0 || lambda_pred > config.param_bounds.1 {
                termination = TerminationReason::ParameterBound;
                break 'outer;
            }

            let mut ctx = ResidualContext {
                plant,
                basis: &basis,
                embedding: &current_embedding,
                gain: setup.gain,
                noise_variance: setup.noise_variance,
                noise_seed: setup.noise_seed,
                step_index,
                eval_log: &mut eval_log,
            };
            let outcome = newton_correct(&mut ctx, &prediction, &secant_direction, config)?;

            match outcome {
                CorrectionOutcome::Converged(solution) => {
                    let mut delta = solution.coefficients.clone() - &curr_beta;
                    let delta_lambda = solution.lambda - curr_lambda;
                    delta = delta.push(delta_lambda);
                    let distance = delta.norm();

                    let accept = match config.stepsize {
                        StepsizeMode::Fixed { .. } => true,
                        StepsizeMode::Adaptive(params) => {
                            match adapt_stepsize(distance / effective_stepsize, stepsize, &params) {
                                StepDecision::Accept { next } => {
                                    stepsize_history.push(StepsizeEvent {
                                        step_index,
                                        stepsize,
                                        accepted: true,
                                        ratio: Some(distance / stepsize),
                                        failure: None,
                                    });
                                    stepsize = next;
                                    true
                                }
                                StepDecision::Reject { next } => {
                                    stepsize_history.push(StepsizeEvent {
                                        step_index,
                                        stepsize,
                                        accepted: false,
                                        ratio: Some(distance / stepsize),
                                        failure: None,
                                    });
                                    stepsize = next;
                                    false
                                }
                                StepDecision::TerminateUnderflow => {
                                    stepsize_history.push(StepsizeEvent {
                                        step_index,
                                        stepsize,
                                        accepted: false,
                                        ratio: Some(distance / stepsize),
                                        failure: None,
                                    });
                                    termination = TerminationReason::StepsizeUnderflow;
                                    break 'outer;
                                }
                            }
                        }
                    };
                    if accept {
                        if matches!(config.stepsize, StepsizeMode::Fixed { .. }) {
                            stepsize_history.push(StepsizeEvent {
                                step_index,
                                stepsize: effective_stepsize,
                                accepted: true,
                                ratio: Some(distance / effective_stepsize),
                                failure: None,
                            });
                        }
                        consecutive_failures = 0;
                        if !solution.converged_by_cap {
                            // A capped correction may sit well off the
                            // branch; keep restarting from the last point
                            // that genuinely converged.
                            healthy_state = plant.state();
                        }
                        let amplitude = amplitude_of(&basis, &solution.coefficients)?;
                        points.push(ContinuationPoint {
                            lambda: solution.lambda,
                            coefficients: solution.coefficients,
                            raw_samples: solution.record.samples.clone(),
                            residual_norm: solution.residual_norm,
                            amplitude,
                            stability: None,
                            knots: knots.clone(),
                            embedding: current_embedding.clone(),
                            fit_error: solution.record.response_fit_error,
                            rms_control_effort: solution.record.rms_control_effort,
                            max_control_effort: solution.record.max_control_effort,
                            newton_iterations: solution.iterations,
                            converged_by_cap: solution.converged_by_cap,
                            stepsize: effective_stepsize,
                            knot_adaptation_error: adaptation_error,
                            windings: solution.record.windings_used,
                        });
                        let _ = curr_fit_error;
                        break;
                    }
                    // Rejected: retry with the updated stepsize on the same
                    // basis (the adaptation reference has not changed).
                }
                CorrectionOutcome::Failed(failure) => {
                    stepsize_history.push(StepsizeEvent {
                        step_index,
                        stepsize,
                        accepted: false,
                        ratio: None,
                        failure: Some(failure.name()),
                    });
                    plant.set_state(healthy_state);
                    match config.stepsize {
                        StepsizeMode::Adaptive(params) => {
                            let next = stepsize * params.shrink;
                            if next < params.min {
                                termination = TerminationReason::StepsizeUnderflow;
                                break 'outer;
                            }
                            stepsize = next;
                        }
                        StepsizeMode::Fixed { .. } => {
                            consecutive_failures += 1;
                            if consecutive_failures >= config.max_consecutive_failures {
                                termination = TerminationReason::Stall;
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(Branch {
        points,
        direction,
        stepsize_history,
        termination,
        eval_log,
    })
}
