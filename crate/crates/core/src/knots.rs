//! Free-knot selection by multistart optimization, and online adaptation.
//!
//! Interior knots are chosen to minimize the least-squares error of the
//! best-fit periodic spline against a reference signal. The objective sorts
//! and clamps candidates so the local optimizer only ever sees box bounds;
//! degenerate placements surface as a large penalty rather than an error so
//! the search can continue past them. Knot selection never touches the
//! controlled or uncontrolled system: it works purely on recorded samples.

use crate::optim::{minimize_boxed, BoxedMinimizeConfig};
use crate::rng::{mix, SmallRng};
use crate::spline::{fit_least_squares, KnotVector, PeriodicBasis, SampleSet};
use thiserror::Error;

/// Knots are kept off the domain boundary by this margin.
pub const DOMAIN_MARGIN: f64 = 1e-6;

/// Objective value substituted for degenerate (rank-deficient) placements.
pub const RANK_PENALTY: f64 = 1e12;

/// Peak-to-peak threshold below which a reference is treated as constant.
pub const FLAT_REFERENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum KnotError {
    #[error("every restart of the knot optimization ended rank deficient")]
    AllRestartsFailed,
    #[error("knot optimization needs at least {needed} samples, got {got}")]
    InsufficientReference { needed: usize, got: usize },
    #[error(transparent)]
    Spline(#[from] crate::spline::SplineError),
}

/// How `adapt_knots` reacts to a newly accepted solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptationMode {
    /// One warm-started constrained step, with a multistart fallback when
    /// the fit error degrades past the threshold.
    WarmStart,
    /// Full multistart on every adaptation.
    FullMultistart,
}

#[derive(Debug, Clone)]
pub struct KnotOptimizationConfig {
    pub n_interior: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub adaptation: AdaptationMode,
    /// Relative fit-error increase that triggers a full multistart during
    /// adaptation.
    pub reoptimization_threshold: f64,
    pub seed: u64,
}

impl KnotOptimizationConfig {
    pub fn new(n_interior: usize) -> Self {
        Self {
            n_interior,
            restarts: 20,
            max_iterations: 200,
            adaptation: AdaptationMode::WarmStart,
            reoptimization_threshold: 2.0,
            seed: 0,
        }
    }

    fn validate(&self) {
        assert!(self.restarts >= 1, "at least one restart required");
        assert!(self.n_interior >= 3, "periodic extension needs 3 interior knots");
    }

    fn minimizer_config(&self) -> BoxedMinimizeConfig {
        BoxedMinimizeConfig {
            max_iterations: self.max_iterations,
            ..Default::default()
        }
    }
}

/// Sort and clamp a raw candidate into a valid interior knot vector, or
/// `None` when clamping produced coincident knots.
fn sanitize(candidate: &[f64]) -> Option<Vec<f64>> {
    let mut knots: Vec<f64> = candidate
        .iter()
        .map(|k| k.clamp(DOMAIN_MARGIN, 1.0 - DOMAIN_MARGIN))
        .collect();
    knots.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return None;
    }
    Some(knots)
}

/// Least-squares fit error of the best-fit spline on the basis built from a
/// candidate interior knot set. Degenerate candidates return [`RANK_PENALTY`].
pub fn knot_fit_error(candidate: &[f64], reference: &SampleSet) -> f64 {
    let Some(knots) = sanitize(candidate) else {
        return RANK_PENALTY;
    };
    let Ok(kv) = KnotVector::periodic(&knots) else {
        return RANK_PENALTY;
    };
    let basis = PeriodicBasis::cubic(kv);
    match fit_least_squares(&basis, reference) {
        Ok(fit) => fit.fit_error,
        Err(_) => RANK_PENALTY,
    }
}

/// Outcome of a knot search: the knots and their fit error on the reference.
#[derive(Debug, Clone)]
pub struct KnotFit {
    pub knots: KnotVector,
    pub fit_error: f64,
    /// Whether a full multistart ran (directly or as an adaptation
    /// fallback). Callers tracking a degradation baseline reset it on this.
    pub used_multistart: bool,
}

fn equispaced(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

fn local_search(
    start: &[f64],
    reference: &SampleSet,
    config: &KnotOptimizationConfig,
) -> (Vec<f64>, f64) {
    let lower = vec![DOMAIN_MARGIN; start.len()];
    let upper = vec![1.0 - DOMAIN_MARGIN; start.len()];
    let result = minimize_boxed(
        |x| knot_fit_error(x, reference),
        start,
        &lower,
        &upper,
        &config.minimizer_config(),
    );
    (result.x, result.value)
}

/// Multistart knot placement: repeated local optimization from sorted
/// uniform draws, keeping the best result. Deterministic for a given seed.
pub fn optimize_knots(
    config: &KnotOptimizationConfig,
    reference: &SampleSet,
) -> Result<KnotFit, KnotError> {
    config.validate();
    if reference.len() < config.n_interior + 1 {
        return Err(KnotError::InsufficientReference {
            needed: config.n_interior + 1,
            got: reference.len(),
        });
    }
    if reference.peak_to_peak() < FLAT_REFERENCE_TOL {
        // Objective is globally flat; any valid knots do.
        let knots = equispaced(config.n_interior);
        let error = knot_fit_error(&knots, reference);
        return Ok(KnotFit {
            knots: KnotVector::periodic(&knots)?,
            fit_error: error,
            used_multistart: false,
        });
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..config.restarts {
        let mut rng = SmallRng::new(mix(config.seed ^ (restart as u64)));
        let mut start: Vec<f64> = (0..config.n_interior).map(|_| rng.uniform()).collect();
        start.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        let (x, value) = local_search(&start, reference, config);
        if value >= RANK_PENALTY {
            continue;
        }
        if best.as_ref().map_or(true, |(_, b)| value < *b) {
            best = Some((x, value));
        }
    }
    let (x, value) = best.ok_or(KnotError::AllRestartsFailed)?;
    let knots = sanitize(&x).ok_or(KnotError::AllRestartsFailed)?;
    Ok(KnotFit {
        knots: KnotVector::periodic(&knots)?,
        fit_error: value,
        used_multistart: true,
    })
}

/// Adapt knots to a newly accepted reference signal.
///
/// Runs one warm-started constrained optimization from the current knots.
/// When the adapted error still exceeds `reoptimization_threshold` times
/// `baseline_error`, a full multistart is run instead. The baseline must be
/// ratchet-proof: comparing against the immediately preceding accepted
/// error lets slow degradation creep under the threshold step after step,
/// so callers pass the best error seen since the last full multistart.
/// The warm-start input is never beaten by something worse: the best of
/// input, warm result and fallback wins.
pub fn adapt_knots(
    current: &KnotVector,
    reference: &SampleSet,
    config: &KnotOptimizationConfig,
    baseline_error: Option<f64>,
) -> Result<KnotFit, KnotError> {
    if reference.peak_to_peak() < FLAT_REFERENCE_TOL {
        return Ok(KnotFit {
            knots: current.clone(),
            fit_error: knot_fit_error(current.interior(), reference),
            used_multistart: false,
        });
    }

    let input_error = knot_fit_error(current.interior(), reference);
    let mut best = (current.interior().to_vec(), input_error);
    let mut used_multistart = false;

    match config.adaptation {
        AdaptationMode::FullMultistart => {
            let fit = optimize_knots(config, reference)?;
            used_multistart = true;
            if fit.fit_error < best.1 {
                best = (fit.knots.interior().to_vec(), fit.fit_error);
            }
        }
        AdaptationMode::WarmStart => {
            let (x, value) = local_search(current.interior(), reference, config);
            if value < best.1 {
                best = (x, value);
            }
            let trigger = baseline_error
                .map(|prev| best.1 > config.reoptimization_threshold * prev)
                .unwrap_or(false);
            if trigger || best.1 >= RANK_PENALTY {
                let fit = optimize_knots(config, reference)?;
                used_multistart = true;
                if fit.fit_error < best.1 {
                    best = (fit.knots.interior().to_vec(), fit.fit_error);
                }
            }
        }
    }

    let knots = sanitize(&best.0).ok_or(KnotError::AllRestartsFailed)?;
    Ok(KnotFit {
        knots: KnotVector::periodic(&knots)?,
        fit_error: best.1,
        used_multistart,
    })
}
