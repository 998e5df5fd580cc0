//! Integration tests across the module boundaries: residual evaluation,
//! correction, rediscretisation and whole-branch invariants.

use cbc_core::continuation::{
    newton_correct, rediscretise, run_branch, ContinuationConfig, CorrectionOutcome, Direction,
    ExperimentSetup, ResidualContext, StepsizeMode,
};
use cbc_core::embedding::{compute_embedding, OriginHeuristic};
use cbc_core::knots::KnotOptimizationConfig;
use cbc_core::plant::{Plant, PlantModel, SteadyStateOptions};
use cbc_core::spline::{fit_least_squares, KnotVector, PeriodicBasis, SplineCurve};
use nalgebra::DVector;

fn equispaced_basis(n_interior: usize) -> PeriodicBasis {
    let interior: Vec<f64> = (1..=n_interior)
        .map(|i| i as f64 / (n_interior + 1) as f64)
        .collect();
    PeriodicBasis::cubic(KnotVector::periodic(&interior).unwrap())
}

/// Open-loop Oregonator cycle fitted on an equispaced basis, shared by the
/// tests below.
fn settled_oregonator() -> (Plant, cbc_core::embedding::AngleEmbedding, PeriodicBasis, DVector<f64>)
{
    let model = PlantModel::oregonator();
    let mut plant = Plant::new(model, model.probe_state(), SteadyStateOptions::default());
    let embedding = plant.probe_embedding(1.0, OriginHeuristic::Middle).unwrap();
    let basis = equispaced_basis(6);
    let record = plant
        .run_open_loop_to_steady_state(1.0, &basis, &embedding)
        .unwrap();
    let coefficients = record.response_coefficients.clone();
    (plant, embedding, basis, coefficients)
}

#[test]
fn zero_gain_residual_ignores_target() {
    // With zero gain the response is the open-loop cycle no matter the
    // target, so the residual is just the coefficient difference.
    let (mut plant, embedding, basis, open_loop_coeffs) = settled_oregonator();
    let mut eval_log = Vec::new();
    let mut ctx = ResidualContext {
        plant: &mut plant,
        basis: &basis,
        embedding: &embedding,
        gain: 0.0,
        noise_variance: 0.0,
        noise_seed: 0,
        step_index: 0,
        eval_log: &mut eval_log,
    };
    let mut rng = cbc_core::rng::SmallRng::new(7);
    for _ in 0..2 {
        let target =
            DVector::from_fn(basis.n_free(), |_, _| rng.uniform_in(-0.5, 1.5));
        let (residual, record) = ctx.io_residual(&target, 1.0).unwrap();
        let expected = &target - &record.response_coefficients;
        assert!((residual - &expected).amax() < 1e-14);
        assert!(
            (&record.response_coefficients - &open_loop_coeffs).amax() < 5e-3,
            "zero-gain response should stay on the open-loop cycle"
        );
    }
}

#[test]
fn exact_prediction_needs_no_iterations() {
    // A prediction that already satisfies the extended system far below
    // tolerance is returned unchanged. The plant must be measured tighter
    // than the acceptance threshold for the fixed point to be this exact.
    let model = PlantModel::oregonator();
    let options = SteadyStateOptions {
        convergence_tol: 5e-5,
        winding_cap: 400,
        ..SteadyStateOptions::default()
    };
    let mut plant = Plant::new(model, model.probe_state(), options);
    let embedding = plant.probe_embedding(1.0, OriginHeuristic::Middle).unwrap();
    let basis = equispaced_basis(6);
    let record = plant
        .run_open_loop_to_steady_state(1.0, &basis, &embedding)
        .unwrap();
    let coefficients = record.response_coefficients.clone();
    // Converge hard onto the fixed point of the IO-map.
    let mut fixed = coefficients.clone();
    // The IO-map contracts slowly at this gain; iterate well past the
    // solver tolerance.
    for _ in 0..25 {
        let target = SplineCurve::new(basis.clone(), fixed.clone()).unwrap();
        let controller =
            cbc_core::plant::ControllerConfig::new(4.0, target, embedding.clone(), 0.0, 0);
        let record = plant.run_controlled_to_steady_state(&controller, 1.0).unwrap();
        fixed = record.response_coefficients.clone();
    }

    let n = fixed.len();
    let mut prediction = DVector::zeros(n + 1);
    for i in 0..n {
        prediction[i] = fixed[i];
    }
    prediction[n] = 1.0;
    let mut direction = DVector::zeros(n + 1);
    direction[n] = 1.0;

    // The fixed point is exact to the plant's measurement noise (~1e-3);
    // with the solver tolerance above that, the prediction already
    // satisfies both equations.
    let mut config = ContinuationConfig::for_model(plant.model(), Direction::Forward);
    config.convergence_tol = 1e-2;
    let mut eval_log = Vec::new();
    let mut ctx = ResidualContext {
        plant: &mut plant,
        basis: &basis,
        embedding: &embedding,
        gain: 4.0,
        noise_variance: 0.0,
        noise_seed: 0,
        step_index: 0,
        eval_log: &mut eval_log,
    };
    match newton_correct(&mut ctx, &prediction, &direction, &config).unwrap() {
        CorrectionOutcome::Converged(solution) => {
            assert_eq!(solution.iterations, 0, "residual {:.2e}", solution.residual_norm);
            assert!((solution.coefficients - fixed).amax() < 1e-14);
            assert_eq!(solution.lambda, 1.0);
        }
        CorrectionOutcome::Failed(f) => panic!("correction failed: {f:?}"),
    }
}

#[test]
fn rediscretisation_identity_and_nesting() {
    let model = PlantModel::oregonator();
    let mut plant = Plant::new(model, model.probe_state(), SteadyStateOptions::default());
    let setup = ExperimentSetup {
        gain: 4.0,
        heuristic: OriginHeuristic::Middle,
        noise_variance: 0.0,
        noise_seed: 0,
    };
    let mut config = ContinuationConfig::for_model(&model, Direction::Forward);
    config.param_bounds = (0.7, 0.85);
    let knots = KnotOptimizationConfig {
        seed: 1,
        ..KnotOptimizationConfig::new(6)
    };
    let branch = run_branch(&mut plant, &setup, &config, &knots, Direction::Forward).unwrap();

    // Identity: same basis and embedding reproduce the coefficients of a
    // point whose coefficients are the fit of its own samples (the
    // initializers are; corrected points differ by their solver residual).
    let init = &branch.points[0];
    let init_basis = PeriodicBasis::cubic(init.knots.clone());
    let (coeffs, _) = rediscretise(init, &init_basis, &init.embedding).unwrap();
    assert!(
        (&coeffs - &init.coefficients).amax() < 1e-12,
        "identity rediscretisation moved coefficients by {:.2e}",
        (&coeffs - &init.coefficients).amax()
    );

    let point = branch.points.last().unwrap();
    let basis = PeriodicBasis::cubic(point.knots.clone());

    // Nesting: adding a knot never increases the fit error.
    let (_, base_error) = rediscretise(point, &basis, &point.embedding).unwrap();
    let mut refined = point.knots.interior().to_vec();
    let gap_idx = refined
        .windows(2)
        .enumerate()
        .max_by(|a, b| (a.1[1] - a.1[0]).partial_cmp(&(b.1[1] - b.1[0])).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    refined.insert(gap_idx + 1, 0.5 * (refined[gap_idx] + refined[gap_idx + 1]));
    let refined_basis = PeriodicBasis::cubic(KnotVector::periodic(&refined).unwrap());
    let (_, refined_error) = rediscretise(point, &refined_basis, &point.embedding).unwrap();
    assert!(
        refined_error <= base_error * (1.0 + 1e-9),
        "refined {refined_error} vs base {base_error}"
    );

    // A different embedding still yields a well-defined secant partner.
    let new_embedding = compute_embedding(&point.raw_samples, OriginHeuristic::MaxMax).unwrap();
    let (coeffs_new, _) = rediscretise(point, &basis, &new_embedding).unwrap();
    assert!(coeffs_new.iter().all(|c| c.is_finite()));
}

#[test]
fn branch_invariants_hold() {
    let model = PlantModel::oregonator();
    let mut plant = Plant::new(model, model.probe_state(), SteadyStateOptions::default());
    let setup = ExperimentSetup {
        gain: 4.0,
        heuristic: OriginHeuristic::Middle,
        noise_variance: 0.0,
        noise_seed: 0,
    };
    let mut config = ContinuationConfig::for_model(&model, Direction::Forward);
    config.param_bounds = (0.7, 0.95);
    let knots = KnotOptimizationConfig {
        seed: 1,
        ..KnotOptimizationConfig::new(6)
    };
    let branch = run_branch(&mut plant, &setup, &config, &knots, Direction::Forward).unwrap();
    assert!(branch.points.len() >= 4);

    // Basis consistency: all residual evaluations within one prediction-
    // correction step used one identical basis and embedding.
    let mut by_step: std::collections::BTreeMap<usize, Vec<(u64, u64)>> = Default::default();
    for tag in &branch.eval_log {
        by_step
            .entry(tag.step_index)
            .or_default()
            .push((tag.basis_id, tag.embedding_id));
    }
    for (step, tags) in by_step {
        assert!(
            tags.windows(2).all(|w| w[0] == w[1]),
            "step {step} mixed bases/embeddings: {tags:?}"
        );
    }

    // The extended system is square: unknowns = coefficients + parameter.
    for point in &branch.points {
        assert_eq!(point.coefficients.len(), point.knots.n_interior() + 1);
    }

    // Branch continuity: consecutive accepted points differ by at most
    // 1.2x the accepted stepsize in the joint norm (fixed mode uses the
    // recorded per-point stepsize).
    for pair in branch.points.windows(2).skip(1) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.knots.interior() != b.knots.interior() {
            continue; // coefficients live on different bases
        }
        let mut delta = (&b.coefficients - &a.coefficients).push(b.lambda - a.lambda);
        let _ = &mut delta;
        let dist = delta.norm();
        assert!(
            dist <= 1.2 * b.stepsize + 1e-9,
            "consecutive points {dist} apart with stepsize {}",
            b.stepsize
        );
    }

    // Winding monotonicity of the configured heuristic on the case study.
    let last = branch.points.last().unwrap();
    let embedding = &last.embedding;
    let unwrapped = embedding.unwrap_angles(&last.raw_samples).unwrap();
    let mut backton = 0.0_f64;
    for w in unwrapped.windows(2) {
        backton = backton.max(w[0] - w[1]);
    }
    assert!(backton < 0.01, "angle reversal of {backton} rad");
}

#[test]
fn gene_replay_effort_below_example_bound() {
    // The replayed-discretisation example: at a fixed point of the IO-map
    // the gene configuration's control effort sits below 1e-3.
    let model = PlantModel::gene();
    let mut plant = Plant::new(model, model.probe_state(), SteadyStateOptions::default());
    let embedding = plant.probe_embedding(0.03, OriginHeuristic::MaxMin).unwrap();
    let coarse = equispaced_basis(9);
    let open = plant
        .run_open_loop_to_steady_state(0.03, &coarse, &embedding)
        .unwrap();
    let config = KnotOptimizationConfig {
        seed: 1,
        ..KnotOptimizationConfig::new(9)
    };
    let knots = cbc_core::knots::optimize_knots(&config, &open.encoded).unwrap();
    let basis = PeriodicBasis::cubic(knots.knots.clone());
    let refit = fit_least_squares(&basis, &open.encoded).unwrap();
    let controller =
        cbc_core::plant::ControllerConfig::new(0.1, refit.curve.clone(), embedding, 0.0, 0);
    let record = plant.run_controlled_to_steady_state(&controller, 0.03).unwrap();
    assert!(record.converged);
    assert!(
        record.rms_control_effort < 1e-3,
        "gene replay effort {}",
        record.rms_control_effort
    );
}

#[test]
fn open_loop_gene_cycle_at_nominal_parameter() {
    // Long open-loop integration settles onto a stable limit cycle.
    let model = PlantModel::gene();
    let mut plant = Plant::new(model, [0.5, 1.5], SteadyStateOptions::default());
    let trajectory = plant.integrate(0.03, None, 2000.0, 0.5).unwrap();
    let tail = &trajectory[trajectory.len() / 2..];
    let (lo, hi) = tail
        .iter()
        .map(|p| p.x)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    assert!(hi - lo > 1.0, "expected a large-amplitude cycle, got ptp {}", hi - lo);
}
