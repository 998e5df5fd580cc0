//! Experiment configuration: strict TOML with per-model defaults.
//!
//! Unknown keys are fatal. Every knob the case studies pin has a default
//! keyed on the model and run direction, so a minimal config is just a
//! model name and a direction.

use cbc_core::continuation::{
    AdaptiveStepsize, ContinuationConfig, Direction, StepsizeMode,
};
use cbc_core::embedding::OriginHeuristic;
use cbc_core::knots::{AdaptationMode, KnotOptimizationConfig};
use cbc_core::ode::OdeOptions;
use cbc_core::plant::{PlantModel, SteadyStateOptions};
use serde::Deserialize;
use std::fmt;

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    Validation(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Validation(msg) => write!(f, "config validation error: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    direction: Option<String>,
    seed: Option<u64>,
    controller: Option<RawController>,
    discretisation: Option<RawDiscretisation>,
    embedding: Option<RawEmbedding>,
    continuation: Option<RawContinuation>,
    plant: Option<RawPlant>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    gain: Option<f64>,
    noise_variance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscretisation {
    coefficients: Option<usize>,
    restarts: Option<usize>,
    max_iterations: Option<usize>,
    reoptimization_threshold: Option<f64>,
    adaptation: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEmbedding {
    heuristic: Option<String>,
    mu_x: Option<f64>,
    mu_z: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContinuation {
    start_params: Option<[f64; 2]>,
    stepsize_mode: Option<String>,
    initial_stepsize: Option<f64>,
    min_stepsize: Option<f64>,
    max_stepsize: Option<f64>,
    accept_ratio: Option<f64>,
    newton_cap: Option<usize>,
    fd_step: Option<f64>,
    convergence_tol: Option<f64>,
    amplitude_floor: Option<f64>,
    param_bounds: Option<[f64; 2]>,
    max_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    samples_per_winding: Option<usize>,
    winding_cap: Option<usize>,
    convergence_tol: Option<f64>,
    stall_horizon_periods: Option<f64>,
    rtol: Option<f64>,
    atol: Option<f64>,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: PlantModel,
    pub direction: Direction,
    pub seed: u64,
    pub gain: f64,
    pub noise_variance: f64,
    pub heuristic: OriginHeuristic,
    pub knots: KnotOptimizationConfig,
    pub continuation: ContinuationConfig,
    pub plant_options: SteadyStateOptions,
}

fn default_heuristic(model: &PlantModel, direction: Direction) -> OriginHeuristic {
    match (model, direction) {
        (PlantModel::Gene(_), Direction::Forward) => OriginHeuristic::MaxMin,
        (PlantModel::Gene(_), Direction::Backward) => OriginHeuristic::MinMax,
        (PlantModel::Oregonator(_), Direction::Forward) => OriginHeuristic::Middle,
        (PlantModel::Oregonator(_), Direction::Backward) => OriginHeuristic::MaxMax,
    }
}

fn default_coefficients(model: &PlantModel) -> usize {
    match model {
        PlantModel::Gene(_) => 10,
        PlantModel::Oregonator(_) => 7,
    }
}

fn parse_heuristic(name: &str, raw: &RawEmbedding) -> Result<OriginHeuristic, ConfigError> {
    Ok(match name {
        "mean" => OriginHeuristic::Mean,
        "min-max" => OriginHeuristic::MinMax,
        "max-min" => OriginHeuristic::MaxMin,
        "max-max" => OriginHeuristic::MaxMax,
        "min-min" => OriginHeuristic::MinMin,
        "middle" => OriginHeuristic::Middle,
        "manual" => {
            let (Some(mu_x), Some(mu_z)) = (raw.mu_x, raw.mu_z) else {
                return Err(invalid("manual origin requires embedding.mu_x and embedding.mu_z"));
            };
            OriginHeuristic::Manual { mu_x, mu_z }
        }
        other => return Err(invalid(format!("unknown embedding heuristic `{other}`"))),
    })
}

/// Parse and validate a config file's text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;

    let model = match raw.model.as_str() {
        "gene" => PlantModel::gene(),
        "oregonator" => PlantModel::oregonator(),
        other => return Err(invalid(format!("unknown model `{other}`"))),
    };
    let direction = match raw.direction.as_deref().unwrap_or("forward") {
        "forward" => Direction::Forward,
        "backward" => Direction::Backward,
        other => return Err(invalid(format!("unknown direction `{other}`"))),
    };

    let controller = raw.controller.unwrap_or_default();
    let gain = controller.gain.unwrap_or_else(|| model.default_gain());
    if gain < 0.0 {
        return Err(invalid(format!("controller.gain must be nonnegative, got {gain}")));
    }
    let noise_variance = controller.noise_variance.unwrap_or(0.0);
    if noise_variance < 0.0 {
        return Err(invalid(format!(
            "controller.noise_variance must be nonnegative, got {noise_variance}"
        )));
    }

    let disc = raw.discretisation.unwrap_or_default();
    let coefficients = disc.coefficients.unwrap_or_else(|| default_coefficients(&model));
    if coefficients < 4 {
        return Err(invalid(format!(
            "discretisation.coefficients must be at least 4 (3 interior knots), got {coefficients}"
        )));
    }
    let mut knots = KnotOptimizationConfig::new(coefficients - 1);
    if let Some(restarts) = disc.restarts {
        if restarts == 0 {
            return Err(invalid("discretisation.restarts must be at least 1"));
        }
        knots.restarts = restarts;
    }
    if let Some(iters) = disc.max_iterations {
        knots.max_iterations = iters;
    }
    if let Some(threshold) = disc.reoptimization_threshold {
        if threshold <= 1.0 {
            return Err(invalid("discretisation.reoptimization_threshold must exceed 1"));
        }
        knots.reoptimization_threshold = threshold;
    }
    if let Some(mode) = disc.adaptation.as_deref() {
        knots.adaptation = match mode {
            "warm-start" => AdaptationMode::WarmStart,
            "full-multistart" => AdaptationMode::FullMultistart,
            other => return Err(invalid(format!("unknown adaptation mode `{other}`"))),
        };
    }

    let emb = raw.embedding.unwrap_or_default();
    let heuristic = match emb.heuristic.as_deref() {
        Some(name) => parse_heuristic(name, &emb)?,
        None => default_heuristic(&model, direction),
    };

    let mut continuation = ContinuationConfig::for_model(&model, direction);
    let cont = raw.continuation.unwrap_or_default();
    if let Some(start) = cont.start_params {
        continuation.start_params = (start[0], start[1]);
    }
    match cont.stepsize_mode.as_deref() {
        None => {}
        Some("fixed") => {
            let h = cont
                .initial_stepsize
                .unwrap_or_else(|| continuation.initial_stepsize());
            continuation.stepsize = StepsizeMode::Fixed { h };
        }
        Some("adaptive") => {
            let mut params = match continuation.stepsize {
                StepsizeMode::Adaptive(p) => p,
                StepsizeMode::Fixed { h } => AdaptiveStepsize {
                    initial: h,
                    ..Default::default()
                },
            };
            if let Some(v) = cont.initial_stepsize {
                params.initial = v;
            }
            if let Some(v) = cont.min_stepsize {
                params.min = v;
            }
            if let Some(v) = cont.max_stepsize {
                params.max = v;
            }
            if let Some(v) = cont.accept_ratio {
                params.accept_ratio = v;
            }
            continuation.stepsize = StepsizeMode::Adaptive(params);
        }
        Some(other) => return Err(invalid(format!("unknown stepsize mode `{other}`"))),
    }
    if cont.stepsize_mode.is_none() {
        // Tweaks applied to the default mode for this model.
        match (&mut continuation.stepsize, cont.initial_stepsize) {
            (StepsizeMode::Fixed { h }, Some(v)) => *h = v,
            (StepsizeMode::Adaptive(p), Some(v)) => p.initial = v,
            _ => {}
        }
        if let StepsizeMode::Adaptive(p) = &mut continuation.stepsize {
            if let Some(v) = cont.min_stepsize {
                p.min = v;
            }
            if let Some(v) = cont.max_stepsize {
                p.max = v;
            }
            if let Some(v) = cont.accept_ratio {
                p.accept_ratio = v;
            }
        }
    }
    if let Some(v) = cont.newton_cap {
        if v == 0 {
            return Err(invalid("continuation.newton_cap must be at least 1"));
        }
        continuation.newton_cap = v;
    }
    if let Some(v) = cont.fd_step {
        if v <= 0.0 {
            return Err(invalid("continuation.fd_step must be positive"));
        }
        continuation.fd_step = v;
    }
    if let Some(v) = cont.convergence_tol {
        if v <= 0.0 {
            return Err(invalid("continuation.convergence_tol must be positive"));
        }
        continuation.convergence_tol = v;
    }
    if let Some(v) = cont.amplitude_floor {
        if v < 0.0 {
            return Err(invalid("continuation.amplitude_floor must be nonnegative"));
        }
        continuation.amplitude_floor = v;
    }
    if let Some(bounds) = cont.param_bounds {
        if bounds[0] >= bounds[1] {
            return Err(invalid("continuation.param_bounds must be increasing"));
        }
        continuation.param_bounds = (bounds[0], bounds[1]);
    }
    if let Some(v) = cont.max_points {
        continuation.max_points = v;
    }
    if let StepsizeMode::Adaptive(p) = continuation.stepsize {
        if !(p.min < p.initial && p.initial <= p.max) {
            return Err(invalid(format!(
                "stepsize bounds must satisfy min < initial <= max, got {} / {} / {}",
                p.min, p.initial, p.max
            )));
        }
    }

    let plant = raw.plant.unwrap_or_default();
    let mut plant_options = SteadyStateOptions::default();
    if let Some(v) = plant.samples_per_winding {
        if v < 512 {
            return Err(invalid("plant.samples_per_winding must be at least 512"));
        }
        plant_options.samples_per_winding = v;
    }
    if let Some(v) = plant.winding_cap {
        plant_options.winding_cap = v;
    }
    if let Some(v) = plant.convergence_tol {
        if v <= 0.0 {
            return Err(invalid("plant.convergence_tol must be positive"));
        }
        plant_options.convergence_tol = v;
    }
    if let Some(v) = plant.stall_horizon_periods {
        if v <= 1.0 {
            return Err(invalid("plant.stall_horizon_periods must exceed 1"));
        }
        plant_options.stall_horizon_periods = v;
    }
    let mut ode = OdeOptions::default();
    if let Some(v) = plant.rtol {
        ode.rtol = v;
    }
    if let Some(v) = plant.atol {
        ode.atol = v;
    }
    plant_options.ode = ode;

    knots.seed = cbc_core::rng::derive_seed(raw.seed.unwrap_or(0), "knots");

    Ok(ExperimentConfig {
        model,
        direction,
        seed: raw.seed.unwrap_or(0),
        gain,
        noise_variance,
        heuristic,
        knots,
        continuation,
        plant_options,
    })
}
