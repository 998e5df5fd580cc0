//! Subcommand implementations: experiment execution and artifact emission.

use crate::config::ExperimentConfig;
use crate::output::{self, RunLog};
use crate::plot;
use anyhow::{anyhow, Context, Result};
use cbc_core::continuation::{run_branch, Branch};
use cbc_core::embedding::OriginHeuristic;
use cbc_core::knots::{optimize_knots, KnotOptimizationConfig};
use cbc_core::oracle::{
    continue_periodic_shooting, equilibrium_branch, noise_robustness_trials,
    seed_orbit_near_hopf, shoot_periodic_orbit, OracleBranch, ShootingContinuationSettings,
    ShootingOrbit,
};
use cbc_core::plant::Plant;
use cbc_core::rng::derive_seed;
use cbc_core::spline::{fit_least_squares, write_spline_record, PeriodicBasis, SampleSet};
use std::path::Path;

fn make_plant(config: &ExperimentConfig) -> Plant {
    Plant::new(
        config.model,
        config.model.probe_state(),
        config.plant_options,
    )
}

/// `run`: one CBC continuation, with artifacts written to `out`.
pub fn run_experiment(
    config: &ExperimentConfig,
    config_text: &str,
    out: &Path,
    verbose: bool,
) -> Result<i32> {
    let mut log = RunLog::new(verbose);
    log.event(
        "run-start",
        &[
            ("model", config.model.name().to_string()),
            ("direction", config.direction.name().to_string()),
            ("seed", config.seed.to_string()),
        ],
    );

    let mut plant = make_plant(config);
    let setup = cbc_core::continuation::ExperimentSetup {
        gain: config.gain,
        heuristic: config.heuristic,
        noise_variance: config.noise_variance,
        noise_seed: derive_seed(config.seed, "measurement-noise"),
    };
    let branch = run_branch(
        &mut plant,
        &setup,
        &config.continuation,
        &config.knots,
        config.direction,
    )
    .map_err(|e| anyhow!("continuation failed: {e}"))?;

    for event in &branch.stepsize_history {
        let mut fields = vec![
            ("step", event.step_index.to_string()),
            ("stepsize", format!("{}", event.stepsize)),
            (
                "outcome",
                if event.accepted { "accepted" } else { "rejected" }.to_string(),
            ),
        ];
        if let Some(ratio) = event.ratio {
            fields.push(("ratio", format!("{ratio:.4}")));
        }
        if let Some(failure) = event.failure {
            fields.push(("failure", failure.to_string()));
        }
        log.event("step", &fields);
    }
    for (index, point) in branch.points.iter().enumerate() {
        log.event(
            "accepted",
            &[
                ("index", index.to_string()),
                ("lambda", format!("{}", point.lambda)),
                ("amplitude", format!("{}", point.amplitude)),
                ("residual", format!("{:.3e}", point.residual_norm)),
                ("windings", point.windings.to_string()),
            ],
        );
    }
    log.event(
        "terminated",
        &[
            ("reason", branch.termination.name().to_string()),
            ("points", branch.points.len().to_string()),
        ],
    );

    output::write_file(&out.join("config.toml"), config_text).context("writing config copy")?;
    output::write_file(&out.join("branch.csv"), &output::branch_csv(&branch))
        .context("writing branch CSV")?;
    for (index, point) in branch.points.iter().enumerate() {
        output::write_file(
            &out.join(format!("solutions/point_{index:03}.txt")),
            &output::solution_dump(point),
        )
        .context("writing solution dump")?;
    }
    let plot_points: Vec<plot::PlotPoint> = branch
        .points
        .iter()
        .map(|p| plot::PlotPoint {
            lambda: p.lambda,
            amplitude: p.amplitude,
        })
        .collect();
    let svg = plot::render_svg(
        &[(
            format!("{} {}", config.model.name(), config.direction.name()),
            plot_points,
        )],
        None,
        &format!("{} model: amplitude vs parameter", config.model.name()),
    );
    output::write_file(&out.join("plot.svg"), &svg).context("writing plot")?;
    output::write_file(&out.join("run.log"), &log.contents()).context("writing run log")?;

    Ok(exit_code_for(&branch))
}

fn exit_code_for(branch: &Branch) -> i32 {
    if branch.termination.is_orderly() {
        0
    } else {
        3
    }
}

fn oracle_seed_orbit(config: &ExperimentConfig, lambda: f64) -> Result<ShootingOrbit> {
    let mut plant = make_plant(config);
    let embedding = plant
        .probe_embedding(lambda, OriginHeuristic::Middle)
        .map_err(|e| anyhow!("open-loop probe failed: {e}"))?;
    // A settled winding pins the fundamental period; seeding the shooting
    // with a rough hint can converge onto a multiple of it.
    let provisional: Vec<f64> = (1..=6).map(|i| i as f64 / 7.0).collect();
    let basis = PeriodicBasis::cubic(cbc_core::spline::KnotVector::periodic(&provisional)?);
    plant
        .run_open_loop_to_steady_state(lambda, &basis, &embedding)
        .map_err(|e| anyhow!("open-loop settling failed: {e}"))?;
    let guess_anchor = plant.state();
    let guess_period = plant.period_estimate();
    shoot_periodic_orbit(&config.model, lambda, guess_anchor, guess_period)
        .map_err(|e| anyhow!("seed shooting failed: {e}"))
}

/// `oracle`: shooting branch over the config's parameter bounds plus Hopf
/// points of the equilibrium branch, written as reference CSVs.
pub fn run_oracle(config: &ExperimentConfig, out: &Path, verbose: bool) -> Result<i32> {
    let mut log = RunLog::new(verbose);
    let bounds = config.continuation.param_bounds;
    let seed_lambda = config.continuation.start_params.0;
    let orbit = oracle_seed_orbit(config, seed_lambda)?;
    log.event(
        "oracle-seed",
        &[
            ("lambda", format!("{}", orbit.lambda)),
            ("period", format!("{:.6}", orbit.period)),
            ("amplitude", format!("{:.6}", orbit.amplitude)),
        ],
    );

    let settings = ShootingContinuationSettings::default();
    let forward = continue_periodic_shooting(&config.model, &orbit, bounds, &settings, true)
        .map_err(|e| anyhow!("forward oracle continuation failed: {e}"))?;
    let backward = continue_periodic_shooting(&config.model, &orbit, bounds, &settings, false)
        .map_err(|e| anyhow!("backward oracle continuation failed: {e}"))?;
    log.event(
        "oracle-branches",
        &[
            ("forward_points", forward.points.len().to_string()),
            ("forward_termination", format!("{:?}", forward.termination)),
            ("backward_points", backward.points.len().to_string()),
            ("backward_termination", format!("{:?}", backward.termination)),
        ],
    );

    // One branch file, walked from the backward tail through the seed to
    // the forward tail. Unstable segments hidden behind tight folds are
    // appended as an extra strand seeded from the subcritical side of a
    // Hopf point when one exists in range.
    let mut merged: Vec<ShootingOrbit> = backward.points.iter().skip(1).rev().cloned().collect();
    merged.extend(forward.points.iter().cloned());

    let guess = config.model.equilibrium_hint();
    let step = (bounds.1 - bounds.0) / 400.0;
    match equilibrium_branch(&config.model, bounds, step, guess) {
        Ok((_, hopf)) => {
            for h in &hopf {
                log.event(
                    "hopf",
                    &[
                        ("lambda", format!("{}", h.lambda)),
                        ("x", format!("{}", h.state[0])),
                        ("y", format!("{}", h.state[1])),
                    ],
                );
            }
            if let Some(h) = hopf.first() {
                let fine = ShootingContinuationSettings {
                    initial_step: 2e-3,
                    max_step: 0.02,
                    ..Default::default()
                };
                let seeded = seed_orbit_near_hopf(&config.model, h, h.lambda - 2e-3)
                    .or_else(|_| seed_orbit_near_hopf(&config.model, h, h.lambda + 2e-3));
                match seeded {
                    Ok(seed) => match continue_periodic_shooting(
                        &config.model,
                        &seed,
                        bounds,
                        &fine,
                        false,
                    ) {
                        Ok(strand) => {
                            log.event(
                                "hopf-strand",
                                &[("points", strand.points.len().to_string())],
                            );
                            merged.extend(strand.points);
                        }
                        Err(e) => log.event("hopf-strand-failed", &[("error", e.to_string())]),
                    },
                    Err(e) => log.event("hopf-seed-failed", &[("error", e.to_string())]),
                }
            }
        }
        Err(e) => log.event("equilibrium-branch-failed", &[("error", e.to_string())]),
    }

    let merged_branch = OracleBranch {
        points: merged,
        termination: forward.termination,
    };
    output::write_file(&out.join("oracle.csv"), &output::oracle_csv(&merged_branch))
        .context("writing oracle CSV")?;

    output::write_file(&out.join("oracle.log"), &log.contents()).context("writing oracle log")?;
    Ok(0)
}

/// `knots`: standalone free-knot fit of a `t x` sample file.
pub fn run_knot_fit(
    samples_path: &Path,
    coefficients: usize,
    restarts: usize,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let text = std::fs::read_to_string(samples_path)
        .with_context(|| format!("reading samples from {}", samples_path.display()))?;
    let mut ts = Vec::new();
    let mut xs = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (Some(t), Some(x)) = (parts.next(), parts.next()) else {
            return Err(anyhow!("line {}: expected `t x`", line_no + 1));
        };
        ts.push(t.parse::<f64>().with_context(|| format!("line {}: bad t", line_no + 1))?);
        xs.push(x.parse::<f64>().with_context(|| format!("line {}: bad x", line_no + 1))?);
    }
    let samples = SampleSet::new(ts, xs).map_err(|e| anyhow!("invalid samples: {e}"))?;
    if coefficients < 4 {
        return Err(anyhow!("need at least 4 coefficients"));
    }
    let config = KnotOptimizationConfig {
        restarts,
        seed: derive_seed(seed, "knots"),
        ..KnotOptimizationConfig::new(coefficients - 1)
    };
    let fit = optimize_knots(&config, &samples).map_err(|e| anyhow!("knot fit failed: {e}"))?;
    let basis = PeriodicBasis::cubic(fit.knots.clone());
    let refit = fit_least_squares(&basis, &samples).map_err(|e| anyhow!("refit failed: {e}"))?;
    output::write_file(
        &out.join("knots.txt"),
        &write_spline_record(&refit.curve, refit.fit_error),
    )
    .context("writing knot dump")?;
    Ok(0)
}

/// `noise-compare`: Fig.-7-style robustness table across discretisation
/// sizes.
pub fn run_noise_compare(
    config: &ExperimentConfig,
    out: &Path,
    n_seeds: usize,
    verbose: bool,
) -> Result<i32> {
    let mut log = RunLog::new(verbose);
    let lambda = config.model.default_lambda();
    let mut csv = String::from(output::NOISE_CSV_HEADER);
    csv.push('\n');
    for parameters in [5usize, 7, 9, 11] {
        let trials = noise_robustness_trials(
            &config.model,
            lambda,
            parameters,
            n_seeds,
            config.seed,
            config.gain,
            config.noise_variance,
            config.heuristic,
        )
        .map_err(|e| anyhow!("noise study failed: {e}"))?;
        let n = trials.len() as f64;
        let spline_mean = trials.iter().map(|t| t.spline_rmse).sum::<f64>() / n;
        let fourier_mean = trials.iter().map(|t| t.fourier_rmse).sum::<f64>() / n;
        let wins = trials
            .iter()
            .filter(|t| t.spline_rmse < t.fourier_rmse)
            .count() as f64
            / n;
        log.event(
            "noise-compare",
            &[
                ("parameters", parameters.to_string()),
                ("spline_rmse", format!("{spline_mean:.6e}")),
                ("fourier_rmse", format!("{fourier_mean:.6e}")),
                ("spline_win_fraction", format!("{wins:.3}")),
            ],
        );
        csv.push_str(&format!(
            "{parameters},{n_seeds},{spline_mean},{fourier_mean},{wins}\n"
        ));
    }
    output::write_file(&out.join("noise.csv"), &csv).context("writing noise CSV")?;
    output::write_file(&out.join("noise.log"), &log.contents()).context("writing noise log")?;
    Ok(0)
}

/// `plot`: overlay branch CSVs and an optional oracle CSV into one SVG.
pub fn run_plot(branches: &[std::path::PathBuf], oracle: Option<&Path>, out: &Path) -> Result<i32> {
    let mut named = Vec::new();
    for path in branches {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let points = plot::branch_points_from_csv(&text).map_err(|e| anyhow!("{e}"))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "branch".to_string());
        named.push((name, points));
    }
    let oracle_points = match oracle {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(plot::oracle_points_from_csv(&text).map_err(|e| anyhow!("{e}"))?)
        }
        None => None,
    };
    let svg = plot::render_svg(
        &named,
        oracle_points.as_deref(),
        "amplitude vs parameter",
    );
    output::write_file(out, &svg).context("writing SVG")?;
    Ok(0)
}
