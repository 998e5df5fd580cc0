//! Simulated experiments: slow-fast ODE models under additive proportional
//! angle-based control.
//!
//! A [`Plant`] owns the evolving state of one "rig": it is never reset
//! between evaluations, so every run warm-starts from wherever the previous
//! one finished, as a physical experiment would. Measurement noise is a
//! sample-and-hold Gaussian process applied to controller observations only;
//! the noise-free state is kept as a separate tap.

use crate::embedding::{AngleEmbedding, EmbeddingError, PlanarSample};
use crate::ode::{Dopri5, OdeError, OdeOptions, State};
use crate::rng::gauss_at;
use crate::spline::{fit_least_squares, PeriodicBasis, SampleSet, SplineCurve, SplineError};
use nalgebra::DVector;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("state too close to the Oregonator pole at x = -q (x = {x})")]
    PoleProximity { x: f64 },
    #[error("non-finite state or derivative")]
    NonFinite,
    #[error("integrator step size underflow at t = {t}")]
    StiffnessFailure { t: f64 },
    #[error("integration step budget exhausted at t = {t}")]
    StepBudgetExhausted { t: f64 },
    #[error("no cycle-to-cycle convergence after {windings} windings (discrepancy {discrepancy:.3e})")]
    NotConverged { windings: usize, discrepancy: f64 },
    #[error("stalled at an equilibrium: angle advanced {advance:.3e} rad over {horizon:.1} time units")]
    StalledAtEquilibrium { advance: f64, horizon: f64 },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Fit(#[from] SplineError),
}

/// Synthetic gene oscillator parameters. The continuation parameter is the
/// degradation rate of the slow protein.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneOscillatorParams {
    pub tau_y: f64,
    pub alpha: f64,
    pub gamma_x: f64,
    /// Hill-term shape parameter; named apart from the embedding scale.
    pub sigma_gene: f64,
    pub gamma_y: f64,
}

impl Default for GeneOscillatorParams {
    fn default() -> Self {
        Self {
            tau_y: 10.0,
            alpha: 11.0,
            gamma_x: 0.105,
            sigma_gene: 2.0,
            gamma_y: 0.03,
        }
    }
}

/// Two-variable reduced Oregonator parameters; stoichiometry factor `f` is
/// the continuation parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OregonatorParams {
    pub epsilon: f64,
    pub q: f64,
    pub f: f64,
}

impl Default for OregonatorParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            q: 0.025,
            f: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantModel {
    Gene(GeneOscillatorParams),
    Oregonator(OregonatorParams),
}

impl PlantModel {
    pub fn gene() -> Self {
        PlantModel::Gene(GeneOscillatorParams::default())
    }

    pub fn oregonator() -> Self {
        PlantModel::Oregonator(OregonatorParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlantModel::Gene(_) => "gene",
            PlantModel::Oregonator(_) => "oregonator",
        }
    }

    /// Model derivative with the control input added to dx/dt only.
    pub fn rhs(&self, state: State, lambda: f64, u: f64) -> Result<State, PlantError> {
        let [x, y] = state;
        if !x.is_finite() || !y.is_finite() || !u.is_finite() {
            return Err(PlantError::NonFinite);
        }
        let out = match self {
            PlantModel::Gene(p) => {
                let x2 = x * x;
                let x4 = x2 * x2;
                let hill = (1.0 + x2 + p.alpha * p.sigma_gene * x4)
                    / ((1.0 + x2 + p.sigma_gene * x4) * (1.0 + y.powi(4)));
                [
                    hill - p.gamma_x * x + u,
                    (hill - lambda * y) / p.tau_y,
                ]
            }
            PlantModel::Oregonator(p) => {
                if (x + p.q).abs() < 1e-9 {
                    return Err(PlantError::PoleProximity { x });
                }
                [
                    (x * (1.0 - x) - lambda * y * (x - p.q) / (x + p.q)) / p.epsilon + u,
                    x - y,
                ]
            }
        };
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(PlantError::NonFinite)
        }
    }

    /// Nominal value of the continuation parameter held in the model.
    pub fn default_lambda(&self) -> f64 {
        match self {
            PlantModel::Gene(p) => p.gamma_y,
            PlantModel::Oregonator(p) => p.f,
        }
    }

    /// Forward-difference step used for continuation Jacobians.
    pub fn fd_step(&self) -> f64 {
        match self {
            PlantModel::Gene(_) => 5e-3,
            PlantModel::Oregonator(_) => 1e-2,
        }
    }

    /// Proportional gain: smallest value found to stabilise the unstable
    /// branch in each case study.
    pub fn default_gain(&self) -> f64 {
        match self {
            PlantModel::Gene(_) => 0.1,
            PlantModel::Oregonator(_) => 4.0,
        }
    }

    /// Rough period scale used to size sampling grids before the first
    /// winding has been measured.
    pub fn period_hint(&self) -> f64 {
        match self {
            PlantModel::Gene(_) => 200.0,
            PlantModel::Oregonator(_) => 5.0,
        }
    }

    /// A state in the basin of the stable cycle, used to start probes.
    pub fn probe_state(&self) -> State {
        match self {
            PlantModel::Gene(_) => [0.5, 1.5],
            PlantModel::Oregonator(_) => [0.3, 0.3],
        }
    }

    /// A guess near the interior equilibrium (the Oregonator also has one
    /// at the origin, which carries no Hopf point).
    pub fn equilibrium_hint(&self) -> State {
        match self {
            PlantModel::Gene(_) => [2.0, 2.0],
            PlantModel::Oregonator(_) => [0.4, 0.4],
        }
    }
}

/// Proportional angle-based controller settings.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub gain: f64,
    pub target: SplineCurve,
    pub embedding: AngleEmbedding,
    /// Variance of the Gaussian measurement noise on controller observations.
    pub noise_variance: f64,
    pub noise_seed: u64,
}

impl ControllerConfig {
    pub fn new(
        gain: f64,
        target: SplineCurve,
        embedding: AngleEmbedding,
        noise_variance: f64,
        noise_seed: u64,
    ) -> Self {
        assert!(gain >= 0.0, "proportional gain must be nonnegative");
        assert!(noise_variance >= 0.0, "noise variance must be nonnegative");
        Self {
            gain,
            target,
            embedding,
            noise_variance,
            noise_seed,
        }
    }
}

/// One steady winding of a controlled (or open-loop) run.
#[derive(Debug, Clone)]
pub struct SteadyCycleRecord {
    /// Recorded measurements over the final winding: what an experiment
    /// would log (noise included when noise is on).
    pub samples: Vec<PlanarSample>,
    /// Noise-free tap of the same winding.
    pub true_samples: Vec<PlanarSample>,
    /// Control input at the sample times.
    pub control: Vec<f64>,
    /// Angle-encoded samples of the final winding.
    pub encoded: SampleSet,
    /// Least-squares projection of the final winding onto the run basis.
    pub response_coefficients: DVector<f64>,
    pub response_fit_error: f64,
    pub rms_control_effort: f64,
    pub max_control_effort: f64,
    pub windings_used: usize,
    /// Cycle-to-cycle coefficient discrepancy at termination (max-norm).
    pub discrepancy: f64,
    pub converged: bool,
    pub basis_id: u64,
    pub embedding_id: u64,
    pub final_state: State,
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyStateOptions {
    pub samples_per_winding: usize,
    pub winding_cap: usize,
    /// Coefficient max-norm between consecutive windings declaring
    /// convergence; sits below the solver tolerance with margin.
    pub convergence_tol: f64,
    /// Stall horizon in units of the current period estimate.
    pub stall_horizon_periods: f64,
    pub ode: OdeOptions,
    /// Open-loop probe lengths in period-estimate units.
    pub probe_transient_periods: f64,
    pub probe_window_periods: f64,
    /// Hold interval of the sample-and-hold measurement noise; defaults to
    /// period_hint/512 when unset.
    pub noise_hold_dt: Option<f64>,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            samples_per_winding: 768,
            winding_cap: 200,
            convergence_tol: 1e-3,
            stall_horizon_periods: 25.0,
            ode: OdeOptions::default(),
            probe_transient_periods: 10.0,
            probe_window_periods: 4.0,
            noise_hold_dt: None,
        }
    }
}

/// A point of a raw trajectory dump.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub phi: f64,
}

/// Angular overshoot recorded past each full winding (radians).
const WINDING_MARGIN: f64 = 0.05;

/// A stateful simulated experiment.
pub struct Plant {
    model: PlantModel,
    state: State,
    time: f64,
    period_estimate: f64,
    noise_dt: f64,
    options: SteadyStateOptions,
}

struct Observation {
    obs_x: f64,
    obs_z: f64,
    u: f64,
    phi: f64,
}

impl Plant {
    pub fn new(model: PlantModel, initial_state: State, options: SteadyStateOptions) -> Self {
        assert!(
            options.samples_per_winding >= 512,
            "dense output must cover at least 512 samples per winding"
        );
        let hint = model.period_hint();
        Self {
            model,
            state: initial_state,
            time: 0.0,
            period_estimate: hint,
            noise_dt: options.noise_hold_dt.unwrap_or(hint / 512.0),
            options,
        }
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn set_state(&mut self, state: State) {
        self.state = state;
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn period_estimate(&self) -> f64 {
        self.period_estimate
    }

    pub fn options(&self) -> &SteadyStateOptions {
        &self.options
    }

    fn observe(
        model: PlantModel,
        controller: Option<&ControllerConfig>,
        noise_dt: f64,
        t: f64,
        y: &State,
    ) -> Result<Observation, PlantError> {
        let _ = model;
        match controller {
            None => Ok(Observation {
                obs_x: y[0],
                obs_z: y[1],
                u: 0.0,
                phi: f64::NAN,
            }),
            Some(ctrl) => {
                // Measurement noise corrupts the error-signal channel: the
                // x measurement compared against the target and logged by
                // the recorder. The phase reconstruction reads the state
                // cleanly; corrupting the embedded angle at these noise
                // levels would destroy the phase information entirely
                // rather than model an experiment's error signal.
                let nx = if ctrl.noise_variance > 0.0 {
                    let k = (t / noise_dt).floor() as i64 as u64;
                    ctrl.noise_variance.sqrt() * gauss_at(ctrl.noise_seed, k, 0)
                } else {
                    0.0
                };
                let obs_x = y[0] + nx;
                let phi = ctrl.embedding.encode_angle(y[0], y[1])?;
                let u = ctrl.gain * (ctrl.target.eval(phi / TAU)? - obs_x);
                Ok(Observation {
                    obs_x,
                    obs_z: y[1],
                    u,
                    phi,
                })
            }
        }
    }

    fn map_ode_error(e: OdeError<PlantError>) -> PlantError {
        match e {
            OdeError::Rhs(inner) => inner,
            OdeError::StepSizeUnderflow { t } => PlantError::StiffnessFailure { t },
            OdeError::MaxStepsExceeded { t, .. } => PlantError::StepBudgetExhausted { t },
            OdeError::NonFinite { .. } => PlantError::NonFinite,
        }
    }

    /// Integrate for a fixed duration, returning a uniformly sampled
    /// trajectory. Open loop when no controller is given; with a zero-gain
    /// controller the trajectory is identical to open loop.
    pub fn integrate(
        &mut self,
        lambda: f64,
        controller: Option<&ControllerConfig>,
        duration: f64,
        dt_sample: f64,
    ) -> Result<Vec<TrajectoryPoint>, PlantError> {
        let model = self.model;
        let noise_dt = self.noise_dt;
        let rhs = |t: f64, y: &State| -> Result<State, PlantError> {
            let obs = Self::observe(model, controller, noise_dt, t, y)?;
            model.rhs(*y, lambda, obs.u)
        };
        let t_end = self.time + duration;
        let mut stepper =
            Dopri5::new(rhs, self.time, self.state, self.options.ode).map_err(Self::map_ode_error)?;
        let mut out = Vec::new();
        let mut next_t = self.time;
        while stepper.t() < t_end {
            let step = stepper.step().map_err(Self::map_ode_error)?;
            while next_t <= step.t1 && next_t <= t_end {
                let y = step.eval(next_t);
                let obs = Self::observe(model, controller, noise_dt, next_t, &y)?;
                out.push(TrajectoryPoint {
                    t: next_t,
                    x: y[0],
                    y: y[1],
                    u: obs.u,
                    phi: obs.phi,
                });
                next_t += dt_sample;
            }
            if step.t1 >= t_end {
                self.state = step.eval(t_end);
                self.time = t_end;
                return Ok(out);
            }
        }
        self.state = stepper.y();
        self.time = stepper.t();
        Ok(out)
    }

    /// Probe the open-loop dynamics at `lambda`: skip a transient, record a
    /// multi-period window and place an embedding on it.
    pub fn probe_embedding(
        &mut self,
        lambda: f64,
        heuristic: crate::embedding::OriginHeuristic,
    ) -> Result<AngleEmbedding, PlantError> {
        let transient = self.options.probe_transient_periods * self.period_estimate;
        let window = self.options.probe_window_periods * self.period_estimate;
        let dt = self.period_estimate / self.options.samples_per_winding as f64;
        self.integrate(lambda, None, transient, transient)?;
        let trajectory = self.integrate(lambda, None, window, dt)?;
        let cycle: Vec<PlanarSample> = trajectory
            .iter()
            .map(|p| PlanarSample {
                t: p.t,
                x: p.x,
                z: p.y,
            })
            .collect();
        Ok(crate::embedding::compute_embedding(&cycle, heuristic)?)
    }

    /// Run until consecutive windings agree in fitted coefficients, then
    /// return the final winding. The controlled system maps the target to a
    /// steady response; this is one evaluation of that IO-map.
    pub fn run_controlled_to_steady_state(
        &mut self,
        controller: &ControllerConfig,
        lambda: f64,
    ) -> Result<SteadyCycleRecord, PlantError> {
        let basis = controller.target.basis().clone();
        self.run_cycles(lambda, &basis, &controller.embedding, Some(controller))
    }

    /// Open-loop counterpart used for initialization: windings and
    /// convergence measured with an externally supplied basis and embedding.
    pub fn run_open_loop_to_steady_state(
        &mut self,
        lambda: f64,
        basis: &PeriodicBasis,
        embedding: &AngleEmbedding,
    ) -> Result<SteadyCycleRecord, PlantError> {
        self.run_cycles(lambda, basis, embedding, None)
    }

    fn run_cycles(
        &mut self,
        lambda: f64,
        basis: &PeriodicBasis,
        embedding: &AngleEmbedding,
        controller: Option<&ControllerConfig>,
    ) -> Result<SteadyCycleRecord, PlantError> {
        let model = self.model;
        let noise_dt = self.noise_dt;
        let spw = self.options.samples_per_winding;
        let rhs = |t: f64, y: &State| -> Result<State, PlantError> {
            let obs = Self::observe(model, controller, noise_dt, t, y)?;
            model.rhs(*y, lambda, obs.u)
        };
        let mut stepper =
            Dopri5::new(rhs, self.time, self.state, self.options.ode).map_err(Self::map_ode_error)?;

        // Winding buffers: recorded/noisy and true samples plus control and
        // the recorded (possibly noisy) angles.
        let mut rec: Vec<PlanarSample> = Vec::with_capacity(spw + 8);
        let mut tru: Vec<PlanarSample> = Vec::with_capacity(spw + 8);
        let mut us: Vec<f64> = Vec::with_capacity(spw + 8);
        let mut phis: Vec<f64> = Vec::with_capacity(spw + 8);

        let mut dt = self.period_estimate / spw as f64;
        let mut next_t = self.time;
        let mut prev_phi: Option<f64> = None;
        let mut psi = 0.0;
        let mut winding_start_psi = 0.0;
        let mut winding_start_time = self.time;
        let mut windings = 0usize;
        let mut prev_coeffs: Option<DVector<f64>> = None;
        let mut last_closed: Option<(SteadyCycleRecord, f64)> = None;
        let mut discrepancy = f64::INFINITY;

        loop {
            let step = stepper.step().map_err(Self::map_ode_error)?;
            while next_t <= step.t1 {
                let y = step.eval(next_t);
                let obs = Self::observe(model, controller, noise_dt, next_t, &y)?;
                // Winding bookkeeping follows the noise-free state: cycle
                // completion is a property of the trajectory, not of the
                // measurement channel. With noise off the two coincide
                // exactly.
                let phi_true = embedding.encode_angle(y[0], y[1])?;
                let phi_data = if obs.phi.is_nan() { phi_true } else { obs.phi };
                if let Some(prev) = prev_phi {
                    let mut delta = phi_true - prev;
                    if delta > std::f64::consts::PI {
                        delta -= TAU;
                    } else if delta < -std::f64::consts::PI {
                        delta += TAU;
                    }
                    psi += delta;
                }
                prev_phi = Some(phi_true);
                rec.push(PlanarSample {
                    t: next_t,
                    x: obs.obs_x,
                    z: obs.obs_z,
                });
                tru.push(PlanarSample {
                    t: next_t,
                    x: y[0],
                    z: y[1],
                });
                us.push(obs.u);
                phis.push(phi_data);

                // Overshoot each winding by a small angular margin so the
                // record spans a full winding under any nearby re-placed
                // origin when it is later re-encoded.
                if (psi - winding_start_psi).abs() >= TAU + WINDING_MARGIN {
                    let duration = next_t - winding_start_time;
                    self.period_estimate = duration.max(1e-9);
                    windings += 1;
                    if rec.len() >= 512 {
                        let encoded = SampleSet::new(
                            phis.iter().map(|p| p / TAU).collect(),
                            rec.iter().map(|s| s.x).collect(),
                        )?;
                        let fit = fit_least_squares(basis, &encoded)?;
                        let coeffs = fit.curve.coefficients().clone();
                        let rms = (us.iter().map(|u| u * u).sum::<f64>() / us.len() as f64).sqrt();
                        let max_u = us.iter().fold(0.0_f64, |m, u| m.max(u.abs()));
                        let record = SteadyCycleRecord {
                            samples: rec.clone(),
                            true_samples: tru.clone(),
                            control: us.clone(),
                            encoded,
                            response_coefficients: coeffs.clone(),
                            response_fit_error: fit.fit_error,
                            rms_control_effort: rms,
                            max_control_effort: max_u,
                            windings_used: windings,
                            discrepancy,
                            converged: false,
                            basis_id: basis.id(),
                            embedding_id: embedding.id(),
                            final_state: y,
                        };
                        if let Some(prev) = &prev_coeffs {
                            let previous = discrepancy;
                            discrepancy = (&coeffs - prev).amax();
                            // Slowly contracting transients shrink a little
                            // every winding while staying far from the
                            // limit cycle; besides the raw drift bound,
                            // extrapolate the remaining distance from the
                            // observed contraction ratio.
                            let ratio = if previous.is_finite() && previous > 0.0 {
                                (discrepancy / previous).clamp(0.0, 0.95)
                            } else {
                                0.5
                            };
                            let projected = discrepancy * ratio / (1.0 - ratio);
                            if discrepancy < self.options.convergence_tol
                                && projected < self.options.convergence_tol
                            {
                                self.state = y;
                                self.time = next_t;
                                let mut record = record;
                                record.discrepancy = discrepancy;
                                record.converged = true;
                                return Ok(record);
                            }
                        }
                        last_closed = Some((record, discrepancy));
                        prev_coeffs = Some(coeffs);
                    } else {
                        // Too coarse for this period; resample the next
                        // winding more finely.
                        prev_coeffs = None;
                    }
                    dt = duration.max(1e-9) / spw as f64;
                    rec.clear();
                    tru.clear();
                    us.clear();
                    phis.clear();
                    winding_start_psi = psi;
                    winding_start_time = next_t;

                    if windings >= self.options.winding_cap {
                        self.state = y;
                        self.time = next_t;
                        return match last_closed {
                            Some((mut record, d)) => {
                                record.discrepancy = d;
                                record.converged = false;
                                Ok(record)
                            }
                            None => Err(PlantError::NotConverged {
                                windings,
                                discrepancy,
                            }),
                        };
                    }
                }
                next_t += dt;
            }

            let horizon = self.options.stall_horizon_periods * self.period_estimate;
            if stepper.t() - winding_start_time > horizon
                && (psi - winding_start_psi).abs() < TAU
            {
                self.state = stepper.y();
                self.time = stepper.t();
                return Err(PlantError::StalledAtEquilibrium {
                    advance: (psi - winding_start_psi).abs(),
                    horizon,
                });
            }
        }
    }
}
