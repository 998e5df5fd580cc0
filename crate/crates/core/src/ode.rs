//! Adaptive explicit Runge-Kutta integration with dense output.
//!
//! Dormand-Prince 5(4), seven stages with first-same-as-last, and the
//! standard quartic interpolant for continuous output. The right-hand side
//! is fallible so model-level guards (pole proximity, non-finite states)
//! propagate out of the stepper.

pub type State = [f64; 2];

#[derive(Debug, thiserror::Error)]
pub enum OdeError<E> {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Rhs(E),
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_initial: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps_per_call: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_initial: 1e-4,
            h_max: f64::INFINITY,
            h_min: 1e-13,
            max_steps_per_call: 50_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Continuous representation of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    rcont: [State; 5],
}

impl DenseStep {
    /// Interpolated state at `t` in `[t0, t1]`.
    pub fn eval(&self, t: f64) -> State {
        let h = self.t1 - self.t0;
        let theta = if h == 0.0 { 0.0 } else { (t - self.t0) / h };
        let theta1 = 1.0 - theta;
        let mut out = [0.0; 2];
        for i in 0..2 {
            out[i] = self.rcont[0][i]
                + theta
                    * (self.rcont[1][i]
                        + theta1
                            * (self.rcont[2][i]
                                + theta * (self.rcont[3][i] + theta1 * self.rcont[4][i])));
        }
        out
    }
}

/// Streaming Dormand-Prince stepper.
pub struct Dopri5<F, E>
where
    F: FnMut(f64, &State) -> Result<State, E>,
{
    rhs: F,
    t: f64,
    y: State,
    k1: State,
    h: f64,
    options: OdeOptions,
    steps_taken: usize,
}

impl<F, Err> Dopri5<F, Err>
where
    F: FnMut(f64, &State) -> Result<State, Err>,
{
    pub fn new(mut rhs: F, t0: f64, y0: State, options: OdeOptions) -> Result<Self, OdeError<Err>> {
        let k1 = rhs(t0, &y0).map_err(OdeError::Rhs)?;
        Ok(Self {
            rhs,
            t: t0,
            y: y0,
            k1,
            h: options.h_initial.min(options.h_max),
            options,
            steps_taken: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> State {
        self.y
    }

    /// Advance by one accepted step and return its dense representation.
    ///
    /// Right-hand-side failures inside a trial step first trigger step
    /// shrinking; if shrinking underflows, the last such failure is reported
    /// rather than a bare underflow.
    pub fn step(&mut self) -> Result<DenseStep, OdeError<Err>> {
        let mut h = self.h.min(self.options.h_max);
        let mut rejected = false;
        let mut last_rhs_error: Option<Err> = None;
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.options.max_steps_per_call {
                return Err(OdeError::MaxStepsExceeded {
                    t: self.t,
                    max_steps: self.options.max_steps_per_call,
                });
            }
            if h < self.options.h_min {
                return Err(match last_rhs_error {
                    Some(e) => OdeError::Rhs(e),
                    None => OdeError::StepSizeUnderflow { t: self.t },
                });
            }

            let mut k = [[0.0; 2]; 7];
            k[0] = self.k1;
            let mut failed_stage = false;
            for stage in 1..7 {
                let mut y_stage = self.y;
                for i in 0..2 {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(stage) {
                        acc += A[stage][j] * kj[i];
                    }
                    y_stage[i] += h * acc;
                }
                if !y_stage.iter().all(|v| v.is_finite()) {
                    failed_stage = true;
                    break;
                }
                match (self.rhs)(self.t + C[stage] * h, &y_stage) {
                    Ok(val) => k[stage] = val,
                    Err(e) => {
                        last_rhs_error = Some(e);
                        failed_stage = true;
                        break;
                    }
                }
            }
            if failed_stage {
                h *= 0.25;
                rejected = true;
                continue;
            }

            // Fifth-order solution (b row equals the last A row, FSAL).
            let mut y_new = self.y;
            for i in 0..2 {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(6) {
                    acc += A[6][j] * kj[i];
                }
                y_new[i] += h * acc;
            }
            if !y_new.iter().all(|v| v.is_finite()) {
                h *= 0.25;
                rejected = true;
                continue;
            }
            let k7 = match (self.rhs)(self.t + h, &y_new) {
                Ok(val) => val,
                Err(e) => {
                    last_rhs_error = Some(e);
                    h *= 0.25;
                    rejected = true;
                    continue;
                }
            };
            k[6] = k7;

            let mut err_sq = 0.0;
            for i in 0..2 {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                e *= h;
                let scale = self.options.atol
                    + self.options.rtol * self.y[i].abs().max(y_new[i].abs());
                err_sq += (e / scale).powi(2);
            }
            let err = (err_sq / 2.0).sqrt();

            if err <= 1.0 {
                let dense = self.dense_from(h, &k, &y_new);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, if rejected { 1.0 } else { 5.0 })
                };
                self.t += h;
                self.y = y_new;
                self.k1 = k7;
                self.h = (h * factor).min(self.options.h_max);
                return Ok(dense);
            }
            let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= factor;
            rejected = true;
        }
    }

    fn dense_from(&self, h: f64, k: &[[f64; 2]; 7], y_new: &State) -> DenseStep {
        let mut rcont = [[0.0; 2]; 5];
        for i in 0..2 {
            let ydiff = y_new[i] - self.y[i];
            let bspl = h * k[0][i] - ydiff;
            rcont[0][i] = self.y[i];
            rcont[1][i] = ydiff;
            rcont[2][i] = bspl;
            rcont[3][i] = ydiff - h * k[6][i] - bspl;
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += D[j] * kj[i];
            }
            rcont[4][i] = h * acc;
        }
        DenseStep {
            t0: self.t,
            t1: self.t + h,
            rcont,
        }
    }
}

/// Integrate to `t_end`, returning the final state.
pub fn integrate_to<F, Err>(
    rhs: F,
    t0: f64,
    y0: State,
    t_end: f64,
    options: OdeOptions,
) -> Result<State, OdeError<Err>>
where
    F: FnMut(f64, &State) -> Result<State, Err>,
{
    let mut stepper = Dopri5::new(rhs, t0, y0, options)?;
    while stepper.t() < t_end {
        let remaining = t_end - stepper.t();
        if stepper.h > remaining {
            stepper.h = remaining;
        }
        let step = stepper.step()?;
        if step.t1 >= t_end {
            return Ok(step.eval(t_end));
        }
    }
    Ok(stepper.y())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::convert::Infallible;

    fn harmonic(_t: f64, y: &State) -> Result<State, Infallible> {
        Ok([y[1], -y[0]])
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let y_end: State = integrate_to(harmonic, 0.0, [1.0, 0.0], 10.0, OdeOptions::default())
            .unwrap();
        assert_abs_diff_eq!(y_end[0], 10.0_f64.cos(), epsilon = 1e-7);
        assert_abs_diff_eq!(y_end[1], -(10.0_f64.sin()), epsilon = 1e-7);
    }

    #[test]
    fn dense_output_matches_solution_inside_steps() {
        let mut stepper =
            Dopri5::new(harmonic, 0.0, [1.0, 0.0], OdeOptions::default()).unwrap();
        for _ in 0..200 {
            let step = stepper.step().unwrap();
            for frac in [0.25, 0.5, 0.75] {
                let t = step.t0 + frac * (step.t1 - step.t0);
                let y = step.eval(t);
                assert_abs_diff_eq!(y[0], t.cos(), epsilon = 1e-7);
                assert_abs_diff_eq!(y[1], -t.sin(), epsilon = 1e-7);
            }
            if stepper.t() > 20.0 {
                break;
            }
        }
    }

    #[test]
    fn tolerances_control_error() {
        let loose = OdeOptions {
            rtol: 1e-4,
            atol: 1e-6,
            ..Default::default()
        };
        let tight = OdeOptions {
            rtol: 1e-11,
            atol: 1e-13,
            ..Default::default()
        };
        let e = |opts: OdeOptions| -> f64 {
            let y: State = integrate_to(harmonic, 0.0, [1.0, 0.0], 50.0, opts).unwrap();
            (y[0] - 50.0_f64.cos()).abs()
        };
        assert!(e(tight) < e(loose));
    }

    #[test]
    fn rhs_error_propagates() {
        #[derive(Debug, PartialEq)]
        struct Pole;
        let rhs = |_t: f64, _y: &State| -> Result<State, Pole> { Err(Pole) };
        let result = Dopri5::new(rhs, 0.0, [0.0, 0.0], OdeOptions::default());
        assert!(matches!(result, Err(OdeError::Rhs(Pole))));
    }

    #[test]
    fn stiff_decay_is_stable() {
        // Moderately stiff linear problem; adaptivity must cope.
        let rhs = |_t: f64, y: &State| -> Result<State, Infallible> {
            Ok([-200.0 * y[0], -0.5 * y[1]])
        };
        let y: State = integrate_to(rhs, 0.0, [1.0, 1.0], 1.0, OdeOptions::default()).unwrap();
        assert_abs_diff_eq!(y[0], (-200.0_f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(y[1], (-0.5_f64).exp(), epsilon = 1e-8);
    }
}
