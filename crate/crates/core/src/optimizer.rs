//! Adam stepper.
//!
//! The update is available in two forms that are algebraically identical
//! when bias correction is off:
//!
//! * preconditioned: `x ← x − γ m / (√v + ε)`
//! * sign-like: `x ← x − γ u ∘ Sign(m)` with `u = |m| / (√v + ε)`
//!
//! `Sign(0) = 0`, so both forms leave a coordinate with `m = 0` in place.
//! Because `|m| · Sign(m)` reproduces `m` exactly in IEEE arithmetic, the
//! two forms produce bit-identical trajectories.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::rng::RngStream;
use crate::schedules;
use crate::vector::{check_finite, l2, same_len, Vector};

pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BiasCorrection {
    Off,
    /// `m̂ / (√v̂ + ε)`, the usual convention.
    Standard,
    /// `m̂ / (√v + ε)`: corrected numerator over the raw second moment.
    RawDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LrSchedule {
    Constant(f64),
    /// `γ = c2 / (T^{3/4} √d)`, constant over the run.
    Horizon {
        c2: f64,
        horizon: u64,
        dim: usize,
    },
}

impl LrSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            LrSchedule::Constant(g) => g,
            LrSchedule::Horizon { c2, horizon, dim } => schedules::schedule_lr(c2, horizon, dim, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Form {
    Preconditioned,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: BiasCorrection,
    pub lr: LrSchedule,
    /// Demand `β1² < β2` and no bias correction.
    pub theory_mode: bool,
}

impl AdamParams {
    /// Constant learning rate, no bias correction, theory mode off.
    pub fn constant(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamParams {
            beta1,
            beta2,
            epsilon,
            bias_correction: BiasCorrection::Off,
            lr: LrSchedule::Constant(lr),
            theory_mode: false,
        }
    }

    pub fn with_bias_correction(mut self, bc: BiasCorrection) -> Self {
        self.bias_correction = bc;
        self
    }

    pub fn theory(mut self) -> Self {
        self.theory_mode = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(alloc::format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be positive and finite"));
        }
        let lr0 = self.lr.at(0);
        if !(lr0 >= 0.0 && lr0.is_finite()) {
            return Err(Error::config("learning rate must be nonnegative and finite"));
        }
        if self.theory_mode {
            if self.beta1 * self.beta1 >= self.beta2 {
                return Err(Error::config("theory mode requires beta1^2 < beta2"));
            }
            if self.bias_correction != BiasCorrection::Off {
                return Err(Error::config("theory mode requires bias correction off"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(d: usize) -> Self {
        AdamState { m: vec![0.0; d], v: vec![0.0; d], t: 0 }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Number of completed steps.
    pub fn t(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Norms of the gradient handed to the step.
    pub grad_l1: f64,
    pub grad_l2: f64,
    /// `|m| / (√v + ε)` after the moment update.
    pub u: Vector,
    pub update_l2: f64,
    /// Filled by [`run`]; a bare step does not know the objective.
    pub loss: Option<f64>,
}

/// One step of `x − γ m̂ / (√v̂ + ε)`.
pub fn step_preconditioned(
    state: &mut AdamState,
    params: &AdamParams,
    grad: &Vector,
    x: &Vector,
) -> Result<(Vector, StepRecord)> {
    step_with(state, params, grad, x, Form::Preconditioned)
}

/// One step of `x − γ u ∘ Sign(m)`. Bias correction must be off.
pub fn step_sign_form(
    state: &mut AdamState,
    params: &AdamParams,
    grad: &Vector,
    x: &Vector,
) -> Result<(Vector, StepRecord)> {
    step_with(state, params, grad, x, Form::Sign)
}

pub fn step_with(
    state: &mut AdamState,
    params: &AdamParams,
    grad: &Vector,
    x: &Vector,
    form: Form,
) -> Result<(Vector, StepRecord)> {
    params.validate()?;
    check_form(params, form)?;
    let mut next = x.as_slice().to_vec();
    let mut u = vec![0.0; x.len()];
    let update_l2 = advance(state, params, grad.as_slice(), &mut next, form, &mut u)?;
    let record = StepRecord {
        grad_l1: grad.iter().map(|g| g.abs()).sum(),
        grad_l2: l2(grad.as_slice()),
        u: Vector::from_vec(u)?,
        update_l2,
        loss: None,
    };
    Ok((Vector::from_vec(next)?, record))
}

fn check_form(params: &AdamParams, form: Form) -> Result<()> {
    if form == Form::Sign && params.bias_correction != BiasCorrection::Off {
        return Err(Error::config("the sign form is defined without bias correction"));
    }
    Ok(())
}

/// In-place step. Writes `u` and returns `‖x_next − x‖₂`.
pub(crate) fn advance(
    state: &mut AdamState,
    params: &AdamParams,
    g: &[f64],
    x: &mut [f64],
    form: Form,
    u: &mut [f64],
) -> Result<f64> {
    let d = state.dim();
    same_len(d, g.len())?;
    same_len(d, x.len())?;
    same_len(d, u.len())?;
    check_finite(g)?;

    let lr = params.lr.at(state.t);
    state.t += 1;
    let (b1, b2, eps) = (params.beta1, params.beta2, params.epsilon);
    let bc1 = 1.0 - libm::pow(b1, state.t as f64);
    let bc2 = 1.0 - libm::pow(b2, state.t as f64);

    let mut upd_sq = 0.0;
    for j in 0..d {
        let m = b1 * state.m[j] + (1.0 - b1) * g[j];
        let v = b2 * state.v[j] + (1.0 - b2) * g[j] * g[j];
        state.m[j] = m;
        state.v[j] = v;
        let den = libm::sqrt(v) + eps;
        u[j] = m.abs() / den;
        let step = match form {
            Form::Sign => u[j] * sign(m),
            Form::Preconditioned => match params.bias_correction {
                BiasCorrection::Off => m / den,
                BiasCorrection::Standard => (m / bc1) / (libm::sqrt(v / bc2) + eps),
                BiasCorrection::RawDenominator => (m / bc1) / den,
            },
        };
        let delta = lr * step;
        x[j] -= delta;
        upd_sq += delta * delta;
    }
    check_finite(x)?;
    Ok(libm::sqrt(upd_sq))
}

fn sign(m: f64) -> f64 {
    if m > 0.0 {
        1.0
    } else if m < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub form: Form,
    /// Abort once the loss or ‖x‖₂ exceeds this.
    pub divergence_cap: f64,
    /// Keep the full `u` vector every `k` steps (step 0 included).
    pub dump_every: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { form: Form::Preconditioned, divergence_cap: DEFAULT_DIVERGENCE_CAP, dump_every: None }
    }
}

/// Per-step summary. Gradient norms are of the exact gradient at `x_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TrajectoryRow {
    pub step: u64,
    pub loss: f64,
    pub grad_l1: f64,
    pub grad_l2: f64,
    pub update_l2: f64,
    pub u_min: f64,
    pub u_mean: f64,
    pub u_max: f64,
    /// `‖u_t ∘ ∇F(x_t)‖₁`
    pub u_grad_l1: f64,
    /// ℓ2 norm of the stochastic gradient the step consumed.
    pub noisy_grad_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UDump {
    pub step: u64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub u_dumps: Vec<UDump>,
    pub final_x: Vector,
    pub final_state: AdamState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(1/T) Σ_t ‖∇F(x_t)‖₂`
    pub fn mean_grad_l2(&self) -> f64 {
        mean_of(self.rows.iter().map(|r| r.grad_l2))
    }

    pub fn mean_grad_l2_sq(&self) -> f64 {
        mean_of(self.rows.iter().map(|r| r.grad_l2 * r.grad_l2))
    }

    pub fn mean_u_grad_l1(&self) -> f64 {
        mean_of(self.rows.iter().map(|r| r.u_grad_l1))
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.grad_l2).collect()
    }
}

fn mean_of(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = crate::stats::CompensatedSum::default();
    let mut n = 0usize;
    for x in it {
        s.add(x);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s.value() / n as f64
    }
}

/// Runs `horizon` steps from the problem's canonical start.
///
/// Each step queries the exact gradient (recorded) and one stochastic
/// gradient from the problem's oracle (consumed by the step).
pub fn run(
    problem: &Problem,
    params: &AdamParams,
    horizon: u64,
    rng: &mut RngStream,
    opts: &RunOptions,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::invalid("run needs T >= 1"));
    }
    params.validate()?;
    check_form(params, opts.form)?;
    let d = problem.dim();
    let mut x = problem.x0().as_slice().to_vec();
    let mut state = AdamState::new(d);
    let mut grad = vec![0.0; d];
    let mut noisy = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut rows = Vec::with_capacity(horizon as usize);
    let mut u_dumps = Vec::new();

    for t in 0..horizon {
        let loss = problem.value(&x);
        guard(t, loss, &x, opts.divergence_cap)?;
        problem.grad_into(&x, &mut grad);
        problem.noisy_from_grad(&grad, rng, &mut noisy);
        let update_l2 = advance(&mut state, params, &noisy, &mut x, opts.form, &mut u).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence { step: t as usize, value: f64::INFINITY },
            e => e,
        })?;

        let (mut umin, mut umax, mut usum, mut ug) = (f64::INFINITY, 0.0f64, 0.0, 0.0);
        for j in 0..d {
            umin = umin.min(u[j]);
            umax = umax.max(u[j]);
            usum += u[j];
            ug += (u[j] * grad[j]).abs();
        }
        rows.push(TrajectoryRow {
            step: t,
            loss,
            grad_l1: grad.iter().map(|g| g.abs()).sum(),
            grad_l2: l2(&grad),
            update_l2,
            u_min: umin,
            u_mean: usum / d as f64,
            u_max: umax,
            u_grad_l1: ug,
            noisy_grad_l2: l2(&noisy),
        });
        if let Some(k) = opts.dump_every {
            if k > 0 && t % k as u64 == 0 {
                u_dumps.push(UDump { step: t, u: u.clone() });
            }
        }
    }
    let loss = problem.value(&x);
    guard(horizon, loss, &x, opts.divergence_cap)?;
    Ok(Trajectory { rows, u_dumps, final_x: Vector::from_vec(x)?, final_state: state })
}

fn guard(step: u64, loss: f64, x: &[f64], cap: f64) -> Result<()> {
    let xn = l2(x);
    let worst = if loss.is_finite() { loss.abs().max(xn) } else { f64::INFINITY };
    if !worst.is_finite() || worst > cap {
        return Err(Error::Divergence { step: step as usize, value: worst });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemKind, ProblemSpec};

    fn one(v: f64) -> Vector {
        Vector::from_vec(vec![v]).unwrap()
    }

    #[test]
    fn first_step_without_correction() {
        let p = AdamParams::constant(0.001, 0.9, 0.999, 1e-8);
        let mut s = AdamState::new(1);
        let (x, rec) = step_preconditioned(&mut s, &p, &one(1.0), &one(0.0)).unwrap();
        assert!((s.m()[0] - 0.1).abs() < 1e-15);
        assert!((s.v()[0] - 0.001).abs() < 1e-15);
        let expect = -0.001 * 0.1 / (libm::sqrt(0.001) + 1e-8);
        assert!((x[0] - expect).abs() < 1e-15);
        assert!((x[0] + 0.0031623).abs() < 1e-7);
        assert_eq!(s.t(), 1);
        assert_eq!(rec.grad_l2, 1.0);
    }

    #[test]
    fn first_step_with_correction() {
        let p = AdamParams::constant(0.001, 0.9, 0.999, 1e-8).with_bias_correction(BiasCorrection::Standard);
        let mut s = AdamState::new(1);
        let (x, _) = step_preconditioned(&mut s, &p, &one(1.0), &one(0.0)).unwrap();
        assert!((x[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn raw_denominator_variant() {
        let p = AdamParams::constant(0.001, 0.9, 0.999, 1e-8).with_bias_correction(BiasCorrection::RawDenominator);
        let mut s = AdamState::new(1);
        let (x, _) = step_preconditioned(&mut s, &p, &one(1.0), &one(0.0)).unwrap();
        let expect = -0.001 * 1.0 / (libm::sqrt(0.001) + 1e-8);
        assert!((x[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_never_moves() {
        let p = AdamParams::constant(0.1, 0.9, 0.999, 1e-8);
        let mut s = AdamState::new(3);
        let mut x = Vector::from_vec(vec![1.0, -2.0, 3.0]).unwrap();
        let x0 = x.clone();
        for _ in 0..50 {
            x = step_sign_form(&mut s, &p, &Vector::zeros(3), &x).unwrap().0;
        }
        assert_eq!(x, x0);
    }

    #[test]
    fn sign_form_rejects_bias_correction() {
        let p = AdamParams::constant(0.1, 0.9, 0.999, 1e-8).with_bias_correction(BiasCorrection::Standard);
        let r = step_sign_form(&mut AdamState::new(1), &p, &one(1.0), &one(0.0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn nan_gradient_names_coordinate() {
        let p = AdamParams::constant(0.1, 0.9, 0.999, 1e-8);
        let mut s = AdamState::new(3);
        let g = [0.0, f64::NAN, 1.0];
        let mut x = [0.0; 3];
        let mut u = [0.0; 3];
        let r = advance(&mut s, &p, &g, &mut x, Form::Preconditioned, &mut u);
        assert_eq!(r, Err(Error::NonFinite { index: 1 }));
    }

    #[test]
    fn theory_mode_constraints() {
        assert!(AdamParams::constant(0.1, 0.99, 0.9, 1e-8).theory().validate().is_err());
        assert!(AdamParams::constant(0.1, 0.9, 0.9, 1e-8).theory().validate().is_ok());
        assert!(AdamParams::constant(0.1, 0.9, 0.99, 1e-8)
            .with_bias_correction(BiasCorrection::Standard)
            .theory()
            .validate()
            .is_err());
        assert!(AdamParams::constant(0.1, 1.0, 0.9, 1e-8).validate().is_err());
        assert!(AdamParams::constant(0.1, 0.5, 0.9, 0.0).validate().is_err());
    }

    #[test]
    fn zero_betas_give_sign_descent() {
        let p = AdamParams::constant(0.5, 0.0, 0.0, 1e-300);
        let mut s = AdamState::new(3);
        let g = Vector::from_vec(vec![3.0, -0.2, 1e-5]).unwrap();
        let (x, rec) = step_sign_form(&mut s, &p, &g, &Vector::zeros(3)).unwrap();
        assert_eq!(x.as_slice(), &[-0.5, 0.5, -0.5]);
        assert!(rec.u.iter().all(|&u| (u - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_gradient_drives_v_up_monotonically() {
        let p = AdamParams::constant(0.0, 0.9, 0.99, 1e-8);
        let mut s = AdamState::new(1);
        let mut prev = 0.0;
        for _ in 0..2000 {
            step_preconditioned(&mut s, &p, &one(-2.0), &one(0.0)).unwrap();
            assert!(s.v()[0] >= prev && s.v()[0] <= 4.0);
            prev = s.v()[0];
        }
        assert!((prev - 4.0).abs() < 1e-8);
    }

    fn quadratic(sigma0: f64) -> Problem {
        let mut spec = ProblemSpec::new(ProblemKind::Quadratic, 4);
        spec.sigma0 = sigma0;
        make_problem(&spec).unwrap()
    }

    #[test]
    fn one_step_run_matches_single_step() {
        let prob = quadratic(0.0);
        let p = AdamParams::constant(0.001, 0.9, 0.999, 1e-8);
        let tr = run(&prob, &p, 1, &mut RngStream::new(0, 0), &RunOptions::default()).unwrap();
        let g = prob.grad(prob.x0());
        let (x1, rec) = step_preconditioned(&mut AdamState::new(4), &p, &g, prob.x0()).unwrap();
        assert_eq!(tr.final_x, x1);
        assert_eq!(tr.rows[0].update_l2, rec.update_l2);
        assert_eq!(tr.rows[0].loss, prob.value(prob.x0().as_slice()));
    }

    #[test]
    fn noiseless_quadratic_loss_nonincreasing_after_burn_in() {
        let prob = quadratic(0.0);
        let p = AdamParams::constant(0.001, 0.9, 0.999, 1e-8);
        let tr = run(&prob, &p, 100, &mut RngStream::new(0, 0), &RunOptions::default()).unwrap();
        let first_violation = tr.rows.windows(2).rposition(|w| w[1].loss > w[0].loss);
        assert!(first_violation.map_or(true, |i| i < 10), "{first_violation:?}");
    }

    #[test]
    fn forms_give_identical_runs() {
        let prob = quadratic(1.0);
        let p = AdamParams::constant(0.01, 0.9, 0.99, 1e-8);
        let a = run(&prob, &p, 200, &mut RngStream::new(5, 1), &RunOptions::default()).unwrap();
        let opts = RunOptions { form: Form::Sign, ..RunOptions::default() };
        let b = run(&prob, &p, 200, &mut RngStream::new(5, 1), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_names_step() {
        let prob = quadratic(0.0);
        let p = AdamParams::constant(10.0, 0.0, 0.0, 1e-8);
        let opts = RunOptions { divergence_cap: 100.0, ..RunOptions::default() };
        let err = run(&prob, &p, 100, &mut RngStream::new(0, 0), &opts).unwrap_err();
        assert!(matches!(err, Error::Divergence { step, .. } if step > 0 && step < 100));
    }

    #[test]
    fn dumps_every_k() {
        let prob = quadratic(1.0);
        let p = AdamParams::constant(0.01, 0.9, 0.99, 1e-8);
        let opts = RunOptions { dump_every: Some(10), ..RunOptions::default() };
        let tr = run(&prob, &p, 35, &mut RngStream::new(0, 0), &opts).unwrap();
        let steps: Vec<u64> = tr.u_dumps.iter().map(|d| d.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 30]);
    }
}
