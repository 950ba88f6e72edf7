//! Checkers for the trajectory conditions, numerical verifiers for the
//! supporting lemmas, and fitters for smoothness and noise constants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StudentT};

use crate::error::{Error, Result};
use crate::optimizer::AdamState;
use crate::problems::{Certificate, NoiseModel, Problem, SmoothnessModel};
use crate::rng::RngStream;
use crate::schedules::{compute_r, lemma4_point, lemma4_value};
use crate::stats::{ks_two_sample, CompensatedSum, SampleStats};
use crate::vector::{check_finite, l2};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Condition1 {
    pub c0: f64,
    pub sqrt_t: f64,
    /// Every norm was zero; `c0` is reported as 1.
    pub degenerate: bool,
}

impl Condition1 {
    pub fn passes(&self, ratio: f64) -> bool {
        self.c0 <= ratio * self.sqrt_t
    }
}

/// `C0 = √(mean ‖∇F‖²) / mean ‖∇F‖`.
pub fn check_condition1(grad_norms: &[f64]) -> Result<Condition1> {
    if grad_norms.is_empty() {
        return Err(Error::invalid("check_condition1 needs at least one norm"));
    }
    check_finite(grad_norms)?;
    let s = SampleStats::from_slice(grad_norms);
    let sqrt_t = libm::sqrt(grad_norms.len() as f64);
    Ok(condition1_from_moments(s.mean(), s.second_moment(), sqrt_t))
}

/// Same ratio from a pooled mean and mean square.
pub fn condition1_from_moments(mean: f64, mean_sq: f64, sqrt_t: f64) -> Condition1 {
    if mean <= 0.0 {
        return Condition1 { c0: 1.0, sqrt_t, degenerate: true };
    }
    // power-mean inequality; clamp rounding below 1
    let c0 = (libm::sqrt(mean_sq) / mean).max(1.0);
    Condition1 { c0, sqrt_t, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Condition3 {
    pub c1: f64,
    pub degenerate: bool,
}

/// `C1 = √d ‖g‖₂ / ‖g‖₁`.
pub fn check_condition3(grad: &[f64]) -> Result<Condition3> {
    if grad.is_empty() {
        return Err(Error::invalid("check_condition3 needs a nonempty gradient"));
    }
    check_finite(grad)?;
    let l1: f64 = grad.iter().map(|g| g.abs()).sum();
    Ok(condition3_from_norms(l1, l2(grad), grad.len()))
}

pub fn condition3_from_norms(l1: f64, l2: f64, d: usize) -> Condition3 {
    if l1 == 0.0 {
        return Condition3 { c1: 1.0, degenerate: true };
    }
    let sd = libm::sqrt(d as f64);
    Condition3 { c1: (sd * l2 / l1).clamp(1.0, sd), degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Proposition21 {
    pub alpha: f64,
    pub horizon: u64,
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

/// For norms `t^{−α}`, `t = 1..T`: `mean(t^{−2α}) / mean(t^{−α})² ≤ 2(1−α)²/(1−2α)`.
pub fn check_proposition21(alpha: f64, horizon: u64) -> Result<Proposition21> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(Error::OutOfScope(format!("alpha = {alpha} must lie in [0, 0.5)")));
    }
    if horizon < 8 {
        return Err(Error::OutOfScope(format!("T = {horizon} must be at least 8")));
    }
    let mut s1 = CompensatedSum::default();
    let mut s2 = CompensatedSum::default();
    for t in 1..=horizon {
        let a = libm::pow(t as f64, -alpha);
        s1.add(a);
        s2.add(a * a);
    }
    let n = horizon as f64;
    let m1 = s1.value() / n;
    let ratio = (s2.value() / n) / (m1 * m1);
    let bound = 2.0 * (1.0 - alpha) * (1.0 - alpha) / (1.0 - 2.0 * alpha);
    Ok(Proposition21 { alpha, horizon, ratio, bound, holds: ratio <= bound })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Condition2 {
    pub mean_p: f64,
    pub reject_rate: f64,
    pub trials: usize,
    pub group_size: usize,
}

impl Condition2 {
    pub fn passes(&self, min_mean_p: f64) -> bool {
        self.mean_p >= min_mean_p
    }
}

/// Repeated two-sample KS tests between disjoint random groups drawn from `pool`.
///
/// Trial `i` draws from `rng.fork(i)`, so trials can run in any order.
pub fn check_condition2(pool: &[f64], group_size: usize, trials: usize, rng: &RngStream) -> Result<Condition2> {
    if group_size == 0 || trials == 0 {
        return Err(Error::invalid("group_size and trials must be positive"));
    }
    if pool.len() < 2 * group_size {
        return Err(Error::invalid(format!(
            "pool of {} coordinates cannot supply two groups of {group_size}",
            pool.len()
        )));
    }
    check_finite(pool)?;
    let mut p_sum = CompensatedSum::default();
    let mut rejects = 0usize;
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut a = vec![0.0; group_size];
    let mut b = vec![0.0; group_size];
    for trial in 0..trials {
        let mut r = rng.fork(trial as u64);
        let p = ks_trial(pool, &mut idx, &mut a, &mut b, &mut r)?;
        p_sum.add(p);
        if p < 0.05 {
            rejects += 1;
        }
    }
    Ok(Condition2 {
        mean_p: p_sum.value() / trials as f64,
        reject_rate: rejects as f64 / trials as f64,
        trials,
        group_size,
    })
}

/// One KS trial; `idx` must hold a permutation of `0..pool.len()`.
pub fn ks_trial(pool: &[f64], idx: &mut [usize], a: &mut [f64], b: &mut [f64], rng: &mut RngStream) -> Result<f64> {
    let g = a.len();
    let n = idx.len();
    // partial Fisher–Yates for 2g distinct indices
    for i in 0..2 * g {
        let j = i + rng.index(n - i);
        idx.swap(i, j);
    }
    for k in 0..g {
        a[k] = pool[idx[k]];
        b[k] = pool[idx[g + k]];
    }
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(ks_two_sample(a, b)?.p_value)
}

/// Condition verdicts at configurable thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Thresholds {
    /// Condition 1 passes when `C0 ≤ c0_ratio · √T`.
    pub c0_ratio: f64,
    /// Condition 2 passes when the mean KS p-value is at least this.
    pub ks_min_mean_p: f64,
    /// Condition 3 passes when every `C1` is at most this.
    pub c1_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { c0_ratio: 0.1, ks_min_mean_p: 0.1, c1_max: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Verdicts {
    pub condition1: bool,
    pub condition2: Option<bool>,
    pub condition3: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConditionReport {
    pub c0: f64,
    pub sqrt_t: f64,
    pub c1_series: Vec<f64>,
    pub c1_max: f64,
    pub ks_mean_p: Option<f64>,
    pub ks_trials: usize,
    pub verdicts: Verdicts,
}

impl ConditionReport {
    pub fn new(c1: &Condition1, c1_series: Vec<f64>, c2: Option<&Condition2>, th: &Thresholds) -> Self {
        let c1_max = c1_series.iter().fold(1.0f64, |m, v| m.max(*v));
        ConditionReport {
            c0: c1.c0,
            sqrt_t: c1.sqrt_t,
            c1_max,
            c1_series,
            ks_mean_p: c2.map(|c| c.mean_p),
            ks_trials: c2.map_or(0, |c| c.trials),
            verdicts: Verdicts {
                condition1: c1.passes(th.c0_ratio),
                condition2: c2.map(|c| c.passes(th.ks_min_mean_p)),
                condition3: c1_max <= th.c1_max,
            },
        }
    }

    pub fn all_pass(&self) -> bool {
        let v = &self.verdicts;
        v.condition1 && v.condition3 && v.condition2.unwrap_or(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Lemma3Check {
    /// Monte-Carlo `E|Sign(Z) − Sign(C)|`.
    pub lhs: f64,
    /// Monte-Carlo `2 E|Z − C| / |C|`.
    pub rhs: f64,
    /// Standard error of the mean of `lhs − rhs` per draw.
    pub std_err: f64,
    pub holds: bool,
}

/// `E|Sign(Z) − Sign(C)| ≤ 2E|Z − C|/|C|`, estimated from `n ≥ 10⁴` draws.
pub fn check_lemma3<F>(mut sample: F, c: f64, n: usize, rng: &mut RngStream) -> Result<Lemma3Check>
where
    F: FnMut(&mut RngStream) -> f64,
{
    if c == 0.0 || !c.is_finite() {
        return Err(Error::OutOfScope(String::from("the sign-flip bound needs C != 0")));
    }
    if n < 10_000 {
        return Err(Error::invalid("check_lemma3 needs n >= 10^4 draws"));
    }
    let sc = sign(c);
    let (mut lhs, mut rhs, mut diff) = (SampleStats::new(), SampleStats::new(), SampleStats::new());
    for _ in 0..n {
        let z = sample(rng);
        let l = (sign(z) - sc).abs();
        let r = 2.0 * (z - c).abs() / c.abs();
        lhs.push(l);
        rhs.push(r);
        diff.push(l - r);
    }
    let std_err = diff.std_error();
    let holds = diff.mean() <= 3.0 * std_err;
    Ok(Lemma3Check { lhs: lhs.mean(), rhs: rhs.mean(), std_err, holds })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scalar laws for the sign-flip sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum ScalarLaw {
    PointMass(f64),
    /// Equiprobable pair.
    TwoPoint(f64, f64),
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        rate: f64,
    },
    Laplace {
        loc: f64,
        scale: f64,
    },
    StudentT {
        dof: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// `±1` with equal probability.
    Rademacher,
    /// Equal mixture of `N(−m, sd²)` and `N(m, sd²)`.
    NormalMixture {
        m: f64,
        sd: f64,
    },
}

impl ScalarLaw {
    /// The twelve laws used by the verification suite.
    pub fn sweep() -> [ScalarLaw; 12] {
        [
            ScalarLaw::PointMass(1.0),
            ScalarLaw::TwoPoint(-1.0, 3.0),
            ScalarLaw::Normal { mean: 0.0, sd: 1.0 },
            ScalarLaw::Normal { mean: 1.0, sd: 0.1 },
            ScalarLaw::Normal { mean: 1.0, sd: 10.0 },
            ScalarLaw::Uniform { lo: -1.0, hi: 2.0 },
            ScalarLaw::Exponential { rate: 1.0 },
            ScalarLaw::Laplace { loc: 0.5, scale: 1.0 },
            ScalarLaw::StudentT { dof: 3.0 },
            ScalarLaw::LogNormal { mu: 0.0, sigma: 1.0 },
            ScalarLaw::Rademacher,
            ScalarLaw::NormalMixture { m: 2.0, sd: 0.5 },
        ]
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            ScalarLaw::PointMass(c) => c,
            ScalarLaw::TwoPoint(a, b) => {
                if rng.uniform() < 0.5 {
                    a
                } else {
                    b
                }
            }
            ScalarLaw::Normal { mean, sd } => mean + sd * rng.normal(),
            ScalarLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
            ScalarLaw::Exponential { rate } => -libm::log(1.0 - rng.uniform()) / rate,
            ScalarLaw::Laplace { loc, scale } => {
                let u = rng.uniform() - 0.5;
                loc - scale * sign(u) * libm::log(1.0 - 2.0 * u.abs())
            }
            ScalarLaw::StudentT { dof } => match StudentT::new(dof) {
                Ok(t) => t.sample(rng),
                Err(_) => f64::NAN,
            },
            ScalarLaw::LogNormal { mu, sigma } => libm::exp(mu + sigma * rng.normal()),
            ScalarLaw::Rademacher => {
                if rng.uniform() < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            ScalarLaw::NormalMixture { m, sd } => {
                let c = if rng.uniform() < 0.5 { -m } else { m };
                c + sd * rng.normal()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Lemma4Check {
    pub x: f64,
    /// `a/x^α + b/x^β` at `x`.
    pub value: f64,
    pub holds: bool,
    /// The same expression where `x^α` is halved.
    pub halved_value: f64,
    /// At the halved point one of the two terms alone is at least 1.
    pub halved_violates: bool,
}

/// Threshold inequality and its factor-of-two tightness.
///
/// Tightness is checked in the variable `s = x^α`, where the factor of two
/// lives: with `s₊ = a + b^{α/β}`, `s₊/2 ≤ max(a, b^{α/β})`.
pub fn check_lemma4(a: f64, b: f64, alpha: f64, beta: f64) -> Result<Lemma4Check> {
    if !(a > 0.0 && b > 0.0 && alpha > 0.0 && alpha < beta) {
        return Err(Error::OutOfScope(format!("need a, b > 0 and 0 < alpha < beta (got {a}, {b}, {alpha}, {beta})")));
    }
    let x = lemma4_point(a, b, alpha, beta);
    let value = lemma4_value(a, b, alpha, beta, x);
    let s_half = 0.5 * (a + libm::pow(b, alpha / beta));
    let t1 = a / s_half;
    let t2 = b / libm::pow(s_half, beta / alpha);
    // 1e-12 relative slack for rounding in the powers
    let one = 1.0 - 1e-12;
    Ok(Lemma4Check {
        x,
        value,
        holds: value <= 1.0 + 1e-12,
        halved_value: t1 + t2,
        halved_violates: t1 >= one || t2 >= one,
    })
}

/// Gradient sequences for the `u ≤ R` check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GradientSequence {
    Gaussian,
    /// Student-t with 1.5 degrees of freedom.
    HeavyTailed,
    /// `±1` alternating in time, scaled by a random magnitude per coordinate.
    AlternatingSign,
    /// `(β2/β1)^k`, the Cauchy–Schwarz extremal direction for `|m|/√v`,
    /// restarted before it overflows.
    Geometric,
}

impl GradientSequence {
    pub const ALL: [GradientSequence; 4] = [
        GradientSequence::Gaussian,
        GradientSequence::HeavyTailed,
        GradientSequence::AlternatingSign,
        GradientSequence::Geometric,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Lemma2Check {
    pub beta1: f64,
    pub beta2: f64,
    pub r: f64,
    pub max_u: f64,
    pub draws: u64,
    pub holds: bool,
}

/// Feeds `steps` gradients of dimension `d` through the moment updates and
/// tracks the largest `|m| / (√v + ε)`.
pub fn check_lemma2(
    beta1: f64,
    beta2: f64,
    seq: GradientSequence,
    d: usize,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Lemma2Check> {
    let r = compute_r(beta1, beta2)?;
    let params = crate::optimizer::AdamParams::constant(0.0, beta1, beta2, 1e-300);
    let mut state = AdamState::new(d);
    let mut x = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut g = vec![0.0; d];
    let scale: Vec<f64> = (0..d).map(|_| libm::exp(2.0 * rng.normal())).collect();
    let student = StudentT::new(1.5).map_err(|_| Error::invalid("student-t"))?;
    let ratio_log = if beta1 > 0.0 { libm::log(beta2 / beta1) } else { 0.0 };
    let window = if ratio_log.abs() > 0.0 { ((200.0 / ratio_log.abs()) as usize).max(2) } else { steps.max(1) };
    let mut max_u: f64 = 0.0;
    for k in 0..steps {
        for j in 0..d {
            g[j] = match seq {
                GradientSequence::Gaussian => rng.normal(),
                GradientSequence::HeavyTailed => student.sample(rng),
                GradientSequence::AlternatingSign => {
                    if k % 2 == 0 {
                        scale[j]
                    } else {
                        -scale[j]
                    }
                }
                GradientSequence::Geometric => scale[j] * libm::exp(ratio_log * ((k + j) % window) as f64),
            };
        }
        crate::optimizer::advance(&mut state, &params, &g, &mut x, crate::optimizer::Form::Preconditioned, &mut u)?;
        max_u = u.iter().fold(max_u, |m, v| m.max(*v));
    }
    Ok(Lemma2Check { beta1, beta2, r, max_u, draws: (steps * d) as u64, holds: max_u <= r * (1.0 + 1e-12) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PairCheck {
    pub pairs: usize,
    pub descent_violations: usize,
    pub lipschitz_violations: usize,
    /// Largest `(F(y) − upper bound)` relative to the bound's scale.
    pub max_descent_excess: f64,
    /// Largest `‖∇F(y) − ∇F(x)‖ / ((L0 + L1‖∇F(x)‖^q) ‖y − x‖)`.
    pub max_lipschitz_ratio: f64,
}

impl PairCheck {
    pub fn holds(&self) -> bool {
        self.descent_violations == 0 && self.lipschitz_violations == 0
    }
}

/// Checks the local smoothness inequality and the descent inequality it
/// implies on random pairs with `‖y − x‖ ≤ min(1, certified separation)`.
///
/// Points `x` are placed at gradient norms log-uniform in `[1e-3, 1e2]`,
/// the range the optimizer traverses on the shipped problems.
pub fn check_smoothness_pairs(problem: &Problem, pairs: usize, rng: &mut RngStream) -> Result<PairCheck> {
    let sep = match problem.certificate() {
        Certificate::Certified { max_separation, .. } => max_separation.min(1.0),
        Certificate::Fitted { .. } => {
            return Err(Error::config("pair checks need a certified smoothness model"));
        }
    };
    let m = problem.smoothness();
    let d = problem.dim();
    let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
    let mut out = PairCheck {
        pairs,
        descent_violations: 0,
        lipschitz_violations: 0,
        max_descent_excess: f64::NEG_INFINITY,
        max_lipschitz_ratio: 0.0,
    };
    let mut done = 0;
    while done < pairs {
        let Some(x) = probe_point(problem, 1e-3, 1e2, rng) else { continue };
        let dir = unit(d, rng);
        let rad = sep * rng.uniform();
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + rad * u).collect();
        let dist = l2(&x.iter().zip(&y).map(|(a, b)| b - a).collect::<Vec<_>>());
        problem.grad_into(&x, &mut gx);
        problem.grad_into(&y, &mut gy);
        let gnorm = l2(&gx);
        let lloc = m.local(gnorm);

        let (fx, fy) = (problem.value(&x), problem.value(&y));
        let lin: f64 = gx.iter().zip(x.iter().zip(&y)).map(|(g, (a, b))| g * (b - a)).sum();
        let quad = 0.5 * lloc * dist * dist;
        let bound = fx + lin + quad;
        let scale = fx.abs() + fy.abs() + lin.abs() + quad + 1e-300;
        let excess = (fy - bound) / scale;
        out.max_descent_excess = out.max_descent_excess.max(excess);
        if excess > 1e-12 {
            out.descent_violations += 1;
        }

        let gd = l2(&gx.iter().zip(&gy).map(|(a, b)| b - a).collect::<Vec<_>>());
        if dist > 0.0 {
            let ratio = gd / (lloc * dist);
            out.max_lipschitz_ratio = out.max_lipschitz_ratio.max(ratio);
            if gd > lloc * dist * (1.0 + 1e-12) + 1e-300 {
                out.lipschitz_violations += 1;
            }
        }
        done += 1;
    }
    Ok(out)
}

fn unit(d: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        rng.fill_normal(&mut v);
        let n = l2(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|a| *a /= n);
            return v;
        }
    }
}

fn log_uniform(lo: f64, hi: f64, rng: &mut RngStream) -> f64 {
    libm::exp(libm::log(lo) + (libm::log(hi) - libm::log(lo)) * rng.uniform())
}

fn probe_point(problem: &Problem, lo: f64, hi: f64, rng: &mut RngStream) -> Option<Vec<f64>> {
    let dir = unit(problem.dim(), rng);
    let target = log_uniform(lo, hi, rng);
    problem.point_with_grad_norm(&dir, target)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FitParams {
    Smoothness(SmoothnessModel),
    Variance(NoiseModel),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct FitResult {
    pub params: FitParams,
    /// Smoothness: mean log-slack of the envelope. Variance: weighted SSR.
    pub residual: f64,
    pub region: String,
    /// The best exponent sat on the edge of its allowed box.
    pub clamped: bool,
    /// The exponent is not identified by the data.
    pub degenerate: bool,
}

/// Envelope fit `r ≤ L0 + L1 s^q` to local Lipschitz ratios.
///
/// `r = ‖∇F(y) − ∇F(x)‖/‖y − x‖` over close pairs and `s = ‖∇F(x)‖`.
/// For each `q` the envelope minimizes `L0 + L1` subject to covering 99%
/// of the points; `q` is chosen by the smallest mean log-slack on a 0.1
/// grid and refined on a 0.01 grid. Ties go to the smaller `q`.
pub fn fit_smoothness(problem: &Problem, pairs: usize, rng: &mut RngStream) -> Result<FitResult> {
    if pairs < 100 {
        return Err(Error::invalid("fit_smoothness needs at least 100 pairs"));
    }
    let d = problem.dim();
    let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
    let xs = problem.minimizer();
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(pairs);
    while pts.len() < pairs {
        let Some(x) = probe_point(problem, 1e-3, 1e2, rng) else { continue };
        let reach = l2(&x.iter().zip(&xs).map(|(a, b)| a - b).collect::<Vec<_>>());
        let h = 1e-4 * reach.clamp(1e-3, 1.0);
        let dir = unit(d, rng);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + h * u).collect();
        problem.grad_into(&x, &mut gx);
        problem.grad_into(&y, &mut gy);
        let dist = l2(&x.iter().zip(&y).map(|(a, b)| b - a).collect::<Vec<_>>());
        let r = l2(&gx.iter().zip(&gy).map(|(a, b)| b - a).collect::<Vec<_>>()) / dist;
        let s = l2(&gx);
        if r.is_finite() && s.is_finite() && s > 0.0 {
            pts.push((s, r));
        }
    }

    let score = |q: f64| -> (f64, f64, f64) {
        let (l0, l1) = envelope(&pts, q);
        let slack = pts
            .iter()
            .filter_map(|&(s, r)| {
                let e = l0 + l1 * libm::pow(s, q);
                (r <= e && r > 0.0).then(|| libm::log(e / r))
            })
            .sum::<f64>()
            / pts.len() as f64;
        (slack, l0, l1)
    };
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    let scan = |qs: &mut dyn Iterator<Item = f64>, best: &mut (f64, f64, f64, f64)| {
        for q in qs {
            let (sl, l0, l1) = score(q);
            if !best.0.is_finite() || sl < best.0 - 1e-9 * best.0.abs().max(1e-12) {
                *best = (sl, q, l0, l1);
            }
        }
    };
    scan(&mut (0..=10).map(|i| i as f64 / 10.0), &mut best);
    let q0 = best.1;
    let lo = libm::round((q0 - 0.1) * 100.0).max(0.0) as i32;
    let hi = libm::round((q0 + 0.1) * 100.0).min(100.0) as i32;
    scan(&mut (lo..=hi).map(|i| i as f64 / 100.0), &mut best);
    let (residual, q, l0, l1) = best;
    Ok(FitResult {
        params: FitParams::Smoothness(SmoothnessModel { l0, l1, q }),
        residual,
        region: String::from(
            "close pairs (separation 1e-4 of distance to the minimizer) at gradient norms in [1e-3, 1e2]",
        ),
        clamped: q == 0.0 || q == 1.0,
        degenerate: l1 == 0.0,
    })
}

fn quantile_99(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let k = (libm::ceil(0.99 * v.len() as f64) as usize).clamp(1, v.len()) - 1;
    v[k]
}

/// Minimizes `L0 + L1` with 99% coverage at fixed `q`.
fn envelope(pts: &[(f64, f64)], q: f64) -> (f64, f64) {
    let mut rs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    rs.sort_unstable_by(f64::total_cmp);
    let mut cands = vec![0.0];
    for i in 0..=100 {
        let k = libm::round((i as f64 / 100.0) * (rs.len() - 1) as f64) as usize;
        cands.push(rs[k]);
    }
    let mut need = vec![0.0; pts.len()];
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &l0 in &cands {
        for (n, &(s, r)) in need.iter_mut().zip(pts) {
            *n = (r - l0).max(0.0) / libm::pow(s, q);
        }
        let l1 = quantile_99(&mut need);
        // ties go to the larger L0
        if l0 + l1 <= best.0 {
            best = (l0 + l1, l0, l1);
        }
    }
    (best.1, best.2)
}

/// Least-squares fit of `E‖g − ∇F‖² ≈ σ0² + σ1² ‖∇F‖^p`.
///
/// Points sit at gradient norms log-uniform in `[1e-2, 1e2]`. The fit is
/// relative (weights `1/V̂²`), nonnegative in `(σ0², σ1²)`, over a 0.25 grid
/// in `p` refined to 0.01.
pub fn fit_variance(
    problem: &Problem,
    points: usize,
    draws_per_point: usize,
    rng: &mut RngStream,
) -> Result<FitResult> {
    if draws_per_point < 1000 {
        return Err(Error::invalid("fit_variance needs at least 10^3 draws per point"));
    }
    if points < 3 {
        return Err(Error::invalid("fit_variance needs at least 3 points"));
    }
    let d = problem.dim();
    let (mut g, mut noisy) = (vec![0.0; d], vec![0.0; d]);
    let mut data: Vec<(f64, f64)> = Vec::with_capacity(points);
    while data.len() < points {
        let Some(x) = probe_point(problem, 1e-2, 1e2, rng) else { continue };
        problem.grad_into(&x, &mut g);
        let mut acc = CompensatedSum::default();
        for _ in 0..draws_per_point {
            problem.noisy_from_grad(&g, rng, &mut noisy);
            acc.add(noisy.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum());
        }
        data.push((l2(&g), acc.value() / draws_per_point as f64));
    }
    let region = String::from("gradient norms log-uniform in [1e-2, 1e2]");
    if data.iter().all(|&(_, v)| v == 0.0) {
        return Ok(FitResult {
            params: FitParams::Variance(NoiseModel { sigma0: 0.0, sigma1: 0.0, p: 0.0 }),
            residual: 0.0,
            region,
            clamped: false,
            degenerate: true,
        });
    }

    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    let scan = |ps: &mut dyn Iterator<Item = f64>, best: &mut (f64, f64, f64, f64)| {
        for p in ps {
            let (ssr, a, b) = nonneg_affine_fit(&data, p);
            if ssr < best.0 {
                *best = (ssr, p, a, b);
            }
        }
    };
    scan(&mut (0..=8).map(|i| i as f64 * 0.25), &mut best);
    let p0 = best.1;
    let lo = libm::round((p0 - 0.25) * 100.0).max(0.0) as i32;
    let hi = libm::round((p0 + 0.25) * 100.0).min(200.0) as i32;
    scan(&mut (lo..=hi).map(|i| i as f64 / 100.0), &mut best);
    let (residual, p, a, b) = best;
    // With σ1 = 0 the exponent is unidentified: the gradient term then
    // buys no more than an F-test's worth of fit over a constant.
    let (ssr0, a0) = constant_fit(&data);
    let n = data.len() as f64;
    let gmax = data.iter().fold(0.0f64, |m, x| m.max(x.0));
    let degenerate = b * libm::pow(gmax, p) <= 1e-3 * a || ssr0 <= residual * (1.0 + 12.0 / (n - 3.0).max(1.0));
    let (params, residual) = if degenerate {
        (NoiseModel { sigma0: libm::sqrt(a0), sigma1: 0.0, p: 0.0 }, ssr0)
    } else {
        (NoiseModel { sigma0: libm::sqrt(a), sigma1: libm::sqrt(b), p }, residual)
    };
    Ok(FitResult {
        params: FitParams::Variance(params),
        residual,
        region,
        clamped: !degenerate && (p == 0.0 || p == 2.0),
        degenerate,
    })
}

/// Weighted (`1/V²`) least squares for `V ≈ a + b G^p` with `a, b ≥ 0`.
fn nonneg_affine_fit(data: &[(f64, f64)], p: f64) -> (f64, f64, f64) {
    let w = |v: f64| if v > 0.0 { 1.0 / (v * v) } else { 0.0 };
    let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(gn, v) in data {
        let (wi, z) = (w(v), libm::pow(gn, p));
        s00 += wi;
        s01 += wi * z;
        s11 += wi * z * z;
        t0 += wi * v;
        t1 += wi * v * z;
    }
    let ssr = |a: f64, b: f64| -> f64 { data.iter().map(|&(gn, v)| w(v) * sq(v - a - b * libm::pow(gn, p))).sum() };
    let mut cands: Vec<(f64, f64)> = Vec::with_capacity(3);
    let det = s00 * s11 - s01 * s01;
    if det.abs() > 1e-300 {
        let a = (t0 * s11 - t1 * s01) / det;
        let b = (s00 * t1 - s01 * t0) / det;
        if a >= 0.0 && b >= 0.0 {
            cands.push((a, b));
        }
    }
    if s00 > 0.0 {
        cands.push(((t0 / s00).max(0.0), 0.0));
    }
    if s11 > 0.0 {
        cands.push((0.0, (t1 / s11).max(0.0)));
    }
    cands.into_iter().map(|(a, b)| (ssr(a, b), a, b)).fold((f64::INFINITY, 0.0, 0.0), |best, c| {
        if c.0 < best.0 {
            c
        } else {
            best
        }
    })
}

/// Weighted fit of `V ≈ a`.
fn constant_fit(data: &[(f64, f64)]) -> (f64, f64) {
    let w = |v: f64| if v > 0.0 { 1.0 / (v * v) } else { 0.0 };
    let (sw, swv) = data.iter().fold((0.0, 0.0), |(a, b), &(_, v)| (a + w(v), b + w(v) * v));
    let a = if sw > 0.0 { swv / sw } else { 0.0 };
    (data.iter().map(|&(_, v)| w(v) * sq(v - a)).sum(), a)
}

fn sq(v: f64) -> f64 {
    v * v
}
