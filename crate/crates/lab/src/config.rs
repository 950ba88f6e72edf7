//! Experiment configuration, read from TOML.
//!
//! Every section is optional, but all subcommands except `audit-bound`
//! and `verify-lemmas` need `[problem]`. A minimal file:
//!
//! ```toml
//! horizon = 1000
//!
//! [problem]
//! kind = "quadratic"
//! d = 16
//!
//! [optimizer]
//! lr = 0.01
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use signadam_core::diagnostics::Thresholds;
use signadam_core::optimizer::{AdamParams, BiasCorrection, Form};
use signadam_core::problems::{make_problem, Problem, ProblemSpec, SigmaHatReading};
use signadam_core::schedules::{Beta2Rule, OracleConstants, ScheduleMode, ScheduleSpec};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Replicate ids. Each (T, replicate, cell) gets its own RNG stream.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub t_grid: Vec<u64>,
    /// Steps for `run` and `check-conditions`.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_form")]
    pub form: Form,
    /// Write the full `u` vector every k steps.
    #[serde(default)]
    pub dump_every: Option<usize>,
    #[serde(default = "default_cap")]
    pub divergence_cap: f64,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// When present, replaces the optimizer's learning rate and betas with
    /// the horizon-dependent schedule.
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub conditions: ConditionsConfig,
    #[serde(default)]
    pub lemmas: LemmaConfig,
}

fn default_seeds() -> Vec<u64> {
    (0..8).collect()
}
fn default_horizon() -> u64 {
    1000
}
fn default_form() -> Form {
    Form::Preconditioned
}
fn default_cap() -> f64 {
    signadam_core::optimizer::DEFAULT_DIVERGENCE_CAP
}

/// Constant-learning-rate Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: BiasCorrection,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, bias_correction: BiasCorrection::Off }
    }
}

impl OptimizerConfig {
    pub fn params(&self) -> AdamParams {
        AdamParams::constant(self.lr, self.beta1, self.beta2, self.epsilon).with_bias_correction(self.bias_correction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    /// Required except in `oracle_case2`, where the closed form is used.
    #[serde(default)]
    pub c2: Option<f64>,
    #[serde(default)]
    pub c3: Option<f64>,
    #[serde(default = "default_beta2")]
    pub beta2: Beta2Rule,
    /// Which `σ̂` the oracle constants use.
    #[serde(default = "default_reading")]
    pub sigma_hat: SigmaHatReading,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_beta2() -> Beta2Rule {
    Beta2Rule::MatchBeta1
}
fn default_reading() -> SigmaHatReading {
    SigmaHatReading::Derived
}
fn default_eps() -> f64 {
    1e-8
}

impl ScheduleConfig {
    /// The schedule at horizon `T` for `problem`.
    pub fn spec(&self, problem: &Problem, horizon: u64) -> Result<ScheduleSpec> {
        let d = problem.dim();
        let spec = match self.mode {
            ScheduleMode::OracleCase2 => {
                let consts = oracle_constants(problem, self.sigma_hat, 1.0, 1.0, 1.0);
                ScheduleSpec::oracle_case2(&consts, horizon, d, self.beta2)?
            }
            mode => {
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| LabError::config(format!("schedule mode {mode:?} needs {name}")))
                };
                ScheduleSpec::new(mode, need(self.c2, "c2")?, need(self.c3, "c3")?, horizon, d, self.beta2)?
            }
        };
        Ok(spec)
    }
}

/// Theory constants read off a problem's certificate and noise model.
///
/// `C0` and `C1` are trajectory properties; callers pass post-hoc values
/// (or 1 before a run). `l_hat_scale` exists for the negative control.
pub fn oracle_constants(
    problem: &Problem,
    reading: SigmaHatReading,
    c0: f64,
    c1: f64,
    l_hat_scale: f64,
) -> OracleConstants {
    let model = problem.smoothness();
    let noise = problem.noise();
    OracleConstants {
        f0_minus_fstar: problem.value(problem.x0().as_slice()) - problem.f_star(),
        l_hat: model.l_hat() * l_hat_scale,
        sigma_hat: noise.sigma_hat(reading),
        sigma1: noise.sigma1,
        p: noise.p,
        q: model.q,
        l1: model.l1,
        c0,
        c1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectory: String,
    pub u_dump: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { trajectory: "trajectory.csv".into(), u_dump: "u_dump.csv".into(), report: "report.json".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    /// Pass band for the fitted slope, if checked.
    pub expected_slope: Option<[f64; 2]>,
    pub min_r_squared: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Learning rate shared by both arms.
    pub lr: f64,
    /// Momentum arm: `β1 = β2 = 1 − c3/√T`.
    pub c3: f64,
    /// The plain arm is rerun with `σ0` multiplied by this.
    pub sigma0_factor: f64,
    pub min_floor_ratio: f64,
    pub epsilon: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { lr: 0.05, c3: 4.0, sigma0_factor: 2.0, min_floor_ratio: 1.5, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d_grid: Vec<usize>,
    pub horizon: u64,
    /// Geometric learning-rate grid `2^{k/steps_per_octave}` over `[lr_min, lr_max]`.
    pub lr_min: f64,
    pub lr_max: f64,
    pub steps_per_octave: u32,
    /// Momentum for the grid-searched runs: `β1 = β2 = 1 − c3/√T`.
    pub c3: f64,
    pub epsilons: Vec<f64>,
    pub expected_slope: Option<[f64; 2]>,
    pub max_d_ratio: f64,
    pub max_eps_spread: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            d_grid: vec![4, 16, 64, 256],
            horizon: 4096,
            lr_min: 2f64.powi(-14),
            lr_max: 0.25,
            steps_per_octave: 2,
            c3: 2.0,
            epsilons: vec![1e-12, 1e-8, 1e-4],
            expected_slope: None,
            max_d_ratio: 2.0,
            max_eps_spread: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Holds,
    Violates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditCase {
    pub name: String,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    pub t_grid: Vec<u64>,
    /// Multiplies `L̂` in the bound (below 1 for a negative control).
    #[serde(default = "one")]
    pub l_hat_scale: f64,
    #[serde(default)]
    pub expect: Expectation,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub cases: Vec<AuditCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsConfig {
    pub group_size: usize,
    pub trials: usize,
    pub smoothness_pairs: usize,
    pub variance_points: usize,
    pub variance_draws: usize,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            group_size: 64,
            trials: 100,
            smoothness_pairs: 2000,
            variance_points: 32,
            variance_draws: 1000,
        }
    }
}

/// Sizes of the `verify-lemmas` suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    pub form_problems: usize,
    pub form_steps: usize,
    /// Gradient coordinates drawn per Lemma 2 check, summed over sequences.
    pub lemma2_draws: u64,
    pub lemma3_samples: usize,
    pub lemma4_cases: usize,
    pub ks_group_size: usize,
    pub ks_trials: usize,
    pub noise_samples: usize,
    pub smoothness_pairs: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig {
            form_problems: 100,
            form_steps: 1000,
            lemma2_draws: 1_000_000,
            lemma3_samples: 10_000,
            lemma4_cases: 10_000,
            ks_group_size: 10_000,
            ks_trials: 1000,
            noise_samples: 100_000,
            smoothness_pairs: 10_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// `sha256:` of the canonical JSON form, so comments and key order in
    /// the file do not change it.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        format!("sha256:{}", hex::encode(Sha256::digest(&canon)))
    }

    pub fn problem_spec(&self) -> Result<&ProblemSpec> {
        self.problem.as_ref().ok_or_else(|| LabError::config("config has no [problem] section"))
    }

    pub fn build_problem(&self) -> Result<Problem> {
        Ok(make_problem(self.problem_spec()?)?)
    }

    /// Adam parameters at horizon `T`: the schedule if configured, else the
    /// constant optimizer.
    pub fn params_at(&self, problem: &Problem, horizon: u64) -> Result<(AdamParams, Option<ScheduleSpec>)> {
        match &self.schedule {
            Some(s) => {
                let spec = s.spec(problem, horizon)?;
                Ok((spec.adam_params(s.epsilon), Some(spec)))
            }
            None => Ok((self.optimizer.params(), None)),
        }
    }

    pub fn require_seeds(&self, min: usize) -> Result<()> {
        if self.seeds.len() < min {
            return Err(LabError::config(format!("need at least {min} seeds, got {}", self.seeds.len())));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(LabError::config("seeds must be distinct"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_parses() {
        let cfg = ExperimentConfig::from_toml("[problem]\nkind = \"quadratic\"\nd = 4\n", Path::new("x")).unwrap();
        assert_eq!(cfg.problem.as_ref().unwrap().d, 4);
        assert_eq!(cfg.seeds.len(), 8);
        assert!(cfg.schedule.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml("bogus = 1\n[problem]\nkind = \"quadratic\"\nd = 4\n", Path::new("x"));
        assert!(matches!(err, Err(LabError::Parse { .. })));
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ExperimentConfig::from_toml("[problem]\nkind = \"quadratic\"\nd = 4\n", Path::new("x")).unwrap();
        let b = ExperimentConfig::from_toml("# note\n[problem]\nd = 4\nkind = 'quadratic'\n", Path::new("x")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.horizon += 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn beta2_rules_parse() {
        let text = "[problem]\nkind = \"quartic\"\nd = 2\n[schedule]\nmode = \"general_case1\"\nc2 = 1.0\nc3 = 2.0\nbeta2 = { power = { c = 1.0, exponent = 0.5 } }\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("x")).unwrap();
        assert_eq!(cfg.schedule.unwrap().beta2, Beta2Rule::Power { c: 1.0, exponent: 0.5 });
    }
}
