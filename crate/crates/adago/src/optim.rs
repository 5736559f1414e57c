//! Optimizer steps and the hybrid parameter router.
//!
//! The two matrix-aware rules share one template — heavy-ball momentum
//! followed by orthogonalization of the momentum buffer:
//!
//! ```text
//! M_t = mu * M_{t-1} + (1 - mu) * G_t
//! O_t = Orth(M_t)
//! Theta_t = Theta_{t-1} - alpha_t * O_t
//! ```
//!
//! **Muon** uses the constant stepsize `alpha_t = eta`. **AdaGO** maintains a
//! scalar accumulator `v_t^2 = v_{t-1}^2 + min{||G_t||^2, gamma^2}` and sets
//! `alpha_t = max{eps, eta * min{||G_t||, gamma} / v_t}`: the `gamma` clamp
//! keeps early giant gradients from killing the stepsize for good, and the
//! `eps` floor keeps the iterate moving once the accumulator has grown.
//!
//! Baselines (GD, orthogonalized GD, Adam, AdaGrad-Norm) and a hybrid router
//! that sends matrix parameters to a matrix rule and everything else to Adam
//! round out the set.

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_norm, nuclear_norm, orthogonalize_exact, orthogonalize_newton_schulz,
    spectral_norm, Matrix,
};
use crate::models::{ParamKind, ParamSet};
use serde::{Deserialize, Serialize};

/// Which norm of the stochastic gradient drives the AdaGO stepsize (lines
/// using `||G_t||`). Frobenius is the practical default; spectral and nuclear
/// are exposed because the analysis holds for any of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradNormKind {
    #[default]
    Frobenius,
    Spectral,
    Nuclear,
}

/// Shared hyperparameters for every optimizer in the crate. Fields that an
/// optimizer does not use are simply ignored by its step function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Base stepsize.
    pub eta: f64,
    /// Momentum coefficient for Muon/AdaGO.
    pub mu: f64,
    /// Gradient-norm clamp for AdaGO.
    pub gamma: f64,
    /// Stepsize floor for AdaGO.
    pub epsilon: f64,
    /// Initial accumulator value (`v_0`).
    pub v0: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator fuzz.
    pub adam_eps: f64,
    /// Stepsize for the Adam slots inside hybrid routers (bias vectors and
    /// scalars). `None` falls back to `eta`. Pure Adam always uses `eta`.
    #[serde(default)]
    pub adam_eta: Option<f64>,
    /// Newton–Schulz iterations for orthogonalization; 0 selects the exact
    /// SVD route.
    pub ns_iters: u32,
    /// Norm used in the AdaGO stepsize rule.
    pub grad_norm: GradNormKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eta: 0.01,
            mu: 0.95,
            gamma: 1e3,
            epsilon: 1e-6,
            v0: 1.0,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            adam_eta: None,
            ns_iters: 0,
            grad_norm: GradNormKind::Frobenius,
        }
    }
}

/// Benchmark task family, used to pick tuned default stepsizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.eta, "eta"),
            (self.gamma, "gamma"),
            (self.epsilon, "epsilon"),
            (self.v0, "v0"),
            (self.adam_eps, "adam_eps"),
        ];
        for (value, name) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        let unit = [(self.mu, "mu"), (self.beta1, "beta1"), (self.beta2, "beta2")];
        for (value, name) in unit {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {value}")));
            }
        }
        if let Some(adam_eta) = self.adam_eta {
            if !(adam_eta > 0.0 && adam_eta.is_finite()) {
                return Err(Error::Config(format!(
                    "adam_eta must be positive, got {adam_eta}"
                )));
            }
        }
        Ok(())
    }

    /// Tuned defaults per optimizer and task family (desk-scale benchmarks).
    /// Hybrid routers give their Adam-managed slots (biases, scalars) the
    /// Adam-tuned stepsize for the task rather than the matrix rule's `eta`.
    pub fn tuned(kind: OptimizerKind, task: TaskKind) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::default();
        use OptimizerKind::*;
        if kind.is_hybrid() {
            cfg.adam_eta = Some(match task {
                TaskKind::Regression => 0.01,
                TaskKind::Classification => 3e-4,
            });
        }
        match (kind, task) {
            (Adam, TaskKind::Regression) => cfg.eta = 0.01,
            (Adam, TaskKind::Classification) => cfg.eta = 3e-4,
            (Muon | HybridMuon, TaskKind::Regression) => cfg.eta = 5e-3,
            (Muon | HybridMuon, TaskKind::Classification) => cfg.eta = 2e-3,
            (Adago | HybridAdago, TaskKind::Regression) => {
                cfg.eta = 0.5;
                cfg.epsilon = 5e-3;
            }
            (Adago | HybridAdago, TaskKind::Classification) => {
                cfg.eta = 5e-2;
                cfg.epsilon = 5e-4;
            }
            // The remaining baselines reuse Adam's tuned stepsize as a
            // starting point; grid search refines from there.
            (Gd | Ogd | AdagradNorm, TaskKind::Regression) => cfg.eta = 0.01,
            (Gd | Ogd | AdagradNorm, TaskKind::Classification) => cfg.eta = 3e-4,
        }
        cfg
    }

    /// Horizon-tuned schedule for single-sample stochastic runs:
    /// `eps = T^(-3/4)`, `mu = 1 - T^(-1/2)`, `eta = T^(-(3/8 + q))`.
    pub fn schedule_stochastic_b1(t_max: u64, q: f64) -> Result<OptimizerConfig> {
        let t = check_horizon(t_max, q)?;
        let cfg = OptimizerConfig {
            epsilon: t.powf(-0.75),
            mu: 1.0 - t.powf(-0.5),
            eta: t.powf(-(0.375 + q)),
            ..OptimizerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Horizon-tuned schedule for deterministic (or growing-batch) runs:
    /// `mu = 0`, `eps = T^(-1/2)`, `eta = T^(-q)`.
    pub fn schedule_deterministic(t_max: u64, q: f64) -> Result<OptimizerConfig> {
        let t = check_horizon(t_max, q)?;
        let cfg = OptimizerConfig {
            epsilon: t.powf(-0.5),
            mu: 0.0,
            eta: t.powf(-q),
            ..OptimizerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Default exponent offset `q` for the horizon-tuned schedules.
pub const DEFAULT_SCHEDULE_Q: f64 = 0.05;

fn check_horizon(t_max: u64, q: f64) -> Result<f64> {
    if t_max == 0 {
        return Err(Error::Config("schedule horizon must be at least 1".into()));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Config(format!("schedule exponent q must be positive, got {q}")));
    }
    Ok(t_max as f64)
}

/// Everything a single optimizer step reports for telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Stepsize actually applied (`eta` for constant-stepsize rules).
    pub stepsize: f64,
    /// Frobenius norm of the gradient consumed by the step.
    pub grad_norm_f: f64,
    /// Frobenius norm of the applied update `alpha * O_t`.
    pub update_norm_f: f64,
    /// Accumulator value `v_t` after the step, for rules that keep one.
    pub v_after: Option<f64>,
    /// Whether `||G_t||` exceeded `gamma` (AdaGO only).
    pub clamped: bool,
    /// Whether the `eps` floor determined the stepsize (AdaGO only).
    pub floored: bool,
}

/// Momentum state shared by Muon and AdaGO.
#[derive(Debug, Clone)]
pub struct MuonState {
    pub momentum: Matrix,
    pub step_count: u64,
}

impl MuonState {
    pub fn new(rows: usize, cols: usize) -> Self {
        MuonState { momentum: Matrix::zeros(rows, cols), step_count: 0 }
    }
}

/// AdaGO per-parameter state: momentum buffer plus the scalar accumulator
/// (stored squared, as the update rule uses it).
#[derive(Debug, Clone)]
pub struct AdaGOState {
    pub momentum: Matrix,
    pub v_sq: f64,
    pub step_count: u64,
}

impl AdaGOState {
    pub fn new(rows: usize, cols: usize, cfg: &OptimizerConfig) -> Self {
        AdaGOState { momentum: Matrix::zeros(rows, cols), v_sq: cfg.v0 * cfg.v0, step_count: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m1: Matrix,
    pub m2: Matrix,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            m1: Matrix::zeros(rows, cols),
            m2: Matrix::zeros(rows, cols),
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaGradNormState {
    pub v_sq: f64,
    pub step_count: u64,
}

impl AdaGradNormState {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        AdaGradNormState { v_sq: cfg.v0 * cfg.v0, step_count: 0 }
    }
}

/// `mu * m_prev + (1 - mu) * grad`.
pub fn momentum_update(m_prev: &Matrix, grad: &Matrix, mu: f64) -> Result<Matrix> {
    if !m_prev.same_shape(grad) {
        return Err(Error::InvalidInput(format!(
            "momentum is {}x{} but gradient is {}x{}",
            m_prev.rows(),
            m_prev.cols(),
            grad.rows(),
            grad.cols()
        )));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::Config(format!("mu must lie in [0, 1), got {mu}")));
    }
    if !grad.is_finite() {
        return Err(Error::InvalidInput("non-finite gradient".into()));
    }
    let mut m = m_prev.scale(mu);
    m.add_scaled(1.0 - mu, grad);
    Ok(m)
}

/// Outcome of the AdaGO stepsize rule for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeOutcome {
    /// `alpha_t = max{eps, eta * min{grad_norm, gamma} / v_t}`.
    pub alpha: f64,
    /// Updated accumulator `v_t^2 = v_prev^2 + min{grad_norm^2, gamma^2}`.
    pub v_new_sq: f64,
    /// Whether the clamp was active (`grad_norm > gamma`).
    pub clamped: bool,
    /// Whether the floor determined `alpha`.
    pub floored: bool,
}

/// The AdaGO accumulator-and-stepsize rule, isolated from the matrix update
/// so its algebra can be pinned down exactly.
pub fn adago_stepsize(
    grad_norm: f64,
    v_prev_sq: f64,
    cfg: &OptimizerConfig,
) -> Result<StepsizeOutcome> {
    cfg.validate()?;
    if !(grad_norm >= 0.0 && grad_norm.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "gradient norm must be finite and nonnegative, got {grad_norm}"
        )));
    }
    if !(v_prev_sq > 0.0 && v_prev_sq.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "accumulator must be positive, got {v_prev_sq}"
        )));
    }
    let clamped_norm = grad_norm.min(cfg.gamma);
    let v_new_sq = v_prev_sq + clamped_norm * clamped_norm;
    let adaptive = cfg.eta * clamped_norm / v_new_sq.sqrt();
    let floored = cfg.epsilon >= adaptive;
    Ok(StepsizeOutcome {
        alpha: adaptive.max(cfg.epsilon),
        v_new_sq,
        clamped: grad_norm > cfg.gamma,
        floored,
    })
}

fn orthogonalize_route(m: &Matrix, ns_iters: u32) -> Result<Matrix> {
    if ns_iters == 0 {
        orthogonalize_exact(m)
    } else {
        orthogonalize_newton_schulz(m, ns_iters)
    }
}

fn gradient_norm(grad: &Matrix, kind: GradNormKind) -> Result<f64> {
    if frobenius_norm(grad)? == 0.0 {
        return Ok(0.0);
    }
    match kind {
        GradNormKind::Frobenius => frobenius_norm(grad),
        GradNormKind::Spectral => spectral_norm(grad),
        GradNormKind::Nuclear => nuclear_norm(grad),
    }
}

/// One AdaGO step on a single parameter. Returns the new value; the momentum
/// and accumulator in `state` are updated in place.
pub fn adago_step(
    param: &Matrix,
    grad: &Matrix,
    state: &mut AdaGOState,
    cfg: &OptimizerConfig,
) -> Result<(Matrix, StepReport)> {
    check_step_shapes(param, grad, &state.momentum)?;
    state.momentum = momentum_update(&state.momentum, grad, cfg.mu)?;
    let norm_for_rule = gradient_norm(grad, cfg.grad_norm)?;
    let outcome = adago_stepsize(norm_for_rule, state.v_sq, cfg)?;
    state.v_sq = outcome.v_new_sq;
    state.step_count += 1;

    let grad_norm_f = frobenius_norm(grad)?;
    let v_after = Some(outcome.v_new_sq.sqrt());

    if frobenius_norm(&state.momentum)? == 0.0 {
        // Nothing to orthogonalize; the accumulator still advanced.
        return Ok((
            param.clone(),
            StepReport {
                stepsize: cfg.epsilon,
                grad_norm_f,
                update_norm_f: 0.0,
                v_after,
                clamped: outcome.clamped,
                floored: true,
            },
        ));
    }

    let direction = orthogonalize_route(&state.momentum, cfg.ns_iters)?;
    let mut next = param.clone();
    next.add_scaled(-outcome.alpha, &direction);
    let update_norm_f = outcome.alpha * frobenius_norm(&direction)?;
    Ok((
        next,
        StepReport {
            stepsize: outcome.alpha,
            grad_norm_f,
            update_norm_f,
            v_after,
            clamped: outcome.clamped,
            floored: outcome.floored,
        },
    ))
}

/// One Muon step on a single parameter: orthogonalized momentum with the
/// constant stepsize `eta`.
pub fn muon_step(
    param: &Matrix,
    grad: &Matrix,
    state: &mut MuonState,
    cfg: &OptimizerConfig,
) -> Result<(Matrix, StepReport)> {
    cfg.validate()?;
    check_step_shapes(param, grad, &state.momentum)?;
    state.momentum = momentum_update(&state.momentum, grad, cfg.mu)?;
    state.step_count += 1;
    let grad_norm_f = frobenius_norm(grad)?;

    if frobenius_norm(&state.momentum)? == 0.0 {
        return Ok((
            param.clone(),
            StepReport {
                stepsize: cfg.eta,
                grad_norm_f,
                update_norm_f: 0.0,
                v_after: None,
                clamped: false,
                floored: false,
            },
        ));
    }

    let direction = orthogonalize_route(&state.momentum, cfg.ns_iters)?;
    let mut next = param.clone();
    next.add_scaled(-cfg.eta, &direction);
    let update_norm_f = cfg.eta * frobenius_norm(&direction)?;
    Ok((
        next,
        StepReport {
            stepsize: cfg.eta,
            grad_norm_f,
            update_norm_f,
            v_after: None,
            clamped: false,
            floored: false,
        },
    ))
}

/// Plain gradient descent: `param - eta * grad`.
pub fn gd_step(param: &Matrix, grad: &Matrix, eta: f64) -> Result<Matrix> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    if !param.same_shape(grad) {
        return Err(Error::InvalidInput("gd_step: parameter/gradient shape mismatch".into()));
    }
    if !grad.is_finite() {
        return Err(Error::InvalidInput("gd_step: non-finite gradient".into()));
    }
    let mut next = param.clone();
    next.add_scaled(-eta, grad);
    Ok(next)
}

/// Orthogonalized gradient descent: `param - eta * Orth(grad)`. A zero
/// gradient has no direction, so the step is skipped.
pub fn ogd_step(param: &Matrix, grad: &Matrix, eta: f64) -> Result<Matrix> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    if !param.same_shape(grad) {
        return Err(Error::InvalidInput("ogd_step: parameter/gradient shape mismatch".into()));
    }
    if frobenius_norm(grad)? == 0.0 {
        return Ok(param.clone());
    }
    let direction = orthogonalize_exact(grad)?;
    let mut next = param.clone();
    next.add_scaled(-eta, &direction);
    Ok(next)
}

/// Bias-corrected Adam on one parameter (elementwise).
pub fn adam_step(
    param: &Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<(Matrix, StepReport)> {
    cfg.validate()?;
    check_step_shapes(param, grad, &state.m1)?;
    if !grad.is_finite() {
        return Err(Error::InvalidInput("adam_step: non-finite gradient".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    state.m1 = state.m1.scale(cfg.beta1);
    state.m1.add_scaled(1.0 - cfg.beta1, grad);
    let grad_sq = grad.map(|g| g * g);
    state.m2 = state.m2.scale(cfg.beta2);
    state.m2.add_scaled(1.0 - cfg.beta2, &grad_sq);

    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut next = param.clone();
    let mut update_sq = 0.0;
    for idx in 0..next.data().len() {
        let mhat = state.m1.data()[idx] / bc1;
        let vhat = state.m2.data()[idx] / bc2;
        let delta = cfg.eta * mhat / (vhat.sqrt() + cfg.adam_eps);
        next.data_mut()[idx] -= delta;
        update_sq += delta * delta;
    }
    Ok((
        next,
        StepReport {
            stepsize: cfg.eta,
            grad_norm_f: frobenius_norm(grad)?,
            update_norm_f: update_sq.sqrt(),
            v_after: None,
            clamped: false,
            floored: false,
        },
    ))
}

/// AdaGrad-Norm: `v^2 += ||G||_F^2`, then `param - (eta / v) * grad`.
pub fn adagrad_norm_step(
    param: &Matrix,
    grad: &Matrix,
    state: &mut AdaGradNormState,
    cfg: &OptimizerConfig,
) -> Result<(Matrix, StepReport)> {
    cfg.validate()?;
    if !param.same_shape(grad) {
        return Err(Error::InvalidInput(
            "adagrad_norm_step: parameter/gradient shape mismatch".into(),
        ));
    }
    let grad_norm_f = frobenius_norm(grad)?;
    state.v_sq += grad_norm_f * grad_norm_f;
    state.step_count += 1;
    let effective = cfg.eta / state.v_sq.sqrt();
    let mut next = param.clone();
    next.add_scaled(-effective, grad);
    Ok((
        next,
        StepReport {
            stepsize: effective,
            grad_norm_f,
            update_norm_f: effective * grad_norm_f,
            v_after: Some(state.v_sq.sqrt()),
            clamped: false,
            floored: false,
        },
    ))
}

fn check_step_shapes(param: &Matrix, grad: &Matrix, state: &Matrix) -> Result<()> {
    if !param.same_shape(grad) {
        return Err(Error::InvalidInput("parameter/gradient shape mismatch".into()));
    }
    if !param.same_shape(state) {
        return Err(Error::Config(
            "optimizer state shape does not match parameter (wrong state for this parameter?)"
                .into(),
        ));
    }
    Ok(())
}

/// The matrix-parameter rule used by the hybrid router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixRule {
    Muon,
    Adago,
}

/// Every optimizer the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    Ogd,
    Adam,
    AdagradNorm,
    Muon,
    Adago,
    /// Muon on matrix parameters, Adam on vectors and scalars.
    HybridMuon,
    /// AdaGO on matrix parameters, Adam on vectors and scalars.
    HybridAdago,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 8] = [
        OptimizerKind::Gd,
        OptimizerKind::Ogd,
        OptimizerKind::Adam,
        OptimizerKind::AdagradNorm,
        OptimizerKind::Muon,
        OptimizerKind::Adago,
        OptimizerKind::HybridMuon,
        OptimizerKind::HybridAdago,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Ogd => "ogd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdagradNorm => "adagrad-norm",
            OptimizerKind::Muon => "muon",
            OptimizerKind::Adago => "adago",
            OptimizerKind::HybridMuon => "hybrid-muon",
            OptimizerKind::HybridAdago => "hybrid-adago",
        }
    }

    pub fn parse(s: &str) -> Result<OptimizerKind> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer '{s}'")))
    }

    /// The rule applied to matrix parameters; `None` for elementwise rules.
    pub fn matrix_rule(&self) -> Option<MatrixRule> {
        match self {
            OptimizerKind::Muon | OptimizerKind::HybridMuon => Some(MatrixRule::Muon),
            OptimizerKind::Adago | OptimizerKind::HybridAdago => Some(MatrixRule::Adago),
            _ => None,
        }
    }

    pub fn is_hybrid(&self) -> bool {
        matches!(self, OptimizerKind::HybridMuon | OptimizerKind::HybridAdago)
    }

    /// Whether this rule keeps an AdaGO accumulator on matrix parameters.
    pub fn is_adago_family(&self) -> bool {
        matches!(self, OptimizerKind::Adago | OptimizerKind::HybridAdago)
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Stateless,
    Muon(MuonState),
    Adago(AdaGOState),
    Adam(AdamState),
    AdagradNorm(AdaGradNormState),
}

/// Drives one optimizer over a whole [`ParamSet`], holding per-parameter
/// state. Hybrid kinds route matrix parameters to their matrix rule and
/// vectors/scalars to Adam; pure kinds apply one rule everywhere.
#[derive(Debug, Clone)]
pub struct Engine {
    kind: OptimizerKind,
    cfg: OptimizerConfig,
    slots: Vec<Slot>,
}

impl Engine {
    pub fn new(kind: OptimizerKind, params: &ParamSet, cfg: OptimizerConfig) -> Result<Engine> {
        cfg.validate()?;
        let slots = params
            .params()
            .iter()
            .map(|p| {
                let (rows, cols) = (p.value.rows(), p.value.cols());
                let use_matrix_rule = !kind.is_hybrid() || p.kind == ParamKind::MatrixParam;
                match kind {
                    OptimizerKind::Gd | OptimizerKind::Ogd => Slot::Stateless,
                    OptimizerKind::Adam => Slot::Adam(AdamState::new(rows, cols)),
                    OptimizerKind::AdagradNorm => Slot::AdagradNorm(AdaGradNormState::new(&cfg)),
                    OptimizerKind::Muon | OptimizerKind::HybridMuon => {
                        if use_matrix_rule {
                            Slot::Muon(MuonState::new(rows, cols))
                        } else {
                            Slot::Adam(AdamState::new(rows, cols))
                        }
                    }
                    OptimizerKind::Adago | OptimizerKind::HybridAdago => {
                        if use_matrix_rule {
                            Slot::Adago(AdaGOState::new(rows, cols, &cfg))
                        } else {
                            Slot::Adam(AdamState::new(rows, cols))
                        }
                    }
                }
            })
            .collect();
        Ok(Engine { kind, cfg, slots })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one step to every parameter using the gradients currently in
    /// their grad slots. Returns per-parameter reports in parameter order.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<Vec<StepReport>> {
        if params.len() != self.slots.len() {
            return Err(Error::Config(format!(
                "engine was built for {} parameters, got {}",
                self.slots.len(),
                params.len()
            )));
        }
        let cfg = self.cfg;
        // Adam slots inside a hybrid take their own stepsize; a pure Adam run
        // keeps `eta` as its rate.
        let adam_cfg = if self.kind.is_hybrid() {
            OptimizerConfig { eta: cfg.adam_eta.unwrap_or(cfg.eta), ..cfg }
        } else {
            cfg
        };
        let mut reports = Vec::with_capacity(self.slots.len());
        for (param, slot) in params.params_mut().iter_mut().zip(self.slots.iter_mut()) {
            let (next, report) = match slot {
                Slot::Stateless => {
                    let next = match self.kind {
                        OptimizerKind::Gd => gd_step(&param.value, &param.grad, cfg.eta)?,
                        OptimizerKind::Ogd => ogd_step(&param.value, &param.grad, cfg.eta)?,
                        _ => unreachable!("stateless slot only exists for gd/ogd"),
                    };
                    let update_norm_f = frobenius_norm(&next.sub(&param.value))?;
                    let report = StepReport {
                        stepsize: cfg.eta,
                        grad_norm_f: frobenius_norm(&param.grad)?,
                        update_norm_f,
                        v_after: None,
                        clamped: false,
                        floored: false,
                    };
                    (next, report)
                }
                Slot::Muon(state) => muon_step(&param.value, &param.grad, state, &cfg)?,
                Slot::Adago(state) => adago_step(&param.value, &param.grad, state, &cfg)?,
                Slot::Adam(state) => adam_step(&param.value, &param.grad, state, &adam_cfg)?,
                Slot::AdagradNorm(state) => {
                    adagrad_norm_step(&param.value, &param.grad, state, &cfg)?
                }
            };
            param.value = next;
            reports.push(report);
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests;
