//! Small differentiable models with hand-written backprop.
//!
//! Two architectures cover the benchmark scenarios: a bias-free linear map
//! (whose gradient has a closed form, making it the analysis workhorse) and a
//! two-layer MLP with a tanh-approximation GeLU. Gradients are produced by
//! explicit reverse-mode formulas and cross-checked against a central
//! finite-difference oracle.
//!
//! Loss conventions: the linear model uses the *summed* squared error
//! `L(W) = 1/2 sum_j ||W x_j - y_j||^2`, so its gradient is exactly
//! `(W - W*) X X^T` when the targets come from a linear teacher. The MLP
//! losses average over the batch so stepsizes keep a batch-size-free scale.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, nuclear_norm, Matrix};
use crate::rng::{stream_rng, Stream};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// How a parameter should be treated by structure-aware optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Two-dimensional weight; eligible for orthogonalized updates.
    MatrixParam,
    /// Bias or other one-dimensional parameter.
    VectorParam,
    /// Single scalar.
    ScalarParam,
}

/// One named parameter with its current value and gradient slot.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    fn new(name: &str, kind: ParamKind, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Param { name: name.to_string(), kind, value, grad }
    }
}

/// Ordered collection of parameters; the order is the update order and is
/// stable across runs.
#[derive(Debug, Clone)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn from_params(params: Vec<Param>) -> Self {
        ParamSet { params }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Matrix::zeros(p.value.rows(), p.value.cols());
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for p in &mut self.params {
            p.grad = p.grad.scale(c);
        }
    }

    /// Frobenius norm of the stacked (block-diagonal) gradient.
    pub fn grad_frobenius(&self) -> Result<f64> {
        let mut sq = 0.0;
        for p in &self.params {
            sq += frobenius_norm(&p.grad)?.powi(2);
        }
        Ok(sq.sqrt())
    }

    /// Nuclear norm of the stacked gradient: the sum of per-block nuclear
    /// norms (the singular values of a block-diagonal matrix are the union of
    /// the blocks' singular values).
    pub fn grad_nuclear(&self) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.params {
            if frobenius_norm(&p.grad)? > 0.0 {
                total += nuclear_norm(&p.grad)?;
            }
        }
        Ok(total)
    }

    /// FNV-1a hash over the bit patterns of all parameter values; used to
    /// detect stale forward caches.
    pub fn value_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for p in &self.params {
            for b in p.name.as_bytes() {
                eat(*b);
            }
            for x in p.value.data() {
                for b in x.to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }

    pub fn values(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: &[Matrix]) {
        assert_eq!(values.len(), self.params.len(), "value count mismatch");
        for (p, v) in self.params.iter_mut().zip(values) {
            assert!(p.value.same_shape(v), "value shape mismatch for {}", p.name);
            p.value = v.clone();
        }
    }

    /// Adds `c * delta` to every parameter value (`delta` aligned by index).
    pub fn add_scaled_values(&mut self, c: f64, delta: &[Matrix]) {
        assert_eq!(delta.len(), self.params.len(), "delta count mismatch");
        for (p, d) in self.params.iter_mut().zip(delta) {
            p.value.add_scaled(c, d);
        }
    }

    /// Standard-normal random direction with the same shapes as the values.
    pub fn random_direction(&self, rng: &mut impl rand::Rng) -> Vec<Matrix> {
        self.params
            .iter()
            .map(|p| {
                Matrix::from_fn(p.value.rows(), p.value.cols(), |_, _| {
                    StandardNormal.sample(rng)
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Bias-free linear map `x -> W x` with `W` of shape `d_out x d_in`.
    Linear { d_in: usize, d_out: usize },
    /// Two-layer perceptron `x -> W2 act(W1 x + b1) + b2`.
    Mlp { d_in: usize, hidden: usize, d_out: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// `1/2 sum_j ||r_j||^2` — summed over the batch (linear scenario).
    SquaredErrorSum,
    /// `1/(2B) sum_j ||r_j||^2` — batch-averaged.
    SquaredErrorMean,
    /// Batch-averaged softmax cross-entropy over integer labels.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub activation: Activation,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn linear(d_in: usize, d_out: usize) -> Self {
        ModelSpec {
            arch: Architecture::Linear { d_in, d_out },
            activation: Activation::Identity,
            loss: LossKind::SquaredErrorSum,
        }
    }

    pub fn mlp_regression(d_in: usize, hidden: usize, d_out: usize) -> Self {
        ModelSpec {
            arch: Architecture::Mlp { d_in, hidden, d_out },
            activation: Activation::Gelu,
            loss: LossKind::SquaredErrorMean,
        }
    }

    pub fn mlp_classifier(d_in: usize, hidden: usize, n_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::Mlp { d_in, hidden, d_out: n_classes },
            activation: Activation::Gelu,
            loss: LossKind::CrossEntropy,
        }
    }

    pub fn d_in(&self) -> usize {
        match self.arch {
            Architecture::Linear { d_in, .. } | Architecture::Mlp { d_in, .. } => d_in,
        }
    }

    pub fn d_out(&self) -> usize {
        match self.arch {
            Architecture::Linear { d_out, .. } | Architecture::Mlp { d_out, .. } => d_out,
        }
    }

    /// Whether the loss sums (rather than averages) over batch elements. A
    /// summed loss needs minibatch gradients rescaled by `n_full / b` to stay
    /// unbiased for the full-dataset gradient.
    pub fn loss_is_summed(&self) -> bool {
        self.loss == LossKind::SquaredErrorSum
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in() == 0 || self.d_out() == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if let Architecture::Mlp { hidden, .. } = self.arch {
            if hidden == 0 {
                return Err(Error::Config("hidden width must be positive".into()));
            }
        }
        if self.loss == LossKind::CrossEntropy && matches!(self.arch, Architecture::Linear { .. }) {
            return Err(Error::Config(
                "cross-entropy is only wired up for the MLP".into(),
            ));
        }
        Ok(())
    }

    /// Fresh parameters from the init stream of `seed`.
    ///
    /// The linear model draws standard-normal entries (matching the scale of
    /// the linear teacher); the MLP uses Glorot-style normal weights and zero
    /// biases.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut normal = |rows: usize, cols: usize, std: f64| {
            Matrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            })
        };
        match self.arch {
            Architecture::Linear { d_in, d_out } => ParamSet::from_params(vec![Param::new(
                "w",
                ParamKind::MatrixParam,
                normal(d_out, d_in, 1.0),
            )]),
            Architecture::Mlp { d_in, hidden, d_out } => {
                let s1 = (2.0 / (d_in + hidden) as f64).sqrt();
                let s2 = (2.0 / (hidden + d_out) as f64).sqrt();
                ParamSet::from_params(vec![
                    Param::new("w1", ParamKind::MatrixParam, normal(hidden, d_in, s1)),
                    Param::new("b1", ParamKind::VectorParam, Matrix::zeros(hidden, 1)),
                    Param::new("w2", ParamKind::MatrixParam, normal(d_out, hidden, s2)),
                    Param::new("b2", ParamKind::VectorParam, Matrix::zeros(d_out, 1)),
                ])
            }
        }
    }
}

/// Regression targets or class labels for a batch.
#[derive(Debug, Clone)]
pub enum Targets {
    Values(Matrix),
    Labels(Vec<usize>),
}

/// A batch of examples: `inputs` is `B x d_in`; targets are `B x d_out`
/// values or `B` integer labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.inputs.is_finite() {
            return Err(Error::InvalidInput("batch inputs contain non-finite values".into()));
        }
        let n = self.inputs.rows();
        let target_n = match &self.targets {
            Targets::Values(v) => {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(
                        "batch targets contain non-finite values".into(),
                    ));
                }
                v.rows()
            }
            Targets::Labels(l) => l.len(),
        };
        if n != target_n {
            return Err(Error::InvalidInput(format!(
                "batch has {n} inputs but {target_n} targets"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        Ok(())
    }

    /// Rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Batch {
        let inputs = Matrix::from_fn(indices.len(), self.inputs.cols(), |i, j| {
            self.inputs[(indices[i], j)]
        });
        let targets = match &self.targets {
            Targets::Values(v) => Targets::Values(Matrix::from_fn(
                indices.len(),
                v.cols(),
                |i, j| v[(indices[i], j)],
            )),
            Targets::Labels(l) => Targets::Labels(indices.iter().map(|&i| l[i]).collect()),
        };
        Batch { inputs, targets }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GeLU via the tanh approximation
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Gelu => gelu(x),
    }
}

fn activate_prime(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => 1.0,
        Activation::Gelu => gelu_prime(x),
    }
}

/// Batch-averaged softmax cross-entropy, stabilized with log-sum-exp.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax(z) - onehot(label)) / B`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let b = logits.rows();
    let k = logits.cols();
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, k);
    for i in 0..b {
        let label = labels[i];
        if label >= k {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let row = logits.row(i);
        let zmax = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
        let sum_exp: f64 = row.iter().map(|&z| (z - zmax).exp()).sum();
        let lse = zmax + sum_exp.ln();
        loss += lse - row[label];
        for j in 0..k {
            let softmax = (row[j] - zmax).exp() / sum_exp;
            grad[(i, j)] = (softmax - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Activations retained by [`forward`] for the matching [`backward`] call.
///
/// The cache is tied to the exact parameter values that produced it; calling
/// `backward` after the parameters changed is a contract violation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    checksum: u64,
    inputs: Matrix,
    /// dL/d(output), already including the loss scaling.
    d_output: Matrix,
    /// MLP only: pre-activation and post-activation of the hidden layer.
    hidden: Option<(Matrix, Matrix)>,
}

/// Runs the model on a batch and returns `(loss, cache)`.
pub fn forward(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, ForwardCache)> {
    spec.validate()?;
    batch.validate()?;
    if batch.inputs.cols() != spec.d_in() {
        return Err(Error::InvalidInput(format!(
            "batch has {} input columns, model expects {}",
            batch.inputs.cols(),
            spec.d_in()
        )));
    }
    let b = batch.len();

    let (output, hidden) = match spec.arch {
        Architecture::Linear { .. } => {
            let w = &params.get("w").ok_or_else(|| missing("w"))?.value;
            (batch.inputs.matmul(&w.transpose()), None)
        }
        Architecture::Mlp { .. } => {
            let w1 = &params.get("w1").ok_or_else(|| missing("w1"))?.value;
            let b1 = &params.get("b1").ok_or_else(|| missing("b1"))?.value;
            let w2 = &params.get("w2").ok_or_else(|| missing("w2"))?.value;
            let b2 = &params.get("b2").ok_or_else(|| missing("b2"))?.value;
            let mut pre = batch.inputs.matmul(&w1.transpose());
            for i in 0..b {
                for j in 0..pre.cols() {
                    pre[(i, j)] += b1[(j, 0)];
                }
            }
            let act = pre.map(|x| activate(spec.activation, x));
            let mut out = act.matmul(&w2.transpose());
            for i in 0..b {
                for j in 0..out.cols() {
                    out[(i, j)] += b2[(j, 0)];
                }
            }
            (out, Some((pre, act)))
        }
    };

    let (loss, d_output) = match (&spec.loss, &batch.targets) {
        (LossKind::CrossEntropy, Targets::Labels(labels)) => cross_entropy(&output, labels)?,
        (LossKind::CrossEntropy, Targets::Values(_)) => {
            return Err(Error::InvalidInput(
                "cross-entropy needs integer labels, got value targets".into(),
            ))
        }
        (loss_kind, Targets::Values(y)) => {
            if !y.same_shape(&output) {
                return Err(Error::InvalidInput(format!(
                    "targets are {}x{}, model outputs {}x{}",
                    y.rows(),
                    y.cols(),
                    output.rows(),
                    output.cols()
                )));
            }
            let residual = output.sub(y);
            let sq: f64 = residual.data().iter().map(|r| r * r).sum();
            match loss_kind {
                LossKind::SquaredErrorSum => (0.5 * sq, residual),
                LossKind::SquaredErrorMean => {
                    (0.5 * sq / b as f64, residual.scale(1.0 / b as f64))
                }
                LossKind::CrossEntropy => unreachable!(),
            }
        }
        (_, Targets::Labels(_)) => {
            return Err(Error::InvalidInput(
                "squared-error losses need value targets, got labels".into(),
            ))
        }
    };

    if !loss.is_finite() {
        return Err(Error::NumericFailure("forward produced a non-finite loss".into()));
    }

    Ok((
        loss,
        ForwardCache {
            checksum: params.value_checksum(),
            inputs: batch.inputs.clone(),
            d_output,
            hidden,
        },
    ))
}

/// Fills the gradient slots of `params` from a forward cache.
pub fn backward(spec: &ModelSpec, params: &mut ParamSet, cache: &ForwardCache) -> Result<()> {
    if cache.checksum != params.value_checksum() {
        return Err(Error::Contract(
            "backward called with a cache from different parameter values".into(),
        ));
    }
    match spec.arch {
        Architecture::Linear { .. } => {
            let grad_w = cache.d_output.transpose().matmul(&cache.inputs);
            let w = params
                .params_mut()
                .iter_mut()
                .find(|p| p.name == "w")
                .ok_or_else(|| missing("w"))?;
            w.grad = grad_w;
        }
        Architecture::Mlp { .. } => {
            let (pre, act) = cache.hidden.as_ref().ok_or_else(|| {
                Error::Contract("MLP backward needs the hidden-layer cache".into())
            })?;
            let w2 = params.get("w2").ok_or_else(|| missing("w2"))?.value.clone();

            let grad_w2 = cache.d_output.transpose().matmul(act);
            let grad_b2 = column_sums(&cache.d_output);
            let d_hidden = cache.d_output.matmul(&w2);
            let mut d_pre = d_hidden;
            for i in 0..d_pre.rows() {
                for j in 0..d_pre.cols() {
                    d_pre[(i, j)] *= activate_prime(spec.activation, pre[(i, j)]);
                }
            }
            let grad_w1 = d_pre.transpose().matmul(&cache.inputs);
            let grad_b1 = column_sums(&d_pre);

            for p in params.params_mut() {
                p.grad = match p.name.as_str() {
                    "w1" => grad_w1.clone(),
                    "b1" => grad_b1.clone(),
                    "w2" => grad_w2.clone(),
                    "b2" => grad_b2.clone(),
                    other => {
                        return Err(Error::Contract(format!("unexpected parameter {other}")))
                    }
                };
            }
        }
    }
    Ok(())
}

/// Central-difference gradient oracle.
///
/// Perturbs one coordinate at a time with a value-scaled step
/// `h_i = h (1 + |theta_i|)` and returns gradients aligned with the parameter
/// order. Exact for losses quadratic in the parameters, `O(h^2)` otherwise.
pub fn finite_difference_gradient(
    spec: &ModelSpec,
    params: &ParamSet,
    batch: &Batch,
    h: f64,
) -> Result<Vec<Matrix>> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let mut work = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let (rows, cols) = {
            let v = &params.params()[idx].value;
            (v.rows(), v.cols())
        };
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let theta = params.params()[idx].value[(i, j)];
                let hi = h * (1.0 + theta.abs());
                let plus = theta + hi;
                let minus = theta - hi;

                work.params_mut()[idx].value[(i, j)] = plus;
                let (lp, _) = forward(spec, &work, batch)?;
                work.params_mut()[idx].value[(i, j)] = minus;
                let (lm, _) = forward(spec, &work, batch)?;
                work.params_mut()[idx].value[(i, j)] = theta;

                g[(i, j)] = (lp - lm) / (plus - minus);
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.cols(), 1);
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out[(j, 0)] += m[(i, j)];
        }
    }
    out
}

fn missing(name: &str) -> Error {
    Error::Contract(format!("parameter {name} missing from ParamSet"))
}
