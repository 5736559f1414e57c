//! Instruments that check the analytical story behind the optimizers on
//! live runs: the accumulator log-sum bound, the smoothness descent lemma,
//! closed-form contraction factors for (orthogonalized) gradient descent on
//! linear regression, empirical convergence-rate slopes, and minibatch
//! noise-variance estimates.
//!
//! Everything here is read-only analysis over [`Trajectory`] telemetry or a
//! model snapshot; nothing feeds back into training.

use crate::data::{sample_minibatch, BatchSchedule};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_norm, nuclear_norm, orthogonalize_exact, spectral_norm, svd_reduced, Matrix,
};
use crate::models::{backward, forward, Batch, ModelSpec, ParamSet};
use crate::rng::{stream_rng, Stream};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Version stamp written into every telemetry CSV row.
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// One logged training step. `train_loss` and `grad_norm_nuclear` describe
/// the state *entering* step `t` (full-batch quantities at the pre-step
/// iterate — the sequence the convergence statements average), while
/// `grad_norm_f`, `stepsize` and the flags describe the stochastic action
/// taken at step `t` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub t: u64,
    /// Full-batch training loss at the pre-step iterate.
    pub train_loss: f64,
    /// Test loss at the pre-step iterate, when a test split exists.
    pub test_loss: Option<f64>,
    /// Frobenius norm of the stochastic gradient consumed by step `t`.
    pub grad_norm_f: f64,
    /// Nuclear norm of the full-batch gradient at the pre-step iterate.
    pub grad_norm_nuclear: f64,
    /// Stepsize applied at step `t` (minimum across matrix parameters).
    pub stepsize: f64,
    /// Accumulator after step `t` (maximum across parameters), when the
    /// optimizer keeps one.
    pub v: Option<f64>,
    /// Whether any parameter's gradient norm hit the clamp.
    pub clamped: bool,
    /// Whether any parameter's stepsize came from the floor.
    pub floored: bool,
    /// Distance to the teacher weights (linear scenario only).
    pub dist_w: Option<f64>,
    /// Predicted per-step contraction factor (linear GD/OGD only).
    pub contraction: Option<f64>,
    /// Seconds elapsed since the run started.
    pub wall_time_s: f64,
}

/// Ordered per-step telemetry for one seed of one run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    records: Vec<StepRecord>,
}

impl Trajectory {
    pub const COLUMNS: &'static str = "schema_version,t,train_loss,test_loss,grad_norm_f,\
                                       grad_norm_nuclear,stepsize,v,clamped,floored,dist_w,\
                                       contraction,wall_time_s";

    pub fn new() -> Self {
        Trajectory::default()
    }

    /// Appends a record, enforcing the telemetry invariants: step indices
    /// strictly increase and the accumulator never shrinks.
    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.t <= last.t {
                return Err(Error::Contract(format!(
                    "step index must increase: {} after {}",
                    record.t, last.t
                )));
            }
            if let (Some(prev), Some(next)) = (last.v, record.v) {
                if next < prev {
                    return Err(Error::Contract(format!(
                        "accumulator must be nondecreasing: {next} after {prev} at t={}",
                        record.t
                    )));
                }
            }
        } else if record.t == 0 {
            return Err(Error::Contract("step indices are 1-based".into()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", Self::COLUMNS)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                TRAJECTORY_SCHEMA_VERSION,
                r.t,
                r.train_loss,
                fmt_opt(r.test_loss),
                r.grad_norm_f,
                r.grad_norm_nuclear,
                r.stepsize,
                fmt_opt(r.v),
                r.clamped,
                r.floored,
                fmt_opt(r.dist_w),
                fmt_opt(r.contraction),
                r.wall_time_s,
            )?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty trajectory file".into()))??;
        if header.trim() != Self::COLUMNS.replace(' ', "") {
            return Err(Error::InvalidInput(format!("unrecognized trajectory header: {header}")));
        }
        let mut traj = Trajectory::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 13 {
                return Err(Error::InvalidInput(format!(
                    "trajectory row has {} fields, expected 13",
                    fields.len()
                )));
            }
            let record = StepRecord {
                t: parse(fields[1])?,
                train_loss: parse(fields[2])?,
                test_loss: parse_opt(fields[3])?,
                grad_norm_f: parse(fields[4])?,
                grad_norm_nuclear: parse(fields[5])?,
                stepsize: parse(fields[6])?,
                v: parse_opt(fields[7])?,
                clamped: parse(fields[8])?,
                floored: parse(fields[9])?,
                dist_w: parse_opt(fields[10])?,
                contraction: parse_opt(fields[11])?,
                wall_time_s: parse(fields[12])?,
            };
            traj.push(record)?;
        }
        Ok(traj)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::InvalidInput(format!("bad field '{s}' in trajectory CSV")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s).map(Some)
    }
}

/// Checks `sum_t a_t / S_t <= ln(S_T / a_1) + 1` for nonnegative `a` with
/// `a_1 > 0`, where `S_t` is the running sum. Returns `(lhs, rhs, holds)`.
///
/// This elementary inequality is what keeps the accumulator-weighted updates
/// summable: with `a_t = min{||G_t||^2, gamma^2}` and `a_1 = v_0^2` the
/// left-hand side is exactly the sum of squared adaptive stepsizes over eta^2.
pub fn log_sum_bound_check(a: &[f64]) -> Result<(f64, f64, bool)> {
    let first = *a
        .first()
        .ok_or_else(|| Error::InvalidInput("log-sum check needs at least one term".into()))?;
    if !(first > 0.0 && first.is_finite()) {
        return Err(Error::InvalidInput(format!("first term must be positive, got {first}")));
    }
    let mut running = 0.0;
    let mut lhs = 0.0;
    for (i, &value) in a.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "term {i} must be finite and nonnegative, got {value}"
            )));
        }
        running += value;
        lhs += value / running;
    }
    let rhs = (running / first).ln() + 1.0;
    Ok((lhs, rhs, lhs <= rhs + 1e-12))
}

/// Applies [`log_sum_bound_check`] to a live run's accumulator column. The
/// per-step terms are recovered as `a_t = v_t^2 - v_{t-1}^2` (exact even when
/// steps were logged sparsely, since consecutive increments just merge), with
/// `a_1 = v_0^2` as the leading term.
pub fn trajectory_log_sum_check(traj: &Trajectory, v0: f64) -> Result<(f64, f64, bool)> {
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::InvalidInput(format!("v0 must be positive, got {v0}")));
    }
    let mut terms = vec![v0 * v0];
    let mut prev_sq = v0 * v0;
    for record in traj.records() {
        let v = record.v.ok_or_else(|| {
            Error::InvalidInput(format!(
                "record at t={} has no accumulator column; log-sum check needs one",
                record.t
            ))
        })?;
        let increment = v * v - prev_sq;
        if increment < -1e-9 {
            return Err(Error::Contract(format!(
                "accumulator shrank by {increment} at t={}",
                record.t
            )));
        }
        terms.push(increment.max(0.0));
        prev_sq = v * v;
    }
    log_sum_bound_check(&terms)
}

/// Evaluates both sides of the descent lemma
/// `L(p + step * dir) <= L(p) + <grad L(p), step * dir> +
/// (lipschitz / 2) * ||step * dir||_2^2` on the given batch and reports
/// `(lhs, rhs, holds)`. Multi-parameter models are treated block-diagonally:
/// inner products add up, the step's spectral norm is the max over blocks.
pub fn descent_lemma_check(
    spec: &ModelSpec,
    params: &ParamSet,
    batch: &Batch,
    direction: &[Matrix],
    step: f64,
    lipschitz: f64,
    tol: f64,
) -> Result<(f64, f64, bool)> {
    if direction.len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "direction has {} blocks but the model has {} parameters",
            direction.len(),
            params.len()
        )));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lipschitz estimate must be nonnegative, got {lipschitz}"
        )));
    }
    let mut work = params.clone();
    let (loss_at, cache) = forward(spec, &work, batch)?;
    backward(spec, &mut work, &cache)?;

    let mut inner = 0.0;
    let mut step_spectral: f64 = 0.0;
    for (p, d) in work.params().iter().zip(direction) {
        if !p.value.same_shape(d) {
            return Err(Error::InvalidInput(format!(
                "direction block for '{}' has the wrong shape",
                p.name
            )));
        }
        inner += p.grad.dot(d) * step;
        let block = frobenius_norm(d)?;
        if block > 0.0 {
            step_spectral = step_spectral.max(step.abs() * spectral_norm(d)?);
        }
    }

    work.add_scaled_values(step, direction);
    let (loss_after, _) = forward(spec, &work, batch)?;
    let rhs = loss_at + inner + 0.5 * lipschitz * step_spectral * step_spectral;
    Ok((loss_after, rhs, loss_after <= rhs + tol))
}

/// Empirical smoothness constant: the largest observed ratio
/// `||grad L(p) - grad L(p')||_* / ||p - p'||_2` over random parameter pairs
/// inside a ball of the given radius around `params`. Diagnostics-only; the
/// optimizers never see it.
pub fn estimate_lipschitz(
    spec: &ModelSpec,
    params: &ParamSet,
    batch: &Batch,
    n_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("need at least one probe pair".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let mut rng = stream_rng(seed, Stream::Probe, 0);
    let base = params.values();
    let mut work = params.clone();
    let mut worst: f64 = 0.0;

    let grad_at = |work: &mut ParamSet, point: &[Matrix]| -> Result<Vec<Matrix>> {
        work.set_values(point);
        let (_, cache) = forward(spec, work, batch)?;
        backward(spec, work, &cache)?;
        Ok(work.params().iter().map(|p| p.grad.clone()).collect())
    };

    for _ in 0..n_pairs {
        let a = perturb(&base, params, radius, &mut rng)?;
        let b = perturb(&base, params, radius, &mut rng)?;
        let grad_a = grad_at(&mut work, &a)?;
        let grad_b = grad_at(&mut work, &b)?;

        let mut grad_diff_nuclear = 0.0;
        let mut point_diff_spectral: f64 = 0.0;
        for ((ga, gb), (pa, pb)) in grad_a.iter().zip(&grad_b).zip(a.iter().zip(&b)) {
            let gd = ga.sub(gb);
            if frobenius_norm(&gd)? > 0.0 {
                grad_diff_nuclear += nuclear_norm(&gd)?;
            }
            let pd = pa.sub(pb);
            if frobenius_norm(&pd)? > 0.0 {
                point_diff_spectral = point_diff_spectral.max(spectral_norm(&pd)?);
            }
        }
        if point_diff_spectral > 1e-12 {
            worst = worst.max(grad_diff_nuclear / point_diff_spectral);
        }
    }
    Ok(worst)
}

fn perturb(
    base: &[Matrix],
    params: &ParamSet,
    radius: f64,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Matrix>> {
    let direction = params.random_direction(rng);
    let mut total_sq = 0.0;
    for d in &direction {
        let n = frobenius_norm(d)?;
        total_sq += n * n;
    }
    let total = total_sq.sqrt().max(1e-12);
    let scale: f64 = radius * rng.gen::<f64>() / total;
    Ok(base
        .iter()
        .zip(&direction)
        .map(|(b, d)| {
            let mut point = b.clone();
            point.add_scaled(scale, d);
            point
        })
        .collect())
}

/// Predicted one-step contraction factor of plain GD on the noiseless linear
/// scenario: `||I - eta * X X^T||_2`, where `X` is the `d_in x n` design.
pub fn contraction_factor_gd(x: &Matrix, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let gram = x.matmul(&x.transpose());
    let mut shifted = Matrix::identity(gram.rows());
    shifted.add_scaled(-eta, &gram);
    spectral_norm(&shifted)
}

/// The positive-definite preconditioner that links orthogonalization to a
/// metric change: `P = V S V^T + sigma_max (I - V V^T)` built from the
/// reduced SVD of the gradient. Returns `(P, P^{-1})`; every eigenvalue of
/// `P` lies between the smallest and largest nonzero singular values of the
/// gradient, and `Orth(G) = G P^{-1}`.
pub fn ogd_preconditioner(grad: &Matrix) -> Result<(Matrix, Matrix)> {
    let svd = svd_reduced(grad)?;
    let d = grad.cols();
    let sigma_max = svd.sigma[0];
    let mut p = Matrix::zeros(d, d);
    let mut p_inv = Matrix::zeros(d, d);
    // Start from the orthogonal-complement part sigma_max * (I - V V^T).
    let v = &svd.v;
    let vvt = v.matmul(&v.transpose());
    for i in 0..d {
        for j in 0..d {
            let complement = (if i == j { 1.0 } else { 0.0 }) - vvt[(i, j)];
            p[(i, j)] = sigma_max * complement;
            p_inv[(i, j)] = complement / sigma_max;
        }
    }
    // Add V S V^T and V S^{-1} V^T column by column.
    for (k, &s) in svd.sigma.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                let outer = v[(i, k)] * v[(j, k)];
                p[(i, j)] += s * outer;
                p_inv[(i, j)] += outer / s;
            }
        }
    }
    Ok((p, p_inv))
}

/// Predicted one-step contraction factor of orthogonalized GD on the linear
/// scenario: `||I - eta * X X^T P^{-1}||_2` with `P` from
/// [`ogd_preconditioner`] at the current gradient.
pub fn contraction_factor_ogd(x: &Matrix, grad_at_w: &Matrix, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let (_, p_inv) = ogd_preconditioner(grad_at_w)?;
    let gram = x.matmul(&x.transpose());
    let mut shifted = Matrix::identity(gram.rows());
    shifted.add_scaled(-eta, &gram.matmul(&p_inv));
    spectral_norm(&shifted)
}

/// Which running statistic of the full-gradient nuclear norm a slope fit
/// tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMetric {
    /// `(1/T) sum_{t<=T} ||grad L(theta_{t-1})||_*` — the quantity the
    /// convergence guarantees bound.
    AvgNuclearGrad,
    /// `min_{t<=T} ||grad L(theta_{t-1})||_*` — the optimistic variant.
    MinNuclearGrad,
}

/// Result of a log-log least-squares fit of a running metric against `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (u64, u64),
}

/// Fits `ln metric(T) ~ slope * ln T + intercept` over `n_points`
/// geometrically spaced horizons inside `window`. The trajectory must carry
/// per-step telemetry (contiguous `t`), since running averages are over all
/// iterations up to `T`. Nonpositive metric values are excluded (with a
/// warning) before fitting.
pub fn rate_slope_fit(
    traj: &Trajectory,
    metric: RateMetric,
    window: (u64, u64),
    n_points: usize,
) -> Result<RateFit> {
    let (t_min, t_max) = window;
    if n_points < 10 {
        return Err(Error::InvalidInput("slope fits need at least 10 sample points".into()));
    }
    if t_min < 1 || t_min >= t_max {
        return Err(Error::InvalidInput(format!("bad window ({t_min}, {t_max})")));
    }
    let records = traj.records();
    if records.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let first_t = records[0].t;
    for (i, r) in records.iter().enumerate() {
        if r.t != first_t + i as u64 {
            return Err(Error::InvalidInput(
                "slope fit needs contiguous per-step telemetry (log_every = 1)".into(),
            ));
        }
    }
    if first_t != 1 {
        return Err(Error::InvalidInput("slope fit needs telemetry starting at t = 1".into()));
    }
    if t_max > records.last().unwrap().t {
        return Err(Error::InvalidInput(format!(
            "window end {t_max} exceeds the trajectory length {}",
            records.last().unwrap().t
        )));
    }

    // Geometric grid of horizons, deduplicated after rounding.
    let ratio = t_max as f64 / t_min as f64;
    let mut horizons: Vec<u64> = (0..n_points)
        .map(|i| {
            let frac = i as f64 / (n_points - 1) as f64;
            ((t_min as f64) * ratio.powf(frac)).round() as u64
        })
        .collect();
    horizons.dedup();
    if horizons.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "window ({t_min}, {t_max}) only yields {} distinct horizons; need 10",
            horizons.len()
        )));
    }

    let mut points = Vec::with_capacity(horizons.len());
    let mut running_sum = 0.0;
    let mut running_min = f64::INFINITY;
    let mut next = horizons.iter().peekable();
    for r in records {
        running_sum += r.grad_norm_nuclear;
        running_min = running_min.min(r.grad_norm_nuclear);
        while next.peek().is_some_and(|&&h| h == r.t) {
            let value = match metric {
                RateMetric::AvgNuclearGrad => running_sum / r.t as f64,
                RateMetric::MinNuclearGrad => running_min,
            };
            points.push((r.t, value));
            next.next();
        }
    }

    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, m)| *m > 0.0)
        .map(|(t, m)| ((*t as f64).ln(), m.ln()))
        .collect();
    let excluded = points.len() - usable.len();
    if excluded > 0 {
        eprintln!("rate_slope_fit: excluded {excluded} nonpositive metric values");
    }
    if usable.len() < 2 {
        return Err(Error::DegenerateInput(
            "fewer than 2 positive metric values in the fit window".into(),
        ));
    }

    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in &usable {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("degenerate horizon grid".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = usable
        .iter()
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit { slope, intercept, r_squared, window })
}

/// Monte-Carlo estimate of the minibatch gradient noise
/// `E ||G_b - grad L||_F^2` at the current parameters, drawing `n_draws`
/// batches of size `b` without replacement. Summed losses scale minibatch
/// gradients by `n/b` so the estimator is unbiased for the full gradient.
pub fn noise_variance_estimate(
    spec: &ModelSpec,
    params: &ParamSet,
    train: &Batch,
    b: usize,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    let n = train.len();
    if b == 0 || b > n {
        return Err(Error::InvalidInput(format!(
            "batch size {b} must lie in [1, {n}]"
        )));
    }
    if n_draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let mut work = params.clone();
    let (_, cache) = forward(spec, &work, train)?;
    backward(spec, &mut work, &cache)?;
    let full: Vec<Matrix> = work.params().iter().map(|p| p.grad.clone()).collect();

    let scale = if spec.loss_is_summed() { n as f64 / b as f64 } else { 1.0 };
    let mut total = 0.0;
    for draw in 0..n_draws {
        let idx = sample_minibatch(BatchSchedule::Constant(b), n, seed, draw as u64 + 1)?;
        let minibatch = train.subset(&idx);
        let (_, cache) = forward(spec, &work, &minibatch)?;
        backward(spec, &mut work, &cache)?;
        for (p, f) in work.params().iter().zip(&full) {
            let mut diff = p.grad.scale(scale);
            diff.add_scaled(-1.0, f);
            let norm = frobenius_norm(&diff)?;
            total += norm * norm;
        }
    }
    Ok(total / n_draws as f64)
}

/// Convenience wrapper for checking that the exact orthogonalization of a
/// gradient coincides with multiplying by the preconditioner inverse.
pub fn orthogonalization_identity_gap(grad: &Matrix) -> Result<f64> {
    let (_, p_inv) = ogd_preconditioner(grad)?;
    let via_p = grad.matmul(&p_inv);
    let direct = orthogonalize_exact(grad)?;
    Ok(via_p.sub(&direct).max_abs())
}

#[cfg(test)]
mod tests;
