//! Synthetic benchmark datasets and minibatch sampling.
//!
//! Three generators cover the benchmark scenarios:
//!
//! * **GRF regression** — targets are draws from a Gaussian random field
//!   with a squared-exponential kernel, realized through random Fourier
//!   features so the function can be evaluated anywhere.
//! * **Linear regression** — a noiseless teacher `y = W* x` with Gaussian
//!   inputs, kept well conditioned so closed-form gradient identities hold.
//! * **Blob classification** — Gaussian clusters around well-separated
//!   class centers, labeled by cluster.
//!
//! Dataset randomness is keyed by the dataset seed alone, so every run seed
//! sees the same data; minibatch sampling is keyed by the run seed and the
//! step index, so resampling step `t` is reproducible in isolation.

use crate::error::{Error, Result};
use crate::linalg::{svd_reduced, Matrix};
use crate::models::{Batch, Targets};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Which generator produced (or should produce) a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Grf,
    Linear,
    Blobs,
}

/// Full recipe for a dataset. Two equal specs generate bit-identical data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub d_in: usize,
    /// Output width for regression, number of classes for blobs.
    pub d_out: usize,
    /// Seed for data generation only; independent of optimizer run seeds.
    pub seed: u64,
    /// Fraction of samples held out for evaluation, in (0, 1).
    pub test_fraction: f64,
    /// Kernel lengthscale for the GRF; `None` means `sqrt(d_in)`.
    pub kernel_lengthscale: Option<f64>,
    /// Random Fourier feature count backing the GRF.
    pub n_features: usize,
    /// Within-cluster standard deviation for blobs.
    pub blob_noise: f64,
}

impl DatasetSpec {
    pub fn grf(n_samples: usize, d_in: usize, d_out: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::Grf,
            n_samples,
            d_in,
            d_out,
            seed,
            test_fraction: 0.2,
            kernel_lengthscale: None,
            n_features: 512,
            blob_noise: 0.3,
        }
    }

    pub fn linear(n_samples: usize, d_in: usize, d_out: usize, seed: u64) -> Self {
        DatasetSpec { kind: DatasetKind::Linear, ..Self::grf(n_samples, d_in, d_out, seed) }
    }

    pub fn blobs(n_samples: usize, d_in: usize, classes: usize, seed: u64) -> Self {
        DatasetSpec { kind: DatasetKind::Blobs, ..Self::grf(n_samples, d_in, classes, seed) }
    }

    pub fn lengthscale(&self) -> f64 {
        self.kernel_lengthscale.unwrap_or_else(|| (self.d_in as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("need at least 2 samples to split".into()));
        }
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config("dataset dimensions must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.kind == DatasetKind::Grf && self.n_features == 0 {
            return Err(Error::Config("GRF needs at least one Fourier feature".into()));
        }
        if let Some(l) = self.kernel_lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lengthscale must be positive, got {l}")));
            }
        }
        if self.kind == DatasetKind::Blobs {
            if self.d_out < 2 {
                return Err(Error::Config("blob classification needs at least 2 classes".into()));
            }
            if !(self.blob_noise > 0.0 && self.blob_noise.is_finite()) {
                return Err(Error::Config(format!(
                    "blob_noise must be positive, got {}",
                    self.blob_noise
                )));
            }
        }
        Ok(())
    }

    fn n_test(&self) -> usize {
        ((self.n_samples as f64 * self.test_fraction).round() as usize)
            .clamp(1, self.n_samples - 1)
    }
}

/// A train/test split plus the recipe that produced it. For linear datasets
/// the teacher weights are kept so distance-to-optimum can be tracked.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Batch,
    pub test: Batch,
    pub spec: DatasetSpec,
    pub teacher: Option<Matrix>,
}

/// A sample from a squared-exponential Gaussian random field, realized with
/// random Fourier features: `f(x) = sqrt(2 / F) * W cos(Omega x + b)`. With
/// `Omega` rows drawn `N(0, I / lengthscale^2)`, phases uniform on `[0, 2pi)`
/// and `W` standard normal, any two evaluations have covariance
/// `exp(-||x - x'||^2 / (2 lengthscale^2))` per output coordinate.
#[derive(Debug, Clone)]
pub struct GrfFunction {
    weights: Matrix,
    omega: Matrix,
    phase: Vec<f64>,
    scale: f64,
}

impl GrfFunction {
    pub fn sample(
        d_in: usize,
        d_out: usize,
        n_features: usize,
        lengthscale: f64,
        rng: &mut impl Rng,
    ) -> Result<GrfFunction> {
        if d_in == 0 || d_out == 0 || n_features == 0 {
            return Err(Error::Config("GRF dimensions must be positive".into()));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Config(format!("lengthscale must be positive, got {lengthscale}")));
        }
        let omega = Matrix::from_fn(n_features, d_in, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z / lengthscale
        });
        let phase: Vec<f64> =
            (0..n_features).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
        let weights = Matrix::from_fn(d_out, n_features, |_, _| StandardNormal.sample(rng));
        Ok(GrfFunction { weights, omega, phase, scale: (2.0 / n_features as f64).sqrt() })
    }

    /// Evaluates the field at every row of `inputs` (`n x d_in`), returning
    /// an `n x d_out` matrix.
    pub fn eval_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.omega.cols() {
            return Err(Error::InvalidInput(format!(
                "GRF expects {} input columns, got {}",
                self.omega.cols(),
                inputs.cols()
            )));
        }
        // features[i][j] = cos(omega_j . x_i + b_j)
        let projected = inputs.matmul(&self.omega.transpose());
        let features = Matrix::from_fn(projected.rows(), projected.cols(), |i, j| {
            (projected[(i, j)] + self.phase[j]).cos()
        });
        Ok(features.matmul(&self.weights.transpose()).scale(self.scale))
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Smallest acceptable singular value for the training design matrix of a
/// linear dataset; Gaussian draws essentially never violate it, but a retry
/// guard keeps the guarantee unconditional.
const MIN_DESIGN_SINGULAR_VALUE: f64 = 1e-8;
const MAX_DESIGN_RETRIES: u64 = 8;

/// Generates the dataset described by `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<SplitDataset> {
    spec.validate()?;
    match spec.kind {
        DatasetKind::Grf => generate_grf(spec),
        DatasetKind::Linear => generate_linear(spec),
        DatasetKind::Blobs => generate_blobs(spec),
    }
}

fn split(spec: &DatasetSpec, inputs: Matrix, targets: Targets) -> SplitDataset {
    let n_test = spec.n_test();
    let n_train = spec.n_samples - n_test;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..spec.n_samples).collect();
    let all = Batch { inputs, targets };
    SplitDataset {
        train: all.subset(&train_idx),
        test: all.subset(&test_idx),
        spec: spec.clone(),
        teacher: None,
    }
}

fn generate_grf(spec: &DatasetSpec) -> Result<SplitDataset> {
    let mut rng = stream_rng(spec.seed, Stream::Data, 0);
    let field =
        GrfFunction::sample(spec.d_in, spec.d_out, spec.n_features, spec.lengthscale(), &mut rng)?;
    let inputs = gaussian_matrix(&mut rng, spec.n_samples, spec.d_in);
    let targets = field.eval_batch(&inputs)?;
    Ok(split(spec, inputs, Targets::Values(targets)))
}

fn generate_linear(spec: &DatasetSpec) -> Result<SplitDataset> {
    let n_train = spec.n_samples - spec.n_test();
    if n_train < spec.d_in {
        return Err(Error::Config(format!(
            "linear dataset needs at least d_in = {} training samples, got {n_train}",
            spec.d_in
        )));
    }
    for attempt in 0..MAX_DESIGN_RETRIES {
        let mut rng = stream_rng(spec.seed, Stream::Data, attempt);
        let teacher = gaussian_matrix(&mut rng, spec.d_out, spec.d_in);
        let inputs = gaussian_matrix(&mut rng, spec.n_samples, spec.d_in);
        let train_inputs = Matrix::from_fn(n_train, spec.d_in, |i, j| inputs[(i, j)]);
        let svd = svd_reduced(&train_inputs)?;
        let full_rank = svd.k == spec.d_in;
        let sigma_min = svd.sigma.last().copied().unwrap_or(0.0);
        if !full_rank || sigma_min <= MIN_DESIGN_SINGULAR_VALUE {
            continue;
        }
        let targets = inputs.matmul(&teacher.transpose());
        let mut dataset = split(spec, inputs, Targets::Values(targets));
        dataset.teacher = Some(teacher);
        return Ok(dataset);
    }
    Err(Error::NumericFailure(format!(
        "could not draw a well-conditioned design matrix in {MAX_DESIGN_RETRIES} attempts"
    )))
}

fn generate_blobs(spec: &DatasetSpec) -> Result<SplitDataset> {
    let mut rng = stream_rng(spec.seed, Stream::Data, 0);
    // Centers are spread well beyond the within-cluster noise so the classes
    // are learnable but not linearly trivial in every draw.
    let centers = gaussian_matrix(&mut rng, spec.d_out, spec.d_in).scale(3.0);
    let labels: Vec<usize> = (0..spec.n_samples).map(|_| rng.gen_range(0..spec.d_out)).collect();
    let noise = gaussian_matrix(&mut rng, spec.n_samples, spec.d_in);
    let inputs = Matrix::from_fn(spec.n_samples, spec.d_in, |i, j| {
        centers[(labels[i], j)] + spec.blob_noise * noise[(i, j)]
    });
    Ok(split(spec, inputs, Targets::Labels(labels)))
}

/// How many samples each step's minibatch contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BatchSchedule {
    /// Fixed size, clipped to the training set.
    Constant(usize),
    /// `ceil(sqrt(t))` at step `t` (1-based).
    SqrtT,
    /// `t` at step `t`, i.e. linearly growing.
    LinearT,
    /// The whole training set, in order (deterministic full-batch).
    Full,
}

impl BatchSchedule {
    /// Batch size at 1-based step `t` for a training set of `n_train` rows.
    pub fn batch_size_at(&self, t: u64, n_train: usize) -> usize {
        let raw = match self {
            BatchSchedule::Constant(b) => *b as u64,
            BatchSchedule::SqrtT => (t as f64).sqrt().ceil() as u64,
            BatchSchedule::LinearT => t,
            BatchSchedule::Full => n_train as u64,
        };
        (raw.max(1) as usize).min(n_train)
    }

    pub fn is_full(&self) -> bool {
        matches!(self, BatchSchedule::Full)
    }
}

impl fmt::Display for BatchSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSchedule::Constant(b) => write!(f, "{b}"),
            BatchSchedule::SqrtT => f.write_str("sqrt-t"),
            BatchSchedule::LinearT => f.write_str("linear-t"),
            BatchSchedule::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for BatchSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt-t" => Ok(BatchSchedule::SqrtT),
            "linear-t" => Ok(BatchSchedule::LinearT),
            "full" => Ok(BatchSchedule::Full),
            other => other
                .parse::<usize>()
                .map_err(|_| {
                    Error::Config(format!(
                        "batch schedule must be a size, 'sqrt-t', 'linear-t', or 'full'; \
                         got '{other}'"
                    ))
                })
                .and_then(|b| {
                    if b == 0 {
                        Err(Error::Config("batch size must be positive".into()))
                    } else {
                        Ok(BatchSchedule::Constant(b))
                    }
                }),
        }
    }
}

impl From<BatchSchedule> for String {
    fn from(s: BatchSchedule) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for BatchSchedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Draws the minibatch index set for step `t` (without replacement, partial
/// Fisher–Yates). The full schedule returns the whole range in order so
/// full-batch runs are exactly deterministic.
pub fn sample_minibatch(
    schedule: BatchSchedule,
    n_train: usize,
    seed: u64,
    t: u64,
) -> Result<Vec<usize>> {
    if n_train == 0 {
        return Err(Error::InvalidInput("cannot sample from an empty training set".into()));
    }
    if t == 0 {
        return Err(Error::InvalidInput("step indices are 1-based".into()));
    }
    let b = schedule.batch_size_at(t, n_train);
    if schedule.is_full() || b == n_train {
        return Ok((0..n_train).collect());
    }
    let mut rng = stream_rng(seed, Stream::Sampling, t);
    let mut pool: Vec<usize> = (0..n_train).collect();
    for i in 0..b {
        let j = rng.gen_range(i..n_train);
        pool.swap(i, j);
    }
    pool.truncate(b);
    Ok(pool)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    spec: DatasetSpec,
    teacher: Option<Vec<Vec<f64>>>,
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty matrix in dataset file".into()));
    }
    Ok(Matrix::from_rows(rows))
}

/// Writes a dataset as CSV with a one-line JSON header carrying the
/// generating [`DatasetSpec`] (and teacher weights, when present), so files
/// are self-describing.
pub fn write_dataset_csv(path: &Path, dataset: &SplitDataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = DatasetHeader {
        spec: dataset.spec.clone(),
        teacher: dataset.teacher.as_ref().map(matrix_to_rows),
    };
    writeln!(out, "# {}", serde_json::to_string(&header)?)?;

    let d_in = dataset.spec.d_in;
    let mut columns = vec!["split".to_string()];
    columns.extend((0..d_in).map(|j| format!("x{j}")));
    match &dataset.train.targets {
        Targets::Values(v) => columns.extend((0..v.cols()).map(|j| format!("y{j}"))),
        Targets::Labels(_) => columns.push("label".to_string()),
    }
    writeln!(out, "{}", columns.join(","))?;

    for (name, batch) in [("train", &dataset.train), ("test", &dataset.test)] {
        for i in 0..batch.len() {
            let mut fields = vec![name.to_string()];
            fields.extend(batch.inputs.row(i).iter().map(|x| x.to_string()));
            match &batch.targets {
                Targets::Values(v) => fields.extend(v.row(i).iter().map(|y| y.to_string())),
                Targets::Labels(l) => fields.push(l[i].to_string()),
            }
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<SplitDataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty dataset file".into()))??;
    let json = header_line
        .strip_prefix("# ")
        .ok_or_else(|| Error::InvalidInput("dataset file must start with a '# ' header".into()))?;
    let header: DatasetHeader = serde_json::from_str(json)?;
    let spec = header.spec;
    lines.next().ok_or_else(|| Error::InvalidInput("missing column header".into()))??;

    let labeled = spec.kind == DatasetKind::Blobs;
    let mut splits: [(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>); 2] = Default::default();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let slot = match fields.next() {
            Some("train") => 0,
            Some("test") => 1,
            other => {
                return Err(Error::InvalidInput(format!("unknown split tag {other:?}")));
            }
        };
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number '{f}' in dataset")))
            })
            .collect::<Result<_>>()?;
        let (inputs, targets, labels) = &mut splits[slot];
        if labeled {
            let (x, y) = values.split_at(spec.d_in);
            inputs.push(x.to_vec());
            labels.push(y[0] as usize);
        } else {
            let (x, y) = values.split_at(spec.d_in);
            inputs.push(x.to_vec());
            targets.push(y.to_vec());
        }
    }

    let mut batches = splits.iter().map(|(inputs, targets, labels)| -> Result<Batch> {
        let inputs = rows_to_matrix(inputs)?;
        let targets = if labeled {
            Targets::Labels(labels.clone())
        } else {
            Targets::Values(rows_to_matrix(targets)?)
        };
        Ok(Batch { inputs, targets })
    });
    let train = batches.next().unwrap()?;
    let test = batches.next().unwrap()?;
    let teacher = match header.teacher {
        Some(rows) => Some(rows_to_matrix(&rows)?),
        None => None,
    };
    Ok(SplitDataset { train, test, spec, teacher })
}
