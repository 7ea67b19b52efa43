//! Datasets: a synthetic heterogeneous regression task, CSV ingestion, and
//! seeded train/test splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: T,
    /// Annotation standard deviation, used by the epsilon-error.
    pub stddev: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    feature_dim: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<Sample<T>>) -> Result<Self> {
        let feature_dim = samples.first().map_or(0, |s| s.features.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::Schema(format!(
                    "sample {i} has {} features, expected {feature_dim}",
                    s.features.len()
                )));
            }
            if !s.label.is_finite() {
                return Err(Error::Schema(format!("sample {i} has a non-finite label")));
            }
            if let Some(sd) = s.stddev {
                if !(sd > T::zero()) {
                    return Err(Error::Schema(format!("sample {i} has non-positive stddev {sd}")));
                }
            }
        }
        Ok(Dataset {
            samples,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Per-sample stddevs, if every sample carries one.
    pub fn stddevs(&self) -> Option<Vec<T>> {
        self.samples.iter().map(|s| s.stddev).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    features: s.features.iter().map(|v| U::lit(v.as_f64())).collect(),
                    label: U::lit(s.label.as_f64()),
                    stddev: s.stddev.map(|v| U::lit(v.as_f64())),
                })
                .collect(),
            feature_dim: self.feature_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub feature_dim: usize,
    pub segments: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 2000,
            feature_dim: 8,
            segments: 4,
            noise: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Convex,
    Concave,
    Linear,
    Cubic,
}

impl Shape {
    const CYCLE: [Shape; 4] = [Shape::Convex, Shape::Concave, Shape::Linear, Shape::Cubic];

    fn eval(self, u: f64) -> f64 {
        match self {
            Shape::Convex => u * u,
            Shape::Concave => u * (2.0 - u),
            Shape::Linear => u,
            Shape::Cubic => u * u * u,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
    offset: f64,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    amplitude: f64,
    centre: f64,
    width: f64,
}

/// The fixed structure behind a synthetic dataset.
///
/// A latent age `t` in `[0, 100]` is split into equal-width regimes. The label
/// is continuous in `t` but follows a different curve in each regime, with a
/// kink at every regime boundary. Features are a fixed rotation of a latent
/// vector: a linear coordinate of `t`, smooth sigmoidal steps of `t`, and
/// oscillating coordinates whose frequency, phase and offset change from one
/// regime to the next.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    feature_dim: usize,
    segments: usize,
    heights: Vec<f64>,
    bases: Vec<f64>,
    steps: Vec<Step>,
    /// `waves[regime][coordinate]`
    waves: Vec<Vec<Wave>>,
    rotation: DMatrix<f64>,
}

pub const LATENT_MIN: f64 = 0.0;
pub const LATENT_MAX: f64 = 100.0;

impl SyntheticTask {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, segments: usize, rng: &mut R) -> Result<Self> {
        if feature_dim < 1 {
            return Err(Error::ParameterDomain("feature_dim must be at least 1".into()));
        }
        if segments < 2 {
            return Err(Error::ParameterDomain(format!(
                "segments must be at least 2, got {segments}"
            )));
        }
        // Neighbouring regimes draw their weight from disjoint ranges, so no
        // two adjacent regimes have the same height.
        let weights: Vec<f64> = (0..segments)
            .map(|j| {
                if j % 2 == 0 {
                    rng.random_range(0.6..1.0)
                } else {
                    rng.random_range(1.2..1.6)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let heights: Vec<f64> = weights.iter().map(|w| (LATENT_MAX - LATENT_MIN) * w / total).collect();
        let bases = heights
            .iter()
            .scan(LATENT_MIN, |acc, h| {
                let b = *acc;
                *acc += h;
                Some(b)
            })
            .collect();

        let n_steps = (feature_dim - 1).div_ceil(2);
        let n_waves = feature_dim - 1 - n_steps;
        let steps = (0..n_steps)
            .map(|_| Step {
                amplitude: 4.0,
                centre: rng.random_range(10.0..90.0),
                width: rng.random_range(5.0..15.0),
            })
            .collect();
        let waves = (0..segments)
            .map(|_| {
                (0..n_waves)
                    .map(|_| Wave {
                        amplitude: rng.random_range(1.0..3.0),
                        frequency: rng.random_range(0.5..1.5),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                        offset: rng.random_range(-2.0..2.0),
                    })
                    .collect()
            })
            .collect();
        let gaussian = DMatrix::from_fn(feature_dim, feature_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rotation = gaussian.qr().q();

        Ok(SyntheticTask {
            feature_dim,
            segments,
            heights,
            bases,
            steps,
            waves,
            rotation,
        })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Regime index and position `u` in `[0, 1]` within it.
    pub fn regime(&self, t: f64) -> (usize, f64) {
        let width = (LATENT_MAX - LATENT_MIN) / self.segments as f64;
        let j = (((t - LATENT_MIN) / width).floor().max(0.0) as usize).min(self.segments - 1);
        let u = (t - LATENT_MIN - j as f64 * width) / width;
        (j, u)
    }

    /// Regime boundaries in latent coordinates.
    pub fn boundaries(&self) -> Vec<f64> {
        let width = (LATENT_MAX - LATENT_MIN) / self.segments as f64;
        (1..self.segments).map(|j| LATENT_MIN + j as f64 * width).collect()
    }

    pub fn label(&self, t: f64) -> f64 {
        let (j, u) = self.regime(t);
        let shape = Shape::CYCLE[j % Shape::CYCLE.len()];
        (self.bases[j] + self.heights[j] * shape.eval(u)).clamp(LATENT_MIN, LATENT_MAX)
    }

    /// Noise-free latent vector before rotation.
    pub fn latent(&self, t: f64) -> Vec<f64> {
        let (j, u) = self.regime(t);
        let mut z = Vec::with_capacity(self.feature_dim);
        z.push((t - 50.0) / 5.0);
        for s in &self.steps {
            z.push(s.amplitude * ((t - s.centre) / s.width).tanh());
        }
        for w in &self.waves[j] {
            z.push(w.amplitude * (std::f64::consts::TAU * w.frequency * u + w.phase).sin() + w.offset);
        }
        z
    }

    pub fn features(&self, t: f64) -> Vec<f64> {
        let z = nalgebra::DVector::from_vec(self.latent(t));
        (&self.rotation * z).iter().copied().collect()
    }
}

/// Draws `n` samples from a freshly seeded [`SyntheticTask`].
pub fn generate_synthetic<T: Scalar>(spec: SyntheticSpec) -> Result<Dataset<T>> {
    if spec.n < 1 {
        return Err(Error::ParameterDomain("n must be at least 1".into()));
    }
    if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
        return Err(Error::ParameterDomain(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let task = SyntheticTask::new(spec.feature_dim, spec.segments, &mut rng)?;
    let samples = (0..spec.n)
        .map(|_| {
            let t = rng.random_range(LATENT_MIN..=LATENT_MAX);
            let features = task
                .features(t)
                .into_iter()
                .map(|v| T::lit(v + spec.noise * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            Sample {
                features,
                label: T::lit(task.label(t)),
                stddev: None,
            }
        })
        .collect();
    Dataset::new(samples)
}

/// The task behind `generate_synthetic` for the same feature width, segment
/// count and seed.
pub fn synthetic_task(spec: SyntheticSpec) -> Result<SyntheticTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    SyntheticTask::new(spec.feature_dim, spec.segments, &mut rng)
}

/// Seeded shuffle, then the first `round(n * train_fraction)` samples form the
/// training set.
pub fn split<T: Scalar>(data: &Dataset<T>, train_fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::ParameterDomain(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::ParameterDomain(format!(
            "splitting {n} samples at {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| Dataset {
        samples: idx.iter().map(|&i| data.samples[i].clone()).collect(),
        feature_dim: data.feature_dim,
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

struct Table<T> {
    labels: Option<Vec<T>>,
    stddevs: Option<Vec<T>>,
    features: Vec<Vec<T>>,
}

fn read_table<T: Scalar, R: Read>(reader: R) -> Result<Table<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_col = headers.iter().position(|h| h == "label");
    let sd_col = headers.iter().position(|h| h == "stddev");
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| Some(c) != label_col && Some(c) != sd_col)
        .collect();

    let mut table = Table {
        labels: label_col.map(|_| Vec::new()),
        stddevs: sd_col.map(|_| Vec::new()),
        features: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Schema(format!(
                "line {line} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let num = |c: usize| -> Result<T> {
            rec[c]
                .parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("column '{}': {e}", &headers[c]),
                })
        };
        if let (Some(c), Some(v)) = (label_col, table.labels.as_mut()) {
            v.push(num(c)?);
        }
        if let (Some(c), Some(v)) = (sd_col, table.stddevs.as_mut()) {
            v.push(num(c)?);
        }
        table
            .features
            .push(feature_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
    }
    Ok(table)
}

/// Reads a dataset. The header must contain `label`; an optional `stddev`
/// column is recognised; every other column is a feature, in header order.
pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>> {
    let table = read_table(reader)?;
    let labels = table
        .labels
        .ok_or_else(|| Error::Schema("missing 'label' column".into()))?;
    let samples = table
        .features
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (features, label))| Sample {
            features,
            label,
            stddev: table.stddevs.as_ref().map(|s| s[i]),
        })
        .collect();
    Dataset::new(samples)
}

/// Reads feature rows only. `label` and `stddev` columns are skipped when
/// present.
pub fn read_features<T: Scalar, R: Read>(reader: R) -> Result<Vec<Vec<T>>> {
    Ok(read_table(reader)?.features)
}

pub fn load_features<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Vec<T>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(file)
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Writes `label[,stddev],f0,f1,...` with 17 significant digits.
pub fn write_csv<T: Scalar, W: Write>(data: &Dataset<T>, writer: W) -> Result<()> {
    let with_sd = data.stddevs().is_some() && !data.is_empty();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    if with_sd {
        header.push("stddev".into());
    }
    header.extend((0..data.feature_dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for s in data.samples() {
        let mut row = vec![fmt17(s.label)];
        if with_sd {
            row.push(fmt17(s.stddev.expect("checked")));
        }
        row.extend(s.features.iter().map(|&v| fmt17(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv<T: Scalar>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, file)
}

pub(crate) fn fmt17<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            n: 10,
            noise: 0.0,
            ..Default::default()
        };
        let a = generate_synthetic::<f64>(spec).unwrap();
        let b = generate_synthetic::<f64>(spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic::<f64>(SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.labels(), c.labels());
    }

    #[test]
    fn labels_stay_in_range() {
        let d = generate_synthetic::<f64>(SyntheticSpec {
            n: 500,
            segments: 5,
            ..Default::default()
        })
        .unwrap();
        assert!(d.labels().iter().all(|&y| (0.0..=100.0).contains(&y)));
        assert_eq!(d.feature_dim(), 8);
    }

    #[test]
    fn generator_rejects_bad_parameters() {
        let ok = SyntheticSpec::default();
        assert!(generate_synthetic::<f64>(SyntheticSpec { n: 0, ..ok }).is_err());
        assert!(generate_synthetic::<f64>(SyntheticSpec { feature_dim: 0, ..ok }).is_err());
        assert!(generate_synthetic::<f64>(SyntheticSpec { segments: 1, ..ok }).is_err());
        assert!(generate_synthetic::<f64>(SyntheticSpec { noise: -1.0, ..ok }).is_err());
    }

    #[test]
    fn label_function_is_continuous_and_monotone() {
        let task = synthetic_task(SyntheticSpec::default()).unwrap();
        assert_eq!(task.label(0.0), 0.0);
        assert!((task.label(100.0) - 100.0).abs() < 1e-9);
        let mut prev = task.label(0.0);
        for i in 1..=10_000 {
            let y = task.label(i as f64 * 0.01);
            assert!(y >= prev - 1e-12);
            assert!(y - prev < 0.1, "jump at {}", i as f64 * 0.01);
            prev = y;
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = generate_synthetic::<f64>(SyntheticSpec {
            n: 10,
            ..Default::default()
        })
        .unwrap();
        let (tr, te) = split(&d, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split(&d, 0.8, 1).unwrap();
        assert_eq!((tr, te), (tr2, te2));
        assert!(split(&d, 0.01, 1).is_err());
        assert!(split(&d, 1.0, 1).is_err());
    }

    #[test]
    fn csv_hand_written() {
        let text = "f_a,label,stddev,f_b\n1.5,10,2,-3\n0,20,1.5,4e-1\n2,30.25,3,0\n";
        let d = read_csv::<f64, _>(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.samples()[1].features, vec![0.0, 0.4]);
        assert_eq!(d.labels(), vec![10.0, 20.0, 30.25]);
        assert_eq!(d.stddevs(), Some(vec![2.0, 1.5, 3.0]));
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            read_csv::<f64, _>("a,b\n1,2\n".as_bytes()),
            Err(Error::Schema(_))
        ));
        match read_csv::<f64, _>("label,x\n1,2\n3,oops\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_csv::<f64, _>("label,x\n1,2\n3,4,5\n".as_bytes()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn features_skip_label_columns() {
        let rows = read_features::<f64, _>("x,label,y\n1,50,2\n3,60,4\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let rows = read_features::<f64, _>("x,y\n1,2\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0]]);
    }
}
