//! Feature extractor plus mixture head, assembled from a [`ModelSpec`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge_tree::Topology;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::mixture::{head_backward, HeadOutput, HeadParameters, LossConfig, LossWeights, Losses};
use crate::neuralnet::{flatten_gradients, Activation, DenseNetwork};
use crate::regressors::{layout_regions, RegionLayout};
use crate::scalar::Scalar;

/// Gating architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Bridge-tree gating with the configured branching and depth.
    #[default]
    Bridge,
    /// Plain binary tree with the smallest power-of-two leaf count not below
    /// the bridge-tree's.
    Tree,
    /// One softmax over as many leaves as the `Tree` baseline.
    Softmax,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge" => Ok(Baseline::Bridge),
            "tree" => Ok(Baseline::Tree),
            "softmax" => Ok(Baseline::Softmax),
            other => Err(Error::Config(format!(
                "unknown baseline '{other}' (expected bridge, tree or softmax)"
            ))),
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Baseline::Bridge => "bridge",
            Baseline::Tree => "tree",
            Baseline::Softmax => "softmax",
        })
    }
}

/// Architecture and loss settings of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub baseline: Baseline,
    pub branching: usize,
    pub depth: usize,
    pub label_min: f64,
    pub label_max: f64,
    pub region_length: f64,
    pub lambda: f64,
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
    pub normalize_reg_loss: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            baseline: Baseline::Bridge,
            branching: 3,
            depth: 5,
            label_min: 0.0,
            label_max: 100.0,
            region_length: 25.0,
            lambda: crate::mixture::DEFAULT_LAMBDA,
            hidden_widths: vec![64, 64],
            feature_dim: 32,
            normalize_reg_loss: false,
        }
    }
}

impl ModelSpec {
    /// Gating topology for the selected baseline.
    pub fn topology(&self) -> Result<Topology> {
        let bridge = Topology::build(self.branching, self.depth)?;
        match self.baseline {
            Baseline::Bridge => Ok(bridge),
            Baseline::Tree => Topology::build_tree(2, ceil_log2(bridge.leaf_count())),
            Baseline::Softmax => Topology::build_flat(1 << ceil_log2(bridge.leaf_count())),
        }
    }
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n.max(2) - 1).leading_zeros()) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeNet<T> {
    spec: ModelSpec,
    topology: Topology,
    layout: RegionLayout<T>,
    pub backbone: DenseNetwork<T>,
    pub head: HeadParameters<T>,
    /// Per-feature standardisation applied before the backbone.
    pub input_shift: Vec<T>,
    pub input_scale: Vec<T>,
}

/// Mean losses and gradients over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient<T> {
    pub losses: Losses<T>,
    pub backbone: Vec<T>,
    pub head: Vec<T>,
}

impl<T: Scalar> BridgeNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, input_dim: usize, rng: &mut R) -> Result<Self> {
        if !(spec.lambda >= 0.0) {
            return Err(Error::ParameterDomain(format!("lambda must be non-negative, got {}", spec.lambda)));
        }
        let topology = spec.topology()?;
        let layout = layout_regions(
            topology.leaf_count(),
            T::lit(spec.label_min),
            T::lit(spec.label_max),
            T::lit(spec.region_length),
        )?;
        let backbone = DenseNetwork::new(
            input_dim,
            &spec.hidden_widths,
            spec.feature_dim,
            Activation::Relu,
            Activation::Relu,
            rng,
        )?;
        let head = HeadParameters::new(spec.feature_dim, &topology, rng);
        Ok(BridgeNet {
            spec,
            topology,
            layout,
            backbone,
            head,
            input_shift: vec![T::zero(); input_dim],
            input_scale: vec![T::one(); input_dim],
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn layout(&self) -> &RegionLayout<T> {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim()
    }

    pub fn loss_config(&self) -> LossConfig<T> {
        LossConfig {
            lambda: T::lit(self.spec.lambda),
            normalize_reg_loss: self.spec.normalize_reg_loss,
        }
    }

    /// Sets the input standardisation from the feature means and standard
    /// deviations of `data`. Constant features keep unit scale.
    pub fn fit_input_normalization(&mut self, data: &Dataset<T>) -> Result<()> {
        if data.feature_dim() != self.input_dim() {
            return Err(Error::shape("dataset feature width", self.input_dim(), data.feature_dim()));
        }
        let n = T::from_count(data.len().max(1));
        for j in 0..self.input_dim() {
            let mean = data.samples().iter().map(|s| s.features[j]).sum::<T>() / n;
            let var = data
                .samples()
                .iter()
                .map(|s| (s.features[j] - mean) * (s.features[j] - mean))
                .sum::<T>()
                / n;
            let sd = var.sqrt();
            self.input_shift[j] = mean;
            self.input_scale[j] = if sd > T::zero() { T::one() / sd } else { T::one() };
        }
        Ok(())
    }

    fn standardize(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("model input", self.input_dim(), x.len()));
        }
        Ok(x.iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((&v, &m), &s)| (v - m) * s)
            .collect())
    }

    /// Prediction, gating weights and local predictions; losses when a label
    /// is given.
    pub fn forward(&self, x: &[T], label: Option<T>) -> Result<HeadOutput<T>> {
        let z = self.standardize(x)?;
        let cache = self.backbone.forward(&z)?;
        let fwd = self.head.forward(&cache.output, &self.topology, &self.layout)?;
        let losses = match label {
            Some(y) => crate::mixture::total_loss(y, &fwd.locals, &fwd.gating, &self.layout, self.loss_config())?.losses,
            None => None,
        };
        Ok(HeadOutput {
            prediction: fwd.prediction,
            gating: fwd.gating,
            locals: fwd.locals,
            losses,
        })
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        Ok(self.forward(x, None)?.prediction)
    }

    /// Losses and flat gradients (backbone, head) for one sample.
    pub fn sample_gradient(&self, x: &[T], label: T, weights: LossWeights<T>) -> Result<BatchGradient<T>> {
        let z = self.standardize(x)?;
        let cache = self.backbone.forward(&z)?;
        let fwd = self.head.forward(&cache.output, &self.topology, &self.layout)?;
        let hg = head_backward(
            &self.head,
            &cache.output,
            &fwd,
            label,
            &self.topology,
            &self.layout,
            self.loss_config(),
            weights,
        )?;
        let (bg, _) = self.backbone.backward(&cache, &hg.d_features)?;
        let mut head = Vec::with_capacity(self.head.param_count());
        hg.gate.write_flat(&mut head);
        hg.regress.write_flat(&mut head);
        Ok(BatchGradient {
            losses: hg.losses,
            backbone: flatten_gradients(&bg),
            head,
        })
    }

    /// Mean of per-sample losses and gradients, reduced in batch order.
    pub fn batch_gradient<'a, I>(&self, batch: I, weights: LossWeights<T>) -> Result<BatchGradient<T>>
    where
        I: IntoIterator<Item = &'a Sample<T>>,
    {
        let mut acc = BatchGradient {
            losses: Losses {
                reg: T::zero(),
                gate: T::zero(),
                total: T::zero(),
            },
            backbone: vec![T::zero(); self.backbone.param_count()],
            head: vec![T::zero(); self.head.param_count()],
        };
        let mut n = 0usize;
        for s in batch {
            let g = self.sample_gradient(&s.features, s.label, weights)?;
            acc.losses.reg = acc.losses.reg + g.losses.reg;
            acc.losses.gate = acc.losses.gate + g.losses.gate;
            acc.losses.total = acc.losses.total + g.losses.total;
            add_into(&mut acc.backbone, &g.backbone);
            add_into(&mut acc.head, &g.head);
            n += 1;
        }
        if n == 0 {
            return Err(Error::ParameterDomain("empty batch".into()));
        }
        let inv = T::one() / T::from_count(n);
        acc.losses.reg = acc.losses.reg * inv;
        acc.losses.gate = acc.losses.gate * inv;
        acc.losses.total = acc.losses.total * inv;
        acc.backbone.iter_mut().for_each(|v| *v = *v * inv);
        acc.head.iter_mut().for_each(|v| *v = *v * inv);
        Ok(acc)
    }

    /// Mean losses over `batch` without gradients.
    pub fn batch_losses<'a, I>(&self, batch: I) -> Result<Losses<T>>
    where
        I: IntoIterator<Item = &'a Sample<T>>,
    {
        let (mut reg, mut gate, mut total, mut n) = (T::zero(), T::zero(), T::zero(), 0usize);
        for s in batch {
            let l = self.forward(&s.features, Some(s.label))?.losses.expect("labelled");
            reg = reg + l.reg;
            gate = gate + l.gate;
            total = total + l.total;
            n += 1;
        }
        if n == 0 {
            return Err(Error::ParameterDomain("empty batch".into()));
        }
        let inv = T::one() / T::from_count(n);
        Ok(Losses {
            reg: reg * inv,
            gate: gate * inv,
            total: total * inv,
        })
    }

    /// All trainable parameters: backbone first, then head.
    pub fn params(&self) -> Vec<T> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p
    }

    pub fn set_params(&mut self, src: &[T]) -> Result<()> {
        let nb = self.backbone.param_count();
        if src.len() != nb + self.head.param_count() {
            return Err(Error::shape("model parameters", nb + self.head.param_count(), src.len()));
        }
        self.backbone.set_params(&src[..nb])?;
        self.head.set_params(&src[nb..])
    }
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a = *a + b;
    }
}
