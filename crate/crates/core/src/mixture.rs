//! Mixture head: gating weights times local predictions, and the joint loss.
//!
//! The training objective is `L_reg + lambda * L_gate`, where
//!
//! * `L_reg = sum_l I_l (y - mu_l)^2` over the regressors responsible for `y`,
//! * `L_gate = -sum_l t_l log pi_l` with targets `t_l = I_l / R`.
//!
//! `L_gate` is the cross-entropy against the targets. It differs from the KL
//! divergence only by the (constant) entropy of the targets, so gradients are
//! identical. The prediction `sum_l pi_l mu_l` is not part of the objective:
//! regressors learn from `L_reg` and the gating layer learns from `L_gate`
//! alone.

use rand::Rng;

use crate::bridge_tree::Topology;
use crate::error::{Error, Result};
use crate::gating::{grouped_softmax, propagate, propagate_backward, EdgeProbabilities, GatingVector};
use crate::neuralnet::{Activation, DenseGradients, DenseLayer};
use crate::regressors::{gating_targets, indicators, Indicators, LocalPredictions, RegionLayout};
use crate::scalar::Scalar;

/// Lower bound applied to pi inside the logarithm of the gating loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Default weight of the gating loss.
pub const DEFAULT_LAMBDA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses<T> {
    pub reg: T,
    pub gate: T,
    pub total: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    pub prediction: T,
    pub gating: GatingVector<T>,
    pub locals: LocalPredictions<T>,
    /// Present only when a label was supplied.
    pub losses: Option<Losses<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub lambda: T,
    /// Divide the regression loss by the number of responsible regressors.
    pub normalize_reg_loss: bool,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(lambda: T) -> Self {
        LossConfig {
            lambda,
            normalize_reg_loss: false,
        }
    }
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self::new(T::lit(DEFAULT_LAMBDA))
    }
}

/// Coefficients of the two loss terms in the objective being differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub reg: T,
    pub gate: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn total(lambda: T) -> Self {
        LossWeights {
            reg: T::one(),
            gate: lambda,
        }
    }

    pub fn regression_only() -> Self {
        LossWeights {
            reg: T::one(),
            gate: T::zero(),
        }
    }

    pub fn gating_only() -> Self {
        LossWeights {
            reg: T::zero(),
            gate: T::one(),
        }
    }
}

/// Expected label: `sum_l pi_l mu_l`.
pub fn predict<T: Scalar>(gating: &GatingVector<T>, locals: &LocalPredictions<T>) -> Result<T> {
    if gating.len() != locals.len() {
        return Err(Error::shape("gating vs local predictions", locals.len(), gating.len()));
    }
    Ok(gating
        .as_slice()
        .iter()
        .zip(locals.as_slice())
        .map(|(&p, &m)| p * m)
        .sum())
}

/// Sum of squared errors over the responsible regressors.
pub fn regression_loss<T: Scalar>(label: T, locals: &LocalPredictions<T>, indicator: &Indicators) -> T {
    assert_eq!(locals.len(), indicator.mask.len(), "indicator length");
    locals
        .as_slice()
        .iter()
        .zip(&indicator.mask)
        .filter(|(_, &on)| on)
        .map(|(&mu, _)| (label - mu) * (label - mu))
        .sum()
}

/// Cross-entropy of the gating weights against the targets, with pi floored
/// at [`LOG_FLOOR`] inside the logarithm.
pub fn gating_loss<T: Scalar>(targets: &[T], gating: &GatingVector<T>) -> T {
    assert_eq!(targets.len(), gating.len(), "target length");
    let floor = T::lit(LOG_FLOOR);
    -targets
        .iter()
        .zip(gating.as_slice())
        .filter(|(&t, _)| t > T::zero())
        .map(|(&t, &p)| t * p.max(floor).ln())
        .sum::<T>()
}

/// Assembles prediction and all loss terms for one labelled sample.
pub fn total_loss<T: Scalar>(
    label: T,
    locals: &LocalPredictions<T>,
    gating: &GatingVector<T>,
    layout: &RegionLayout<T>,
    config: LossConfig<T>,
) -> Result<HeadOutput<T>> {
    let targets = gating_targets(label, layout)?;
    let ind = indicators(label, layout);
    let mut reg = regression_loss(label, locals, &ind);
    if config.normalize_reg_loss {
        reg = reg / T::from_count(ind.count);
    }
    let gate = gating_loss(&targets, gating);
    Ok(HeadOutput {
        prediction: predict(gating, locals)?,
        gating: gating.clone(),
        locals: locals.clone(),
        losses: Some(Losses {
            reg,
            gate,
            total: reg + config.lambda * gate,
        }),
    })
}

/// Gating layer and regressor layer sitting on top of the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters<T> {
    /// One output per edge; identity activation (softmax is applied per group).
    pub gate: DenseLayer<T>,
    /// One sigmoid output per leaf.
    pub regress: DenseLayer<T>,
}

/// Intermediate values of a head forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadForward<T> {
    pub gate_logits: Vec<T>,
    pub edge_probs: EdgeProbabilities<T>,
    pub gating: GatingVector<T>,
    pub activations: Vec<T>,
    pub locals: LocalPredictions<T>,
    pub prediction: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients<T> {
    pub gate: DenseGradients<T>,
    pub regress: DenseGradients<T>,
    pub d_gate_logits: Vec<T>,
    pub d_reg_preact: Vec<T>,
    pub d_features: Vec<T>,
    pub losses: Losses<T>,
}

impl<T: Scalar> HeadParameters<T> {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, topology: &Topology, rng: &mut R) -> Self {
        HeadParameters {
            gate: DenseLayer::glorot(feature_dim, topology.edge_count(), Activation::Identity, rng),
            regress: DenseLayer::glorot(feature_dim, topology.leaf_count(), Activation::Sigmoid, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gate.param_count() + self.regress.param_count()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.gate.write_params(&mut out);
        self.regress.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, src: &[T]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::shape("head parameters", self.param_count(), src.len()));
        }
        let rest = self.gate.read_params(src);
        self.regress.read_params(rest);
        Ok(())
    }

    pub fn forward(
        &self,
        features: &[T],
        topology: &Topology,
        layout: &RegionLayout<T>,
    ) -> Result<HeadForward<T>> {
        if topology.edge_count() != self.gate.output_dim || layout.count() != self.regress.output_dim {
            return Err(Error::shape("head outputs", self.gate.output_dim, topology.edge_count()));
        }
        let (gate_logits, _) = self.gate.forward(features)?;
        let edge_probs = grouped_softmax(&gate_logits, topology)?;
        let gating = propagate(topology, &edge_probs)?;
        let (_, activations) = self.regress.forward(features)?;
        let locals = LocalPredictions(
            activations
                .iter()
                .enumerate()
                .map(|(l, &a)| layout.map_activation(l, a))
                .collect(),
        );
        let prediction = predict(&gating, &locals)?;
        Ok(HeadForward {
            gate_logits,
            edge_probs,
            gating,
            activations,
            locals,
            prediction,
        })
    }
}

/// Reverse-mode gradients of `weights.reg * L_reg + weights.gate * L_gate`
/// for one sample, with respect to the head parameters, the head's logits and
/// the incoming features.
#[allow(clippy::too_many_arguments)]
pub fn head_backward<T: Scalar>(
    head: &HeadParameters<T>,
    features: &[T],
    fwd: &HeadForward<T>,
    label: T,
    topology: &Topology,
    layout: &RegionLayout<T>,
    config: LossConfig<T>,
    weights: LossWeights<T>,
) -> Result<HeadGradients<T>> {
    let out = total_loss(label, &fwd.locals, &fwd.gating, layout, config)?;
    let losses = out.losses.expect("labelled sample has losses");
    let ind = indicators(label, layout);
    let targets = gating_targets(label, layout)?;

    // regression branch: d/d mu_l of I_l (y - mu_l)^2 is 2 I_l (mu_l - y)
    let two = T::lit(2.0);
    let mut reg_scale = weights.reg;
    if config.normalize_reg_loss {
        reg_scale = reg_scale / T::from_count(ind.count);
    }
    let len = layout.region_length();
    let d_reg_preact: Vec<T> = fwd
        .locals
        .as_slice()
        .iter()
        .zip(&fwd.activations)
        .zip(&ind.mask)
        .map(|((&mu, &a), &on)| {
            if on {
                reg_scale * two * (mu - label) * len * a * (T::one() - a)
            } else {
                T::zero()
            }
        })
        .collect();

    // gating branch: d/d pi_l of -t_l log max(pi_l, floor)
    let floor = T::lit(LOG_FLOOR);
    let d_pi: Vec<T> = targets
        .iter()
        .zip(fwd.gating.as_slice())
        .map(|(&t, &p)| {
            if t > T::zero() && p > floor {
                -weights.gate * t / p
            } else {
                T::zero()
            }
        })
        .collect();
    let d_gate_logits = propagate_backward(topology, &fwd.edge_probs, &d_pi)?;

    let mut gate = head.gate.zero_gradients();
    let mut regress = head.regress.zero_gradients();
    let from_gate = head.gate.backward_affine(features, &d_gate_logits, &mut gate);
    let from_reg = head.regress.backward_affine(features, &d_reg_preact, &mut regress);
    let d_features = from_gate.iter().zip(&from_reg).map(|(&a, &b)| a + b).collect();
    Ok(HeadGradients {
        gate,
        regress,
        d_gate_logits,
        d_reg_preact,
        d_features,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressors::layout_regions;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_hot_gating_returns_that_local() {
        let locals = LocalPredictions(vec![3.0f64, 7.5, -1.0]);
        let pi = GatingVector(vec![0.0, 1.0, 0.0]);
        assert_eq!(predict(&pi, &locals).unwrap(), 7.5);
    }

    #[test]
    fn uniform_gating_over_mediums() {
        let layout = layout_regions(5, 0.0f64, 4.0, 2.0).unwrap();
        let locals = LocalPredictions(layout.mediums().to_vec());
        let pi = GatingVector(vec![0.2; 5]);
        assert_abs_diff_eq!(predict(&pi, &locals).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn predict_shape_mismatch() {
        let r = predict(&GatingVector(vec![1.0f64]), &LocalPredictions(vec![1.0, 2.0]));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn regression_loss_cases() {
        let ind = Indicators {
            mask: vec![false, true, true],
            count: 2,
        };
        assert_eq!(regression_loss(5.0f64, &LocalPredictions(vec![0.0, 5.0, 5.0]), &ind), 0.0);
        let single = Indicators {
            mask: vec![false, true, false],
            count: 1,
        };
        assert_eq!(regression_loss(5.0f64, &LocalPredictions(vec![100.0, 7.0, -3.0]), &single), 4.0);
    }

    #[test]
    fn gating_loss_near_one_hot() {
        let eps = 1e-6f64;
        let loss = gating_loss(&[0.0, 1.0, 0.0], &GatingVector(vec![eps / 2.0, 1.0 - eps, eps / 2.0]));
        assert_abs_diff_eq!(loss, eps, epsilon = 1e-11);
    }

    #[test]
    fn gating_loss_uniform_is_log_k() {
        let k = 7;
        let targets = [0.0f64, 0.25, 0.25, 0.25, 0.25, 0.0, 0.0];
        let loss = gating_loss(&targets, &GatingVector(vec![1.0 / k as f64; k]));
        assert_abs_diff_eq!(loss, (k as f64).ln(), epsilon = 1e-14);
    }

    #[test]
    fn gating_loss_floors_zero_mass() {
        let loss = gating_loss(&[1.0f64, 0.0], &GatingVector(vec![0.0, 1.0]));
        assert_abs_diff_eq!(loss, -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn lambda_zero_total_is_regression() {
        let layout = layout_regions(5, 0.0f64, 4.0, 2.0).unwrap();
        let locals = LocalPredictions(vec![0.1, 1.2, 1.9, 3.3, 4.0]);
        let pi = GatingVector(vec![0.1, 0.2, 0.4, 0.2, 0.1]);
        let out = total_loss(2.0, &locals, &pi, &layout, LossConfig::new(0.0)).unwrap();
        let l = out.losses.unwrap();
        assert_eq!(l.total, l.reg);
        assert!(l.gate > 0.0);
    }

    #[test]
    fn uncovered_label_propagates() {
        let layout = layout_regions(5, 0.0f64, 4.0, 2.0).unwrap();
        let locals = LocalPredictions(vec![0.0; 5]);
        let pi = GatingVector(vec![0.2; 5]);
        assert!(matches!(
            total_loss(10.0, &locals, &pi, &layout, LossConfig::default()),
            Err(Error::UncoveredLabel { .. })
        ));
    }

    #[test]
    fn inactive_regressor_gets_no_gradient() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let topo = Topology::build(3, 2).unwrap();
        let layout = layout_regions(topo.leaf_count(), 0.0f64, 100.0, 25.0).unwrap();
        let head = HeadParameters::new(4, &topo, &mut rng);
        let x = [0.5, -0.2, 1.0, 0.3];
        let fwd = head.forward(&x, &topo, &layout).unwrap();
        let g = head_backward(&head, &x, &fwd, 10.0, &topo, &layout, LossConfig::default(), LossWeights::total(0.001)).unwrap();
        let ind = indicators(10.0, &layout);
        for (l, &on) in ind.mask.iter().enumerate() {
            if !on {
                assert_eq!(g.d_reg_preact[l], 0.0);
            }
        }
        let no_gate = head_backward(&head, &x, &fwd, 10.0, &topo, &layout, LossConfig::new(0.0), LossWeights::total(0.0)).unwrap();
        assert!(no_gate.d_gate_logits.iter().all(|&v| v == 0.0));
        assert!(no_gate.gate.weights.iter().all(|&v| v == 0.0));
    }
}
