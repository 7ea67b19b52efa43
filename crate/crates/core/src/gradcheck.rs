//! Finite-difference check of the composed model gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mixture::LossWeights;
use crate::model::BridgeNet;
use crate::neuralnet::{finite_diff_check, GradCheckOptions, GradCheckReport};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckPlan {
    pub instances: usize,
    /// Samples per instance; the checked loss is their mean.
    pub batch: usize,
    pub input_dim: usize,
    /// Stddev of the random backbone biases. Zero-initialised biases put
    /// ReLU pre-activations exactly on the kink whenever a sample switches
    /// off a whole hidden layer.
    pub bias_jitter: f64,
    pub options: GradCheckOptions,
    pub tolerance: f64,
}

impl Default for GradCheckPlan {
    fn default() -> Self {
        GradCheckPlan {
            instances: 20,
            batch: 4,
            input_dim: 8,
            bias_jitter: 0.1,
            options: GradCheckOptions::default(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermReport {
    pub term: &'static str,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckOutcome {
    pub instances: usize,
    pub parameters: usize,
    pub tolerance: f64,
    pub step: f64,
    pub terms: Vec<TermReport>,
    /// Plain relative error, including finite-difference roundoff.
    pub worst_relative_error: f64,
    /// Relative error beyond the roundoff allowance; compared to `tolerance`.
    pub worst_excess_error: f64,
    pub passed: bool,
}

fn weighted(model: &BridgeNet<f64>, data: &Dataset<f64>, w: LossWeights<f64>) -> Result<f64> {
    let l = model.batch_losses(data.samples())?;
    Ok(w.reg * l.reg + w.gate * l.gate)
}

/// Checks the regression and gating terms of the objective separately, on
/// `plan.instances` independently initialised models and synthetic batches.
pub fn run_gradcheck(config: &RunConfig, seed: u64, plan: GradCheckPlan) -> Result<GradCheckOutcome> {
    let config = config.resolved()?;
    let spec = config.model_spec()?;
    let terms: [(&'static str, LossWeights<f64>); 2] = [
        ("regression", LossWeights::regression_only()),
        ("gating", LossWeights::gating_only()),
    ];
    let mut worst: Vec<Option<GradCheckReport>> = vec![None; terms.len()];
    let mut parameters = 0;
    let jitter = Normal::new(0.0, plan.bias_jitter)
        .map_err(|e| Error::ParameterDomain(format!("bias jitter: {e}")))?;

    for i in 0..plan.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let data = generate_synthetic::<f64>(SyntheticSpec {
            n: plan.batch,
            feature_dim: plan.input_dim,
            seed: seed.wrapping_add(i as u64),
            ..SyntheticSpec::default()
        })?;
        let mut model = BridgeNet::new(spec.clone(), plan.input_dim, &mut rng)?;
        for layer in &mut model.backbone.layers {
            for b in &mut layer.bias {
                *b = jitter.sample(&mut rng);
            }
        }
        model.fit_input_normalization(&data)?;
        let params = model.params();
        parameters = params.len();

        for (slot, &(_, w)) in worst.iter_mut().zip(&terms) {
            let g = model.batch_gradient(data.samples(), w)?;
            let mut analytic = g.backbone;
            analytic.extend(g.head);
            let mut probe = model.clone();
            let report = finite_diff_check(
                |p: &[f64]| {
                    probe.set_params(p).expect("parameter count is fixed");
                    weighted(&probe, &data, w).expect("forward pass on a checked batch")
                },
                &params,
                &analytic,
                plan.options,
                &mut rng,
            )?;
            *slot = Some(match slot.take() {
                Some(prev) => prev.merge(report),
                None => report,
            });
        }
    }

    let terms: Vec<TermReport> = terms
        .iter()
        .zip(worst)
        .filter_map(|(&(term, _), r)| r.map(|report| TermReport { term, report }))
        .collect();
    let worst = |f: fn(&GradCheckReport) -> f64| {
        terms
            .iter()
            .map(|t| f(&t.report))
            .fold(0.0, |a: f64, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
    };
    let worst_relative_error = worst(|r| r.worst_relative_error);
    let worst_excess_error = worst(|r| r.worst_excess_error);
    Ok(GradCheckOutcome {
        instances: plan.instances,
        parameters,
        tolerance: plan.tolerance,
        step: plan.options.step,
        terms,
        worst_relative_error,
        worst_excess_error,
        passed: worst_excess_error <= plan.tolerance,
    })
}
