use bridgenet::bridge_tree::Topology;
use bridgenet::gating::GatingVector;
use bridgenet::mixture::{
    gating_loss, head_backward, predict, regression_loss, total_loss, HeadParameters, LossConfig, LossWeights,
};
use bridgenet::neuralnet::{finite_diff_check, GradCheckOptions};
use bridgenet::regressors::{gating_targets, indicators, layout_regions, LocalPredictions, RegionLayout};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated sum.
fn careful_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2usize..40).prop_flat_map(|k| {
        (
            prop::collection::vec(1e-3f64..1.0, k),
            prop::collection::vec(-12.0f64..112.0, k),
            0.0f64..=100.0,
        )
    })
}

proptest! {
    #[test]
    fn prediction_is_the_weighted_sum((raw, mu, _) in instance()) {
        let pi = distribution(&raw);
        let got = predict(&GatingVector(pi.clone()), &LocalPredictions(mu.clone())).unwrap();
        let want = careful_sum(pi.iter().zip(&mu).map(|(p, m)| p * m));
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn losses_match_independent_recomputation((raw, mu, y) in instance(), lambda in 0.0f64..0.1) {
        let k = mu.len();
        let layout = layout_regions(k, 0.0, 100.0, 2.0 * 100.0 / (k - 1) as f64).unwrap();
        let pi = GatingVector(distribution(&raw));
        let locals = LocalPredictions(mu.clone());
        let ind = indicators(y, &layout);
        let targets = gating_targets(y, &layout).unwrap();

        let reg = regression_loss(y, &locals, &ind);
        let reg_oracle = careful_sum((0..k).map(|l| {
            let (lo, hi) = layout.region(l);
            if lo <= y && y <= hi { (y - mu[l]).powi(2) } else { 0.0 }
        }));
        prop_assert!((reg - reg_oracle).abs() <= 1e-12 * reg_oracle.max(1.0));
        prop_assert!(reg >= 0.0);

        let gate = gating_loss(&targets, &pi);
        let gate_oracle = -careful_sum(
            targets.iter().zip(pi.as_slice()).filter(|(t, _)| **t > 0.0).map(|(t, p)| t * p.ln()),
        );
        prop_assert!((gate - gate_oracle).abs() <= 1e-12 * gate_oracle.abs().max(1.0));
        prop_assert!(gate >= 0.0);

        let out = total_loss(y, &locals, &pi, &layout, LossConfig::new(lambda)).unwrap();
        let l = out.losses.unwrap();
        prop_assert!((l.total - (reg + lambda * gate)).abs() <= 1e-12 * l.total.max(1.0));
    }

    #[test]
    fn prediction_stays_within_extended_range(seed in any::<u64>(), k in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = layout_regions(k, 0.0, 100.0, 25.0).unwrap();
        let acts: Vec<f64> = (0..k).map(|_| rng.random_range(1e-9..1.0 - 1e-9)).collect();
        let mu = bridgenet::regressors::regress(&acts, &layout).unwrap();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1e-6..1.0)).collect();
        let yhat = predict(&GatingVector(distribution(&raw)), &mu).unwrap();
        prop_assert!((-12.5..=112.5).contains(&yhat));
    }
}

struct Case {
    topo: Topology,
    layout: RegionLayout<f64>,
    head: HeadParameters<f64>,
    features: Vec<f64>,
    label: f64,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = Topology::build(2 + (seed % 3) as usize, 2 + (seed % 3) as usize).unwrap();
    let spacing = 100.0 / (topo.leaf_count() - 1) as f64;
    let layout = layout_regions(topo.leaf_count(), 0.0, 100.0, 25f64.max(2.0 * spacing)).unwrap();
    let dim = 6;
    let head = HeadParameters::new(dim, &topo, &mut rng);
    let features = (0..dim).map(|_| rng.random_range(0.0..2.0)).collect();
    Case {
        topo,
        layout,
        head,
        features,
        label: rng.random_range(0.0..100.0),
    }
}

fn head_objective(c: &Case, params: &[f64], features: &[f64], w: LossWeights<f64>) -> f64 {
    let mut head = c.head.clone();
    head.set_params(params).unwrap();
    let fwd = head.forward(features, &c.topo, &c.layout).unwrap();
    let l = total_loss(c.label, &fwd.locals, &fwd.gating, &c.layout, LossConfig::default())
        .unwrap()
        .losses
        .unwrap();
    w.reg * l.reg + w.gate * l.gate
}

#[test]
fn head_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..24 {
        let c = case(seed);
        let params = c.head.params();
        let fwd = c.head.forward(&c.features, &c.topo, &c.layout).unwrap();
        for w in [LossWeights::regression_only(), LossWeights::gating_only(), LossWeights::total(0.001)] {
            let g = head_backward(&c.head, &c.features, &fwd, c.label, &c.topo, &c.layout, LossConfig::default(), w)
                .unwrap();
            let mut analytic = Vec::new();
            g.gate.write_flat(&mut analytic);
            g.regress.write_flat(&mut analytic);
            let report = finite_diff_check(
                |p: &[f64]| head_objective(&c, p, &c.features, w),
                &params,
                &analytic,
                GradCheckOptions::default(),
                &mut rng,
            )
            .unwrap();
            assert!(report.worst_excess_error <= 1e-5, "seed {seed}: {report:?}");

            let report = finite_diff_check(
                |x: &[f64]| head_objective(&c, &params, x, w),
                &c.features,
                &g.d_features,
                GradCheckOptions::default(),
                &mut rng,
            )
            .unwrap();
            assert!(report.worst_excess_error <= 1e-5, "seed {seed} features: {report:?}");
        }
    }
}

#[test]
fn zero_lambda_leaves_gating_layer_untouched() {
    for seed in 0..5 {
        let c = case(seed);
        let fwd = c.head.forward(&c.features, &c.topo, &c.layout).unwrap();
        let g = head_backward(
            &c.head,
            &c.features,
            &fwd,
            c.label,
            &c.topo,
            &c.layout,
            LossConfig::new(0.0),
            LossWeights::total(0.0),
        )
        .unwrap();
        assert!(g.d_gate_logits.iter().all(|&v| v == 0.0));
        assert!(g.gate.weights.iter().chain(&g.gate.bias).all(|&v| v == 0.0));
    }
}

#[test]
fn regression_term_does_not_reach_gating_layer() {
    let c = case(3);
    let fwd = c.head.forward(&c.features, &c.topo, &c.layout).unwrap();
    let g = head_backward(
        &c.head,
        &c.features,
        &fwd,
        c.label,
        &c.topo,
        &c.layout,
        LossConfig::default(),
        LossWeights::regression_only(),
    )
    .unwrap();
    assert!(g.d_gate_logits.iter().all(|&v| v == 0.0));
    assert!(g.d_reg_preact.iter().any(|&v| v != 0.0));
}
