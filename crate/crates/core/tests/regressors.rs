use bridgenet::regressors::{gating_targets, indicators, layout_regions, regress, RegionLayout};
use proptest::prelude::*;

/// Closed-interval membership by brute force over every region.
fn members(layout: &RegionLayout<f64>, y: f64) -> Vec<usize> {
    (0..layout.count())
        .filter(|&l| {
            let (lo, hi) = layout.region(l);
            lo <= y && y <= hi
        })
        .collect()
}

fn age_layout() -> RegionLayout<f64> {
    layout_regions(63, 0.0, 100.0, 25.0).unwrap()
}

#[test]
fn age_layout_spacing_and_middle_region() {
    let layout = age_layout();
    assert!((layout.spacing() - 100.0 / 62.0).abs() < 1e-12);
    let (lo, hi) = layout.region(31);
    assert!((lo - 37.5).abs() < 1e-9 && (hi - 62.5).abs() < 1e-9, "{lo} {hi}");
    assert!(layout.covers_range());
}

#[test]
fn age_layout_covers_every_label_many_times() {
    let layout = age_layout();
    let fewest = (0..=10_000)
        .map(|i| members(&layout, i as f64 / 100.0).len())
        .min()
        .unwrap();
    // brute-force minimum over a 0.01 grid, reached at the range ends
    assert_eq!(fewest, 8);
    let interior = (1250..=8750)
        .map(|i| members(&layout, i as f64 / 100.0).len())
        .min()
        .unwrap();
    assert!(interior >= 15, "{interior}");
}

#[test]
fn age_layout_label_fifty() {
    let layout = age_layout();
    let ind = indicators(50.0, &layout);
    let brute = members(&layout, 50.0);
    assert_eq!(ind.count, brute.len());
    assert_eq!(ind.count, 15);
    assert_eq!(ind.active_range().collect::<Vec<_>>(), brute);
}

#[test]
fn age_layout_label_zero_targets() {
    let layout = age_layout();
    let brute = members(&layout, 0.0);
    assert_eq!(brute, (0..8).collect::<Vec<_>>());
    let t = gating_targets(0.0, &layout).unwrap();
    for (l, &v) in t.iter().enumerate() {
        let want = if brute.contains(&l) { 1.0 / 8.0 } else { 0.0 };
        assert_eq!(v, want, "leaf {l}");
    }
}

#[test]
fn label_beyond_range_is_uncovered() {
    let layout = age_layout();
    assert_eq!(indicators(125.0, &layout).count, 0);
    assert!(gating_targets(125.0, &layout).is_err());
}

proptest! {
    #[test]
    fn active_set_is_contiguous_and_matches_brute_force(
        k in 2usize..80,
        span in 1.0f64..200.0,
        len_factor in 1.0f64..6.0,
        frac in 0.0f64..=1.0,
    ) {
        let layout = layout_regions(k, 0.0, span, len_factor * span / (k - 1) as f64).unwrap();
        let y = frac * span;
        let ind = indicators(y, &layout);
        let brute = members(&layout, y);
        prop_assert!(ind.count >= 1);
        prop_assert_eq!(ind.active_range().collect::<Vec<_>>(), brute);
        let t = gating_targets(y, &layout).unwrap();
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn local_predictions_stay_inside_regions(
        k in 2usize..40,
        acts in prop::collection::vec(1e-9f64..(1.0 - 1e-9), 40),
    ) {
        let layout = layout_regions(k, 0.0, 100.0, 25.0).unwrap();
        let mu = regress(&acts[..k], &layout).unwrap();
        for (l, &m) in mu.as_slice().iter().enumerate() {
            let (lo, hi) = layout.region(l);
            prop_assert!(lo <= m && m <= hi);
        }
    }

    #[test]
    fn interior_labels_have_nearly_constant_coverage(y in 12.5f64..=87.5) {
        let layout = age_layout();
        let r = indicators(y, &layout).count;
        let nominal = (25.0 / layout.spacing()).floor() as usize + 1;
        prop_assert!(r + 1 >= nominal && r <= nominal + 1, "R = {}, nominal {}", r, nominal);
    }
}
