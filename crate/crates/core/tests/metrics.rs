use bridgenet::metrics::{cs, cs_curve, default_thresholds, eps_error, evaluate, mae};
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-20.0f64..120.0, n),
            prop::collection::vec(0.0f64..=100.0, n),
        )
    })
}

#[test]
fn small_worked_values() {
    let p = [10.0f64, 20.0, 33.0];
    let y = [12.0, 20.0, 30.0];
    assert!((mae(&p, &y).unwrap() - 5.0 / 3.0).abs() < 1e-15);
    assert_eq!(cs(&p, &y, 0.0).unwrap(), 1.0 / 3.0);
    assert_eq!(cs(&p, &y, 2.0).unwrap(), 2.0 / 3.0);
    assert_eq!(cs(&p, &y, 3.0).unwrap(), 1.0);
}

#[test]
fn eps_error_of_one_sigma_miss() {
    let e = eps_error(&[11.0f64], &[10.0], &[1.0]).unwrap();
    assert!((e - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
    assert_eq!(eps_error(&[10.0], &[10.0], &[3.0]).unwrap(), 0.0);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(mae::<f64>(&[], &[]).is_err());
    assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    assert!(cs(&[1.0], &[1.0], -1.0).is_err());
    assert!(eps_error(&[1.0], &[1.0], &[0.0]).is_err());
}

#[test]
fn report_omits_eps_without_stddevs() {
    let r = evaluate(&[1.0, 2.0], &[1.0, 4.0], None, &default_thresholds()).unwrap();
    assert_eq!(r.samples, 2);
    assert_eq!(r.cs_curve.len(), 21);
    assert!(r.eps_error.is_none());
    assert!(!serde_json::to_string(&r).unwrap().contains("eps_error"));
}

proptest! {
    #[test]
    fn cs_curve_is_nondecreasing_in_unit_interval((p, y) in pairs()) {
        let curve = cs_curve(&p, &y, &default_thresholds()).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[0].cs <= w[1].cs);
        }
        prop_assert!(curve.iter().all(|c| (0.0..=1.0).contains(&c.cs)));
    }

    #[test]
    fn mae_matches_a_compensated_mean((p, y) in pairs()) {
        let got = mae(&p, &y).unwrap();
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (a, b) in p.iter().zip(&y) {
            let v = (a - b).abs();
            let t = sum + v;
            comp += if sum >= v { (sum - t) + v } else { (v - t) + sum };
            sum = t;
        }
        let want = (sum + comp) / p.len() as f64;
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn mae_is_zero_only_for_exact_predictions((p, y) in pairs()) {
        prop_assert_eq!(mae(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(mae(&p, &y).unwrap() == 0.0, p == y);
    }

    #[test]
    fn eps_error_stays_in_unit_interval(
        (p, y) in pairs(),
        sigma in 0.1f64..20.0,
    ) {
        let s = vec![sigma; p.len()];
        let e = eps_error(&p, &y, &s).unwrap();
        prop_assert!((0.0..=1.0).contains(&e), "{}", e);
        // oracle: the same mean computed term by term in f64 with exp_m1
        let want = -p.iter().zip(&y).map(|(a, b)| (-(a - b).powi(2) / (2.0 * sigma * sigma)).exp_m1()).sum::<f64>()
            / p.len() as f64;
        prop_assert!((e - want).abs() <= 1e-12);
    }
}
