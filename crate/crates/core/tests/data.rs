use bridgenet::data::{generate_synthetic, load_csv, read_csv, save_csv, split, synthetic_task, write_csv, SyntheticSpec};
use bridgenet::{Dataset64, Error};
use proptest::prelude::*;

fn spec(n: usize, segments: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        segments,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noiseless_generation_repeats_exactly() {
    let s = SyntheticSpec {
        n: 10,
        noise: 0.0,
        ..SyntheticSpec::default()
    };
    let a: Dataset64 = generate_synthetic(s).unwrap();
    let b: Dataset64 = generate_synthetic(s).unwrap();
    assert_eq!(a, b);
}

/// Locations where the one-sided slopes of the label curve disagree.
fn kinks(segments: usize, seed: u64) -> Vec<f64> {
    let task = synthetic_task(spec(10, segments, seed)).unwrap();
    let h = 1e-4;
    let mut found = Vec::new();
    let mut t = 0.01;
    while t < 99.99 {
        let left = (task.label(t) - task.label(t - h)) / h;
        let right = (task.label(t + h) - task.label(t)) / h;
        let jump = (left - right).abs() > 0.05 * left.abs().max(right.abs()).max(0.1);
        if jump && found.last().is_none_or(|&last: &f64| t - last > 0.5) {
            found.push(t);
        }
        t += 0.005;
    }
    found
}

#[test]
fn two_segments_have_one_boundary() {
    for seed in [1, 7, 42] {
        let k = kinks(2, seed);
        assert_eq!(k.len(), 1, "seed {seed}: {k:?}");
        assert!((k[0] - 50.0).abs() < 0.02, "{k:?}");
    }
}

#[test]
fn four_segments_have_three_boundaries() {
    let k = kinks(4, 7);
    assert_eq!(k.len(), 3, "{k:?}");
    for (found, want) in k.iter().zip([25.0, 50.0, 75.0]) {
        assert!((found - want).abs() < 0.02, "{k:?}");
    }
}

#[test]
fn generated_file_round_trips_exactly() {
    let d: Dataset64 = generate_synthetic(spec(200, 4, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    save_csv(&d, &path).unwrap();
    assert_eq!(load_csv::<f64>(&path).unwrap(), d);
}

#[test]
fn hand_written_file_round_trips() {
    let text = "label,stddev,a,b\n10,1,0.5,-2\n20.5,2,1e-3,3\n99,0.5,0,0\n";
    let d: Dataset64 = read_csv(text.as_bytes()).unwrap();
    let mut buf = Vec::new();
    write_csv(&d, &mut buf).unwrap();
    assert_eq!(read_csv::<f64, _>(buf.as_slice()).unwrap(), d);
}

#[test]
fn missing_label_column_is_a_schema_error() {
    let r = read_csv::<f64, _>("x,y\n1,2\n".as_bytes());
    assert!(matches!(r, Err(Error::Schema(_))));
}

#[test]
fn split_of_ten() {
    let d: Dataset64 = generate_synthetic(spec(10, 4, 1)).unwrap();
    let (a, b) = split(&d, 0.8, 5).unwrap();
    assert_eq!((a.len(), b.len()), (8, 2));
    assert_eq!(split(&d, 0.8, 5).unwrap(), (a, b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn labels_stay_in_range(seed in any::<u64>(), segments in 2usize..8) {
        let d: Dataset64 = generate_synthetic(spec(300, segments, seed)).unwrap();
        prop_assert!(d.labels().iter().all(|&y| (0.0..=100.0).contains(&y)));
    }

    #[test]
    fn split_partitions_the_samples(seed in any::<u64>(), n in 2usize..200, frac in 0.05f64..0.95) {
        let d: Dataset64 = generate_synthetic(spec(n, 4, 9)).unwrap();
        let n_train = (n as f64 * frac).round() as usize;
        prop_assume!(n_train > 0 && n_train < n);
        let (a, b) = split(&d, frac, seed).unwrap();
        let key = |y: f64| y.to_bits();
        let mut all: Vec<u64> = d.labels().into_iter().map(key).collect();
        let mut parts: Vec<u64> = a.labels().into_iter().chain(b.labels()).map(key).collect();
        all.sort_unstable();
        parts.sort_unstable();
        prop_assert_eq!(all, parts);
        prop_assert_eq!(a.len(), n_train);
    }
}
