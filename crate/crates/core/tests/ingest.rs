use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use divrate::ingest::*;
use divrate::model::*;
use proptest::prelude::*;

fn bundled(name: &str) -> RawHistogram {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name);
    parse_histogram(BufReader::new(File::open(path).unwrap())).unwrap()
}

#[test]
fn bundled_histogram_carries_its_metadata() {
    let h = bundled("t20_analogue.csv");
    assert_eq!(h.meta.doubling_time, Some(20.0));
    assert_eq!(h.meta.mean_volume, Some(1.36));
    assert_eq!(h.meta.label, "t20-analogue");
    assert_eq!(h.meta.require_doubling_time().unwrap(), 20.0);
    let h = bundled("t54_analogue.csv");
    assert_eq!(h.meta.doubling_time, Some(54.0));
}

#[test]
fn default_domain_is_four_mean_volumes() {
    let h = bundled("t20_analogue.csv");
    let x_max = default_x_max(&h);
    assert!((x_max - 5.44).abs() < 1e-12);
    let c = complete_boundaries(&h, x_max).unwrap();
    assert_eq!(c.points[0], (0.0, 0.0));
    assert_eq!(*c.points.last().unwrap(), (x_max, 0.0));
}

#[test]
fn missing_doubling_time_is_reported() {
    let text = "volume,count\n0.5,1\n1.0,2\n1.5,2\n2.0,1\n";
    let h = parse_histogram(text.as_bytes()).unwrap();
    assert!(matches!(
        h.meta.require_doubling_time(),
        Err(divrate::Error::MissingMetadata(_))
    ));
}

#[test]
fn bundled_data_ingest_to_a_valid_density() {
    for name in ["t20_analogue.csv", "t54_analogue.csv", "plateau.csv"] {
        let h = bundled(name);
        let x_max = default_x_max(&h);
        let c = complete_boundaries(&h, x_max).unwrap();
        let grid = UniformGrid::spanning(x_max, 1025).unwrap();
        let (d, _) = to_uniform_density(&c, &grid).unwrap();
        assert!(d.is_normalized(), "{name}");
        assert_eq!(d.values()[0], 0.0);
        assert!(d.values().iter().all(|&v| v >= 0.0));
    }
}

fn profile_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 8..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingested_density_is_always_valid(counts in profile_strategy(), spacing in 0.05f64..0.5) {
        let points: Vec<(f64, f64)> = counts
            .iter()
            .enumerate()
            .map(|(k, &c)| ((k + 1) as f64 * spacing, c + 0.01))
            .collect();
        let h = RawHistogram::new(points, DatasetMeta::default()).unwrap();
        let x_max = default_x_max(&h);
        let c = complete_boundaries(&h, x_max).unwrap();
        let grid = UniformGrid::spanning(x_max, 513).unwrap();
        let (d, _) = to_uniform_density(&c, &grid).unwrap();
        prop_assert!(d.values().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(d.values()[0], 0.0);
        prop_assert!(d.is_normalized());
    }

    #[test]
    fn on_grid_round_trip_is_idempotent(counts in prop::collection::vec(0.1f64..5.0, 30)) {
        let grid = UniformGrid::new(0.125, 33).unwrap();
        let mut v = vec![0.0];
        v.extend(counts.iter().cloned());
        v.extend([0.0, 0.0]);
        let n = SizeDensity::normalized(grid, v).unwrap();
        let h = RawHistogram::new(grid.nodes().zip(n.values().iter().cloned()).collect(), DatasetMeta::default()).unwrap();
        let text = h.to_csv();
        let parsed = parse_histogram(text.as_bytes()).unwrap();
        let c = complete_boundaries(&parsed, grid.x_max()).unwrap();
        let (d, _) = to_uniform_density(&c, &grid).unwrap();
        for (a, b) in d.values().iter().zip(n.values()) {
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn noise_preserves_normalization(eps in 0.0f64..0.3, seed in any::<u64>()) {
        let grid = UniformGrid::new(1.0 / 64.0, 257).unwrap();
        let n = SizeDensity::normalized(grid, grid.sample(|x| x * (4.0 - x))).unwrap();
        let spec = NoiseSpec::multiplicative(eps, seed);
        let a = add_noise(&n, &spec).unwrap();
        prop_assert!(a.density.is_normalized());
        prop_assert_eq!(&a.density, &add_noise(&n, &spec).unwrap().density);
    }
}
