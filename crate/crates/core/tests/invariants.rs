//! Cross-module invariants and a small end-to-end run on synthetic data.

use ndarray::Array2;
use proptest::prelude::*;

use ibconvex::convexity::{system_consistency, ConvexityOptions};
use ibconvex::hull::convex_hull;
use ibconvex::ib::{self, FrontierOptions};
use ibconvex::info;
use ibconvex::model::{mode_partition, HardPartition, MeaningModel, NamingSystem, Prior, Universe};
use ibconvex::{stats, synthetic, wcs};

fn normalized(rows: usize, cols: usize, raw: &[f64]) -> Array2<f64> {
    let mut m = Array2::from_shape_vec((rows, cols), raw.iter().map(|x| x + 1e-9).collect()).unwrap();
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

fn model_and_system() -> impl Strategy<Value = (MeaningModel, NamingSystem)> {
    (2usize..8, 1usize..6).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(0.0f64..1.0, n * n),
            prop::collection::vec(0.05f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n * k),
        )
            .prop_map(move |(m, p, q)| {
                let mm = MeaningModel::new(normalized(n, n, &m), Prior::from_weights(p).unwrap()).unwrap();
                (mm, NamingSystem::from_matrix(normalized(n, k, &q)).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn information_quantities_are_bounded((mm, sys) in model_and_system()) {
        let t = info::tradeoff(&sys, &mm);
        let imu = info::meaning_information(&mm);
        prop_assert!(t.complexity >= -1e-12);
        prop_assert!(t.complexity <= (sys.k() as f64).log2() + 1e-9);
        prop_assert!(t.accuracy >= -1e-12);
        // data processing: W depends on U only through M
        prop_assert!(t.accuracy <= t.complexity + 1e-9);
        prop_assert!(t.accuracy <= imu + 1e-9);
        prop_assert!((info::communicative_cost(&sys, &mm) - (imu - t.accuracy)).abs() < 1e-9);
    }

    #[test]
    fn hull_contains_its_generators_and_centroid(
        pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..12)
    ) {
        let hull = convex_hull(&pts);
        for p in &pts {
            prop_assert!(hull.contains(p, 1e-7 * 20.0));
        }
        let c = pts.iter().fold([0.0; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]]);
        let c = c.map(|x| x / pts.len() as f64);
        prop_assert!(hull.contains(&c, 1e-7 * 20.0));
    }

    #[test]
    fn consistency_is_one_for_a_single_category(n in 2usize..20) {
        let rows: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, (i * i) as f64 % 7.0, 0.0]).collect();
        let u = Universe::from_rows(&rows).unwrap();
        let p = HardPartition::from_labels(&vec![0; n]);
        prop_assert!((system_consistency(&p, &u).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn synthetic_pipeline_scores_every_language_and_rotation() {
    let dir = tempfile::tempdir().unwrap();
    synthetic::write_dataset(dir.path(), 4, 11).unwrap();
    let data = wcs::load_wcs_dir(dir.path()).unwrap();
    assert_eq!(data.languages.len(), 4);
    let meanings = wcs::gaussian_meanings(&data.universe, 64.0, Prior::uniform(data.universe.len())).unwrap();
    let betas = ib::beta_grid(1.0, 2.0, 3).unwrap();
    let frontier = ib::compute_frontier(&meanings, &betas, &FrontierOptions::default()).unwrap();
    assert!(frontier.invariant_violations().is_empty());

    // frontier encoders lie on the frontier they define
    for (pt, enc) in frontier.points.iter().zip(frontier.encoders.as_ref().unwrap()) {
        let e = ib::epsilon(enc, &meanings, &frontier);
        assert!(e.epsilon.abs() < 1e-6, "beta {}: eps {}", pt.beta, e.epsilon);
        let c = system_consistency(&mode_partition(enc), &data.universe).unwrap();
        assert!((0.0..=1.0).contains(&c));
    }

    let records = stats::rotation_scores(&data, &meanings, &frontier, &ConvexityOptions::default(), true).unwrap();
    assert_eq!(records.len(), 4 * (stats::ROTATIONS as usize + 1));
    assert!(records.iter().all(|r| r.epsilon_bits >= -1e-9 && r.convexity > 0.0 && r.convexity <= 1.0));
    let pairs = stats::build_pairs(&records).unwrap();
    assert_eq!(pairs.len(), 2 * 4 * stats::ROTATIONS as usize);
    let (eff, conv) = stats::advantage_rates(&records).unwrap();
    assert!((0.0..=1.0).contains(&eff) && (0.0..=1.0).contains(&conv));
}
