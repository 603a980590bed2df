use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocalfx::analysis::*;
use vocalfx::params::maps::map_bounded;
use vocalfx::params::NUM_MINIMAL;

fn table(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..cols).map(|_| r.gen_range(-3.0..3.0)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spearman_ignores_monotone_maps(seed in any::<u64>(), lo in -10.0..0.0f64, width in 0.1..100.0f64) {
        let s = table(12, 4, seed);
        let mapped: Vec<Vec<f64>> = s
            .iter()
            .map(|r| vec![map_bounded(r[0], lo, lo + width).unwrap(), r[1].exp(), r[2].powi(3), -r[3]])
            .collect();
        let a = spearman(&s, None).unwrap();
        let b = spearman(&mapped, None).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let sign = if (i == 3) != (j == 3) { -1.0 } else { 1.0 };
                let (x, y) = (a.get(i, j).unwrap(), b.get(i, j).unwrap());
                prop_assert!((x - sign * y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_matrix_is_symmetric_with_unit_diagonal(seed in any::<u64>()) {
        let c = spearman(&table(9, 6, seed), None).unwrap();
        for i in 0..6 {
            prop_assert!((c.get(i, i).unwrap() - 1.0).abs() < 1e-12);
            for j in 0..6 {
                let v = c.get(i, j).unwrap();
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert_eq!(v, c.get(j, i).unwrap());
            }
        }
    }

    #[test]
    fn cpv_is_monotone_and_ends_at_hundred(seed in any::<u64>(), n in 3usize..30) {
        let m = pca_fit(&table(n, 7, seed)).unwrap();
        let curve = m.cpv_curve();
        prop_assert!(curve.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!((curve.last().unwrap() - 100.0).abs() < 1e-9);
        prop_assert!(m.eigenvalues.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn training_projections_have_diagonal_covariance(seed in any::<u64>()) {
        let s = table(40, 5, seed);
        let m = pca_fit(&s).unwrap();
        let z: Vec<Vec<f64>> = s.iter().map(|x| m.project(x).unwrap()).collect();
        let n = z.len() as f64;
        for a in 0..m.rank() {
            for b in 0..m.rank() {
                let c = z.iter().map(|v| v[a] * v[b]).sum::<f64>() / (n - 1.0);
                let want = if a == b { m.eigenvalues[a] } else { 0.0 };
                prop_assert!((c - want).abs() < 1e-9 * m.eigenvalues[0]);
            }
        }
    }

    #[test]
    fn dendrogram_is_binary(seed in any::<u64>(), n in 2usize..9) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..10.0)).collect();
        let d: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| (a - b).abs()).collect()).collect();
        let merges = ward_cluster(&d).unwrap();
        prop_assert_eq!(merges.len(), n - 1);
        prop_assert_eq!(merges.last().unwrap().size, n);
        prop_assert!(merges.windows(2).all(|w| w[1].height >= w[0].height - 1e-12));
    }
}

#[test]
fn three_points_merge_closest_pair_first() {
    // 0 and 1 are closest; Ward then joins 2 at height sqrt(2 * 2/3) * distance to the centroid
    let pts = [0.0, 1.0, 5.0];
    let d: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| f64::abs(a - b)).collect()).collect();
    let m = ward_cluster(&d).unwrap();
    assert_eq!((m[0].a.min(m[0].b), m[0].a.max(m[0].b)), (0, 1));
    assert!((m[0].height - 1.0).abs() < 1e-12);
    let ess = (2.0 * 1.0 / 3.0) * 4.5f64.powi(2);
    assert!((m[1].height - (2.0 * ess).sqrt()).abs() < 1e-12);
}

#[test]
fn preset_collection_end_to_end() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    // a shared latent couples the first two effect blocks
    let s: Vec<Vec<f64>> = (0..60)
        .map(|_| {
            let z: f64 = r.gen_range(-1.0..1.0);
            (0..NUM_MINIMAL)
                .map(|k| if k < 23 { z + 0.2 * r.gen_range(-1.0..1.0) } else { r.gen_range(-1.0..1.0) })
                .collect()
        })
        .collect();
    let c = spearman(&s, Some(minimal_labels())).unwrap();
    assert_eq!(c.dim(), NUM_MINIMAL);
    let e = effect_correlation(&c, &effect_groups()).unwrap();
    assert_eq!(e.names.len(), 6);
    assert!(e.values[0][1].unwrap() > 0.8);
    assert!(e.values[2][3].unwrap() < 0.2);
    // single-parameter blocks have no off-diagonal self pairs
    assert!(e.values[4][4].is_none() && e.values[5][5].is_none());
    let merges = ward_cluster(&e.dissimilarity()).unwrap();
    assert_eq!(merges.len(), 5);
    assert_eq!((merges[0].a.min(merges[0].b), merges[0].a.max(merges[0].b)), (0, 1));
    let m = pca_fit(&s).unwrap();
    assert!(m.cpv(1).unwrap() > 10.0);
    let text = serde_json::to_string(&m).unwrap();
    let back: PcaModel = serde_json::from_str(&text).unwrap();
    assert_eq!(back.rank(), m.rank());
}
