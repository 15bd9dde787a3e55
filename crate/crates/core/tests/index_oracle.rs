use proptest::prelude::*;
use weakspot_core::data::{bind, DatasetBundle, EmbeddingStore, Record, Split};
use weakspot_core::index::NeighborIndex;

fn bundle(points: &[Vec<f32>]) -> DatasetBundle {
    let dim = points[0].len();
    let records = (0..points.len())
        .map(|i| Record::new(format!("p{i:03}"), Split::Test, "c"))
        .collect();
    bind(EmbeddingStore::from_rows(dim, points).unwrap(), records).unwrap()
}

/// Exhaustive scan: every distance in f64, sorted by (distance, id).
fn oracle(points: &[Vec<f32>], q: &[f32], exclude: Option<usize>) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| {
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            (format!("p{i:03}"), d2.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all
}

fn cloud(max_n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    // a coarse grid forces exact distance ties
    prop::collection::vec(
        prop::collection::vec((-4i32..4).prop_map(|v| v as f32 * 0.5), dim),
        2..max_n,
    )
}

proptest! {
    #[test]
    fn top_k_matches_exhaustive_scan(points in cloud(60, 3), k in 1usize..70, qi in 0usize..60) {
        let b = bundle(&points);
        let index = NeighborIndex::build(&b, |_| true);
        let qi = qi % points.len();
        let got = index.top_k(&points[qi], k, Some(&format!("p{qi:03}"))).unwrap();
        let want = oracle(&points, &points[qi], Some(qi));
        prop_assert_eq!(got.len(), k.min(points.len() - 1));
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(&g.id, &w.0);
            prop_assert!((g.distance - w.1).abs() < 1e-9);
        }
    }

    #[test]
    fn within_radius_is_capped_prefix(points in cloud(60, 2), r in 0.0f64..3.0, cap in 1usize..80) {
        let b = bundle(&points);
        let index = NeighborIndex::build(&b, |_| true);
        let q = [0.25f32, -0.25];
        let got = index.within_radius(&q, r, cap, None).unwrap();
        let want: Vec<_> = oracle(&points, &q, None).into_iter().take(cap).filter(|(_, d)| *d <= r).collect();
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(&g.id, &w.0);
        }
    }

    #[test]
    fn result_sizes_are_bounded(points in cloud(40, 4), k in 0usize..50) {
        let b = bundle(&points);
        let index = NeighborIndex::build(&b, |_| true);
        let got = index.top_k(&points[0], k, None).unwrap();
        prop_assert_eq!(got.len(), k.min(points.len()));
        prop_assert!(got.windows(2).all(|w| w[0].distance <= w[1].distance));
    }
}

#[test]
fn batch_queries_agree_with_single_queries() {
    let points: Vec<Vec<f32>> = (0..50)
        .map(|i| vec![(i % 7) as f32, (i / 7) as f32, 0.5 * i as f32])
        .collect();
    let b = bundle(&points);
    let index = NeighborIndex::build(&b, |_| true);
    let queries: Vec<&[f32]> = points.iter().take(10).map(Vec::as_slice).collect();
    let batched = index.batch_top_k(&queries, 5).unwrap();
    for (q, got) in queries.iter().zip(batched) {
        assert_eq!(got, index.top_k(q, 5, None).unwrap());
    }
}
