use std::collections::BTreeSet;

use ircount::pipeline::metrics::{bas, inject_errors};
use ircount::pipeline::pareto::{dominates, pareto_extract, Axis, ParetoPoint};
use ircount::pipeline::{folds, SEARCH_SESSION};
use proptest::prelude::*;

fn point(i: usize, bas: u8, cost: u16, quant: bool) -> ParetoPoint {
    ParetoPoint {
        model_id: format!("m{i:04}"),
        spec: if quant { "8-4-4-8".into() } else { "float32".into() },
        lambda: 0.0,
        // coarse grids so ties and duplicates are common
        bas_mean: bas as f64 / 20.0,
        bas_std: 0.0,
        params: cost as u64,
        macs: cost as u64 * 3,
        cycles: quant.then_some(cost as u64 * 7),
        memory: cost as u64 / 2,
    }
}

/// Non-dominated points, one per (cost, BAS) pair, lowest id kept.
fn brute_frontier(points: &[ParetoPoint], axis: Axis) -> Vec<ParetoPoint> {
    let mut out: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| p.cost(axis).is_some())
        .filter(|p| !points.iter().any(|q| dominates(q, p, axis)))
        .filter(|p| {
            !points
                .iter()
                .any(|q| q.cost(axis) == p.cost(axis) && q.bas_mean == p.bas_mean && q.model_id < p.model_id)
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| a.cost(axis).cmp(&b.cost(axis)).then(a.model_id.cmp(&b.model_id)));
    out
}

fn points_strategy() -> impl Strategy<Value = Vec<ParetoPoint>> {
    prop::collection::vec((0u8..=20, 0u16..200, any::<bool>()), 0..1000)
        .prop_map(|v| v.into_iter().enumerate().map(|(i, (b, c, q))| point(i, b, c, q)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frontier_matches_brute_force(points in points_strategy()) {
        for axis in Axis::ALL {
            let front = pareto_extract(&points, axis);
            prop_assert_eq!(&front, &brute_frontier(&points, axis));
            // strictly better BAS for strictly higher cost along the frontier
            for w in front.windows(2) {
                prop_assert!(w[0].cost(axis) < w[1].cost(axis));
                prop_assert!(w[0].bas_mean < w[1].bas_mean);
            }
        }
    }

    #[test]
    fn folds_partition_the_sessions(extra in prop::collection::btree_set(2u32..40, 1..12)) {
        let mut sessions: Vec<u32> = extra.iter().copied().collect();
        sessions.push(SEARCH_SESSION);
        let all: BTreeSet<u32> = sessions.iter().copied().collect();
        let fs = folds(&sessions).unwrap();
        let tests: Vec<u32> = fs.iter().map(|f| f.test).collect();
        prop_assert_eq!(tests, extra.iter().copied().collect::<Vec<_>>());
        for f in &fs {
            let mut train: BTreeSet<u32> = f.train.iter().copied().collect();
            prop_assert_eq!(train.len(), f.train.len());
            prop_assert!(train.contains(&SEARCH_SESSION));
            prop_assert!(train.insert(f.test));
            prop_assert_eq!(&train, &all);
        }
    }

    #[test]
    fn bas_is_a_mean_of_recalls(labels in prop::collection::vec(0usize..4, 1..200), rate in 0.0f64..1.0, seed in any::<u64>()) {
        prop_assert_eq!(bas(&labels, &labels).unwrap(), 1.0);
        let noisy = inject_errors(&labels, rate, seed);
        prop_assert_eq!(noisy.len(), labels.len());
        prop_assert!(noisy.iter().all(|&p| p < 4));
        let b = bas(&noisy, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert_eq!(inject_errors(&labels, rate, seed), noisy);
    }
}

#[test]
fn folds_need_the_search_session_and_one_more() {
    assert!(folds(&[2, 3]).is_err());
    assert!(folds(&[SEARCH_SESSION]).is_err());
}
