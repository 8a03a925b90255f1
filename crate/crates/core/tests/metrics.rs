use caan_core::evaluation::*;
use caan_core::postprocess::Summary;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn summary(frames: usize, on: &[(usize, usize)]) -> Summary {
    Summary::from_intervals(frames, on)
}

/// Pearson correlation of average ranks, written out directly.
fn rank_pearson(a: &[f64], b: &[f64]) -> f64 {
    let rank = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let below = x.iter().filter(|&&w| w < v).count() as f64;
                let equal = x.iter().filter(|&&w| w == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn fscore_reference_cases() {
    let gt = summary(100, &[(0, 10)]);
    assert_eq!(fscore(&gt, &gt).unwrap().fscore, 100.0);
    assert_eq!(fscore(&summary(100, &[(50, 60)]), &gt).unwrap().fscore, 0.0);
    let half = fscore(&summary(100, &[(5, 15)]), &gt).unwrap();
    assert!((half.precision - 0.5).abs() < 1e-12 && (half.recall - 0.5).abs() < 1e-12);
    assert!((half.fscore - 50.0).abs() < 1e-12);
    assert_eq!(fscore(&summary(100, &[]), &gt).unwrap().fscore, 0.0);
    assert!(fscore(&summary(99, &[]), &gt).is_err());
}

#[test]
fn multi_user_aggregation() {
    let pred = summary(50, &[(0, 10)]);
    let users = [summary(50, &[(0, 10)]), summary(50, &[(20, 30)])];
    assert_eq!(fscore_multi_user(&pred, &users, Aggregation::Max).unwrap().fscore, 100.0);
    assert_eq!(fscore_multi_user(&pred, &users, Aggregation::Mean).unwrap().fscore, 50.0);
    let single = fscore_multi_user(&pred, &users[1..], Aggregation::Max).unwrap();
    assert_eq!(single, fscore(&pred, &users[1]).unwrap());
    assert!(fscore_multi_user(&pred, &[], Aggregation::Max).is_err());
}

#[test]
fn correlations_at_the_extremes() {
    let a = [0.1, 0.7, 0.3, 0.9, 0.5];
    let rev: Vec<f64> = a.iter().map(|v| -v).collect();
    assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
    assert_eq!(kendall_tau(&a, &rev).unwrap(), -1.0);
    assert!((spearman_rho(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman_rho(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
    assert!(kendall_tau(&a, &[0.5; 5]).is_err());
    assert!(spearman_rho(&a, &[0.5; 5]).is_err());
    assert!(kendall_tau(&a, &a[..4]).is_err());
}

#[test]
fn spearman_equals_rank_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [5, 17, 64, 200] {
        // coarse values so that ties occur
        let a: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let got = spearman_rho(&a, &b).unwrap();
        assert!((got - rank_pearson(&a, &b)).abs() < 1e-10, "n={n}");
    }
}

#[test]
fn kendall_tau_b_with_ties_by_hand() {
    // pairs: 6 total; concordant 4, discordant 1, one tie in a only
    let a = [1.0, 2.0, 2.0, 3.0];
    let b = [1.0, 3.0, 2.0, 0.5];
    // concordant: (0,1),(0,2) ; discordant: (0,3),(1,3),(2,3) ; tie in a: (1,2)
    let (c, d, ta, tb) = (2.0, 3.0, 1.0, 0.0);
    let want = (c - d) / ((c + d + ta) * (c + d + tb) as f64).sqrt();
    assert!((kendall_tau(&a, &b).unwrap() - want).abs() < 1e-12);
}

#[test]
fn independent_scores_are_uncorrelated() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        assert!(kendall_tau(&a, &b).unwrap().abs() < 0.08, "seed {seed}");
        assert!(spearman_rho(&a, &b).unwrap().abs() < 0.08, "seed {seed}");
    }
}

#[test]
fn fold_plan_partitions_ids() {
    let ids: Vec<String> = (0..25).map(|i| format!("v{i}")).collect();
    let plan = FoldPlan::new(&ids, 5, 3).unwrap();
    assert!(plan.folds.iter().all(|f| f.len() == 5));
    let mut all: Vec<String> = plan.folds.concat();
    all.sort();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(all, sorted);
    assert_eq!(plan.train_ids(2).len(), 20);
    assert!(plan.train_ids(2).iter().all(|id| !plan.folds[2].contains(id)));
    assert_eq!(plan, FoldPlan::new(&ids, 5, 3).unwrap());
    assert_ne!(plan, FoldPlan::new(&ids, 5, 4).unwrap());
    assert!(FoldPlan::new(&ids[..4], 5, 0).is_err());
    let uneven = FoldPlan::new(&ids[..23], 5, 0).unwrap();
    let sizes: Vec<usize> = uneven.folds.iter().map(Vec::len).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 23);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

proptest! {
    #[test]
    fn correlations_ignore_monotone_transforms(
        a in prop::collection::vec(-100.0f64..100.0, 3..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random()).collect();
        prop_assume!(a.iter().any(|&v| v != a[0]));
        let warped: Vec<f64> = a.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
        let (t1, t2) = (kendall_tau(&a, &b).unwrap(), kendall_tau(&warped, &b).unwrap());
        prop_assert!((t1 - t2).abs() < 1e-12);
        let (r1, r2) = (spearman_rho(&a, &b).unwrap(), spearman_rho(&warped, &b).unwrap());
        prop_assert!((r1 - r2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&t1) && (-1.0..=1.0).contains(&r1));
        prop_assert!((kendall_tau(&b, &a).unwrap() - t1).abs() < 1e-12);
    }

    #[test]
    fn fscore_is_symmetric(
        p in prop::collection::vec(any::<bool>(), 1..80),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<bool> = p.iter().map(|_| rng.random()).collect();
        let (pred, gt) = (Summary::from_mask(p), Summary::from_mask(g));
        let ab = fscore(&pred, &gt).unwrap();
        let ba = fscore(&gt, &pred).unwrap();
        prop_assert!((ab.fscore - ba.fscore).abs() < 1e-9);
        prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&ab.fscore));
    }
}
