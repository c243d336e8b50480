//! Property tests for structural invariants.

use dexpression::frameselect::{select_from_scores, window_schedule, windowed_maxima};
use dexpression::training::{make_folds, make_folds_by_group};
use dexpression::{Shape, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn folds_partition_without_overlap(
        n in 2usize..600,
        k in 2usize..12,
        seed in any::<u64>(),
    ) {
        prop_assume!(n >= k);
        let plan = make_folds(n, k, seed).unwrap();
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        for fold in 0..k {
            let test = plan.fold_indices(fold);
            let train = plan.train_indices(fold);
            for &i in &test {
                prop_assert!(!train.contains(&i));
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            sizes.push(test.len());
        }
        prop_assert!(seen.iter().all(|&s| s));
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn group_folds_never_split_a_group(
        n_groups in 2usize..20,
        per_group in 1usize..6,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(n_groups >= k);
        let groups: Vec<String> = (0..n_groups)
            .flat_map(|g| (0..per_group).map(move |_| format!("g{g}")))
            .collect();
        let plan = make_folds_by_group(&groups, k, seed).unwrap();
        let mut group_to_fold = std::collections::HashMap::new();
        for (i, g) in groups.iter().enumerate() {
            let fold = (0..k).find(|&f| plan.fold_indices(f).contains(&i)).unwrap();
            let prev = group_to_fold.entry(g.clone()).or_insert(fold);
            prop_assert_eq!(*prev, fold, "group {} split across folds", g);
        }
    }

    #[test]
    fn selection_count_and_order(scores in prop::collection::vec(0.0f32..1.0, 20..150)) {
        let picked = select_from_scores(&scores, 20).unwrap();
        prop_assert_eq!(picked.len(), 20);
        prop_assert!(picked.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(picked.iter().all(|&t| t < scores.len()));
    }

    #[test]
    fn every_windowed_maximum_dominates_its_window(
        scores in prop::collection::vec(0.0f32..1.0, 3..120),
        w in 1usize..40,
    ) {
        let survivors = windowed_maxima(&scores, w);
        let r = w / 2;
        for &t in &survivors {
            let lo = t.saturating_sub(r);
            let hi = (t + r).min(scores.len() - 1);
            for j in lo..=hi {
                if j < t {
                    prop_assert!(scores[j] < scores[t]);
                } else {
                    prop_assert!(scores[j] <= scores[t]);
                }
            }
        }
    }

    #[test]
    fn schedule_shrinks_and_terminates(n in 1usize..5000) {
        let ws = window_schedule(n);
        prop_assert!(ws.windows(2).all(|p| p[1] < p[0]));
        prop_assert_eq!(*ws.last().unwrap(), 1);
    }

    #[test]
    fn reshape_roundtrip_preserves_data(
        data in prop::collection::vec(-1.0f32..1.0, 24..=24),
    ) {
        let t = Tensor::from_vec(Shape::new(vec![2, 3, 4]).unwrap(), data.clone()).unwrap();
        let flat = t.reshape(Shape::new(vec![24]).unwrap()).unwrap();
        let back = flat.reshape(Shape::new(vec![2, 3, 4]).unwrap()).unwrap();
        prop_assert_eq!(back.as_slice(), &data[..]);
    }

    #[test]
    fn concat_then_slice_roundtrips(
        a in prop::collection::vec(-1.0f32..1.0, 12..=12),
        b in prop::collection::vec(-1.0f32..1.0, 8..=8),
    ) {
        let ta = Tensor::from_vec(Shape::new(vec![3, 2, 2]).unwrap(), a.clone()).unwrap();
        let tb = Tensor::from_vec(Shape::new(vec![2, 2, 2]).unwrap(), b.clone()).unwrap();
        let cat = Tensor::concat_channels(&ta, &tb).unwrap();
        prop_assert_eq!(cat.shape().dims(), &[5, 2, 2]);
        let front = cat.slice_channels(0, 3).unwrap();
        let back = cat.slice_channels(3, 5).unwrap();
        prop_assert_eq!(front.as_slice(), &a[..]);
        prop_assert_eq!(back.as_slice(), &b[..]);
    }
}
