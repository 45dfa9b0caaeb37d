use proptest::prelude::*;

use setseq::data::{ObjectiveMatrix, ObjectiveSet, NUM_OBJECTIVES};
use setseq::decoder::{
    counterfactual_mask, is_unmasked, jmo_beam_search, relative_drops, setrank_sort, wtsum_rank, DecodeConfig,
};

fn instance(max_len: usize) -> impl Strategy<Value = (Vec<f64>, ObjectiveMatrix)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..1.0, n),
            proptest::collection::vec(proptest::array::uniform3(0u8..=1), n),
        )
            .prop_map(|(r, rows)| (r, ObjectiveMatrix::new(rows).unwrap()))
    })
}

fn objective_set() -> impl Strategy<Value = ObjectiveSet> {
    proptest::array::uniform3(any::<bool>()).prop_map(|flags| {
        let mut s = ObjectiveSet::none();
        for (o, on) in setseq::data::Objective::ALL.into_iter().zip(flags) {
            if on {
                s.insert(o);
            }
        }
        s
    })
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

proptest! {
    #[test]
    fn output_is_a_permutation_with_finite_score(
        (r, e) in instance(30), eps in 0.0f64..=1.0, k in 1usize..6, enabled in objective_set()
    ) {
        let out = jmo_beam_search(&r, &e, &DecodeConfig::new(eps, k, enabled).unwrap()).unwrap();
        prop_assert!(is_permutation(&out.order, r.len()));
        prop_assert!(out.score.unwrap().is_finite());
        prop_assert_eq!(out.steps.len(), r.len());
        prop_assert!(out.steps.iter().all(|s| !s.masked));
    }

    #[test]
    fn unmasked_sets_nest_in_epsilon(r in proptest::collection::vec(0.0f64..1.0, 1..60), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for d in relative_drops(&r) {
            prop_assert!(!is_unmasked(d, lo) || is_unmasked(d, hi));
        }
    }

    #[test]
    fn the_best_track_is_never_masked(r in proptest::collection::vec(-1.0f64..1.0, 1..40), eps in 0.0f64..=1.0) {
        let masked = counterfactual_mask(&r, eps);
        let best = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (m, &x) in masked.iter().zip(&r) {
            if x == best {
                prop_assert_eq!(*m, x);
            }
        }
    }

    #[test]
    fn zero_epsilon_reduces_to_sort((r, e) in instance(40), k in 1usize..6, enabled in objective_set()) {
        let sorted = setrank_sort(&r).order;
        prop_assert_eq!(&jmo_beam_search(&r, &e, &DecodeConfig::new(0.0, k, enabled).unwrap()).unwrap().order, &sorted);
        prop_assert_eq!(&wtsum_rank(&r, &e, 0.0).unwrap().order, &sorted);
    }

    #[test]
    fn disabled_objectives_at_zero_epsilon_reduce_to_sort((r, e) in instance(40), k in 1usize..6) {
        let cfg = DecodeConfig::new(0.0, k, ObjectiveSet::none()).unwrap();
        prop_assert_eq!(jmo_beam_search(&r, &e, &cfg).unwrap().order, setrank_sort(&r).order);
    }

    #[test]
    fn narrow_beams_never_beat_exhaustive((r, e) in instance(6), eps in 0.0f64..=1.0, enabled in objective_set()) {
        let best = jmo_beam_search(&r, &e, &DecodeConfig::exhaustive(eps, enabled)).unwrap().score.unwrap();
        for k in [1, 2, 3, 4, 8] {
            let s = jmo_beam_search(&r, &e, &DecodeConfig::new(eps, k, enabled).unwrap()).unwrap().score.unwrap();
            prop_assert!(s <= best);
        }
    }

    #[test]
    fn relabelling_tracks_relabels_the_output(
        (r, e) in instance(25), eps in 0.0f64..=0.3, k in 1usize..5, seed in any::<u64>()
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut perm: Vec<usize> = (0..r.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pr: Vec<f64> = perm.iter().map(|&i| r[i]).collect();
        let pe = ObjectiveMatrix::new(perm.iter().map(|&i| e.row(i)).collect::<Vec<[u8; NUM_OBJECTIVES]>>()).unwrap();
        let cfg = DecodeConfig::new(eps, k, ObjectiveSet::all()).unwrap();
        let base = jmo_beam_search(&r, &e, &cfg).unwrap();
        let moved = jmo_beam_search(&pr, &pe, &cfg).unwrap();
        prop_assert_eq!(base.score, moved.score);
        let mapped: Vec<usize> = moved.order.iter().map(|&i| perm[i]).collect();
        let distinct = {
            let mut s = r.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1])
        };
        if distinct && k == 1 {
            prop_assert_eq!(mapped, base.order);
        }
    }
}
