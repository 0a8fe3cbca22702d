//! Clustering metrics against brute force and their invariances.

use aecl::evaluation::{accuracy, negative_similarity, nmi};
use aecl::model::softmax_rows;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best agreement over every injective relabelling of the predictions.
fn brute_force_accuracy(y: &[usize], pred: &[usize]) -> f64 {
    let k = y.iter().chain(pred).copied().max().unwrap() + 1;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = y.iter().zip(pred).filter(|(t, q)| p[**q] == **t).count();
        best = best.max(hits);
    });
    best as f64 / y.len() as f64
}

fn permute(v: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, visit);
        v.swap(start, i);
    }
}

#[test]
fn accuracy_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..300 {
        let n = rng.random_range(1..=12);
        let kt = rng.random_range(1..=5);
        let kp = rng.random_range(1..=5);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..kt)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..kp)).collect();
        let got = accuracy(&y, &pred).unwrap();
        let want = brute_force_accuracy(&y, &pred);
        assert!((got - want).abs() < 1e-15, "case {case}: {y:?} {pred:?} -> {got} vs {want}");
    }
}

fn labels(max_k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..40).prop_flat_map(move |n| {
        (
            prop::collection::vec(0..max_k, n),
            prop::collection::vec(0..max_k, n),
        )
    })
}

proptest! {
    #[test]
    fn nmi_symmetric((a, b) in labels(6)) {
        let ab = nmi(&a, &b).unwrap();
        let ba = nmi(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn nmi_and_accuracy_ignore_label_names((a, b) in labels(6), seed in any::<u64>()) {
        let mut names: Vec<usize> = (0..6).map(|x| x * 3 + 11).collect();
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let renamed: Vec<usize> = b.iter().map(|&x| names[x]).collect();
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&a, &renamed).unwrap()).abs() < 1e-12);
        prop_assert_eq!(accuracy(&a, &b).unwrap(), accuracy(&a, &renamed).unwrap());
    }

    #[test]
    fn nmi_self_is_one((a, _) in labels(6)) {
        let v = nmi(&a, &a).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-12, "{}", v);
        prop_assert_eq!(accuracy(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ns_and_ps_are_complements(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_fn((n, n), |_| rng.random_range(-3.0..3.0));
        let s = softmax_rows(&logits);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let (ns, ps) = negative_similarity(&s, &y).unwrap();
        prop_assert_eq!(ns + ps, 1.0);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ns));
    }
}
