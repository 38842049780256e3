use num_rational::BigRational;
use proptest::prelude::*;
use wrs::oracle::{exact_inclusion, exact_subset_probabilities, ratio};

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((1u32..64).prop_map(|w| f64::from(w) / 8.0), 1..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inclusion_sums_to_k(w in weights(), k in any::<prop::sample::Index>()) {
        let k = k.index(w.len() + 1);
        let table = exact_inclusion(&w, k).unwrap();
        let total: BigRational = table.probabilities.iter().cloned().sum();
        prop_assert_eq!(total, ratio(k as i64, 1));
        let subsets: BigRational = exact_subset_probabilities(&w, k).unwrap().into_iter().map(|s| s.1).sum();
        prop_assert_eq!(subsets, ratio(1, 1));
    }

    #[test]
    fn inclusion_is_permutation_equivariant(
        (w, order) in weights().prop_flat_map(|w| {
            let n = w.len();
            (Just(w), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
        k in any::<prop::sample::Index>(),
    ) {
        let k = k.index(w.len() + 1);
        let permuted: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let base = exact_inclusion(&w, k).unwrap();
        let moved = exact_inclusion(&permuted, k).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(&moved.probabilities[j], &base.probabilities[i]);
        }
    }

    #[test]
    fn heavier_items_are_likelier(w in weights(), k in any::<prop::sample::Index>()) {
        let k = k.index(w.len() + 1);
        let p = exact_inclusion(&w, k).unwrap().probabilities;
        for i in 0..w.len() {
            for j in 0..w.len() {
                if w[i] > w[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }
}
