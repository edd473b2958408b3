//! Property tests for the structural transforms.

use std::io::Cursor;

use bilu::{
    compress_companion, expand_permutation, read_matrix_market_from, symmetric_permute,
    write_matrix_market_to, BlockPartition, PermutationVector, SparseMatrix,
};
use proptest::prelude::*;

fn arb_matrix(max_n: usize) -> impl Strategy<Value = SparseMatrix> {
    (2..max_n)
        .prop_flat_map(|n| {
            let entry = (0..n, 0..n, -100.0f64..100.0);
            (Just(n), proptest::collection::vec(entry, 1..4 * n))
        })
        .prop_map(|(n, trips)| SparseMatrix::from_triplets(n, n, &trips).unwrap())
}

/// A permutation as a shuffled index vector.
fn arb_perm(n: usize) -> impl Strategy<Value = PermutationVector> {
    Just((0..n).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_map(|map| PermutationVector::from_map(map).unwrap())
}

fn arb_matrix_with_perm(max_n: usize) -> impl Strategy<Value = (SparseMatrix, PermutationVector)> {
    arb_matrix(max_n).prop_flat_map(|a| {
        let n = a.n_cols();
        (Just(a), arb_perm(n))
    })
}

proptest! {
    #[test]
    fn matrix_market_round_trip(a in arb_matrix(20)) {
        let mut buf = Vec::new();
        write_matrix_market_to(&a, &mut buf).unwrap();
        let b = read_matrix_market_from(Cursor::new(buf)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn symmetric_permute_round_trip((a, p) in arb_matrix_with_perm(16)) {
        let n = a.n_cols();
        let fwd = symmetric_permute(&a, &p).unwrap();
        let back = symmetric_permute(&fwd, &p.inverse()).unwrap();
        prop_assert_eq!(&back, &a);
        // entry mapping: fwd(i, j) == a(p[i], p[j])
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(fwd.get(i, j), a.get(p.map()[i], p.map()[j]));
            }
        }
    }

    #[test]
    fn permutation_compose_inverse_identity(p in (1usize..40).prop_flat_map(arb_perm)) {
        let n = p.len();
        let id = p.compose(&p.inverse());
        prop_assert_eq!(id, PermutationVector::identity(n));
    }

    #[test]
    fn companion_scalar_partition_keeps_pattern(a in arb_matrix(14)) {
        let b = compress_companion(&a, &BlockPartition::scalar(a.n_cols())).unwrap();
        prop_assert_eq!(b.ptr(), a.ptr());
        prop_assert_eq!(b.idx(), a.idx());
    }

    #[test]
    fn expansion_is_bijective(
        (sizes, pb) in proptest::collection::vec(1usize..5, 1..8)
            .prop_flat_map(|sizes| {
                let nb = sizes.len();
                (Just(sizes), arb_perm(nb))
            })
    ) {
        let part = BlockPartition::from_sizes(sizes).unwrap();
        let (p, newpart) = expand_permutation(&pb, &part).unwrap();
        prop_assert_eq!(p.len(), part.total());
        prop_assert_eq!(newpart.total(), part.total());
        // bijection is enforced by the constructor; check block adjacency
        for b in 0..newpart.n_blocks() {
            let span = newpart.span(b);
            let vals = &p.map()[span];
            prop_assert!(vals.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }
}
