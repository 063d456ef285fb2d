//! Property-based invariants over randomly generated inputs.

use ebin_core::field::TorusGrid;
use ebin_core::strata::{closure_boundary, enumerate_multiplicities, leq};
use ebin_core::symcore::{
    self, frobenius_inner, multiplicity_of, normal_form_embed, normal_form_extract,
    sorted_eigen, sym_exp, Multiplicity, NormalFormCoords, TracelessSym,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Strategy: a traceless symmetric matrix from free upper-triangle entries.
fn traceless(n: usize) -> impl Strategy<Value = TracelessSym> {
    prop::collection::vec(-2.0f64..2.0, n * (n + 1) / 2).prop_map(move |vals| {
        let mut mat = DMatrix::zeros(n, n);
        let mut it = vals.into_iter();
        for i in 0..n {
            for j in i..n {
                let v = it.next().unwrap();
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        let trace = mat.trace();
        for i in 0..n {
            mat[(i, i)] -= trace / n as f64;
        }
        TracelessSym::new(mat).expect("constructed traceless symmetric")
    })
}

fn composition(n: usize) -> impl Strategy<Value = Multiplicity> {
    prop::collection::vec(1usize..=n, 1..=n).prop_map(move |raw| {
        let mut parts = Vec::new();
        let mut left = n;
        for v in raw {
            if left == 0 {
                break;
            }
            let take = v.min(left);
            parts.push(take);
            left -= take;
        }
        if left > 0 {
            parts.push(left);
        }
        Multiplicity::new(parts).expect("positive parts summing to n")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frobenius_positive_definite(s in traceless(4)) {
        let norm2 = frobenius_inner(&s, &s).unwrap();
        prop_assert!(norm2 >= 0.0);
        prop_assert!((norm2 == 0.0) == (s.norm_fro() == 0.0));
    }

    #[test]
    fn eigen_reconstructs(n in 2usize..=6, seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = symcore::random_traceless(n, 1.7, &mut rng);
        let spec = sorted_eigen(&s).unwrap();
        let tol = 1e-10 * (1.0 + s.norm_fro());
        prop_assert!(spec.reconstruction_residual(&s) <= tol);
        prop_assert!(spec.orthogonality_residual() <= 1e-10);
        for w in spec.values.as_slice().windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn multiplicity_conjugation_invariant(s in traceless(5), seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = symcore::random_orthogonal(5, &mut rng);
        let rotated = s.conjugate(&a).unwrap();
        // Fixed tolerance away from gap boundaries: compare at a scale the
        // rotation cannot cross (eigenvalues move by <= 1e-10 here).
        let tol = 1e-3;
        let ms = multiplicity_of(sorted_eigen(&s).unwrap().values.as_slice(), tol);
        let mr = multiplicity_of(sorted_eigen(&rotated).unwrap().values.as_slice(), tol);
        prop_assert_eq!(ms.parts(), mr.parts());
    }

    #[test]
    fn sym_exp_inverse_pairs(s in traceless(4), t in -4.0f64..4.0) {
        let forward = sym_exp(&s, t).unwrap();
        let back = sym_exp(&s, -t).unwrap();
        // Conditioning-aware tolerance: the product of the two norms is
        // the natural error scale of the pairing.
        let scale = 1.0 + forward.norm() * back.norm();
        let residual = (forward * back - DMatrix::identity(4, 4)).norm();
        prop_assert!(residual <= 1e-11 * scale, "residual {residual:.3e}, scale {scale:.3e}");
    }

    #[test]
    fn normal_form_round_trip(m in 2usize..=6, coords in prop::collection::vec(-3.0f64..3.0, 27)) {
        let d = symcore::d_of(m);
        let b = NormalFormCoords::new(m, coords[..d].to_vec()).unwrap();
        let s = normal_form_embed(&b);
        prop_assert!(s.trace().abs() <= 1e-14);
        let back = normal_form_extract(&s).unwrap();
        for (x, y) in back.coords.iter().zip(&b.coords) {
            prop_assert!((x - y).abs() <= 1e-14);
        }
    }

    #[test]
    fn leq_reflexive_and_antisymmetric(a in composition(6), b in composition(6)) {
        prop_assert!(leq(&a, &a).unwrap());
        if leq(&a, &b).unwrap() && leq(&b, &a).unwrap() {
            prop_assert_eq!(a.parts(), b.parts());
        }
    }

    #[test]
    fn leq_transitive(a in composition(5), b in composition(5), c in composition(5)) {
        if leq(&a, &b).unwrap() && leq(&b, &c).unwrap() {
            prop_assert!(leq(&a, &c).unwrap());
        }
    }

    #[test]
    fn closure_boundary_agrees_with_leq(m in composition(5)) {
        let below = closure_boundary(&m);
        for face in enumerate_multiplicities(5, usize::MAX) {
            let expected = face.m != m && leq(&face.m, &m).unwrap();
            prop_assert_eq!(below.contains(&face.m), expected);
        }
    }

    #[test]
    fn grid_shift_by_res_is_identity(axis in 0usize..3, idx in 0usize..4096, delta in -3isize..=3) {
        let grid = TorusGrid::new(3, 16).unwrap();
        let idx = idx % grid.len();
        let there = grid.neighbor(idx, axis, delta);
        prop_assert_eq!(grid.neighbor(there, axis, -delta), idx);
        prop_assert_eq!(grid.neighbor(idx, axis, 16), idx);
        let [p1, _p2, m1, _m2] = grid.stencil4(idx, axis);
        prop_assert_eq!(p1, grid.neighbor(idx, axis, 1));
        prop_assert_eq!(m1, grid.neighbor(idx, axis, -1));
    }
}
