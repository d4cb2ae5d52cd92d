use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use subedmd::dictionary::{monomial_count, monomial_dictionary};
use subedmd::dynamics::{sample_states, DomainBox, TrainingSet};
use subedmd::edmd::{
    bilinear_compression, bilinear_matrices_from_data, build_data_matrices, full_edmd, qr_transform,
    subspace_bilinear_compression, subspace_compression, DataMatrices,
};
use subedmd::linalg::{block_diag_identity, max_abs};
use subedmd::manifold::{
    horizontal_part, metric, random_stiefel, retract, subspace_distance, HorizontalVector, StiefelPoint,
};
use subedmd::objective::ObjectiveContext;
use subedmd::prediction::{predict_states, rollout_lifted, trajectory_distance, KoopmanLinearSystem};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn point(d: usize, r: usize) -> impl Strategy<Value = StiefelPoint> {
    any::<u64>().prop_map(move |seed| random_stiefel(d, r, seed).unwrap())
}

/// Polynomial map of the unit square used to generate snapshot pairs.
fn toy_pairs(degree: u32, seed: u64, scale: usize) -> (subedmd::dictionary::Dictionary, DataMatrices, TrainingSet) {
    let dict = monomial_dictionary(2, degree).unwrap();
    let xs = sample_states(&DomainBox::symmetric(2, 1.0), scale * dict.len(), seed);
    let ts = TrainingSet {
        outputs: xs
            .iter()
            .map(|x| DVector::from_row_slice(&[x[0] + 0.1 * x[1], x[1] - 0.1 * x[0] * x[0] * x[0]]))
            .collect(),
        inputs: xs,
    };
    let dm = build_data_matrices(&dict, &ts);
    (dict, dm, ts)
}

fn row_space_projector(x: &DMatrix<f64>) -> DMatrix<f64> {
    let q = x.transpose().qr().q();
    &q * q.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn horizontal_projector_properties(u in point(7, 3), w in matrix(7, 3), w2 in matrix(7, 3), a in matrix(3, 3)) {
        let p = horizontal_part(u.matrix(), &w);
        prop_assert!(max_abs(&(horizontal_part(u.matrix(), &p) - &p)) <= 1e-12);
        let p2 = horizontal_part(u.matrix(), &w2);
        prop_assert!((metric(&p, &w2) - metric(&w, &p2)).abs() <= 1e-12);
        prop_assert!(max_abs(&horizontal_part(u.matrix(), &(u.matrix() * a))) <= 1e-12);
    }

    #[test]
    fn distance_ignores_rotations(u1 in point(6, 2), u2 in point(6, 2), r1 in point(2, 2), r2 in point(2, 2)) {
        let d = subspace_distance(&u1, &u2).unwrap();
        let a = StiefelPoint::new(u1.matrix() * r1.matrix()).unwrap();
        let b = StiefelPoint::new(u2.matrix() * r2.matrix()).unwrap();
        prop_assert!((subspace_distance(&a, &b).unwrap() - d).abs() <= 1e-10);
        prop_assert!((subspace_distance(&u2, &u1).unwrap() - d).abs() <= 1e-10);
    }

    #[test]
    fn retraction_stays_on_manifold(u in point(8, 3), w in matrix(8, 3), scale in 0.0f64..5.0) {
        let v = HorizontalVector(horizontal_part(u.matrix(), &(w * scale)));
        let moved = retract(&u, &v).unwrap();
        let residual = (moved.matrix().transpose() * moved.matrix() - DMatrix::<f64>::identity(3, 3)).amax();
        prop_assert!(residual <= 1e-12);
    }

    #[test]
    fn monomial_count_is_binomial(n in 1usize..5, degree in 1u32..6) {
        let mut binom = 1usize;
        for k in 1..=degree as usize {
            binom = binom * (n + k) / k;
        }
        prop_assert_eq!(monomial_count(n, degree), binom);
        prop_assert_eq!(monomial_dictionary(n, degree).unwrap().len(), binom);
    }

    #[test]
    fn sampling_is_reproducible_and_in_box(seed in any::<u64>(), count in 0usize..50) {
        let domain = DomainBox::new(vec![-1.0, 0.5], vec![2.0, 0.75]).unwrap();
        let a = sample_states(&domain, count, seed);
        prop_assert_eq!(&a, &sample_states(&domain, count, seed));
        prop_assert!(a.iter().all(|x| domain.contains(x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_identity_and_oracles(seed in any::<u64>(), degree in 1u32..5) {
        let (_, dm, _) = toy_pairs(degree, seed, 5);
        let tm = qr_transform(&dm, 2, 2).unwrap();
        prop_assert!(tm.gram_residual() <= 1e-10);
        prop_assert!(max_abs(&(&tm.p * &tm.p_inv - DMatrix::identity(dm.dictionary_size(), dm.dictionary_size()))) <= 1e-10);

        let (h, a) = bilinear_matrices_from_data(&dm);
        let k = full_edmd(&dm).unwrap().k;
        let oracle = bilinear_compression(&h, &a).unwrap().k;
        prop_assert!(max_abs(&(k - oracle)) <= 1e-10);

        if tm.complement_dim() >= 1 {
            let r = tm.complement_dim().min(2);
            let u = random_stiefel(tm.complement_dim(), r, seed).unwrap();
            let te = DataMatrices::new(tm.g_e.clone(), tm.s_e.clone()).unwrap();
            let (he, ae) = bilinear_matrices_from_data(&te);
            let oracle = subspace_bilinear_compression(&he, &ae, &block_diag_identity(2, u.matrix())).unwrap().k;
            prop_assert!(max_abs(&(subspace_compression(&tm, &u).unwrap().k - oracle)) <= 1e-10);
        }
    }

    #[test]
    fn leading_row_spans_coincide(seed in any::<u64>()) {
        let (_, dm, _) = toy_pairs(3, seed, 4);
        let tm = qr_transform(&dm, 2, 2).unwrap();
        for k in 1..=dm.dictionary_size() {
            let pb = row_space_projector(&dm.g.rows(0, k).into_owned());
            let pe = row_space_projector(&tm.g_e.rows(0, k).into_owned());
            prop_assert!(max_abs(&(pb - pe)) <= 1e-8);
        }
    }

    #[test]
    fn change_of_basis_preserves_predictions(seed in any::<u64>(), pert in matrix(10, 10)) {
        let (dict, dm, ts) = toy_pairs(3, seed, 4);
        let kls_b = KoopmanLinearSystem::from_dictionary(&dict, &full_edmd(&dm).unwrap()).unwrap();
        let p = pert * 0.2 + DMatrix::identity(10, 10);
        let kls_e = kls_b.change_basis(&p).unwrap();
        for x0 in ts.inputs.iter().take(3) {
            let zb = rollout_lifted(&kls_b, x0, 10);
            let ze = rollout_lifted(&kls_e, x0, 10);
            prop_assert!(max_abs(&(ze.transpose() - &p * zb.transpose())) <= 1e-8);
            let xb = predict_states(&kls_b, x0, 10);
            let xe = predict_states(&kls_e, x0, 10);
            prop_assert!(max_abs(&(&xb.states - &xe.states)) <= 1e-8);
            prop_assert!(trajectory_distance(&xb, &xe, 10).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn objective_is_rotation_invariant(seed in any::<u64>(), rot in point(2, 2)) {
        let (dict, dm, ts) = toy_pairs(3, seed, 4);
        let tm = qr_transform(&dm, 2, 2).unwrap();
        let truths: Vec<_> = ts.inputs.iter().take(3).map(|x0| {
            let mut states = DMatrix::zeros(4, 2);
            let mut x = x0.clone();
            for t in 0..4 {
                states.set_row(t, &x.transpose());
                x = DVector::from_row_slice(&[x[0] + 0.1 * x[1], x[1] - 0.1 * x[0] * x[0] * x[0]]);
            }
            subedmd::dynamics::Trajectory { states }
        }).collect();
        let ctx = ObjectiveContext::new(tm, &dict, &ts.inputs[..3], &truths, 3, 2).unwrap();
        let u = random_stiefel(ctx.complement_dim(), 2, seed ^ 1).unwrap();
        let ur = StiefelPoint::new(u.matrix() * rot.matrix()).unwrap();
        prop_assert!((ctx.evaluate(&u).unwrap().value - ctx.evaluate(&ur).unwrap().value).abs() <= 1e-10);
    }

    #[test]
    fn error_measures_are_nonnegative(a in matrix(6, 2), b in matrix(6, 2)) {
        let ta = subedmd::dynamics::Trajectory { states: a };
        let tb = subedmd::dynamics::Trajectory { states: b };
        prop_assert!(trajectory_distance(&ta, &tb, 5).unwrap() >= 0.0);
        prop_assert_eq!(trajectory_distance(&ta, &ta, 5).unwrap(), 0.0);
    }
}

#[test]
fn full_rank_iff_positive_definite_gram() {
    let (_, dm, _) = toy_pairs(2, 3, 5);
    let (h, _) = bilinear_matrices_from_data(&dm);
    assert!(h.clone().cholesky().is_some());
    assert!(qr_transform(&dm, 2, 2).is_ok());

    // duplicate a row of G: rank drops, Gram loses definiteness
    let mut g = dm.g.clone();
    let row = g.row(1).into_owned();
    g.set_row(3, &row);
    let deficient = DataMatrices::new(g, dm.s.clone()).unwrap();
    let (h, a) = bilinear_matrices_from_data(&deficient);
    assert!(bilinear_compression(&h, &a).is_err());
    assert!(qr_transform(&deficient, 2, 2).is_err());
    assert!(full_edmd(&deficient).is_err());
}

#[test]
fn reduced_read_out_recovers_state() {
    let (dict, dm, ts) = toy_pairs(4, 2, 5);
    let tm = qr_transform(&dm, 2, 2).unwrap();
    let u = random_stiefel(tm.complement_dim(), 4, 1).unwrap();
    let kls = KoopmanLinearSystem::reduced(&dict, &tm, &u).unwrap();
    for x0 in &ts.inputs {
        let pred = predict_states(&kls, x0, 0);
        assert!((pred.state(0) - x0).norm() <= 1e-12);
    }
}
