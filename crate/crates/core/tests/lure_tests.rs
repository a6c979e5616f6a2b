mod common;

use common::{certificate_holds, eig2, fixture, mat, paper_plant, random_positive_loop};
use lure_verify::linalg::{elementwise_leq, is_metzler, DenseMatrix, LinalgConfig};
use lure_verify::lure::{
    check_interconnection_positivity, check_lti_positivity, decay_envelope, positive_aizerman_test,
    verify_stability, LtiSystem, LureSystem, StabilityCertificate, Verdict, VerifyError,
};
use lure_verify::model::load_model;
use lure_verify::nn::{FeedforwardNet, ScalarActivation, SectorBound};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loaded(name: &str) -> LureSystem {
    load_model(fixture(name)).unwrap().lure_system().unwrap()
}

fn assert_close(m: &DenseMatrix, expected: &[&[f64]], tol: f64) {
    for (i, row) in expected.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((m[(i, j)] - v).abs() <= tol, "({i},{j}): {} vs {v}", m[(i, j)]);
        }
    }
}

fn checked(cert: &StabilityCertificate) {
    if let Some(d) = &cert.decay {
        assert!(certificate_holds(&d.v, d.epsilon, &cert.m_upper));
    }
}

#[test]
fn paper_fixture_is_certified() {
    let sys = loaded("paper-example.json");
    assert_eq!(sys.controller().architecture(), vec![10, 15, 15, 1]);
    let cert = verify_stability(&sys, &LinalgConfig::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::CertifiedGes);
    checked(&cert);
    assert_close(&cert.m_lower, &[&[-5.415, 0.405], &[2.17, -6.19]], 1e-9);
    assert_close(&cert.m_upper, &[&[-4.585, 1.595], &[3.83, -3.81]], 1e-9);
    let eig = cert.upper_spectrum.sorted_real_parts();
    assert!((eig[0] + 6.69).abs() <= 0.02 && (eig[1] + 1.70).abs() <= 0.02, "{eig:?}");
}

#[test]
fn wide_bound_fixture_matches_trace_det_oracle() {
    let sys = loaded("net-10-15-15-1.json");
    let cert = verify_stability(&sys, &LinalgConfig::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::CertifiedGes);
    checked(&cert);
    assert_close(&cert.m_upper, &[&[-3.625, 1.735], &[5.75, -3.53]], 1e-9);
    assert_close(&cert.m_lower, &[&[-6.375, 0.265], &[0.25, -6.47]], 1e-9);
    let oracle = eig2(&cert.m_upper.to_rows());
    let got = cert.upper_spectrum.sorted_real_parts();
    assert!((got[0] - oracle[0].0).abs() <= 1e-8 && (got[1] - oracle[1].0).abs() <= 1e-8);
    assert!((got[0] + 6.74).abs() < 0.01 && (got[1] + 0.42).abs() < 0.01);
}

#[test]
fn unstable_scalar_is_not_hurwitz() {
    let cert = verify_stability(&loaded("unstable-scalar.json"), &LinalgConfig::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::NotHurwitz);
    assert_eq!(cert.m_upper[(0, 0)], 1.5);
    assert!(cert.decay.is_none());
}

#[test]
fn marginal_loop_is_inconclusive() {
    let cert = verify_stability(&loaded("unit-tanh.json"), &LinalgConfig::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Inconclusive);
    assert!(cert.metzler_ok && !cert.hurwitz_ok);
}

#[test]
fn lti_positivity_examples() {
    assert!(check_lti_positivity(&paper_plant()));
    let z = DenseMatrix::zeros(2, 2);
    let sys = LtiSystem::new(mat(&[&[-1.0, -1.0], &[0.0, -1.0]]), z.clone(), z).unwrap();
    assert!(!check_lti_positivity(&sys));
    let sys = LtiSystem::new(mat(&[&[0.0]]), mat(&[&[-1.0]]), mat(&[&[1.0]])).unwrap();
    assert!(!check_lti_positivity(&sys));
}

#[test]
fn interconnection_examples() {
    let plant = paper_plant();
    let cfg = LinalgConfig::default();
    let test = |row: [f64; 2]| {
        let bound = SectorBound::symmetric(DenseMatrix::from_rows(&[row]).unwrap());
        let lower = plant.closed_with(&bound.lower).unwrap();
        (is_metzler(&lower, 0.0).unwrap(), lower)
    };
    let (ok, lower) = test([2.75, 1.47]);
    assert!(ok);
    assert_close(&lower, &[&[-6.375, 0.265], &[0.25, -6.47]], 1e-12);
    assert!(test([0.83, 1.19]).0);
    let (ok, lower) = test([0.0, 3.0]);
    assert!(!ok);
    assert!((lower[(0, 1)] + 0.5).abs() < 1e-12);

    let sys = loaded("paper-example.json");
    assert!(check_interconnection_positivity(&sys, 0.0).unwrap());
    let bound = SectorBound::symmetric(mat(&[&[0.0, 3.0]]));
    let cert = positive_aizerman_test(&plant, &bound, &cfg).unwrap();
    assert_eq!(cert.verdict, Verdict::NotPositiveInterconnection);
}

#[test]
fn negative_input_matrix_violates_hypothesis() {
    let plant = LtiSystem::new(mat(&[&[-1.0]]), mat(&[&[-1.0]]), mat(&[&[1.0]])).unwrap();
    let net = FeedforwardNet::new(vec![mat(&[&[1.0]]), mat(&[&[0.5]])], ScalarActivation::tanh())
        .unwrap();
    let sys = LureSystem::new(plant, net).unwrap();
    assert!(matches!(
        verify_stability(&sys, &LinalgConfig::default()),
        Err(VerifyError::Hypothesis(_))
    ));
    assert!(matches!(
        check_interconnection_positivity(&sys, 0.0),
        Err(VerifyError::Hypothesis(_))
    ));
}

#[test]
fn stale_bound_rejected() {
    let net = FeedforwardNet::new(vec![mat(&[&[1.0]]), mat(&[&[0.5]])], ScalarActivation::tanh())
        .unwrap();
    let plant = LtiSystem::new(mat(&[&[-1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap();
    let wrong = SectorBound::symmetric(mat(&[&[0.4]]));
    assert_eq!(
        LureSystem::with_bound(plant, net, wrong).unwrap_err(),
        VerifyError::StaleBound
    );
}

#[test]
fn envelope_examples() {
    let plant = LtiSystem::new(
        mat(&[&[-2.0, 0.0], &[0.0, -2.0]]),
        DenseMatrix::zeros(2, 1),
        DenseMatrix::zeros(1, 2),
    )
    .unwrap();
    let bound = SectorBound::symmetric(DenseMatrix::zeros(1, 1));
    let mut cert = positive_aizerman_test(&plant, &bound, &LinalgConfig::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::CertifiedGes);
    let d = cert.decay.as_mut().unwrap();
    d.v = vec![1.0, 1.0];
    d.epsilon = 1.0;
    d.v_min = 1.0;
    d.v_max = 1.0;
    assert_eq!(decay_envelope(&cert, 1.0, 0.0).unwrap(), 1.0);
    assert!((decay_envelope(&cert, 1.0, 2f64.ln()).unwrap() - 0.5).abs() < 1e-15);
    let d = cert.decay.as_mut().unwrap();
    d.v = vec![1.0, 2.0];
    d.epsilon = 0.5;
    d.v_max = 2.0;
    assert_eq!(decay_envelope(&cert, 3.0, 0.0).unwrap(), 6.0);
    assert!(decay_envelope(&cert, -1.0, 0.0).is_err());

    cert.verdict = Verdict::NotHurwitz;
    assert_eq!(decay_envelope(&cert, 1.0, 0.0), Err(VerifyError::NotCertified));
}

fn scale_last_layer(net: &FeedforwardNet, k: f64) -> FeedforwardNet {
    let mut layers = net.layers().to_vec();
    let last = layers.len() - 1;
    layers[last] = layers[last].scale(k);
    FeedforwardNet::with_activations(layers, net.activations().to_vec()).unwrap()
}

fn verdicts_along(sys: &LureSystem, ks: &[f64]) -> Vec<Verdict> {
    ks.iter()
        .map(|&k| {
            let net = scale_last_layer(sys.controller(), k);
            let scaled = LureSystem::new(sys.plant().clone(), net).unwrap();
            let g0 = sys.bound().upper.as_slice();
            for (a, b) in scaled.bound().upper.as_slice().iter().zip(g0) {
                assert!((a - k * b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            let cert = verify_stability(&scaled, &LinalgConfig::default()).unwrap();
            checked(&cert);
            cert.verdict
        })
        .collect()
}

#[test]
fn scaling_flips_scalar_loop_to_not_hurwitz() {
    let plant = LtiSystem::new(mat(&[&[-1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap();
    let net = FeedforwardNet::new(vec![mat(&[&[1.0]]), mat(&[&[0.25]])], ScalarActivation::tanh())
        .unwrap();
    let sys = LureSystem::new(plant, net).unwrap();
    let ks: Vec<f64> = (0..=80).map(|i| 1.0 + 0.1 * i as f64).collect();
    let v = verdicts_along(&sys, &ks);
    assert_eq!(v[0], Verdict::CertifiedGes);
    let first = v.iter().position(|x| *x != Verdict::CertifiedGes).unwrap();
    assert!((ks[first] - 4.0).abs() < 0.11);
    assert!(v[first..].iter().all(|x| *x != Verdict::CertifiedGes));
    assert_eq!(*v.last().unwrap(), Verdict::NotHurwitz);
}

#[test]
fn scaling_paper_fixtures_never_regains_certificate() {
    // The first verdict lost depends on which of det(M_upper) = 0 and a
    // negative off-diagonal in M_lower is reached first as k grows.
    let cases = [
        ("paper-example.json", Verdict::NotPositiveInterconnection),
        ("net-10-15-15-1.json", Verdict::NotPositiveInterconnection),
        ("net-10-10-1.json", Verdict::NotHurwitz),
    ];
    for (name, lost) in cases {
        let sys = loaded(name);
        let ks: Vec<f64> = (0..=300).map(|i| 1.0 + 0.01 * i as f64).collect();
        let v = verdicts_along(&sys, &ks);
        assert_eq!(v[0], Verdict::CertifiedGes, "{name}");
        let first = v.iter().position(|x| *x != Verdict::CertifiedGes).unwrap();
        assert!(v[first..].iter().all(|x| *x != Verdict::CertifiedGes), "{name}");
        assert_eq!(v[first], lost, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ordered_and_inherited(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_positive_loop(&mut rng, 6);
        let cert = verify_stability(&sys, &LinalgConfig::default()).unwrap();
        prop_assert!(elementwise_leq(&cert.m_lower, &cert.m_upper).unwrap());
        if cert.metzler_ok {
            prop_assert!(is_metzler(&cert.m_upper, 0.0).unwrap());
        }
        prop_assert_eq!(
            cert.verdict == Verdict::CertifiedGes,
            cert.metzler_ok && cert.hurwitz_ok && cert.decay.is_some()
        );
        if let Some(d) = &cert.decay {
            prop_assert!(certificate_holds(&d.v, d.epsilon, &cert.m_upper));
        }
    }
}
