mod support;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;
use subid_core::kalman::{KalmanParams, MisoKalmanState};

#[test]
fn growing_window_filter_equals_ridge_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for dim in 1..=8 {
        let params = KalmanParams {
            sigma0: 0.5,
            gamma: 0.0,
            xi0: 0.2,
            transition: 1.0,
        };
        let mut state = MisoKalmanState::init(dim, &params).unwrap();
        let truth: Vec<Complex64> = (0..dim).map(|_| rand_c(&mut rng)).collect();
        let (mut xs, mut ds) = (Vec::new(), Vec::new());
        for n in 1..=50 {
            let x: Vec<Complex64> = (0..dim).map(|_| rand_c(&mut rng)).collect();
            let d = truth.iter().zip(&x).map(|(h, v)| h.conj() * v).sum::<Complex64>() + rand_c(&mut rng) * 0.1;
            state.update(&x, d).unwrap();
            xs.push(x);
            ds.push(d);
            let want = ridge(&xs, &ds, params.xi0, params.sigma0);
            let scale = want.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-12);
            let diff = want
                .iter()
                .zip(&state.h)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(diff / scale <= 1e-6, "dim {dim} step {n}: {}", diff / scale);
        }
    }
}

#[test]
fn expected_prior_error_power_does_not_grow_after_onset() {
    let dim = 4;
    let runs = 200;
    let mut window_power = vec![0.0; 6];
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<Complex64> = (0..dim).map(|_| rand_c(&mut rng)).collect();
        let mut state = MisoKalmanState::init(dim, &KalmanParams { xi0: 1e-2, transition: 1.0, ..Default::default() }).unwrap();
        for n in 0..600 {
            let x: Vec<Complex64> = (0..dim).map(|_| rand_c(&mut rng)).collect();
            let d = truth.iter().zip(&x).map(|(h, v)| h.conj() * v).sum::<Complex64>() + rand_c(&mut rng) * 0.05;
            window_power[n / 100] += state.update(&x, d).unwrap().norm_sqr() / (100 * runs) as f64;
        }
    }
    for pair in window_power[1..].windows(2) {
        assert!(pair[1] <= 1.05 * pair[0], "{window_power:?}");
    }
}

#[test]
fn snapshot_round_trip_preserves_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = MisoKalmanState::init(5, &KalmanParams::default()).unwrap();
    for _ in 0..10 {
        let x: Vec<Complex64> = (0..5).map(|_| rand_c(&mut rng)).collect();
        state.update(&x, rand_c(&mut rng)).unwrap();
    }
    let restored = MisoKalmanState::from_bytes(&state.to_bytes()).unwrap();
    assert_eq!(restored.h, state.h);
    assert_eq!(restored.cov.matrix(), state.cov.matrix());
    assert_eq!(restored.cov.transition(), state.cov.transition());
    assert_eq!(restored.cov.process_noise(), state.cov.process_noise());
    assert_eq!(restored.xi2, state.xi2);
}

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), len)
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_stays_hermitian_and_innovation_dominates_noise(
        dim in 1usize..6,
        seed in any::<u64>(),
        steps in 1usize..40,
        xi2 in 1e-6f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = MisoKalmanState::init(dim, &KalmanParams::default()).unwrap();
        for _ in 0..steps {
            let x: Vec<Complex64> = (0..dim).map(|_| rand_c(&mut rng) * 5.0).collect();
            let gain = state.cov.clone().gain(&x, xi2).unwrap();
            prop_assert!(gain.eta2 >= xi2);
            state.update_with_noise(&x, rand_c(&mut rng), xi2).unwrap();
            prop_assert!(state.cov.hermitian_defect() <= 1e-10);
            for i in 0..dim {
                let diag = state.cov.matrix()[i * dim + i];
                prop_assert!(diag.re >= 0.0 && diag.im == 0.0);
            }
        }
    }

    #[test]
    fn prediction_is_linear_in_regressor(h in complex_vec(4), x in complex_vec(4), y in complex_vec(4)) {
        let mut state = MisoKalmanState::init(4, &KalmanParams::default()).unwrap();
        state.h = h;
        let sum: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let lhs = state.predict(&sum).unwrap();
        let rhs = state.predict(&x).unwrap() + state.predict(&y).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()));
    }

    #[test]
    fn snapshot_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = MisoKalmanState::from_bytes(&bytes);
    }
}
