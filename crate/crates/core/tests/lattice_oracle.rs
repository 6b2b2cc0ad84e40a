mod support;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;
use subid_core::dependency::{DependencyMap, InputLayout};
use subid_core::lattice::{LatticeConfig, LatticeFilter, PredictorSupport};

fn assert_close(a: &[Complex64], b: &[Complex64], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).norm() <= tol, "{x} vs {y}");
    }
}

#[test]
fn matches_scalar_transliteration() {
    let (n, stages, a, gamma) = (2, 2, 0.999, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut filter = LatticeFilter::new(oracle_config(n, stages, a, gamma), DependencyMap::full(n, n)).unwrap();
    let mut oracle = Transliteration::new(n, stages, a, gamma);
    for _ in 0..6 {
        let x = rand_vec(&mut rng, n);
        let d = rand_vec(&mut rng, n);
        let got = filter.process_vectors(&x, &d).unwrap();
        let (want, xi2) = oracle.frame(&x, &d);
        assert_close(&got.residual, &want, 1e-12);
        assert!((got.xi2 - xi2).abs() <= 1e-12);
        for m in 0..stages {
            let s = &filter.stages()[m];
            let flat = |mat: &Mat| -> Vec<Complex64> { mat.iter().flatten().copied().collect() };
            assert_close(&s.forward.dense(), &flat(&oracle.kf[m]), 1e-12);
            assert_close(&s.backward.dense(), &flat(&oracle.kb[m]), 1e-12);
            assert_close(&s.joint.dense(), &flat(&oracle.hj[m]), 1e-12);
            assert_close(&s.delayed_backward, &oracle.bd[m], 1e-12);
        }
    }
}

/// Colored two-sided input from a random subband AR(1) process.
fn ar_frames(rng: &mut ChaCha8Rng, ns: usize, frames: usize, pole: f64) -> Vec<Vec<Complex64>> {
    let mut state = vec![Complex64::new(0.0, 0.0); ns];
    (0..frames)
        .map(|_| {
            for s in state.iter_mut() {
                *s = *s * pole + rand_c(rng);
            }
            state.clone()
        })
        .collect()
}

#[test]
fn backward_errors_decorrelate_across_stages() {
    let ns = 4;
    let stages = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = oracle_config(ns, stages, 1.0, 1e-6);
    let mut filter = LatticeFilter::new(cfg, DependencyMap::full(ns, ns)).unwrap();
    let xs = ar_frames(&mut rng, ns, 3000, 0.8);
    let mut history: Vec<Vec<Vec<Complex64>>> = Vec::new();
    for x in &xs {
        let d: Vec<Complex64> = x.iter().map(|v| v + rand_c(&mut rng) * 0.3).collect();
        filter.process_vectors(x, &d).unwrap();
        history.push(filter.backward_errors().iter().map(|b| b.to_vec()).collect());
    }
    let tail = &history[2000..];
    for m in 0..stages {
        for mm in m + 1..stages {
            let mut total = 0.0;
            for k in 0..ns {
                let (mut cross, mut e1, mut e2) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
                for frame in tail {
                    cross += frame[m][k] * frame[mm][k].conj();
                    e1 += frame[m][k].norm_sqr();
                    e2 += frame[mm][k].norm_sqr();
                }
                total += cross.norm() / (e1 * e2).sqrt();
            }
            let mean = total / ns as f64;
            assert!(mean < 0.1, "stages {m},{mm}: {mean}");
        }
    }
}

#[test]
fn stage_error_averages_do_not_increase() {
    let ns = 4;
    let stages = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = oracle_config(ns, stages, 1.0, 1e-6);
    let mut filter = LatticeFilter::new(cfg, DependencyMap::full(ns, ns)).unwrap();
    let xs = ar_frames(&mut rng, ns, 2000, 0.7);
    // one tap per stage so that no stage is redundant
    let taps: Vec<Complex64> = rand_vec(&mut rng, stages);
    let mut sums = vec![0.0; stages];
    for l in 0..xs.len() {
        let d: Vec<Complex64> = (0..ns)
            .map(|k| (0..stages).filter(|&t| t <= l).map(|t| taps[t] * xs[l - t][k]).sum::<Complex64>() + rand_c(&mut rng) * 0.3)
            .collect();
        let r = filter.process_vectors(&xs[l], &d).unwrap();
        if l >= 1900 {
            for (s, e) in sums.iter_mut().zip(&r.stage_error_energy) {
                *s += e;
            }
        }
    }
    for w in sums.windows(2) {
        assert!(w[1] <= w[0], "{sums:?}");
    }
}

#[test]
fn widened_map_is_promoted_and_improves_residual() {
    let ns = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let layout = InputLayout::TwoSided;
    let mut filter = LatticeFilter::new(LatticeConfig::new(ns, 2), coupled_map(layout, ns, false)).unwrap();
    let mut energies = Vec::new();
    let mut promoted_at = None;
    for l in 0..1000 {
        if l == 300 {
            filter.apply_map_change(&coupled_map(layout, ns, true)).unwrap();
        }
        let x = rand_vec(&mut rng, ns);
        let d = coupled_desired(&mut rng, &x);
        let r = filter.process_vectors(&layout.regressor(&x), &d).unwrap();
        if r.promoted {
            promoted_at = Some(l);
        }
        energies.push(r.residual.iter().map(|z| z.norm_sqr()).sum::<f64>());
    }
    let at = promoted_at.expect("shadow should be promoted");
    assert!(at < 900, "promoted late at {at}");
    assert_eq!(filter.map(), &coupled_map(layout, ns, true));
    let before = mean_db(&energies[200..300]);
    let after = mean_db(&energies[900..]);
    assert!(before - after >= 3.0, "before {before} after {after}");
}

#[test]
fn narrowed_map_is_never_promoted() {
    let ns = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let layout = InputLayout::TwoSided;
    let full = coupled_map(layout, ns, true);
    let mut filter = LatticeFilter::new(LatticeConfig::new(ns, 2), full.clone()).unwrap();
    let mut narrowed = full.clone();
    narrowed.set(2, layout.column(ns, 3, false).unwrap(), false);
    for l in 0..1000 {
        if l == 300 {
            filter.apply_map_change(&narrowed).unwrap();
        }
        let x = rand_vec(&mut rng, ns);
        let d = coupled_desired(&mut rng, &x);
        let r = filter.process_vectors(&layout.regressor(&x), &d).unwrap();
        assert!(!r.promoted, "promoted at frame {l}");
    }
    assert_eq!(filter.promotions(), 0);
    assert_eq!(filter.map(), &full);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masked_entries_stay_zero(seed in any::<u64>(), density in 0.1f64..0.9, frames in 1usize..30) {
        let ns = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<bool>> = (0..ns).map(|_| (0..2 * ns).map(|_| rng.gen_bool(density)).collect()).collect();
        let map = DependencyMap::from_rows(&rows).unwrap();
        let cfg = LatticeConfig { predictor_support: PredictorSupport::Band(1), ..LatticeConfig::new(ns, 2) };
        let mut filter = LatticeFilter::new(cfg, map.clone()).unwrap();
        for _ in 0..frames {
            let x = rand_vec(&mut rng, 2 * ns);
            let d = rand_vec(&mut rng, ns);
            filter.process_vectors(&x, &d).unwrap();
        }
        for stage in filter.stages() {
            let joint = stage.joint.dense();
            for c in 0..2 * ns {
                for r in 0..ns {
                    if !map.get(r, c) {
                        prop_assert_eq!(joint[c * ns + r], Complex64::new(0.0, 0.0));
                    }
                }
            }
            for set in [&stage.forward, &stage.backward] {
                let m = set.dense();
                let n = 2 * ns;
                for i in 0..n {
                    for j in 0..n {
                        if i.abs_diff(j) > 1 {
                            prop_assert_eq!(m[i * n + j], Complex64::new(0.0, 0.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = LatticeFilter::from_bytes(&bytes);
    }
}
