//! Bell pipeline closure against the synthetic forward model.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rydsim_core::analysis::synthetic::{expected_recap, expected_scan, sampled_recap, sampled_scan, uniform_thetas, DensityModel};
use rydsim_core::analysis::{bell_fidelity, BellOptions};

fn model() -> impl Strategy<Value = DensityModel> {
    (prop::array::uniform4(0.01..1.0f64), -1.0..=1.0f64, 0.0..0.3f64, 0.0..0.3f64).prop_map(|(w, c, l1, l2)| {
        let s: f64 = w.iter().sum();
        let d = w.map(|x| x / s);
        DensityModel::new(d, c * (d[1] * d[2]).sqrt(), [l1, l2]).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_counts_close_the_pipeline(m in model()) {
        let th = uniform_thetas(16);
        let opts = BellOptions { resamples: 200, ..BellOptions::default() };
        let e = bell_fidelity(&expected_scan(&m, &th, 250), &expected_recap(&m, m.pair_survival(), 250), &opts).unwrap();
        let [p00, p11, s, r] = m.absolute();
        let v = &e.value;
        let se = &e.std_error;
        for (got, want, sigma) in [
            (v.p00, p00, se.p00),
            (v.p11, p11, se.p11),
            (v.p01_plus_p10, s, se.p01_plus_p10),
            (v.re_coherence, r, se.re_coherence),
            (v.loss1, m.loss[0], se.loss1),
            (v.loss2, m.loss[1], se.loss2),
            (v.loss_total, m.loss_total(), se.loss_total),
            (v.fidelity, m.fidelity(), se.fidelity),
        ] {
            prop_assert!((got - want).abs() <= 2.0 * sigma + 1e-6, "{got} vs {want} (sigma {sigma})");
        }
        prop_assert!((v.re_coherence - v.re_coherence_parity).abs()
            <= 3.0 * (se.re_coherence.powi(2) + se.re_coherence_parity.powi(2)).sqrt() + 1e-6);
        prop_assert!((v.loss_total - (v.loss1 + v.loss2 - v.loss1 * v.loss2)).abs() < 1e-12);
    }
}

#[test]
fn bootstrap_errors_cover_sampled_data() {
    let m = DensityModel::from_absolute(0.03, 0.01, 0.27, [0.13, 0.12]).unwrap();
    let th = uniform_thetas(16);
    let opts = BellOptions { resamples: 200, ..BellOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 60;
    let mut covered = 0;
    for _ in 0..trials {
        let scan = sampled_scan(&m, &th, 250, &mut rng);
        let recap = sampled_recap(&m, m.pair_survival(), 250, &mut rng);
        let e = bell_fidelity(&scan, &recap, &opts).unwrap();
        covered += usize::from((e.value.fidelity - m.fidelity()).abs() <= 2.0 * e.std_error.fidelity);
    }
    // Nominal 95 %; allow for a 60-trial binomial spread.
    assert!(covered >= 50, "coverage {covered}/{trials}");
}

#[test]
fn witness_never_exceeds_bound_for_separable_state() {
    let th = uniform_thetas(16);
    for loss in [[0.0, 0.0], [0.1, 0.2], [0.25, 0.05]] {
        let m = DensityModel::separable(loss);
        let e = bell_fidelity(&expected_scan(&m, &th, 250), &expected_recap(&m, m.pair_survival(), 250), &BellOptions::default()).unwrap();
        assert!(e.value.fidelity_pairs <= 0.5 + 2.0 * e.std_error.fidelity_pairs);
        assert!((e.value.fidelity - 0.5 * m.pair_survival()).abs() <= 2.0 * e.std_error.fidelity);
    }
}
