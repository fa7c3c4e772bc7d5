//! Randomized invariants across modules.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rydsim_core::analysis::{envelope_strictly_decreasing, parity, ramsey_t2star_envelope};
use rydsim_core::atom::{build_hamiltonian, DriveParams, InteractionParams, Target, Transition};
use rydsim_core::constants::{mhz, US};
use rydsim_core::detection::{aggregate, measure_shot, DetectionParams};
use rydsim_core::propagate::evolve_segment;
use rydsim_core::state::{Amplitudes, DIM};
use rydsim_core::{TwoAtomState, C64};

fn state_from(re: &[f64], im: &[f64]) -> Option<TwoAtomState> {
    let amps: Amplitudes = std::array::from_fn(|i| C64::new(re[i], im[i]));
    let n = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    (n > 1e-3).then(|| TwoAtomState::from_amplitudes(amps.map(|a| a / n), [false, false]).unwrap())
}

fn drive_strategy() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    (0.05..3.0f64, -2.0..2.0f64, 0.0..6.3f64, 0.05..3.0f64, 2.0..12.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn propagation_is_unitary_and_composes(
        re in prop::collection::vec(-1.0..1.0f64, DIM),
        im in prop::collection::vec(-1.0..1.0f64, DIM),
        (ryd, det, phase, raman, sep) in drive_strategy(),
        t1 in 0.0..3.0f64,
        t2 in 0.0..3.0f64,
    ) {
        let Some(psi) = state_from(&re, &im) else { return Ok(()) };
        let drives = [
            DriveParams::new(Transition::Rydberg1r, mhz(ryd), Target::Both).with_detuning(mhz(det)).with_phase(phase),
            DriveParams::new(Transition::Raman01, mhz(raman), Target::Atom1),
        ];
        let h = build_hamiltonian(&drives, &InteractionParams { c6_ghz_um6: -573.0, separation_um: sep }).unwrap();
        prop_assert!(h.matrix().hermitian_defect() <= 1e-12 * h.matrix().max_abs());
        let a = evolve_segment(&evolve_segment(&psi, &h, t1 * US).unwrap(), &h, t2 * US).unwrap();
        let b = evolve_segment(&psi, &h, (t1 + t2) * US).unwrap();
        prop_assert!((a.norm_sqr() - 1.0).abs() < 1e-10);
        let d: f64 = (0..DIM).map(|i| (a.amplitudes()[i] - b.amplitudes()[i]).norm_sqr()).sum();
        prop_assert!(d.sqrt() < 1e-9);
    }

    #[test]
    fn parity_stays_in_range(w in prop::array::uniform4(0.0..1.0f64), total in 0.0..=1.0f64) {
        let s: f64 = w.iter().sum();
        prop_assume!(s > 0.0);
        let p = w.map(|x| x * total / s);
        let v = parity(p);
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn loss_total_identity(l1 in 0.0..1.0f64, l2 in 0.0..1.0f64) {
        prop_assert!((l1 + l2 - l1 * l2 - (1.0 - (1.0 - l1) * (1.0 - l2))).abs() < 1e-15);
    }

    #[test]
    fn ramsey_envelope_decreases(t2 in 1e-6..1.0f64) {
        let grid: Vec<f64> = (1..50).map(|k| t2 * k as f64 / 10.0).collect();
        prop_assert!(envelope_strictly_decreasing(&grid, t2));
        prop_assert!((ramsey_t2star_envelope(0.0, t2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn detection_counts_sum_to_shots(
        re in prop::collection::vec(-1.0..1.0f64, DIM),
        im in prop::collection::vec(-1.0..1.0f64, DIM),
        eta_r in 0.0..=1.0f64,
        bg in 0.0..=1.0f64,
        blowaway in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let Some(psi) = state_from(&re, &im) else { return Ok(()) };
        let p = DetectionParams { eta_r, background_loss: bg, blowaway_enabled: blowaway, ..DetectionParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outs: Vec<_> = (0..200).map(|_| measure_shot(&psi, &p, 0.0, &mut rng)).collect();
        let t = aggregate(&outs).unwrap();
        prop_assert_eq!(t.totals().total(), 200);
    }
}
