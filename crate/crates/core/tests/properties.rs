use homsim::config::ExperimentConfig;
use homsim::fock::{
    beam_splitter_apply, beam_splitter_apply_inverse, hom_with_overlap, loss_channel, partial_trace, phase_shift_apply,
    FockCutoff, Mode, SingleModeState, SourceModel, TwoModeState,
};
use homsim::metrics::{cross_correlation, filtered_log_negativity, log_negativity, visibility};
use homsim::quadrature::joint_density;
use homsim::sync_sim::{simulate_dual_heralds, SyncConfig, SyncModel};
use homsim::temporal_modes::{mode_function, overlap, MemoryModel, TimeGrid};
use homsim::tomography::bin_records;
use homsim::wigner::two_mode_wigner;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn cut() -> FockCutoff {
    FockCutoff::DEFAULT
}

/// Number-diagonal distribution over `0..=n` photons.
fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n + 1).prop_filter_map("non-zero weight", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| w.iter().map(|x| x / s).collect())
    })
}

/// Random pure single-mode state with at most `n` photons.
fn pure_single(n: usize) -> impl Strategy<Value = SingleModeState> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n + 1).prop_filter_map("non-zero vector", |v| {
        let norm: f64 = v.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
        if norm < 1e-3 {
            return None;
        }
        let d = cut().dim();
        let mut psi = vec![C64::new(0.0, 0.0); d];
        for (k, (a, b)) in v.iter().enumerate() {
            psi[k] = C64::new(*a, *b) / norm;
        }
        let rho = DMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj());
        SingleModeState::new(cut(), rho).ok()
    })
}

fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loss_is_a_semigroup(p in distribution(5), e1 in 0.0..=1.0f64, e2 in 0.0..=1.0f64) {
        let rho = SingleModeState::number_diagonal(cut(), &p).unwrap();
        let twice = loss_channel(&loss_channel(&rho, e1).unwrap(), e2).unwrap();
        let once = loss_channel(&rho, e1 * e2).unwrap();
        prop_assert!(max_diff(twice.matrix(), once.matrix()) < 1e-12);
        prop_assert!((once.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_lowers_mean_photon_number_by_eta(s in pure_single(5), eta in 0.0..=1.0f64) {
        let out = loss_channel(&s, eta).unwrap();
        prop_assert!((out.mean_photon_number() - eta * s.mean_photon_number()).abs() < 1e-12);
    }

    #[test]
    fn beam_splitter_is_unitary(a in distribution(2), b in distribution(2), t in 0.0..=1.0f64) {
        let c = cut();
        let state = TwoModeState::product(
            &SingleModeState::number_diagonal(c, &a).unwrap(),
            &SingleModeState::number_diagonal(c, &b).unwrap(),
        ).unwrap();
        let out = beam_splitter_apply(&state, t).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-12);
        prop_assert!((out.purity() - state.purity()).abs() < 1e-12);
        let back = beam_splitter_apply_inverse(&out, t).unwrap();
        prop_assert!(max_diff(back.matrix(), state.matrix()) < 1e-12);
    }

    #[test]
    fn product_states_are_not_entangled(a in pure_single(5), b in distribution(5)) {
        let state = TwoModeState::product(&a, &SingleModeState::number_diagonal(cut(), &b).unwrap()).unwrap();
        prop_assert!(log_negativity(&state, Mode::One).abs() < 1e-9);
        prop_assert!(log_negativity(&state, Mode::Two).abs() < 1e-9);
    }

    #[test]
    fn product_state_swap_symmetry(a in distribution(5), b in distribution(5)) {
        let (sa, sb) = (
            SingleModeState::number_diagonal(cut(), &a).unwrap(),
            SingleModeState::number_diagonal(cut(), &b).unwrap(),
        );
        let ab = TwoModeState::product(&sa, &sb).unwrap();
        let ba = TwoModeState::product(&sb, &sa).unwrap();
        prop_assert!(max_diff(ab.swap_modes().matrix(), ba.matrix()) < 1e-15);
        prop_assert!(max_diff(partial_trace(&ab, Mode::One).matrix(), sa.matrix()) < 1e-12);
    }

    #[test]
    fn coincidences_follow_the_overlap(c in 0.0..=1.0f64) {
        let photon = SingleModeState::fock(cut(), 1).unwrap();
        let out = hom_with_overlap(&photon, &photon, c).unwrap();
        prop_assert!((out.population(1, 1) - (1.0 - c) / 2.0).abs() < 1e-12);
        prop_assert!((out.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interference_metrics_stay_in_range(
        p1 in 0.3..0.9f64, q1 in 0.0..0.1f64, p2 in 0.3..0.9f64, q2 in 0.0..0.1f64, c in 0.0..=1.0f64,
    ) {
        let a = SourceModel::new(1.0 - p1 - q1, p1, q1).unwrap().to_state(cut()).unwrap();
        let b = SourceModel::new(1.0 - p2 - q2, p2, q2).unwrap().to_state(cut()).unwrap();
        let out = hom_with_overlap(&a, &b, c).unwrap();
        let v = visibility(&out).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        prop_assert!(cross_correlation(&out).unwrap() >= 0.0);
        let ln = log_negativity(&out, Mode::One);
        prop_assert!(ln >= 0.0);
        prop_assert!((ln - log_negativity(&out, Mode::Two)).abs() < 1e-9);
        prop_assert!(filtered_log_negativity(&out, Mode::One) >= 0.0);
    }

    #[test]
    fn phase_shift_covariance(
        theta in 0.0..std::f64::consts::PI, phi in -180.0..180.0f64, t2 in 0.0..180.0f64,
        x1 in -3.0..3.0f64, x2 in -3.0..3.0f64,
    ) {
        let hom = TwoModeState::hom(cut(), theta);
        let shifted = phase_shift_apply(&hom, Mode::Two, phi.to_radians());
        let lhs = joint_density(&shifted, 0.0, t2, x1, x2);
        let rhs = joint_density(&hom, 0.0, t2 + phi, x1, x2);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn number_diagonal_states_are_phase_insensitive(
        a in distribution(5), t1 in 0.0..180.0f64, t2 in 0.0..180.0f64, x1 in -3.0..3.0f64, x2 in -3.0..3.0f64,
    ) {
        let s = SingleModeState::number_diagonal(cut(), &a).unwrap();
        let state = TwoModeState::product(&s, &s).unwrap();
        prop_assert!((joint_density(&state, t1, t2, x1, x2) - joint_density(&state, 0.0, 0.0, x1, x2)).abs() < 1e-12);
    }

    #[test]
    fn wigner_of_number_diagonal_states_is_rotation_invariant(
        a in distribution(5), r in 0.0..3.0f64, phi in 0.0..std::f64::consts::TAU,
    ) {
        let s = SingleModeState::number_diagonal(cut(), &a).unwrap();
        let state = TwoModeState::product(&s, &SingleModeState::vacuum(cut())).unwrap();
        let w0 = two_mode_wigner(&state, r, 0.0, 0.0, 0.0);
        let w1 = two_mode_wigner(&state, r * phi.cos(), r * phi.sin(), 0.0, 0.0);
        prop_assert!((w0 - w1).abs() < 1e-12);
    }

    #[test]
    fn mode_overlap_is_symmetric(tau1 in 0.0..500.0f64, tau2 in 0.0..500.0f64) {
        let grid = TimeGrid::new(-100.0, 1500.0, 2.0).unwrap();
        let f = mode_function(&MemoryModel::memory1(), tau1, &grid).unwrap();
        let g = mode_function(&MemoryModel::memory2(), tau2, &grid).unwrap();
        let (fg, gf) = (overlap(&f, &g).unwrap(), overlap(&g, &f).unwrap());
        prop_assert!((fg - gf).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&fg));
        prop_assert!((overlap(&f, &f).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn config_round_trips(seed in 0..=i64::MAX as u64, overlap in 0.0..=1.0f64, events in 1usize..10_000_000) {
        let cfg = ExperimentConfig { seed, overlap, events, ..ExperimentConfig::default() };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sync_events_respect_the_window(seed in any::<u64>(), tau in 0.1..2.0f64, controller in any::<bool>()) {
        let cfg = SyncConfig {
            tau_max: tau,
            total_time: 5.0,
            seed,
            model: if controller { SyncModel::Controller } else { SyncModel::Coincidence },
            ..SyncConfig::default()
        };
        let (events, summary) = simulate_dual_heralds(&cfg).unwrap();
        prop_assert_eq!(events.len() as u64, summary.events);
        prop_assert!(events.iter().all(|e| e.storage() <= tau * 1e3 + 1e-6 && e.storage1 >= 0.0 && e.storage2 >= 0.0));
        prop_assert!(events.windows(2).all(|w| w[0].release_time <= w[1].release_time));
    }

    #[test]
    fn binning_preserves_counts(seed in any::<u64>(), n in 1usize..2000) {
        let records = homsim::quadrature::sample_records(
            &TwoModeState::hom(cut(), 0.0), &homsim::quadrature::PhaseGrid::default(), n, seed,
        ).unwrap();
        let data = bin_records(&records, 0.1).unwrap();
        prop_assert_eq!(data.total as usize, n);
        prop_assert_eq!(data.bins.iter().map(|b| b.count as usize).sum::<usize>(), n);
    }
}
