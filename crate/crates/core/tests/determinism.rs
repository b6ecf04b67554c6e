use guided_bo::tuner::{run_mode, ForcedSchedule, GuidedBoConfig, SimulatedPlant, TunerMode, TuningHistory};

fn small(seed: u64) -> GuidedBoConfig {
    GuidedBoConfig {
        n_max: 4,
        grid_resolution: 20,
        gp_starts: 3,
        rng_seed: seed,
        forced_schedule: Some(ForcedSchedule { every: 2, session_length: 2 }),
        ..GuidedBoConfig::default()
    }
}

fn run(cfg: &GuidedBoConfig, mode: TunerMode) -> TuningHistory {
    run_mode(&mut SimulatedPlant::from_config(cfg).unwrap(), cfg, mode).unwrap()
}

#[test]
fn same_seed_same_history() {
    for mode in [TunerMode::Bo, TunerMode::Guided, TunerMode::Forced] {
        let a = run(&small(5), mode);
        let b = run(&small(5), mode);
        assert_eq!(a, b, "{mode:?}");
        assert_eq!(a.real_records().count(), small(5).n0 + small(5).n_max);
    }
}

#[test]
fn seed_changes_history() {
    let a = run(&small(5), TunerMode::Bo);
    let b = run(&small(6), TunerMode::Bo);
    assert_ne!(a.real_sequence(), b.real_sequence());
}

#[test]
fn twin_sessions_leave_real_noise_untouched() {
    // the first real measurement sits at the shared initial design and draws the same noise
    let bo = run(&small(9), TunerMode::Bo);
    let forced = run(&small(9), TunerMode::Forced);
    assert_eq!(bo.real_sequence()[0], forced.real_sequence()[0]);
    assert!(forced.twin_evaluations > 0);
}

#[test]
fn incumbent_curve_is_nonincreasing() {
    let h = run(&small(3), TunerMode::Guided);
    let c = h.incumbent_curve();
    assert_eq!(c.len(), small(3).n_max + 1);
    assert!(c.windows(2).all(|w| w[1] <= w[0]));
}
