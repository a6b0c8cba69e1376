use edm_ecg::edm::{EdmParams, RhythmParams, MIN_WIDTH};
use edm_ecg::fidelity::{euler_loss_combined, sim_distance, LeadSignal, LossWeights};
use edm_ecg::integrator::{reference_trajectory, SamplingGrid};
use edm_ecg::leads::{check_lead_consistency, synthesize_heartbeat, Heartbeat, LeadId};
use edm_ecg::optimize::{fit_params, refine_waveform, OptimConfig};
use edm_ecg::params::default_param_set;
use edm_ecg::segmentation::AbnormalityClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn monotone(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn fitting_noise_still_lowers_the_distance() {
    let rhythm = RhythmParams::default();
    let grid = SamplingGrid::one_beat(250.0, rhythm.f).unwrap();
    let reference = reference_trajectory(&rhythm, grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise: Vec<f64> = (0..grid.len())
        .map(|_| rng.random_range(-0.1..0.1))
        .collect();
    let h = LeadSignal::new(grid, noise, LeadId::II).unwrap();
    let eta0 = EdmParams::default();
    let cfg = OptimConfig {
        max_iter: 200,
        ..Default::default()
    };
    let fit = fit_params(&h, &eta0, &rhythm, &reference, &cfg).unwrap();
    let start = sim_distance(&h, &eta0, &rhythm, &reference).unwrap();
    let again = sim_distance(&h, &fit.eta, &rhythm, &reference).unwrap();
    assert!(fit.final_distance < start);
    assert!((again - fit.final_distance).abs() <= 1e-9 * start);
    assert!(fit.eta.waves.iter().all(|w| w.b >= MIN_WIDTH));
}

#[test]
fn refining_a_zero_loss_beat_is_a_fixed_point() {
    let set = default_param_set().zero_variance();
    let class = AbnormalityClass::normal();
    let rhythm = set.rhythm(&class).unwrap();
    let grid = SamplingGrid::one_beat(250.0, rhythm.f).unwrap();
    let mut beat =
        synthesize_heartbeat(&set.mean_lead_params(&class).unwrap(), &rhythm, grid).unwrap();
    beat.label = Some(class);
    let weights = LossWeights::new(1.0).unwrap();
    let r = refine_waveform(&beat, &set, weights, &OptimConfig::default(), 4, 0).unwrap();
    assert!(r.initial_loss() <= 1e-20);
    assert_eq!(r.beat, beat);
}

#[test]
fn delta_extremes_both_descend_monotonically() {
    let set = default_param_set();
    let grid =
        SamplingGrid::one_beat(250.0, set.rhythm(&AbnormalityClass::normal()).unwrap().f).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut rows = vec![vec![0.0; grid.len()]; 12];
    rows.iter_mut()
        .flatten()
        .for_each(|v| *v = rng.random_range(-0.1..=0.1));
    let mut beat0 = Heartbeat::new(grid, rows, None).unwrap();
    beat0.rederive_limb_leads();
    let cfg = OptimConfig {
        max_iter: 60,
        ..Default::default()
    };
    let mut finals = Vec::new();
    for delta in [0.0, 1.0] {
        let w = LossWeights::new(delta).unwrap();
        let r = refine_waveform(&beat0, &set, w, &cfg, 4, 9).unwrap();
        assert!(monotone(&r.losses), "delta {delta}");
        assert!(r.final_loss() < r.initial_loss());
        assert!(check_lead_consistency(&r.beat, 1e-9).pass());
        let rescored = euler_loss_combined(&r.beat, &set, w, 4, 9).unwrap();
        assert!((rescored - r.final_loss()).abs() <= 1e-9 * r.initial_loss());
        finals.push(r.beat);
    }
    assert_ne!(finals[0], finals[1]);

    // identical seeds reproduce bit-for-bit
    let w = LossWeights::new(0.6).unwrap();
    let a = refine_waveform(&beat0, &set, w, &cfg, 4, 9).unwrap();
    let b = refine_waveform(&beat0, &set, w, &cfg, 4, 9).unwrap();
    assert_eq!(a, b);
}
