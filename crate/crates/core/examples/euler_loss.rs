//! Scores three candidate beats under the Euler loss: a clean synthesized
//! beat, the same beat with added noise, and a flat line. The weight between
//! the single-lead and inter-lead terms is swept.

use edm_ecg::fidelity::{euler_loss_combined, LossWeights};
use edm_ecg::integrator::SamplingGrid;
use edm_ecg::leads::{synthesize_heartbeat, Heartbeat};
use edm_ecg::params::default_param_set;
use edm_ecg::segmentation::AbnormalityClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = default_param_set();
    let class = AbnormalityClass::normal();
    let rhythm = set.rhythm(&class)?;
    let grid = SamplingGrid::one_beat(500.0, rhythm.f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let clean = synthesize_heartbeat(&set.sample_free_leads(&class, &mut rng)?, &rhythm, grid)?;
    let mut rows = clean.rows().to_vec();
    rows.iter_mut()
        .flatten()
        .for_each(|v| *v += rng.random_range(-0.02..0.02));
    let mut noisy = Heartbeat::new(grid, rows, None)?;
    noisy.rederive_limb_leads();
    let flat = Heartbeat::new(grid, vec![vec![0.0; grid.len()]; 12], None)?;

    println!(
        "{:>5}  {:>12}  {:>12}  {:>12}",
        "delta", "clean", "noisy", "flat"
    );
    for delta in [0.0, 0.3, 0.6, 1.0] {
        let w = LossWeights::new(delta)?;
        let score = |b: &Heartbeat| euler_loss_combined(b, &set, w, 8, 0);
        println!(
            "{delta:>5.1}  {:>12.4e}  {:>12.4e}  {:>12.4e}",
            score(&clean)?,
            score(&noisy)?,
            score(&flat)?
        );
    }
    Ok(())
}
