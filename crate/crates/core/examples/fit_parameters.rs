//! Estimates a per-class parameter distribution for lead II from a batch of
//! synthesized beats and compares it with the distribution they came from.

use edm_ecg::edm::{Wave, N_PARAMS};
use edm_ecg::fidelity::LeadSignal;
use edm_ecg::integrator::SamplingGrid;
use edm_ecg::leads::{synthesize_heartbeat, LeadId};
use edm_ecg::optimize::{estimate_distribution, OptimConfig};
use edm_ecg::params::default_param_set;
use edm_ecg::segmentation::AbnormalityClass;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = default_param_set();
    let class = AbnormalityClass::normal();
    let rhythm = set.rhythm(&class)?;
    let grid = SamplingGrid::one_beat(500.0, rhythm.f)?;
    let truth = set.require(&class, LeadId::II)?;
    let start = truth.mean_params();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut signals = Vec::new();
    for _ in 0..40 {
        let mut params = set.sample_free_leads(&class, &mut rng)?;
        // fix the gain so the lead converts back to model units exactly
        params.get_mut(&LeadId::II).expect("free lead").gain = start.gain;
        let beat = synthesize_heartbeat(&params, &rhythm, grid)?;
        signals.push(LeadSignal::from_heartbeat(&beat, LeadId::II, start.gain)?);
    }

    let fitted = estimate_distribution(
        &signals,
        &class,
        LeadId::II,
        &start,
        &rhythm,
        &OptimConfig::default(),
    )?;
    let names = ["theta", "a", "b"];
    println!(
        "{:<8}  {:>10} {:>9}   {:>10} {:>9}",
        "param", "true mean", "std", "fit mean", "std"
    );
    for k in 0..N_PARAMS {
        let label = format!("{}.{}", Wave::ALL[k / 3], names[k % 3]);
        println!(
            "{label:<8}  {:>10.4} {:>9.4}   {:>10.4} {:>9.4}",
            truth.mean[k], truth.std[k], fitted.mean[k], fitted.std[k]
        );
    }
    Ok(())
}
