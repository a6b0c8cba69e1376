//! Samples one NORMAL heartbeat from the shipped parameter file and prints
//! per-lead peak amplitudes. Pass a seed as the first argument.

use edm_ecg::integrator::SamplingGrid;
use edm_ecg::leads::{synthesize_heartbeat, LeadId};
use edm_ecg::params::default_param_set;
use edm_ecg::segmentation::AbnormalityClass;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let set = default_param_set();
    let class = AbnormalityClass::normal();
    let rhythm = set.rhythm(&class)?;
    let grid = SamplingGrid::one_beat(500.0, rhythm.f)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = set.sample_free_leads(&class, &mut rng)?;
    let beat = synthesize_heartbeat(&params, &rhythm, grid)?;

    println!("{} samples at {} Hz (seed {seed})", beat.len(), grid.fs());
    println!(
        "{:>4}  {:>8}  {:>8}  {:>6}",
        "lead", "max mV", "min mV", "argmax"
    );
    for id in LeadId::ALL {
        let row = beat.lead(id);
        let (arg, max) =
            row.iter().enumerate().fold(
                (0, f64::MIN),
                |b, (i, v)| if *v > b.1 { (i, *v) } else { b },
            );
        let min = row.iter().cloned().fold(f64::MAX, f64::min);
        println!("{:>4}  {max:>8.3}  {min:>8.3}  {arg:>6}", id.to_string());
    }
    Ok(())
}
