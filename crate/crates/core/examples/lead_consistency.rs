//! Limb-lead identities: a synthesized beat satisfies all six exactly, a
//! beat whose leads are integrated independently does not.

use edm_ecg::integrator::SamplingGrid;
use edm_ecg::leads::{check_lead_consistency, synthesize_heartbeat, synthesize_unconstrained};
use edm_ecg::params::default_param_set;
use edm_ecg::segmentation::AbnormalityClass;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = default_param_set();
    let class = AbnormalityClass::normal();
    let rhythm = set.rhythm(&class)?;
    let grid = SamplingGrid::one_beat(500.0, rhythm.f)?;
    let params = set.mean_lead_params(&class)?;

    let constrained = synthesize_heartbeat(&params, &rhythm, grid)?;
    let independent = synthesize_unconstrained(&params, &rhythm, grid)?;

    for (name, beat) in [("synthesized", &constrained), ("independent", &independent)] {
        let report = check_lead_consistency(beat, 1e-9);
        println!("{name}: pass = {}", report.pass());
        for (rel, dev) in &report.deviations {
            println!("  {rel:<24} max deviation {dev:.3e} mV");
        }
    }
    Ok(())
}
