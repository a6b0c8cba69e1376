//! Builds a ten-beat record with varying heart rate, detects its R peaks and
//! cuts it into fixed-length cycles.

use edm_ecg::integrator::SamplingGrid;
use edm_ecg::leads::{synthesize_heartbeat, LeadId};
use edm_ecg::params::default_param_set;
use edm_ecg::segmentation::{detect_r_peaks, segment_record_windows, AbnormalityClass, Record};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = default_param_set();
    let class = AbnormalityClass::normal();
    let base = set.rhythm(&class)?;
    let fs = 500.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut channels = vec![Vec::new(); 12];
    for _ in 0..10 {
        let bpm: f64 = rng.random_range(60.0..=100.0);
        let rhythm = edm_ecg::edm::RhythmParams {
            f: bpm / 60.0,
            ..base
        };
        let grid = SamplingGrid::one_beat(fs, rhythm.f)?;
        let beat = synthesize_heartbeat(&set.sample_free_leads(&class, &mut rng)?, &rhythm, grid)?;
        for (c, row) in channels.iter_mut().zip(beat.rows()) {
            c.extend_from_slice(row);
        }
    }
    let rec = Record::new(fs, channels, "demo")?.with_label(class);

    let peaks = detect_r_peaks(rec.channel(LeadId::II), fs)?;
    println!("{} samples, R peaks at {peaks:?}", rec.len());
    for (k, c) in segment_record_windows(&rec, 512)?.iter().enumerate() {
        let rr = (c.end - c.start) as f64 / fs;
        println!(
            "cycle {k}: [{}, {}) RR {rr:.3} s ({:.0} bpm) -> {} samples at {:.1} Hz",
            c.start,
            c.end,
            60.0 / rr,
            c.beat.len(),
            c.beat.grid().fs()
        );
    }
    Ok(())
}
