//! Empirical convergence order of the Euler and RK4 integrators against a
//! fine RK4 solution over one second.

use edm_ecg::edm::{EdmParams, RhythmParams, State};
use edm_ecg::integrator::{integrate_euler, integrate_rk4, SamplingGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eta = EdmParams::default();
    let rhythm = RhythmParams::default();
    let ref_fs = 16_000.0;
    let reference = integrate_rk4(
        &eta,
        &rhythm,
        SamplingGrid::new(ref_fs, 16_001)?,
        State::default(),
    )?;

    println!(
        "{:>6}  {:>10}  {:>6}  {:>10}  {:>6}",
        "fs", "euler err", "ratio", "rk4 err", "ratio"
    );
    let mut last: Option<(f64, f64)> = None;
    for fs in [250.0, 500.0, 1000.0, 2000.0, 4000.0] {
        let grid = SamplingGrid::new(fs, fs as usize + 1)?;
        let stride = (ref_fs / fs) as usize;
        let err = |z: &[f64]| {
            z.iter()
                .enumerate()
                .map(|(l, v)| (v - reference.z[l * stride]).abs())
                .fold(0.0, f64::max)
        };
        let e = err(&integrate_euler(&eta, &rhythm, grid, State::default())?.z);
        let r = err(&integrate_rk4(&eta, &rhythm, grid, State::default())?.z);
        let (re, rr) = last.map_or((f64::NAN, f64::NAN), |(pe, pr)| (pe / e, pr / r));
        println!("{fs:>6}  {e:>10.3e}  {re:>6.2}  {r:>10.3e}  {rr:>6.2}");
        last = Some((e, r));
    }
    Ok(())
}
