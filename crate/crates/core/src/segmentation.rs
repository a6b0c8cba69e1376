//! Cutting raw multi-lead recordings into fixed-length cardiac cycles.
//!
//! R peaks are located on lead II only and every other lead is cut at the
//! same sample bounds, so the cycles stay aligned across leads.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::integrator::SamplingGrid;
use crate::leads::{Heartbeat, LeadId};

/// Diagnostic label attached to a record and every cycle cut from it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbnormalityClass(String);

impl AbnormalityClass {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty()
            || !code
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
        {
            return Err(Error::InvalidArgument(format!(
                "class code must be non-empty uppercase alphanumeric, got `{code}`"
            )));
        }
        Ok(Self(code))
    }

    pub fn normal() -> Self {
        Self("NORMAL".to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AbnormalityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for AbnormalityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

/// A raw 12-lead recording in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    fs: f64,
    channels: Vec<Vec<f64>>,
    pub id: String,
    pub label: Option<AbnormalityClass>,
}

impl Record {
    pub fn new(fs: f64, channels: Vec<Vec<f64>>, id: impl Into<String>) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling frequency must be > 0, got {fs}"
            )));
        }
        if channels.len() != 12 {
            return Err(Error::Dimension(format!(
                "record needs 12 channels, got {}",
                channels.len()
            )));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("record channels differ in length".into()));
        }
        if (n as f64) < fs {
            return Err(Error::Dimension(format!(
                "record shorter than one second ({n} samples at {fs} Hz)"
            )));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "record contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            fs,
            channels,
            id: id.into(),
            label: None,
        })
    }

    pub fn with_label(mut self, label: AbnormalityClass) -> Self {
        self.label = Some(label);
        self
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channel(&self, id: LeadId) -> &[f64] {
        &self.channels[id.index()]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }
}

/// Tuning of the QRS detector, as fractions of a second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Moving-window integration length.
    pub window: f64,
    /// Minimum spacing between accepted beats.
    pub refractory: f64,
    /// Half-width of the raw-signal search around each detection.
    pub snap: f64,
    /// Fraction of the running mean peak height used as threshold.
    pub threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 0.150,
            refractory: 0.200,
            snap: 0.050,
            threshold: 0.5,
        }
    }
}

fn integrated_energy(signal: &[f64], half: usize) -> Vec<f64> {
    let n = signal.len();
    let mut energy = vec![0.0; n];
    for l in 1..n {
        let d = signal[l] - signal[l - 1];
        energy[l] = d * d;
    }
    // centered moving sum via prefix sums
    let mut prefix = vec![0.0; n + 1];
    for l in 0..n {
        prefix[l + 1] = prefix[l] + energy[l];
    }
    (0..n)
        .map(|l| {
            let lo = l.saturating_sub(half);
            let hi = (l + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// All QRS locations found in `signal`, with no minimum-count requirement.
///
/// The signal is differenced, squared and averaged over a centered window;
/// local maxima of that energy above half the running mean of accepted peak
/// energies are kept subject to a refractory gap, then snapped to the
/// largest raw sample nearby.
pub fn locate_qrs(signal: &[f64], fs: f64, cfg: &DetectorConfig) -> Vec<usize> {
    let n = signal.len();
    if n < 3 || !(fs > 0.0) {
        return Vec::new();
    }
    let half = ((cfg.window * fs / 2.0).round() as usize).max(1);
    let refractory = ((cfg.refractory * fs).round() as usize).max(1);
    let snap = ((cfg.snap * fs).round() as usize).max(1);
    let energy = integrated_energy(signal, half);

    let peak_max = energy.iter().cloned().fold(0.0, f64::max);
    if !(peak_max > 0.0) {
        return Vec::new();
    }
    // seed the running mean from the strongest energy in the first two seconds
    let seed_end = ((2.0 * fs) as usize).clamp(1, n);
    let mut running = energy[..seed_end].iter().cloned().fold(0.0, f64::max);
    if !(running > 0.0) {
        running = peak_max;
    }
    let mut accepted_heights = 1.0;

    let mut marks: Vec<usize> = Vec::new();
    let mut heights: Vec<f64> = Vec::new();
    for l in 1..n - 1 {
        let e = energy[l];
        if !(e > energy[l - 1] && e >= energy[l + 1]) {
            continue;
        }
        if e < cfg.threshold * running / accepted_heights {
            continue;
        }
        match marks.last() {
            Some(&prev) if l - prev < refractory => {
                let last = heights.len() - 1;
                if e > heights[last] {
                    running += e - heights[last];
                    marks[last] = l;
                    heights[last] = e;
                }
            }
            _ => {
                marks.push(l);
                heights.push(e);
                running += e;
                accepted_heights += 1.0;
            }
        }
    }

    let mut peaks: Vec<usize> = Vec::with_capacity(marks.len());
    for m in marks {
        let lo = m.saturating_sub(snap);
        let hi = (m + snap + 1).min(n);
        let p = lo + argmax(&signal[lo..hi]);
        match peaks.last() {
            Some(&prev) if p <= prev || p - prev < refractory => {
                if signal[p] > signal[prev] && p > prev {
                    *peaks.last_mut().unwrap() = p;
                }
            }
            _ => peaks.push(p),
        }
    }
    peaks
}

/// R-peak sample indices of a lead-II trace. At least two beats are needed
/// to define a rhythm.
pub fn detect_r_peaks(lead2: &[f64], fs: f64) -> Result<Vec<usize>> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling frequency must be > 0, got {fs}"
        )));
    }
    if (lead2.len() as f64) < fs {
        return Err(Error::Dimension(format!(
            "need at least one second of signal, got {} samples at {fs} Hz",
            lead2.len()
        )));
    }
    let peaks = locate_qrs(lead2, fs, &DetectorConfig::default());
    if peaks.len() < 2 {
        return Err(Error::NoRhythm(format!(
            "found {} R peak(s), need at least 2",
            peaks.len()
        )));
    }
    Ok(peaks)
}

/// Linear interpolation of `segment` onto `target_len` evenly spaced points
/// spanning it, first and last samples preserved.
pub fn resample_cycle(segment: &[f64], target_len: usize) -> Result<Vec<f64>> {
    let m = segment.len();
    if m < 2 {
        return Err(Error::Dimension(format!(
            "cannot resample a segment of {m} samples"
        )));
    }
    if target_len < 2 {
        return Err(Error::Dimension(format!(
            "target length must be >= 2, got {target_len}"
        )));
    }
    if m == target_len {
        return Ok(segment.to_vec());
    }
    let scale = (m - 1) as f64 / (target_len - 1) as f64;
    let mut out = Vec::with_capacity(target_len);
    for k in 0..target_len {
        if k == target_len - 1 {
            out.push(segment[m - 1]);
            continue;
        }
        let pos = k as f64 * scale;
        let i = (pos.floor() as usize).min(m - 2);
        let frac = pos - i as f64;
        out.push(segment[i] + frac * (segment[i + 1] - segment[i]));
    }
    Ok(out)
}

/// One cycle cut from a record, with the window it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub start: usize,
    pub end: usize,
    pub beat: Heartbeat,
}

/// Cuts every full R-to-R interval of `rec` into a [`Heartbeat`] of
/// `target_len` samples. Windows are `[peak_k, peak_{k+1})` on all leads.
pub fn segment_record_windows(rec: &Record, target_len: usize) -> Result<Vec<Cycle>> {
    let peaks = detect_r_peaks(rec.channel(LeadId::II), rec.fs())?;
    let mut out = Vec::with_capacity(peaks.len() - 1);
    for pair in peaks.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        let m = end - start;
        let rows = rec
            .channels()
            .iter()
            .map(|c| resample_cycle(&c[start..end], target_len))
            .collect::<Result<Vec<_>>>()?;
        // the cycle's own duration fixes its effective sampling rate
        let fs = rec.fs() * (target_len - 1) as f64 / (m - 1).max(1) as f64;
        let grid = SamplingGrid::new(fs, target_len)?;
        let beat = Heartbeat::new(grid, rows, rec.label.clone())?;
        out.push(Cycle { start, end, beat });
    }
    Ok(out)
}

/// [`segment_record_windows`] without the window bookkeeping.
pub fn segment_record(rec: &Record, target_len: usize) -> Result<Vec<Heartbeat>> {
    Ok(segment_record_windows(rec, target_len)?
        .into_iter()
        .map(|c| c.beat)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn class_codes() {
        assert!(AbnormalityClass::new("IAVB").is_ok());
        assert!(AbnormalityClass::new("").is_err());
        assert!(AbnormalityClass::new("rbbb").is_err());
        assert!(AbnormalityClass::new("A-B").is_err());
        assert_eq!(AbnormalityClass::normal().as_str(), "NORMAL");
    }

    #[test]
    fn resample_identity_and_errors() {
        let seg: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        assert_eq!(resample_cycle(&seg, 7).unwrap(), seg);
        assert!(resample_cycle(&[1.0], 5).is_err());
        assert!(resample_cycle(&[], 5).is_err());
    }

    #[test]
    fn resample_ramp_stays_a_ramp() {
        let ramp: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        for target in [2, 3, 50, 99, 100, 101, 512] {
            let out = resample_cycle(&ramp, target).unwrap();
            assert_eq!(out.len(), target);
            assert_eq!(out[0], 0.0);
            assert_eq!(out[target - 1], 1.0);
            for (k, v) in out.iter().enumerate() {
                assert!((v - k as f64 / (target - 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_sine_against_analytic() {
        // 400 samples covering one second of a 5 Hz sine
        let m = 400;
        let span = 1.0;
        let seg: Vec<f64> = (0..m)
            .map(|i| (2.0 * PI * 5.0 * span * i as f64 / (m - 1) as f64).sin())
            .collect();
        let out = resample_cycle(&seg, 512).unwrap();
        let err = out
            .iter()
            .enumerate()
            .map(|(k, v)| (v - (2.0 * PI * 5.0 * span * k as f64 / 511.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "max error {err}");
    }

    #[test]
    fn flat_signal_has_no_rhythm() {
        assert!(matches!(
            detect_r_peaks(&vec![0.0; 2000], 500.0),
            Err(Error::NoRhythm(_))
        ));
        assert!(matches!(
            detect_r_peaks(&vec![0.3; 2000], 500.0),
            Err(Error::NoRhythm(_))
        ));
    }

    #[test]
    fn short_signal_rejected() {
        assert!(matches!(
            detect_r_peaks(&vec![0.0; 100], 500.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn spike_train_detected() {
        let fs = 250.0;
        let mut sig = vec![0.0; 2500];
        let truth = [100, 330, 560, 790, 1020, 1250, 1480, 1710, 1940, 2170, 2400];
        for &p in &truth {
            for k in 0..7usize {
                let v = 1.0 - (k as f64 / 7.0);
                sig[p + k] = v;
                sig[p - k] = v;
            }
        }
        let peaks = detect_r_peaks(&sig, fs).unwrap();
        assert_eq!(peaks, truth.to_vec());
    }

    #[test]
    fn record_validation() {
        assert!(Record::new(500.0, vec![vec![0.0; 500]; 11], "x").is_err());
        assert!(Record::new(500.0, vec![vec![0.0; 499]; 12], "x").is_err());
        assert!(Record::new(500.0, vec![vec![0.0; 500]; 12], "x").is_ok());
    }

    proptest! {
        #[test]
        fn resample_respects_range(seg in prop::collection::vec(-5.0f64..5.0, 2..60), target in 2usize..300) {
            let out = resample_cycle(&seg, target).unwrap();
            prop_assert_eq!(out.len(), target);
            prop_assert_eq!(out[0], seg[0]);
            prop_assert_eq!(out[target - 1], seg[seg.len() - 1]);
            let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let step = seg.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
            for v in out {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            // upsampling lands within one input step of every extreme
            if target >= seg.len() {
                let olo = resample_cycle(&seg, target).unwrap().iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!((olo - lo).abs() <= step + 1e-12);
            }
        }

        #[test]
        fn peaks_are_increasing_and_spaced(noise in prop::collection::vec(-0.05f64..0.05, 3000)) {
            let fs = 500.0;
            let sig: Vec<f64> = noise.iter().enumerate().map(|(i, n)| {
                let ph = (i % 450) as f64;
                n + (-(ph - 200.0).powi(2) / 20.0).exp()
            }).collect();
            let peaks = locate_qrs(&sig, fs, &DetectorConfig::default());
            for w in peaks.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(w[1] - w[0] >= 100);
            }
        }
    }
}
