//! Per-class, per-lead Gaussian parameter distributions and their text format.
//!
//! A parameter file is a flat list of `key = value` lines. Keys have the form
//! `<CLASS>.<LEAD>.<wave>.<field>` for the fifteen morphology parameters
//! (fields `theta_mean`, `theta_std`, `a_mean`, `a_std`, `b_mean`, `b_std`),
//! `<CLASS>.<LEAD>.gain_mean` / `gain_std` for the amplitude scale and
//! `<CLASS>.<LEAD>.rhythm.f` / `rhythm.A` / `rhythm.f2` for the rhythm.
//! `#` starts a comment. Values are written with 17 significant digits so
//! that reading a written file reproduces every value exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::edm::{wrap, EdmParams, RhythmParams, Wave, MIN_WIDTH, N_PARAMS};
use crate::error::{Error, Result};
use crate::leads::{LeadId, LeadParams};
use crate::segmentation::AbnormalityClass;

/// Diagonal Gaussian over the morphology parameters of one lead for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDistribution {
    pub class: AbnormalityClass,
    pub lead: LeadId,
    /// Means in [`EdmParams::to_vec`] order.
    pub mean: [f64; N_PARAMS],
    pub std: [f64; N_PARAMS],
    pub gain_mean: f64,
    pub gain_std: f64,
    pub rhythm: RhythmParams,
}

impl ParamDistribution {
    /// Degenerate distribution concentrated on `p`.
    pub fn point(
        class: AbnormalityClass,
        lead: LeadId,
        p: &LeadParams,
        rhythm: RhythmParams,
    ) -> Self {
        Self {
            class,
            lead,
            mean: p.eta.to_vec(),
            std: [0.0; N_PARAMS],
            gain_mean: p.gain,
            gain_std: 0.0,
            rhythm,
        }
    }

    pub fn mean_params(&self) -> LeadParams {
        LeadParams::new(EdmParams::from_vec(&self.mean), self.gain_mean)
    }

    pub fn with_zero_variance(mut self) -> Self {
        self.std = [0.0; N_PARAMS];
        self.gain_std = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (k, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            let key = component_key(k);
            if !m.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{}: non-finite mean for {key}",
                    self.tag()
                )));
            }
            if !(s.is_finite() && *s >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{}: std for {key} must be >= 0",
                    self.tag()
                )));
            }
        }
        for w in Wave::ALL {
            let b = self.mean[3 * w.index() + 2];
            if b < MIN_WIDTH {
                return Err(Error::InvalidArgument(format!(
                    "{}: mean width of wave {w} must be >= {MIN_WIDTH}, got {b}",
                    self.tag()
                )));
            }
        }
        if !(self.gain_mean.is_finite() && self.gain_mean != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: gain_mean must be finite and non-zero",
                self.tag()
            )));
        }
        if !(self.gain_std.is_finite() && self.gain_std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: gain_std must be >= 0",
                self.tag()
            )));
        }
        self.rhythm.validate()
    }

    fn tag(&self) -> String {
        format!("{}.{}", self.class, self.lead)
    }
}

/// `<wave>.<field>` name of flattened component `k` (mean side).
fn component_key(k: usize) -> String {
    let wave = Wave::ALL[k / 3];
    let field = ["theta", "a", "b"][k % 3];
    format!("{wave}.{field}")
}

/// Draws one parameter set and gain. Every component is an independent
/// Gaussian; widths are floored at [`MIN_WIDTH`] and centers re-wrapped.
pub fn sample_eta_with<R: Rng + ?Sized>(dist: &ParamDistribution, rng: &mut R) -> LeadParams {
    let mut v = [0.0; N_PARAMS];
    for k in 0..N_PARAMS {
        let z: f64 = rng.sample(StandardNormal);
        v[k] = dist.mean[k] + dist.std[k] * z;
    }
    let z: f64 = rng.sample(StandardNormal);
    let gain = dist.gain_mean + dist.gain_std * z;
    for w in 0..5 {
        v[3 * w] = wrap(v[3 * w]);
        v[3 * w + 2] = v[3 * w + 2].max(MIN_WIDTH);
    }
    LeadParams::new(EdmParams::from_vec(&v), gain)
}

/// Seeded single draw from `dist`.
pub fn sample_eta(dist: &ParamDistribution, seed: u64) -> LeadParams {
    sample_eta_with(dist, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A collection of distributions keyed by `(class, lead)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<(AbnormalityClass, LeadId), ParamDistribution>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates and inserts, replacing any previous entry for the same key.
    pub fn insert(&mut self, dist: ParamDistribution) -> Result<()> {
        dist.validate()?;
        self.entries.insert((dist.class.clone(), dist.lead), dist);
        Ok(())
    }

    pub fn get(&self, class: &AbnormalityClass, lead: LeadId) -> Option<&ParamDistribution> {
        self.entries.get(&(class.clone(), lead))
    }

    /// Like [`ParamSet::get`] but reports a configuration error.
    pub fn require(&self, class: &AbnormalityClass, lead: LeadId) -> Result<&ParamDistribution> {
        self.get(class, lead).ok_or_else(|| {
            Error::Config(format!(
                "no parameter distribution for class {class}, lead {lead}"
            ))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamDistribution> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> Vec<AbnormalityClass> {
        let mut out: Vec<_> = self.entries.keys().map(|(c, _)| c.clone()).collect();
        out.dedup();
        out
    }

    /// Copy with every standard deviation set to zero.
    pub fn zero_variance(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, d)| (k.clone(), d.clone().with_zero_variance()))
                .collect(),
        }
    }

    /// Rhythm shared by a class; taken from its lead II entry.
    pub fn rhythm(&self, class: &AbnormalityClass) -> Result<RhythmParams> {
        Ok(self.require(class, LeadId::II)?.rhythm)
    }

    /// Mean parameters of every lead of `class`.
    pub fn mean_lead_params(
        &self,
        class: &AbnormalityClass,
    ) -> Result<BTreeMap<LeadId, LeadParams>> {
        LeadId::ALL
            .iter()
            .map(|&id| Ok((id, self.require(class, id)?.mean_params())))
            .collect()
    }

    /// One draw for each of the eight free leads of `class`.
    pub fn sample_free_leads<R: Rng + ?Sized>(
        &self,
        class: &AbnormalityClass,
        rng: &mut R,
    ) -> Result<BTreeMap<LeadId, LeadParams>> {
        LeadId::FREE
            .iter()
            .map(|&id| Ok((id, sample_eta_with(self.require(class, id)?, rng))))
            .collect()
    }
}

const FIELDS: [&str; 6] = [
    "theta_mean",
    "theta_std",
    "a_mean",
    "a_std",
    "b_mean",
    "b_std",
];

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical text form of `set`.
pub fn write_param_file(set: &ParamSet) -> String {
    let mut out = String::from("# edm-ecg parameter file\n");
    for d in set.iter() {
        let prefix = format!("{}.{}", d.class, d.lead);
        out.push('\n');
        for w in Wave::ALL {
            let i = 3 * w.index();
            let vals = [
                d.mean[i],
                d.std[i],
                d.mean[i + 1],
                d.std[i + 1],
                d.mean[i + 2],
                d.std[i + 2],
            ];
            for (field, v) in FIELDS.iter().zip(vals) {
                let _ = writeln!(out, "{prefix}.{w}.{field} = {}", fmt_value(v));
            }
        }
        let _ = writeln!(out, "{prefix}.gain_mean = {}", fmt_value(d.gain_mean));
        let _ = writeln!(out, "{prefix}.gain_std = {}", fmt_value(d.gain_std));
        let _ = writeln!(out, "{prefix}.rhythm.f = {}", fmt_value(d.rhythm.f));
        let _ = writeln!(out, "{prefix}.rhythm.A = {}", fmt_value(d.rhythm.amplitude));
        let _ = writeln!(out, "{prefix}.rhythm.f2 = {}", fmt_value(d.rhythm.f2));
    }
    out
}

/// Slot of a per-lead key suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Mean(usize),
    Std(usize),
    GainMean,
    GainStd,
    F,
    A,
    F2,
}

const N_SLOTS: usize = 2 * N_PARAMS + 5;

fn parse_slot(rest: &[&str]) -> Option<Slot> {
    match rest {
        ["gain_mean"] => Some(Slot::GainMean),
        ["gain_std"] => Some(Slot::GainStd),
        ["rhythm", "f"] => Some(Slot::F),
        ["rhythm", "A"] => Some(Slot::A),
        ["rhythm", "f2"] => Some(Slot::F2),
        [wave, field] => {
            let w: Wave = wave.parse().ok()?;
            let pos = FIELDS.iter().position(|f| f == field)?;
            let k = 3 * w.index() + pos / 2;
            Some(if pos % 2 == 0 {
                Slot::Mean(k)
            } else {
                Slot::Std(k)
            })
        }
        _ => None,
    }
}

fn slot_name(s: Slot) -> String {
    match s {
        Slot::Mean(k) => format!("{}_mean", component_key(k)),
        Slot::Std(k) => format!("{}_std", component_key(k)),
        Slot::GainMean => "gain_mean".into(),
        Slot::GainStd => "gain_std".into(),
        Slot::F => "rhythm.f".into(),
        Slot::A => "rhythm.A".into(),
        Slot::F2 => "rhythm.f2".into(),
    }
}

fn all_slots() -> Vec<Slot> {
    let mut v: Vec<Slot> = (0..N_PARAMS)
        .flat_map(|k| [Slot::Mean(k), Slot::Std(k)])
        .collect();
    v.extend([Slot::GainMean, Slot::GainStd, Slot::F, Slot::A, Slot::F2]);
    debug_assert_eq!(v.len(), N_SLOTS);
    v
}

#[derive(Default)]
struct Group {
    first_line: usize,
    values: HashMap<Slot, (f64, usize)>,
}

/// Parses a parameter file. Either every entry is valid and the full set is
/// returned, or the first problem is reported with its line number.
pub fn read_param_file(text: &str) -> Result<ParamSet> {
    let mut groups: BTreeMap<(AbnormalityClass, LeadId), Group> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let perr = |msg: String| Error::Parse { line: line_no, msg };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() < 3 {
            return Err(perr(format!("unknown key `{key}`")));
        }
        let class =
            AbnormalityClass::new(parts[0]).map_err(|e| perr(format!("key `{key}`: {e}")))?;
        let lead: LeadId = parts[1]
            .parse()
            .map_err(|_| perr(format!("unknown lead in key `{key}`")))?;
        let slot = parse_slot(&parts[2..]).ok_or_else(|| perr(format!("unknown key `{key}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| perr(format!("key `{key}`: cannot parse `{value}` as a number")))?;
        if !v.is_finite() {
            return Err(perr(format!("key `{key}`: value must be finite")));
        }
        let group = groups.entry((class, lead)).or_insert_with(|| Group {
            first_line: line_no,
            ..Group::default()
        });
        if group.values.insert(slot, (v, line_no)).is_some() {
            return Err(perr(format!("duplicate key `{key}`")));
        }
    }

    let mut set = ParamSet::new();
    for ((class, lead), g) in groups {
        let prefix = format!("{class}.{lead}");
        let get = |s: Slot| -> Result<(f64, usize)> {
            g.values.get(&s).copied().ok_or_else(|| Error::Parse {
                line: g.first_line,
                msg: format!("missing key `{prefix}.{}`", slot_name(s)),
            })
        };
        for s in all_slots() {
            get(s)?;
        }
        let check = |s: Slot, ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                let (v, line) = get(s)?;
                Err(Error::Parse {
                    line,
                    msg: format!("key `{prefix}.{}` = {v}: {what}", slot_name(s)),
                })
            }
        };
        let mut mean = [0.0; N_PARAMS];
        let mut std = [0.0; N_PARAMS];
        for k in 0..N_PARAMS {
            mean[k] = get(Slot::Mean(k))?.0;
            std[k] = get(Slot::Std(k))?.0;
            check(
                Slot::Std(k),
                std[k] >= 0.0,
                "standard deviation must be >= 0",
            )?;
            if k % 3 == 2 {
                check(Slot::Mean(k), mean[k] >= MIN_WIDTH, "width must be >= 1e-3")?;
            }
        }
        let gain_mean = get(Slot::GainMean)?.0;
        check(Slot::GainMean, gain_mean != 0.0, "gain must be non-zero")?;
        let gain_std = get(Slot::GainStd)?.0;
        check(
            Slot::GainStd,
            gain_std >= 0.0,
            "standard deviation must be >= 0",
        )?;
        let f = get(Slot::F)?.0;
        check(Slot::F, f > 0.0, "heart rate must be > 0")?;
        let a = get(Slot::A)?.0;
        check(Slot::A, a >= 0.0, "baseline amplitude must be >= 0")?;
        let f2 = get(Slot::F2)?.0;
        check(Slot::F2, f2 >= 0.0, "respiratory frequency must be >= 0")?;
        let rhythm = RhythmParams {
            f,
            amplitude: a,
            f2,
        };
        let dist = ParamDistribution {
            class,
            lead,
            mean,
            std,
            gain_mean,
            gain_std,
            rhythm,
        };
        set.insert(dist).map_err(|e| Error::Parse {
            line: g.first_line,
            msg: e.to_string(),
        })?;
    }
    Ok(set)
}

/// Millivolts per model unit that puts the default lead-II R wave near 1 mV.
pub const LEAD_II_GAIN: f64 = 21.6;

/// Relative amplitude scale and P, Q, R, S, T amplitudes of the default
/// normal-sinus morphology of each lead.
fn default_lead_shape(id: LeadId) -> (f64, [f64; 5]) {
    use LeadId::*;
    match id {
        I => (0.6, [1.0, -4.0, 30.0, -5.0, 0.9]),
        II => (1.0, [1.2, -5.0, 30.0, -7.5, 0.75]),
        III => (0.45, [0.6, -6.0, 30.0, -9.0, 0.5]),
        AVR => (0.5, [-1.2, 5.0, -30.0, 7.5, -0.75]),
        AVL => (0.3, [0.8, -4.0, 30.0, -6.0, 0.6]),
        AVF => (0.7, [1.0, -5.5, 30.0, -8.5, 0.6]),
        V1 => (0.8, [0.8, -2.0, 12.0, -20.0, 0.5]),
        V2 => (1.0, [1.0, -3.0, 20.0, -18.0, 0.9]),
        V3 => (1.0, [1.1, -4.0, 26.0, -12.0, 0.9]),
        V4 => (1.1, [1.2, -5.0, 32.0, -9.0, 0.85]),
        V5 => (1.0, [1.2, -5.5, 32.0, -6.0, 0.8]),
        V6 => (0.8, [1.2, -5.0, 30.0, -4.0, 0.7]),
    }
}

/// Built-in NORMAL-class distributions for all twelve leads.
pub fn default_param_set() -> ParamSet {
    let class = AbnormalityClass::normal();
    let base = EdmParams::default();
    let mut set = ParamSet::new();
    for id in LeadId::ALL {
        let (scale, amps) = default_lead_shape(id);
        let mut eta = base;
        for (w, a) in eta.waves.iter_mut().zip(amps) {
            w.a = a;
        }
        let mean = eta.to_vec();
        let mut std = [0.0; N_PARAMS];
        for w in 0..5 {
            std[3 * w] = 0.01;
            std[3 * w + 1] = 0.05 * mean[3 * w + 1].abs();
            std[3 * w + 2] = 0.05 * mean[3 * w + 2];
        }
        let gain_mean = scale * LEAD_II_GAIN;
        set.insert(ParamDistribution {
            class: class.clone(),
            lead: id,
            mean,
            std,
            gain_mean,
            gain_std: 0.05 * gain_mean,
            rhythm: RhythmParams::default(),
        })
        .expect("built-in defaults are valid");
    }
    set
}

/// The shipped default parameter file.
pub const DEFAULT_PARAM_FILE: &str = include_str!("../data/default_params.txt");

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normal() -> AbnormalityClass {
        AbnormalityClass::normal()
    }

    #[test]
    fn shipped_file_matches_builtin_defaults() {
        let set = read_param_file(DEFAULT_PARAM_FILE).unwrap();
        assert_eq!(set.len(), 12);
        for id in LeadId::ALL {
            let d = set.require(&normal(), id).unwrap();
            d.validate().unwrap();
            EdmParams::from_vec(&d.mean).validate().unwrap();
        }
        assert_eq!(set, default_param_set());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let text = write_param_file(&default_param_set());
        let again = write_param_file(&read_param_file(&text).unwrap());
        assert_eq!(text, again);
    }

    #[test]
    fn zero_width_is_rejected_by_key() {
        let text = write_param_file(&default_param_set());
        let bad = text.replace(
            &format!("NORMAL.II.R.b_mean = {}", fmt_value(0.1)),
            "NORMAL.II.R.b_mean = 0",
        );
        assert_ne!(bad, text);
        match read_param_file(&bad) {
            Err(Error::Parse { msg, line }) => {
                assert!(msg.contains("NORMAL.II.R.b_mean"), "{msg}");
                assert!(bad
                    .lines()
                    .nth(line - 1)
                    .unwrap()
                    .starts_with("NORMAL.II.R.b_mean"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = write_param_file(&default_param_set());
        let lines: Vec<&str> = text.lines().collect();

        let dup = format!("{text}{}\n", lines[2]);
        match read_param_file(&dup) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, lines.len() + 1);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let unknown = format!("{text}NORMAL.II.R.c_mean = 1\n");
        assert!(
            matches!(read_param_file(&unknown), Err(Error::Parse { line, .. }) if line == lines.len() + 1)
        );

        let garbage = "# header\nthis is not a pair\n";
        assert!(matches!(
            read_param_file(garbage),
            Err(Error::Parse { line: 2, .. })
        ));

        let nan = "NORMAL.II.R.a_mean = NaN\n";
        assert!(matches!(
            read_param_file(nan),
            Err(Error::Parse { line: 1, .. })
        ));

        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("NORMAL.V3.T.b_std"))
            .map(|l| format!("{l}\n"))
            .collect();
        match read_param_file(&missing) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("NORMAL.V3.T.b_std"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = write_param_file(&default_param_set());
        let commented: String = text
            .lines()
            .map(|l| format!("  {l}   # trailing\n\n"))
            .collect();
        assert_eq!(read_param_file(&commented).unwrap(), default_param_set());
    }

    #[test]
    fn zero_std_returns_mean() {
        let d = default_param_set()
            .require(&normal(), LeadId::II)
            .unwrap()
            .clone()
            .with_zero_variance();
        let p = sample_eta(&d, 99);
        assert_eq!(p.eta.to_vec(), d.mean);
        assert_eq!(p.gain, d.gain_mean);
    }

    #[test]
    fn sampling_is_seeded() {
        let d = default_param_set()
            .require(&normal(), LeadId::V2)
            .unwrap()
            .clone();
        assert_eq!(sample_eta(&d, 7), sample_eta(&d, 7));
        assert_ne!(sample_eta(&d, 7), sample_eta(&d, 8));
    }

    #[test]
    fn sample_means_within_three_standard_errors() {
        let mut d = default_param_set()
            .require(&normal(), LeadId::II)
            .unwrap()
            .clone();
        for k in 0..N_PARAMS {
            d.std[k] = 0.1 * d.mean[k].abs();
        }
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sums = [0.0; N_PARAMS];
        for _ in 0..n {
            let v = sample_eta_with(&d, &mut rng).eta.to_vec();
            for k in 0..N_PARAMS {
                sums[k] += v[k];
            }
        }
        for k in 0..N_PARAMS {
            let m = sums[k] / n as f64;
            let se = d.std[k] / (n as f64).sqrt();
            assert!(
                (m - d.mean[k]).abs() <= 3.0 * se + 1e-15,
                "component {k}: {m} vs {}",
                d.mean[k]
            );
        }
    }

    #[test]
    fn widths_are_floored_and_angles_wrapped() {
        let mut d = default_param_set()
            .require(&normal(), LeadId::II)
            .unwrap()
            .clone();
        d.std[2] = 10.0;
        d.std[12] = 50.0;
        for seed in 0..200 {
            let p = sample_eta(&d, seed);
            for w in &p.eta.waves {
                assert!(w.b >= MIN_WIDTH);
                assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&w.theta));
            }
        }
    }

    proptest! {
        #[test]
        fn arbitrary_sets_round_trip(
            mean in prop::array::uniform15(-3.0f64..3.0),
            std in prop::array::uniform15(0.0f64..2.0),
            gain in 0.1f64..50.0,
            f in 0.3f64..3.0,
        ) {
            let mut mean = mean;
            for w in 0..5 { mean[3 * w + 2] = mean[3 * w + 2].abs() + MIN_WIDTH; }
            let mut set = ParamSet::new();
            for class in ["NORMAL", "RBBB"] {
                set.insert(ParamDistribution {
                    class: AbnormalityClass::new(class).unwrap(),
                    lead: LeadId::AVL,
                    mean,
                    std,
                    gain_mean: gain,
                    gain_std: 0.0,
                    rhythm: RhythmParams { f, amplitude: 0.01, f2: 0.2 },
                }).unwrap();
            }
            let text = write_param_file(&set);
            let back = read_param_file(&text).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(write_param_file(&back), text);
        }
    }
}
