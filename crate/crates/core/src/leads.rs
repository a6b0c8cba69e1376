//! Twelve-lead assembly.
//!
//! Only eight channels carry independent information: I, II and V1-V6 are
//! integrated from their own morphology parameters, and III, aVR, aVL, aVF
//! are derived from I and II through the Einthoven and Goldberger identities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::edm::{EdmParams, RhythmParams, State};
use crate::error::{Error, Result};
use crate::integrator::{integrate_euler, SamplingGrid};
use crate::segmentation::AbnormalityClass;

/// Standard lead, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LeadId {
    I,
    II,
    III,
    AVR,
    AVL,
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl LeadId {
    pub const ALL: [LeadId; 12] = [
        LeadId::I,
        LeadId::II,
        LeadId::III,
        LeadId::AVR,
        LeadId::AVL,
        LeadId::AVF,
        LeadId::V1,
        LeadId::V2,
        LeadId::V3,
        LeadId::V4,
        LeadId::V5,
        LeadId::V6,
    ];

    /// Leads integrated from their own parameters.
    pub const FREE: [LeadId; 8] = [
        LeadId::I,
        LeadId::II,
        LeadId::V1,
        LeadId::V2,
        LeadId::V3,
        LeadId::V4,
        LeadId::V5,
        LeadId::V6,
    ];

    /// Limb leads computed from I and II.
    pub const DERIVED: [LeadId; 4] = [LeadId::III, LeadId::AVR, LeadId::AVL, LeadId::AVF];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LeadId::I => "I",
            LeadId::II => "II",
            LeadId::III => "III",
            LeadId::AVR => "aVR",
            LeadId::AVL => "aVL",
            LeadId::AVF => "aVF",
            LeadId::V1 => "V1",
            LeadId::V2 => "V2",
            LeadId::V3 => "V3",
            LeadId::V4 => "V4",
            LeadId::V5 => "V5",
            LeadId::V6 => "V6",
        }
    }

    pub fn is_free(self) -> bool {
        Self::FREE.contains(&self)
    }
}

impl fmt::Display for LeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LeadId::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown lead `{s}`")))
    }
}

/// `target = beta * src1 + gamma * src2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadRelation {
    pub target: LeadId,
    pub src1: LeadId,
    pub beta: f64,
    pub src2: LeadId,
    pub gamma: f64,
}

impl LeadRelation {
    pub fn new(target: LeadId, src1: LeadId, beta: f64, src2: LeadId, gamma: f64) -> Result<Self> {
        if target == src1 || target == src2 {
            return Err(Error::InvalidArgument(format!(
                "relation for {target} references itself"
            )));
        }
        if beta == 0.0 && gamma == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "relation for {target} has zero coefficients"
            )));
        }
        Ok(Self {
            target,
            src1,
            beta,
            src2,
            gamma,
        })
    }

    /// `beta * a + gamma * b`.
    #[inline]
    pub fn combine(&self, a: f64, b: f64) -> f64 {
        self.beta * a + self.gamma * b
    }
}

fn term(coef: f64, lead: LeadId) -> String {
    if coef.abs() == 1.0 {
        lead.to_string()
    } else {
        format!("{}*{lead}", coef.abs())
    }
}

impl fmt::Display for LeadRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign1 = if self.beta < 0.0 { "-" } else { "" };
        let sign2 = if self.gamma < 0.0 { "-" } else { "+" };
        write!(
            f,
            "{} = {sign1}{} {sign2} {}",
            self.target,
            term(self.beta, self.src1),
            term(self.gamma, self.src2)
        )
    }
}

/// The six limb-lead identities:
///
/// ```text
/// I   = II - III        aVR = -1/2 (I + II)
/// II  = I + III         aVL =  1/2 (I - III)
/// III = II - I          aVF =  1/2 (II + III)
/// ```
pub fn limb_relations() -> [LeadRelation; 6] {
    use LeadId::*;
    let r = |target, src1, beta, src2, gamma| LeadRelation {
        target,
        src1,
        beta,
        src2,
        gamma,
    };
    [
        r(I, II, 1.0, III, -1.0),
        r(II, I, 1.0, III, 1.0),
        r(III, II, 1.0, I, -1.0),
        r(AVR, I, -0.5, II, -0.5),
        r(AVL, I, 0.5, III, -0.5),
        r(AVF, II, 0.5, III, 0.5),
    ]
}

/// The relation whose target is `lead`, if it is a limb lead.
pub fn relation_for(lead: LeadId) -> Option<LeadRelation> {
    limb_relations().into_iter().find(|r| r.target == lead)
}

/// Dependent limb leads from I and II, in the unique forms consistent with
/// all six identities.
#[inline]
pub fn derive_limb(i: f64, ii: f64) -> [f64; 4] {
    [ii - i, -0.5 * (i + ii), i - 0.5 * ii, ii - 0.5 * i]
}

/// Twelve leads on a common grid, in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Heartbeat {
    grid: SamplingGrid,
    leads: Vec<Vec<f64>>,
    pub label: Option<AbnormalityClass>,
}

impl Heartbeat {
    /// Rows must be in [`LeadId::ALL`] order, each `grid.len()` long and finite.
    pub fn new(
        grid: SamplingGrid,
        leads: Vec<Vec<f64>>,
        label: Option<AbnormalityClass>,
    ) -> Result<Self> {
        if leads.len() != 12 {
            return Err(Error::Dimension(format!(
                "heartbeat needs 12 rows, got {}",
                leads.len()
            )));
        }
        for (row, id) in leads.iter().zip(LeadId::ALL) {
            if row.len() != grid.len() {
                return Err(Error::Dimension(format!(
                    "lead {id} has {} samples, grid expects {}",
                    row.len(),
                    grid.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "lead {id} contains non-finite samples"
                )));
            }
        }
        Ok(Self { grid, leads, label })
    }

    pub fn grid(&self) -> SamplingGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lead(&self, id: LeadId) -> &[f64] {
        &self.leads[id.index()]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.leads
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.leads
    }

    /// Overwrites III, aVR, aVL and aVF from the current I and II rows.
    pub fn rederive_limb_leads(&mut self) {
        for l in 0..self.len() {
            let d = derive_limb(
                self.leads[LeadId::I.index()][l],
                self.leads[LeadId::II.index()][l],
            );
            for (id, v) in LeadId::DERIVED.iter().zip(d) {
                self.leads[id.index()][l] = v;
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn lead_mut(&mut self, id: LeadId) -> &mut [f64] {
        &mut self.leads[id.index()]
    }
}

/// Morphology and amplitude scale of one lead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadParams {
    pub eta: EdmParams,
    /// Millivolts per model unit.
    pub gain: f64,
}

impl LeadParams {
    pub fn new(eta: EdmParams, gain: f64) -> Self {
        Self { eta, gain }
    }
}

impl Default for LeadParams {
    fn default() -> Self {
        Self {
            eta: EdmParams::default(),
            gain: 1.0,
        }
    }
}

fn lead_row(p: &LeadParams, rhythm: &RhythmParams, grid: SamplingGrid) -> Result<Vec<f64>> {
    let tr = integrate_euler(&p.eta, rhythm, grid, State::default())?;
    Ok(tr.z.into_iter().map(|z| p.gain * z).collect())
}

/// Integrates the eight free leads and derives the four dependent limb leads.
pub fn synthesize_heartbeat(
    params: &BTreeMap<LeadId, LeadParams>,
    rhythm: &RhythmParams,
    grid: SamplingGrid,
) -> Result<Heartbeat> {
    let mut rows = vec![Vec::new(); 12];
    for id in LeadId::FREE {
        let p = params
            .get(&id)
            .ok_or_else(|| Error::Config(format!("missing parameter set for lead {id}")))?;
        rows[id.index()] = lead_row(p, rhythm, grid)?;
    }
    for id in LeadId::DERIVED {
        rows[id.index()] = vec![0.0; grid.len()];
    }
    let mut beat = Heartbeat::new(grid, rows, None)?;
    beat.rederive_limb_leads();
    Ok(beat)
}

/// Integrates every lead independently from its own parameters, ignoring
/// the limb identities. Useful as a contrast to [`synthesize_heartbeat`].
pub fn synthesize_unconstrained(
    params: &BTreeMap<LeadId, LeadParams>,
    rhythm: &RhythmParams,
    grid: SamplingGrid,
) -> Result<Heartbeat> {
    let rows = LeadId::ALL
        .iter()
        .map(|id| {
            let p = params
                .get(id)
                .ok_or_else(|| Error::Config(format!("missing parameter set for lead {id}")))?;
            lead_row(p, rhythm, grid)
        })
        .collect::<Result<Vec<_>>>()?;
    Heartbeat::new(grid, rows, None)
}

/// Worst violation of each limb identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub deviations: Vec<(LeadRelation, f64)>,
    pub tol: f64,
}

impl ConsistencyReport {
    pub fn pass(&self) -> bool {
        self.deviations.iter().all(|(_, d)| *d <= self.tol)
    }

    pub fn failing(&self) -> impl Iterator<Item = &(LeadRelation, f64)> {
        self.deviations.iter().filter(move |(_, d)| *d > self.tol)
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().map(|(_, d)| *d).fold(0.0, f64::max)
    }
}

/// Measures `max_l |target_l - (beta src1_l + gamma src2_l)|` for every
/// limb relation.
pub fn check_lead_consistency(h: &Heartbeat, tol: f64) -> ConsistencyReport {
    let deviations = limb_relations()
        .into_iter()
        .map(|rel| {
            let (t, a, b) = (h.lead(rel.target), h.lead(rel.src1), h.lead(rel.src2));
            let dev = (0..h.len())
                .map(|l| (t[l] - rel.combine(a[l], b[l])).abs())
                .fold(0.0, f64::max);
            (rel, dev)
        })
        .collect();
    ConsistencyReport { deviations, tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::Wave;

    fn default_params() -> BTreeMap<LeadId, LeadParams> {
        LeadId::ALL
            .iter()
            .map(|&id| (id, LeadParams::default()))
            .collect()
    }

    #[test]
    fn relation_table() {
        let rels = limb_relations();
        assert_eq!(rels.len(), 6);
        let iii = relation_for(LeadId::III).unwrap();
        assert_eq!(
            (iii.src1, iii.beta, iii.src2, iii.gamma),
            (LeadId::II, 1.0, LeadId::I, -1.0)
        );
        let avr = relation_for(LeadId::AVR).unwrap();
        assert_eq!(
            (avr.src1, avr.beta, avr.src2, avr.gamma),
            (LeadId::I, -0.5, LeadId::II, -0.5)
        );
        assert!(relation_for(LeadId::V3).is_none());
        for r in rels {
            assert!(LeadRelation::new(r.target, r.src1, r.beta, r.src2, r.gamma).is_ok());
        }
        assert!(LeadRelation::new(LeadId::I, LeadId::I, 1.0, LeadId::II, 0.0).is_err());
        assert!(LeadRelation::new(LeadId::I, LeadId::II, 0.0, LeadId::III, 0.0).is_err());
    }

    #[test]
    fn derived_forms_agree_with_half_coefficient_identities() {
        // substituting III = II - I into aVL and aVF
        for &(i, ii) in &[
            (0.3, 1.1),
            (-0.25, 0.5),
            (1.0, 1.0),
            (0.0, -0.75),
            (0.1234567, -2.3456789),
        ] {
            let [iii, avr, avl, avf] = derive_limb(i, ii);
            let ulp = 2.0 * f64::EPSILON * f64::max(i.abs(), ii.abs());
            assert!((avl - 0.5 * (i - iii)).abs() <= ulp);
            assert!((avf - 0.5 * (ii + iii)).abs() <= ulp);
            assert_eq!(avr, -0.5 * (i + ii));
            assert!((i + iii - ii).abs() <= ulp);
        }
    }

    #[test]
    fn synthesized_beat_satisfies_identities() {
        let mut params = default_params();
        params.get_mut(&LeadId::I).unwrap().gain = 0.6;
        params.get_mut(&LeadId::I).unwrap().eta.wave_mut(Wave::T).a = 0.4;
        let grid = SamplingGrid::one_beat(500.0, 1.0).unwrap();
        let beat = synthesize_heartbeat(&params, &RhythmParams::default(), grid).unwrap();
        let rep = check_lead_consistency(&beat, 1e-9);
        assert!(rep.pass(), "{rep:?}");
        let scale = beat
            .lead(LeadId::II)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rep.max_deviation() <= 1e-12 * scale.max(1.0));
        for id in LeadId::ALL {
            assert_eq!(beat.lead(id).len(), 500);
        }
    }

    #[test]
    fn identical_i_and_ii_give_flat_iii() {
        let grid = SamplingGrid::one_beat(500.0, 1.0).unwrap();
        let beat = synthesize_heartbeat(&default_params(), &RhythmParams::default(), grid).unwrap();
        assert!(beat.lead(LeadId::III).iter().all(|&v| v == 0.0));
        for (avl, i) in beat.lead(LeadId::AVL).iter().zip(beat.lead(LeadId::I)) {
            assert_eq!(*avl, 0.5 * i);
        }
    }

    #[test]
    fn missing_lead_is_named() {
        let mut params = default_params();
        params.remove(&LeadId::V4);
        let grid = SamplingGrid::one_beat(500.0, 1.0).unwrap();
        match synthesize_heartbeat(&params, &RhythmParams::default(), grid) {
            Err(Error::Config(msg)) => assert!(msg.contains("V4")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zeroed_avf_fails_only_avf() {
        let grid = SamplingGrid::one_beat(500.0, 1.0).unwrap();
        let mut params = default_params();
        params.get_mut(&LeadId::II).unwrap().gain = 1.4;
        let mut beat = synthesize_heartbeat(&params, &RhythmParams::default(), grid).unwrap();
        beat.lead_mut(LeadId::AVF).iter_mut().for_each(|v| *v = 0.0);
        let rep = check_lead_consistency(&beat, 1e-9);
        assert!(!rep.pass());
        let failing: Vec<_> = rep.failing().map(|(r, _)| r.target).collect();
        assert_eq!(failing, vec![LeadId::AVF]);
    }

    #[test]
    fn heartbeat_shape_is_checked() {
        let grid = SamplingGrid::new(500.0, 4).unwrap();
        assert!(Heartbeat::new(grid, vec![vec![0.0; 4]; 11], None).is_err());
        let mut rows = vec![vec![0.0; 4]; 12];
        rows[3] = vec![0.0; 3];
        assert!(Heartbeat::new(grid, rows, None).is_err());
        let mut rows = vec![vec![0.0; 4]; 12];
        rows[0][1] = f64::NAN;
        assert!(Heartbeat::new(grid, rows, None).is_err());
    }

    #[test]
    fn lead_names_round_trip() {
        for id in LeadId::ALL {
            assert_eq!(id.name().parse::<LeadId>().unwrap(), id);
        }
        assert!("avr".parse::<LeadId>().is_err());
    }
}
