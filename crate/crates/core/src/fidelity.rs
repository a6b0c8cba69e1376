//! Simulator distance and the Euler loss built from it.
//!
//! A candidate waveform `h` is scored by how well it satisfies the discrete
//! `z` equation of the model when `x`, `y` are pinned to their Euler solution:
//!
//! ```text
//! D(h; eta) = sum_l ( (h[l+1] - h[l]) / dt - f_z(x_l, y_l, h_l, t_l; eta) )^2
//! ```
//!
//! summed over the first `L - 1` samples (`l = 0 .. L-2` here). The
//! inter-lead variant replaces `f_z` by `beta f_z(.; eta1) + gamma f_z(.; eta2)`
//! for a lead that is a linear combination of two others. Both are quadratic
//! in `h` because `x`, `y` do not depend on it, so the `h` gradient is exact
//! and cheap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edm::{
    baseline, phase, wave_forcing, wave_forcing_grad, EdmParams, RhythmParams, MIN_WIDTH, N_PARAMS,
};
use crate::error::{Error, Result};
use crate::integrator::{reference_trajectory, SamplingGrid, Trajectory};
use crate::leads::{derive_limb, limb_relations, Heartbeat, LeadId, LeadRelation};
use crate::params::{sample_eta_with, ParamSet};
use crate::segmentation::AbnormalityClass;

/// One lead of a candidate beat in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadSignal {
    pub grid: SamplingGrid,
    pub samples: Vec<f64>,
    pub lead: LeadId,
}

impl LeadSignal {
    pub fn new(grid: SamplingGrid, samples: Vec<f64>, lead: LeadId) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "lead {lead} has {} samples, grid expects {}",
                samples.len(),
                grid.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lead {lead} contains non-finite samples"
            )));
        }
        Ok(Self {
            grid,
            samples,
            lead,
        })
    }

    /// Lead `id` of `beat` divided by `gain` (millivolts to model units).
    pub fn from_heartbeat(beat: &Heartbeat, id: LeadId, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gain for lead {id} must be finite and non-zero"
            )));
        }
        Self::new(
            beat.grid(),
            beat.lead(id).iter().map(|v| v / gain).collect(),
            id,
        )
    }
}

/// Balance between the single-lead and inter-lead terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    delta: f64,
}

impl LossWeights {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { delta: 0.6 }
    }
}

/// Phase and baseline along a reference path, per residual index.
#[derive(Debug, Clone)]
pub(crate) struct Pinned {
    pub dt: f64,
    pub theta: Vec<f64>,
    pub z0: Vec<f64>,
}

impl Pinned {
    pub fn new(reference: &Trajectory, rhythm: &RhythmParams) -> Self {
        let grid = reference.grid;
        let n = grid.len() - 1;
        Self {
            dt: grid.dt(),
            theta: (0..n)
                .map(|l| phase(reference.x[l], reference.y[l]))
                .collect(),
            z0: (0..n).map(|l| baseline(grid.time(l), rhythm)).collect(),
        }
    }

    pub fn forcing(&self, eta: &EdmParams) -> Vec<f64> {
        self.theta.iter().map(|&th| wave_forcing(th, eta)).collect()
    }
}

fn check_grid(h: &LeadSignal, reference: &Trajectory) -> Result<()> {
    if h.samples.len() != h.grid.len() {
        return Err(Error::Dimension(format!(
            "lead {} length disagrees with its grid",
            h.lead
        )));
    }
    if h.grid.len() != reference.grid.len() || h.grid.fs() != reference.grid.fs() {
        return Err(Error::Dimension(format!(
            "signal grid ({} samples at {} Hz) differs from reference ({} samples at {} Hz)",
            h.grid.len(),
            h.grid.fs(),
            reference.grid.len(),
            reference.grid.fs()
        )));
    }
    Ok(())
}

/// Residual of the pinned `z` equation for a lead combining two forcings.
/// Single-lead distances use `beta = 1, gamma = 0, w2 = 0`.
#[derive(Debug, Clone)]
pub(crate) struct Residual {
    pub beta: f64,
    pub gamma: f64,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl Residual {
    pub fn single(w: Vec<f64>) -> Self {
        let n = w.len();
        Self {
            beta: 1.0,
            gamma: 0.0,
            w1: w,
            w2: vec![0.0; n],
        }
    }

    #[inline]
    fn at(&self, pin: &Pinned, h: &[f64], l: usize) -> f64 {
        let drift = h[l] - pin.z0[l];
        let rhs = self.beta * (self.w1[l] - drift) + self.gamma * (self.w2[l] - drift);
        (h[l + 1] - h[l]) / pin.dt - rhs
    }

    pub fn value(&self, pin: &Pinned, h: &[f64]) -> f64 {
        (0..pin.theta.len())
            .map(|l| self.at(pin, h, l).powi(2))
            .sum()
    }

    /// Adds `scale * dD/dh` into `out`.
    pub fn accumulate_grad(&self, pin: &Pinned, h: &[f64], scale: f64, out: &mut [f64]) {
        let inv_dt = 1.0 / pin.dt;
        let diag = self.beta + self.gamma - inv_dt;
        for l in 0..pin.theta.len() {
            let r2 = 2.0 * scale * self.at(pin, h, l);
            out[l + 1] += r2 * inv_dt;
            out[l] += r2 * diag;
        }
    }
}

/// Single-lead simulator distance of `h` under `eta`. Only the `x`, `y`
/// rows of `reference` are used.
pub fn sim_distance(
    h: &LeadSignal,
    eta: &EdmParams,
    rhythm: &RhythmParams,
    reference: &Trajectory,
) -> Result<f64> {
    check_grid(h, reference)?;
    let pin = Pinned::new(reference, rhythm);
    Ok(Residual::single(pin.forcing(eta)).value(&pin, &h.samples))
}

/// Inter-lead simulator distance of `h` as the combination `rel` of two
/// leads with parameters `eta1` (for `rel.src1`) and `eta2` (for `rel.src2`).
pub fn sim_distance_interlead(
    h: &LeadSignal,
    eta1: &EdmParams,
    eta2: &EdmParams,
    rel: &LeadRelation,
    rhythm: &RhythmParams,
    reference: &Trajectory,
) -> Result<f64> {
    check_grid(h, reference)?;
    let pin = Pinned::new(reference, rhythm);
    let res = Residual {
        beta: rel.beta,
        gamma: rel.gamma,
        w1: pin.forcing(eta1),
        w2: pin.forcing(eta2),
    };
    Ok(res.value(&pin, &h.samples))
}

/// `dD/dh_k` for every sample of `h`.
pub fn grad_sim_distance_wrt_h(
    h: &LeadSignal,
    eta: &EdmParams,
    rhythm: &RhythmParams,
    reference: &Trajectory,
) -> Result<Vec<f64>> {
    check_grid(h, reference)?;
    let pin = Pinned::new(reference, rhythm);
    let mut g = vec![0.0; h.samples.len()];
    Residual::single(pin.forcing(eta)).accumulate_grad(&pin, &h.samples, 1.0, &mut g);
    Ok(g)
}

/// `dD/dh_k` of the inter-lead distance.
pub fn grad_sim_distance_interlead_wrt_h(
    h: &LeadSignal,
    eta1: &EdmParams,
    eta2: &EdmParams,
    rel: &LeadRelation,
    rhythm: &RhythmParams,
    reference: &Trajectory,
) -> Result<Vec<f64>> {
    check_grid(h, reference)?;
    let pin = Pinned::new(reference, rhythm);
    let res = Residual {
        beta: rel.beta,
        gamma: rel.gamma,
        w1: pin.forcing(eta1),
        w2: pin.forcing(eta2),
    };
    let mut g = vec![0.0; h.samples.len()];
    res.accumulate_grad(&pin, &h.samples, 1.0, &mut g);
    Ok(g)
}

pub(crate) fn check_widths(eta: &EdmParams) -> Result<()> {
    for (w, p) in crate::edm::Wave::ALL.iter().zip(&eta.waves) {
        if !(p.b >= MIN_WIDTH) {
            return Err(Error::Domain(format!(
                "width of wave {w} is {} (< {MIN_WIDTH})",
                p.b
            )));
        }
    }
    Ok(())
}

/// Distance and its gradient over the flattened parameters, sharing one pass.
pub(crate) fn distance_and_eta_grad(
    pin: &Pinned,
    h: &[f64],
    eta: &EdmParams,
) -> (f64, [f64; N_PARAMS]) {
    let mut d = 0.0;
    let mut g = [0.0; N_PARAMS];
    for l in 0..pin.theta.len() {
        let th = pin.theta[l];
        let w = wave_forcing(th, eta);
        let r = (h[l + 1] - h[l]) / pin.dt - (w - (h[l] - pin.z0[l]));
        d += r * r;
        // dr/dp = -dW/dp
        let dw = wave_forcing_grad(th, eta);
        for k in 0..N_PARAMS {
            g[k] -= 2.0 * r * dw[k];
        }
    }
    (d, g)
}

/// Gauss-Newton approximation of the distance Hessian over the flattened
/// parameters, `2 sum_l grad W(theta_l) grad W(theta_l)^T`.
pub(crate) fn gauss_newton_metric(pin: &Pinned, eta: &EdmParams) -> [[f64; N_PARAMS]; N_PARAMS] {
    let mut m = [[0.0; N_PARAMS]; N_PARAMS];
    for &th in &pin.theta {
        let dw = wave_forcing_grad(th, eta);
        for i in 0..N_PARAMS {
            for j in 0..=i {
                m[i][j] += 2.0 * dw[i] * dw[j];
            }
        }
    }
    for i in 0..N_PARAMS {
        for j in i + 1..N_PARAMS {
            m[i][j] = m[j][i];
        }
    }
    m
}

/// `dD/d eta` in [`EdmParams::to_vec`] order. The wrap of each phase offset
/// is held fixed, so the result is only meaningful away from wrap seams.
pub fn grad_sim_distance_wrt_eta(
    h: &LeadSignal,
    eta: &EdmParams,
    rhythm: &RhythmParams,
    reference: &Trajectory,
) -> Result<[f64; N_PARAMS]> {
    check_grid(h, reference)?;
    check_widths(eta)?;
    let pin = Pinned::new(reference, rhythm);
    Ok(distance_and_eta_grad(&pin, &h.samples, eta).1)
}

/// One weighted term of the combined loss.
#[derive(Debug, Clone)]
struct Term {
    lead: LeadId,
    /// Model units per millivolt of the scored lead.
    inv_gain: f64,
    weight: f64,
    residual: Residual,
}

/// Breakdown of a combined-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Mean single-lead distance over draws and the eight free leads.
    pub single: f64,
    /// Mean inter-lead distance over draws and the six limb relations.
    pub inter: f64,
    /// `delta * single + (1 - delta) * inter`.
    pub total: f64,
}

/// The Monte-Carlo Euler loss of one class with its parameter draws frozen,
/// so that it is a deterministic function of the beat.
///
/// Leads are converted from millivolts with the mean gain of their
/// distribution. Inter-lead coefficients are rescaled by the gain ratios
/// `g_src / g_target`, which reduces to the plain coefficients when all
/// gains agree.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    grid: SamplingGrid,
    pin: Pinned,
    weights: LossWeights,
    single: Vec<Term>,
    inter: Vec<Term>,
}

impl CombinedLoss {
    pub fn new(
        dists: &ParamSet,
        class: &AbnormalityClass,
        grid: SamplingGrid,
        weights: LossWeights,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument(
                "need at least one parameter draw".into(),
            ));
        }
        let rhythm = dists.rhythm(class)?;
        let mut gains = [0.0; 12];
        for id in LeadId::ALL {
            gains[id.index()] = dists.require(class, id)?.gain_mean;
        }
        let reference = reference_trajectory(&rhythm, grid)?;
        let pin = Pinned::new(&reference, &rhythm);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_single = 1.0 / (n_samples * LeadId::FREE.len()) as f64;
        let w_inter = 1.0 / (n_samples * 6) as f64;
        let mut single = Vec::new();
        let mut inter = Vec::new();
        for _ in 0..n_samples {
            let mut draws = Vec::with_capacity(12);
            for id in LeadId::ALL {
                draws.push(sample_eta_with(dists.require(class, id)?, &mut rng).eta);
            }
            let forcing: Vec<Vec<f64>> = draws.iter().map(|eta| pin.forcing(eta)).collect();
            for id in LeadId::FREE {
                single.push(Term {
                    lead: id,
                    inv_gain: 1.0 / gains[id.index()],
                    weight: w_single,
                    residual: Residual::single(forcing[id.index()].clone()),
                });
            }
            for rel in limb_relations() {
                let gt = gains[rel.target.index()];
                inter.push(Term {
                    lead: rel.target,
                    inv_gain: 1.0 / gt,
                    weight: w_inter,
                    residual: Residual {
                        beta: rel.beta * gains[rel.src1.index()] / gt,
                        gamma: rel.gamma * gains[rel.src2.index()] / gt,
                        w1: forcing[rel.src1.index()].clone(),
                        w2: forcing[rel.src2.index()].clone(),
                    },
                });
            }
        }
        Ok(Self {
            grid,
            pin,
            weights,
            single,
            inter,
        })
    }

    pub fn grid(&self) -> SamplingGrid {
        self.grid
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.len() != 12 || rows.iter().any(|r| r.len() != self.grid.len()) {
            return Err(Error::Dimension(format!(
                "expected 12 rows of {} samples for this loss",
                self.grid.len()
            )));
        }
        Ok(())
    }

    fn term_value(&self, t: &Term, rows: &[Vec<f64>]) -> f64 {
        let h: Vec<f64> = rows[t.lead.index()]
            .iter()
            .map(|v| v * t.inv_gain)
            .collect();
        t.weight * t.residual.value(&self.pin, &h)
    }

    /// Evaluates the loss on twelve millivolt rows in [`LeadId::ALL`] order.
    pub fn parts_of_rows(&self, rows: &[Vec<f64>]) -> Result<LossParts> {
        self.check_rows(rows)?;
        let single: f64 = self.single.iter().map(|t| self.term_value(t, rows)).sum();
        let inter: f64 = self.inter.iter().map(|t| self.term_value(t, rows)).sum();
        let d = self.weights.delta;
        Ok(LossParts {
            single,
            inter,
            total: d * single + (1.0 - d) * inter,
        })
    }

    pub fn parts(&self, beat: &Heartbeat) -> Result<LossParts> {
        if beat.grid() != self.grid {
            return Err(Error::Dimension(
                "beat grid differs from the loss grid".into(),
            ));
        }
        self.parts_of_rows(beat.rows())
    }

    pub fn value(&self, beat: &Heartbeat) -> Result<f64> {
        Ok(self.parts(beat)?.total)
    }

    /// Gradient of the total with respect to all twelve rows taken as
    /// independent variables (millivolts).
    pub fn grad_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_rows(rows)?;
        let d = self.weights.delta;
        let mut g = vec![vec![0.0; self.grid.len()]; 12];
        for (terms, mix) in [(&self.single, d), (&self.inter, 1.0 - d)] {
            if mix == 0.0 {
                continue;
            }
            for t in terms.iter() {
                let idx = t.lead.index();
                let h: Vec<f64> = rows[idx].iter().map(|v| v * t.inv_gain).collect();
                // chain rule through h = row / gain
                t.residual
                    .accumulate_grad(&self.pin, &h, mix * t.weight * t.inv_gain, &mut g[idx]);
            }
        }
        Ok(g)
    }

    /// Gradient with respect to the eight free rows when the limb leads are
    /// derived from I and II. Returned in [`LeadId::FREE`] order.
    pub fn grad_free(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let g = self.grad_rows(rows)?;
        let mut out: Vec<Vec<f64>> = LeadId::FREE
            .iter()
            .map(|id| g[id.index()].clone())
            .collect();
        // d(derived)/dI and d(derived)/dII in LeadId::DERIVED order
        let d_di = derive_limb(1.0, 0.0);
        let d_dii = derive_limb(0.0, 1.0);
        for l in 0..self.grid.len() {
            for (k, id) in LeadId::DERIVED.iter().enumerate() {
                let gd = g[id.index()][l];
                out[0][l] += d_di[k] * gd;
                out[1][l] += d_dii[k] * gd;
            }
        }
        Ok(out)
    }
}

/// Euler loss of a labeled beat: `delta * L1 + (1 - delta) * L2`, with both
/// expectations over `n_samples` seeded draws from the class distributions.
/// Unlabeled beats are scored as NORMAL.
pub fn euler_loss_combined(
    beat: &Heartbeat,
    dists: &ParamSet,
    weights: LossWeights,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let class = beat.label.clone().unwrap_or_else(AbnormalityClass::normal);
    CombinedLoss::new(dists, &class, beat.grid(), weights, n_samples, seed)?.value(beat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::State;
    use crate::integrator::integrate_euler;

    fn setup() -> (EdmParams, RhythmParams, SamplingGrid, Trajectory) {
        let eta = EdmParams::default();
        let rhythm = RhythmParams::default();
        let grid = SamplingGrid::one_beat(500.0, 1.0).unwrap();
        let tr = integrate_euler(&eta, &rhythm, grid, State::default()).unwrap();
        (eta, rhythm, grid, tr)
    }

    #[test]
    fn zero_at_euler_solution() {
        let (eta, rhythm, grid, tr) = setup();
        let h = LeadSignal::new(grid, tr.z.clone(), LeadId::II).unwrap();
        let d = sim_distance(&h, &eta, &rhythm, &tr).unwrap();
        assert!(d <= 1e-18, "{d}");
        let g = grad_sim_distance_wrt_h(&h, &eta, &rhythm, &tr).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn constant_shift_law() {
        let (eta, rhythm, grid, tr) = setup();
        for c in [0.01, 0.1, 1.0] {
            let h =
                LeadSignal::new(grid, tr.z.iter().map(|z| z + c).collect(), LeadId::II).unwrap();
            let d = sim_distance(&h, &eta, &rhythm, &tr).unwrap();
            let expect = (grid.len() - 1) as f64 * c * c;
            assert!((d - expect).abs() <= 1e-9 * expect, "{d} vs {expect}");
        }
    }

    #[test]
    fn degenerate_relations_collapse() {
        let (eta, rhythm, grid, tr) = setup();
        let h = LeadSignal::new(
            grid,
            tr.z.iter().map(|z| 1.3 * z + 0.01).collect(),
            LeadId::II,
        )
        .unwrap();
        let base = sim_distance(&h, &eta, &rhythm, &tr).unwrap();
        let mut other = eta;
        other.waves[2].a = 12.0;
        let only_first = LeadRelation {
            target: LeadId::II,
            src1: LeadId::I,
            beta: 1.0,
            src2: LeadId::III,
            gamma: 0.0,
        };
        assert_eq!(
            sim_distance_interlead(&h, &eta, &other, &only_first, &rhythm, &tr).unwrap(),
            base
        );
        let split = LeadRelation {
            target: LeadId::II,
            src1: LeadId::I,
            beta: 0.25,
            src2: LeadId::III,
            gamma: 0.75,
        };
        let d = sim_distance_interlead(&h, &eta, &eta, &split, &rhythm, &tr).unwrap();
        assert!((d - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn grid_mismatch_is_a_dimension_error() {
        let (eta, rhythm, _, tr) = setup();
        let other = SamplingGrid::new(500.0, 400).unwrap();
        let h = LeadSignal::new(other, vec![0.0; 400], LeadId::II).unwrap();
        assert!(matches!(
            sim_distance(&h, &eta, &rhythm, &tr),
            Err(Error::Dimension(_))
        ));
        let other_fs = SamplingGrid::new(250.0, 500).unwrap();
        let h = LeadSignal::new(other_fs, vec![0.0; 500], LeadId::II).unwrap();
        assert!(matches!(
            grad_sim_distance_wrt_h(&h, &eta, &rhythm, &tr),
            Err(Error::Dimension(_))
        ));
        assert!(LeadSignal::new(other, vec![0.0; 3], LeadId::II).is_err());
    }

    #[test]
    fn narrow_width_is_a_domain_error() {
        let (mut eta, rhythm, grid, tr) = setup();
        let h = LeadSignal::new(grid, tr.z.clone(), LeadId::II).unwrap();
        eta.waves[1].b = 5e-4;
        assert!(matches!(
            grad_sim_distance_wrt_eta(&h, &eta, &rhythm, &tr),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn eta_gradient_vanishes_at_generating_params() {
        let (eta, rhythm, grid, tr) = setup();
        let h = LeadSignal::new(grid, tr.z.clone(), LeadId::II).unwrap();
        let g = grad_sim_distance_wrt_eta(&h, &eta, &rhythm, &tr).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn weights_bounds() {
        assert!(LossWeights::new(-0.1).is_err());
        assert!(LossWeights::new(1.1).is_err());
        assert!(LossWeights::new(f64::NAN).is_err());
        assert_eq!(LossWeights::new(1.0).unwrap().delta(), 1.0);
    }
}
