//! Gradient descent on the simulator distance: parameter fitting, per-class
//! distribution estimation and direct refinement of waveforms.

use std::collections::HashMap;

use crate::edm::{wrap, EdmParams, RhythmParams, MIN_WIDTH, N_PARAMS};
use crate::error::{Error, Result};
use nalgebra::{SMatrix, SVector};

use crate::fidelity::{
    check_widths, distance_and_eta_grad, gauss_newton_metric, CombinedLoss, LeadSignal,
    LossWeights, Pinned,
};
use crate::integrator::{reference_trajectory, Trajectory};
use crate::leads::{Heartbeat, LeadId, LeadParams};
use crate::params::{ParamDistribution, ParamSet};
use crate::segmentation::AbnormalityClass;

/// Halvings allowed in one line search before the iterate is declared
/// stationary.
const MAX_BACKTRACKS: usize = 80;

/// Relative Levenberg damping added to the diagonal of the fitting metric.
const METRIC_DAMPING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Trial step of the first line search.
    pub step: f64,
    /// Step shrink factor in `(0, 1)`.
    pub backtrack: f64,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub tol: f64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "backtrack must lie in (0, 1), got {}",
                self.backtrack
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            step: 1e-6,
            backtrack: 0.5,
            tol: 1e-12,
        }
    }
}

/// Outcome of [`fit_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub eta: EdmParams,
    pub final_distance: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Outcome of one descent: the accepted loss sequence and how it ended.
#[derive(Debug, Clone, PartialEq)]
struct Descent {
    losses: Vec<f64>,
    converged: bool,
}

/// Backtracking descent over a flat vector.
///
/// `eval` returns the loss and a descent direction (the gradient, or a
/// preconditioned gradient), `project` maps a trial point back
/// onto the feasible set. A step is accepted on any strict decrease; after
/// acceptance the next trial step is doubled.
fn descend<F, P>(x: &mut Vec<f64>, cfg: &OptimConfig, mut eval: F, project: P) -> Result<Descent>
where
    F: FnMut(&[f64], bool) -> (f64, Vec<f64>),
    P: Fn(&mut [f64]),
{
    cfg.validate()?;
    project(x);
    let (mut f, mut g) = eval(x, true);
    if !f.is_finite() {
        return Err(Error::OptimDiverged(format!("initial loss is {f}")));
    }
    let mut losses = vec![f];
    if f == 0.0 || g.iter().all(|v| *v == 0.0) {
        return Ok(Descent {
            losses,
            converged: true,
        });
    }
    let mut step = cfg.step;
    let mut trial = x.clone();
    for _ in 0..cfg.max_iter {
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((c, xi), gi) in trial.iter_mut().zip(x.iter()).zip(&g) {
                *c = xi - t * gi;
            }
            project(&mut trial);
            let (fc, _) = eval(&trial, false);
            if fc.is_finite() && fc < f {
                accepted = Some(fc);
                break;
            }
            t *= cfg.backtrack;
        }
        let Some(f_new) = accepted else {
            // no decrease along the negative gradient at any tried scale
            return Ok(Descent {
                losses,
                converged: true,
            });
        };
        std::mem::swap(x, &mut trial);
        let rel = (f - f_new) / f;
        f = f_new;
        losses.push(f);
        if f == 0.0 || rel < cfg.tol {
            return Ok(Descent {
                losses,
                converged: true,
            });
        }
        let (_, g_new) = eval(x, true);
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimDiverged("non-finite gradient".into()));
        }
        g = g_new;
        step = 2.0 * t;
    }
    Ok(Descent {
        losses,
        converged: false,
    })
}

fn project_eta(v: &mut [f64]) {
    for w in 0..5 {
        v[3 * w] = wrap(v[3 * w]);
        v[3 * w + 2] = v[3 * w + 2].max(MIN_WIDTH);
    }
}

fn as_params(v: &[f64]) -> EdmParams {
    let mut a = [0.0; N_PARAMS];
    a.copy_from_slice(v);
    EdmParams::from_vec(&a)
}

/// Steepest descent direction of the distance under the damped Gauss-Newton
/// metric. Falls back to the raw gradient if the metric is not positive
/// definite.
fn preconditioned(g: &[f64; N_PARAMS], metric: &[[f64; N_PARAMS]; N_PARAMS]) -> Vec<f64> {
    let mut m = SMatrix::<f64, N_PARAMS, N_PARAMS>::from_fn(|i, j| metric[i][j]);
    let scale = (0..N_PARAMS).map(|i| m[(i, i)]).fold(0.0, f64::max);
    for i in 0..N_PARAMS {
        m[(i, i)] += METRIC_DAMPING * (m[(i, i)] + scale);
    }
    let rhs = SVector::<f64, N_PARAMS>::from_column_slice(g);
    match m.cholesky() {
        Some(c) => {
            let d = c.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                d.as_slice().to_vec()
            } else {
                g.to_vec()
            }
        }
        None => g.to_vec(),
    }
}

/// Fits the fifteen morphology parameters of one lead by minimizing its
/// simulator distance, starting from `eta0`.
///
/// Each iterate moves along the gradient preconditioned by the Gauss-Newton
/// metric of the Gaussian wave sum, with the same backtracking line search
/// and acceptance rule as [`refine_waveform`].
pub fn fit_params(
    h: &LeadSignal,
    eta0: &EdmParams,
    rhythm: &RhythmParams,
    reference: &Trajectory,
    cfg: &OptimConfig,
) -> Result<FitResult> {
    if h.grid.len() != reference.grid.len() || h.grid.fs() != reference.grid.fs() {
        return Err(Error::Dimension("signal and reference grids differ".into()));
    }
    check_widths(eta0)?;
    let pin = Pinned::new(reference, rhythm);
    let samples = &h.samples;
    let mut x = eta0.to_vec().to_vec();
    let descent = descend(
        &mut x,
        cfg,
        |v, want_grad| {
            let eta = as_params(v);
            let (d, g) = distance_and_eta_grad(&pin, samples, &eta);
            if !want_grad {
                return (d, Vec::new());
            }
            (d, preconditioned(&g, &gauss_newton_metric(&pin, &eta)))
        },
        project_eta,
    )?;
    Ok(FitResult {
        eta: as_params(&x),
        final_distance: *descent.losses.last().expect("at least the initial loss"),
        iterations: descent.losses.len() - 1,
        converged: descent.converged,
    })
}

/// Fits every beat from `start.eta` and summarizes the converged fits by
/// their per-parameter mean and population standard deviation. Each beat is
/// referenced against the Euler `(x, y)` path of `rhythm` on its own grid.
pub fn estimate_distribution(
    beats: &[LeadSignal],
    class: &AbnormalityClass,
    lead: LeadId,
    start: &LeadParams,
    rhythm: &RhythmParams,
    cfg: &OptimConfig,
) -> Result<ParamDistribution> {
    if beats.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 beats, got {}",
            beats.len()
        )));
    }
    let mut references: HashMap<(u64, usize), Trajectory> = HashMap::new();
    let mut fits = Vec::new();
    for beat in beats {
        let key = (beat.grid.fs().to_bits(), beat.grid.len());
        if let std::collections::hash_map::Entry::Vacant(e) = references.entry(key) {
            e.insert(reference_trajectory(rhythm, beat.grid)?);
        }
        let fit = fit_params(beat, &start.eta, rhythm, &references[&key], cfg)?;
        if fit.converged {
            fits.push(fit.eta);
        }
    }
    if fits.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} of {} fits converged",
            fits.len(),
            beats.len()
        )));
    }
    distribution_from_fits(&fits, class, lead, start.gain, rhythm)
}

/// Per-parameter mean and population standard deviation of fitted
/// parameter sets. A single fit yields a zero-variance distribution.
pub fn distribution_from_fits(
    fits: &[EdmParams],
    class: &AbnormalityClass,
    lead: LeadId,
    gain: f64,
    rhythm: &RhythmParams,
) -> Result<ParamDistribution> {
    if fits.is_empty() {
        return Err(Error::InsufficientData("no fitted parameter sets".into()));
    }
    let vecs: Vec<[f64; N_PARAMS]> = fits.iter().map(EdmParams::to_vec).collect();
    let n = vecs.len() as f64;
    let mut mean = [0.0; N_PARAMS];
    let mut std = [0.0; N_PARAMS];
    for k in 0..N_PARAMS {
        mean[k] = vecs.iter().map(|f| f[k]).sum::<f64>() / n;
        std[k] = (vecs.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let dist = ParamDistribution {
        class: class.clone(),
        lead,
        mean,
        std,
        gain_mean: gain,
        gain_std: 0.0,
        rhythm: *rhythm,
    };
    dist.validate()?;
    Ok(dist)
}

/// Outcome of [`refine_waveform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub beat: Heartbeat,
    /// Combined loss after each accepted step, starting with the initial value.
    pub losses: Vec<f64>,
    pub converged: bool,
}

impl Refinement {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("non-empty trace")
    }
}

fn rows_from_free(free: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; len]; 12];
    for (k, id) in LeadId::FREE.iter().enumerate() {
        rows[id.index()].copy_from_slice(&free[k * len..(k + 1) * len]);
    }
    for l in 0..len {
        let d = crate::leads::derive_limb(rows[LeadId::I.index()][l], rows[LeadId::II.index()][l]);
        for (id, v) in LeadId::DERIVED.iter().zip(d) {
            rows[id.index()][l] = v;
        }
    }
    rows
}

/// Descends the combined Euler loss directly over the samples of the eight
/// free leads of `beat0`, re-deriving III, aVR, aVL and aVF after every step.
///
/// Parameter draws are fixed once from `seed`, so the objective is a
/// deterministic quadratic in the waveform.
pub fn refine_waveform(
    beat0: &Heartbeat,
    dists: &ParamSet,
    weights: LossWeights,
    cfg: &OptimConfig,
    n_samples: usize,
    seed: u64,
) -> Result<Refinement> {
    let class = beat0.label.clone().unwrap_or_else(AbnormalityClass::normal);
    let loss = CombinedLoss::new(dists, &class, beat0.grid(), weights, n_samples, seed)?;
    let len = beat0.len();
    let mut x: Vec<f64> = LeadId::FREE
        .iter()
        .flat_map(|id| beat0.lead(*id).iter().copied())
        .collect();
    let descent = descend(
        &mut x,
        cfg,
        |v, want_grad| {
            let rows = rows_from_free(v, len);
            let total = loss
                .parts_of_rows(&rows)
                .map(|p| p.total)
                .unwrap_or(f64::NAN);
            if !want_grad {
                return (total, Vec::new());
            }
            let g = loss
                .grad_free(&rows)
                .map(|g| g.concat())
                .unwrap_or_default();
            (total, g)
        },
        |_| {},
    )?;
    let beat = Heartbeat::new(beat0.grid(), rows_from_free(&x, len), beat0.label.clone())?;
    Ok(Refinement {
        beat,
        losses: descent.losses,
        converged: descent.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::State;
    use crate::integrator::{integrate_euler, SamplingGrid};

    #[test]
    fn config_validation() {
        assert!(OptimConfig {
            max_iter: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            step: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            backtrack: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        OptimConfig::default().validate().unwrap();
    }

    #[test]
    fn descend_minimizes_a_quadratic_monotonically() {
        let cfg = OptimConfig {
            max_iter: 500,
            step: 1.0,
            backtrack: 0.5,
            tol: 1e-14,
        };
        let mut x = vec![3.0, -2.0];
        let d = descend(
            &mut x,
            &cfg,
            |v, _| {
                (
                    v[0] * v[0] + 10.0 * v[1] * v[1],
                    vec![2.0 * v[0], 20.0 * v[1]],
                )
            },
            |_| {},
        )
        .unwrap();
        assert!(x[0].abs() < 1e-5 && x[1].abs() < 1e-5, "{x:?}");
        assert!(d.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn starting_at_the_truth_converges_immediately() {
        let eta = EdmParams::default();
        let rhythm = RhythmParams::default();
        let grid = SamplingGrid::one_beat(500.0, 1.0).unwrap();
        let tr = integrate_euler(&eta, &rhythm, grid, State::default()).unwrap();
        let h = LeadSignal::new(grid, tr.z.clone(), LeadId::II).unwrap();
        let fit = fit_params(&h, &eta, &rhythm, &tr, &OptimConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 1);
        assert!(fit.final_distance <= 1e-12);
    }

    #[test]
    fn too_few_beats() {
        let rhythm = RhythmParams::default();
        let start = LeadParams::default();
        let cfg = OptimConfig::default();
        let class = AbnormalityClass::normal();
        let err =
            estimate_distribution(&[], &class, LeadId::II, &start, &rhythm, &cfg).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn projection_keeps_widths_and_wraps() {
        let mut v = EdmParams::default().to_vec();
        v[2] = -1.0;
        v[3] = 4.0;
        project_eta(&mut v);
        assert_eq!(v[2], MIN_WIDTH);
        assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&v[3]));
    }
}
