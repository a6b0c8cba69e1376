//! Right-hand sides of the ECG dynamical model.
//!
//! The `(x, y)` pair circles an attracting unit limit cycle at angular rate
//! `omega = 2 pi f`. Each of the P, Q, R, S and T events is a Gaussian bump
//! in phase that pushes `z` up or down as the trajectory sweeps past its
//! center angle, while `z` relaxes toward a slow respiratory baseline.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Smallest admissible Gaussian width. Gradients in `b` blow up below it.
pub const MIN_WIDTH: f64 = 1e-3;

/// The five characteristic waves of one cardiac cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Wave {
    P,
    Q,
    R,
    S,
    T,
}

impl Wave {
    pub const ALL: [Wave; 5] = [Wave::P, Wave::Q, Wave::R, Wave::S, Wave::T];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Wave::P => "P",
            Wave::Q => "Q",
            Wave::R => "R",
            Wave::S => "S",
            Wave::T => "T",
        }
    }
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Wave {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Wave::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown wave `{s}`")))
    }
}

/// Center, amplitude and width of one Gaussian event on the limit cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    /// Event center in radians, in `[-pi, pi)`.
    pub theta: f64,
    /// Amplitude in model units.
    pub a: f64,
    /// Angular width in radians.
    pub b: f64,
}

impl WaveParams {
    pub const fn new(theta: f64, a: f64, b: f64) -> Self {
        Self { theta, a, b }
    }
}

/// Morphology parameters: one [`WaveParams`] for each of P, Q, R, S, T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmParams {
    pub waves: [WaveParams; 5],
}

/// Number of scalar morphology parameters (`theta`, `a`, `b` for five waves).
pub const N_PARAMS: usize = 15;

impl EdmParams {
    pub const fn new(waves: [WaveParams; 5]) -> Self {
        Self { waves }
    }

    pub fn wave(&self, w: Wave) -> &WaveParams {
        &self.waves[w.index()]
    }

    pub fn wave_mut(&mut self, w: Wave) -> &mut WaveParams {
        &mut self.waves[w.index()]
    }

    /// Flattens to `[theta_P, a_P, b_P, theta_Q, ..., b_T]`.
    pub fn to_vec(&self) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        for (i, w) in self.waves.iter().enumerate() {
            out[3 * i] = w.theta;
            out[3 * i + 1] = w.a;
            out[3 * i + 2] = w.b;
        }
        out
    }

    /// Inverse of [`EdmParams::to_vec`]; performs no validation.
    pub fn from_vec(v: &[f64; N_PARAMS]) -> Self {
        let mut waves = [WaveParams::new(0.0, 0.0, 1.0); 5];
        for (i, w) in waves.iter_mut().enumerate() {
            *w = WaveParams::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        }
        Self { waves }
    }

    /// Checks finiteness, positive widths, wrapped centers and the
    /// P < Q < R < S < T ordering of event centers.
    pub fn validate(&self) -> Result<()> {
        for w in Wave::ALL {
            let p = self.wave(w);
            if !(p.theta.is_finite() && p.a.is_finite() && p.b.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "wave {w}: non-finite parameter"
                )));
            }
            if p.b <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "wave {w}: width b must be > 0, got {}",
                    p.b
                )));
            }
            if !(-PI..PI).contains(&p.theta) {
                return Err(Error::InvalidArgument(format!(
                    "wave {w}: theta {} outside [-pi, pi)",
                    p.theta
                )));
            }
        }
        for pair in self.waves.windows(2) {
            if pair[0].theta >= pair[1].theta {
                return Err(Error::InvalidArgument(
                    "event centers must satisfy theta_P < theta_Q < theta_R < theta_S < theta_T"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

impl Default for EdmParams {
    /// Reference normal-sinus morphology.
    fn default() -> Self {
        Self::new([
            WaveParams::new(-PI / 3.0, 1.2, 0.25),
            WaveParams::new(-PI / 12.0, -5.0, 0.1),
            WaveParams::new(0.0, 30.0, 0.1),
            WaveParams::new(PI / 12.0, -7.5, 0.1),
            WaveParams::new(PI / 2.0, 0.75, 0.4),
        ])
    }
}

/// Heart rate and respiratory baseline wander.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhythmParams {
    /// Heart-rate frequency in Hz.
    pub f: f64,
    /// Baseline wander amplitude in model units.
    pub amplitude: f64,
    /// Respiratory frequency in Hz.
    pub f2: f64,
}

impl RhythmParams {
    pub fn new(f: f64, amplitude: f64, f2: f64) -> Result<Self> {
        let r = Self { f, amplitude, f2 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "heart rate f must be > 0, got {}",
                self.f
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "baseline amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if !(self.f2.is_finite() && self.f2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "respiratory f2 must be >= 0, got {}",
                self.f2
            )));
        }
        Ok(())
    }

    /// Angular velocity on the limit cycle, `2 pi f`.
    pub fn omega(&self) -> f64 {
        TWO_PI * self.f
    }

    /// Same rhythm with baseline wander switched off.
    pub fn without_wander(self) -> Self {
        Self {
            amplitude: 0.0,
            ..self
        }
    }
}

impl Default for RhythmParams {
    fn default() -> Self {
        Self {
            f: 1.0,
            amplitude: 0.005,
            f2: 0.25,
        }
    }
}

/// A point of the trajectory at time `t` (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
}

impl State {
    pub const fn new(x: f64, y: f64, z: f64, t: f64) -> Self {
        Self { x, y, z, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.t.is_finite()
    }
}

impl Default for State {
    /// Phase `-pi` on the limit cycle, so one revolution sweeps P through T.
    fn default() -> Self {
        Self::new(-1.0, 0.0, 0.0, 0.0)
    }
}

/// Time derivatives `(dx/dt, dy/dt, dz/dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

/// Wraps an angle into `[-pi, pi)`. Values already in range are returned
/// untouched, which makes the map idempotent in floating point.
pub fn wrap_angle(phi: f64) -> Result<f64> {
    if !phi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cannot wrap non-finite angle {phi}"
        )));
    }
    Ok(wrap(phi))
}

#[inline]
pub(crate) fn wrap(phi: f64) -> f64 {
    if (-PI..PI).contains(&phi) {
        return phi;
    }
    let mut r = (phi + PI).rem_euclid(TWO_PI) - PI;
    if r >= PI {
        r -= TWO_PI;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

/// Respiratory baseline `A sin(2 pi f2 t)`.
pub fn baseline(t: f64, rhythm: &RhythmParams) -> f64 {
    rhythm.amplitude * (TWO_PI * rhythm.f2 * t).sin()
}

/// Phase of `(x, y)` on the limit cycle.
#[inline]
pub fn phase(x: f64, y: f64) -> f64 {
    y.atan2(x)
}

/// Gaussian event forcing `-sum_i a_i dtheta_i exp(-dtheta_i^2 / (2 b_i^2))`
/// at phase `theta`.
#[inline]
pub fn wave_forcing(theta: f64, eta: &EdmParams) -> f64 {
    let mut acc = 0.0;
    for w in &eta.waves {
        let d = wrap(theta - w.theta);
        acc += w.a * d * (-d * d / (2.0 * w.b * w.b)).exp();
    }
    -acc
}

/// Partial derivatives of [`wave_forcing`] with respect to the flattened
/// parameters, in [`EdmParams::to_vec`] order. The wrap of `theta - theta_i`
/// is treated as locally constant.
pub fn wave_forcing_grad(theta: f64, eta: &EdmParams) -> [f64; N_PARAMS] {
    let mut g = [0.0; N_PARAMS];
    for (i, w) in eta.waves.iter().enumerate() {
        let d = wrap(theta - w.theta);
        let inv_b2 = 1.0 / (w.b * w.b);
        let e = (-0.5 * d * d * inv_b2).exp();
        g[3 * i] = w.a * e * (1.0 - d * d * inv_b2);
        g[3 * i + 1] = -d * e;
        g[3 * i + 2] = -w.a * d * e * d * d * inv_b2 / w.b;
    }
    g
}

/// `dz/dt` given a precomputed forcing term and baseline value.
#[inline]
pub fn fz_from_forcing(forcing: f64, z: f64, z0: f64) -> f64 {
    forcing - (z - z0)
}

/// Evaluates all three right-hand sides at `s`.
pub fn eval_rhs(s: &State, eta: &EdmParams, rhythm: &RhythmParams) -> Rates {
    let alpha = 1.0 - (s.x * s.x + s.y * s.y).sqrt();
    let omega = rhythm.omega();
    let fx = alpha * s.x - omega * s.y;
    let fy = alpha * s.y + omega * s.x;
    let forcing = wave_forcing(phase(s.x, s.y), eta);
    let fz = fz_from_forcing(forcing, s.z, baseline(s.t, rhythm));
    Rates { fx, fy, fz }
}
