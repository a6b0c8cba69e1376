//! Fixed-step integration of the dynamical model on a uniform sampling grid.

use crate::edm::{eval_rhs, EdmParams, Rates, RhythmParams, State};
use crate::error::{Error, Result};

/// Magnitude beyond which a coordinate is considered to have blown up.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Uniform sampling grid with `len` samples at `fs` Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingGrid {
    fs: f64,
    len: usize,
    dt: f64,
}

impl SamplingGrid {
    pub fn new(fs: f64, len: usize) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling frequency must be > 0, got {fs}"
            )));
        }
        if len < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 samples, got {len}"
            )));
        }
        Ok(Self {
            fs,
            len,
            dt: 1.0 / fs,
        })
    }

    /// One cardiac cycle at heart rate `f`: `round(fs / f)` samples.
    pub fn one_beat(fs: f64, f: f64) -> Result<Self> {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "heart rate must be > 0, got {f}"
            )));
        }
        Self::new(fs, (fs / f).round() as usize)
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of sample `l`, `l * dt`.
    #[inline]
    pub fn time(&self, l: usize) -> f64 {
        l as f64 * self.dt
    }

    pub fn with_len(&self, len: usize) -> Result<Self> {
        Self::new(self.fs, len)
    }
}

/// Discrete `(x, y, z)` paths on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: SamplingGrid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, l: usize) -> State {
        State::new(self.x[l], self.y[l], self.z[l], self.grid.time(l))
    }

    fn with_capacity(grid: SamplingGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, s: &State) {
        self.x.push(s.x);
        self.y.push(s.y);
        self.z.push(s.z);
    }
}

fn check_init(init: &State) -> Result<()> {
    if !init.is_finite() {
        return Err(Error::InvalidArgument(
            "initial state must be finite".into(),
        ));
    }
    Ok(())
}

fn guard(s: &State, step: usize) -> Result<()> {
    let ok = |v: f64| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT;
    if ok(s.x) && ok(s.y) && ok(s.z) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Forward Euler: `u[l+1] = u[l] + f(u[l], t_l) dt` with `t_l = l dt`.
///
/// The initial state's `t` is ignored; sample `l` always sits at `l * dt`.
pub fn integrate_euler(
    eta: &EdmParams,
    rhythm: &RhythmParams,
    grid: SamplingGrid,
    init: State,
) -> Result<Trajectory> {
    check_init(&init)?;
    let dt = grid.dt();
    let mut traj = Trajectory::with_capacity(grid);
    let mut s = State { t: 0.0, ..init };
    traj.push(&s);
    for l in 0..grid.len() - 1 {
        s.t = grid.time(l);
        let r = eval_rhs(&s, eta, rhythm);
        s = State::new(
            s.x + r.fx * dt,
            s.y + r.fy * dt,
            s.z + r.fz * dt,
            grid.time(l + 1),
        );
        guard(&s, l + 1)?;
        traj.push(&s);
    }
    Ok(traj)
}

/// Classical four-stage Runge-Kutta on the same grid as [`integrate_euler`].
pub fn integrate_rk4(
    eta: &EdmParams,
    rhythm: &RhythmParams,
    grid: SamplingGrid,
    init: State,
) -> Result<Trajectory> {
    check_init(&init)?;
    let dt = grid.dt();
    let mut traj = Trajectory::with_capacity(grid);
    let mut s = State { t: 0.0, ..init };
    traj.push(&s);
    let shifted = |s: &State, k: &Rates, h: f64| {
        State::new(s.x + h * k.fx, s.y + h * k.fy, s.z + h * k.fz, s.t + h)
    };
    for l in 0..grid.len() - 1 {
        s.t = grid.time(l);
        let k1 = eval_rhs(&s, eta, rhythm);
        let k2 = eval_rhs(&shifted(&s, &k1, 0.5 * dt), eta, rhythm);
        let k3 = eval_rhs(&shifted(&s, &k2, 0.5 * dt), eta, rhythm);
        let k4 = eval_rhs(&shifted(&s, &k3, dt), eta, rhythm);
        let w = dt / 6.0;
        s = State::new(
            s.x + w * (k1.fx + 2.0 * k2.fx + 2.0 * k3.fx + k4.fx),
            s.y + w * (k1.fy + 2.0 * k2.fy + 2.0 * k3.fy + k4.fy),
            s.z + w * (k1.fz + 2.0 * k2.fz + 2.0 * k3.fz + k4.fz),
            grid.time(l + 1),
        );
        guard(&s, l + 1)?;
        traj.push(&s);
    }
    Ok(traj)
}

/// Euler `(x, y)` reference path for a rhythm on a grid, started at the
/// default phase. The `z` row is the silent-wave response and is usually
/// ignored by callers.
pub fn reference_trajectory(rhythm: &RhythmParams, grid: SamplingGrid) -> Result<Trajectory> {
    let mut silent = EdmParams::default();
    for w in &mut silent.waves {
        w.a = 0.0;
    }
    integrate_euler(&silent, rhythm, grid, State::default())
}
