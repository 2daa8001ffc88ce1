//! Explicit integration of complex linear ODE systems.
//!
//! Classical fourth-order Runge-Kutta, either at a fixed maximum step or with
//! step-doubling error control. Every right-hand side in this crate is an
//! autonomous linear map, but nothing here relies on that.

use thiserror::Error;

use crate::scalar::{is_finite, Modulus, Real, C};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("state became non-finite at t = {t} ps")]
    NonFiniteState { t: f64 },
    #[error("adaptive step shrank below 1e-12 ps at t = {t} ps")]
    StepUnderflow { t: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

/// Start, end and strictly increasing output times, all in ps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T: Real> {
    t_start: T,
    t_end: T,
    sample_times: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_start: T, t_end: T, sample_times: Vec<T>) -> Result<Self, OdeError> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end < t_start {
            return Err(OdeError::InvalidGrid(format!("bad span [{t_start}, {t_end}]")));
        }
        for w in sample_times.windows(2) {
            if w[1] <= w[0] {
                return Err(OdeError::InvalidGrid("sample times must be strictly increasing".into()));
            }
        }
        if let (Some(&first), Some(&last)) = (sample_times.first(), sample_times.last()) {
            if first < t_start || last > t_end {
                return Err(OdeError::InvalidGrid(format!(
                    "sample times [{first}, {last}] outside [{t_start}, {t_end}]"
                )));
            }
        }
        Ok(Self { t_start, t_end, sample_times })
    }

    /// `n` equally spaced samples covering `[t_start, t_end]` inclusive.
    pub fn uniform(t_start: T, t_end: T, n: usize) -> Result<Self, OdeError> {
        let times = match n {
            0 => Vec::new(),
            1 => vec![t_end],
            _ => {
                let span = t_end - t_start;
                let denom = T::from_usize(n - 1).unwrap();
                let mut v: Vec<T> =
                    (0..n).map(|k| t_start + span * T::from_usize(k).unwrap() / denom).collect();
                v[n - 1] = t_end;
                v
            }
        };
        Self::new(t_start, t_end, times)
    }

    /// Grid whose span ends at the last sample time.
    pub fn from_samples(sample_times: Vec<T>) -> Result<Self, OdeError> {
        let end = sample_times.last().copied().unwrap_or_else(T::zero);
        Self::new(T::zero(), end, sample_times)
    }

    pub fn t_start(&self) -> T {
        self.t_start
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn sample_times(&self) -> &[T] {
        &self.sample_times
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    #[default]
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T: Real> {
    /// Maximum step in fixed mode, initial step in adaptive mode (ps).
    pub dt: T,
    pub mode: StepMode,
    pub rel_tol: T,
    pub abs_tol: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self { dt: T::lit(1e-3), mode: StepMode::Fixed, rel_tol: T::lit(1e-8), abs_tol: T::lit(1e-10) }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn fixed(dt: T) -> Self {
        Self { dt, ..Self::default() }
    }

    pub fn adaptive(rel_tol: T, abs_tol: T) -> Self {
        Self { mode: StepMode::Adaptive, rel_tol, abs_tol, ..Self::default() }
    }

    fn check(&self) -> Result<(), OdeError> {
        let ok = |x: T| x.is_finite() && x > T::zero();
        if !ok(self.dt) {
            return Err(OdeError::InvalidOptions(format!("dt must be positive, got {}", self.dt)));
        }
        if !ok(self.rel_tol) || !ok(self.abs_tol) {
            return Err(OdeError::InvalidOptions("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Right-hand side `dy/dt = f(t, y)` of a complex ODE system.
pub trait Rhs<T: Real> {
    fn eval(&self, t: T, y: &[C<T>], dy: &mut [C<T>]);
}

impl<T: Real, F> Rhs<T> for F
where
    F: Fn(T, &[C<T>], &mut [C<T>]),
{
    fn eval(&self, t: T, y: &[C<T>], dy: &mut [C<T>]) {
        self(t, y, dy)
    }
}

/// Scratch buffers for repeated RK4 steps on states of one size.
pub(crate) struct Rk4Workspace<T: Real> {
    k1: Vec<C<T>>,
    k2: Vec<C<T>>,
    k3: Vec<C<T>>,
    k4: Vec<C<T>>,
    tmp: Vec<C<T>>,
}

impl<T: Real> Rk4Workspace<T> {
    pub(crate) fn new(len: usize) -> Self {
        let z = vec![C::new(T::zero(), T::zero()); len];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// Writes the RK4 update of `y` into `out`.
    pub(crate) fn step<R: Rhs<T> + ?Sized>(&mut self, rhs: &R, y: &[C<T>], t: T, h: T, out: &mut [C<T>]) {
        let half = h * T::lit(0.5);
        rhs.eval(t, y, &mut self.k1);
        for ((o, &yi), &k) in self.tmp.iter_mut().zip(y).zip(&self.k1) {
            *o = yi + k * half;
        }
        rhs.eval(t + half, &self.tmp, &mut self.k2);
        for ((o, &yi), &k) in self.tmp.iter_mut().zip(y).zip(&self.k2) {
            *o = yi + k * half;
        }
        rhs.eval(t + half, &self.tmp, &mut self.k3);
        for ((o, &yi), &k) in self.tmp.iter_mut().zip(y).zip(&self.k3) {
            *o = yi + k * h;
        }
        rhs.eval(t + h, &self.tmp, &mut self.k4);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        for i in 0..y.len() {
            out[i] = y[i] + (self.k1[i] + (self.k2[i] + self.k3[i]) * two + self.k4[i]) * sixth;
        }
    }
}

fn check_finite<T: Real>(y: &[C<T>], t: T) -> Result<(), OdeError> {
    if y.iter().all(is_finite) {
        Ok(())
    } else {
        Err(OdeError::NonFiniteState { t: t.to_f64_lossy() })
    }
}

/// One classical RK4 step from `(t, state)` with step `dt`.
pub fn rk4_step<T: Real, R: Rhs<T> + ?Sized>(rhs: &R, state: &[C<T>], t: T, dt: T) -> Result<Vec<C<T>>, OdeError> {
    let mut ws = Rk4Workspace::new(state.len());
    let mut out = state.to_vec();
    ws.step(rhs, state, t, dt, &mut out);
    check_finite(&out, t + dt)?;
    Ok(out)
}

const MIN_STEP: f64 = 1e-12;

/// Integrates from `grid.t_start()` and returns the state at every sample time.
pub fn integrate<T: Real, R: Rhs<T> + ?Sized>(
    rhs: &R,
    state0: &[C<T>],
    grid: &TimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<Vec<(T, Vec<C<T>>)>, OdeError> {
    opts.check()?;
    check_finite(state0, grid.t_start())?;
    let mut driver = Driver {
        ws: Rk4Workspace::new(state0.len()),
        y: state0.to_vec(),
        scratch: state0.to_vec(),
        half: state0.to_vec(),
        t: grid.t_start(),
        h: opts.dt,
        opts: *opts,
    };
    let mut out = Vec::with_capacity(grid.sample_times().len());
    for &target in grid.sample_times() {
        match opts.mode {
            StepMode::Fixed => driver.advance_fixed(rhs, target)?,
            StepMode::Adaptive => driver.advance_adaptive(rhs, target)?,
        }
        out.push((target, driver.y.clone()));
    }
    Ok(out)
}

struct Driver<T: Real> {
    ws: Rk4Workspace<T>,
    y: Vec<C<T>>,
    scratch: Vec<C<T>>,
    half: Vec<C<T>>,
    t: T,
    /// Proposed step for the adaptive controller.
    h: T,
    opts: SolverOptions<T>,
}

impl<T: Real> Driver<T> {
    fn advance_fixed<R: Rhs<T> + ?Sized>(&mut self, rhs: &R, target: T) -> Result<(), OdeError> {
        let span = target - self.t;
        if span <= T::zero() {
            return Ok(());
        }
        // Equal substeps no longer than dt; the slack absorbs rounding in span / dt.
        let ratio = (span / self.opts.dt).to_f64_lossy();
        let n = ((ratio - 1e-9).ceil() as usize).max(1);
        let h = span / T::from_usize(n).unwrap();
        let t0 = self.t;
        for k in 0..n {
            let t = t0 + h * T::from_usize(k).unwrap();
            self.ws.step(rhs, &self.y, t, h, &mut self.scratch);
            std::mem::swap(&mut self.y, &mut self.scratch);
        }
        self.t = target;
        check_finite(&self.y, target)
    }

    fn advance_adaptive<R: Rhs<T> + ?Sized>(&mut self, rhs: &R, target: T) -> Result<(), OdeError> {
        let min_step = T::lit(MIN_STEP);
        let fifteen = T::lit(15.0);
        while self.t < target {
            let remaining = target - self.t;
            let landing = self.h >= remaining;
            let h = if landing { remaining } else { self.h };
            if h < min_step && !landing {
                return Err(OdeError::StepUnderflow { t: self.t.to_f64_lossy() });
            }
            let hh = h * T::lit(0.5);
            // one full step into scratch, two half steps into half
            self.ws.step(rhs, &self.y, self.t, h, &mut self.scratch);
            let mut mid = self.y.clone();
            self.ws.step(rhs, &self.y, self.t, hh, &mut mid);
            self.ws.step(rhs, &mid, self.t + hh, hh, &mut self.half);

            let mut err = T::zero();
            for (f, c) in self.scratch.iter().zip(&self.half) {
                let scale = self.opts.abs_tol + self.opts.rel_tol * f.cabs().max(c.cabs());
                let e = (*c - *f).cabs() / (scale * fifteen);
                if e > err {
                    err = e;
                }
            }
            if !err.is_finite() {
                return Err(OdeError::NonFiniteState { t: self.t.to_f64_lossy() });
            }
            if err <= T::one() {
                for (y, (c, f)) in self.y.iter_mut().zip(self.half.iter().zip(&self.scratch)) {
                    *y = *c + (*c - *f) / fifteen;
                }
                self.t = if landing { target } else { self.t + h };
            }
            let factor = if err == T::zero() {
                T::lit(5.0)
            } else {
                let f = T::lit(0.9) * err.powf(T::lit(-0.2));
                f.max(T::lit(0.2)).min(T::lit(5.0))
            };
            // A landing step is often artificially short; do not let it shrink the proposal.
            if !(landing && err <= T::one()) || h * factor > self.h {
                self.h = h * factor;
            }
            if self.h < min_step {
                return Err(OdeError::StepUnderflow { t: self.t.to_f64_lossy() });
            }
        }
        check_finite(&self.y, self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;

    type C64 = C<f64>;

    fn decay(_: f64, y: &[C64], dy: &mut [C64]) {
        dy[0] = -y[0];
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let zero = |_: f64, _: &[C64], dy: &mut [C64]| dy.iter_mut().for_each(|d| *d = C64::new(0.0, 0.0));
        let y = vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)];
        assert_eq!(rk4_step(&zero, &y, 0.0, 0.1).unwrap(), y);
    }

    #[test]
    fn exponential_decay_step() {
        let y = rk4_step(&decay, &[C64::new(1.0, 0.0)], 0.0, 0.1).unwrap();
        // Local error of RK4 is h^5 / 120 for this problem.
        assert!((y[0].re - (-0.1f64).exp()).abs() < 1e-7);
        assert!((y[0].re - 0.904_837_5).abs() < 1e-7);
    }

    #[test]
    fn rotation_preserves_modulus() {
        let rot = |_: f64, y: &[C64], dy: &mut [C64]| dy[0] = C64::new(0.0, 1.0) * y[0];
        let y = rk4_step(&rot, &[C64::new(1.0, 0.0)], 0.0, 0.01).unwrap();
        assert!((y[0].cabs() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let blowup = |_: f64, _: &[C64], dy: &mut [C64]| dy[0] = C64::new(f64::INFINITY, 0.0);
        assert!(matches!(rk4_step(&blowup, &[C64::new(1.0, 0.0)], 0.0, 0.1), Err(OdeError::NonFiniteState { .. })));
    }

    #[test]
    fn empty_sample_list_gives_empty_output() {
        let grid = TimeGrid::new(0.0, 1.0, vec![]).unwrap();
        let out = integrate(&decay, &[C64::new(1.0, 0.0)], &grid, &SolverOptions::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn sample_at_start_returns_initial_state() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let out = integrate(&decay, &[C64::new(1.0, 0.0)], &grid, &SolverOptions::default()).unwrap();
        assert_eq!(out[0].1[0], C64::new(1.0, 0.0));
        assert!((out[2].1[0].re - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 1.0, vec![0.5, 0.5]).is_err());
        assert!(TimeGrid::new(0.0, 1.0, vec![1.5]).is_err());
        assert!(TimeGrid::new(1.0, 0.0, vec![]).is_err());
        assert!(SolverOptions::fixed(0.0).check().is_err());
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let grid = TimeGrid::uniform(0.0, 5.0, 11).unwrap();
        let out = integrate(&decay, &[C64::new(1.0, 0.0)], &grid, &SolverOptions::adaptive(1e-10, 1e-12)).unwrap();
        for (t, y) in out {
            assert!((y[0].re - (-t).exp()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn adaptive_step_underflow_is_reported() {
        // A finite-time singularity at t = 1 forces the controller to shrink without bound.
        let blow = |_: f64, y: &[C64], dy: &mut [C64]| dy[0] = y[0] * y[0];
        let grid = TimeGrid::new(0.0, 2.0, vec![2.0]).unwrap();
        let err = integrate(&blow, &[C64::new(1.0, 0.0)], &grid, &SolverOptions::adaptive(1e-8, 1e-10)).unwrap_err();
        assert!(matches!(err, OdeError::StepUnderflow { .. } | OdeError::NonFiniteState { .. }), "{err:?}");
    }

    #[test]
    fn fixed_mode_is_linear() {
        let a = CMatrix::<f64>::from_fn(3, 3, |i, j| C64::new((i as f64) - (j as f64) * 0.3, 0.1 * (i + j) as f64));
        let rhs = move |_: f64, y: &[C64], dy: &mut [C64]| {
            for i in 0..3 {
                dy[i] = (0..3).map(|j| a[(i, j)] * y[j]).sum();
            }
        };
        let x = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.5, -0.5)];
        let y = [C64::new(-0.2, 0.3), C64::new(1.0, 1.0), C64::new(0.0, 0.7)];
        let (alpha, beta) = (C64::new(0.3, -1.1), C64::new(2.0, 0.5));
        let combo: Vec<C64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let opts = SolverOptions::default();
        let rx = integrate(&rhs, &x, &grid, &opts).unwrap();
        let ry = integrate(&rhs, &y, &grid, &opts).unwrap();
        let rc = integrate(&rhs, &combo, &grid, &opts).unwrap();
        for k in 0..grid.sample_times().len() {
            for i in 0..3 {
                let lin = alpha * rx[k].1[i] + beta * ry[k].1[i];
                assert!((lin - rc[k].1[i]).cabs() < 1e-10);
            }
        }
    }
}
