//! Adaptive Dormand–Prince 5(4) integrator shared by the Lindblad oracle and
//! the closed rate-equation models.
//!
//! Both layers run through the same stepper with the same tolerances, so any
//! disagreement between an oracle trajectory and a moment model reflects the
//! model and not the solver.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Environment variable that overrides the default relative tolerance.
pub const RTOL_ENV: &str = "PHONOX_RTOL";

pub const DEFAULT_RTOL: f64 = 1e-9;
pub const DEFAULT_ATOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepFailure {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("exceeded {max_steps} steps before t = {t:e}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("non-finite state encountered at t = {t:e}")]
    NonFinite { t: f64 },
    #[error("invalid integration request: {0}")]
    InvalidRequest(String),
}

/// Element type the integrator can work with.
pub trait OdeScalar: Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn magnitude(self) -> f64;
    fn finite(self) -> bool;
}

impl OdeScalar for f64 {
    #[inline]
    fn magnitude(self) -> f64 {
        self.abs()
    }
    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl OdeScalar for Complex64 {
    #[inline]
    fn magnitude(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Step-size controlled Dormand–Prince 5(4) scheme.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Upper bound on a single step, `None` for unbounded.
    pub max_step: Option<f64>,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_steps: 5_000_000,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            max_step: None,
        }
    }
}

impl Dopri5 {
    /// Default settings with the relative tolerance taken from
    /// `PHONOX_RTOL` when it is set to a positive number.
    pub fn from_env() -> Self {
        let mut solver = Self::default();
        if let Some(rtol) = std::env::var(RTOL_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0)
        {
            solver.rtol = rtol;
        }
        solver
    }

    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn with_atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }

    /// Integrates `dy/dt = rhs(t, y)` from `t0` and hands the state to
    /// `observe` at each of `times` (strictly increasing, all ≥ `t0`).
    ///
    /// Steps are clipped so that every observation time is hit exactly.
    pub fn integrate<T, F, O, E>(
        &self,
        mut rhs: F,
        t0: f64,
        y0: &[T],
        times: &[f64],
        mut observe: O,
    ) -> Result<(), E>
    where
        T: OdeScalar,
        F: FnMut(f64, &[T], &mut [T]),
        O: FnMut(usize, f64, &[T]) -> Result<(), E>,
        E: From<StepFailure>,
    {
        if !(self.rtol > 0.0 && self.atol >= 0.0) {
            return Err(StepFailure::InvalidRequest("tolerances must be positive".into()).into());
        }
        if times.iter().any(|t| !t.is_finite() || *t < t0) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(StepFailure::InvalidRequest(
                "observation times must be finite, increasing and not before t0".into(),
            )
            .into());
        }
        if y0.iter().any(|v| !v.finite()) {
            return Err(StepFailure::NonFinite { t: t0 }.into());
        }

        let n = y0.len();
        let mut y = y0.to_vec();
        let mut t = t0;
        let mut ws = Workspace::new(n);

        rhs(t, &y, &mut ws.k1);
        let mut h = self.initial_step(&mut rhs, t, &y, &mut ws, times.last().copied().unwrap_or(t0) - t0);
        let mut steps = 0usize;

        for (idx, &t_obs) in times.iter().enumerate() {
            while t < t_obs {
                if steps >= self.max_steps {
                    return Err(StepFailure::TooManySteps { t, max_steps: self.max_steps }.into());
                }
                let remaining = t_obs - t;
                let last = h >= remaining;
                let h_try = if last { remaining } else { h };
                if h_try <= f64::EPSILON * t.abs().max(1.0) * 4.0 && !last {
                    return Err(StepFailure::StepSizeUnderflow { t, h: h_try }.into());
                }

                let err = self.attempt(&mut rhs, t, h_try, &y, &mut ws);
                steps += 1;
                if !err.is_finite() {
                    // Treat as a rejected step with a sharp reduction.
                    h = h_try * self.min_factor;
                    if h < f64::EPSILON * t.abs().max(1.0) * 4.0 {
                        return Err(StepFailure::NonFinite { t }.into());
                    }
                    continue;
                }

                let factor = if err == 0.0 {
                    self.max_factor
                } else {
                    (self.safety * err.powf(-0.2)).clamp(self.min_factor, self.max_factor)
                };

                if err <= 1.0 {
                    t = if last { t_obs } else { t + h_try };
                    std::mem::swap(&mut y, &mut ws.y_new);
                    // FSAL: the last stage is f(t + h, y_new).
                    std::mem::swap(&mut ws.k1, &mut ws.k7);
                    // Keep the nominal step if only the remainder was clipped.
                    h = if last { h.max(h_try * factor) } else { h_try * factor };
                } else {
                    h = h_try * factor.min(1.0);
                }
                if let Some(max_step) = self.max_step {
                    h = h.min(max_step);
                }
            }
            observe(idx, t_obs, &y)?;
        }
        Ok(())
    }

    /// Convenience wrapper returning the state at each observation time.
    pub fn solve<T, F>(&self, rhs: F, t0: f64, y0: &[T], times: &[f64]) -> Result<Vec<Vec<T>>, StepFailure>
    where
        T: OdeScalar,
        F: FnMut(f64, &[T], &mut [T]),
    {
        let mut out = Vec::with_capacity(times.len());
        self.integrate(rhs, t0, y0, times, |_, _, y: &[T]| {
            out.push(y.to_vec());
            Ok::<(), StepFailure>(())
        })?;
        Ok(out)
    }

    fn initial_step<T, F>(&self, rhs: &mut F, t: f64, y: &[T], ws: &mut Workspace<T>, span: f64) -> f64
    where
        T: OdeScalar,
        F: FnMut(f64, &[T], &mut [T]),
    {
        // Hairer, Nørsett & Wanner starting-step heuristic.
        let scale = |v: T| self.atol + self.rtol * v.magnitude();
        let rms = |xs: &[T], ys: &[T]| -> f64 {
            if xs.is_empty() {
                return 0.0;
            }
            let s: f64 = xs.iter().zip(ys).map(|(x, y0)| (x.magnitude() / scale(*y0)).powi(2)).sum();
            (s / xs.len() as f64).sqrt()
        };
        let d0 = rms(y, y);
        let d1 = rms(&ws.k1, y);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        if span > 0.0 {
            h0 = h0.min(span);
        }
        for i in 0..y.len() {
            ws.y_new[i] = y[i] + ws.k1[i] * h0;
        }
        rhs(t + h0, &ws.y_new, &mut ws.k2);
        let d2 = {
            let diff: Vec<T> = ws.k2.iter().zip(&ws.k1).map(|(a, b)| *a - *b).collect();
            rms(&diff, y) / h0
        };
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        let mut h = (100.0 * h0).min(h1);
        if span > 0.0 {
            h = h.min(span);
        }
        if let Some(max_step) = self.max_step {
            h = h.min(max_step);
        }
        h
    }

    /// One trial step; leaves the candidate in `ws.y_new` and returns the
    /// scaled RMS error estimate.
    fn attempt<T, F>(&self, rhs: &mut F, t: f64, h: f64, y: &[T], ws: &mut Workspace<T>) -> f64
    where
        T: OdeScalar,
        F: FnMut(f64, &[T], &mut [T]),
    {
        let n = y.len();
        let Workspace { k1, k2, k3, k4, k5, k6, k7, tmp, y_new } = ws;

        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (h * A21);
        }
        rhs(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
        }
        rhs(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
        }
        rhs(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
        }
        rhs(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
        }
        rhs(t + h, tmp, k6);
        for i in 0..n {
            y_new[i] = y[i] + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
        }
        rhs(t + h, y_new, k7);

        let mut acc = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = self.atol + self.rtol * y[i].magnitude().max(y_new[i].magnitude());
            let r = e.magnitude() / sc;
            acc += r * r;
            if !y_new[i].finite() {
                return f64::NAN;
            }
        }
        if n == 0 {
            0.0
        } else {
            (acc / n as f64).sqrt()
        }
    }
}

struct Workspace<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    k5: Vec<T>,
    k6: Vec<T>,
    k7: Vec<T>,
    tmp: Vec<T>,
    y_new: Vec<T>,
}

impl<T: OdeScalar> Workspace<T> {
    fn new(n: usize) -> Self {
        let z = || vec![T::default(); n];
        Self { k1: z(), k2: z(), k3: z(), k4: z(), k5: z(), k6: z(), k7: z(), tmp: z(), y_new: z() }
    }
}
