//! Dormand–Prince 5(4) Runge–Kutta kernel shared by every flow in the crate.
//!
//! Fixed-step mode advances with the fifth-order weights and a constant step;
//! the embedded fourth-order weights only feed the error statistics. Adaptive
//! mode uses the same pair with a standard step-size controller. Between nodes
//! the solution is reconstructed by cubic Hermite interpolation on `(y, y')`.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

/// Right-hand side `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Fixed,
    Adaptive { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Fixed step, or the initial step in adaptive mode.
    pub step: f64,
    pub mode: StepMode,
    pub max_steps: usize,
    pub min_step: f64,
}

pub const DEFAULT_STEP: f64 = 1e-3;

impl Default for StepControl {
    fn default() -> Self {
        Self::fixed(DEFAULT_STEP)
    }
}

impl StepControl {
    pub fn fixed(step: f64) -> Self {
        Self {
            step,
            mode: StepMode::Fixed,
            max_steps: 500_000_000,
            min_step: 1e-14,
        }
    }

    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        Self {
            step: 1e-2,
            mode: StepMode::Adaptive { rtol, atol },
            max_steps: 500_000_000,
            min_step: 1e-14,
        }
    }

    pub fn halved(&self) -> Self {
        Self {
            step: self.step / 2.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Argument(format!("step must be positive, got {}", self.step)));
        }
        if let StepMode::Adaptive { rtol, atol } = self.mode {
            if !(rtol > 0.0 && atol >= 0.0) {
                return Err(Error::Argument("adaptive tolerances must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Largest local error estimate (max norm) over accepted steps.
    pub max_error_estimate: f64,
}

/// One accepted step, with enough data for Hermite interpolation.
#[derive(Debug)]
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

impl Step<'_> {
    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t0 <= self.t1 {
            (self.t0, self.t1)
        } else {
            (self.t1, self.t0)
        };
        t >= lo && t <= hi
    }

    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        hermite(self.t0, self.t1, self.y0, self.y1, self.f0, self.f1, t, out);
    }

    pub fn derivative(&self, t: f64, out: &mut [f64]) {
        hermite_derivative(self.t0, self.t1, self.y0, self.y1, self.f0, self.f1, t, out);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn hermite(t0: f64, t1: f64, y0: &[f64], y1: &[f64], f0: &[f64], f1: &[f64], t: f64, out: &mut [f64]) {
    let h = t1 - t0;
    if t == t0 {
        out.copy_from_slice(y0);
        return;
    }
    if t == t1 {
        out.copy_from_slice(y1);
        return;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn hermite_derivative(
    t0: f64,
    t1: f64,
    y0: &[f64],
    y1: &[f64],
    f0: &[f64],
    f1: &[f64],
    t: f64,
    out: &mut [f64],
) {
    if t == t0 {
        out.copy_from_slice(f0);
        return;
    }
    if t == t1 {
        out.copy_from_slice(f1);
        return;
    }
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let d00 = (6.0 * s2 - 6.0 * s) / h;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / h;
    let d11 = 3.0 * s2 - 2.0 * s;
    for i in 0..out.len() {
        out[i] = d00 * y0[i] + d10 * f0[i] + d01 * y1[i] + d11 * f1[i];
    }
}

/// Receives every accepted step. Returning `Break` stops the integration.
pub trait StepObserver {
    fn on_step(&mut self, step: &Step<'_>) -> ControlFlow<()>;
}

impl<F: FnMut(&Step<'_>) -> ControlFlow<()>> StepObserver for F {
    fn on_step(&mut self, step: &Step<'_>) -> ControlFlow<()> {
        self(step)
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// Time of the last accepted node.
    pub t: f64,
    pub y: Vec<f64>,
    pub stats: IntegratorStats,
    /// Set when integration stopped before the requested end.
    pub failure: Option<Error>,
    /// Set when an observer asked to stop.
    pub stopped_early: bool,
}

impl Outcome {
    pub fn completed(&self) -> bool {
        self.failure.is_none() && !self.stopped_early
    }
}

// Dormand–Prince tableau
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    err: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y1: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    /// Computes one step from `(t, y)` with `k[0] = f(t, y)` already set.
    /// Leaves `y1`, `k[6] = f(t+h, y1)` and the error vector.
    fn step<S: OdeSystem>(&mut self, sys: &S, t: f64, y: &[f64], h: f64) -> Result<()> {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, tmp, k2)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, tmp, k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, tmp, k4)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, tmp, k5)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.rhs(t + h, tmp, k6)?;
        for i in 0..n {
            self.y1[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        if self.y1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t,
                reason: "non-finite state".into(),
            });
        }
        sys.rhs(t + h, &self.y1, k7)?;
        for i in 0..n {
            self.err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        Ok(())
    }
}

/// Integrates `sys` from `(t0, y0)` to `t1` (either direction), handing every
/// accepted step to `observer`. Failures return the partial outcome with
/// `failure` set rather than an `Err`.
pub fn integrate<S, O>(sys: &S, t0: f64, y0: &[f64], t1: f64, ctrl: &StepControl, observer: &mut O) -> Result<Outcome>
where
    S: OdeSystem,
    O: StepObserver + ?Sized,
{
    ctrl.validate()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y0.len(),
        });
    }
    let mut ws = Workspace::new(n);
    let mut stats = IntegratorStats::default();
    let mut y = y0.to_vec();
    let mut f = vec![0.0; n];
    sys.rhs(t0, &y, &mut f)?;
    stats.rhs_evals += 1;

    let span = t1 - t0;
    let dir = if span >= 0.0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let outcome = |t: f64, y: Vec<f64>, stats, failure, stopped_early| Outcome {
        t,
        y,
        stats,
        failure,
        stopped_early,
    };
    if span == 0.0 {
        return Ok(outcome(t, y, stats, None, false));
    }

    match ctrl.mode {
        StepMode::Fixed => {
            let count = ((span.abs() / ctrl.step) - 1e-9).ceil().max(1.0) as usize;
            if count > ctrl.max_steps {
                return Err(Error::Argument(format!(
                    "{count} steps requested, limit is {}",
                    ctrl.max_steps
                )));
            }
            let h = span / count as f64;
            for idx in 0..count {
                let t_next = if idx + 1 == count { t1 } else { t0 + (idx + 1) as f64 * h };
                let h_step = t_next - t;
                ws.k[0].copy_from_slice(&f);
                if let Err(e) = ws.step(sys, t, &y, h_step) {
                    let failure = Error::Integration { t, reason: e.to_string() };
                    return Ok(outcome(t, y, stats, Some(failure), false));
                }
                stats.rhs_evals += 6;
                stats.steps += 1;
                let est = ws.err.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                stats.max_error_estimate = stats.max_error_estimate.max(est);
                let flow = observer.on_step(&Step {
                    t0: t,
                    t1: t_next,
                    y0: &y,
                    y1: &ws.y1,
                    f0: &f,
                    f1: &ws.k[6],
                });
                y.copy_from_slice(&ws.y1);
                f.copy_from_slice(&ws.k[6]);
                t = t_next;
                if flow.is_break() {
                    return Ok(outcome(t, y, stats, None, idx + 1 < count));
                }
            }
            Ok(outcome(t1, y, stats, None, false))
        }
        StepMode::Adaptive { rtol, atol } => {
            let mut h = ctrl.step.min(span.abs()) * dir;
            loop {
                if (t1 - t) * dir <= 0.0 {
                    return Ok(outcome(t, y, stats, None, false));
                }
                if stats.steps + stats.rejected >= ctrl.max_steps {
                    let failure = Error::Integration {
                        t,
                        reason: "step limit reached".into(),
                    };
                    return Ok(outcome(t, y, stats, Some(failure), false));
                }
                let last = (t + h - t1) * dir >= 0.0;
                let h_try = if last { t1 - t } else { h };
                ws.k[0].copy_from_slice(&f);
                let attempt = ws.step(sys, t, &y, h_try);
                stats.rhs_evals += 6;
                let err_norm = match attempt {
                    Ok(()) => ws
                        .err
                        .iter()
                        .zip(y.iter().zip(&ws.y1))
                        .map(|(e, (a, b))| e.abs() / (atol + rtol * a.abs().max(b.abs())))
                        .fold(0.0_f64, f64::max),
                    Err(_) => f64::INFINITY,
                };
                if err_norm <= 1.0 {
                    let t_next = if last { t1 } else { t + h_try };
                    stats.steps += 1;
                    let est = ws.err.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    stats.max_error_estimate = stats.max_error_estimate.max(est);
                    let flow = observer.on_step(&Step {
                        t0: t,
                        t1: t_next,
                        y0: &y,
                        y1: &ws.y1,
                        f0: &f,
                        f1: &ws.k[6],
                    });
                    y.copy_from_slice(&ws.y1);
                    f.copy_from_slice(&ws.k[6]);
                    t = t_next;
                    if flow.is_break() {
                        return Ok(outcome(t, y, stats, None, !last));
                    }
                    let factor = if err_norm == 0.0 {
                        5.0
                    } else {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    h = h_try * factor;
                } else {
                    stats.rejected += 1;
                    let factor = if err_norm.is_finite() {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9)
                    } else {
                        0.5
                    };
                    h = h_try * factor;
                    if h.abs() < ctrl.min_step {
                        let reason = match attempt {
                            Err(e) => e.to_string(),
                            Ok(()) => "step size underflow".into(),
                        };
                        return Ok(outcome(t, y, stats, Some(Error::Integration { t, reason }), false));
                    }
                }
            }
        }
    }
}

/// Samples the solution at prescribed times by interpolating inside each step.
/// Times must be monotone in the integration direction.
pub struct Sampler<'a> {
    times: &'a [f64],
    next: usize,
    pub values: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(times: &'a [f64]) -> Self {
        Self {
            times,
            next: 0,
            values: Vec::with_capacity(times.len()),
        }
    }

    /// Records samples that coincide with the initial point.
    pub fn start(&mut self, t0: f64, y0: &[f64]) {
        while self.next < self.times.len() && self.times[self.next] == t0 {
            self.values.push(y0.to_vec());
            self.next += 1;
        }
    }

    pub fn done(&self) -> bool {
        self.next >= self.times.len()
    }

    pub fn sampled_times(&self) -> &[f64] {
        &self.times[..self.next]
    }
}

impl StepObserver for Sampler<'_> {
    fn on_step(&mut self, step: &Step<'_>) -> ControlFlow<()> {
        while self.next < self.times.len() && step.contains(self.times[self.next]) {
            let mut out = vec![0.0; step.y0.len()];
            step.interpolate(self.times[self.next], &mut out);
            self.values.push(out);
            self.next += 1;
        }
        if self.done() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

/// Every accepted node with its derivative; interpolates anywhere in between.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl DenseSolution {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            values: Vec::new(),
            derivs: Vec::new(),
        }
    }

    /// Assembles from raw node data; times must be strictly increasing.
    pub fn from_nodes(dim: usize, times: Vec<f64>, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        if values.len() != times.len() * dim || derivs.len() != times.len() * dim {
            return Err(Error::Dimension {
                expected: times.len() * dim,
                got: values.len().min(derivs.len()),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("node times must be strictly increasing".into()));
        }
        Ok(Self {
            dim,
            times,
            values,
            derivs,
        })
    }

    pub fn push(&mut self, t: f64, y: &[f64], f: &[f64]) {
        self.times.push(t);
        self.values.extend_from_slice(y);
        self.derivs.extend_from_slice(f);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn node(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.dim..(i + 1) * self.dim;
        (&self.values[r.clone()], &self.derivs[r])
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.times.first().copied().unwrap_or(f64::NAN),
            self.times.last().copied().unwrap_or(f64::NAN),
        )
    }

    pub(crate) fn locate(&self, t: f64) -> Result<usize> {
        let (a, b) = self.span();
        if self.times.is_empty() || !(t >= a && t <= b) {
            return Err(Error::Interval { t, start: a, end: b });
        }
        let idx = self.times.partition_point(|&x| x <= t);
        Ok(idx.saturating_sub(1).min(self.times.len().saturating_sub(2)))
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let i = self.locate(t)?;
        if self.times.len() == 1 {
            out.copy_from_slice(self.node(0).0);
            return Ok(());
        }
        let (y0, f0) = self.node(i);
        let (y1, f1) = self.node(i + 1);
        hermite(self.times[i], self.times[i + 1], y0, y1, f0, f1, t, out);
        Ok(())
    }

    pub fn derivative(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let i = self.locate(t)?;
        if self.times.len() == 1 {
            out.copy_from_slice(self.node(0).1);
            return Ok(());
        }
        let (y0, f0) = self.node(i);
        let (y1, f1) = self.node(i + 1);
        hermite_derivative(self.times[i], self.times[i + 1], y0, y1, f0, f1, t, out);
        Ok(())
    }
}

/// Quintic Hermite basis on `s in [0, 1]`: weights of
/// `(y0, d f0, d^2 a0, d^2 a1, d f1, y1)` and their `s`-derivatives.
fn quintic_basis(s: f64) -> ([f64; 6], [f64; 6]) {
    let (s2, s3, s4, s5) = (s * s, s * s * s, s * s * s * s, s * s * s * s * s);
    let w = [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5),
        0.5 * (s3 - 2.0 * s4 + s5),
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
    ];
    let dw = [
        -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4),
        0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4),
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        30.0 * s2 - 60.0 * s3 + 30.0 * s4,
    ];
    (w, dw)
}

/// Node data `(y, y', y'')` at both ends of an interval.
pub(crate) struct QuinticNodes<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y: [&'a [f64]; 2],
    pub f: [&'a [f64]; 2],
    pub a: [&'a [f64]; 2],
}

impl QuinticNodes<'_> {
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let d = self.t1 - self.t0;
        let (w, _) = quintic_basis((t - self.t0) / d);
        for (k, o) in out.iter_mut().enumerate() {
            *o = w[0] * self.y[0][k]
                + d * (w[1] * self.f[0][k] + w[4] * self.f[1][k])
                + d * d * (w[2] * self.a[0][k] + w[3] * self.a[1][k])
                + w[5] * self.y[1][k];
        }
    }

    pub fn derivative(&self, t: f64, out: &mut [f64]) {
        let d = self.t1 - self.t0;
        let (_, dw) = quintic_basis((t - self.t0) / d);
        for (k, o) in out.iter_mut().enumerate() {
            *o = (dw[0] * self.y[0][k] + dw[5] * self.y[1][k]) / d
                + dw[1] * self.f[0][k]
                + dw[4] * self.f[1][k]
                + d * (dw[2] * self.a[0][k] + dw[3] * self.a[1][k]);
        }
    }
}

/// Records all nodes into a [`DenseSolution`].
pub struct Recorder {
    pub solution: DenseSolution,
}

impl Recorder {
    pub fn new(dim: usize, t0: f64, y0: &[f64], f0: &[f64]) -> Self {
        let mut solution = DenseSolution::new(dim);
        solution.push(t0, y0, f0);
        Self { solution }
    }
}

impl StepObserver for Recorder {
    fn on_step(&mut self, step: &Step<'_>) -> ControlFlow<()> {
        self.solution.push(step.t1, step.y1, step.f1);
        ControlFlow::Continue(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quintic_hermite_reproduces_quintics() {
        let y = |t: f64| 1.0 - 2.0 * t + 0.5 * t.powi(3) + 0.25 * t.powi(5);
        let f = |t: f64| -2.0 + 1.5 * t * t + 1.25 * t.powi(4);
        let a = |t: f64| 3.0 * t + 5.0 * t.powi(3);
        let (t0, t1) = (0.3, 1.1);
        let nodes = |t: f64| [y(t), f(t), a(t)];
        let (n0, n1) = (nodes(t0), nodes(t1));
        let q = QuinticNodes {
            t0,
            t1,
            y: [&n0[0..1], &n1[0..1]],
            f: [&n0[1..2], &n1[1..2]],
            a: [&n0[2..3], &n1[2..3]],
        };
        let mut out = [0.0];
        for k in 0..=10 {
            let t = t0 + (t1 - t0) * k as f64 / 10.0;
            q.eval(t, &mut out);
            assert!((out[0] - y(t)).abs() < 1e-14);
            q.derivative(t, &mut out);
            assert!((out[0] - f(t)).abs() < 1e-13);
        }
    }

    struct Harmonic;
    impl OdeSystem for Harmonic {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    fn end_state(ctrl: &StepControl, t1: f64) -> Vec<f64> {
        let mut noop = |_: &Step<'_>| ControlFlow::Continue(());
        integrate(&Harmonic, 0.0, &[0.0, 1.0], t1, ctrl, &mut noop).unwrap().y
    }

    #[test]
    fn harmonic_period_returns_home() {
        let y = end_state(&StepControl::default(), 2.0 * std::f64::consts::PI);
        assert!(y[0].abs() < 1e-8 && (y[1] - 1.0).abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn fifth_order_convergence() {
        let t1: f64 = 10.0;
        let exact = [t1.sin(), t1.cos()];
        let err = |h: f64| {
            let y = end_state(&StepControl::fixed(h), t1);
            (y[0] - exact[0]).abs().max((y[1] - exact[1]).abs())
        };
        let (e1, e2) = (err(0.2), err(0.1));
        let ratio = e1 / e2;
        assert!((24.0..40.0).contains(&ratio), "ratio {ratio}, errors {e1:e} {e2:e}");
    }

    #[test]
    fn backward_integration_reverses() {
        let ctrl = StepControl::default();
        let mut noop = |_: &Step<'_>| ControlFlow::Continue(());
        let fwd = integrate(&Harmonic, 0.0, &[0.3, -0.2], 7.0, &ctrl, &mut noop).unwrap();
        let back = integrate(&Harmonic, 7.0, &fwd.y, 0.0, &ctrl, &mut noop).unwrap();
        assert!((back.y[0] - 0.3).abs() < 1e-12 && (back.y[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn adaptive_mode_meets_tolerance() {
        let y = end_state(&StepControl::adaptive(1e-10, 1e-12), 20.0);
        assert!((y[0] - 20f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn sampler_hits_requested_times() {
        let times = [0.0, 0.123_456, 1.0, 3.3];
        let mut s = Sampler::new(&times);
        s.start(0.0, &[0.0, 1.0]);
        integrate(&Harmonic, 0.0, &[0.0, 1.0], 3.3, &StepControl::fixed(0.01), &mut s).unwrap();
        assert_eq!(s.values.len(), 4);
        for (t, v) in times.iter().zip(&s.values) {
            assert!((v[0] - t.sin()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn dense_solution_interpolates_with_c1_nodes() {
        let ctrl = StepControl::fixed(0.01);
        let mut f0 = vec![0.0; 2];
        Harmonic.rhs(0.0, &[0.0, 1.0], &mut f0).unwrap();
        let mut rec = Recorder::new(2, 0.0, &[0.0, 1.0], &f0);
        integrate(&Harmonic, 0.0, &[0.0, 1.0], 1.0, &ctrl, &mut rec).unwrap();
        let sol = rec.solution;
        let mut out = [0.0; 2];
        sol.eval(0.505, &mut out).unwrap();
        assert!((out[0] - 0.505f64.sin()).abs() < 1e-10);
        sol.derivative(0.505, &mut out).unwrap();
        assert!((out[0] - 0.505f64.cos()).abs() < 1e-7);
        let t = sol.times()[37];
        sol.eval(t, &mut out).unwrap();
        assert_eq!(&out[..], sol.node(37).0);
        assert!(matches!(sol.eval(1.5, &mut out), Err(Error::Interval { .. })));
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            if y[0] > 2.0 {
                return Err(Error::Domain {
                    observable: "y".into(),
                    q: y[0],
                    p: t,
                });
            }
            dy[0] = 1.0;
            Ok(())
        }
    }

    #[test]
    fn domain_exit_yields_partial_outcome() {
        let mut noop = |_: &Step<'_>| ControlFlow::Continue(());
        let out = integrate(&Blowup, 0.0, &[0.0], 5.0, &StepControl::fixed(0.1), &mut noop).unwrap();
        assert!(out.failure.is_some());
        assert!(out.t > 1.8 && out.t < 2.0 + 1e-9, "{}", out.t);
    }
}
