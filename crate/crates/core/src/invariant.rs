//! Dynamical invariants `I(x, t) = g(t)·O(x)`.
//!
//! The coefficients obey the linear system `g' = F(t) g` with
//! `F[k][j] = sum_i h_i(t) gamma[i][j][k]`, integrated once on the shared
//! Runge–Kutta kernel and stored with node derivatives for Hermite dense
//! output.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::algebra::{LieAlgebra, PhaseState, StructureConstants};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::integrator::{self, DenseSolution, IntegratorStats, OdeSystem, QuinticNodes, Recorder, StepControl};

type DriveFn = dyn Fn(f64) -> (f64, f64) + Send + Sync;

/// A scalar function of time with its derivative.
#[derive(Clone)]
pub struct Drive {
    label: String,
    f: Arc<DriveFn>,
}

impl fmt::Debug for Drive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Drive({})", self.label)
    }
}

impl Drive {
    /// `f` returns `(value, d/dt value)`.
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), move |_| (c, 0.0))
    }

    pub fn from_expr(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        if expr.uses(Var::Q) || expr.uses(Var::P) {
            return Err(Error::Argument(format!(
                "time coefficient `{source}` may only depend on t"
            )));
        }
        Ok(Self::new(expr.source().to_string(), move |t| {
            let j = expr.eval(0.0, 0.0, t);
            (j.value, j.grad[2])
        }))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.f.clone();
        Self::new(format!("{c}*({})", self.label), move |t| {
            let (v, d) = f(t);
            (c * v, c * d)
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, t: f64) -> (f64, f64) {
        (self.f)(t)
    }
}

/// `cos(pi t / 2)`.
pub fn omega_periodic() -> Drive {
    use std::f64::consts::FRAC_PI_2;
    Drive::new("cos(pi*t/2)", |t| {
        let (s, c) = (FRAC_PI_2 * t).sin_cos();
        (c, -FRAC_PI_2 * s)
    })
}

/// `1 + cos(t) / 10`.
pub fn omega_resonant() -> Drive {
    Drive::new("1+cos(t)/10", |t| {
        let (s, c) = t.sin_cos();
        (1.0 + 0.1 * c, -0.1 * s)
    })
}

/// `[cos(e t / 2) + cos(pi t / 2)] / 2`, two incommensurate frequencies.
pub fn omega_quasiperiodic() -> Drive {
    use std::f64::consts::{E, FRAC_PI_2};
    Drive::new("(cos(e*t/2)+cos(pi*t/2))/2", |t| {
        let (s1, c1) = (0.5 * E * t).sin_cos();
        let (s2, c2) = (FRAC_PI_2 * t).sin_cos();
        (0.5 * (c1 + c2), -0.25 * (E * s1 + std::f64::consts::PI * s2))
    })
}

/// The vector `h(t)` multiplying the algebra basis.
#[derive(Debug, Clone)]
pub struct TimeCoefficients {
    label: String,
    components: Vec<Drive>,
    interval: (f64, f64),
}

impl TimeCoefficients {
    pub fn new(label: impl Into<String>, components: Vec<Drive>, interval: (f64, f64)) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Argument("time coefficients need at least one component".into()));
        }
        if !(interval.0 < interval.1) {
            return Err(Error::Argument(format!(
                "empty continuity interval [{}, {}]",
                interval.0, interval.1
            )));
        }
        Ok(Self {
            label: label.into(),
            components,
            interval,
        })
    }

    /// Unbounded interval.
    pub fn everywhere(label: impl Into<String>, components: Vec<Drive>) -> Self {
        Self::new(label, components, (f64::NEG_INFINITY, f64::INFINITY)).expect("nonempty components")
    }

    pub fn constant(values: &[f64]) -> Self {
        Self::everywhere("constant", values.iter().map(|&v| Drive::constant(v)).collect())
    }

    pub fn from_exprs(sources: &[&str], interval: (f64, f64)) -> Result<Self> {
        let components = sources.iter().map(|s| Drive::from_expr(s)).collect::<Result<Vec<_>>>()?;
        Self::new("custom", components, interval)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn components(&self) -> &[Drive] {
        &self.components
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if t >= self.interval.0 && t <= self.interval.1 {
            Ok(())
        } else {
            Err(Error::Interval {
                t,
                start: self.interval.0,
                end: self.interval.1,
            })
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check(t)?;
        for (c, o) in self.components.iter().zip(out.iter_mut()) {
            *o = c.eval(t).0;
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn derivative_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check(t)?;
        for (c, o) in self.components.iter().zip(out.iter_mut()) {
            *o = c.eval(t).1;
        }
        Ok(())
    }
}

/// `F[k][j] = sum_i h[i] gamma[i][j][k]`.
pub fn coefficient_matrix_from(constants: &StructureConstants, h: &[f64]) -> DMatrix<f64> {
    let m = constants.dim();
    DMatrix::from_fn(m, m, |k, j| (0..m).map(|i| h[i] * constants.get(i, j, k)).sum())
}

pub fn coefficient_matrix(alg: &LieAlgebra, h: &TimeCoefficients, t: f64) -> Result<DMatrix<f64>> {
    if h.dim() != alg.dim() {
        return Err(Error::Dimension {
            expected: alg.dim(),
            got: h.dim(),
        });
    }
    let hv = h.eval(t)?;
    Ok(coefficient_matrix_from(alg.constants(), &hv))
}

/// Indices whose coefficient never feeds back into the others
/// (`gamma[i][k][*] = 0` for all `i`), e.g. the constant observable.
pub fn passive_coefficients(constants: &StructureConstants) -> Vec<usize> {
    let m = constants.dim();
    (0..m)
        .filter(|&k| (0..m).all(|i| (0..m).all(|l| constants.get(i, k, l) == 0.0)))
        .collect()
}

struct CoefficientOde<'a> {
    entries: Vec<(usize, usize, usize, f64)>,
    h: &'a TimeCoefficients,
    scratch: RefCell<Vec<f64>>,
}

impl<'a> CoefficientOde<'a> {
    fn new(constants: &StructureConstants, h: &'a TimeCoefficients) -> Self {
        let m = constants.dim();
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let v = constants.get(i, j, k);
                    if v != 0.0 {
                        entries.push((i, j, k, v));
                    }
                }
            }
        }
        Self {
            entries,
            h,
            scratch: RefCell::new(vec![0.0; m]),
        }
    }
}

impl CoefficientOde<'_> {
    /// `g'' = F'(t) g + F(t) g'`.
    fn second(&self, t: f64, g: &[f64], dg: &[f64], out: &mut [f64]) -> Result<()> {
        let m = g.len();
        let mut hv = vec![0.0; m];
        let mut dh = vec![0.0; m];
        self.h.eval_into(t, &mut hv)?;
        self.h.derivative_into(t, &mut dh)?;
        out.fill(0.0);
        for &(i, j, k, v) in &self.entries {
            out[k] += v * (dh[i] * g[j] + hv[i] * dg[j]);
        }
        Ok(())
    }
}

impl OdeSystem for CoefficientOde<'_> {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn rhs(&self, t: f64, g: &[f64], dg: &mut [f64]) -> Result<()> {
        let mut hv = self.scratch.borrow_mut();
        self.h.eval_into(t, &mut hv)?;
        dg.fill(0.0);
        for &(i, j, k, v) in &self.entries {
            dg[k] += hv[i] * v * g[j];
        }
        Ok(())
    }
}

/// Threshold above which a growing coefficient vector is reported.
pub const GROWTH_WARNING: f64 = 1e12;

/// Numerically integrated `g(t)` with node derivatives. Paths built here
/// also carry `g''` at the nodes and interpolate with quintic Hermite;
/// paths read from CSV fall back to cubic Hermite on `(g, g')`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    algebra_name: String,
    g0: Vec<f64>,
    solution: DenseSolution,
    curvature: Option<Vec<f64>>,
    stats: IntegratorStats,
}

impl CoefficientPath {
    pub fn algebra_name(&self) -> &str {
        &self.algebra_name
    }

    pub fn dim(&self) -> usize {
        self.solution.dim()
    }

    pub fn g0(&self) -> &[f64] {
        &self.g0
    }

    pub fn grid(&self) -> &[f64] {
        self.solution.times()
    }

    pub fn span(&self) -> (f64, f64) {
        self.solution.span()
    }

    pub fn stats(&self) -> IntegratorStats {
        self.stats
    }

    /// `(g(t_n), g'(t_n))`.
    pub fn node(&self, n: usize) -> (&[f64], &[f64]) {
        self.solution.node(n)
    }

    fn quintic(&self, t: f64) -> Result<Option<QuinticNodes<'_>>> {
        let Some(a) = &self.curvature else {
            return Ok(None);
        };
        let i = self.solution.locate(t)?;
        if self.solution.len() < 2 {
            return Ok(None);
        }
        let m = self.dim();
        let times = self.solution.times();
        let (y0, f0) = self.solution.node(i);
        let (y1, f1) = self.solution.node(i + 1);
        Ok(Some(QuinticNodes {
            t0: times[i],
            t1: times[i + 1],
            y: [y0, y1],
            f: [f0, f1],
            a: [&a[i * m..(i + 1) * m], &a[(i + 1) * m..(i + 2) * m]],
        }))
    }

    /// Whether node second derivatives are available.
    pub fn is_quintic(&self) -> bool {
        self.curvature.is_some()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self.quintic(t)? {
            Some(q) => {
                q.eval(t, out);
                Ok(())
            }
            None => self.solution.eval(t, out),
        }
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Derivative of the Hermite interpolant.
    pub fn derivative_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self.quintic(t)? {
            Some(q) => {
                q.derivative(t, out);
                Ok(())
            }
            None => self.solution.derivative(t, out),
        }
    }

    pub fn end_value(&self) -> &[f64] {
        self.node(self.grid().len() - 1).0
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid().len())
            .map(|n| self.node(n).0.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn growth_warning(&self) -> Option<String> {
        let norm = self.max_norm();
        (norm > GROWTH_WARNING).then(|| format!("|g(t)| reached {norm:e}, above {GROWTH_WARNING:e}"))
    }

    /// `t,g1..gM,dg1..dgM`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let m = self.dim();
        let mut out = String::from("t");
        for k in 1..=m {
            out.push_str(&format!(",g{k}"));
        }
        for k in 1..=m {
            out.push_str(&format!(",dg{k}"));
        }
        out.push('\n');
        for (n, t) in self.grid().iter().enumerate() {
            let (g, dg) = self.node(n);
            out.push_str(&crate::csv::fmt(*t));
            for v in g.iter().chain(dg) {
                out.push(',');
                out.push_str(&crate::csv::fmt(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(algebra_name: &str, text: &str) -> Result<Self> {
        let (header, rows) = crate::csv::parse(text)?;
        if header.len() < 3 || header[0] != "t" || (header.len() - 1) % 2 != 0 {
            return Err(Error::Csv {
                line: 1,
                message: "expected header t,g1..gM,dg1..dgM".into(),
            });
        }
        let m = (header.len() - 1) / 2;
        let mut times = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * m);
        let mut derivs = Vec::with_capacity(rows.len() * m);
        for row in &rows {
            times.push(row[0]);
            values.extend_from_slice(&row[1..=m]);
            derivs.extend_from_slice(&row[m + 1..]);
        }
        let solution = DenseSolution::from_nodes(m, times, values, derivs)?;
        if solution.is_empty() {
            return Err(Error::Csv {
                line: 2,
                message: "no rows".into(),
            });
        }
        Ok(Self {
            algebra_name: algebra_name.to_string(),
            g0: solution.node(0).0.to_vec(),
            solution,
            curvature: None,
            stats: IntegratorStats::default(),
        })
    }
}

/// Integrates `g' = F(t) g` from `g(t0) = g0` over `t_span`. This is the one
/// code path used by both the classical and the quantum invariants.
pub fn build_coefficient_path(
    algebra_name: &str,
    constants: &StructureConstants,
    h: &TimeCoefficients,
    g0: &[f64],
    t_span: (f64, f64),
    ctrl: &StepControl,
) -> Result<CoefficientPath> {
    let m = constants.dim();
    if h.dim() != m {
        return Err(Error::Dimension { expected: m, got: h.dim() });
    }
    if g0.len() != m {
        return Err(Error::Dimension { expected: m, got: g0.len() });
    }
    if g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("initial coefficients must be finite".into()));
    }
    if !(t_span.1 > t_span.0) {
        return Err(Error::Argument(format!(
            "time span [{}, {}] must be increasing",
            t_span.0, t_span.1
        )));
    }
    h.check(t_span.0)?;
    h.check(t_span.1)?;
    let ode = CoefficientOde::new(constants, h);
    let mut f0 = vec![0.0; m];
    ode.rhs(t_span.0, g0, &mut f0)?;
    let mut rec = Recorder::new(m, t_span.0, g0, &f0);
    let outcome = integrator::integrate(&ode, t_span.0, g0, t_span.1, ctrl, &mut rec)?;
    if let Some(failure) = outcome.failure {
        return Err(Error::Integration {
            t: outcome.t,
            reason: format!("coefficient ODE failed; last good time {}: {failure}", outcome.t),
        });
    }
    let solution = rec.solution;
    let mut curvature = vec![0.0; solution.len() * m];
    for (n, &t) in solution.times().iter().enumerate() {
        let (g, dg) = solution.node(n);
        ode.second(t, g, dg, &mut curvature[n * m..(n + 1) * m])?;
    }
    Ok(CoefficientPath {
        algebra_name: algebra_name.to_string(),
        g0: g0.to_vec(),
        solution,
        curvature: Some(curvature),
        stats: outcome.stats,
    })
}

pub fn build_invariant(
    alg: &LieAlgebra,
    h: &TimeCoefficients,
    g0: &[f64],
    t_span: (f64, f64),
    ctrl: &StepControl,
) -> Result<CoefficientPath> {
    build_coefficient_path(alg.name(), alg.constants(), h, g0, t_span, ctrl)
}

/// `g0 = h(t0)`: the instantaneous Hamiltonian, which is the energy in the
/// autonomous case.
pub fn default_g0(h: &TimeCoefficients, t0: f64) -> Result<Vec<f64>> {
    h.eval(t0)
}

/// Value and partial derivatives of `I(x, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InvariantEvaluation {
    pub value: f64,
    pub dq: f64,
    pub dp: f64,
    /// `g'(theta)·O(x)` from the Hermite derivative.
    pub dtheta: f64,
}

#[derive(Debug, Clone)]
pub struct InvariantFunction {
    algebra: Arc<LieAlgebra>,
    path: Arc<CoefficientPath>,
}

impl InvariantFunction {
    pub fn new(algebra: Arc<LieAlgebra>, path: Arc<CoefficientPath>) -> Result<Self> {
        if algebra.dim() != path.dim() {
            return Err(Error::Dimension {
                expected: algebra.dim(),
                got: path.dim(),
            });
        }
        Ok(Self { algebra, path })
    }

    pub fn algebra(&self) -> &LieAlgebra {
        &self.algebra
    }

    pub fn path(&self) -> &CoefficientPath {
        &self.path
    }

    pub fn evaluate(&self, x: PhaseState, t: f64) -> Result<f64> {
        let g = self.path.eval(t)?;
        Ok(self.algebra.combine(&g, x)?.value)
    }

    /// `sum_k |g_k(t) O_k(x)|`, the size of the terms that cancel to give `I`.
    pub fn magnitude(&self, x: PhaseState, t: f64) -> Result<f64> {
        let g = self.path.eval(t)?;
        self.algebra.check_domain(x)?;
        Ok(g.iter()
            .zip(self.algebra.basis())
            .map(|(c, o)| (c * o.eval_unchecked(x).value).abs())
            .sum())
    }

    pub fn evaluate_full(&self, x: PhaseState, t: f64) -> Result<InvariantEvaluation> {
        let m = self.algebra.dim();
        let mut g = vec![0.0; m];
        let mut dg = vec![0.0; m];
        self.path.eval_into(t, &mut g)?;
        self.path.derivative_into(t, &mut dg)?;
        let e = self.algebra.combine(&g, x)?;
        let d = self.algebra.combine(&dg, x)?;
        Ok(InvariantEvaluation {
            value: e.value,
            dq: e.dq,
            dp: e.dp,
            dtheta: d.value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReport {
    pub initial: f64,
    /// `max_t |I(x(t), t) - I(x(t0), t0)|`.
    pub max_abs: f64,
    /// `max_abs / |I0|`, or `max_abs` when `I0 = 0`.
    pub relative: f64,
    /// Drift over `max(|I0|, sum_k |g_k O_k|)` at each sample; equals `relative`
    /// when no scale series is given.
    pub conditioned: f64,
    pub t_max: f64,
    pub samples: usize,
}

impl DriftReport {
    pub fn from_series(times: &[f64], values: &[f64]) -> Self {
        let initial = values.first().copied().unwrap_or(0.0);
        let mut max_abs = 0.0;
        let mut t_max = times.first().copied().unwrap_or(0.0);
        for (t, v) in times.iter().zip(values) {
            let d = (v - initial).abs();
            if d > max_abs || d.is_nan() {
                max_abs = d;
                t_max = *t;
            }
        }
        let relative = if initial != 0.0 { max_abs / initial.abs() } else { max_abs };
        Self {
            initial,
            max_abs,
            relative,
            conditioned: relative,
            t_max,
            samples: values.len(),
        }
    }

    /// Like [`DriftReport::from_series`], with `scales[n] = sum_k |g_k O_k|` at each sample.
    pub fn from_series_scaled(times: &[f64], values: &[f64], scales: &[f64]) -> Self {
        let mut r = Self::from_series(times, values);
        let i0 = r.initial.abs();
        let mut worst = 0.0_f64;
        for (v, s) in values.iter().zip(scales) {
            let d = (v - r.initial).abs();
            let den = i0.max(*s);
            let c = if den > 0.0 { d / den } else { d };
            if c > worst || c.is_nan() {
                worst = c;
                if c.is_nan() {
                    break;
                }
            }
        }
        r.conditioned = worst;
        r
    }

    /// First time at which the drift exceeds `threshold` relative to `|I0|`.
    pub fn first_exceedance(times: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
        let initial = *values.first()?;
        let scale = if initial != 0.0 { initial.abs() } else { 1.0 };
        times
            .iter()
            .zip(values)
            .find(|(_, v)| ((*v - initial).abs() / scale) > threshold)
            .map(|(t, _)| *t)
    }
}

/// Values of the invariant at each trajectory sample.
pub fn invariant_series(inv: &InvariantFunction, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.times()
        .iter()
        .zip(traj.states())
        .map(|(&t, &x)| inv.evaluate(x, t))
        .collect()
}

/// `sum_k |g_k O_k|` at each trajectory sample.
pub fn magnitude_series(inv: &InvariantFunction, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.times()
        .iter()
        .zip(traj.states())
        .map(|(&t, &x)| inv.magnitude(x, t))
        .collect()
}

pub fn invariant_drift(inv: &InvariantFunction, traj: &Trajectory) -> Result<DriftReport> {
    if let Some(spec_alg) = traj.algebra_name() {
        if spec_alg != inv.algebra().name() {
            return Err(Error::Argument(format!(
                "trajectory of algebra `{spec_alg}` checked against invariant of `{}`",
                inv.algebra().name()
            )));
        }
    }
    let values = invariant_series(inv, traj)?;
    let scales = magnitude_series(inv, traj)?;
    Ok(DriftReport::from_series_scaled(traj.times(), &values, &scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{quadratic6, spin_classical};

    fn ctrl() -> StepControl {
        StepControl::default()
    }

    #[test]
    fn zero_drive_gives_zero_matrix() {
        let alg = quadratic6();
        let f = coefficient_matrix(&alg, &TimeCoefficients::constant(&[0.0; 6]), 0.3).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spin_axis_field_matrix() {
        let alg = spin_classical();
        let f = coefficient_matrix(&alg, &TimeCoefficients::constant(&[0.0, 0.0, 1.0]), 0.0).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let expect = match (k, j) {
                    (0, 1) => -1.0,
                    (1, 0) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(f[(k, j)], expect, "F[{k}][{j}]");
            }
        }
    }

    #[test]
    fn harmonic_matrix_rotates_coefficient_space() {
        // H = p²/2 + q²/2, so g' = F g with F acting on (q, p) and (qp, q², p²)
        let alg = quadratic6();
        let h = TimeCoefficients::constant(&[0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
        let f = coefficient_matrix(&alg, &h, 0.0).unwrap();
        // g_q' = g_p, g_p' = -g_q and the (qp, q², p²) block, summed by hand
        let mut expect = DMatrix::zeros(6, 6);
        expect[(1, 2)] = 1.0;
        expect[(2, 1)] = -1.0;
        expect[(3, 4)] = -2.0;
        expect[(3, 5)] = 2.0;
        expect[(4, 3)] = 1.0;
        expect[(5, 3)] = -1.0;
        let hv = h.eval(0.0).unwrap();
        let mut oracle = DMatrix::<f64>::zeros(6, 6);
        for &(i, j, k, v) in &crate::algebra::QUADRATIC6_BRACKETS {
            oracle[(k, j)] += hv[i] * v;
            oracle[(k, i)] -= hv[j] * v;
        }
        assert_eq!(f, oracle);
        assert_eq!(f, expect);
        // F is antisymmetric on the (q, p) block: a rotation
        assert_eq!(f[(1, 2)], -f[(2, 1)]);
    }

    #[test]
    fn autonomous_hamiltonian_is_its_own_invariant() {
        for (alg, h) in [
            (quadratic6(), vec![0.3, -0.2, 0.7, 0.4, 0.5, 1.1]),
            (spin_classical(), vec![0.2, -1.0, 0.6]),
        ] {
            let coeffs = TimeCoefficients::constant(&h);
            let path = build_invariant(&alg, &coeffs, &h, (0.0, 20.0), &ctrl()).unwrap();
            for n in 0..path.grid().len() {
                let g = path.node(n).0;
                for (a, b) in g.iter().zip(&h) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spin_rotation_closed_form() {
        let alg = spin_classical();
        let h = TimeCoefficients::constant(&[0.0, 0.0, 1.0]);
        let path = build_invariant(&alg, &h, &[1.0, 0.0, 0.0], (0.0, 10.0), &ctrl()).unwrap();
        for t in [0.0, 0.5, 3.25, 7.77, 10.0] {
            let g = path.eval(t).unwrap();
            assert!((g[0] - t.cos()).abs() < 1e-12);
            assert!((g[1] - t.sin()).abs() < 1e-12);
            assert_eq!(g[2], 0.0);
        }
    }

    #[test]
    fn stored_derivatives_are_definitional() {
        let alg = quadratic6();
        let h = TimeCoefficients::everywhere(
            "quartic-periodic",
            vec![
                Drive::constant(0.0),
                Drive::constant(0.0),
                Drive::constant(0.0),
                Drive::constant(0.0),
                omega_periodic().scaled(0.5),
                Drive::constant(0.5),
            ],
        );
        let g0 = default_g0(&h, 0.0).unwrap();
        let path = build_invariant(&alg, &h, &g0, (0.0, 50.0), &ctrl()).unwrap();
        for n in (0..path.grid().len()).step_by(997) {
            let t = path.grid()[n];
            let (g, dg) = path.node(n);
            let f = coefficient_matrix(&alg, &h, t).unwrap();
            let fg = &f * nalgebra::DVector::from_column_slice(g);
            for k in 0..6 {
                assert!((fg[k] - dg[k]).abs() < 1e-12 * (1.0 + fg[k].abs()));
            }
        }
        // half-step reference
        let fine = build_invariant(&alg, &h, &g0, (0.0, 50.0), &ctrl().halved()).unwrap();
        for (a, b) in path.end_value().iter().zip(fine.end_value()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_in_initial_coefficients() {
        let alg = quadratic6();
        let h = TimeCoefficients::everywhere(
            "resonant",
            vec![
                Drive::constant(0.1),
                Drive::constant(0.2),
                Drive::constant(0.0),
                Drive::constant(0.0),
                omega_resonant().scaled(0.5),
                Drive::constant(0.5),
            ],
        );
        let a = [1.0, 0.5, -0.3, 0.2, 0.7, 0.1];
        let b = [-0.4, 0.0, 1.0, 0.5, -0.2, 0.9];
        let (alpha, beta) = (1.7, -0.6);
        let comb: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let pa = build_invariant(&alg, &h, &a, (0.0, 30.0), &ctrl()).unwrap();
        let pb = build_invariant(&alg, &h, &b, (0.0, 30.0), &ctrl()).unwrap();
        let pc = build_invariant(&alg, &h, &comb, (0.0, 30.0), &ctrl()).unwrap();
        for n in (0..pa.grid().len()).step_by(101) {
            for k in 0..6 {
                let lin = alpha * pa.node(n).0[k] + beta * pb.node(n).0[k];
                assert!((lin - pc.node(n).0[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let alg = Arc::new(spin_classical());
        let h = TimeCoefficients::constant(&[0.0, 0.0, 1.0]);
        let path = build_invariant(&alg, &h, &[0.0, 0.0, 1.0], (0.0, 1.0), &ctrl()).unwrap();
        let inv = InvariantFunction::new(alg.clone(), Arc::new(path)).unwrap();
        assert_eq!(inv.evaluate(PhaseState::new(0.5, 2.0), 0.0).unwrap(), -0.5);
        assert!(matches!(
            inv.evaluate(PhaseState::new(0.5, 2.0), 1.5),
            Err(Error::Interval { .. })
        ));

        let zero = build_invariant(&alg, &h, &[0.0; 3], (0.0, 1.0), &ctrl()).unwrap();
        let inv0 = InvariantFunction::new(alg, Arc::new(zero)).unwrap();
        assert_eq!(inv0.evaluate(PhaseState::new(-0.2, 0.1), 0.7).unwrap(), 0.0);

        let q6 = Arc::new(quadratic6());
        let hh = [0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
        let path = build_invariant(&q6, &TimeCoefficients::constant(&hh), &hh, (0.0, 1.0), &ctrl()).unwrap();
        let inv = InvariantFunction::new(q6, Arc::new(path)).unwrap();
        assert!((inv.evaluate(PhaseState::new(1.0, 1.0), 0.4).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interval_and_dimension_errors() {
        let alg = spin_classical();
        let h = TimeCoefficients::new("short", vec![Drive::constant(1.0); 3], (0.0, 1.0)).unwrap();
        assert!(matches!(coefficient_matrix(&alg, &h, 2.0), Err(Error::Interval { .. })));
        assert!(matches!(
            build_invariant(&alg, &h, &[1.0, 0.0, 0.0], (0.0, 2.0), &ctrl()),
            Err(Error::Interval { .. })
        ));
        assert!(matches!(
            build_invariant(&alg, &h, &[1.0, 0.0], (0.0, 1.0), &ctrl()),
            Err(Error::Dimension { .. })
        ));
        assert!(build_invariant(&alg, &h, &[f64::NAN, 0.0, 0.0], (0.0, 1.0), &ctrl()).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let alg = spin_classical();
        let h = TimeCoefficients::everywhere(
            "q",
            vec![omega_quasiperiodic(), Drive::constant(0.0), omega_periodic()],
        );
        let path = build_invariant(&alg, &h, &[0.3, -0.1, 0.9], (0.0, 2.0), &StepControl::fixed(0.01)).unwrap();
        let text = path.to_csv();
        assert!(text.starts_with("t,g1,g2,g3,dg1,dg2,dg3\n"));
        let back = CoefficientPath::from_csv(alg.name(), &text).unwrap();
        assert_eq!(back.grid(), path.grid());
        for n in 0..path.grid().len() {
            assert_eq!(back.node(n), path.node(n));
        }
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn quintic_derivative_tracks_the_ode_between_nodes() {
        let alg = quadratic6();
        let h = crate::dynamics::quartic_coefficients(omega_periodic());
        let g0 = default_g0(&h, 0.0).unwrap();
        let path = build_invariant(&alg, &h, &g0, (0.0, 20.0), &ctrl()).unwrap();
        assert!(path.is_quintic());
        let cubic = CoefficientPath::from_csv(alg.name(), &path.to_csv()).unwrap();
        assert!(!cubic.is_quintic());
        let residual = |p: &CoefficientPath| {
            let mut worst: f64 = 0.0;
            for k in 0..400 {
                let t = 0.05 * k as f64 + 0.0004;
                let g = p.eval(t).unwrap();
                let mut dg = vec![0.0; 6];
                p.derivative_into(t, &mut dg).unwrap();
                let f = coefficient_matrix(&alg, &h, t).unwrap();
                let fg = &f * nalgebra::DVector::from_vec(g);
                worst = worst.max(dg.iter().zip(fg.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
            worst
        };
        let (q, c) = (residual(&path), residual(&cubic));
        assert!(q < 1e-10, "quintic {q}");
        assert!(c > 100.0 * q, "cubic {c} quintic {q}");
    }

    #[test]
    fn constant_observable_is_passive() {
        assert_eq!(passive_coefficients(quadratic6().constants()), vec![0]);
        assert!(passive_coefficients(spin_classical().constants()).is_empty());
    }

    #[test]
    fn drive_expressions_match_presets() {
        let e = Drive::from_expr("(cos(e*t/2)+cos(pi*t/2))/2").unwrap();
        let p = omega_quasiperiodic();
        for t in [0.0, 0.37, 5.0, 123.4] {
            let (a, b) = (e.eval(t), p.eval(t));
            assert!((a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-13);
        }
        assert!(Drive::from_expr("q*t").is_err());
    }

    #[test]
    fn conditioned_drift_divides_by_term_size() {
        let t = [0.0, 1.0, 2.0];
        let v = [0.5, 0.5 + 1e-3, 0.5 - 4.0];
        let r = DriftReport::from_series_scaled(&t, &v, &[0.5, 0.5, 1e6]);
        assert_eq!(r.relative, 8.0);
        assert!((r.conditioned - 2e-3).abs() < 1e-15);
        let nan = DriftReport::from_series_scaled(&t, &[0.5, f64::NAN, 0.5], &[1.0; 3]);
        assert!(nan.conditioned.is_nan());
        assert_eq!(DriftReport::from_series(&t, &v).conditioned, 8.0);
    }
}
