//! Stroboscopic and plane sections, level-curve constancy, sensitivity and
//! finite-time Lyapunov estimates.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::algebra::PhaseState;
use crate::dynamics::{integrate, integrate_endpoint, Cadence, HamiltonianSpec, Trajectory};
use crate::error::{Error, Result};
use crate::howland::{extended_dense, ExtendedHamiltonian, ExtendedState};
use crate::integrator::{DenseSolution, StepControl};
use crate::invariant::InvariantFunction;

/// Tolerance on `|J - J*|` after refining a crossing.
pub const CROSSING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SectionMode {
    /// Samples at `t_n = 2 pi n / omega`.
    Stroboscopic { omega: f64 },
    /// Crossings of `J = J*` in the extended flow.
    Plane { j_star: f64 },
    /// Crossings of `theta = theta0 + n T` in the extended flow.
    Phase { period: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionPoints {
    pub orbit_id: String,
    pub mode: SectionMode,
    pub points: Vec<PhaseState>,
    pub times: Vec<f64>,
    /// `(theta, J)` for sections of the extended flow.
    pub extended: Option<Vec<(f64, f64)>>,
    /// The flow stopped before all requested points were reached.
    pub truncated: bool,
    /// `J - J*` vanished identically, so every instant is a crossing.
    pub degenerate: bool,
}

impl SectionPoints {
    fn empty(orbit_id: &str, mode: SectionMode) -> Self {
        Self {
            orbit_id: orbit_id.to_string(),
            mode,
            points: Vec::new(),
            times: Vec::new(),
            extended: None,
            truncated: false,
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `n,t,q,p` or `n,t,q,p,theta,J`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(match self.extended {
            Some(_) => "n,t,q,p,theta,J\n",
            None => "n,t,q,p\n",
        });
        for (n, (t, x)) in self.times.iter().zip(&self.points).enumerate() {
            let mut row = vec![n as f64, *t, x.q, x.p];
            if let Some(ext) = &self.extended {
                row.extend([ext[n].0, ext[n].1]);
            }
            out.push_str(&crate::csv::row(&row));
        }
        out
    }
}

/// Samples the flow from `x0` at `t = 0` at `t_n = 2 pi n / omega`,
/// `n = 0..=n_max`, through dense output.
pub fn stroboscopic(
    spec: &HamiltonianSpec,
    x0: PhaseState,
    omega: f64,
    n_max: usize,
    ctrl: &StepControl,
    orbit_id: &str,
) -> Result<SectionPoints> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Argument(format!("strobe frequency must be positive, got {omega}")));
    }
    if n_max == 0 {
        return Err(Error::Argument("need at least one strobe period".into()));
    }
    let period = 2.0 * PI / omega;
    let times: Vec<f64> = (0..=n_max).map(|n| n as f64 * period).collect();
    let t1 = *times.last().unwrap();
    let traj = integrate(spec, x0, (0.0, t1), ctrl, &Cadence::Times(times.clone()))?;
    let mut out = SectionPoints::empty(orbit_id, SectionMode::Stroboscopic { omega });
    out.truncated = traj.len() < times.len();
    out.times = times[..traj.len()].to_vec();
    out.points = traj.states().to_vec();
    Ok(out)
}

fn refine(sol: &DenseSolution, component: usize, level: f64, mut a: f64, mut b: f64) -> Result<(f64, Vec<f64>)> {
    let dim = sol.dim();
    let mut y = vec![0.0; dim];
    sol.eval(a, &mut y)?;
    let fa = y[component] - level;
    let mut sa = fa.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        sol.eval(m, &mut y)?;
        let f = y[component] - level;
        if f.abs() < CROSSING_TOL || b - a <= f64::EPSILON * m.abs().max(1.0) {
            return Ok((m, y));
        }
        if f.signum() == sa {
            a = m;
            sa = f.signum();
        } else {
            b = m;
        }
    }
    let m = 0.5 * (a + b);
    sol.eval(m, &mut y)?;
    Ok((m, y))
}

fn push_extended(out: &mut SectionPoints, t: f64, y: &[f64]) {
    out.times.push(t);
    out.points.push(PhaseState::new(y[0], y[1]));
    out.extended.get_or_insert_with(Vec::new).push((y[2], y[3]));
}

/// Crossings of the plane `J = J*` by the extended flow from `s0`, located
/// by sign change between nodes and bisection on the dense output.
pub fn plane_section(
    ext: &ExtendedHamiltonian,
    s0: ExtendedState,
    j_star: f64,
    t_span: (f64, f64),
    n_max: usize,
    ctrl: &StepControl,
    orbit_id: &str,
) -> Result<SectionPoints> {
    let (sol, failure) = extended_dense(ext, s0, t_span, ctrl)?;
    let mut out = SectionPoints::empty(orbit_id, SectionMode::Plane { j_star });
    out.extended = Some(Vec::new());
    out.truncated = failure.is_some();
    let offset = |n: usize| sol.node(n).0[3] - j_star;
    if (0..sol.len()).all(|n| offset(n).abs() < CROSSING_TOL) {
        out.degenerate = true;
        return Ok(out);
    }
    let times = sol.times();
    for n in 0..sol.len() {
        if out.len() >= n_max {
            break;
        }
        let f0 = offset(n);
        if f0 == 0.0 {
            push_extended(&mut out, times[n], sol.node(n).0);
            continue;
        }
        if n + 1 < sol.len() {
            let f1 = offset(n + 1);
            if f1 != 0.0 && f0.signum() != f1.signum() {
                let (t, y) = refine(&sol, 3, j_star, times[n], times[n + 1])?;
                push_extended(&mut out, t, &y);
            }
        }
    }
    Ok(out)
}

/// Crossings of `theta = theta0 + n period` for `n = 0..=n_max`. With
/// `theta = t` these are the stroboscopic instants, reached through the
/// extended flow.
pub fn phase_section(
    ext: &ExtendedHamiltonian,
    s0: ExtendedState,
    period: f64,
    n_max: usize,
    ctrl: &StepControl,
    orbit_id: &str,
) -> Result<SectionPoints> {
    if !(period > 0.0) {
        return Err(Error::Argument(format!("section period must be positive, got {period}")));
    }
    let t1 = n_max as f64 * period;
    let (sol, failure) = extended_dense(ext, s0, (0.0, t1), ctrl)?;
    let mut out = SectionPoints::empty(orbit_id, SectionMode::Phase { period });
    out.extended = Some(Vec::new());
    push_extended(&mut out, 0.0, sol.node(0).0);
    let times = sol.times();
    let mut n = 1;
    for i in 0..sol.len() - 1 {
        while n <= n_max {
            let level = s0.theta + n as f64 * period;
            let (a, b) = (sol.node(i).0[2], sol.node(i + 1).0[2]);
            if (b - level).abs() <= 1e-12 * level.abs().max(1.0) {
                push_extended(&mut out, times[i + 1], sol.node(i + 1).0);
            } else if a < level && level < b {
                let (t, y) = refine(&sol, 2, level, times[i], times[i + 1])?;
                push_extended(&mut out, t, &y);
            } else {
                break;
            }
            n += 1;
        }
    }
    out.truncated = failure.is_some() || out.len() < n_max + 1;
    Ok(out)
}

/// Spread of the invariant over one orbit's section points.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurveReport {
    pub orbit_id: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    /// `max |I_n - mean|`.
    pub max_deviation: f64,
}

impl LevelCurveReport {
    /// `max_deviation < tol (1 + |mean|)`.
    pub fn constant_within(&self, tol: f64) -> bool {
        self.max_deviation < tol * (1.0 + self.mean.abs())
    }
}

pub const LEVEL_TOL: f64 = 1e-6;

pub fn level_curve_constancy(points: &SectionPoints, inv: &InvariantFunction) -> Result<LevelCurveReport> {
    if points.is_empty() {
        return Err(Error::Argument(format!("orbit `{}` has no section points", points.orbit_id)));
    }
    let values = points
        .points
        .iter()
        .zip(&points.times)
        .map(|(&x, &t)| inv.evaluate(x, t))
        .collect::<Result<Vec<_>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max_deviation = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    Ok(LevelCurveReport {
        orbit_id: points.orbit_id.clone(),
        values,
        mean,
        std_dev,
        max_deviation,
    })
}

/// Smallest gap between the means of any two reports, in units of their
/// combined spread. Distinct labels need a ratio well above one.
pub fn label_separation(reports: &[LevelCurveReport]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            let spread = a.max_deviation + b.max_deviation;
            let gap = (a.mean - b.mean).abs();
            best = best.min(if spread > 0.0 { gap / spread } else if gap > 0.0 { f64::INFINITY } else { 0.0 });
        }
    }
    best
}

/// Distances between two synchronized orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationSeries {
    pub times: Vec<f64>,
    pub q0: Vec<f64>,
    pub q1: Vec<f64>,
    /// `|q0 - q1|`.
    pub dq: Vec<f64>,
    /// Full phase-space distance.
    pub distance: Vec<f64>,
    pub failure: Option<String>,
}

impl SeparationSeries {
    pub fn max_dq(&self) -> f64 {
        self.dq.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_distance(&self) -> f64 {
        self.distance.iter().copied().fold(0.0, f64::max)
    }

    /// `max |q0 - q1| / max |q0|`: separation in units of the orbit's size.
    pub fn relative(&self) -> f64 {
        let size = self.q0.iter().map(|q| q.abs()).fold(0.0, f64::max);
        if size > 0.0 {
            self.max_dq() / size
        } else {
            self.max_dq()
        }
    }

    /// `t,q0,q1,dq,distance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,q0,q1,dq,distance\n");
        for n in 0..self.times.len() {
            out.push_str(&crate::csv::row(&[self.times[n], self.q0[n], self.q1[n], self.dq[n], self.distance[n]]));
        }
        out
    }
}

pub fn separation(
    spec: &HamiltonianSpec,
    x0: PhaseState,
    x1: PhaseState,
    t_span: (f64, f64),
    ctrl: &StepControl,
    cadence: &Cadence,
) -> Result<SeparationSeries> {
    let a = integrate(spec, x0, t_span, ctrl, cadence)?;
    let b = integrate(spec, x1, t_span, ctrl, cadence)?;
    Ok(separation_of(&a, &b))
}

/// Pairs two trajectories sampled on the same cadence, up to the shorter.
pub fn separation_of(a: &Trajectory, b: &Trajectory) -> SeparationSeries {
    let n = a.len().min(b.len());
    let (sa, sb) = (&a.states()[..n], &b.states()[..n]);
    SeparationSeries {
        times: a.times()[..n].to_vec(),
        q0: sa.iter().map(|x| x.q).collect(),
        q1: sb.iter().map(|x| x.q).collect(),
        dq: sa.iter().zip(sb).map(|(x, y)| (x.q - y.q).abs()).collect(),
        distance: sa.iter().zip(sb).map(|(x, y)| x.distance(y)).collect(),
        failure: a.failure.clone().or_else(|| b.failure.clone()),
    }
}

pub const FTLE_OFFSET: f64 = 1e-8;
pub const FTLE_RENORM: f64 = 1.0;
/// Exponents above this count as positive.
pub const CHAOS_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FtleEstimate {
    pub lambda: f64,
    /// End of the span actually covered.
    pub t_reached: f64,
    pub renormalizations: usize,
    pub failure: Option<String>,
}

impl FtleEstimate {
    pub fn chaotic(&self) -> bool {
        self.lambda > CHAOS_THRESHOLD
    }
}

/// Two-orbit estimate: a companion starts `offset` away along `q`, both
/// advance over each `renorm` interval, the log stretch is accumulated and
/// the companion is pulled back to distance `offset`.
pub fn ftle(
    spec: &HamiltonianSpec,
    x0: PhaseState,
    t_span: (f64, f64),
    renorm: f64,
    offset: f64,
    ctrl: &StepControl,
) -> Result<FtleEstimate> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::Argument(format!("time span [{t0}, {t1}] must be increasing")));
    }
    if !(renorm > ctrl.step) {
        return Err(Error::Argument(format!(
            "renormalization interval {renorm} must exceed the integrator step {}",
            ctrl.step
        )));
    }
    if !(offset > 0.0) {
        return Err(Error::Argument(format!("offset must be positive, got {offset}")));
    }
    spec.check_domain(x0)?;
    let mut x = x0;
    let mut y = PhaseState::new(x0.q + offset, x0.p);
    let mut t = t0;
    let mut sum = 0.0;
    let mut count = 0;
    let mut failure = None;
    while t < t1 - 1e-12 * t1.abs().max(1.0) {
        let tn = (t + renorm).min(t1);
        let step = integrate_endpoint(spec, x, t, tn, ctrl).and_then(|xn| Ok((xn, integrate_endpoint(spec, y, t, tn, ctrl)?)));
        let (xn, yn) = match step {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let d = xn.distance(&yn);
        sum += (d / offset).ln();
        count += 1;
        x = xn;
        y = PhaseState::new(xn.q + (yn.q - xn.q) * offset / d, xn.p + (yn.p - xn.p) * offset / d);
        t = tn;
    }
    let covered = t - t0;
    Ok(FtleEstimate {
        lambda: if covered > 0.0 { sum / covered } else { 0.0 },
        t_reached: t,
        renormalizations: count,
        failure,
    })
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff_distance(a: &[PhaseState], b: &[PhaseState]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    let directed = |a: &[PhaseState], b: &[PhaseState]| {
        a.iter()
            .map(|x| b.iter().map(|y| x.distance(y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

const PALETTE: [&str; 8] = ["#1f3b73", "#c0392b", "#27803b", "#8e44ad", "#d35400", "#16a085", "#7f8c8d", "#2c3e50"];

/// Axis box mapping data ranges onto a fixed canvas.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    const W: f64 = 640.0;
    const H: f64 = 640.0;
    const M: f64 = 60.0;

    fn fit<'a>(points: impl Iterator<Item = &'a PhaseState>) -> Self {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for p in points.filter(|p| p.is_finite()) {
            x = (x.0.min(p.q), x.1.max(p.q));
            y = (y.0.min(p.p), y.1.max(p.p));
        }
        if !x.0.is_finite() {
            (x, y) = ((-1.0, 1.0), (-1.0, 1.0));
        }
        let pad = |(lo, hi): (f64, f64)| {
            let d = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
            (lo - d, hi + d)
        };
        Self { x: pad(x), y: pad(y) }
    }

    fn map(&self, p: &PhaseState) -> (f64, f64) {
        let (w, h, m) = (Self::W, Self::H, Self::M);
        (
            m + (p.q - self.x.0) / (self.x.1 - self.x.0) * (w - 2.0 * m),
            h - m - (p.p - self.y.0) / (self.y.1 - self.y.0) * (h - 2.0 * m),
        )
    }

    fn header(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let (w, h, m) = (Self::W, Self::H, Self::M);
        let ((xlo, xhi), (ylo, yhi)) = (self.x, self.y);
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * m,
            h - 2.0 * m
        );
        let _ = writeln!(out, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(title));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, h - 15.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="20" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            escape(ylabel)
        );
        let _ = writeln!(out, r#"<text x="{m}" y="{}" font-size="11">{xlo:.3}</text>"#, h - m + 15.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{xhi:.3}</text>"#, w - m, h - m + 15.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{ylo:.3}</text>"#, m - 4.0, h - m);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{yhi:.3}</text>"#, m - 4.0, m + 10.0);
        out
    }
}

/// One marker per point, one colour per series, inside an axis box with
/// the ranges printed at the corners.
pub fn scatter_svg(title: &str, series: &[&[PhaseState]], xlabel: &str, ylabel: &str) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.iter()));
    let mut out = frame.header(title, xlabel, ylabel);
    for (k, s) in series.iter().enumerate() {
        let _ = writeln!(out, r#"<g fill="{}">"#, PALETTE[k % PALETTE.len()]);
        for p in s.iter().filter(|p| p.is_finite()) {
            let (x, y) = frame.map(p);
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.2"/>"#);
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Polyline plot of one or more `(t, y)` series.
pub fn line_svg(title: &str, series: &[(&[f64], &[f64])], xlabel: &str, ylabel: &str) -> String {
    let pts: Vec<Vec<PhaseState>> = series
        .iter()
        .map(|(t, y)| t.iter().zip(y.iter()).map(|(&t, &y)| PhaseState::new(t, y)).collect())
        .collect();
    let frame = Frame::fit(pts.iter().flatten());
    let mut out = frame.header(title, xlabel, ylabel);
    for (k, s) in pts.iter().enumerate() {
        let mut path = String::new();
        for p in s.iter().filter(|p| p.is_finite()) {
            let (x, y) = frame.map(p);
            let _ = write!(path, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            path.trim_end()
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dynamics::{model_preset, ModelParams, HARMONIC, QUARTIC_PERIODIC, QUARTIC_RESONANT};
    use crate::howland::extend;
    use crate::invariant::{build_invariant, default_g0};

    fn preset(name: &str, eps: f64) -> HamiltonianSpec {
        model_preset(name, &ModelParams::epsilon(eps)).unwrap()
    }

    fn ctrl() -> StepControl {
        StepControl::default()
    }

    fn invariant_for(spec: &HamiltonianSpec, t1: f64) -> InvariantFunction {
        let h = spec.coefficients();
        let g0 = default_g0(h, 0.0).unwrap();
        let path = build_invariant(spec.algebra(), h, &g0, (0.0, t1), &ctrl()).unwrap();
        InvariantFunction::new(spec.algebra().clone(), Arc::new(path)).unwrap()
    }

    #[test]
    fn harmonic_strobe_at_natural_frequency_is_a_fixed_point() {
        let spec = preset(HARMONIC, 0.0);
        let s = stroboscopic(&spec, PhaseState::new(0.3, 0.7), 1.0, 20, &ctrl(), "h").unwrap();
        assert_eq!(s.len(), 21);
        assert!(!s.truncated);
        for (n, (t, x)) in s.times.iter().zip(&s.points).enumerate() {
            assert_eq!(*t, n as f64 * 2.0 * PI);
            assert!(x.distance(&s.points[0]) < 1e-10);
        }
    }

    #[test]
    fn strobe_points_are_step_converged() {
        let spec = preset(QUARTIC_PERIODIC, 0.0);
        let a = stroboscopic(&spec, PhaseState::new(0.5, 0.0), PI / 2.0, 50, &ctrl(), "a").unwrap();
        let b = stroboscopic(&spec, PhaseState::new(0.5, 0.0), PI / 2.0, 50, &ctrl().halved(), "b").unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!(x.distance(y) < 1e-6);
        }
    }

    #[test]
    fn strobe_rejects_bad_frequency() {
        let spec = preset(HARMONIC, 0.0);
        assert!(stroboscopic(&spec, PhaseState::new(0.0, 1.0), 0.0, 5, &ctrl(), "x").is_err());
    }

    #[test]
    fn harmonic_plane_is_degenerate_or_empty() {
        let ext = extend(preset(HARMONIC, 0.0));
        let s0 = ext.initial_state(PhaseState::new(1.0, 0.0), 0.0).unwrap();
        let on = plane_section(&ext, s0, s0.j, (0.0, 10.0), 100, &ctrl(), "h").unwrap();
        assert!(on.degenerate && on.is_empty());
        let off = plane_section(&ext, s0, 0.0, (0.0, 10.0), 100, &ctrl(), "h").unwrap();
        assert!(!off.degenerate && off.is_empty());
    }

    #[test]
    fn plane_crossings_are_refined_and_on_level() {
        let spec = preset(QUARTIC_PERIODIC, 0.0);
        let inv = invariant_for(&spec, 200.0);
        let ext = extend(spec);
        let s0 = ext.initial_state(PhaseState::new(0.0, 1.0), 0.0).unwrap();
        let sec = plane_section(&ext, s0, 0.0, (0.0, 200.0), 1000, &ctrl(), "o").unwrap();
        assert!(sec.len() > 20, "{}", sec.len());
        for (theta, j) in sec.extended.as_ref().unwrap() {
            assert!(j.abs() < CROSSING_TOL);
            assert!(*theta >= 0.0);
        }
        let report = level_curve_constancy(&sec, &inv).unwrap();
        assert!(report.constant_within(LEVEL_TOL), "{}", report.max_deviation);
    }

    #[test]
    fn phase_section_matches_stroboscopic() {
        let spec = preset(QUARTIC_PERIODIC, 0.0);
        let strobe = stroboscopic(&spec, PhaseState::new(0.0, 1.0), PI / 2.0, 100, &ctrl(), "s").unwrap();
        let ext = extend(spec);
        let s0 = ext.initial_state(PhaseState::new(0.0, 1.0), 0.0).unwrap();
        let phase = phase_section(&ext, s0, 4.0, 100, &ctrl(), "p").unwrap();
        assert_eq!(phase.len(), 101);
        assert!(!phase.truncated);
        assert!(hausdorff_distance(&strobe.points, &phase.points) < 1e-4);
        let csv = phase.to_csv();
        assert!(csv.starts_with("n,t,q,p,theta,J\n"));
    }

    #[test]
    fn distinct_orbits_carry_distinct_labels() {
        let spec = preset(QUARTIC_PERIODIC, 0.0);
        let inv = invariant_for(&spec, 4.0 * 60.0);
        let reports: Vec<_> = [0.2, 0.5, 0.9]
            .iter()
            .map(|&q| {
                let s = stroboscopic(&spec, PhaseState::new(q, 0.0), PI / 2.0, 60, &ctrl(), "o").unwrap();
                level_curve_constancy(&s, &inv).unwrap()
            })
            .collect();
        assert!(reports.iter().all(|r| r.constant_within(LEVEL_TOL)));
        assert!(label_separation(&reports) > 1e3);
    }

    #[test]
    fn perturbed_orbit_leaves_the_level() {
        let clean = preset(QUARTIC_PERIODIC, 0.0);
        let inv = invariant_for(&clean, 4.0 * 60.0);
        let s = stroboscopic(&preset(QUARTIC_PERIODIC, 0.01), PhaseState::new(0.0, 1.0), PI / 2.0, 60, &ctrl(), "c").unwrap();
        let r = level_curve_constancy(&s, &inv).unwrap();
        assert!(r.max_deviation > 1e3 * LEVEL_TOL * (1.0 + r.mean.abs()), "{}", r.max_deviation);
    }

    #[test]
    fn resonant_plane_points_march_outward() {
        let ext = extend(preset(QUARTIC_RESONANT, 0.0));
        let s0 = ext.initial_state(PhaseState::new(0.0, 1.0), 0.0).unwrap();
        let sec = stroboscopic(ext.base(), PhaseState::new(0.0, 1.0), 1.0, 550, &ctrl(), "r").unwrap();
        let early = sec.points[..50].iter().map(|x| x.norm()).fold(0.0, f64::max);
        let late = sec.points[500..].iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(late > 5.0 * early, "{early} {late}");
        assert!(s0.j < 0.0);
    }

    #[test]
    fn identical_ics_have_zero_separation() {
        let spec = preset(QUARTIC_PERIODIC, 0.01);
        let x = PhaseState::new(0.0, 1.0);
        let s = separation(&spec, x, x, (0.0, 20.0), &ctrl(), &Cadence::Interval(0.1)).unwrap();
        assert_eq!(s.max_distance(), 0.0);
        assert!(s.to_csv().starts_with("t,q0,q1,dq,distance\n"));
    }

    #[test]
    fn harmonic_ftle_vanishes() {
        let spec = preset(HARMONIC, 0.0);
        let e = ftle(&spec, PhaseState::new(0.0, 1.0), (0.0, 500.0), FTLE_RENORM, FTLE_OFFSET, &ctrl()).unwrap();
        assert!(e.lambda.abs() < 1e-2);
        assert!(!e.chaotic());
        assert_eq!(e.renormalizations, 500);
    }

    #[test]
    fn chaotic_sea_ftle_is_positive_and_renorm_stable() {
        let spec = preset(QUARTIC_PERIODIC, 0.01);
        let x0 = PhaseState::new(0.0, 1.0);
        let a = ftle(&spec, x0, (0.0, 500.0), 1.0, FTLE_OFFSET, &ctrl()).unwrap();
        let b = ftle(&spec, x0, (0.0, 500.0), 0.5, FTLE_OFFSET, &ctrl()).unwrap();
        assert!(a.chaotic() && b.chaotic(), "{} {}", a.lambda, b.lambda);
        assert!((a.lambda - b.lambda).abs() < 0.2 * a.lambda, "{} {}", a.lambda, b.lambda);
    }

    #[test]
    fn ftle_flags_a_domain_exit() {
        let field = crate::dynamics::field_preset("rabi-x").unwrap();
        let spec = model_preset(crate::dynamics::TWO_LEVEL, &ModelParams::field(field)).unwrap();
        let e = ftle(&spec, PhaseState::new(0.0, PI / 2.0), (0.0, 10.0), 1.0, FTLE_OFFSET, &ctrl()).unwrap();
        assert!(e.failure.is_some());
        assert!(e.t_reached < 10.0);
    }

    #[test]
    fn hausdorff_basics() {
        let a = [PhaseState::new(0.0, 0.0), PhaseState::new(1.0, 0.0)];
        let b = [PhaseState::new(0.0, 0.0)];
        assert_eq!(hausdorff_distance(&a, &a), 0.0);
        assert_eq!(hausdorff_distance(&a, &b), 1.0);
        assert_eq!(hausdorff_distance(&a, &[]), f64::INFINITY);
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let a = [PhaseState::new(0.0, 0.0), PhaseState::new(1.0, 2.0)];
        let b = [PhaseState::new(-1.0, 0.5)];
        let svg = scatter_svg("t <1>", &[&a, &b], "q", "p");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("t &lt;1&gt;"));
        let line = line_svg("l", &[(&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0])], "t", "q");
        assert_eq!(line.matches("<polyline").count(), 1);
        assert!(line.ends_with("</svg>\n"));
    }
}
