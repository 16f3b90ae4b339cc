//! Hamiltonian flows of `H(x, t) = h(t)·O(x) + eps V(x)` and the model presets.

use std::cell::RefCell;
use std::ops::ControlFlow;
use std::sync::Arc;

use rayon::prelude::*;

use crate::algebra::{quadratic6, spin_classical, Domain, Evaluation, LieAlgebra, Observable, PhaseState};
use crate::error::{Error, Result};
use crate::integrator::{self, IntegratorStats, OdeSystem, Sampler, Step, StepControl};
use crate::invariant::{omega_periodic, omega_quasiperiodic, omega_resonant, Drive, TimeCoefficients};

/// Non-algebra term `strength * V(x)`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub observable: Observable,
    pub strength: f64,
}

impl Perturbation {
    /// `eps q^4 / 4`.
    pub fn quartic(strength: f64) -> Self {
        let observable = Observable::new("q^4/4", Domain::PLANE, |x| {
            let q2 = x.q * x.q;
            Evaluation {
                value: 0.25 * q2 * q2,
                dq: q2 * x.q,
                dp: 0.0,
            }
        });
        Self { observable, strength }
    }
}

#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    label: String,
    algebra: Arc<LieAlgebra>,
    h: TimeCoefficients,
    perturbation: Option<Perturbation>,
}

impl HamiltonianSpec {
    pub fn new(
        label: impl Into<String>,
        algebra: Arc<LieAlgebra>,
        h: TimeCoefficients,
        perturbation: Option<Perturbation>,
    ) -> Result<Self> {
        if h.dim() != algebra.dim() {
            return Err(Error::Dimension {
                expected: algebra.dim(),
                got: h.dim(),
            });
        }
        Ok(Self {
            label: label.into(),
            algebra,
            h,
            perturbation,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn algebra(&self) -> &Arc<LieAlgebra> {
        &self.algebra
    }

    pub fn coefficients(&self) -> &TimeCoefficients {
        &self.h
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn epsilon(&self) -> f64 {
        self.perturbation.as_ref().map_or(0.0, |p| p.strength)
    }

    /// Same spec with the non-algebra term removed.
    pub fn unperturbed(&self) -> Self {
        Self {
            label: self.label.clone(),
            algebra: self.algebra.clone(),
            h: self.h.clone(),
            perturbation: None,
        }
    }

    pub fn check_domain(&self, x: PhaseState) -> Result<()> {
        self.algebra.check_domain(x)?;
        if let Some(p) = &self.perturbation {
            p.observable.check_domain(x)?;
        }
        Ok(())
    }

    pub(crate) fn eval_with(&self, x: PhaseState, hv: &[f64]) -> Result<Evaluation> {
        let mut e = self.algebra.combine(hv, x)?;
        if let Some(p) = &self.perturbation {
            if p.strength != 0.0 {
                let v = p.observable.eval(x)?;
                e.value += p.strength * v.value;
                e.dq += p.strength * v.dq;
                e.dp += p.strength * v.dp;
            }
        }
        Ok(e)
    }

    /// `H(x, t)` with its phase-space gradient.
    pub fn eval(&self, x: PhaseState, t: f64) -> Result<Evaluation> {
        let hv = self.h.eval(t)?;
        self.eval_with(x, &hv)
    }

    pub fn energy(&self, x: PhaseState, t: f64) -> Result<f64> {
        self.eval(x, t).map(|e| e.value)
    }

    /// Explicit time derivative `dH/dt = h'(t)·O(x)`.
    pub fn time_derivative(&self, x: PhaseState, t: f64) -> Result<f64> {
        let mut dh = vec![0.0; self.h.dim()];
        self.h.derivative_into(t, &mut dh)?;
        Ok(self.algebra.combine(&dh, x)?.value)
    }
}

/// `(dq/dt, dp/dt) = (dH/dp, -dH/dq)`.
pub fn hamilton_rhs(spec: &HamiltonianSpec, x: PhaseState, t: f64) -> Result<(f64, f64)> {
    let e = spec.eval(x, t)?;
    Ok((e.dp, -e.dq))
}

pub(crate) struct PhaseFlow<'a> {
    pub spec: &'a HamiltonianSpec,
    scratch: RefCell<Vec<f64>>,
}

impl<'a> PhaseFlow<'a> {
    pub fn new(spec: &'a HamiltonianSpec) -> Self {
        Self {
            spec,
            scratch: RefCell::new(vec![0.0; spec.h.dim()]),
        }
    }
}

impl OdeSystem for PhaseFlow<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let mut hv = self.scratch.borrow_mut();
        self.spec.h.eval_into(t, &mut hv)?;
        let e = self.spec.eval_with(PhaseState::new(y[0], y[1]), &hv)?;
        dy[0] = e.dp;
        dy[1] = -e.dq;
        Ok(())
    }
}

/// Where trajectory samples are recorded.
#[derive(Debug, Clone, PartialEq)]
pub enum Cadence {
    /// Every `dt`, starting at `t0`, plus the final time.
    Interval(f64),
    /// Explicit increasing sample times inside the span.
    Times(Vec<f64>),
    /// Every accepted integrator node.
    EveryStep,
}

impl Cadence {
    pub(crate) fn sample_times(&self, t0: f64, t1: f64) -> Result<Option<Vec<f64>>> {
        match self {
            Cadence::Interval(dt) => {
                if !(*dt > 0.0) {
                    return Err(Error::Argument(format!("output interval must be positive, got {dt}")));
                }
                let n = ((t1 - t0) / dt + 1e-9).floor() as usize;
                let mut times: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).filter(|&t| t <= t1).collect();
                if times.last().is_none_or(|&t| t < t1) {
                    times.push(t1);
                }
                Ok(Some(times))
            }
            Cadence::Times(times) => {
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Argument("sample times must be strictly increasing".into()));
                }
                if times.first().is_some_and(|&t| t < t0) || times.last().is_some_and(|&t| t > t1) {
                    return Err(Error::Argument("sample times outside the time span".into()));
                }
                Ok(Some(times.clone()))
            }
            Cadence::EveryStep => Ok(None),
        }
    }
}

/// Sampled solution of Hamilton's equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    label: String,
    algebra_name: Option<String>,
    times: Vec<f64>,
    states: Vec<PhaseState>,
    pub stats: IntegratorStats,
    /// Diagnostic when the run ended early (domain exit, step underflow).
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn new(label: impl Into<String>, times: Vec<f64>, states: Vec<PhaseState>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: states.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("trajectory times must be strictly increasing".into()));
        }
        Ok(Self {
            label: label.into(),
            algebra_name: None,
            times,
            states,
            stats: IntegratorStats::default(),
            failure: None,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn algebra_name(&self) -> Option<&str> {
        self.algebra_name.as_deref()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[PhaseState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn last(&self) -> Option<(f64, PhaseState)> {
        Some((*self.times.last()?, *self.states.last()?))
    }

    /// Largest phase-space radius reached divided by the initial radius.
    pub fn growth_factor(&self) -> f64 {
        let r0 = self.states.first().map_or(0.0, |x| x.norm());
        let rmax = self.states.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if r0 > 0.0 {
            rmax / r0
        } else {
            f64::INFINITY
        }
    }

    /// Maximum radius in each of `windows` equal-length time windows.
    pub fn window_maxima(&self, windows: usize) -> Vec<f64> {
        if self.times.len() < 2 || windows == 0 {
            return Vec::new();
        }
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let width = (t1 - t0) / windows as f64;
        let mut out = vec![0.0_f64; windows];
        for (t, x) in self.times.iter().zip(&self.states) {
            let w = (((t - t0) / width) as usize).min(windows - 1);
            out[w] = out[w].max(x.norm());
        }
        out
    }

    /// `t,q,p`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,q,p\n");
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&crate::csv::row(&[*t, x.q, x.p]));
        }
        out
    }

    pub fn from_csv(label: &str, text: &str) -> Result<Self> {
        let (header, rows) = crate::csv::parse(text)?;
        if header != ["t", "q", "p"] {
            return Err(Error::Csv {
                line: 1,
                message: "expected header t,q,p".into(),
            });
        }
        let times = rows.iter().map(|r| r[0]).collect();
        let states = rows.iter().map(|r| PhaseState::new(r[1], r[2])).collect();
        Self::new(label, times, states)
    }
}

/// Integrates Hamilton's equations with the order-5 kernel. A domain exit or
/// step failure yields the partial trajectory with `failure` set.
pub fn integrate(
    spec: &HamiltonianSpec,
    x0: PhaseState,
    t_span: (f64, f64),
    ctrl: &StepControl,
    cadence: &Cadence,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::Argument(format!("time span [{t0}, {t1}] must be increasing")));
    }
    if !x0.is_finite() {
        return Err(Error::Argument("initial state must be finite".into()));
    }
    spec.check_domain(x0)?;
    spec.h.check(t0)?;
    spec.h.check(t1)?;
    let flow = PhaseFlow::new(spec);
    let y0 = [x0.q, x0.p];
    let (times, values, outcome) = match cadence.sample_times(t0, t1)? {
        Some(times) => {
            let mut sampler = Sampler::new(&times);
            sampler.start(t0, &y0);
            let outcome = integrator::integrate(&flow, t0, &y0, t1, ctrl, &mut sampler)?;
            let n = sampler.values.len();
            (times[..n].to_vec(), sampler.values, outcome)
        }
        None => {
            let mut times = vec![t0];
            let mut values = vec![y0.to_vec()];
            let mut rec = |s: &Step<'_>| {
                times.push(s.t1);
                values.push(s.y1.to_vec());
                ControlFlow::Continue(())
            };
            let outcome = integrator::integrate(&flow, t0, &y0, t1, ctrl, &mut rec)?;
            (times, values, outcome)
        }
    };
    let states = values.iter().map(|v| PhaseState::new(v[0], v[1])).collect();
    let mut traj = Trajectory::new(spec.label.clone(), times, states)?;
    traj.algebra_name = Some(spec.algebra.name().to_string());
    traj.stats = outcome.stats;
    traj.failure = outcome.failure.map(|e| e.to_string());
    Ok(traj)
}

/// State at `t1`, integrating in whichever direction `t1` lies.
pub fn integrate_endpoint(
    spec: &HamiltonianSpec,
    x0: PhaseState,
    t0: f64,
    t1: f64,
    ctrl: &StepControl,
) -> Result<PhaseState> {
    spec.check_domain(x0)?;
    let flow = PhaseFlow::new(spec);
    let mut noop = |_: &Step<'_>| ControlFlow::Continue(());
    let out = integrator::integrate(&flow, t0, &[x0.q, x0.p], t1, ctrl, &mut noop)?;
    if let Some(f) = out.failure {
        return Err(f);
    }
    Ok(PhaseState::new(out.y[0], out.y[1]))
}

/// Runs independent initial conditions on the rayon pool; output order
/// matches `ics`.
pub fn integrate_batch(
    spec: &HamiltonianSpec,
    ics: &[PhaseState],
    t_span: (f64, f64),
    ctrl: &StepControl,
    cadence: &Cadence,
) -> Vec<Result<Trajectory>> {
    ics.par_iter()
        .map(|&x0| integrate(spec, x0, t_span, ctrl, cadence))
        .collect()
}

/// `n x n` grid over a rectangle, row-major in `q`.
pub fn grid_ics(q: (f64, f64), p: (f64, f64), n: usize) -> Vec<PhaseState> {
    let lin = |r: (f64, f64), i: usize| {
        if n == 1 {
            0.5 * (r.0 + r.1)
        } else {
            r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64
        }
    };
    (0..n)
        .flat_map(|j| (0..n).map(move |i| PhaseState::new(lin(q, i), lin(p, j))))
        .collect()
}

/// The center followed by `neighbors` points on a circle of `radius`.
pub fn neighborhood_ics(center: PhaseState, radius: f64, neighbors: usize) -> Vec<PhaseState> {
    let mut out = vec![center];
    for k in 0..neighbors {
        let a = 2.0 * std::f64::consts::PI * k as f64 / neighbors as f64;
        out.push(PhaseState::new(center.q + radius * a.cos(), center.p + radius * a.sin()));
    }
    out
}

pub const HARMONIC: &str = "harmonic";
pub const QUARTIC_PERIODIC: &str = "quartic-periodic";
pub const QUARTIC_RESONANT: &str = "quartic-resonant";
pub const QUARTIC_QUASIPERIODIC: &str = "quartic-quasiperiodic";
pub const TWO_LEVEL: &str = "two-level";

pub const MODEL_PRESETS: [&str; 5] = [
    QUARTIC_PERIODIC,
    QUARTIC_RESONANT,
    QUARTIC_QUASIPERIODIC,
    TWO_LEVEL,
    HARMONIC,
];

/// Parameters accepted by [`model_preset`].
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    /// Strength of the `q^4/4` term (quartic family only).
    pub epsilon: f64,
    /// Field `B(t)` for the two-level preset; `(0, 0, 1)` when absent.
    pub field: Option<TimeCoefficients>,
}

impl ModelParams {
    pub fn epsilon(epsilon: f64) -> Self {
        Self { epsilon, field: None }
    }

    pub fn field(field: TimeCoefficients) -> Self {
        Self {
            epsilon: 0.0,
            field: Some(field),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetInfo {
    pub name: &'static str,
    pub algebra: &'static str,
    pub hamiltonian: &'static str,
    pub drive: &'static str,
    /// Drive frequency used for stroboscopic sampling, if periodic.
    pub strobe_omega: Option<f64>,
}

pub fn preset_info(name: &str) -> Result<PresetInfo> {
    use std::f64::consts::FRAC_PI_2;
    let info = match name {
        HARMONIC => PresetInfo {
            name: HARMONIC,
            algebra: "quadratic6",
            hamiltonian: "p^2/2 + q^2/2 + eps q^4/4",
            drive: "Omega(t) = 1",
            strobe_omega: Some(1.0),
        },
        QUARTIC_PERIODIC => PresetInfo {
            name: QUARTIC_PERIODIC,
            algebra: "quadratic6",
            hamiltonian: "p^2/2 + Omega(t) q^2/2 + eps q^4/4",
            drive: "Omega(t) = cos(pi t/2)",
            strobe_omega: Some(FRAC_PI_2),
        },
        QUARTIC_RESONANT => PresetInfo {
            name: QUARTIC_RESONANT,
            algebra: "quadratic6",
            hamiltonian: "p^2/2 + Omega(t) q^2/2 + eps q^4/4",
            drive: "Omega(t) = 1 + cos(t)/10",
            strobe_omega: Some(1.0),
        },
        QUARTIC_QUASIPERIODIC => PresetInfo {
            name: QUARTIC_QUASIPERIODIC,
            algebra: "quadratic6",
            hamiltonian: "p^2/2 + Omega(t) q^2/2 + eps q^4/4",
            drive: "Omega(t) = [cos(e t/2) + cos(pi t/2)]/2",
            strobe_omega: None,
        },
        TWO_LEVEL => PresetInfo {
            name: TWO_LEVEL,
            algebra: "spin-classical",
            hamiltonian: "B(t)·(sqrt(1-q^2) cos p, sqrt(1-q^2) sin p, -q)",
            drive: "B(t), default (0, 0, 1)",
            strobe_omega: None,
        },
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: MODEL_PRESETS.join(", "),
            })
        }
    };
    Ok(info)
}

/// `h = (0, 0, 0, 0, Omega/2, 1/2)` on `{1, q, p, qp, q², p²}`.
pub fn quartic_coefficients(omega: Drive) -> TimeCoefficients {
    let label = format!("Omega(t)={}", omega.label());
    TimeCoefficients::everywhere(
        label,
        vec![
            Drive::constant(0.0),
            Drive::constant(0.0),
            Drive::constant(0.0),
            Drive::constant(0.0),
            omega.scaled(0.5),
            Drive::constant(0.5),
        ],
    )
}

pub const FIELD_PRESETS: [&str; 3] = ["constant-z", "rabi-x", "quasiperiodic"];

/// Named fields `B(t)` for the two-level model.
pub fn field_preset(name: &str) -> Result<TimeCoefficients> {
    use std::f64::consts::{E, FRAC_PI_2};
    match name {
        "constant-z" => Ok(TimeCoefficients::constant(&[0.0, 0.0, 1.0]).with_label("B=(0,0,1)")),
        "rabi-x" => Ok(TimeCoefficients::constant(&[1.0, 0.0, 0.0]).with_label("B=(1,0,0)")),
        "quasiperiodic" => Ok(TimeCoefficients::everywhere(
            "B=(cos(e*t/2),0,cos(pi*t/2))",
            vec![
                Drive::new("cos(e*t/2)", |t| {
                    let (s, c) = (0.5 * E * t).sin_cos();
                    (c, -0.5 * E * s)
                }),
                Drive::constant(0.0),
                Drive::new("cos(pi*t/2)", |t| {
                    let (s, c) = (FRAC_PI_2 * t).sin_cos();
                    (c, -FRAC_PI_2 * s)
                }),
            ],
        )),
        _ => Err(Error::UnknownPreset {
            name: name.to_string(),
            valid: FIELD_PRESETS.join(", "),
        }),
    }
}

pub fn model_preset(name: &str, params: &ModelParams) -> Result<HamiltonianSpec> {
    let quartic = |omega: Drive| -> Result<HamiltonianSpec> {
        if !(params.epsilon >= 0.0 && params.epsilon.is_finite()) {
            return Err(Error::Argument(format!("epsilon must be >= 0, got {}", params.epsilon)));
        }
        let pert = (params.epsilon != 0.0).then(|| Perturbation::quartic(params.epsilon));
        HamiltonianSpec::new(name, Arc::new(quadratic6()), quartic_coefficients(omega), pert)
    };
    match name {
        HARMONIC => quartic(Drive::constant(1.0)),
        QUARTIC_PERIODIC => quartic(omega_periodic()),
        QUARTIC_RESONANT => quartic(omega_resonant()),
        QUARTIC_QUASIPERIODIC => quartic(omega_quasiperiodic()),
        TWO_LEVEL => {
            if params.epsilon != 0.0 {
                return Err(Error::Argument("the two-level model takes no epsilon".into()));
            }
            let field = match &params.field {
                Some(f) => f.clone(),
                None => field_preset("constant-z")?,
            };
            HamiltonianSpec::new(name, Arc::new(spin_classical()), field, None)
        }
        _ => Err(Error::UnknownPreset {
            name: name.to_string(),
            valid: MODEL_PRESETS.join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_rhs() {
        let spec = model_preset(HARMONIC, &ModelParams::default()).unwrap();
        let (dq, dp) = hamilton_rhs(&spec, PhaseState::new(0.7, -0.4), 3.0).unwrap();
        assert!((dq + 0.4).abs() < 1e-15 && (dp + 0.7).abs() < 1e-15);
    }

    #[test]
    fn quartic_rhs_includes_perturbation() {
        let spec = model_preset(QUARTIC_PERIODIC, &ModelParams::epsilon(0.01)).unwrap();
        // Omega(0) = 1
        let (dq, dp) = hamilton_rhs(&spec, PhaseState::new(2.0, 0.0), 0.0).unwrap();
        assert_eq!(dq, 0.0);
        assert!((dp + 2.08).abs() < 1e-14, "{dp}");
    }

    #[test]
    fn spin_rhs_axis_field() {
        let b3 = 1.7;
        let spec = model_preset(
            TWO_LEVEL,
            &ModelParams::field(TimeCoefficients::constant(&[0.0, 0.0, b3])),
        )
        .unwrap();
        let (dq, dp) = hamilton_rhs(&spec, PhaseState::new(0.3, 1.1), 0.0).unwrap();
        assert_eq!(dq, 0.0);
        assert_eq!(dp, b3);
    }

    #[test]
    fn unperturbed_spec_matches_algebra_combination() {
        let spec = model_preset(QUARTIC_QUASIPERIODIC, &ModelParams::default()).unwrap();
        let x = PhaseState::new(0.4, -1.3);
        for t in [0.0, 1.0, 17.5] {
            let h = spec.coefficients().eval(t).unwrap();
            let direct = spec.algebra().combine(&h, x).unwrap().value;
            assert_eq!(spec.energy(x, t).unwrap(), direct);
        }
    }

    #[test]
    fn harmonic_period() {
        let spec = model_preset(HARMONIC, &ModelParams::default()).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let traj = integrate(&spec, PhaseState::new(0.0, 1.0), (0.0, tau), &StepControl::default(), &Cadence::Interval(0.5)).unwrap();
        let (t, x) = traj.last().unwrap();
        assert_eq!(t, tau);
        assert!(x.q.abs() < 1e-8 && (x.p - 1.0).abs() < 1e-8);
        assert!(traj.completed());
        assert!(traj.stats.steps > 6000);
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let ctrl = StepControl::default();
        for name in [HARMONIC, QUARTIC_PERIODIC, QUARTIC_RESONANT, QUARTIC_QUASIPERIODIC] {
            let spec = model_preset(name, &ModelParams::default()).unwrap();
            let x0 = PhaseState::new(0.2, 0.9);
            let x1 = integrate_endpoint(&spec, x0, 0.0, 50.0, &ctrl).unwrap();
            let back = integrate_endpoint(&spec, x1, 50.0, 0.0, &ctrl).unwrap();
            assert!(back.distance(&x0) < 1e-11, "{name}: {}", back.distance(&x0));
        }
        let spec = model_preset(TWO_LEVEL, &ModelParams::field(field_preset("quasiperiodic").unwrap())).unwrap();
        let x0 = PhaseState::new(0.1, 0.4);
        let x1 = integrate_endpoint(&spec, x0, 0.0, 5.0, &ctrl).unwrap();
        let back = integrate_endpoint(&spec, x1, 5.0, 0.0, &ctrl).unwrap();
        assert!(back.distance(&x0) < 1e-10);
    }

    #[test]
    fn harmonic_convergence_order() {
        let spec = model_preset(HARMONIC, &ModelParams::default()).unwrap();
        let x0 = PhaseState::new(0.0, 1.0);
        let t1 = 10.0;
        let err = |h: f64| {
            let x = integrate_endpoint(&spec, x0, 0.0, t1, &StepControl::fixed(h)).unwrap();
            x.distance(&PhaseState::new(t1.sin(), t1.cos()))
        };
        let ratio = err(0.2) / err(0.1);
        assert!((24.0..40.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn two_level_stays_on_sphere() {
        let spec = model_preset(TWO_LEVEL, &ModelParams::field(field_preset("quasiperiodic").unwrap())).unwrap();
        let traj = integrate(&spec, PhaseState::new(0.3, 0.7), (0.0, 5.0), &StepControl::default(), &Cadence::Interval(0.01)).unwrap();
        let alg = spec.algebra();
        for &x in traj.states() {
            let s: f64 = alg.basis().iter().map(|o| o.value(x).unwrap().powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn spin_chart_exit_is_reported() {
        // B along x tips the spin through the pole q = 1
        let spec = model_preset(TWO_LEVEL, &ModelParams::field(field_preset("rabi-x").unwrap())).unwrap();
        let traj = integrate(&spec, PhaseState::new(0.0, std::f64::consts::FRAC_PI_2), (0.0, 5.0), &StepControl::default(), &Cadence::Interval(0.1)).unwrap();
        assert!(traj.failure.is_some());
        assert!(traj.last().unwrap().0 < 5.0);
        assert!(integrate(&spec, PhaseState::new(1.0, 0.0), (0.0, 1.0), &StepControl::default(), &Cadence::EveryStep).is_err());
    }

    #[test]
    fn presets_and_errors() {
        let spec = model_preset(QUARTIC_RESONANT, &ModelParams::epsilon(0.01)).unwrap();
        assert_eq!(spec.epsilon(), 0.01);
        assert!((spec.coefficients().eval(0.0).unwrap()[4] - 0.55).abs() < 1e-15);
        let spec = model_preset(QUARTIC_PERIODIC, &ModelParams::default()).unwrap();
        assert!(spec.perturbation().is_none());
        assert_eq!(spec.coefficients().eval(2.0).unwrap()[4], -0.5);
        let err = model_preset("duffing", &ModelParams::default()).unwrap_err();
        assert!(err.to_string().contains("quartic-periodic"));
        assert!(model_preset(QUARTIC_PERIODIC, &ModelParams::epsilon(-1.0)).is_err());
        for name in MODEL_PRESETS {
            assert_eq!(preset_info(name).unwrap().name, name);
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = model_preset(QUARTIC_PERIODIC, &ModelParams::epsilon(0.01)).unwrap();
        let traj = integrate(&spec, PhaseState::new(0.0, 1.0), (0.0, 3.0), &StepControl::default(), &Cadence::Interval(0.25)).unwrap();
        let text = traj.to_csv();
        let back = Trajectory::from_csv("x", &text).unwrap();
        assert_eq!(back.times(), traj.times());
        assert_eq!(back.states(), traj.states());
    }

    #[test]
    fn batch_matches_serial() {
        let spec = model_preset(QUARTIC_PERIODIC, &ModelParams::epsilon(0.01)).unwrap();
        let ics = neighborhood_ics(PhaseState::new(0.0, 1.0), 0.05, 7);
        assert_eq!(ics.len(), 8);
        let ctrl = StepControl::fixed(1e-2);
        let batch = integrate_batch(&spec, &ics, (0.0, 5.0), &ctrl, &Cadence::Interval(1.0));
        for (x0, b) in ics.iter().zip(batch) {
            let serial = integrate(&spec, *x0, (0.0, 5.0), &ctrl, &Cadence::Interval(1.0)).unwrap();
            assert_eq!(b.unwrap(), serial);
        }
        let grid = grid_ics((-1.5, 1.5), (-1.5, 1.5), 12);
        assert_eq!(grid.len(), 144);
        assert_eq!(grid[0], PhaseState::new(-1.5, -1.5));
        assert_eq!(grid[143], PhaseState::new(1.5, 1.5));
    }
}
