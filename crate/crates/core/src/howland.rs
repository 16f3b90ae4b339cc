//! Autonomous extension `K(x, theta, J) = H(x, theta) + J` of a
//! time-dependent Hamiltonian, with involution and independence checks
//! against a dynamical invariant.

use std::cell::RefCell;
use std::ops::ControlFlow;

use nalgebra::Matrix2x4;

use crate::algebra::PhaseState;
use crate::dynamics::{Cadence, HamiltonianSpec, Trajectory};
use crate::error::{Error, Result};
use crate::integrator::{self, DenseSolution, IntegratorStats, OdeSystem, Recorder, Sampler, Step, StepControl};
use crate::invariant::InvariantFunction;

/// Point `(q, p, theta, J)` of the extended phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtendedState {
    pub q: f64,
    pub p: f64,
    pub theta: f64,
    pub j: f64,
}

impl ExtendedState {
    pub fn new(q: f64, p: f64, theta: f64, j: f64) -> Self {
        Self { q, p, theta, j }
    }

    pub fn phase(&self) -> PhaseState {
        PhaseState::new(self.q, self.p)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q, self.p, self.theta, self.j]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self::new(y[0], y[1], y[2], y[3])
    }
}

/// Hamiltonian vector field `(dq, dp, dtheta, dJ)` of a function on the
/// extended space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowVelocity {
    pub components: [f64; 4],
}

impl FlowVelocity {
    pub fn theta(&self) -> f64 {
        self.components[2]
    }
}

#[derive(Debug, Clone)]
pub struct ExtendedHamiltonian {
    base: HamiltonianSpec,
}

pub fn extend(spec: HamiltonianSpec) -> ExtendedHamiltonian {
    ExtendedHamiltonian { base: spec }
}

impl ExtendedHamiltonian {
    pub fn base(&self) -> &HamiltonianSpec {
        &self.base
    }

    pub fn k(&self, s: ExtendedState) -> Result<f64> {
        Ok(self.base.energy(s.phase(), s.theta)? + s.j)
    }

    /// `theta0` with `J0 = -H(x0, theta0)`, so that `K = 0`.
    pub fn initial_state(&self, x0: PhaseState, theta0: f64) -> Result<ExtendedState> {
        let h = self.base.energy(x0, theta0)?;
        Ok(ExtendedState::new(x0.q, x0.p, theta0, -h))
    }

    pub fn velocity(&self, s: ExtendedState) -> Result<FlowVelocity> {
        let x = s.phase();
        let e = self.base.eval(x, s.theta)?;
        let dh = self.base.time_derivative(x, s.theta)?;
        Ok(FlowVelocity {
            components: [e.dp, -e.dq, 1.0, -dh],
        })
    }
}

struct ExtendedFlow<'a> {
    spec: &'a HamiltonianSpec,
    hv: RefCell<(Vec<f64>, Vec<f64>)>,
}

impl<'a> ExtendedFlow<'a> {
    fn new(spec: &'a HamiltonianSpec) -> Self {
        let m = spec.coefficients().dim();
        Self {
            spec,
            hv: RefCell::new((vec![0.0; m], vec![0.0; m])),
        }
    }
}

impl OdeSystem for ExtendedFlow<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let mut scratch = self.hv.borrow_mut();
        let (hv, dh) = &mut *scratch;
        let x = PhaseState::new(y[0], y[1]);
        let theta = y[2];
        self.spec.coefficients().eval_into(theta, hv)?;
        self.spec.coefficients().derivative_into(theta, dh)?;
        let e = self.spec.eval_with(x, hv)?;
        let de = self.spec.algebra().combine(dh, x)?;
        dy[0] = e.dp;
        dy[1] = -e.dq;
        dy[2] = 1.0;
        dy[3] = -de.value;
        Ok(())
    }
}

/// Sampled extended flow with `K` at each sample and optionally `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ExtendedState>,
    pub k: Vec<f64>,
    pub invariant: Option<Vec<f64>>,
    pub stats: IntegratorStats,
    pub failure: Option<String>,
    /// `|H(x0, theta0)|`, the scale for relative K drift.
    pub energy_scale: f64,
}

impl ExtendedTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Fills the `I` column.
    pub fn attach_invariant(&mut self, inv: &InvariantFunction) -> Result<()> {
        let values = self
            .states
            .iter()
            .map(|s| inv.evaluate(s.phase(), s.theta))
            .collect::<Result<Vec<_>>>()?;
        self.invariant = Some(values);
        Ok(())
    }

    /// Projection onto `(t, q, p)`.
    pub fn phase_trajectory(&self, label: &str) -> Result<Trajectory> {
        Trajectory::new(label, self.times.clone(), self.states.iter().map(|s| s.phase()).collect())
    }

    /// `max |K - K0| / max(|K0|, |H(x0, theta0)|)`.
    pub fn k_drift(&self) -> f64 {
        let Some(&k0) = self.k.first() else {
            return 0.0;
        };
        let scale = k0.abs().max(self.energy_scale);
        let max = self.k.iter().map(|k| (k - k0).abs()).fold(0.0, f64::max);
        if scale > 0.0 {
            max / scale
        } else {
            max
        }
    }

    /// `max |theta(t) - (t - t0 + theta0)|`.
    pub fn theta_slaving(&self) -> f64 {
        let (Some(&t0), Some(s0)) = (self.times.first(), self.states.first()) else {
            return 0.0;
        };
        self.times
            .iter()
            .zip(&self.states)
            .map(|(t, s)| (s.theta - s0.theta - (t - t0)).abs())
            .fold(0.0, f64::max)
    }

    /// `t,q,p,theta,J,K,I`; `I` is NaN when no invariant is attached.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,q,p,theta,J,K,I\n");
        for (n, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let i = self.invariant.as_ref().map_or(f64::NAN, |v| v[n]);
            out.push_str(&crate::csv::row(&[*t, s.q, s.p, s.theta, s.j, self.k[n], i]));
        }
        out
    }
}

fn check_start(ext: &ExtendedHamiltonian, s0: ExtendedState, t_span: (f64, f64)) -> Result<()> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::Argument(format!("time span [{t0}, {t1}] must be increasing")));
    }
    if !s0.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::Argument("initial extended state must be finite".into()));
    }
    ext.base.check_domain(s0.phase())?;
    let h = ext.base.coefficients();
    h.check(s0.theta)?;
    h.check(s0.theta + (t1 - t0))
}

/// Integrates the 4D flow of `K` from `s0` at time `t_span.0`.
pub fn integrate_extended(
    ext: &ExtendedHamiltonian,
    s0: ExtendedState,
    t_span: (f64, f64),
    ctrl: &StepControl,
    cadence: &Cadence,
) -> Result<ExtendedTrajectory> {
    check_start(ext, s0, t_span)?;
    let (t0, t1) = t_span;
    let flow = ExtendedFlow::new(&ext.base);
    let y0 = s0.to_array();
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
    let states: Vec<ExtendedState> = values.iter().map(|v| ExtendedState::from_slice(v)).collect();
    let k = states.iter().map(|&s| ext.k(s)).collect::<Result<Vec<_>>>()?;
    Ok(ExtendedTrajectory {
        times,
        states,
        k,
        invariant: None,
        stats: outcome.stats,
        failure: outcome.failure.map(|e| e.to_string()),
        energy_scale: ext.base.energy(s0.phase(), s0.theta)?.abs(),
    })
}

/// Dense record of the extended flow, for crossing detection.
pub fn extended_dense(
    ext: &ExtendedHamiltonian,
    s0: ExtendedState,
    t_span: (f64, f64),
    ctrl: &StepControl,
) -> Result<(DenseSolution, Option<Error>)> {
    check_start(ext, s0, t_span)?;
    let flow = ExtendedFlow::new(&ext.base);
    let y0 = s0.to_array();
    let mut f0 = [0.0; 4];
    flow.rhs(t_span.0, &y0, &mut f0)?;
    let mut rec = Recorder::new(4, t_span.0, &y0, &f0);
    let outcome = integrator::integrate(&flow, t_span.0, &y0, t_span.1, ctrl, &mut rec)?;
    Ok((rec.solution, outcome.failure))
}

/// Hamiltonian vector field of `I` on the extended space:
/// `(I_p, -I_q, 0, -dI/dtheta)`.
pub fn invariant_velocity(inv: &InvariantFunction, s: ExtendedState) -> Result<FlowVelocity> {
    let e = inv.evaluate_full(s.phase(), s.theta)?;
    Ok(FlowVelocity {
        components: [e.dp, -e.dq, 0.0, -e.dtheta],
    })
}

/// `{I, K}` at one point: `{I, H}_x + dI/dtheta`, with the sum of the
/// magnitudes of its three terms as a scale.
pub fn involution_bracket(ext: &ExtendedHamiltonian, inv: &InvariantFunction, s: ExtendedState) -> Result<(f64, f64)> {
    let x = s.phase();
    let h = ext.base.eval(x, s.theta)?;
    let i = inv.evaluate_full(x, s.theta)?;
    let terms = [i.dq * h.dp, -i.dp * h.dq, i.dtheta];
    Ok((terms.iter().sum(), terms.iter().map(|v| v.abs()).sum()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvolutionReport {
    pub max_abs: f64,
    /// Largest `|{I, K}|` divided by its term scale.
    pub max_relative: f64,
    pub worst: ExtendedState,
    pub points: usize,
}

pub fn involution_residual(
    ext: &ExtendedHamiltonian,
    inv: &InvariantFunction,
    pts: &[ExtendedState],
) -> Result<InvolutionReport> {
    if pts.is_empty() {
        return Err(Error::Argument("involution check needs at least one point".into()));
    }
    let mut report = InvolutionReport {
        max_abs: 0.0,
        max_relative: 0.0,
        worst: pts[0],
        points: pts.len(),
    };
    for &s in pts {
        let (r, scale) = involution_bracket(ext, inv, s)?;
        let r = r.abs();
        if r > report.max_abs || r.is_nan() {
            report.max_abs = r;
            report.worst = s;
        }
        if scale > 0.0 {
            report.max_relative = report.max_relative.max(r / scale);
        }
    }
    Ok(report)
}

/// Relative singular-value cut for the rank of `[v_K; v_I]`.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndependenceVerdict {
    pub rank: usize,
    pub singular_values: [f64; 2],
    /// `(dtheta/dt of v_K, dtheta/dt of v_I)`.
    pub certificate: (f64, f64),
    pub v_k: FlowVelocity,
    pub v_i: FlowVelocity,
}

impl IndependenceVerdict {
    /// Rank 2 and the certificate is exactly `(1, 0)`.
    pub fn independent(&self) -> bool {
        self.rank == 2 && self.certificate == (1.0, 0.0)
    }
}

pub fn independence_check(
    ext: &ExtendedHamiltonian,
    inv: &InvariantFunction,
    s: ExtendedState,
) -> Result<IndependenceVerdict> {
    let v_k = ext.velocity(s)?;
    let v_i = invariant_velocity(inv, s)?;
    let m = Matrix2x4::from_rows(&[v_k.components.into(), v_i.components.into()]);
    let sv = m.singular_values();
    let (hi, lo) = if sv[0] >= sv[1] { (sv[0], sv[1]) } else { (sv[1], sv[0]) };
    let rank = if hi == 0.0 {
        0
    } else if lo > RANK_TOL * hi {
        2
    } else {
        1
    };
    Ok(IndependenceVerdict {
        rank,
        singular_values: [hi, lo],
        certificate: (v_k.theta(), v_i.theta()),
        v_k,
        v_i,
    })
}

/// Growth factor below which an orbit is labelled bounded.
pub const BOUNDED_GROWTH: f64 = 10.0;

/// Heuristic compactness label: the orbit is called bounded when it stays
/// within `BOUNDED_GROWTH` times its initial radius for the whole run. It
/// proves nothing about the level set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundednessHeuristic {
    pub initial_radius: f64,
    pub max_radius: f64,
    pub growth: f64,
    pub bounded: bool,
}

pub fn boundedness_heuristic(traj: &Trajectory) -> BoundednessHeuristic {
    let initial_radius = traj.states().first().map_or(0.0, |x| x.norm());
    let max_radius = traj.states().iter().map(|x| x.norm()).fold(0.0, f64::max);
    let growth = traj.growth_factor();
    BoundednessHeuristic {
        initial_radius,
        max_radius,
        growth,
        bounded: growth < BOUNDED_GROWTH,
    }
}
