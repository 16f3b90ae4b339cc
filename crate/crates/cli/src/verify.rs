//! The property suite behind `lieflow verify`.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use lieflow::algebra::{
    default_sample_plan, gradient_mismatch, quadratic6, spin_classical, verify_closure_with_plan, LieAlgebra,
    PhaseState, FD_STEP, JACOBI_TOL,
};
use lieflow::dynamics::{integrate, quartic_coefficients, Cadence, HamiltonianSpec, HARMONIC};
use lieflow::howland::{extend, independence_check, integrate_extended, involution_residual};
use lieflow::integrator::StepControl;
use lieflow::invariant::{build_invariant, default_g0, invariant_drift, omega_periodic, InvariantFunction};
use lieflow::quantum::{
    evolve, expectation_conservation, isospectrality, quantum_invariant, random_pure_state, spin_matrices,
    QuantumStepControl, CLOSURE_TOL, HERMITICITY_TOL,
};
use lieflow::sections::{ftle, hausdorff_distance, level_curve_constancy, phase_section, stroboscopic, FTLE_OFFSET, FTLE_RENORM, LEVEL_TOL};

use crate::error::CliError;

/// Fault injection for exercising the suite itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Flip the sign of `gamma^k_ij` (and `gamma^k_ji`) in quadratic6.
    pub tamper: Option<(usize, usize, usize)>,
    /// Multiplies every integration step.
    pub step_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tamper: None,
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub module: &'static str,
    pub name: String,
    pub passed: bool,
    pub measured: Option<f64>,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

struct Measured {
    value: f64,
    detail: String,
}

fn measured(value: f64, detail: impl Into<String>) -> Measured {
    Measured {
        value,
        detail: detail.into(),
    }
}

struct Suite {
    opts: VerifyOptions,
    results: Vec<SuiteResult>,
}

impl Suite {
    /// Passes when the measured value lies below `threshold`.
    fn check(&mut self, module: &'static str, name: &str, threshold: f64, f: impl FnOnce(&VerifyOptions) -> Result<Measured, CliError>) {
        let start = Instant::now();
        let (passed, value, detail) = match f(&self.opts) {
            Ok(m) => (m.value < threshold, Some(m.value).filter(|v| v.is_finite()), m.detail),
            Err(e) => (false, None, format!("error: {e}")),
        };
        self.results.push(SuiteResult {
            module,
            name: name.to_string(),
            passed,
            measured: value,
            threshold,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
}

fn tampered_quadratic6(opts: &VerifyOptions) -> Result<LieAlgebra, CliError> {
    let alg = quadratic6();
    match opts.tamper {
        None => Ok(alg),
        Some((i, j, k)) => {
            let m = alg.dim();
            if i >= m || j >= m || k >= m || i == j {
                return Err(CliError::Usage(format!("tamper index ({i},{j},{k}) invalid for dimension {m}")));
            }
            Ok(alg.with_constants(alg.constants().with_sign_flip(i, j, k))?)
        }
    }
}

fn ctrl(opts: &VerifyOptions) -> StepControl {
    StepControl::fixed(lieflow::integrator::DEFAULT_STEP * opts.step_scale)
}

/// Quartic-periodic model at eps = 0 on the (possibly tampered) algebra.
fn periodic_spec(opts: &VerifyOptions) -> Result<HamiltonianSpec, CliError> {
    let alg = tampered_quadratic6(opts)?;
    Ok(HamiltonianSpec::new("quartic-periodic", Arc::new(alg), quartic_coefficients(omega_periodic()), None)?)
}

fn invariant_of(spec: &HamiltonianSpec, span: (f64, f64), ctrl: &StepControl) -> Result<InvariantFunction, CliError> {
    let h = spec.coefficients();
    let path = build_invariant(spec.algebra(), h, &default_g0(h, span.0)?, span, ctrl)?;
    Ok(InvariantFunction::new(spec.algebra().clone(), Arc::new(path))?)
}

pub fn run_suite(opts: VerifyOptions) -> Result<Vec<SuiteResult>, CliError> {
    if !(opts.step_scale > 0.0 && opts.step_scale.is_finite()) {
        return Err(CliError::Usage(format!("step scale must be positive, got {}", opts.step_scale)));
    }
    tampered_quadratic6(&opts)?;
    let mut s = Suite {
        opts,
        results: Vec::new(),
    };

    for preset in ["quadratic6", "spin-classical"] {
        s.check("algebra", &format!("closure[{preset}]"), 1e-9, |o| {
            let alg = if preset == "quadratic6" { tampered_quadratic6(o)? } else { spin_classical() };
            let r = verify_closure_with_plan(&alg, &default_sample_plan(preset), 1e-9)?;
            let (i, j) = r.worst_pair;
            Ok(measured(r.max_residual, format!("worst pair ({i},{j}) over {} points", r.samples)))
        });
        s.check("algebra", &format!("jacobi[{preset}]"), JACOBI_TOL, |o| {
            let alg = if preset == "quadratic6" { tampered_quadratic6(o)? } else { spin_classical() };
            let (r, [i, j, k, l]) = alg.constants().jacobi_residual();
            Ok(measured(r, format!("worst at ({i},{j},{k},{l})")))
        });
        s.check("algebra", &format!("gradients[{preset}]"), 1e-6, |_| {
            let alg = if preset == "quadratic6" { quadratic6() } else { spin_classical() };
            let pts = default_sample_plan(preset).points();
            let mut worst: f64 = 0.0;
            for obs in alg.basis() {
                worst = worst.max(gradient_mismatch(obs, &pts, FD_STEP)?);
            }
            Ok(measured(worst, "analytic vs central differences"))
        });
    }

    s.check("invariant", "drift[quartic-periodic,t=500]", 1e-6, |o| {
        let spec = periodic_spec(o)?;
        let c = ctrl(o);
        let inv = invariant_of(&spec, (0.0, 500.0), &c)?;
        let traj = integrate(&spec, PhaseState::new(0.0, 1.0), (0.0, 500.0), &c, &Cadence::Interval(0.1))?;
        let d = invariant_drift(&inv, &traj)?;
        Ok(measured(d.relative, format!("relative, worst at t={:.1}", d.t_max)))
    });

    let howland = |o: &VerifyOptions| -> Result<_, CliError> {
        let spec = periodic_spec(o)?;
        let c = ctrl(o);
        let ext = extend(spec.clone());
        let s0 = ext.initial_state(PhaseState::new(0.0, 1.0), 0.0)?;
        let times: Vec<f64> = (0..50).map(|k| 0.0137 + k as f64 * 199.0 / 50.0).collect();
        let tr = integrate_extended(&ext, s0, (0.0, 200.0), &c, &Cadence::Times(times))?;
        let inv = invariant_of(&spec, (0.0, 200.0), &c)?;
        Ok((ext, tr, inv))
    };
    s.check("howland", "k-drift", 1e-7, |o| {
        let (_, tr, _) = howland(o)?;
        Ok(measured(tr.k_drift(), "relative to max(|K0|, |H0|), t<=200"))
    });
    s.check("howland", "theta-slaving", 1e-9, |o| {
        let (_, tr, _) = howland(o)?;
        Ok(measured(tr.theta_slaving(), "max |theta - t|"))
    });
    s.check("howland", "involution", 1e-8, |o| {
        let (ext, tr, inv) = howland(o)?;
        let r = involution_residual(&ext, &inv, &tr.states)?;
        Ok(measured(r.max_abs, format!("{} points", r.points)))
    });
    s.check("howland", "independence", 0.5, |o| {
        let (ext, tr, inv) = howland(o)?;
        let mut dependent = 0;
        for &st in &tr.states {
            if !independence_check(&ext, &inv, st)?.independent() {
                dependent += 1;
            }
        }
        Ok(measured(dependent as f64, format!("points lacking rank 2 or the (1,0) certificate, of {}", tr.states.len())))
    });

    s.check("sections", "level-curves", LEVEL_TOL, |o| {
        let spec = periodic_spec(o)?;
        let c = ctrl(o);
        let inv = invariant_of(&spec, (0.0, 201.0), &c)?;
        let mut worst: f64 = 0.0;
        for k in 0..4 {
            let x0 = PhaseState::new(0.2 * k as f64, 0.3 + 0.3 * k as f64);
            let pts = stroboscopic(&spec, x0, std::f64::consts::FRAC_PI_2, 50, &c, "orbit")?;
            let r = level_curve_constancy(&pts, &inv)?;
            worst = worst.max(r.max_deviation / (1.0 + r.mean.abs()));
        }
        Ok(measured(worst, "I spread / (1+|mean|), 4 orbits x 51 strobes"))
    });
    s.check("sections", "phase-vs-stroboscopic", 1e-6, |o| {
        let spec = periodic_spec(o)?;
        let c = ctrl(o);
        let x0 = PhaseState::new(0.0, 1.0);
        let strobe = stroboscopic(&spec, x0, std::f64::consts::FRAC_PI_2, 25, &c, "a")?;
        let ext = extend(spec);
        let phase = phase_section(&ext, ext.initial_state(x0, 0.0)?, 4.0, 25, &c, "b")?;
        Ok(measured(hausdorff_distance(&strobe.points, &phase.points), "Hausdorff distance"))
    });
    s.check("sections", "ftle[harmonic]", lieflow::sections::CHAOS_THRESHOLD, |o| {
        let spec = lieflow::dynamics::model_preset(HARMONIC, &Default::default())?;
        let e = ftle(&spec, PhaseState::new(1.2, 0.0), (0.0, 200.0), FTLE_RENORM, FTLE_OFFSET, &ctrl(o))?;
        Ok(measured(e.lambda, "integrable oscillator"))
    });

    for twice in [1u32, 10] {
        let tag = format!("S={}", twice as f64 / 2.0);
        s.check("quantum", &format!("algebra[{tag}]"), CLOSURE_TOL, |_| {
            let alg = spin_matrices(twice)?;
            let herm = alg.hermiticity_residual();
            if herm > HERMITICITY_TOL {
                return Ok(measured(f64::INFINITY, format!("hermiticity {herm:e}")));
            }
            let (r, (i, j)) = alg.closure_residual();
            Ok(measured(r, format!("commutator closure, worst pair ({i},{j})")))
        });
        let evolution = |o: &VerifyOptions| -> Result<_, CliError> {
            let alg = Arc::new(spin_matrices(twice)?);
            let field = lieflow::dynamics::field_preset("quasiperiodic")?;
            let qc = QuantumStepControl {
                step: lieflow::quantum::DEFAULT_QUANTUM_STEP * o.step_scale,
                record_every: 10,
                ..Default::default()
            };
            let evo = evolve(&alg, &field, &random_pure_state(alg.dim_rep(), 42), (0.0, 100.0), &qc)?;
            let inv = quantum_invariant(alg, &field, &field.eval(0.0)?, (0.0, 100.0), &ctrl(o))?;
            Ok((evo, inv))
        };
        s.check("quantum", &format!("unitarity[{tag}]"), 1e-10, |o| {
            let (evo, _) = evolution(o)?;
            Ok(measured(evo.norm_drift(), format!("{} steps", evo.steps)))
        });
        s.check("quantum", &format!("invariant-expectation[{tag}]"), 1e-7, |o| {
            let (evo, inv) = evolution(o)?;
            let c = expectation_conservation(&evo, &inv)?;
            Ok(measured(c.max_abs, format!("max |<I>(t) - <I>(0)|, worst at t={:.1}", c.t_max)))
        });
        s.check("quantum", &format!("isospectrality[{tag}]"), 1e-8, |o| {
            let (evo, inv) = evolution(o)?;
            let times: Vec<f64> = evo.times.iter().step_by(50).copied().collect();
            Ok(measured(isospectrality(&inv, &times)?, "max eigenvalue shift"))
        });
    }
    Ok(s.results)
}

pub fn table(results: &[SuiteResult]) -> String {
    let width = results.iter().map(|r| r.module.len() + r.name.len() + 1).max().unwrap_or(10);
    let mut out = format!("{:<6} {:<width$} {:>12} {:>10}  detail\n", "status", "check", "measured", "threshold");
    for r in results {
        let m = r.measured.map_or("-".to_string(), |v| format!("{v:.3e}"));
        let status = if r.passed { "PASS" } else { "FAIL" };
        let name = format!("{}/{}", r.module, r.name);
        out.push_str(&format!("{status:<6} {name:<width$} {m:>12} {:>10.1e}  {}\n", r.threshold, r.detail));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    out
}
