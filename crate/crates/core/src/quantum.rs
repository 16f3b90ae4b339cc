//! Spin-S representations of the classical spin algebra: Schrödinger
//! evolution under `H(t) = B(t)·S`, the quantum invariant built from the
//! same coefficient ODE, and the large-S comparison with the classical flow.
//! `hbar = 1` throughout.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{spin_classical, PhaseState, StructureConstants, SPIN_BRACKETS};
use crate::dynamics::{integrate, model_preset, Cadence, ModelParams, TWO_LEVEL};
use crate::error::{Error, Result};
use crate::integrator::StepControl;
use crate::invariant::{build_coefficient_path, CoefficientPath, Drive, TimeCoefficients};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const CLOSURE_TOL: f64 = 1e-10;
/// Largest admissible `step * |H| / hbar`.
pub const STEP_RATIO_LIMIT: f64 = 0.1;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Hermitian generators `O_i` with `[O_i, O_j] / (i hbar) = sum_k gamma_ijk O_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumAlgebra {
    name: String,
    generators: Vec<CMatrix>,
    constants: StructureConstants,
    hbar: f64,
}

impl QuantumAlgebra {
    /// Validates Hermiticity and commutator closure.
    pub fn new(name: impl Into<String>, generators: Vec<CMatrix>, constants: StructureConstants, hbar: f64) -> Result<Self> {
        if generators.len() != constants.dim() {
            return Err(Error::Dimension {
                expected: constants.dim(),
                got: generators.len(),
            });
        }
        let n = generators.first().map_or(0, |g| g.nrows());
        if n == 0 || generators.iter().any(|g| g.nrows() != n || g.ncols() != n) {
            return Err(Error::Argument("generators must be square matrices of one size".into()));
        }
        let alg = Self {
            name: name.into(),
            generators,
            constants,
            hbar,
        };
        let herm = alg.hermiticity_residual();
        if herm >= HERMITICITY_TOL {
            return Err(Error::Argument(format!("generators not Hermitian (residual {herm:e})")));
        }
        let (closure, (i, j)) = alg.closure_residual();
        if closure >= CLOSURE_TOL {
            return Err(Error::Argument(format!(
                "commutator of generators {i} and {j} leaves the span (residual {closure:e})"
            )));
        }
        Ok(alg)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    /// Size `N` of the matrices.
    pub fn dim_rep(&self) -> usize {
        self.generators[0].nrows()
    }

    pub fn generators(&self) -> &[CMatrix] {
        &self.generators
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.constants
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// `S` when the representation has dimension `2S + 1`.
    pub fn spin(&self) -> f64 {
        0.5 * (self.dim_rep() as f64 - 1.0)
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.generators.iter().map(|g| max_abs(&(g - g.adjoint()))).fold(0.0, f64::max)
    }

    /// Worst `|[O_i, O_j] / (i hbar) - sum_k gamma_ijk O_k|` and its pair.
    pub fn closure_residual(&self) -> (f64, (usize, usize)) {
        let mut worst = (0.0, (0, 0));
        let scale = Complex64::new(0.0, -1.0 / self.hbar);
        for i in 0..self.dim() {
            for j in i + 1..self.dim() {
                let (a, b) = (&self.generators[i], &self.generators[j]);
                let mut r = (a * b - b * a) * scale;
                for k in 0..self.dim() {
                    let c = self.constants.get(i, j, k);
                    if c != 0.0 {
                        r -= &self.generators[k] * Complex64::new(c, 0.0);
                    }
                }
                let v = max_abs(&r);
                if v > worst.0 {
                    worst = (v, (i, j));
                }
            }
        }
        worst
    }

    /// `|sum_i O_i^2 - hbar^2 S (S + 1) 1|` for spin representations.
    pub fn casimir_residual(&self) -> f64 {
        let n = self.dim_rep();
        let s = self.spin();
        let c = self.casimir();
        max_abs(&(c - CMatrix::identity(n, n) * Complex64::new(self.hbar * self.hbar * s * (s + 1.0), 0.0)))
    }

    pub fn casimir(&self) -> CMatrix {
        self.generators.iter().fold(CMatrix::zeros(self.dim_rep(), self.dim_rep()), |acc, g| acc + g * g)
    }

    /// `sum_k c_k O_k`.
    pub fn combine(&self, coeffs: &[f64]) -> CMatrix {
        let n = self.dim_rep();
        let mut out = CMatrix::zeros(n, n);
        for (c, g) in coeffs.iter().zip(&self.generators) {
            if *c != 0.0 {
                out += g * Complex64::new(*c, 0.0);
            }
        }
        out
    }
}

/// `(S_x, S_y, S_z)` in the `S_z` eigenbasis ordered `m = S, S-1, ..., -S`,
/// for `S = twice_s / 2`.
pub fn spin_matrices(twice_s: u32) -> Result<QuantumAlgebra> {
    if twice_s == 0 {
        return Err(Error::Argument("spin must be at least 1/2".into()));
    }
    let n = twice_s as usize + 1;
    let s = 0.5 * twice_s as f64;
    let m = |a: usize| s - a as f64;
    let mut raise = CMatrix::zeros(n, n);
    for a in 1..n {
        let ma = m(a);
        raise[(a - 1, a)] = Complex64::new((s * (s + 1.0) - ma * (ma + 1.0)).sqrt(), 0.0);
    }
    let lower = raise.adjoint();
    let sx = (&raise + &lower) * Complex64::new(0.5, 0.0);
    let sy = (&raise - &lower) * Complex64::new(0.0, -0.5);
    let sz = CMatrix::from_diagonal(&CVector::from_iterator(n, (0..n).map(|a| Complex64::new(m(a), 0.0))));
    let constants = StructureConstants::from_brackets(3, &SPIN_BRACKETS)?;
    QuantumAlgebra::new(format!("spin-{}/2", twice_s), vec![sx, sy, sz], constants, 1.0)
}

/// `S` as a number; rejects values that are not non-negative half-integers.
pub fn twice_spin(s: f64) -> Result<u32> {
    let t = 2.0 * s;
    if !(t >= 1.0) || t.fract() != 0.0 || t > 1e6 {
        return Err(Error::Argument(format!("spin must be a positive half-integer, got {s}")));
    }
    Ok(t as u32)
}

/// Pure or mixed state.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(CVector),
    Mixed(CMatrix),
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.len(),
            QuantumState::Mixed(r) => r.nrows(),
        }
    }

    /// `|psi|` or `tr rho`.
    pub fn norm(&self) -> f64 {
        match self {
            QuantumState::Pure(v) => v.norm(),
            QuantumState::Mixed(r) => r.trace().re,
        }
    }

    /// `Re tr(rho A)`.
    pub fn expectation(&self, a: &CMatrix) -> f64 {
        match self {
            QuantumState::Pure(v) => v.dotc(&(a * v)).re,
            QuantumState::Mixed(r) => (r * a).trace().re,
        }
    }

    fn apply(&self, u: &CMatrix) -> Self {
        match self {
            QuantumState::Pure(v) => QuantumState::Pure(u * v),
            QuantumState::Mixed(r) => QuantumState::Mixed(u * r * u.adjoint()),
        }
    }

    /// Worst violation of normalization, Hermiticity and positivity.
    pub fn validity_residual(&self) -> f64 {
        match self {
            QuantumState::Pure(v) => (v.norm() - 1.0).abs(),
            QuantumState::Mixed(r) => {
                let herm = max_abs(&(r - r.adjoint()));
                let trace = (r.trace() - Complex64::new(1.0, 0.0)).norm();
                let min_eig = SymmetricEigen::new(r.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
                herm.max(trace).max((-min_eig).max(0.0))
            }
        }
    }
}

/// `exp(-i tau A)` for Hermitian `A`, with the largest `|eigenvalue|`.
pub fn exp_hermitian(a: &CMatrix, tau: f64) -> (CMatrix, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let radius = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let phases = CVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| (-I * (tau * l)).exp()));
    let v = &eig.eigenvectors;
    (v * CMatrix::from_diagonal(&phases) * v.adjoint(), radius)
}

/// Spin-coherent state pointing along `O(x0)`:
/// `exp(-i phi S_z) exp(-i theta S_y) |S, S>` with `cos theta = -q`, `phi = p`.
pub fn spin_coherent_state(alg: &QuantumAlgebra, x0: PhaseState) -> Result<QuantumState> {
    spin_classical().check_domain(x0)?;
    let theta = (-x0.q).acos();
    let phi = x0.p;
    let n = alg.dim_rep();
    let mut top = CVector::zeros(n);
    top[0] = Complex64::new(1.0, 0.0);
    let (ry, _) = exp_hermitian(&alg.generators()[1], theta);
    let (rz, _) = exp_hermitian(&alg.generators()[2], phi);
    Ok(QuantumState::Pure(rz * ry * top))
}

/// Normalized pure state with uniformly drawn real and imaginary parts.
pub fn random_pure_state(dim: usize, seed: u64) -> QuantumState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = CVector::from_iterator(
        dim,
        (0..dim).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
    );
    let norm = v.norm();
    QuantumState::Pure(v / Complex64::new(norm, 0.0))
}

/// `A A^dagger / tr(A A^dagger)` for a random `dim x rank` matrix `A`.
pub fn random_mixed_state(dim: usize, rank: usize, seed: u64) -> QuantumState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = CMatrix::from_fn(dim, rank.max(1), |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    QuantumState::Mixed(rho / tr)
}

/// Smooth field with each component a sum of `modes` random cosines,
/// amplitudes in `[-1, 1] / modes` and frequencies in `[0.2, 2]`.
pub fn random_field(seed: u64, modes: usize) -> TimeCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = modes.max(1);
    let components = (0..3)
        .map(|k| {
            let terms: Vec<(f64, f64, f64)> = (0..modes)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0) / modes as f64,
                        rng.random_range(0.2..2.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            Drive::new(format!("random[{seed}].{k}"), move |t| {
                terms.iter().fold((0.0, 0.0), |(v, d), &(a, w, ph)| {
                    let (s, c) = (w * t + ph).sin_cos();
                    (v + a * c, d - a * w * s)
                })
            })
        })
        .collect();
    TimeCoefficients::everywhere(format!("random-field seed {seed}"), components)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagator {
    /// `exp(-i d H(t + d/2))`, second order.
    Midpoint,
    /// Two-exponential commutator-free Magnus scheme, fourth order.
    #[default]
    Magnus4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumStepControl {
    pub step: f64,
    pub propagator: Propagator,
    /// Keep every n-th state (the final state is always kept).
    pub record_every: usize,
}

pub const DEFAULT_QUANTUM_STEP: f64 = 2e-3;

impl Default for QuantumStepControl {
    fn default() -> Self {
        Self {
            step: DEFAULT_QUANTUM_STEP,
            propagator: Propagator::Magnus4,
            record_every: 1,
        }
    }
}

/// Recorded states of a Schrödinger evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumEvolution {
    pub times: Vec<f64>,
    pub states: Vec<QuantumState>,
    pub steps: usize,
    /// Largest `step * |H| / hbar` met.
    pub max_step_ratio: f64,
}

impl QuantumEvolution {
    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.norm()).collect()
    }

    /// `max |norm(t) - norm(0)|`.
    pub fn norm_drift(&self) -> f64 {
        let n0 = self.states[0].norm();
        self.states.iter().map(|s| (s.norm() - n0).abs()).fold(0.0, f64::max)
    }

    /// `<O_k>` at each record.
    pub fn expectations(&self, alg: &QuantumAlgebra) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| alg.generators().iter().map(|g| s.expectation(g)).collect())
            .collect()
    }

    /// `max |<C>(t) - <C>(0)| / |<C>(0)|` for the Casimir `C = sum O_k^2`.
    pub fn casimir_drift(&self, alg: &QuantumAlgebra) -> f64 {
        let c = alg.casimir();
        let c0 = self.states[0].expectation(&c);
        let drift = self.states.iter().map(|s| (s.expectation(&c) - c0).abs()).fold(0.0, f64::max);
        if c0 != 0.0 {
            drift / c0.abs()
        } else {
            drift
        }
    }
}

const MAGNUS_C: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];
const MAGNUS_A: [f64; 2] = [0.25 + 0.288_675_134_594_812_9, 0.25 - 0.288_675_134_594_812_9];

/// Solves `i hbar psi' = H(t) psi` with `H = sum_k b_k(t) O_k` on a uniform
/// grid of `ceil(span / step)` steps. Rejects steps with `step |H| / hbar`
/// above [`STEP_RATIO_LIMIT`].
pub fn evolve(
    alg: &QuantumAlgebra,
    field: &TimeCoefficients,
    psi0: &QuantumState,
    t_span: (f64, f64),
    ctrl: &QuantumStepControl,
) -> Result<QuantumEvolution> {
    if field.dim() != alg.dim() {
        return Err(Error::Dimension {
            expected: alg.dim(),
            got: field.dim(),
        });
    }
    if psi0.dim() != alg.dim_rep() {
        return Err(Error::Dimension {
            expected: alg.dim_rep(),
            got: psi0.dim(),
        });
    }
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::Argument(format!("time span [{t0}, {t1}] must be increasing")));
    }
    if !(ctrl.step > 0.0) || ctrl.record_every == 0 {
        return Err(Error::Argument("step must be positive and record_every at least 1".into()));
    }
    field.check(t0)?;
    field.check(t1)?;
    let n = ((t1 - t0) / ctrl.step - 1e-9).ceil().max(1.0) as usize;
    let d = (t1 - t0) / n as f64;
    let hbar = alg.hbar();
    let mut hv = vec![0.0; alg.dim()];
    let mut h_at = |t: f64| -> Result<CMatrix> {
        field.eval_into(t, &mut hv)?;
        Ok(alg.combine(&hv))
    };
    let mut state = psi0.clone();
    let mut out = QuantumEvolution {
        times: vec![t0],
        states: vec![state.clone()],
        steps: n,
        max_step_ratio: 0.0,
    };
    let tau = d / hbar;
    for k in 0..n {
        let t = t0 + k as f64 * d;
        let (u, radius) = match ctrl.propagator {
            Propagator::Midpoint => exp_hermitian(&h_at(t + 0.5 * d)?, tau),
            Propagator::Magnus4 => {
                let h1 = h_at(t + MAGNUS_C[0] * d)?;
                let h2 = h_at(t + MAGNUS_C[1] * d)?;
                let a = MAGNUS_A.map(|a| Complex64::new(a, 0.0));
                let (first, r1) = exp_hermitian(&(&h1 * a[0] + &h2 * a[1]), tau);
                let (second, r2) = exp_hermitian(&(&h1 * a[1] + &h2 * a[0]), tau);
                // Each exponent carries half of H.
                (second * first, 2.0 * r1.max(r2))
            }
        };
        let ratio = d * radius / hbar;
        out.max_step_ratio = out.max_step_ratio.max(ratio);
        if ratio > STEP_RATIO_LIMIT {
            return Err(Error::StepTooLarge {
                step: d,
                ratio,
                hint: 0.9 * STEP_RATIO_LIMIT * hbar / radius,
            });
        }
        state = state.apply(&u);
        if (k + 1) % ctrl.record_every == 0 || k + 1 == n {
            out.times.push(t0 + (k + 1) as f64 * d);
            out.states.push(state.clone());
        }
    }
    Ok(out)
}

/// `I(t) = sum_k g_k(t) O_k` with `g` from the shared coefficient ODE.
#[derive(Debug, Clone)]
pub struct QuantumInvariant {
    algebra: Arc<QuantumAlgebra>,
    path: Arc<CoefficientPath>,
}

impl QuantumInvariant {
    pub fn path(&self) -> &CoefficientPath {
        &self.path
    }

    pub fn matrix(&self, t: f64) -> Result<CMatrix> {
        Ok(self.algebra.combine(&self.path.eval(t)?))
    }

    pub fn expectation(&self, state: &QuantumState, t: f64) -> Result<f64> {
        Ok(state.expectation(&self.matrix(t)?))
    }

    /// Ascending eigenvalues of `I(t)`.
    pub fn spectrum(&self, t: f64) -> Result<Vec<f64>> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix(t)?).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }
}

/// Builds `g(t)` through the same code path as the classical invariant,
/// using the algebra's own structure constants.
pub fn quantum_invariant(
    alg: Arc<QuantumAlgebra>,
    field: &TimeCoefficients,
    g0: &[f64],
    t_span: (f64, f64),
    ctrl: &StepControl,
) -> Result<QuantumInvariant> {
    let path = build_coefficient_path(alg.name(), alg.constants(), field, g0, t_span, ctrl)?;
    Ok(QuantumInvariant {
        algebra: alg,
        path: Arc::new(path),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    pub values: Vec<f64>,
    pub initial: f64,
    /// `max_t |<I(t)> - <I(0)>|`.
    pub max_abs: f64,
    pub t_max: f64,
}

pub fn expectation_conservation(evo: &QuantumEvolution, inv: &QuantumInvariant) -> Result<ConservationReport> {
    let values = evo
        .times
        .iter()
        .zip(&evo.states)
        .map(|(&t, s)| inv.expectation(s, t))
        .collect::<Result<Vec<_>>>()?;
    let initial = values[0];
    let (mut max_abs, mut t_max) = (0.0, evo.times[0]);
    for (t, v) in evo.times.iter().zip(&values) {
        let d = (v - initial).abs();
        if d > max_abs {
            max_abs = d;
            t_max = *t;
        }
    }
    Ok(ConservationReport {
        values,
        initial,
        max_abs,
        t_max,
    })
}

/// `max_t max_i |lambda_i(t) - lambda_i(t0)|` over `times`.
pub fn isospectrality(inv: &QuantumInvariant, times: &[f64]) -> Result<f64> {
    let Some(&t0) = times.first() else {
        return Ok(0.0);
    };
    let s0 = inv.spectrum(t0)?;
    let mut worst: f64 = 0.0;
    for &t in times {
        let s = inv.spectrum(t)?;
        worst = worst.max(s.iter().zip(&s0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(worst)
}

/// `t,Sx,Sy,Sz,I_expect,norm`; `I_expect` is NaN without an invariant.
pub fn expectation_csv(alg: &QuantumAlgebra, evo: &QuantumEvolution, inv: Option<&QuantumInvariant>) -> Result<String> {
    let mut out = String::from("t,Sx,Sy,Sz,I_expect,norm\n");
    for ((t, s), e) in evo.times.iter().zip(&evo.states).zip(evo.expectations(alg)) {
        let i = match inv {
            Some(inv) => inv.expectation(s, *t)?,
            None => f64::NAN,
        };
        out.push_str(&crate::csv::row(&[*t, e[0], e[1], e[2], i, s.norm()]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalLimitReport {
    pub spin: f64,
    pub times: Vec<f64>,
    /// `|<S>(t) / (hbar S) - O(x(t))|` at each record.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    pub t_max: f64,
    /// Closest approach of the classical orbit to the chart poles, `1 - |q|`.
    pub min_pole_distance: f64,
}

/// Evolves the spin-coherent state for `x0` and the classical two-level
/// flow from `x0` under the same field and compares normalized expectations.
pub fn classical_limit_check(
    alg: &QuantumAlgebra,
    field: &TimeCoefficients,
    x0: PhaseState,
    t_span: (f64, f64),
    qctrl: &QuantumStepControl,
    cctrl: &StepControl,
) -> Result<ClassicalLimitReport> {
    let psi0 = spin_coherent_state(alg, x0)?;
    let evo = evolve(alg, field, &psi0, t_span, qctrl)?;
    let spec = model_preset(TWO_LEVEL, &ModelParams::field(field.clone()))?;
    let traj = integrate(&spec, x0, t_span, cctrl, &Cadence::Times(evo.times.clone()))?;
    if let Some(f) = &traj.failure {
        return Err(Error::Integration {
            t: traj.last().map_or(t_span.0, |(t, _)| t),
            reason: format!("classical flow: {f}"),
        });
    }
    let norm = alg.hbar() * alg.spin();
    let classical = spec.algebra();
    let mut deviation = Vec::with_capacity(evo.times.len());
    let mut o = vec![Default::default(); classical.dim()];
    for (s, x) in evo.expectations(alg).iter().zip(traj.states()) {
        classical.eval_basis(*x, &mut o)?;
        let d = s.iter().zip(&o).map(|(a, b)| (a / norm - b.value).powi(2)).sum::<f64>().sqrt();
        deviation.push(d);
    }
    let (mut max_deviation, mut t_max) = (0.0, t_span.0);
    for (t, d) in evo.times.iter().zip(&deviation) {
        if *d > max_deviation {
            max_deviation = *d;
            t_max = *t;
        }
    }
    let min_pole_distance = traj.states().iter().map(|x| 1.0 - x.q.abs()).fold(f64::INFINITY, f64::min);
    Ok(ClassicalLimitReport {
        spin: alg.spin(),
        times: evo.times,
        deviation,
        max_deviation,
        t_max,
        min_pole_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::field_preset;
    use crate::invariant::build_invariant;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn spin_half_is_half_pauli() {
        let alg = spin_matrices(1).unwrap();
        let [sx, sy, sz] = [0, 1, 2].map(|k| alg.generators()[k].clone());
        let h = 0.5;
        assert_eq!(sx, CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(h, 0.0), c(h, 0.0), c(0.0, 0.0)]));
        assert_eq!(sy, CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -h), c(0.0, h), c(0.0, 0.0)]));
        assert_eq!(sz, CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-h, 0.0)]));
    }

    #[test]
    fn spin_one_diagonal() {
        let alg = spin_matrices(2).unwrap();
        let d: Vec<f64> = alg.generators()[2].diagonal().iter().map(|z| z.re).collect();
        assert_eq!(d, [1.0, 0.0, -1.0]);
    }

    #[test]
    fn casimir_and_closure_for_many_spins() {
        for twice in 1..=40 {
            let alg = spin_matrices(twice).unwrap();
            assert!(alg.casimir_residual() < 1e-10, "S={}", alg.spin());
            assert!(alg.closure_residual().0 < CLOSURE_TOL);
            assert!(alg.hermiticity_residual() < HERMITICITY_TOL);
        }
        assert!(spin_matrices(0).is_err());
        assert!(twice_spin(0.75).is_err());
        assert_eq!(twice_spin(2.5).unwrap(), 5);
    }

    #[test]
    fn tampered_generators_are_rejected() {
        let alg = spin_matrices(1).unwrap();
        let flipped = alg.constants().with_sign_flip(0, 1, 2);
        assert!(QuantumAlgebra::new("bad", alg.generators().to_vec(), flipped, 1.0).is_err());
    }

    #[test]
    fn eigenstate_is_stationary() {
        let alg = spin_matrices(1).unwrap();
        let psi = QuantumState::Pure(CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]));
        let evo = evolve(&alg, &field_preset("constant-z").unwrap(), &psi, (0.0, 10.0), &QuantumStepControl::default()).unwrap();
        for e in evo.expectations(&alg) {
            assert!((e[2] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rabi_flopping() {
        let alg = spin_matrices(1).unwrap();
        let psi = QuantumState::Pure(CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]));
        let ctrl = QuantumStepControl {
            record_every: 50,
            ..Default::default()
        };
        let evo = evolve(&alg, &field_preset("rabi-x").unwrap(), &psi, (0.0, 20.0), &ctrl).unwrap();
        for (t, e) in evo.times.iter().zip(evo.expectations(&alg)) {
            assert!((e[2] - 0.5 * t.cos()).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn magnus_is_fourth_order_and_midpoint_second() {
        let alg = spin_matrices(3).unwrap();
        let field = random_field(7, 3);
        let psi = random_pure_state(4, 1);
        let run = |p: Propagator, step: f64| {
            let ctrl = QuantumStepControl {
                step,
                propagator: p,
                record_every: usize::MAX,
            };
            match evolve(&alg, &field, &psi, (0.0, 4.0), &ctrl).unwrap().states.pop().unwrap() {
                QuantumState::Pure(v) => v,
                QuantumState::Mixed(_) => unreachable!(),
            }
        };
        let reference = run(Propagator::Magnus4, 1e-3);
        for (p, lo, hi) in [(Propagator::Magnus4, 12.0, 20.0), (Propagator::Midpoint, 3.5, 4.5)] {
            let e1 = (run(p, 0.04) - &reference).norm();
            let e2 = (run(p, 0.02) - &reference).norm();
            let ratio = e1 / e2;
            assert!(ratio > lo && ratio < hi, "{p:?}: {ratio}");
        }
    }

    #[test]
    fn oversized_step_is_rejected_with_hint() {
        let alg = spin_matrices(40).unwrap();
        let psi = random_pure_state(41, 0);
        let ctrl = QuantumStepControl {
            step: 0.05,
            ..Default::default()
        };
        match evolve(&alg, &field_preset("rabi-x").unwrap(), &psi, (0.0, 1.0), &ctrl) {
            Err(Error::StepTooLarge { ratio, hint, .. }) => {
                assert!((ratio - 1.0).abs() < 1e-9, "{ratio}");
                assert!((hint - 0.0045).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixed_states_stay_valid() {
        let alg = spin_matrices(3).unwrap();
        let rho = random_mixed_state(4, 2, 3);
        assert!(rho.validity_residual() < 1e-12);
        let ctrl = QuantumStepControl {
            record_every: 1000,
            ..Default::default()
        };
        let evo = evolve(&alg, &random_field(2, 2), &rho, (0.0, 20.0), &ctrl).unwrap();
        assert!(evo.states.iter().all(|s| s.validity_residual() < 1e-10));
        assert!(evo.casimir_drift(&alg) < 1e-10);
    }

    #[test]
    fn quantum_and_classical_paths_are_identical() {
        let field = random_field(11, 2);
        let qalg = Arc::new(spin_matrices(4).unwrap());
        let g0 = [0.3, -0.2, 0.7];
        let ctrl = StepControl::default();
        let q = quantum_invariant(qalg, &field, &g0, (0.0, 5.0), &ctrl).unwrap();
        let cpath = build_invariant(&spin_classical(), &field, &g0, (0.0, 5.0), &ctrl).unwrap();
        assert_eq!(q.path().grid(), cpath.grid());
        for n in 0..cpath.grid().len() {
            assert_eq!(q.path().node(n), cpath.node(n));
        }
    }

    #[test]
    fn commuting_and_rotating_invariants() {
        let alg = Arc::new(spin_matrices(1).unwrap());
        let field = field_preset("constant-z").unwrap();
        let ctrl = StepControl::default();
        let iz = quantum_invariant(alg.clone(), &field, &[0.0, 0.0, 1.0], (0.0, 3.0), &ctrl).unwrap();
        assert!(max_abs(&(iz.matrix(2.0).unwrap() - &alg.generators()[2])) < 1e-15);
        let ix = quantum_invariant(alg.clone(), &field, &[1.0, 0.0, 0.0], (0.0, 3.0), &ctrl).unwrap();
        let t: f64 = 2.3;
        let expect = alg.combine(&[t.cos(), t.sin(), 0.0]);
        assert!(max_abs(&(ix.matrix(t).unwrap() - expect)) < 1e-12);
    }

    #[test]
    fn precession_conserves_the_rotating_invariant() {
        let alg = Arc::new(spin_matrices(1).unwrap());
        let field = field_preset("constant-z").unwrap();
        let psi = random_pure_state(2, 5);
        let evo = evolve(&alg, &field, &psi, (0.0, 10.0), &QuantumStepControl::default()).unwrap();
        let inv = quantum_invariant(alg.clone(), &field, &[1.0, 0.0, 0.0], (0.0, 10.0), &StepControl::default()).unwrap();
        assert!(expectation_conservation(&evo, &inv).unwrap().max_abs < 1e-8);
        let zero = quantum_invariant(alg, &field, &[0.0; 3], (0.0, 10.0), &StepControl::default()).unwrap();
        assert_eq!(expectation_conservation(&evo, &zero).unwrap().max_abs, 0.0);
    }

    #[test]
    fn invariant_outside_path_is_interval_error() {
        let alg = Arc::new(spin_matrices(1).unwrap());
        let field = field_preset("constant-z").unwrap();
        let psi = random_pure_state(2, 5);
        let evo = evolve(&alg, &field, &psi, (0.0, 2.0), &QuantumStepControl::default()).unwrap();
        let inv = quantum_invariant(alg, &field, &[1.0, 0.0, 0.0], (0.0, 1.0), &StepControl::default()).unwrap();
        assert!(matches!(expectation_conservation(&evo, &inv), Err(Error::Interval { .. })));
    }

    #[test]
    fn coherent_state_points_along_the_chart() {
        let alg = spin_matrices(7).unwrap();
        let x0 = PhaseState::new(0.3, 1.1);
        let psi = spin_coherent_state(&alg, x0).unwrap();
        let mut o = vec![Default::default(); 3];
        spin_classical().eval_basis(x0, &mut o).unwrap();
        let s = alg.spin();
        for (gen, ok) in alg.generators().iter().zip(&o) {
            assert!((psi.expectation(gen) / s - ok.value).abs() < 1e-12);
        }
        assert!(matches!(
            spin_coherent_state(&alg, PhaseState::new(1.0, 0.0)),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn classical_limit_exact_for_precession() {
        let alg = spin_matrices(1).unwrap();
        let ctrl = QuantumStepControl {
            record_every: 10,
            ..Default::default()
        };
        let r = classical_limit_check(&alg, &field_preset("constant-z").unwrap(), PhaseState::new(0.2, 0.4), (0.0, 20.0), &ctrl, &StepControl::default()).unwrap();
        assert!(r.max_deviation < 1e-6, "{}", r.max_deviation);
        let zero = TimeCoefficients::constant(&[0.0; 3]);
        let r = classical_limit_check(&alg, &zero, PhaseState::new(0.2, 0.4), (0.0, 5.0), &ctrl, &StepControl::default()).unwrap();
        assert!(r.max_deviation < 1e-15);
    }

    #[test]
    fn csv_columns() {
        let alg = Arc::new(spin_matrices(1).unwrap());
        let field = field_preset("constant-z").unwrap();
        let psi = random_pure_state(2, 5);
        let ctrl = QuantumStepControl {
            record_every: 100,
            ..Default::default()
        };
        let evo = evolve(&alg, &field, &psi, (0.0, 1.0), &ctrl).unwrap();
        let inv = quantum_invariant(alg.clone(), &field, &[1.0, 0.0, 0.0], (0.0, 1.0), &StepControl::default()).unwrap();
        let csv = expectation_csv(&alg, &evo, Some(&inv)).unwrap();
        let (header, rows) = crate::csv::parse(&csv).unwrap();
        assert_eq!(header, ["t", "Sx", "Sy", "Sz", "I_expect", "norm"]);
        assert_eq!(rows.len(), 6);
    }
}
