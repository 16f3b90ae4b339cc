//! Finite Lie algebras of phase-space observables and their Poisson-bracket
//! closure.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};

/// Canonical pair `(q, p)` with `{q, p} = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseState {
    pub q: f64,
    pub p: f64,
}

impl PhaseState {
    pub const fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.q.hypot(self.p)
    }

    pub fn distance(&self, other: &PhaseState) -> f64 {
        (self.q - other.q).hypot(self.p - other.p)
    }
}

/// Open rectangle `q_lo < q < q_hi`, `p_lo < p < p_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub q: (f64, f64),
    pub p: (f64, f64),
}

impl Domain {
    pub const PLANE: Domain = Domain {
        q: (f64::NEG_INFINITY, f64::INFINITY),
        p: (f64::NEG_INFINITY, f64::INFINITY),
    };

    pub fn contains(&self, x: PhaseState) -> bool {
        x.q > self.q.0 && x.q < self.q.1 && x.p > self.p.0 && x.p < self.p.1
    }

    pub fn intersect(&self, other: &Domain) -> Domain {
        Domain {
            q: (self.q.0.max(other.q.0), self.q.1.min(other.q.1)),
            p: (self.p.0.max(other.p.0), self.p.1.min(other.p.1)),
        }
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::PLANE
    }
}

/// Margin kept from the poles of the spin chart, where `sqrt(1 - q^2)` has
/// unbounded gradient.
pub const SPIN_CHART_MARGIN: f64 = 1e-6;

/// Value and first derivatives of an observable at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub value: f64,
    pub dq: f64,
    pub dp: f64,
}

type EvalFn = dyn Fn(PhaseState) -> Evaluation + Send + Sync;

/// A smooth phase-space function with analytic gradients.
#[derive(Clone)]
pub struct Observable {
    label: String,
    eval: Arc<EvalFn>,
    domain: Domain,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("label", &self.label)
            .field("domain", &self.domain)
            .finish()
    }
}

impl Observable {
    pub fn new<F>(label: impl Into<String>, domain: Domain, eval: F) -> Self
    where
        F: Fn(PhaseState) -> Evaluation + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            domain,
        }
    }

    /// Parses an expression over `q` and `p`; gradients come from forward-mode
    /// differentiation.
    pub fn from_expr(source: &str, domain: Domain) -> Result<Self> {
        let expr = Expr::parse(source)?;
        if expr.uses(Var::T) {
            return Err(Error::Argument(format!(
                "basis function `{source}` must not depend on t"
            )));
        }
        let label = expr.source().to_string();
        Ok(Self::new(label, domain, move |x| {
            let j = expr.eval(x.q, x.p, 0.0);
            Evaluation {
                value: j.value,
                dq: j.grad[0],
                dp: j.grad[1],
            }
        }))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), Domain::PLANE, move |_| Evaluation {
            value: c,
            dq: 0.0,
            dp: 0.0,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Evaluates without checking the domain.
    #[inline]
    pub fn eval_unchecked(&self, x: PhaseState) -> Evaluation {
        (self.eval)(x)
    }

    pub fn eval(&self, x: PhaseState) -> Result<Evaluation> {
        self.check_domain(x)?;
        Ok((self.eval)(x))
    }

    pub fn value(&self, x: PhaseState) -> Result<f64> {
        self.eval(x).map(|e| e.value)
    }

    pub fn check_domain(&self, x: PhaseState) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                observable: self.label.clone(),
                q: x.q,
                p: x.p,
            })
        }
    }
}

/// `{f, g}(x) = f_q g_p - f_p g_q` from the stored analytic gradients.
pub fn poisson_bracket(f: &Observable, g: &Observable, x: PhaseState) -> Result<f64> {
    let a = f.eval(x)?;
    let b = g.eval(x)?;
    Ok(a.dq * b.dp - a.dp * b.dq)
}

/// Tolerance applied to the Jacobi identity on construction.
pub const JACOBI_TOL: f64 = 1e-12;

/// `gamma[i][j][k]` is the coefficient of `O_k` in `{O_i, O_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureConstants {
    dim: usize,
    gamma: Vec<f64>,
}

impl StructureConstants {
    /// Builds from a dense row-major `dim^3` table, checking antisymmetry and
    /// the Jacobi identity.
    pub fn new(dim: usize, gamma: Vec<f64>) -> Result<Self> {
        let sc = Self::new_unchecked(dim, gamma)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Builds from the nonzero upper brackets `{O_i, O_j} ∋ value * O_k`;
    /// the `(j, i)` entries are filled in by antisymmetry.
    pub fn from_brackets(dim: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut gamma = vec![0.0; dim * dim * dim];
        for &(i, j, k, v) in entries {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::Argument(format!(
                    "bracket index ({i},{j},{k}) out of range for dimension {dim}"
                )));
            }
            gamma[(i * dim + j) * dim + k] = v;
            gamma[(j * dim + i) * dim + k] = -v;
        }
        Self::new(dim, gamma)
    }

    /// Skips the algebraic checks. Used for fault injection.
    pub fn new_unchecked(dim: usize, gamma: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("algebra dimension must be >= 1".into()));
        }
        if gamma.len() != dim * dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim * dim,
                got: gamma.len(),
            });
        }
        Ok(Self { dim, gamma })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma[(i * self.dim + j) * self.dim + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    /// Copy with the sign of `gamma[i][j][k]` and `gamma[j][i][k]` flipped.
    /// Antisymmetry survives; closure and generally Jacobi do not.
    pub fn with_sign_flip(&self, i: usize, j: usize, k: usize) -> Self {
        let mut out = self.clone();
        let d = self.dim;
        out.gamma[(i * d + j) * d + k] *= -1.0;
        if i != j {
            out.gamma[(j * d + i) * d + k] *= -1.0;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    if self.get(i, j, k) != -self.get(j, i, k) {
                        return Err(Error::NotAntisymmetric { i, j, k });
                    }
                }
            }
        }
        let (residual, [i, j, k, l]) = self.jacobi_residual();
        if residual > JACOBI_TOL {
            return Err(Error::Jacobi {
                i,
                j,
                k,
                l,
                residual,
            });
        }
        Ok(())
    }

    /// Largest violation of
    /// `sum_m (g^m_ij g^l_mk + g^m_jk g^l_mi + g^m_ki g^l_mj)` and its indices.
    pub fn jacobi_residual(&self) -> (f64, [usize; 4]) {
        let d = self.dim;
        let mut worst = (0.0, [0; 4]);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let s: f64 = (0..d)
                            .map(|m| {
                                self.get(i, j, m) * self.get(m, k, l)
                                    + self.get(j, k, m) * self.get(m, i, l)
                                    + self.get(k, i, m) * self.get(m, j, l)
                            })
                            .sum();
                        if s.abs() > worst.0 {
                            worst = (s.abs(), [i, j, k, l]);
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Basis observables closed under the Poisson bracket.
#[derive(Debug, Clone)]
pub struct LieAlgebra {
    name: String,
    basis: Vec<Observable>,
    constants: StructureConstants,
    domain: Domain,
}

impl LieAlgebra {
    pub fn new(
        name: impl Into<String>,
        basis: Vec<Observable>,
        constants: StructureConstants,
    ) -> Result<Self> {
        if basis.len() != constants.dim() {
            return Err(Error::Dimension {
                expected: constants.dim(),
                got: basis.len(),
            });
        }
        let domain = basis
            .iter()
            .fold(Domain::PLANE, |d, o| d.intersect(&o.domain()));
        Ok(Self {
            name: name.into(),
            basis,
            constants,
            domain,
        })
    }

    /// Builds an algebra from expression strings and a dense γ table.
    pub fn from_exprs(
        name: impl Into<String>,
        basis: &[&str],
        domain: Domain,
        constants: StructureConstants,
    ) -> Result<Self> {
        let basis = basis
            .iter()
            .map(|s| Observable::from_expr(s, domain))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, basis, constants)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Observable] {
        &self.basis
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.constants
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Same basis with a different γ table.
    pub fn with_constants(&self, constants: StructureConstants) -> Result<Self> {
        Self::new(self.name.clone(), self.basis.clone(), constants)
    }

    pub fn check_domain(&self, x: PhaseState) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            let culprit = self
                .basis
                .iter()
                .find(|o| !o.domain().contains(x))
                .map(|o| o.label().to_string())
                .unwrap_or_else(|| self.name.clone());
            Err(Error::Domain {
                observable: culprit,
                q: x.q,
                p: x.p,
            })
        }
    }

    /// Evaluates every basis element at `x` into `out`.
    pub fn eval_basis(&self, x: PhaseState, out: &mut [Evaluation]) -> Result<()> {
        self.check_domain(x)?;
        for (o, slot) in self.basis.iter().zip(out.iter_mut()) {
            *slot = o.eval_unchecked(x);
        }
        Ok(())
    }

    /// `sum_k c_k O_k(x)` with its gradient.
    pub fn combine(&self, coeffs: &[f64], x: PhaseState) -> Result<Evaluation> {
        self.check_domain(x)?;
        let mut acc = Evaluation::default();
        for (c, o) in coeffs.iter().zip(&self.basis) {
            if *c == 0.0 {
                continue;
            }
            let e = o.eval_unchecked(x);
            acc.value += c * e.value;
            acc.dq += c * e.dq;
            acc.dp += c * e.dp;
        }
        Ok(acc)
    }
}

/// Axis-aligned sampling box for closure checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePlan {
    pub q: (f64, f64),
    pub p: (f64, f64),
    pub count: usize,
    /// Offset into the Halton sequence.
    pub seed: u64,
}

impl SamplePlan {
    /// Deterministic low-discrepancy points (Halton, bases 2 and 3).
    pub fn points(&self) -> Vec<PhaseState> {
        (0..self.count as u64)
            .map(|n| {
                let idx = n + self.seed + 1;
                let u = radical_inverse(idx, 2);
                let v = radical_inverse(idx, 3);
                PhaseState::new(
                    self.q.0 + u * (self.q.1 - self.q.0),
                    self.p.0 + v * (self.p.1 - self.p.0),
                )
            })
            .collect()
    }
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while n > 0 {
        r += f * (n % base) as f64;
        n /= base;
        f *= inv;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureReport {
    pub algebra: String,
    pub max_residual: f64,
    /// `(i, j)` of the bracket with the largest residual.
    pub worst_pair: (usize, usize),
    pub worst_point: PhaseState,
    /// Largest residual of each unordered pair `i < j`.
    pub pair_residuals: Vec<((usize, usize), f64)>,
    pub samples: usize,
    pub seed: Option<u64>,
    pub tol: f64,
    pub pass: bool,
}

/// Compares `{O_i, O_j}(x)` against `sum_k gamma^k_ij O_k(x)` at every sample.
pub fn verify_closure(alg: &LieAlgebra, samples: &[PhaseState], tol: f64) -> Result<ClosureReport> {
    if samples.is_empty() {
        return Err(Error::Argument("closure check needs at least one sample".into()));
    }
    let m = alg.dim();
    let sc = alg.constants();
    let mut evals = vec![Evaluation::default(); m];
    let mut pair_residuals: Vec<((usize, usize), f64)> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| ((i, j), 0.0)))
        .collect();
    let mut worst = (0.0_f64, (0, 0), samples[0]);
    for &x in samples {
        alg.eval_basis(x, &mut evals)?;
        let mut slot = 0;
        for i in 0..m {
            for j in (i + 1)..m {
                let (a, b) = (evals[i], evals[j]);
                let bracket = a.dq * b.dp - a.dp * b.dq;
                let span: f64 = (0..m).map(|k| sc.get(i, j, k) * evals[k].value).sum();
                let r = (bracket - span).abs();
                if r > pair_residuals[slot].1 || r.is_nan() {
                    pair_residuals[slot].1 = r;
                }
                if r > worst.0 || r.is_nan() {
                    worst = (r, (i, j), x);
                }
                slot += 1;
            }
        }
    }
    let max_residual = worst.0;
    Ok(ClosureReport {
        algebra: alg.name().to_string(),
        max_residual,
        worst_pair: worst.1,
        worst_point: worst.2,
        pair_residuals,
        samples: samples.len(),
        seed: None,
        tol,
        pass: max_residual < tol,
    })
}

pub fn verify_closure_with_plan(alg: &LieAlgebra, plan: &SamplePlan, tol: f64) -> Result<ClosureReport> {
    let mut report = verify_closure(alg, &plan.points(), tol)?;
    report.seed = Some(plan.seed);
    Ok(report)
}

/// Central finite-difference step used for gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between analytic gradients and central
/// differences of the value, `|a - fd| / max(1, |a|)`.
pub fn gradient_mismatch(obs: &Observable, points: &[PhaseState], h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &x in points {
        let e = obs.eval(x)?;
        let f = |q: f64, p: f64| obs.eval_unchecked(PhaseState::new(q, p)).value;
        let fd_q = (f(x.q + h, x.p) - f(x.q - h, x.p)) / (2.0 * h);
        let fd_p = (f(x.q, x.p + h) - f(x.q, x.p - h)) / (2.0 * h);
        worst = worst
            .max((e.dq - fd_q).abs() / e.dq.abs().max(1.0))
            .max((e.dp - fd_p).abs() / e.dp.abs().max(1.0));
    }
    Ok(worst)
}

pub const QUADRATIC6: &str = "quadratic6";
pub const SPIN_CLASSICAL: &str = "spin-classical";
pub const ALGEBRA_PRESETS: [&str; 2] = [QUADRATIC6, SPIN_CLASSICAL];

/// γ of `{1, q, p, qp, q², p²}` (indices 0..6). Derived once by hand from
/// `{f, g} = f_q g_p - f_p g_q`; `tests::quadratic_table_matches_fd_oracle`
/// re-derives it from finite differences.
pub const QUADRATIC6_BRACKETS: [(usize, usize, usize, f64); 8] = [
    (1, 2, 0, 1.0),  // {q, p} = 1
    (1, 3, 1, 1.0),  // {q, qp} = q
    (1, 5, 2, 2.0),  // {q, p²} = 2p
    (2, 3, 2, -1.0), // {p, qp} = -p
    (2, 4, 1, -2.0), // {p, q²} = -2q
    (3, 4, 4, -2.0), // {qp, q²} = -2q²
    (3, 5, 5, 2.0),  // {qp, p²} = 2p²
    (4, 5, 3, 4.0),  // {q², p²} = 4qp
];

/// `{O_1, O_2} = O_3` and cyclic.
pub const SPIN_BRACKETS: [(usize, usize, usize, f64); 3] =
    [(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)];

fn poly(label: &str, f: fn(f64, f64) -> Evaluation) -> Observable {
    Observable::new(label, Domain::PLANE, move |x| f(x.q, x.p))
}

pub fn quadratic6() -> LieAlgebra {
    let basis = vec![
        Observable::constant(1.0),
        poly("q", |q, _| Evaluation { value: q, dq: 1.0, dp: 0.0 }),
        poly("p", |_, p| Evaluation { value: p, dq: 0.0, dp: 1.0 }),
        poly("qp", |q, p| Evaluation { value: q * p, dq: p, dp: q }),
        poly("q^2", |q, _| Evaluation { value: q * q, dq: 2.0 * q, dp: 0.0 }),
        poly("p^2", |_, p| Evaluation { value: p * p, dq: 0.0, dp: 2.0 * p }),
    ];
    let sc = StructureConstants::from_brackets(6, &QUADRATIC6_BRACKETS)
        .expect("quadratic6 table is antisymmetric and satisfies Jacobi");
    LieAlgebra::new(QUADRATIC6, basis, sc).expect("dimensions match")
}

/// Domain of the spin chart, `|q| < 1 - SPIN_CHART_MARGIN`.
pub fn spin_domain() -> Domain {
    Domain {
        q: (-1.0 + SPIN_CHART_MARGIN, 1.0 - SPIN_CHART_MARGIN),
        p: (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// `(sqrt(1-q²) cos p, sqrt(1-q²) sin p, -q)`.
pub fn spin_classical() -> LieAlgebra {
    let dom = spin_domain();
    let o1 = Observable::new("sqrt(1-q^2)*cos(p)", dom, |x| {
        let s = (1.0 - x.q * x.q).sqrt();
        let (sp, cp) = x.p.sin_cos();
        Evaluation {
            value: s * cp,
            dq: -x.q / s * cp,
            dp: -s * sp,
        }
    });
    let o2 = Observable::new("sqrt(1-q^2)*sin(p)", dom, |x| {
        let s = (1.0 - x.q * x.q).sqrt();
        let (sp, cp) = x.p.sin_cos();
        Evaluation {
            value: s * sp,
            dq: -x.q / s * sp,
            dp: s * cp,
        }
    });
    let o3 = Observable::new("-q", dom, |x| Evaluation {
        value: -x.q,
        dq: -1.0,
        dp: 0.0,
    });
    let sc = StructureConstants::from_brackets(3, &SPIN_BRACKETS)
        .expect("su(2) table is antisymmetric and satisfies Jacobi");
    LieAlgebra::new(SPIN_CLASSICAL, vec![o1, o2, o3], sc).expect("dimensions match")
}

pub fn algebra_preset(name: &str) -> Result<LieAlgebra> {
    match name {
        QUADRATIC6 => Ok(quadratic6()),
        SPIN_CLASSICAL => Ok(spin_classical()),
        _ => Err(Error::UnknownPreset {
            name: name.to_string(),
            valid: ALGEBRA_PRESETS.join(", "),
        }),
    }
}

/// Closure sample box for a preset: `[-2, 2]²` for quadratic6 and
/// `|q| <= 0.9, p in [-pi, pi]` for the spin chart.
pub fn default_sample_plan(name: &str) -> SamplePlan {
    use std::f64::consts::PI;
    match name {
        SPIN_CLASSICAL => SamplePlan {
            q: (-0.9, 0.9),
            p: (-PI, PI),
            count: 100,
            seed: 0,
        },
        _ => SamplePlan {
            q: (-2.0, 2.0),
            p: (-2.0, 2.0),
            count: 100,
            seed: 0,
        },
    }
}
