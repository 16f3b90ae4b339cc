//! Executes a scenario and writes its artifacts plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lieflow::algebra::PhaseState;
use lieflow::csv::row;
use lieflow::dynamics::{integrate, Cadence, HamiltonianSpec, Trajectory};
use lieflow::howland::{extend, independence_check, integrate_extended, involution_residual};
use lieflow::invariant::{
    build_invariant, default_g0, invariant_series, magnitude_series, CoefficientPath, DriftReport,
    InvariantFunction,
};
use lieflow::quantum::{
    classical_limit_check, evolve, expectation_conservation, expectation_csv, isospectrality, quantum_invariant,
    random_mixed_state, random_pure_state, spin_coherent_state, spin_matrices, twice_spin, QuantumStepControl,
};
use lieflow::sections::{
    ftle, label_separation, level_curve_constancy, line_svg, phase_section, plane_section, scatter_svg,
    separation_of, stroboscopic, SectionPoints,
};

use crate::config::{Bound, CheckConfig, CheckKind, Orbit, ScenarioConfig, SectionKind, StateKind};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
const SVG_POINTS_PER_ORBIT: usize = 4000;
const HOWLAND_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub name: String,
    pub ok: bool,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    /// Worst value over the orbits the check covers; absent when there is
    /// no data or the value is not finite.
    pub measured: Option<f64>,
    pub threshold: f64,
    pub bound: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config: ScenarioConfig,
    pub files: Vec<FileEntry>,
    pub tasks: Vec<TaskRecord>,
    pub checks: Vec<CheckRecord>,
    pub passed: bool,
    pub seconds: f64,
}

/// Sole writer of a run directory; records every file it creates.
struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        clear_previous(&dir)?;
        fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            bytes: contents.len(),
        });
        Ok(())
    }
}

/// Removes the files listed by an earlier manifest in `dir`, so no stale
/// artifact outlives the manifest that described it.
fn clear_previous(dir: &Path) -> Result<(), CliError> {
    let path = dir.join(MANIFEST);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(());
    };
    let Ok(old) = serde_json::from_str::<Manifest>(&text) else {
        return Ok(());
    };
    for f in old.files.iter().filter(|f| !f.path.contains("..")) {
        let _ = fs::remove_file(dir.join(&f.path));
    }
    let _ = fs::remove_file(path);
    Ok(())
}

/// Per-orbit values feeding the checks, keyed by metric name.
#[derive(Default)]
struct Metrics {
    values: BTreeMap<&'static str, Vec<(String, f64)>>,
    first_exceedance: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Metrics {
    fn push(&mut self, metric: &'static str, orbit: &str, v: f64) {
        self.values.entry(metric).or_default().push((orbit.to_string(), v));
    }
}

fn metric_of(kind: CheckKind) -> &'static str {
    use CheckKind::*;
    match kind {
        InvariantDrift => "drift",
        DriftExceeds => "first_exceedance",
        GrowthAbove | GrowthBelow => "growth",
        LevelCurves => "level_spread",
        DistinctLabels => "label_separation",
        FtleBelow | FtleAbove => "ftle",
        SeparationBelow | SeparationAbove => "separation",
        KDrift => "k_drift",
        ThetaSlaving => "theta_slaving",
        Involution => "involution",
        Independence => "independent_fraction",
        QuantumDrift => "quantum_drift",
        Unitarity => "unitarity",
        Isospectral => "isospectral",
        ClassicalLimit => "classical_limit",
    }
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    out: Writer,
    tasks: Vec<TaskRecord>,
}

impl Runner<'_> {
    fn task<T>(&mut self, name: String, f: impl FnOnce(&mut Writer) -> Result<(T, Option<String>), CliError>) -> Option<T> {
        let start = Instant::now();
        let result = f(&mut self.out);
        let seconds = start.elapsed().as_secs_f64();
        let (value, ok, message) = match result {
            Ok((v, warn)) => (Some(v), warn.is_none(), warn),
            Err(e) => (None, false, Some(e.to_string())),
        };
        self.tasks.push(TaskRecord { name, ok, seconds, message });
        value
    }
}

fn eps_dir(eps: f64) -> String {
    format!("eps-{eps}")
}

fn thin(states: &[PhaseState]) -> Vec<PhaseState> {
    let stride = states.len().div_ceil(SVG_POINTS_PER_ORBIT).max(1);
    states.iter().step_by(stride).copied().collect()
}

fn failures<'a>(items: impl Iterator<Item = (&'a str, Option<&'a String>)>) -> Option<String> {
    let msgs: Vec<String> = items.filter_map(|(id, f)| f.map(|f| format!("{id}: {f}"))).collect();
    (!msgs.is_empty()).then(|| msgs.join("; "))
}

/// Runs `cfg` into `root/<output_dir>`.
pub fn run(cfg: &ScenarioConfig, root: &Path) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let started = Instant::now();
    let resolved = cfg.resolved();
    let dir = root.join(resolved.output_dir());
    let mut runner = Runner {
        cfg: &resolved,
        out: Writer::new(dir)?,
        tasks: Vec::new(),
    };
    runner.out.write("config.toml", &resolved.to_toml())?;
    let mut per_eps = Vec::new();
    if !resolved.orbits().is_empty() {
        for &eps in &resolved.model.epsilon {
            let metrics = classical(&mut runner, eps)?;
            per_eps.push((eps, metrics));
        }
    }
    let mut quantum_metrics = Metrics::default();
    quantum(&mut runner, &mut quantum_metrics)?;
    classical_limit(&mut runner, &mut quantum_metrics)?;

    let checks = resolved
        .checks
        .iter()
        .map(|c| evaluate(c, &per_eps, &quantum_metrics))
        .collect::<Vec<_>>();
    let passed = runner.tasks.iter().all(|t| t.ok) && checks.iter().all(|c| c.passed);
    let Runner { mut out, tasks, .. } = runner;
    let files = out.files.clone();
    let manifest = Manifest {
        tool: "lieflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: resolved.name.clone(),
        config: resolved,
        files,
        tasks,
        checks,
        passed,
        seconds: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write(MANIFEST, &text)?;
    Ok(manifest)
}

fn classical(runner: &mut Runner<'_>, eps: f64) -> Result<Metrics, CliError> {
    let cfg = runner.cfg;
    let spec = cfg.spec(eps)?;
    let orbits = cfg.orbits();
    let ctrl = cfg.integrator.control();
    let dir = eps_dir(eps);
    let o = &cfg.outputs;
    let mut m = Metrics::default();

    let needs_traj = o.trajectory || o.invariant || o.separation.is_some();
    let trajectories: Option<Vec<Trajectory>> = if needs_traj {
        runner.task(format!("{dir}/trajectories"), |out| {
            let trajs = orbits
                .par_iter()
                .map(|orb| integrate(&spec, orb.x0, (cfg.time.start, orb.t_end), &ctrl, &Cadence::Interval(cfg.time.sample)))
                .collect::<Result<Vec<_>, _>>()?;
            if o.trajectory {
                for (orb, t) in orbits.iter().zip(&trajs) {
                    out.write(&format!("{dir}/trajectories/{}.csv", orb.id), &t.to_csv())?;
                }
                let thinned: Vec<Vec<PhaseState>> = trajs.iter().map(|t| thin(t.states())).collect();
                let refs: Vec<&[PhaseState]> = thinned.iter().map(Vec::as_slice).collect();
                out.write(&format!("{dir}/phase.svg"), &scatter_svg(&format!("{} eps={eps}", spec.label()), &refs, "q", "p"))?;
            }
            let warn = failures(orbits.iter().zip(&trajs).map(|(o, t)| (o.id.as_str(), t.failure.as_ref())));
            Ok((trajs, warn))
        })
    } else {
        None
    };
    if let Some(trajs) = &trajectories {
        for (orb, t) in orbits.iter().zip(trajs) {
            m.push("growth", &orb.id, t.growth_factor());
        }
    }

    let needs_inv = o.invariant || o.howland;
    let invariant: Option<InvariantFunction> = if needs_inv {
        runner.task(format!("{dir}/invariant"), |out| {
            let h = spec.coefficients();
            let g0 = default_g0(h, cfg.time.start)?;
            let path = build_invariant(spec.algebra(), h, &g0, cfg.span(), &ctrl)?;
            out.write(&format!("{dir}/invariant/coefficients.csv"), &coefficient_table(&path, cfg.span(), cfg.time.sample)?)?;
            let warn = path.growth_warning();
            Ok((InvariantFunction::new(spec.algebra().clone(), Arc::new(path))?, warn))
        })
    } else {
        None
    };

    if let (true, Some(inv), Some(trajs)) = (o.invariant, &invariant, &trajectories) {
        runner.task(format!("{dir}/drift"), |out| {
            for (orb, t) in orbits.iter().zip(trajs) {
                let values = invariant_series(inv, t)?;
                let scales = magnitude_series(inv, t)?;
                let report = DriftReport::from_series_scaled(t.times(), &values, &scales);
                let mut csv = String::from("t,I,drift,scale\n");
                for ((time, v), s) in t.times().iter().zip(&values).zip(&scales) {
                    csv.push_str(&row(&[*time, *v, (v - report.initial).abs(), *s]));
                }
                out.write(&format!("{dir}/invariant/{}.csv", orb.id), &csv)?;
                m.push("drift", &orb.id, report.conditioned);
                m.first_exceedance.push((orb.id.clone(), t.times().to_vec(), values));
            }
            Ok(((), None))
        });
    }

    if let Some(sec) = o.section {
        let sections = runner.task(format!("{dir}/sections"), |out| {
            let ext = extend(spec.clone());
            let pts = orbits
                .par_iter()
                .map(|orb| section_for(&spec, &ext, orb, sec, &ctrl))
                .collect::<Result<Vec<_>, CliError>>()?;
            for s in &pts {
                out.write(&format!("{dir}/sections/{}.csv", s.orbit_id), &s.to_csv())?;
            }
            let refs: Vec<&[PhaseState]> = pts.iter().map(|s| s.points.as_slice()).collect();
            out.write(&format!("{dir}/sections.svg"), &scatter_svg(&format!("{} section eps={eps}", spec.label()), &refs, "q", "p"))?;
            let bad: Vec<&str> = pts
                .iter()
                .filter(|s| s.degenerate || s.is_empty() || s.truncated)
                .map(|s| s.orbit_id.as_str())
                .collect();
            let warn = (!bad.is_empty()).then(|| format!("empty, degenerate or truncated sections: {}", bad.join(", ")));
            Ok((pts, warn))
        });
        if let (Some(pts), Some(inv)) = (sections, &invariant) {
            runner.task(format!("{dir}/level-curves"), |out| {
                let mut reports: BTreeMap<&str, Vec<_>> = BTreeMap::new();
                let mut csv = String::from("orbit,mean,std_dev,max_deviation,points\n");
                for (s, orb) in pts.iter().zip(&orbits).filter(|(s, _)| !s.is_empty()) {
                    let r = level_curve_constancy(s, inv)?;
                    csv.push_str(&format!("{},{}", r.orbit_id, row(&[r.mean, r.std_dev, r.max_deviation, s.len() as f64])));
                    m.push("level_spread", &r.orbit_id, r.max_deviation / (1.0 + r.mean.abs()));
                    reports.entry(orb.group.as_str()).or_default().push(r);
                }
                for (group, rs) in reports.iter().filter(|(_, rs)| rs.len() > 1) {
                    m.push("label_separation", &format!("{group}-all"), label_separation(rs));
                }
                out.write(&format!("{dir}/level_curves.csv"), &csv)?;
                Ok(((), None))
            });
        }
    }

    if let Some(fc) = o.ftle {
        runner.task(format!("{dir}/ftle"), |out| {
            let est = orbits
                .par_iter()
                .map(|orb| ftle(&spec, orb.x0, (cfg.time.start, orb.t_end), fc.renorm, fc.offset, &ctrl))
                .collect::<Result<Vec<_>, _>>()?;
            let mut csv = String::from("orbit,q0,p0,lambda,t_reached,renormalizations\n");
            for (orb, e) in orbits.iter().zip(&est) {
                csv.push_str(&format!("{},{}", orb.id, row(&[orb.x0.q, orb.x0.p, e.lambda, e.t_reached, e.renormalizations as f64])));
                m.push("ftle", &orb.id, e.lambda);
            }
            out.write(&format!("{dir}/ftle.csv"), &csv)?;
            Ok(((), failures(orbits.iter().zip(&est).map(|(o, e)| (o.id.as_str(), e.failure.as_ref())))))
        });
    }

    if let (Some(sc), Some(trajs)) = (&o.separation, &trajectories) {
        runner.task(format!("{dir}/separation"), |out| {
            for &[a, b] in &sc.pairs {
                let s = separation_of(&trajs[a], &trajs[b]);
                let name = format!("{}_{}", orbits[a].id, orbits[b].id);
                out.write(&format!("{dir}/separation/{name}.csv"), &s.to_csv())?;
                let svg = line_svg(
                    &format!("q(t), {} eps={eps}", spec.label()),
                    &[(&s.times, &s.q0), (&s.times, &s.q1)],
                    "t",
                    "q",
                );
                out.write(&format!("{dir}/separation/{name}.svg"), &svg)?;
                m.push("separation", &orbits[a].id, s.relative());
            }
            Ok(((), None))
        });
    }

    if let (true, Some(inv)) = (o.howland, &invariant) {
        runner.task(format!("{dir}/howland"), |out| {
            let ext = extend(spec.clone());
            for orb in &orbits {
                let s0 = ext.initial_state(orb.x0, cfg.time.start)?;
                let span = (cfg.time.start, orb.t_end);
                let mut tr = integrate_extended(&ext, s0, span, &ctrl, &Cadence::Interval(cfg.time.sample))?;
                tr.attach_invariant(inv)?;
                out.write(&format!("{dir}/howland/{}.csv", orb.id), &tr.to_csv())?;
                let stride = (tr.len() / HOWLAND_POINTS).max(1);
                let sample: Vec<_> = tr.states.iter().skip(stride / 2).step_by(stride).take(HOWLAND_POINTS).copied().collect();
                let invol = involution_residual(&ext, inv, &sample)?;
                let mut independent = 0;
                for &s in &sample {
                    if independence_check(&ext, inv, s)?.independent() {
                        independent += 1;
                    }
                }
                m.push("k_drift", &orb.id, tr.k_drift());
                m.push("theta_slaving", &orb.id, tr.theta_slaving());
                m.push("involution", &orb.id, invol.max_abs);
                m.push("independent_fraction", &orb.id, independent as f64 / sample.len().max(1) as f64);
            }
            Ok(((), None))
        });
    }
    Ok(m)
}

fn section_for(
    spec: &HamiltonianSpec,
    ext: &lieflow::howland::ExtendedHamiltonian,
    orb: &Orbit,
    sec: crate::config::SectionConfig,
    ctrl: &lieflow::integrator::StepControl,
) -> Result<SectionPoints, CliError> {
    let periods = |omega: f64| {
        let period = 2.0 * std::f64::consts::PI / omega;
        let fit = ((orb.t_end / period) + 1e-9).floor() as usize;
        (period, fit.min(sec.max_points.saturating_sub(1)).max(1))
    };
    Ok(match sec.kind {
        SectionKind::Stroboscopic => {
            let omega = sec.omega.expect("resolved");
            let (_, n) = periods(omega);
            stroboscopic(spec, orb.x0, omega, n, ctrl, &orb.id)?
        }
        SectionKind::Phase => {
            let (period, n) = periods(sec.omega.expect("resolved"));
            phase_section(ext, ext.initial_state(orb.x0, 0.0)?, period, n, ctrl, &orb.id)?
        }
        SectionKind::Plane => {
            let s0 = ext.initial_state(orb.x0, 0.0)?;
            plane_section(ext, s0, sec.j, (0.0, orb.t_end), sec.max_points, ctrl, &orb.id)?
        }
    })
}

fn quantum(runner: &mut Runner<'_>, m: &mut Metrics) -> Result<(), CliError> {
    let cfg = runner.cfg;
    let Some(qc) = cfg.outputs.quantum.clone() else {
        return Ok(());
    };
    let field = cfg.field()?;
    let span = cfg.span();
    for &spin in &qc.spins {
        let twice = twice_spin(spin)?;
        runner.task(format!("quantum/spin-{twice}"), |out| {
            let alg = Arc::new(spin_matrices(twice)?);
            let dim = alg.dim_rep();
            let psi0 = match qc.state {
                StateKind::Random => random_pure_state(dim, cfg.seed),
                StateKind::Mixed => random_mixed_state(dim, 2.min(dim), cfg.seed),
                StateKind::Coherent => {
                    let x0 = cfg.orbits().first().map_or(PhaseState::new(0.0, 0.0), |o| o.x0);
                    spin_coherent_state(&alg, x0)?
                }
            };
            let evo = evolve(&alg, &field, &psi0, span, &qc.control())?;
            let g0 = match &qc.g0 {
                Some(g) => g.clone(),
                None => {
                    let b = field.eval(span.0)?;
                    if b.iter().all(|v| *v == 0.0) { vec![1.0, 0.0, 0.0] } else { b }
                }
            };
            let inv = quantum_invariant(alg.clone(), &field, &g0, span, &cfg.integrator.control())?;
            let cons = expectation_conservation(&evo, &inv)?;
            let iso = isospectrality(&inv, &evo.times)?;
            out.write(&format!("quantum/spin-{twice}.csv"), &expectation_csv(&alg, &evo, Some(&inv))?)?;
            let label = format!("S={spin}");
            m.push("quantum_drift", &label, cons.max_abs);
            m.push("unitarity", &label, evo.norm_drift());
            m.push("isospectral", &label, iso);
            Ok(((), None))
        });
    }
    Ok(())
}

fn classical_limit(runner: &mut Runner<'_>, m: &mut Metrics) -> Result<(), CliError> {
    let cfg = runner.cfg;
    let Some(cl) = cfg.outputs.classical_limit else {
        return Ok(());
    };
    let field = cfg.field()?;
    let orbits = cfg.orbits();
    runner.task("classical-limit".into(), |out| {
        let alg = spin_matrices(twice_spin(cl.spin)?)?;
        let qctrl = QuantumStepControl {
            step: cl.step,
            record_every: cl.record_every,
            ..Default::default()
        };
        let reports = orbits
            .par_iter()
            .map(|orb| classical_limit_check(&alg, &field, orb.x0, (cfg.time.start, orb.t_end), &qctrl, &cfg.integrator.control()))
            .collect::<Result<Vec<_>, _>>()?;
        for (orb, r) in orbits.iter().zip(&reports) {
            let mut csv = String::from("t,deviation\n");
            for (t, d) in r.times.iter().zip(&r.deviation) {
                csv.push_str(&row(&[*t, *d]));
            }
            out.write(&format!("classical_limit/{}.csv", orb.id), &csv)?;
            m.push("classical_limit", &orb.id, r.max_deviation);
        }
        Ok(((), None))
    });
    Ok(())
}

/// `t,g1..gm` at the sampling interval.
fn coefficient_table(path: &CoefficientPath, (t0, t1): (f64, f64), dt: f64) -> Result<String, CliError> {
    let mut csv = String::from("t");
    for k in 1..=path.dim() {
        csv.push_str(&format!(",g{k}"));
    }
    csv.push('\n');
    let n = ((t1 - t0) / dt).round() as usize;
    for i in 0..=n {
        let t = (t0 + i as f64 * dt).min(t1);
        let mut vals = vec![t];
        vals.extend(path.eval(t)?);
        csv.push_str(&row(&vals));
    }
    Ok(csv)
}

fn evaluate(check: &CheckConfig, per_eps: &[(f64, Metrics)], quantum: &Metrics) -> CheckRecord {
    let metric = metric_of(check.kind);
    let bound = check.kind.bound();
    let mut values: Vec<(String, f64)> = Vec::new();
    let sources: Vec<(Option<f64>, &Metrics)> = if quantum.values.contains_key(metric) {
        vec![(None, quantum)]
    } else {
        per_eps
            .iter()
            .filter(|(e, _)| check.epsilon.is_none_or(|c| c == *e))
            .map(|(e, m)| (Some(*e), m))
            .collect()
    };
    let in_group = |id: &str| check.group.as_ref().is_none_or(|g| id.starts_with(&format!("{g}-")));
    for (eps, m) in sources {
        let tag = |id: &str| match eps {
            Some(e) if per_eps.len() > 1 => format!("{id}@eps={e}"),
            _ => id.to_string(),
        };
        if check.kind == CheckKind::DriftExceeds {
            let level = check.level.expect("validated");
            for (id, times, vals) in m.first_exceedance.iter().filter(|(id, ..)| in_group(id)) {
                let t = DriftReport::first_exceedance(times, vals, level).unwrap_or(f64::INFINITY);
                values.push((tag(id), t));
            }
        } else if let Some(vs) = m.values.get(metric) {
            values.extend(vs.iter().filter(|(id, _)| in_group(id)).map(|(id, v)| (tag(id), *v)));
        }
    }
    let worst = values.iter().cloned().reduce(|a, b| {
        let pick_b = match bound {
            Bound::Below => b.1 > a.1 || b.1.is_nan(),
            Bound::Above => b.1 < a.1 || b.1.is_nan(),
        };
        if pick_b && !a.1.is_nan() { b } else { a }
    });
    let (passed, measured, detail) = match worst {
        None => (false, None, "no data (task failed or produced nothing)".to_string()),
        Some((id, v)) => {
            let ok = match bound {
                Bound::Below => v < check.threshold,
                Bound::Above => v > check.threshold,
            };
            (ok, Some(v).filter(|v| v.is_finite()), format!("worst {id} = {v:.4e} over {} values", values.len()))
        }
    };
    CheckRecord {
        name: check.label(),
        passed,
        measured,
        threshold: check.threshold,
        bound: match bound {
            Bound::Below => "<".into(),
            Bound::Above => ">".into(),
        },
        detail,
    }
}
