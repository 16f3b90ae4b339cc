//! Scenario configuration: a TOML document describing one experiment.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use lieflow::algebra::{quadratic6, PhaseState};
use lieflow::dynamics::{
    field_preset, model_preset, neighborhood_ics, preset_info, quartic_coefficients, grid_ics, HamiltonianSpec,
    ModelParams, Perturbation, MODEL_PRESETS, TWO_LEVEL,
};
use lieflow::integrator::StepControl;
use lieflow::invariant::{Drive, TimeCoefficients};
use lieflow::quantum::{random_field, twice_spin, QuantumStepControl, DEFAULT_QUANTUM_STEP};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Seeds random fields and random quantum states.
    #[serde(default)]
    pub seed: u64,
    /// Directory below the output root; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub model: ModelConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_conditions: Vec<IcGroup>,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: String,
    /// One run per value.
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    /// Replaces `Omega(t)` of a quartic preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<String>,
    /// Field `B(t)` of the two-level preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
}

fn default_epsilon() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldConfig {
    Preset(String),
    Expressions(Vec<String>),
    Random { random_modes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub start: f64,
    pub end: f64,
    /// Spacing of recorded samples.
    #[serde(default = "default_sample")]
    pub sample: f64,
}

fn default_sample() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: f64,
    /// Switches to error-controlled steps when both tolerances are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step: lieflow::integrator::DEFAULT_STEP,
            rtol: None,
            atol: None,
        }
    }
}

impl IntegratorConfig {
    pub fn control(&self) -> StepControl {
        match (self.rtol, self.atol) {
            (Some(r), Some(a)) => StepControl {
                step: self.step,
                ..StepControl::adaptive(r, a)
            },
            _ => StepControl::fixed(self.step),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcGroup {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighborhood: Option<NeighborhoodSpec>,
    /// Shorter horizon for this group; defaults to `time.end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborhoodSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub count: usize,
    #[serde(default)]
    pub include_center: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default)]
    pub trajectory: bool,
    #[serde(default)]
    pub invariant: bool,
    #[serde(default)]
    pub howland: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<SectionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftle: Option<FtleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<SeparationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum: Option<QuantumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical_limit: Option<ClassicalLimitConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectionKind {
    Stroboscopic,
    Phase,
    Plane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionConfig {
    pub kind: SectionKind,
    /// Drive frequency for stroboscopic and phase sections; taken from the
    /// preset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Level `J*` of a plane section.
    #[serde(default)]
    pub j: f64,
    #[serde(default = "default_section_points")]
    pub max_points: usize,
}

fn default_section_points() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtleConfig {
    #[serde(default = "default_renorm")]
    pub renorm: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
}

fn default_renorm() -> f64 {
    lieflow::sections::FTLE_RENORM
}

fn default_offset() -> f64 {
    lieflow::sections::FTLE_OFFSET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationConfig {
    /// Pairs of orbit indices in IC order.
    #[serde(default = "default_pairs")]
    pub pairs: Vec<[usize; 2]>,
}

fn default_pairs() -> Vec<[usize; 2]> {
    vec![[0, 1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Random,
    Mixed,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumConfig {
    pub spins: Vec<f64>,
    #[serde(default = "default_state")]
    pub state: StateKind,
    #[serde(default = "default_quantum_step")]
    pub step: f64,
    /// Invariant coefficients at `time.start`; `B(start)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0: Option<Vec<f64>>,
    #[serde(default = "default_record")]
    pub record_every: usize,
}

fn default_state() -> StateKind {
    StateKind::Random
}

fn default_quantum_step() -> f64 {
    DEFAULT_QUANTUM_STEP
}

fn default_record() -> usize {
    10
}

impl QuantumConfig {
    pub fn control(&self) -> QuantumStepControl {
        QuantumStepControl {
            step: self.step,
            record_every: self.record_every,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalLimitConfig {
    pub spin: f64,
    #[serde(default = "default_quantum_step")]
    pub step: f64,
    #[serde(default = "default_record")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    InvariantDrift,
    DriftExceeds,
    GrowthAbove,
    GrowthBelow,
    LevelCurves,
    DistinctLabels,
    FtleBelow,
    FtleAbove,
    SeparationBelow,
    SeparationAbove,
    KDrift,
    ThetaSlaving,
    Involution,
    Independence,
    QuantumDrift,
    Unitarity,
    Isospectral,
    ClassicalLimit,
}

/// Which side of the threshold passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Below,
    Above,
}

impl CheckKind {
    pub fn bound(self) -> Bound {
        use CheckKind::*;
        match self {
            GrowthAbove | DistinctLabels | FtleAbove | SeparationAbove | Independence => Bound::Above,
            _ => Bound::Below,
        }
    }

    /// Output that must be enabled for the check to have data.
    fn requires(self) -> &'static str {
        use CheckKind::*;
        match self {
            InvariantDrift | DriftExceeds | LevelCurves | DistinctLabels => "invariant",
            GrowthAbove | GrowthBelow => "trajectory",
            FtleBelow | FtleAbove => "ftle",
            SeparationBelow | SeparationAbove => "separation",
            KDrift | ThetaSlaving | Involution | Independence => "howland",
            QuantumDrift | Unitarity | Isospectral => "quantum",
            ClassicalLimit => "classical_limit",
        }
    }

    fn is_quantum(self) -> bool {
        matches!(self, CheckKind::QuantumDrift | CheckKind::Unitarity | CheckKind::Isospectral | CheckKind::ClassicalLimit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub kind: CheckKind,
    /// Pass threshold; for `drift-exceeds`, the time before which the drift
    /// must cross `level`.
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Restricts the check to one epsilon run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Restricts the check to one initial-condition group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl CheckConfig {
    pub fn label(&self) -> String {
        let mut label = serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let scope: Vec<String> = self
            .epsilon
            .map(|e| format!("eps={e}"))
            .into_iter()
            .chain(self.group.clone())
            .collect();
        if !scope.is_empty() {
            label.push_str(&format!("[{}]", scope.join(",")));
        }
        label
    }
}

/// One orbit to integrate.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub id: String,
    pub group: String,
    pub x0: PhaseState,
    pub t_end: f64,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn output_dir(&self) -> &str {
        self.output_dir.as_deref().unwrap_or(&self.name)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.time.start, self.time.end)
    }

    pub fn is_two_level(&self) -> bool {
        self.model.preset == TWO_LEVEL
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a nonempty file-name-safe string"));
        }
        if let Some(dir) = &self.output_dir {
            if dir.is_empty() || std::path::Path::new(dir).components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
                return Err(invalid("output_dir", "must be a relative path without `..`"));
            }
        }
        if !MODEL_PRESETS.contains(&self.model.preset.as_str()) {
            return Err(invalid(
                "model.preset",
                format!("unknown preset `{}` (valid: {})", self.model.preset, MODEL_PRESETS.join(", ")),
            ));
        }
        if self.model.epsilon.is_empty() || self.model.epsilon.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(invalid("model.epsilon", "needs one or more finite values >= 0"));
        }
        if self.is_two_level() {
            if self.model.epsilon.iter().any(|&e| e != 0.0) {
                return Err(invalid("model.epsilon", "the two-level model has no quartic term"));
            }
            if self.model.omega.is_some() {
                return Err(invalid("model.omega", "only applies to quartic presets"));
            }
        } else if self.model.field.is_some() {
            return Err(invalid("model.field", "only applies to the two-level preset"));
        }
        let (t0, t1) = self.span();
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(invalid("time.end", format!("must exceed time.start ({t0})")));
        }
        if !(self.time.sample > 0.0) {
            return Err(invalid("time.sample", "must be positive"));
        }
        self.integrator.control().validate().map_err(|e| invalid("integrator", e))?;
        if self.integrator.rtol.is_some() != self.integrator.atol.is_some() {
            return Err(invalid("integrator", "give both rtol and atol, or neither"));
        }
        self.spec(self.model.epsilon[0]).map_err(|e| invalid("model", e))?;
        for (k, g) in self.initial_conditions.iter().enumerate() {
            let field = format!("initial_conditions[{k}]");
            if g.label.is_empty() {
                return Err(invalid(&field, "label must be nonempty"));
            }
            if self.initial_conditions[..k].iter().any(|o| o.label == g.label) {
                return Err(invalid(&field, format!("duplicate label `{}`", g.label)));
            }
            let sources = [!g.points.is_empty(), g.grid.is_some(), g.neighborhood.is_some()];
            if sources.iter().filter(|s| **s).count() != 1 {
                return Err(invalid(&field, "give exactly one of points, grid, neighborhood"));
            }
            if let Some(t) = g.t_end {
                if !(t > t0 && t <= t1) {
                    return Err(invalid(&format!("{field}.t_end"), format!("must lie in ({t0}, {t1}]")));
                }
            }
        }
        let orbits = self.orbits();
        let needs_orbits = self.outputs.trajectory
            || self.outputs.invariant
            || self.outputs.howland
            || self.outputs.section.is_some()
            || self.outputs.ftle.is_some()
            || self.outputs.separation.is_some()
            || self.outputs.classical_limit.is_some();
        if needs_orbits && orbits.is_empty() {
            return Err(invalid("initial_conditions", "the requested outputs need at least one initial condition"));
        }
        if let Some(sec) = &self.outputs.section {
            if sec.kind != SectionKind::Plane && self.section_omega().is_none() {
                return Err(invalid(
                    "outputs.section.omega",
                    format!("preset `{}` has no drive period; give omega or use a plane section", self.model.preset),
                ));
            }
            if t0 != 0.0 {
                return Err(invalid("time.start", "sections are sampled from t = 0"));
            }
            if sec.max_points == 0 {
                return Err(invalid("outputs.section.max_points", "must be positive"));
            }
        }
        if let Some(f) = &self.outputs.ftle {
            if !(f.renorm > self.integrator.step && f.offset > 0.0) {
                return Err(invalid("outputs.ftle", "renorm must exceed the step and offset must be positive"));
            }
        }
        if let Some(s) = &self.outputs.separation {
            for pair in &s.pairs {
                if pair.iter().any(|&i| i >= orbits.len()) || pair[0] == pair[1] {
                    return Err(invalid(
                        "outputs.separation.pairs",
                        format!("{pair:?} must name two distinct orbits below {}", orbits.len()),
                    ));
                }
            }
        }
        if let Some(q) = &self.outputs.quantum {
            if !self.is_two_level() {
                return Err(invalid("outputs.quantum", "needs the two-level preset"));
            }
            if q.spins.is_empty() {
                return Err(invalid("outputs.quantum.spins", "needs at least one spin"));
            }
            for &s in &q.spins {
                twice_spin(s).map_err(|e| invalid("outputs.quantum.spins", e))?;
            }
            if !(q.step > 0.0) || q.record_every == 0 {
                return Err(invalid("outputs.quantum", "step and record_every must be positive"));
            }
            if q.g0.as_ref().is_some_and(|g| g.len() != 3) {
                return Err(invalid("outputs.quantum.g0", "needs three components"));
            }
        }
        if let Some(c) = &self.outputs.classical_limit {
            if !self.is_two_level() {
                return Err(invalid("outputs.classical_limit", "needs the two-level preset"));
            }
            twice_spin(c.spin).map_err(|e| invalid("outputs.classical_limit.spin", e))?;
            if !(c.step > 0.0) || c.record_every == 0 {
                return Err(invalid("outputs.classical_limit", "step and record_every must be positive"));
            }
        }
        for (k, c) in self.checks.iter().enumerate() {
            let field = format!("checks[{k}]");
            let enabled = match c.kind.requires() {
                "invariant" => self.outputs.invariant,
                "trajectory" => self.outputs.trajectory,
                "ftle" => self.outputs.ftle.is_some(),
                "separation" => self.outputs.separation.is_some(),
                "howland" => self.outputs.howland,
                "quantum" => self.outputs.quantum.is_some(),
                _ => self.outputs.classical_limit.is_some(),
            };
            if !enabled {
                return Err(invalid(&field, format!("needs outputs.{} enabled", c.kind.requires())));
            }
            if !c.threshold.is_finite() {
                return Err(invalid(&format!("{field}.threshold"), "must be finite"));
            }
            if (c.kind == CheckKind::DriftExceeds) != c.level.is_some() {
                return Err(invalid(&format!("{field}.level"), "is required by drift-exceeds and only allowed there"));
            }
            if let Some(e) = c.epsilon {
                if c.kind.is_quantum() || !self.model.epsilon.contains(&e) {
                    return Err(invalid(&format!("{field}.epsilon"), format!("{e} is not one of the classical runs")));
                }
            }
            if let Some(g) = &c.group {
                if !self.initial_conditions.iter().any(|ic| &ic.label == g) {
                    return Err(invalid(&format!("{field}.group"), format!("no initial-condition group `{g}`")));
                }
            }
            if matches!(c.kind, CheckKind::LevelCurves | CheckKind::DistinctLabels) && self.outputs.section.is_none() {
                return Err(invalid(&field, "needs outputs.section enabled"));
            }
        }
        Ok(())
    }

    /// Fills every default that depends on the model, so the manifest
    /// records exactly what ran.
    pub fn resolved(&self) -> ScenarioConfig {
        let mut cfg = self.clone();
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(cfg.name.clone());
        }
        let omega = self.section_omega();
        if let Some(sec) = &mut cfg.outputs.section {
            if sec.kind != SectionKind::Plane && sec.omega.is_none() {
                sec.omega = omega;
            }
        }
        if self.is_two_level() && cfg.model.field.is_none() {
            cfg.model.field = Some(FieldConfig::Preset("constant-z".into()));
        }
        cfg
    }

    fn section_omega(&self) -> Option<f64> {
        if let Some(w) = self.outputs.section.as_ref().and_then(|s| s.omega) {
            return Some(w);
        }
        if self.model.omega.is_some() {
            return None;
        }
        preset_info(&self.model.preset).ok().and_then(|i| i.strobe_omega)
    }

    pub fn field(&self) -> Result<TimeCoefficients, CliError> {
        let span = self.span();
        Ok(match &self.model.field {
            None => field_preset("constant-z")?,
            Some(FieldConfig::Preset(name)) => field_preset(name)?,
            Some(FieldConfig::Expressions(src)) => {
                if src.len() != 3 {
                    return Err(invalid("model.field", "needs three expressions Bx, By, Bz"));
                }
                let refs: Vec<&str> = src.iter().map(String::as_str).collect();
                TimeCoefficients::from_exprs(&refs, span)?
            }
            Some(FieldConfig::Random { random_modes }) => {
                if *random_modes == 0 {
                    return Err(invalid("model.field.random_modes", "must be positive"));
                }
                random_field(self.seed, *random_modes)
            }
        })
    }

    pub fn spec(&self, epsilon: f64) -> Result<HamiltonianSpec, CliError> {
        if self.is_two_level() {
            return Ok(model_preset(TWO_LEVEL, &ModelParams::field(self.field()?))?);
        }
        match &self.model.omega {
            None => Ok(model_preset(&self.model.preset, &ModelParams::epsilon(epsilon))?),
            Some(src) => {
                let drive = Drive::from_expr(src).map_err(|e| invalid("model.omega", e))?;
                let pert = (epsilon != 0.0).then(|| Perturbation::quartic(epsilon));
                let label = format!("{}[Omega={src}]", self.model.preset);
                Ok(HamiltonianSpec::new(label, Arc::new(quadratic6()), quartic_coefficients(drive), pert)?)
            }
        }
    }

    /// Orbits in declaration order, ids `<label>-<k>`.
    pub fn orbits(&self) -> Vec<Orbit> {
        let mut out = Vec::new();
        for g in &self.initial_conditions {
            let pts: Vec<PhaseState> = if let Some(grid) = &g.grid {
                grid_ics((grid.q[0], grid.q[1]), (grid.p[0], grid.p[1]), grid.n)
            } else if let Some(nb) = &g.neighborhood {
                let all = neighborhood_ics(PhaseState::new(nb.center[0], nb.center[1]), nb.radius, nb.count);
                all.into_iter().skip(usize::from(!nb.include_center)).collect()
            } else {
                g.points.iter().map(|p| PhaseState::new(p[0], p[1])).collect()
            };
            let t_end = g.t_end.unwrap_or(self.time.end);
            out.extend(pts.into_iter().enumerate().map(|(k, x0)| Orbit {
                id: format!("{}-{k}", g.label),
                group: g.label.clone(),
                x0,
                t_end,
            }));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
[model]
preset = "quartic-periodic"
[time]
end = 10.0
[[initial_conditions]]
label = "a"
points = [[0.0, 1.0]]
[outputs]
invariant = true
[[checks]]
kind = "invariant-drift"
threshold = 1e-6
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.model.epsilon, vec![0.0]);
        assert_eq!(cfg.integrator.step, 1e-3);
        assert_eq!(cfg.time.sample, 0.1);
        assert_eq!(cfg.output_dir(), "mini");
        assert_eq!(cfg.orbits()[0].id, "a-0");
    }

    #[test]
    fn serialization_round_trips() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap().resolved();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let broken = MINIMAL.replace("end = 10.0", "end = \"ten\"");
        let err = ScenarioConfig::from_toml(&broken).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
        let unknown = MINIMAL.replace("[time]", "[time]\nstop = 3");
        let err = ScenarioConfig::from_toml(&unknown).unwrap_err().to_string();
        assert!(err.contains("stop"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let cases = [
            (MINIMAL.replace("end = 10.0", "end = -1.0"), "time.end"),
            (MINIMAL.replace("quartic-periodic", "quartic"), "model.preset"),
            (MINIMAL.replace("invariant = true", "invariant = false"), "checks[0]"),
            (MINIMAL.replace("points = [[0.0, 1.0]]", "points = [[0.0, 1.0]]\nt_end = 20.0"), "t_end"),
        ];
        for (text, field) in cases {
            let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
            assert!(err.contains(field), "{field}: {err}");
        }
    }

    #[test]
    fn stroboscopic_frequency_comes_from_the_preset() {
        let text = MINIMAL.replace("invariant = true", "invariant = true\nsection = { kind = \"stroboscopic\" }");
        let cfg = ScenarioConfig::from_toml(&text).unwrap().resolved();
        assert_eq!(cfg.outputs.section.unwrap().omega, Some(std::f64::consts::FRAC_PI_2));
        let quasi = text.replace("quartic-periodic", "quartic-quasiperiodic");
        let err = ScenarioConfig::from_toml(&quasi).unwrap_err().to_string();
        assert!(err.contains("outputs.section.omega"), "{err}");
    }

    #[test]
    fn ic_groups_expand() {
        let text = MINIMAL.replace(
            "points = [[0.0, 1.0]]",
            "neighborhood = { center = [0.0, 1.0], radius = 0.05, count = 8 }",
        );
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        let orbits = cfg.orbits();
        assert_eq!(orbits.len(), 8);
        assert!(orbits.iter().all(|o| (o.x0.distance(&PhaseState::new(0.0, 1.0)) - 0.05).abs() < 1e-12));
    }

    #[test]
    fn expression_drives_and_fields() {
        let text = MINIMAL.replace("preset = \"quartic-periodic\"", "preset = \"quartic-periodic\"\nomega = \"cos(t)\"");
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        let spec = cfg.spec(0.0).unwrap();
        assert!((spec.coefficients().eval(1.0).unwrap()[4] - 0.5 * 1f64.cos()).abs() < 1e-15);

        let two = MINIMAL
            .replace("quartic-periodic", "two-level")
            .replace("[time]", "field = [\"cos(t)\", \"0\", \"1\"]\n[time]");
        let cfg = ScenarioConfig::from_toml(&two).unwrap();
        assert_eq!(cfg.field().unwrap().eval(0.0).unwrap(), vec![1.0, 0.0, 1.0]);
        let bad = two.replace("\"cos(t)\", ", "");
        assert!(ScenarioConfig::from_toml(&bad).unwrap_err().to_string().contains("model"));
    }
}
