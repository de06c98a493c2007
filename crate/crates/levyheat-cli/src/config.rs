//! Experiment configuration: a TOML file with one table per block.
//!
//! Unknown keys are rejected by name. Semantic validation happens in
//! [`ExperimentConfig::validate`], which every subcommand runs before doing
//! any work.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use levyheat::checks::{MalliavinSuite, RegularitySuite};
use levyheat::functional::{PathFunctional, TestFunction, TimeMeasure};
use levyheat::harness::{Campaign, CovarianceSpec, ResolutionLadder, SweepMode};
use levyheat::malliavin::check_seminorm_exponent;
use levyheat::noise::{AmplitudeLaw, LevyModel};
use levyheat::par::Exec;
use levyheat::solver::{Backend, Discretization, Drift, InitialValue, Problem, ReferenceSettings};
use serde::Deserialize;
use sha2::{Digest, Sha256};

/// Most components a functional may have.
pub const MAX_COMPONENTS: usize = 4;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    pub discretization: DiscretizationConfig,
    pub mc: McConfig,
    #[serde(default)]
    pub functional: Vec<FunctionalConfig>,
    pub covariance: Option<CovarianceConfig>,
    pub solve: Option<SolveConfig>,
    pub malliavin: Option<MalliavinConfig>,
    pub regularity: Option<RegularityConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DriftName {
    Zero,
    Sine,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitialName {
    Zero,
    Parabola,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub beta: f64,
    pub horizon: f64,
    pub drift: DriftName,
    #[serde(default)]
    pub drift_amplitude: f64,
    pub initial: InitialName,
    #[serde(default = "one")]
    pub initial_amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeName {
    Rademacher,
    Atoms,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub rate: f64,
    pub alpha: f64,
    pub modes: usize,
    pub amplitude: AmplitudeName,
    /// `[value, probability]` pairs when `amplitude = "atoms"`.
    pub amplitude_atoms: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    Spectral,
    Fem,
}

impl BackendName {
    fn make(self) -> fn(usize) -> Backend {
        match self {
            BackendName::Spectral => |n| Backend::Spectral { modes: n },
            BackendName::Fem => |n| Backend::Fem { cells: n },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub backend: BackendName,
    /// Strong errors are measured here; defaults to the horizon.
    pub t_eval: Option<f64>,
    pub space: Option<SpaceSweepConfig>,
    pub time: Option<TimeSweepConfig>,
    pub diagonal: Option<DiagonalSweepConfig>,
    pub reference: ReferenceConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSweepConfig {
    pub sizes: Vec<usize>,
    pub k: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSweepConfig {
    pub size: usize,
    pub ks: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalSweepConfig {
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub modes: usize,
    pub substeps: usize,
    #[serde(default = "default_gate")]
    pub gate_samples: usize,
}

fn default_gate() -> usize {
    16
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OuterName {
    Constant,
    Linear,
    Product,
    SumOfSquares,
    Sine,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub name: String,
    pub outer: OuterName,
    /// Frequency of `sine`.
    pub freq: Option<f64>,
    /// Value of `constant`.
    pub value: Option<f64>,
    #[serde(default)]
    pub component: Vec<ComponentConfig>,
}

/// A time measure `Σ w_i δ_{t_i} + density · dt` and a test function.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    /// Shorthand for `atoms = [[at, 1.0]]`.
    pub at: Option<f64>,
    pub atoms: Option<Vec<(f64, f64)>>,
    pub density: Option<f64>,
    pub psi: PsiConfig,
}

/// Exactly one of `mode`, `delta` (with `modes`), or `coeffs`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    pub mode: Option<usize>,
    pub delta: Option<f64>,
    pub modes: Option<usize>,
    pub coeffs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    pub t1: f64,
    pub t2: f64,
    pub psi1: PsiConfig,
    pub psi2: PsiConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub size: usize,
    pub k: f64,
    /// Index of the sample path in the master stream.
    #[serde(default)]
    pub path: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinConfig {
    pub instances: Option<usize>,
    pub duality_samples: Option<usize>,
    pub duality_nodes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    pub profile_samples: usize,
    pub profile_modes: usize,
    pub profile_steps: usize,
    pub profile_grids: Vec<usize>,
    pub seminorm_counts: Vec<usize>,
    pub seminorm_modes: usize,
    pub seminorm_steps: usize,
    pub q: f64,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir() }
    }
}

fn default_dir() -> String {
    "out".into()
}

/// A parsed configuration with its hash and the flag overrides applied.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the file bytes.
    pub hash: String,
    pub seed: u64,
    pub exec: Exec,
}

/// A configuration problem; maps to exit status 2.
#[derive(Debug)]
pub struct ValidationError(pub anyhow::Error);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn load(
    path: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<Loaded, ValidationError> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(ValidationError)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| ValidationError(anyhow!("config is not UTF-8: {e}")))?;
    let config = parse(&text)?;
    let hash = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let seed = seed.unwrap_or(config.mc.seed);
    let exec = Exec::from_workers(workers.or(config.mc.workers));
    let loaded = Loaded {
        config,
        hash,
        seed,
        exec,
    };
    loaded.config.validate().map_err(ValidationError)?;
    Ok(loaded)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ValidationError> {
    toml::from_str(text).map_err(|e| ValidationError(anyhow!("invalid config: {e}")))
}

fn psi(p: &PsiConfig) -> anyhow::Result<TestFunction> {
    match (p.mode, p.delta, &p.coeffs) {
        (Some(j), None, None) if p.modes.is_none() => {
            if j == 0 {
                bail!("psi.mode must be at least 1");
            }
            Ok(TestFunction::mode(j))
        }
        (None, Some(xi), None) => {
            let modes = p
                .modes
                .ok_or_else(|| anyhow!("psi.delta needs psi.modes"))?;
            if !(0.0..=1.0).contains(&xi) || modes == 0 {
                bail!("psi.delta must lie in [0, 1] with psi.modes ≥ 1");
            }
            Ok(TestFunction::truncated_delta(xi, modes))
        }
        (None, None, Some(c)) if p.modes.is_none() => Ok(TestFunction::new(c.clone())),
        _ => bail!("psi needs exactly one of `mode`, `delta` (with `modes`), `coeffs`"),
    }
}

impl FunctionalConfig {
    pub fn build(&self) -> anyhow::Result<PathFunctional> {
        use levyheat::functional::Outer;
        if self.component.len() > MAX_COMPONENTS {
            bail!(
                "functional `{}` has {} components; at most {MAX_COMPONENTS} are allowed",
                self.name,
                self.component.len()
            );
        }
        let outer = match self.outer {
            OuterName::Constant => Outer::Constant(
                self.value
                    .ok_or_else(|| anyhow!("outer = \"constant\" needs `value`"))?,
            ),
            OuterName::Linear => Outer::Linear,
            OuterName::Product => Outer::Product,
            OuterName::SumOfSquares => Outer::SumOfSquares,
            OuterName::Sine => Outer::Sine {
                freq: self
                    .freq
                    .ok_or_else(|| anyhow!("outer = \"sine\" needs `freq`"))?,
            },
        };
        let mut components = Vec::new();
        for c in &self.component {
            let mut atoms = c.atoms.clone().unwrap_or_default();
            if let Some(t) = c.at {
                atoms.push((t, 1.0));
            }
            components.push((
                TimeMeasure::new(atoms, c.density.unwrap_or(0.0))?,
                psi(&c.psi)?,
            ));
        }
        Ok(PathFunctional::new(components, outer)?)
    }
}

impl ExperimentConfig {
    pub fn problem(&self) -> anyhow::Result<Problem> {
        let p = &self.problem;
        let drift = match p.drift {
            DriftName::Zero => Drift::Zero,
            DriftName::Sine => Drift::Sine {
                amplitude: p.drift_amplitude,
            },
        };
        let initial = match p.initial {
            InitialName::Zero => InitialValue::Zero,
            InitialName::Parabola => InitialValue::Parabola {
                scale: p.initial_amplitude,
            },
        };
        Problem::new(p.beta, p.horizon, drift, initial).context("[problem]")
    }

    pub fn model(&self) -> anyhow::Result<LevyModel> {
        let n = &self.noise;
        let law = match (n.amplitude, &n.amplitude_atoms) {
            (AmplitudeName::Rademacher, None) => AmplitudeLaw::rademacher(),
            (AmplitudeName::Atoms, Some(a)) => {
                AmplitudeLaw::new(a.clone()).context("[noise] amplitude_atoms")?
            }
            (AmplitudeName::Rademacher, Some(_)) => {
                bail!("[noise] amplitude_atoms is only read with amplitude = \"atoms\"")
            }
            (AmplitudeName::Atoms, None) => {
                bail!("[noise] amplitude = \"atoms\" needs amplitude_atoms")
            }
        };
        LevyModel::new(n.rate, n.alpha, n.modes, self.problem.beta, law).context("[noise]")
    }

    pub fn reference(&self) -> ReferenceSettings {
        let r = &self.discretization.reference;
        ReferenceSettings {
            modes: r.modes,
            substeps: r.substeps,
        }
    }

    pub fn ladders(&self) -> anyhow::Result<Vec<ResolutionLadder>> {
        let d = &self.discretization;
        let t = self.problem.horizon;
        let make = d.backend.make();
        let mut out = Vec::new();
        if let Some(s) = &d.space {
            out.push(
                ResolutionLadder::space(make, &s.sizes, s.k, t)
                    .context("[discretization.space]")?,
            );
        }
        if let Some(s) = &d.time {
            out.push(
                ResolutionLadder::time(make(s.size), &s.ks, t).context("[discretization.time]")?,
            );
        }
        if let Some(s) = &d.diagonal {
            out.push(
                ResolutionLadder::diagonal(make, &s.sizes, t)
                    .context("[discretization.diagonal]")?,
            );
        }
        Ok(out)
    }

    pub fn functionals(&self) -> anyhow::Result<Vec<(String, PathFunctional)>> {
        let mut out: Vec<(String, PathFunctional)> = Vec::new();
        for f in &self.functional {
            if out.iter().any(|(n, _)| *n == f.name) {
                bail!("duplicate functional name `{}`", f.name);
            }
            let built = f
                .build()
                .with_context(|| format!("[[functional]] `{}`", f.name))?;
            built
                .validate(self.problem.horizon)
                .with_context(|| format!("[[functional]] `{}`", f.name))?;
            out.push((f.name.clone(), built));
        }
        Ok(out)
    }

    pub fn covariance_spec(&self) -> anyhow::Result<Option<CovarianceSpec>> {
        self.covariance
            .as_ref()
            .map(|c| -> anyhow::Result<CovarianceSpec> {
                Ok(CovarianceSpec {
                    t1: c.t1,
                    t2: c.t2,
                    psi1: psi(&c.psi1)?,
                    psi2: psi(&c.psi2)?,
                })
            })
            .transpose()
            .context("[covariance]")
    }

    pub fn t_eval(&self) -> f64 {
        self.discretization.t_eval.unwrap_or(self.problem.horizon)
    }

    pub fn solve_discretization(&self) -> anyhow::Result<Discretization> {
        let s = self
            .solve
            .as_ref()
            .ok_or_else(|| anyhow!("`solve` needs a [solve] table"))?;
        Discretization::new(
            self.discretization.backend.make()(s.size),
            s.k,
            self.problem.horizon,
        )
        .context("[solve]")
    }

    pub fn malliavin_suite(&self, seed: u64, exec: Exec) -> MalliavinSuite {
        let d = MalliavinSuite::default();
        let m = self.malliavin.as_ref();
        MalliavinSuite {
            instances: m.and_then(|m| m.instances).unwrap_or(d.instances),
            duality_samples: m
                .and_then(|m| m.duality_samples)
                .unwrap_or(d.duality_samples),
            duality_nodes: m.and_then(|m| m.duality_nodes).unwrap_or(d.duality_nodes),
            seed,
            exec,
        }
    }

    pub fn regularity_suite(&self, seed: u64, exec: Exec) -> Option<RegularitySuite> {
        self.regularity.as_ref().map(|r| RegularitySuite {
            profile_samples: r.profile_samples,
            profile_modes: r.profile_modes,
            profile_steps: r.profile_steps,
            profile_grids: r.profile_grids.clone(),
            seminorm_counts: r.seminorm_counts.clone(),
            seminorm_modes: r.seminorm_modes,
            seminorm_steps: r.seminorm_steps,
            seminorm_q: r.q,
            seminorm_times: r.times.clone(),
            seed,
            exec,
        })
    }

    /// The campaign every rate subcommand starts from: all ladders, no estimators.
    pub fn campaign(&self, seed: u64, exec: Exec) -> anyhow::Result<Campaign> {
        Ok(Campaign {
            problem: self.problem()?,
            model: self.model()?,
            reference: self.reference(),
            ladders: self.ladders()?,
            t_eval: self.t_eval(),
            strong: false,
            functionals: Vec::new(),
            covariance: None,
            samples: self.mc.samples,
            seed,
            exec,
        })
    }

    /// Everything a subcommand could build, so a bad value fails the same way
    /// under every subcommand.
    pub fn validate(&self) -> anyhow::Result<()> {
        let problem = self.problem()?;
        let model = self.model()?;
        let ladders = self.ladders()?;
        if ladders.is_empty() {
            bail!("[discretization] needs at least one of the space, time, diagonal tables");
        }
        for l in &ladders {
            if l.rungs.len() < 3 {
                bail!(
                    "[discretization.{}] needs at least 3 rungs for a rate fit",
                    l.mode
                );
            }
        }
        if self.discretization.reference.modes < model.k_noise() {
            bail!(
                "[discretization.reference] modes = {} is below [noise] modes = {}; the reference would drop jumps",
                self.discretization.reference.modes,
                model.k_noise()
            );
        }
        truncation_check(&ladders, model.k_noise())?;
        self.functionals()?;
        let mut c = self.campaign(self.mc.seed, Exec::Sequential)?;
        c.covariance = self.covariance_spec()?;
        c.functionals = self.functionals()?;
        c.validate().context("campaign")?;
        if self.solve.is_some() {
            self.solve_discretization()?;
        }
        if let Some(r) = &self.regularity {
            check_seminorm_exponent(r.q, problem.beta).context("[regularity] q")?;
            if r.profile_grids.len() < 2 || r.seminorm_counts.len() < 2 {
                bail!("[regularity] needs at least two grids and two sample counts");
            }
            if let Some(t) = r
                .times
                .iter()
                .find(|t| !(**t > 0.0 && **t <= problem.horizon))
            {
                bail!("[regularity] times: {t} outside (0, {}]", problem.horizon);
            }
        }
        if let Some(m) = &self.malliavin {
            if m.duality_samples.is_some_and(|n| n < 2) || m.duality_nodes == Some(0) {
                bail!("[malliavin] needs duality_samples ≥ 2 and duality_nodes ≥ 1");
            }
        }
        Ok(())
    }
}

/// Space-like sweeps must keep `K_noise ≥ 4/h_min`; a time sweep pins `h`,
/// and only needs its resolution not to exceed `K_noise`.
fn truncation_check(ladders: &[ResolutionLadder], k_noise: usize) -> anyhow::Result<()> {
    for l in ladders {
        let h_min = l.rungs.iter().map(|r| r.h()).fold(f64::INFINITY, f64::min);
        match l.mode {
            SweepMode::Space | SweepMode::Diagonal => {
                if (k_noise as f64) < 4.0 / h_min - 1e-9 {
                    bail!(
                        "[noise] modes = {k_noise} is below 4/h_min = {} of the {} sweep",
                        (4.0 / h_min).round(),
                        l.mode
                    );
                }
            }
            SweepMode::Time => {
                if (k_noise as f64) < 1.0 / h_min - 1e-9 {
                    bail!("[noise] modes = {k_noise} is below the pinned resolution 1/h = {} of the time sweep", (1.0 / h_min).round());
                }
            }
        }
    }
    Ok(())
}
