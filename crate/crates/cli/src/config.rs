//! Run configuration: a TOML file with optional command-line overrides.

use std::path::{Path, PathBuf};

use nsk_core::driver::study::FrozenControl;
use nsk_core::{
    BaseSolver, Cycle, InnerIteration, LinearConfig, LinearMethod, PrecondConfig, ProblemParams,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Bench,
    Spectral,
    Mms,
    Export,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mesh: MeshConfig,
    pub params: ParamsConfig,
    #[serde(default)]
    pub linear: LinearSection,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub mms: MmsSection,
}

fn default_seed() -> u64 {
    7
}

/// Levels `n0 · 2^k`, `k < levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n0: usize,
    pub levels: usize,
    /// Level index at which the Newton continuation starts.
    #[serde(default)]
    pub first_level: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            n0: 16,
            levels: 3,
            first_level: 0,
        }
    }
}

impl MeshConfig {
    pub fn finest(&self) -> usize {
        self.n0 << (self.levels.max(1) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub nu: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub gamma_y: f64,
    #[serde(default)]
    pub gamma_p: f64,
}

fn one() -> f64 {
    1.0
}

impl ParamsConfig {
    pub fn to_params(self) -> Result<ProblemParams, CliError> {
        ProblemParams::new(self.nu, self.beta, self.gamma_y, self.gamma_p)
            .map_err(|e| CliError::Config(format!("[params]: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    #[serde(default)]
    pub method: LinearMethod,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Preconditioner base mesh; half the finest mesh when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<usize>,
    #[serde(default)]
    pub cycle: Cycle,
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default)]
    pub inner: InnerIteration,
    #[serde(default)]
    pub base_solver: BaseSolver,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_maxit() -> usize {
    1000
}

fn default_inner_steps() -> usize {
    2
}

impl Default for LinearSection {
    fn default() -> Self {
        Self {
            method: LinearMethod::Cg,
            tol: default_tol(),
            base: None,
            cycle: Cycle::TwoGrid,
            maxit: default_maxit(),
            inner_steps: default_inner_steps(),
            inner: InnerIteration::Richardson,
            base_solver: BaseSolver::Auto,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    /// Directory for field exports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Parameter grid of a benchmark; empty lists fall back to `[params]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default)]
    pub nu: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub gamma_p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub ns: Vec<usize>,
    #[serde(default)]
    pub control: FrozenControl,
    #[serde(default = "default_lanczos")]
    pub lanczos_steps: usize,
}

fn default_lanczos() -> usize {
    40
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            ns: vec![16, 32, 64],
            control: FrozenControl::Target,
            lanczos_steps: default_lanczos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsSection {
    pub nu: f64,
    #[serde(default = "yes")]
    pub convective: bool,
    pub ns: Vec<usize>,
}

fn yes() -> bool {
    true
}

impl Default for MmsSection {
    fn default() -> Self {
        Self {
            nu: 1.0,
            convective: true,
            ns: vec![8, 16, 32],
        }
    }
}

/// Command-line values that replace those of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<LinearMethod>,
    pub tol: Option<f64>,
    pub base: Option<usize>,
    pub cycle: Option<Cycle>,
    pub nu: Option<f64>,
    pub beta: Option<f64>,
    pub gamma_y: Option<f64>,
    pub gamma_p: Option<f64>,
    pub n0: Option<usize>,
    pub levels: Option<usize>,
    pub seed: Option<u64>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses TOML text and validates the result.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file, applies `overrides` and validates the result.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.with_overrides(overrides)
    }

    /// Reads `path` when given; otherwise starts from defaults, which needs
    /// `nu` and `beta` among the overrides.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        if let Some(path) = path {
            return Self::load(path, overrides);
        }
        let (Some(nu), Some(beta)) = (overrides.nu, overrides.beta) else {
            return Err(CliError::Config(
                "no --config file given; --nu and --beta are then required".into(),
            ));
        };
        Self {
            command: None,
            seed: default_seed(),
            mesh: MeshConfig::default(),
            params: ParamsConfig {
                nu,
                beta,
                gamma_y: 1.0,
                gamma_p: 0.0,
            },
            linear: LinearSection::default(),
            output: OutputConfig::default(),
            bench: BenchSection::default(),
            spectral: SpectralSection::default(),
            mms: MmsSection::default(),
        }
        .with_overrides(overrides)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies command-line values and validates again.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self, CliError> {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.linear.method, &o.method);
        set(&mut self.linear.tol, &o.tol);
        if o.base.is_some() {
            self.linear.base = o.base;
        }
        set(&mut self.linear.cycle, &o.cycle);
        set(&mut self.params.nu, &o.nu);
        set(&mut self.params.beta, &o.beta);
        set(&mut self.params.gamma_y, &o.gamma_y);
        set(&mut self.params.gamma_p, &o.gamma_p);
        set(&mut self.mesh.n0, &o.n0);
        set(&mut self.mesh.levels, &o.levels);
        set(&mut self.seed, &o.seed);
        if o.csv.is_some() {
            self.output.csv = o.csv.clone();
        }
        if o.json.is_some() {
            self.output.json = o.json.clone();
        }
        if o.out.is_some() {
            self.output.dir = o.out.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.params.to_params()?;
        let m = &self.mesh;
        if m.n0 == 0 || m.levels == 0 {
            return bad("[mesh] n0 and levels must be positive".into());
        }
        if m.levels > 8 {
            return bad(format!("[mesh] levels = {} is beyond desk scale", m.levels));
        }
        if m.first_level >= m.levels {
            return bad(format!(
                "[mesh] first_level = {} must be below levels = {}",
                m.first_level, m.levels
            ));
        }
        let l = &self.linear;
        if !(l.tol > 0.0 && l.tol < 1.0) {
            return bad(format!("[linear] tol = {} must lie in (0, 1)", l.tol));
        }
        if l.maxit == 0 {
            return bad("[linear] maxit must be positive".into());
        }
        if l.inner_steps == 0 {
            return bad("[linear] inner_steps must be positive".into());
        }
        if l.method == LinearMethod::Mgcg || l.base.is_some() {
            self.check_base()?;
        }
        let s = &self.spectral;
        if s.ns.is_empty()
            || s.ns.iter().any(|&n| n < 2 || n % 2 != 0)
            || s.ns.windows(2).any(|w| w[1] != 2 * w[0])
        {
            return bad(format!(
                "[spectral] ns = {:?} must be even meshes, each twice the previous",
                s.ns
            ));
        }
        if s.lanczos_steps > 40 {
            return bad(format!(
                "[spectral] lanczos_steps = {} exceeds 40",
                s.lanczos_steps
            ));
        }
        let mms = &self.mms;
        if !(mms.nu > 0.0)
            || mms.ns.is_empty()
            || mms.ns.windows(2).any(|w| w[1] <= w[0])
            || mms.ns[0] == 0
        {
            return bad("[mms] nu must be positive and ns increasing".into());
        }
        for (key, list) in [("nu", &self.bench.nu), ("beta", &self.bench.beta)] {
            if list.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("[bench] {key} entries must be positive"));
            }
        }
        if self.bench.gamma_p.iter().any(|v| !(*v >= 0.0)) {
            return bad("[bench] gamma_p entries must be nonnegative".into());
        }
        for case in self.bench_params() {
            if case.gamma_y + case.gamma_p <= 0.0 {
                return bad("[bench] gamma_y and gamma_p must not both be zero".into());
            }
        }
        Ok(())
    }

    /// Checks that the preconditioner base is a coarse level of the hierarchy.
    pub fn check_base(&self) -> Result<(), CliError> {
        let m = &self.mesh;
        let base = self.base_n();
        if !(0..m.levels.saturating_sub(1)).any(|k| m.n0 << k == base) {
            return Err(CliError::Config(format!(
                "[linear] base = {base} is not a mesh coarser than the finest (n0 = {}, levels = {})",
                m.n0, m.levels
            )));
        }
        if self.linear.cycle == Cycle::TwoGrid && 2 * base != m.finest() {
            return Err(CliError::Config(format!(
                "[linear] cycle = \"two_grid\" needs base = {}, got {base}",
                m.finest() / 2
            )));
        }
        Ok(())
    }

    /// Preconditioner base mesh.
    pub fn base_n(&self) -> usize {
        self.linear.base.unwrap_or(self.mesh.finest() / 2)
    }

    pub fn precond(&self) -> PrecondConfig {
        PrecondConfig {
            base_n: self.base_n(),
            cycle: self.linear.cycle,
            inner_steps: self.linear.inner_steps,
            inner: self.linear.inner,
            base_solver: self.linear.base_solver,
        }
    }

    pub fn linear_config(&self) -> LinearConfig {
        LinearConfig {
            method: self.linear.method,
            tol: self.linear.tol,
            maxit: self.linear.maxit,
            precond: self.precond(),
        }
    }

    /// Cartesian product of the benchmark lists, in the order nu, beta, gamma_p.
    pub fn bench_params(&self) -> Vec<ProblemParams> {
        let or = |list: &Vec<f64>, v: f64| {
            if list.is_empty() {
                vec![v]
            } else {
                list.clone()
            }
        };
        let mut out = Vec::new();
        for nu in or(&self.bench.nu, self.params.nu) {
            for beta in or(&self.bench.beta, self.params.beta) {
                for gamma_p in or(&self.bench.gamma_p, self.params.gamma_p) {
                    out.push(ProblemParams {
                        nu,
                        beta,
                        gamma_y: self.params.gamma_y,
                        gamma_p,
                    });
                }
            }
        }
        out
    }
}
