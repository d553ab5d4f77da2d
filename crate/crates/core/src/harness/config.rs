//! TOML run configuration and its resolution into a validated [`RunSpec`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activator::{PicardOptions, DEFAULT_BLOWUP_THRESHOLD, DEFAULT_SAFETY_FACTOR};
use crate::error::{Error, Result};
use crate::inhibitor::DEFAULT_MAX_HALVINGS;
use crate::model::{ActivatorField, ModelParams, SpatialGrid};
use crate::monitor::EstimateConfig;
use crate::operator::DEFAULT_SEMIGROUP_TOL;

/// Inhibitor integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Em,
    Transform,
    Ode,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Em => "em",
            Scheme::Transform => "transform",
            Scheme::Ode => "ode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    Lie,
    Strang,
}

/// `global` runs to the horizon; `localized` stops at the first time `B*_t >= K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Global,
    Localized,
}

/// Initial activator profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialProfile {
    Zero,
    Constant { value: f64 },
    /// `(sup/2) (1 + prod_i cos(pi x_i / L_i))`, whose maximum is `sup` at the origin.
    Cosine { sup: f64 },
}

impl InitialProfile {
    pub fn build(&self, grid: &SpatialGrid<f64>) -> Result<ActivatorField<f64>> {
        match *self {
            InitialProfile::Zero => Ok(ActivatorField::zeros(grid)),
            InitialProfile::Constant { value } => ActivatorField::constant(grid, value),
            InitialProfile::Cosine { sup } => {
                let lengths: Vec<f64> = grid.axes().iter().map(|a| a.length).collect();
                ActivatorField::from_fn(grid, |x| {
                    let prod: f64 = x
                        .iter()
                        .zip(&lengths)
                        .map(|(xi, l)| (std::f64::consts::PI * xi / l).cos())
                        .product();
                    (0.5 * sup * (1.0 + prod)).max(0.0)
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dimension: Option<usize>,
    #[serde(alias = "length")]
    pub lengths: OneOrMany<f64>,
    pub points: OneOrMany<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticSection {
    pub master_seed: u64,
    pub paths: usize,
    /// Brownian intervals on `[0, horizon]`; must agree with `integrator.dt` when both are set.
    pub steps: Option<usize>,
    #[serde(rename = "barrier_K", alias = "barrier_k")]
    pub barrier_k: f64,
}

impl Default for StochasticSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            paths: 1,
            steps: None,
            barrier_k: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub scheme: Scheme,
    pub dt: Option<f64>,
    pub max_halvings: u32,
    pub splitting: Splitting,
    pub semigroup_tol: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Transform,
            dt: None,
            max_halvings: DEFAULT_MAX_HALVINGS,
            splitting: Splitting::Lie,
            semigroup_tol: DEFAULT_SEMIGROUP_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iterations: usize,
    pub history_nodes: usize,
    pub safety_factor: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        let d = PicardOptions::<f64>::default();
        Self {
            tol: d.tol,
            max_iterations: d.max_iterations,
            history_nodes: d.history_nodes,
            safety_factor: DEFAULT_SAFETY_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSection {
    pub alpha: f64,
    pub beta: f64,
    pub ell: f64,
    pub blow_up_threshold: f64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.0,
            ell: 2.0,
            blow_up_threshold: DEFAULT_BLOWUP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    pub gamma0: f64,
    pub initial: InitialProfile,
    pub mode: RunMode,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// `false` drops the reaction term from the activator equation.
    pub reaction: bool,
    /// Monitor every `record_every` steps (the final step is always recorded).
    pub record_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            gamma0: 1.0,
            initial: InitialProfile::Zero,
            mode: RunMode::Global,
            output_dir: PathBuf::from("out"),
            workers: 0,
            reaction: true,
            record_every: 1,
        }
    }
}

/// The configuration file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelParams<f64>,
    pub grid: GridSection,
    #[serde(default)]
    pub stochastic: StochasticSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub monitor: MonitorSection,
    #[serde(default)]
    pub run: RunSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every section and produces the resolved specification.
    pub fn resolve(&self) -> Result<RunSpec> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let params = self.model;
        if let Err(e) = params.validate().into_result() {
            return cfg_err(e.to_string());
        }

        let lengths = self.grid.lengths.to_vec();
        let points = self.grid.points.to_vec();
        let dimension = self.grid.dimension.unwrap_or(points.len());
        let lengths = broadcast(lengths, dimension, "grid.lengths")?;
        let points = broadcast(points, dimension, "grid.points")?;
        let grid = SpatialGrid::new(&lengths, &points).map_err(|e| Error::Config(e.to_string()))?;

        let run = &self.run;
        if !(run.horizon > 0.0) || !run.horizon.is_finite() {
            return cfg_err(format!("run.horizon must be positive, got {}", run.horizon));
        }
        if !(run.gamma0 > 0.0) || !run.gamma0.is_finite() {
            return cfg_err(format!("run.gamma0 must be positive, got {}", run.gamma0));
        }
        if run.record_every == 0 {
            return cfg_err("run.record_every must be at least 1".into());
        }
        let initial = run.initial.build(&grid).map_err(|e| Error::Config(e.to_string()))?;

        let steps = match (self.integrator.dt, self.stochastic.steps) {
            (None, None) => return cfg_err("set integrator.dt or stochastic.steps".into()),
            (Some(dt), steps) => {
                if !(dt > 0.0) || dt > run.horizon {
                    return cfg_err(format!("integrator.dt must lie in (0, horizon], got {dt}"));
                }
                let n = (run.horizon / dt).round() as usize;
                if (n as f64 * dt - run.horizon).abs() > 1e-9 * run.horizon {
                    return cfg_err(format!("horizon {} is not a multiple of dt {dt}", run.horizon));
                }
                if let Some(s) = steps {
                    if s != n {
                        return cfg_err(format!(
                            "stochastic.steps = {s} disagrees with horizon/dt = {n}"
                        ));
                    }
                }
                n
            }
            (None, Some(s)) => s,
        };
        if steps == 0 {
            return cfg_err("at least one time step is required".into());
        }
        let dt = run.horizon / steps as f64;

        let integ = &self.integrator;
        match integ.scheme {
            Scheme::Transform if !params.is_normalized() => {
                return cfg_err(format!(
                    "the transform scheme requires tau = eta = 1 (got tau = {}, eta = {})",
                    params.tau, params.eta
                ))
            }
            Scheme::Ode if params.eta != 0.0 => {
                return cfg_err(format!("the ode scheme requires eta = 0, got {}", params.eta))
            }
            _ => {}
        }
        if !(integ.semigroup_tol > 0.0) {
            return cfg_err("integrator.semigroup_tol must be positive".into());
        }

        let st = &self.stochastic;
        if st.paths == 0 {
            return cfg_err("stochastic.paths must be at least 1".into());
        }
        if !(st.barrier_k > 0.0) {
            return cfg_err(format!("stochastic.barrier_K must be positive, got {}", st.barrier_k));
        }

        let mut monitor = EstimateConfig::derive(&params, grid.dimension());
        monitor.alpha = self.monitor.alpha;
        monitor.beta = self.monitor.beta;
        monitor.ell = self.monitor.ell;
        monitor.blow_up_threshold = self.monitor.blow_up_threshold;
        monitor.validate().map_err(|e| Error::Config(e.to_string()))?;

        let pc = &self.picard;
        if !(pc.tol > 0.0) || pc.max_iterations == 0 || pc.history_nodes == 0 || !(pc.safety_factor > 1.0) {
            return cfg_err(
                "picard needs tol > 0, max_iterations >= 1, history_nodes >= 1, safety_factor > 1".into(),
            );
        }

        Ok(RunSpec {
            params,
            grid,
            initial,
            gamma0: run.gamma0,
            horizon: run.horizon,
            dt,
            steps,
            scheme: integ.scheme,
            splitting: integ.splitting,
            max_halvings: integ.max_halvings,
            semigroup_tol: integ.semigroup_tol,
            n_paths: st.paths,
            master_seed: st.master_seed,
            barrier: st.barrier_k,
            mode: run.mode,
            reaction: run.reaction,
            record_every: run.record_every,
            monitor,
            picard: PicardOptions {
                tol: pc.tol,
                max_iterations: pc.max_iterations,
                history_nodes: pc.history_nodes,
            },
            picard_safety_factor: pc.safety_factor,
            output_dir: run.output_dir.clone(),
            workers: run.workers,
        })
    }
}

fn broadcast<T: Clone>(v: Vec<T>, dimension: usize, key: &str) -> Result<Vec<T>> {
    match (v.len(), dimension) {
        (_, d) if !(1..=2).contains(&d) => Err(Error::Config(format!("grid.dimension must be 1 or 2, got {d}"))),
        (1, d) => Ok(vec![v[0].clone(); d]),
        (n, d) if n == d => Ok(v),
        (n, d) => Err(Error::Config(format!("{key} has {n} entries for dimension {d}"))),
    }
}

/// Fully resolved, validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub params: ModelParams<f64>,
    pub grid: SpatialGrid<f64>,
    pub initial: ActivatorField<f64>,
    pub gamma0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub splitting: Splitting,
    pub max_halvings: u32,
    pub semigroup_tol: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Barrier `K`; `f64::INFINITY` means no barrier.
    pub barrier: f64,
    pub mode: RunMode,
    pub reaction: bool,
    pub record_every: usize,
    pub monitor: EstimateConfig<f64>,
    pub picard: PicardOptions<f64>,
    pub picard_safety_factor: f64,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl RunSpec {
    /// A spec with library defaults for everything not passed in.
    pub fn new(
        params: ModelParams<f64>,
        grid: SpatialGrid<f64>,
        initial: ActivatorField<f64>,
        gamma0: f64,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if initial.len() != grid.len() {
            return Err(Error::FieldSize {
                expected: grid.len(),
                got: initial.len(),
            });
        }
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("need horizon > 0 and steps >= 1".into()));
        }
        if !(gamma0 > 0.0) {
            return Err(Error::NonPositiveGamma(gamma0));
        }
        let monitor = EstimateConfig::derive(&params, grid.dimension());
        let scheme = if params.is_normalized() {
            Scheme::Transform
        } else if params.eta == 0.0 {
            Scheme::Ode
        } else {
            Scheme::Em
        };
        Ok(Self {
            params,
            grid,
            initial,
            gamma0,
            horizon,
            dt: horizon / steps as f64,
            steps,
            scheme,
            splitting: Splitting::Lie,
            max_halvings: DEFAULT_MAX_HALVINGS,
            semigroup_tol: DEFAULT_SEMIGROUP_TOL,
            n_paths: 1,
            master_seed: 0,
            barrier: f64::INFINITY,
            mode: RunMode::Global,
            reaction: true,
            record_every: 1,
            monitor,
            picard: PicardOptions::default(),
            picard_safety_factor: DEFAULT_SAFETY_FACTOR,
            output_dir: PathBuf::from("out"),
            workers: 0,
        })
    }

    /// Whether the exponents satisfy the global-existence regime.
    pub fn global_regime(&self) -> bool {
        self.params.check_global_regime(self.grid.dimension()).holds
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |i| i as f64 * self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
p = 2.0
q = 3.0
r = 6.0
s = 1.0
epsilon = 0.1
tau = 1.0
a = 0.5
b = 1.0
eta = 1.0

[grid]
length = 1.0
points = 64

[stochastic]
master_seed = 42
paths = 10
barrier_K = 3.0

[integrator]
scheme = "transform"
dt = 0.01

[run]
horizon = 1.0
initial = { kind = "cosine", sup = 2.0 }
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = Config::from_toml(BASE).unwrap();
        let spec = cfg.resolve().unwrap();
        assert_eq!(spec.steps, 100);
        assert_eq!(spec.grid.len(), 64);
        assert_eq!(spec.n_paths, 10);
        assert_eq!(spec.barrier, 3.0);
        assert!((spec.initial.sup_norm() - 2.0).abs() < 1e-12);
        assert!((spec.monitor.delta - 16.0).abs() < 1e-12);
        assert!(spec.global_regime());
        let again = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn defaults_and_infinite_barrier() {
        let text = BASE.replace("barrier_K = 3.0", "");
        let spec = Config::from_toml(&text).unwrap().resolve().unwrap();
        assert!(spec.barrier.is_infinite());
        let text = BASE.replace("barrier_K = 3.0", "barrier_K = inf");
        assert!(Config::from_toml(&text).unwrap().resolve().unwrap().barrier.is_infinite());
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad = [
            BASE.replace("p = 2.0", "p = 0.5"),
            BASE.replace("dt = 0.01", "dt = 0.03"),
            BASE.replace("eta = 1.0", "eta = 0.5"),
            BASE.replace("points = 64", "points = 2"),
            BASE.replace("paths = 10", "paths = 0"),
            BASE.replace("[run]", "[run]\nbogus = 1"),
            BASE.replace("scheme = \"transform\"", "scheme = \"rk45\""),
        ];
        for text in bad {
            let r = Config::from_toml(&text).and_then(|c| c.resolve());
            assert!(matches!(r, Err(Error::Config(_))), "{text}");
        }
        let steps = BASE.replace("barrier_K = 3.0", "steps = 50");
        assert!(Config::from_toml(&steps).unwrap().resolve().is_err());
    }

    #[test]
    fn two_dimensional_grid() {
        let text = BASE.replace("length = 1.0\npoints = 64", "dimension = 2\nlengths = [1.0, 2.0]\npoints = [9, 17]");
        let spec = Config::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(spec.grid.dimension(), 2);
        assert_eq!(spec.grid.len(), 9 * 17);
    }
}
