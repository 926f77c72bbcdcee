//! JSON run configuration: experiment tags, per-experiment defaults, and
//! validation. Unknown keys are rejected everywhere; every field left to its
//! default is logged so a run's manifest shows exactly what it executed.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::nash_moser::IterationConfig;
use crate::shear::{ShearFamily, ShearInitSpec};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Shear,
    Mollify,
    LinearizedMms,
    NashMoser,
    Stability,
    DirichletLimit,
    NormsAudit,
}

pub const EXPERIMENTS: [Experiment; 7] = [
    Experiment::Shear,
    Experiment::Mollify,
    Experiment::LinearizedMms,
    Experiment::NashMoser,
    Experiment::Stability,
    Experiment::DirichletLimit,
    Experiment::NormsAudit,
];

impl Experiment {
    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::Shear => "shear",
            Experiment::Mollify => "mollify",
            Experiment::LinearizedMms => "linearized-mms",
            Experiment::NashMoser => "nash-moser",
            Experiment::Stability => "stability",
            Experiment::DirichletLimit => "dirichlet-limit",
            Experiment::NormsAudit => "norms-audit",
        }
    }

    /// Whether the experiment runs the smoothed Newton iteration (and hence
    /// needs the schedule to be resolvable on the configured grid).
    fn iterates(&self) -> bool {
        matches!(
            self,
            Experiment::NashMoser | Experiment::Stability | Experiment::DirichletLimit
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EXPERIMENTS
            .iter()
            .copied()
            .find(|e| e.tag() == s)
            .ok_or_else(|| {
                let tags: Vec<&str> = EXPERIMENTS.iter().map(|e| e.tag()).collect();
                Error::config(format!(
                    "unknown experiment '{s}'; valid tags: {}",
                    tags.join(", ")
                ))
            })
    }
}

/// Norm-catalog knobs (norms-audit experiment and diagnostics).
#[derive(Debug, Clone, serde::Serialize)]
pub struct NormsKnobs {
    pub k_max: usize,
    pub ell: f64,
    pub lam: f64,
    pub k1: usize,
    pub k2: usize,
}

/// Smoothing-study knobs: operator strengths and the seeded family size.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SmoothingKnobs {
    pub thetas: Vec<f64>,
    pub family_size: usize,
    pub noise_amp: f64,
}

/// Two-data-set comparison knobs: gap amplitude and x phase of the gap shape.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityKnobs {
    pub gap: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DirichletKnobs {
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MmsKnobs {
    pub space_levels: usize,
    pub time_levels: usize,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub grid: GridSpec,
    pub shear: ShearInitSpec,
    /// envelope width of the canonical perturbation data
    pub sigma: f64,
    /// shear march nodes discarded before the iteration window starts
    pub warm_nodes: usize,
    pub iteration: IterationConfig,
    pub norms: NormsKnobs,
    pub smoothing: SmoothingKnobs,
    pub stability: StabilityKnobs,
    pub dirichlet: DirichletKnobs,
    pub mms: MmsKnobs,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub defaults_applied: Vec<String>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    n_t: Option<usize>,
    n_x: Option<usize>,
    n_y: Option<usize>,
    t_max: Option<f64>,
    x_len: Option<f64>,
    y_max: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawShear {
    family: Option<String>,
    sigma: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawIteration {
    theta0: Option<f64>,
    k_tilde: Option<f64>,
    k0: Option<usize>,
    epsilon: Option<f64>,
    delta_floor: Option<f64>,
    max_iters: Option<usize>,
    residual_tol: Option<f64>,
    norm_k: Option<usize>,
    ell: Option<f64>,
    boundary_theta: Option<f64>,
    max_backoffs: Option<usize>,
    warm_nodes: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNorms {
    k_max: Option<usize>,
    ell: Option<f64>,
    lam: Option<f64>,
    k1: Option<usize>,
    k2: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSmoothing {
    thetas: Option<Vec<f64>>,
    family_size: Option<usize>,
    noise_amp: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawStability {
    gap: Option<f64>,
    phase: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDirichlet {
    betas: Option<Vec<f64>>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMms {
    space_levels: Option<usize>,
    time_levels: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    experiment: Option<String>,
    grid: RawGrid,
    shear: RawShear,
    iteration: RawIteration,
    norms: RawNorms,
    smoothing: RawSmoothing,
    stability: RawStability,
    dirichlet: RawDirichlet,
    mms: RawMms,
    output_dir: Option<String>,
    seed: Option<u64>,
}

/// Grid an experiment uses when the config leaves it unspecified. The
/// iterating experiments need a lattice the whole theta schedule resolves;
/// the smoothing study needs uniform steps of 1/32 so theta = 16 keeps at
/// least two kernel cells per axis.
fn default_grid(exp: Experiment) -> (usize, usize, usize, f64, f64, f64) {
    match exp {
        Experiment::Shear => (64, 8, 400, 0.5, 1.0, 16.0),
        Experiment::NormsAudit => (17, 16, 161, 0.25, 2.0, 8.0),
        Experiment::Mollify => (33, 64, 129, 0.5, 2.0, 4.0),
        Experiment::LinearizedMms => (13, 12, 80, 0.3, 1.0, 8.0),
        Experiment::NashMoser => (28, 24, 400, 0.5, 1.0, 16.0),
        Experiment::Stability | Experiment::DirichletLimit => (20, 24, 200, 0.35, 1.0, 8.0),
    }
}

macro_rules! take {
    ($log:ident, $raw:expr, $default:expr, $name:expr) => {
        match $raw {
            Some(v) => v,
            None => {
                let d = $default;
                $log.push(format!(concat!($name, " = {:?}"), d));
                d
            }
        }
    };
}

fn resolve(raw: RawConfig, experiment: Experiment) -> Result<RunConfig> {
    if let Some(tag) = &raw.experiment {
        let named: Experiment = tag.parse()?;
        if named != experiment {
            return Err(Error::config(format!(
                "config file names experiment '{named}' but '{experiment}' was requested"
            )));
        }
    }
    let mut log = Vec::new();

    let (dn_t, dn_x, dn_y, dt_max, dx_len, dy_max) = default_grid(experiment);
    let n_t = take!(log, raw.grid.n_t, dn_t, "grid.n_t");
    let n_x = take!(log, raw.grid.n_x, dn_x, "grid.n_x");
    let n_y = take!(log, raw.grid.n_y, dn_y, "grid.n_y");
    let t_max = take!(log, raw.grid.t_max, dt_max, "grid.t_max");
    let x_len = take!(log, raw.grid.x_len, dx_len, "grid.x_len");
    let y_max = take!(log, raw.grid.y_max, dy_max, "grid.y_max");
    let grid = GridSpec::new(n_t, n_x, n_y, t_max, x_len, y_max)?;

    let beta = take!(log, raw.shear.beta, 1.0, "shear.beta");
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::config(format!("shear.beta = {beta} must be positive")));
    }
    let family_name = take!(log, raw.shear.family, "gaussian".to_string(), "shear.family");
    let sigma = take!(log, raw.shear.sigma, 1.0, "shear.sigma");
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::config(format!("shear.sigma = {sigma} must be positive")));
    }
    let family = match family_name.as_str() {
        "gaussian" => ShearFamily::GaussianDeficit { sigma },
        "exponential" => ShearFamily::ExponentialDeficit,
        other => {
            return Err(Error::config(format!(
                "shear.family '{other}' is not available from config; use 'gaussian' or 'exponential'"
            )))
        }
    };
    let shear = ShearInitSpec { family, beta };

    let canon = IterationConfig::canonical();
    let iteration = IterationConfig {
        theta0: take!(log, raw.iteration.theta0, canon.theta0, "iteration.theta0"),
        k_tilde: take!(log, raw.iteration.k_tilde, canon.k_tilde, "iteration.k_tilde"),
        k0: take!(log, raw.iteration.k0, canon.k0, "iteration.k0"),
        epsilon: take!(log, raw.iteration.epsilon, canon.epsilon, "iteration.epsilon"),
        delta_floor: take!(
            log,
            raw.iteration.delta_floor,
            canon.delta_floor,
            "iteration.delta_floor"
        ),
        max_iters: take!(log, raw.iteration.max_iters, canon.max_iters, "iteration.max_iters"),
        residual_tol: take!(
            log,
            raw.iteration.residual_tol,
            canon.residual_tol,
            "iteration.residual_tol"
        ),
        norm_k: take!(log, raw.iteration.norm_k, canon.norm_k, "iteration.norm_k"),
        ell: take!(log, raw.iteration.ell, canon.ell, "iteration.ell"),
        boundary_theta: take!(
            log,
            raw.iteration.boundary_theta,
            canon.boundary_theta,
            "iteration.boundary_theta"
        ),
        max_backoffs: take!(
            log,
            raw.iteration.max_backoffs,
            canon.max_backoffs,
            "iteration.max_backoffs"
        ),
    };
    let warm_nodes = take!(log, raw.iteration.warm_nodes, 6usize, "iteration.warm_nodes");

    // band checks always apply; grid-coupled schedule checks only when the
    // experiment actually iterates
    if experiment.iterates() {
        iteration.validate(&grid)?;
    } else {
        iteration.validate_bands()?;
        crate::nash_moser::taylor_resolution_check(&grid, iteration.k0)?;
    }

    let norms = NormsKnobs {
        k_max: take!(log, raw.norms.k_max, 2usize, "norms.k_max"),
        ell: take!(log, raw.norms.ell, 1.0, "norms.ell"),
        lam: take!(log, raw.norms.lam, 0.5, "norms.lam"),
        k1: take!(log, raw.norms.k1, 1usize, "norms.k1"),
        k2: take!(log, raw.norms.k2, 1usize, "norms.k2"),
    };
    if !(norms.ell > 0.5) {
        return Err(Error::config("norms.ell must exceed 1/2"));
    }
    if norms.k_max > 3 {
        return Err(Error::config("norms.k_max above 3 is not tracked"));
    }

    let smoothing = SmoothingKnobs {
        thetas: take!(
            log,
            raw.smoothing.thetas,
            vec![4.0, 6.0, 8.0, 12.0, 16.0],
            "smoothing.thetas"
        ),
        family_size: take!(log, raw.smoothing.family_size, 6usize, "smoothing.family_size"),
        noise_amp: take!(log, raw.smoothing.noise_amp, 1.0, "smoothing.noise_amp"),
    };
    if smoothing.thetas.len() < 3 {
        return Err(Error::config("smoothing.thetas needs at least 3 strengths"));
    }
    if smoothing.thetas.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::config("smoothing.thetas must all be positive"));
    }
    if smoothing.family_size == 0 {
        return Err(Error::config("smoothing.family_size must be positive"));
    }

    let stability = StabilityKnobs {
        gap: take!(log, raw.stability.gap, 0.3, "stability.gap"),
        phase: take!(log, raw.stability.phase, 1.0, "stability.phase"),
    };
    if !(stability.gap > 0.0) {
        return Err(Error::config("stability.gap must be positive"));
    }

    let dirichlet = DirichletKnobs {
        betas: take!(
            log,
            raw.dirichlet.betas,
            vec![10.0, 100.0, 1000.0, 10000.0],
            "dirichlet.betas"
        ),
    };
    if dirichlet.betas.len() < 2 || dirichlet.betas.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::config(
            "dirichlet.betas needs at least 2 positive values",
        ));
    }

    let mms = MmsKnobs {
        space_levels: take!(log, raw.mms.space_levels, 3usize, "mms.space_levels"),
        time_levels: take!(log, raw.mms.time_levels, 3usize, "mms.time_levels"),
    };
    if mms.space_levels < 2 || mms.time_levels < 2 {
        return Err(Error::config("mms levels must be at least 2"));
    }

    let output_dir = PathBuf::from(take!(log, raw.output_dir, "out".to_string(), "output_dir"));
    let seed = take!(log, raw.seed, 0u64, "seed");

    Ok(RunConfig {
        experiment,
        grid,
        shear,
        sigma,
        warm_nodes,
        iteration,
        norms,
        smoothing,
        stability,
        dirichlet,
        mms,
        output_dir,
        seed,
        defaults_applied: log,
    })
}

/// Parses and validates a config document for the given experiment.
pub fn parse_config_str(text: &str, experiment: Experiment) -> Result<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("config parse: {e}")))?;
    resolve(raw, experiment)
}

/// Reads, parses, and validates a JSON config file. Defaults are filled per
/// experiment and recorded in `defaults_applied`.
pub fn load_config(path: &Path, experiment: Experiment) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config_str(&text, experiment)
}
