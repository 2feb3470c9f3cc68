//! Experiment configuration: TOML file with sections, overridden by flags.
//!
//! ```toml
//! [experiment]
//! method = "skcca"
//! l = 1            # or "all"
//! seed = 0
//! out = "results"
//!
//! [data]
//! source = "nonlinear"   # or "topics", "files"
//! n = 500
//! noise = 0.3
//!
//! [kernel]
//! x = "gaussian"
//! y = "gaussian"
//! sigma = "max"
//!
//! [regularization]
//! gamma_x = 0.1
//! gamma_y = 0.1
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use sparse_cca::kernels::{KernelSpec, SigmaMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cca,
    Scca,
    Kcca,
    Rkcca,
    Skcca,
}

impl Method {
    pub fn is_kernel(self) -> bool {
        matches!(self, Method::Kcca | Method::Rkcca | Method::Skcca)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Cca => "cca",
            Method::Scca => "scca",
            Method::Kcca => "kcca",
            Method::Rkcca => "rkcca",
            Method::Skcca => "skcca",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of directions, or every direction with a nonzero correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LSetting {
    Count(usize),
    All,
}

impl FromStr for LSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(LSetting::All);
        }
        s.parse()
            .map(LSetting::Count)
            .map_err(|_| format!("l must be a count or \"all\", got {s:?}"))
    }
}

impl fmt::Display for LSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LSetting::Count(l) => write!(f, "{l}"),
            LSetting::All => f.write_str("all"),
        }
    }
}

/// Kernel requested for one view; a Gaussian width may be left to the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Linear,
    Polynomial { gamma1: f64, gamma2: f64, degree: f64 },
    Gaussian(Option<f64>),
    Precomputed,
}

impl FromStr for KernelChoice {
    type Err = String;

    /// `linear`, `gaussian`, `gaussian:SIGMA`, `poly:G1:G2:DEGREE`, `precomputed`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("bad kernel parameter {t:?} in {s:?}"));
        match parts.as_slice() {
            ["linear"] => Ok(KernelChoice::Linear),
            ["gaussian"] => Ok(KernelChoice::Gaussian(None)),
            ["gaussian", sigma] => Ok(KernelChoice::Gaussian(Some(num(sigma)?))),
            ["poly", g1, g2, d] => Ok(KernelChoice::Polynomial {
                gamma1: num(g1)?,
                gamma2: num(g2)?,
                degree: num(d)?,
            }),
            ["precomputed"] => Ok(KernelChoice::Precomputed),
            _ => Err(format!(
                "unknown kernel {s:?} (linear, gaussian[:sigma], poly:g1:g2:degree, precomputed)"
            )),
        }
    }
}

/// Render a resolved kernel in the same syntax [`KernelChoice`] parses.
pub fn kernel_label(spec: &KernelSpec) -> String {
    match spec {
        KernelSpec::Linear => "linear".into(),
        KernelSpec::Polynomial { gamma1, gamma2, degree } => format!("poly:{gamma1:e}:{gamma2:e}:{degree:e}"),
        KernelSpec::Gaussian { sigma } => format!("gaussian:{}", crate::io::format_value(*sigma)),
        KernelSpec::Precomputed => "precomputed".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSetting {
    Mode(SigmaMode),
    Value(f64),
}

impl FromStr for SigmaSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(SigmaSetting::Mode(SigmaMode::MaxDistance)),
            "min" => Ok(SigmaSetting::Mode(SigmaMode::MinDistance)),
            _ => s
                .parse()
                .map(SigmaSetting::Value)
                .map_err(|_| format!("sigma must be max, min or a number, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Files,
    Nonlinear,
    Topics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Dense,
    Triplets,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Files {
        x: PathBuf,
        /// Absent in classification mode, where labels form the second view.
        y: Option<PathBuf>,
        x_test: Option<PathBuf>,
        y_test: Option<PathBuf>,
        labels: Option<PathBuf>,
        labels_test: Option<PathBuf>,
        format: FileFormat,
        header: bool,
    },
    Nonlinear {
        n: usize,
        n_test: usize,
        noise: f64,
    },
    Topics {
        n: usize,
        n_test: usize,
        d1: usize,
        d2: usize,
        topics: usize,
        noise: f64,
    },
}

/// Regularization parameters, one source per method.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    None,
    /// SCCA penalties, shared by both views; one value or one per direction.
    Lambda(Vec<f64>),
    /// SKCCA multipliers.
    Gamma(f64, f64),
    /// RKCCA regularizer, or a raw per-column SKCCA penalty.
    Rho(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSettings {
    pub grid: Vec<f64>,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub data: DataSource,
    pub kernel_x: KernelChoice,
    pub kernel_y: KernelChoice,
    pub sigma: SigmaSetting,
    pub l: LSetting,
    pub regularizer: Regularizer,
    pub cv: Option<CvSettings>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    kernel: KernelSection,
    #[serde(default)]
    regularization: RegularizationSection,
    #[serde(default)]
    cv: CvSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    method: Option<Method>,
    l: Option<toml::Value>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    source: Option<SourceKind>,
    x: Option<PathBuf>,
    y: Option<PathBuf>,
    x_test: Option<PathBuf>,
    y_test: Option<PathBuf>,
    labels: Option<PathBuf>,
    labels_test: Option<PathBuf>,
    format: Option<FileFormat>,
    header: Option<bool>,
    n: Option<usize>,
    n_test: Option<usize>,
    noise: Option<f64>,
    d1: Option<usize>,
    d2: Option<usize>,
    topics: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSection {
    x: Option<String>,
    y: Option<String>,
    sigma: Option<toml::Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegularizationSection {
    lambda: Option<Vec<f64>>,
    gamma_x: Option<f64>,
    gamma_y: Option<f64>,
    rho: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CvSection {
    grid: Option<Vec<f64>>,
    folds: Option<usize>,
}

/// Values given on the command line; each takes precedence over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Synthetic generator instead of data files.
    #[arg(long, value_enum)]
    pub source: Option<SourceKind>,
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub x_test: Option<PathBuf>,
    #[arg(long)]
    pub y_test: Option<PathBuf>,
    /// Class labels for the training samples; replaces the y view.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub labels_test: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
    /// Data files start with a header line.
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    /// linear, gaussian[:sigma], poly:g1:g2:degree or precomputed.
    #[arg(long)]
    pub kernel_x: Option<String>,
    #[arg(long)]
    pub kernel_y: Option<String>,
    /// Gaussian width: max, min (pairwise distance) or a number.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Number of directions or "all".
    #[arg(long)]
    pub l: Option<String>,
    /// SCCA penalty; comma-separated for one value per direction.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long)]
    pub gamma_x: Option<f64>,
    #[arg(long)]
    pub gamma_y: Option<f64>,
    /// RKCCA regularizer, or a raw SKCCA penalty.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Cross-validation grid, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn value_to_string(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ExperimentConfig {
    /// Merge command-line values, the optional config file, and defaults.
    pub fn resolve(cli: &Overrides) -> CliResult<Self> {
        let file = match &cli.config {
            Some(path) => Self::read_file(path)?,
            None => FileConfig::default(),
        };
        Self::merge(cli, file)
    }

    pub fn from_toml_str(text: &str, cli: &Overrides) -> CliResult<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Self::merge(cli, file)
    }

    fn read_file(path: &Path) -> CliResult<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    fn merge(cli: &Overrides, file: FileConfig) -> CliResult<Self> {
        let method = cli
            .method
            .or(file.experiment.method)
            .ok_or_else(|| config_err("no method given"))?;
        let l = match (&cli.l, &file.experiment.l) {
            (Some(s), _) => s.parse(),
            (None, Some(v)) => value_to_string(v).parse(),
            (None, None) => Ok(LSetting::Count(1)),
        }
        .map_err(config_err)?;
        let seed = cli.seed.or(file.experiment.seed).unwrap_or(0);
        let out = cli.out.clone().or(file.experiment.out);

        let d = file.data;
        let source = cli.source.or(d.source).unwrap_or(SourceKind::Files);
        let n = cli.n.or(d.n);
        let n_test = cli.n_test.or(d.n_test).unwrap_or(0);
        let noise = cli.noise.or(d.noise);
        let data = match source {
            SourceKind::Files => {
                let x = cli.x.clone().or(d.x).ok_or_else(|| config_err("no x data file given"))?;
                let y = cli.y.clone().or(d.y);
                let labels = cli.labels.clone().or(d.labels);
                match (&y, &labels) {
                    (None, None) => return Err(config_err("give either a y data file or labels")),
                    (Some(_), Some(_)) => return Err(config_err("y data and labels are mutually exclusive")),
                    _ => {}
                }
                DataSource::Files {
                    x,
                    y,
                    x_test: cli.x_test.clone().or(d.x_test),
                    y_test: cli.y_test.clone().or(d.y_test),
                    labels,
                    labels_test: cli.labels_test.clone().or(d.labels_test),
                    format: cli.format.or(d.format).unwrap_or(FileFormat::Dense),
                    header: cli.header || d.header.unwrap_or(false),
                }
            }
            SourceKind::Nonlinear => DataSource::Nonlinear {
                n: n.unwrap_or(500),
                n_test,
                noise: noise.unwrap_or(0.3),
            },
            SourceKind::Topics => DataSource::Topics {
                n: n.unwrap_or(200),
                n_test,
                d1: cli.d1.or(d.d1).unwrap_or(300),
                d2: cli.d2.or(d.d2).unwrap_or(250),
                topics: cli.topics.or(d.topics).unwrap_or(10),
                noise: noise.unwrap_or(0.3),
            },
        };

        let k = file.kernel;
        let kernel = |cli_v: &Option<String>, file_v: Option<String>| -> CliResult<KernelChoice> {
            cli_v
                .clone()
                .or(file_v)
                .map(|s| s.parse().map_err(config_err))
                .transpose()
                .map(|k| k.unwrap_or(KernelChoice::Linear))
        };
        let kernel_x = kernel(&cli.kernel_x, k.x)?;
        let kernel_y = kernel(&cli.kernel_y, k.y)?;
        let sigma = match (&cli.sigma, &k.sigma) {
            (Some(s), _) => s.parse().map_err(config_err)?,
            (None, Some(v)) => value_to_string(v).parse().map_err(config_err)?,
            (None, None) => SigmaSetting::Mode(SigmaMode::MaxDistance),
        };
        if !method.is_kernel()
            && (cli.kernel_x.is_some() || cli.kernel_y.is_some() || kernel_x != KernelChoice::Linear || kernel_y != KernelChoice::Linear)
        {
            return Err(config_err(format!("method {method} does not use kernels")));
        }

        let r = file.regularization;
        let lambda = cli.lambda.clone().or(r.lambda);
        let gamma_x = cli.gamma_x.or(r.gamma_x);
        let gamma_y = cli.gamma_y.or(r.gamma_y);
        let rho = cli.rho.or(r.rho);
        let grid = cli.grid.clone().or(file.cv.grid);
        let folds = cli.folds.or(file.cv.folds).unwrap_or(5);
        let cv = grid.map(|grid| CvSettings { grid, folds });

        let given: Vec<&str> = [
            ("lambda", lambda.is_some()),
            ("gamma", gamma_x.is_some() || gamma_y.is_some()),
            ("rho", rho.is_some()),
            ("cv grid", cv.is_some()),
        ]
        .iter()
        .filter(|(_, set)| *set)
        .map(|(name, _)| *name)
        .collect();
        if given.len() > 1 {
            return Err(config_err(format!(
                "exactly one regularizer source is allowed, got {}",
                given.join(" and ")
            )));
        }
        let bad = |what: &str| config_err(format!("method {method} does not take {what}"));
        let regularizer = match method {
            Method::Cca | Method::Kcca => {
                if let Some(what) = given.first() {
                    return Err(bad(what));
                }
                Regularizer::None
            }
            Method::Scca => match (&lambda, given.first()) {
                (Some(l), _) => Regularizer::Lambda(l.clone()),
                (None, Some(&"cv grid")) | (None, None) => Regularizer::Lambda(vec![1e-3]),
                (None, Some(what)) => return Err(bad(what)),
            },
            Method::Rkcca => match (rho, given.first()) {
                (Some(r), _) => Regularizer::Rho(r),
                (None, Some(&"cv grid")) | (None, None) => Regularizer::Rho(1e-2),
                (None, Some(what)) => return Err(bad(what)),
            },
            Method::Skcca => match (rho, given.first()) {
                (Some(r), _) => Regularizer::Rho(r),
                (None, Some(&"lambda")) => return Err(bad("lambda")),
                _ => {
                    let gx = gamma_x.or(gamma_y).unwrap_or(0.1);
                    Regularizer::Gamma(gx, gamma_y.unwrap_or(gx))
                }
            },
        };
        Ok(ExperimentConfig {
            method,
            data,
            kernel_x,
            kernel_y,
            sigma,
            l,
            regularizer,
            cv,
            seed,
            out,
        })
    }
}
