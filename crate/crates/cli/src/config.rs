//! Run configuration: command-line flags layered over an optional TOML file.
//!
//! The file uses the flag names as flat keys (`q = "2/5"`, `mu-schedule =
//! [0.5, 0.3]`, `n-vec = [3, 2, 1]`). Flags win over file values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use qmunu::chains::ParamSchedule;
use qmunu::{parse_rational, ExactParams, ExactSchedule, ModelParams, Rational, Scalar};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// A number kept as written, so `0.1` stays exactly `1/10` in rational mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Num(pub String);

impl FromStr for Num {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rational(s).map_err(|e| e.to_string())?;
        Ok(Num(s.trim().to_string()))
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(v) => v.to_string(),
            Raw::Float(v) => v.to_string(),
            Raw::Text(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl Num {
    pub fn rational(&self) -> Rational {
        parse_rational(&self.0).expect("validated on construction")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    Boson,
    Tasep,
    Ring,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Mb,
    Cauchy,
}

/// Every option a subcommand can read. All are optional here; each
/// subcommand checks for the ones it needs.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct Options {
    /// TOML file with default values for any of these options.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// q in (0, 1); decimals and fractions such as 2/5 are read exactly.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Num>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Num>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<Num>,
    /// Site weights a_1,a_2,... (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Num>>,
    /// Time weights mu_1,mu_2,... replacing mu at each step.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_schedule: Option<Vec<Num>>,

    /// Particle index or number of sites, depending on the subcommand.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Number of particles (largest moment order).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Time horizon.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    /// Moment index n_1 >= n_2 >= ... (comma separated).
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_vec: Option<Vec<i64>>,
    /// `q-moment:n1,n2,...`, `n1,n2,...` or `position`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<Process>,
    /// Fredholm kernel.
    #[arg(long = "type", global = true)]
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_re: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_im: Option<f64>,
    /// Largest value of the inverted distribution's support.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_cap: Option<usize>,
    /// Contour radii around 1, outermost first (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_m: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_y: Option<usize>,
    /// Position window of the intertwining grid.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<i64>,
    /// Ring size.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    /// Product-measure parameter rho of the ring's initial marginals.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    /// Pass/fail tolerance; each subcommand has its own default.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// SVG plot file.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        Options { config: $top.config.or($base.config), $($field: $top.$field.or($base.$field)),* }
    };
}

impl Options {
    /// `top` wins wherever it is set.
    fn overlay(base: Options, top: Options) -> Options {
        overlay!(base, top; q, mu, nu, a, mu_schedule, n, k, t, n_vec, observable, process, kernel,
            zeta_re, zeta_im, support_cap, radii, max_m, max_y, window, sites, density, seed,
            replicas, tol, format, out, plot, threads)
    }

    /// Reads `--config` if given and layers the flags over it.
    pub fn resolve(flags: Options) -> Result<Options, CliError> {
        match &flags.config {
            Some(path) => Ok(Self::overlay(load_file(path)?, flags)),
            None => Ok(flags),
        }
    }

    pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::usage(flag, "missing required option"))
    }

    pub fn exact_params(&self) -> Result<ExactParams, CliError> {
        let q = Self::require(&self.q, "q")?.rational();
        let mu = Self::require(&self.mu, "mu")?.rational();
        let nu = Self::require(&self.nu, "nu")?.rational();
        ModelParams::new(q, mu, nu).map_err(|e| CliError::usage("q/mu/nu", e.to_string()))
    }

    pub fn float_params(&self) -> Result<ModelParams<f64>, CliError> {
        Ok(self.exact_params()?.to_float())
    }

    pub fn exact_schedule(&self) -> Result<ExactSchedule, CliError> {
        let list = |v: &Option<Vec<Num>>| v.iter().flatten().map(Num::rational).collect::<Vec<_>>();
        ParamSchedule::new(self.exact_params()?, list(&self.a), list(&self.mu_schedule))
            .map_err(|e| CliError::usage("a", e.to_string()))
    }

    /// `mu_1, mu_2, ...` for the contour and Fredholm code, which do not take site weights.
    pub fn float_mu_schedule(&self) -> Result<Option<Vec<f64>>, CliError> {
        if self.a.iter().flatten().any(|a| a.rational() != Rational::from_integer(1.into())) {
            return Err(CliError::usage("a", "site weights are not supported by this subcommand"));
        }
        Ok(self
            .mu_schedule
            .as_ref()
            .map(|v| v.iter().map(|m| m.rational().to_f64_lossy()).collect()))
    }
}

fn load_file(path: &Path) -> Result<Options, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage("config", format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage("config", format!("{}: {}", path.display(), e.message())))
}

/// The serialized form of a run. Output location, plot path and thread
/// count do not change results and are left out.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub options: Options,
}

impl RunConfig {
    pub fn new(command: String, opts: &Options) -> Self {
        let mut options = opts.clone();
        options.config = None;
        options.out = None;
        options.plot = None;
        options.threads = None;
        Self { command, options }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
