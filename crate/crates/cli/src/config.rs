//! Run configuration: command-line flags layered over an optional key=value
//! file layered over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use openchain::model::check_mapping;
use openchain::{ChainParams, IntegratorConfig, SingleSiteParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Relax,
    Chain,
    Spectra,
    Scaling,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Relax => "relax",
            CommandKind::Chain => "chain",
            CommandKind::Spectra => "spectra",
            CommandKind::Scaling => "scaling",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "openchain", version, about = "Langevin ensembles for the boundary-driven nonlinear oscillator chain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-oscillator relaxation: master equation against the Langevin ensemble.
    Relax(RunArgs),
    /// Time-resolved and stationary actions and current of the chain.
    Chain(RunArgs),
    /// Stationary per-site spectral densities.
    Spectra(RunArgs),
    /// Stationary current against chain length.
    Scaling(RunArgs),
    /// Re-run a command from its manifest.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub values: Overrides,
    /// key=value file; flags take precedence over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "OPENCHAIN_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = "OPENCHAIN_THREADS")]
    pub threads: Option<usize>,
}

/// Optional values from one configuration layer.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Overrides {
    /// Chain length L.
    #[arg(long)]
    pub length: Option<usize>,
    /// Hopping amplitude J.
    #[arg(long)]
    pub hopping: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<f64>,
    /// Nonlinearity; a comma-separated list for chain and spectra.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub g: Option<Vec<f64>>,
    /// Quantum interaction U; g defaults to U * nbar.
    #[arg(long, allow_hyphen_values = true)]
    pub interaction: Option<f64>,
    #[arg(long)]
    pub nbar: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long = "gammaL")]
    pub gamma_l: Option<f64>,
    #[arg(long)]
    pub d1: Option<f64>,
    #[arg(long = "dL")]
    pub d_l: Option<f64>,
    /// Single-oscillator friction (relax, spectra --single-site).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Single-oscillator diffusion (relax, spectra --single-site).
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub transient: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch length for stationary error bars (default: whole window).
    #[arg(long)]
    pub batch_length: Option<f64>,
    /// Chain lengths for scaling, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    /// Spectra of one oscillator instead of the chain.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub single_site: Option<bool>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

impl Overrides {
    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn from_config_text(text: &str) -> Result<Self, CliError> {
        let mut out = Overrides::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let canonical = key.to_ascii_lowercase().replace('_', "-");
            if !seen.insert(canonical.clone()) {
                return Err(CliError::Usage(format!("key `{key}` given twice")));
            }
            match canonical.as_str() {
                "length" => out.length = Some(parse_value(key, value)?),
                "hopping" => out.hopping = Some(parse_value(key, value)?),
                "omega" => out.omega = Some(parse_value(key, value)?),
                "g" => out.g = Some(parse_list(key, value)?),
                "interaction" | "u" => out.interaction = Some(parse_value(key, value)?),
                "nbar" => out.nbar = Some(parse_value(key, value)?),
                "gamma1" => out.gamma1 = Some(parse_value(key, value)?),
                "gammal" => out.gamma_l = Some(parse_value(key, value)?),
                "d1" => out.d1 = Some(parse_value(key, value)?),
                "dl" => out.d_l = Some(parse_value(key, value)?),
                "gamma" => out.gamma = Some(parse_value(key, value)?),
                "d" => out.d = Some(parse_value(key, value)?),
                "dt" => out.dt = Some(parse_value(key, value)?),
                "t-final" => out.t_final = Some(parse_value(key, value)?),
                "transient" => out.transient = Some(parse_value(key, value)?),
                "stride" => out.stride = Some(parse_value(key, value)?),
                "realizations" => out.realizations = Some(parse_value(key, value)?),
                "seed" => out.seed = Some(parse_value(key, value)?),
                "batch-length" => out.batch_length = Some(parse_value(key, value)?),
                "lengths" => out.lengths = Some(parse_list(key, value)?),
                "single-site" => {
                    out.single_site = Some(match value.to_ascii_lowercase().as_str() {
                        "true" | "yes" | "1" => true,
                        "false" | "no" | "0" => false,
                        _ => return Err(CliError::Usage(format!("key `{key}`: expected true or false"))),
                    })
                }
                _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
            }
        }
        Ok(out)
    }

    pub fn from_config_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_config_text(&text)
    }

    /// `self` where set, otherwise `lower`.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            length: self.length.or(lower.length),
            hopping: self.hopping.or(lower.hopping),
            omega: self.omega.or(lower.omega),
            g: self.g.or(lower.g),
            interaction: self.interaction.or(lower.interaction),
            nbar: self.nbar.or(lower.nbar),
            gamma1: self.gamma1.or(lower.gamma1),
            gamma_l: self.gamma_l.or(lower.gamma_l),
            d1: self.d1.or(lower.d1),
            d_l: self.d_l.or(lower.d_l),
            gamma: self.gamma.or(lower.gamma),
            d: self.d.or(lower.d),
            dt: self.dt.or(lower.dt),
            t_final: self.t_final.or(lower.t_final),
            transient: self.transient.or(lower.transient),
            stride: self.stride.or(lower.stride),
            realizations: self.realizations.or(lower.realizations),
            seed: self.seed.or(lower.seed),
            batch_length: self.batch_length.or(lower.batch_length),
            lengths: self.lengths.or(lower.lengths),
            single_site: self.single_site.or(lower.single_site),
        }
    }
}

pub const DEFAULT_SEED: u64 = 1;

/// Fully resolved parameters of one run. Together with the program version
/// this determines every output byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub command: CommandKind,
    pub length: usize,
    pub hopping: f64,
    pub omega: f64,
    pub g: Vec<f64>,
    pub interaction: Option<f64>,
    pub nbar: f64,
    pub gamma1: f64,
    pub gamma_l: f64,
    pub d1: f64,
    pub d_l: f64,
    pub gamma: f64,
    pub d: f64,
    pub dt: f64,
    /// `None` selects the command's default (per length for scaling).
    pub t_final: Option<f64>,
    pub transient: Option<f64>,
    pub stride: usize,
    pub realizations: usize,
    pub seed: u64,
    pub batch_length: Option<f64>,
    pub lengths: Vec<usize>,
    pub single_site: bool,
}

impl Settings {
    /// Applies defaults and checks cross-key invariants.
    pub fn resolve(command: CommandKind, o: &Overrides) -> Result<Self, CliError> {
        let nbar = o.nbar.unwrap_or(10.0);
        let g = match (o.interaction, &o.g) {
            (Some(u), None) => vec![u * nbar],
            (Some(u), Some(list)) => {
                for &g in list {
                    check_mapping(g, u, nbar).map_err(|e| {
                        CliError::Usage(format!("keys g, interaction, nbar are inconsistent: {e}"))
                    })?;
                }
                list.clone()
            }
            (None, Some(list)) => list.clone(),
            (None, None) => match command {
                CommandKind::Chain | CommandKind::Spectra => vec![0.0, 2.0],
                CommandKind::Relax => vec![0.0],
                CommandKind::Scaling => vec![2.0],
            },
        };
        if g.is_empty() {
            return Err(CliError::Usage("key `g`: empty list".into()));
        }
        if matches!(command, CommandKind::Relax | CommandKind::Scaling) && g.len() != 1 {
            return Err(CliError::Usage(format!(
                "key `g`: {} takes a single value, got {}",
                command.name(),
                g.len()
            )));
        }
        let s = Settings {
            command,
            length: o.length.unwrap_or(5),
            hopping: o.hopping.unwrap_or(1.0),
            omega: o.omega.unwrap_or(1.0),
            g,
            interaction: o.interaction,
            nbar,
            gamma1: o.gamma1.unwrap_or(0.5),
            gamma_l: o.gamma_l.unwrap_or(0.5),
            d1: o.d1.unwrap_or(0.5),
            d_l: o.d_l.unwrap_or(0.25),
            gamma: o.gamma.unwrap_or(0.5),
            d: o.d.unwrap_or(0.5),
            dt: o.dt.unwrap_or(IntegratorConfig::DEFAULT_DT),
            t_final: o.t_final,
            transient: o.transient,
            stride: o.stride.unwrap_or(IntegratorConfig::DEFAULT_STRIDE),
            realizations: o.realizations.unwrap_or(openchain::ensemble::DEFAULT_REALIZATIONS),
            seed: o.seed.unwrap_or(DEFAULT_SEED),
            batch_length: o.batch_length,
            lengths: o.lengths.clone().unwrap_or_else(|| vec![10, 20, 40]),
            single_site: o.single_site.unwrap_or(false),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.realizations < 2 {
            return usage(format!("key `realizations`: need at least 2, got {}", self.realizations));
        }
        if self.stride == 0 {
            return usage("key `stride`: must be at least 1".into());
        }
        for (key, v) in [("dt", Some(self.dt)), ("t-final", self.t_final), ("batch-length", self.batch_length)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return usage(format!("key `{key}`: must be positive, got {v}"));
                }
            }
        }
        if let Some(t) = self.transient {
            if !(t >= 0.0 && t.is_finite()) {
                return usage(format!("key `transient`: must be >= 0, got {t}"));
            }
        }
        for (key, v) in [("gamma", self.gamma), ("d", self.d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return usage(format!("key `{key}`: must be finite and >= 0, got {v}"));
            }
        }
        match self.command {
            CommandKind::Chain => {
                self.chain(self.length, self.g[0])?;
            }
            CommandKind::Spectra if !self.single_site => {
                self.chain(self.length, self.g[0])?;
            }
            CommandKind::Scaling => {
                if self.lengths.is_empty() {
                    return usage("key `lengths`: empty list".into());
                }
                for &l in &self.lengths {
                    if l < 2 {
                        return usage(format!("key `lengths`: every length must be at least 2, got {l}"));
                    }
                }
                self.chain(self.lengths[0], self.g[0])?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn chain(&self, length: usize, g: f64) -> Result<ChainParams, CliError> {
        let p = ChainParams {
            length,
            hopping: self.hopping,
            omega: self.omega,
            g,
            gamma1: self.gamma1,
            gamma_l: self.gamma_l,
            d1: self.d1,
            d_l: self.d_l,
            interaction: self.interaction,
            nbar: self.nbar,
        };
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }

    pub fn single_site(&self, g: f64) -> Result<SingleSiteParams, CliError> {
        let p = SingleSiteParams {
            omega: self.omega,
            g,
            gamma: self.gamma,
            d: self.d,
        };
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }

    /// Integrator settings with the command's defaults filled in.
    ///
    /// `rate` is the slowest boundary damping rate and `tau` the slowest
    /// relaxation time of the system (at least `1 / rate`). Chain runs
    /// default to `transient = 10 tau` and a window of `30 tau`; spectra keep
    /// the window at `40 / rate`, which fixes the frequency resolution.
    /// Relaxation runs cover `[0, 10]`. Scaling runs grow with the diffusive
    /// filling time of the chain: `transient = max(10 / rate, 2 L^2)` and a
    /// window of `max(30 / rate, L^2)`, in units where `J = 1`.
    pub fn integrator(&self, rate: f64, tau: f64, length: usize) -> Result<IntegratorConfig, CliError> {
        let rate = if rate.is_finite() && rate > 0.0 { rate } else { 0.5 };
        let tau = if tau.is_finite() { tau.max(1.0 / rate) } else { 1.0 / rate };
        let l2 = (length * length) as f64;
        let (default_transient, default_window) = match self.command {
            CommandKind::Relax => (0.0, 10.0),
            CommandKind::Chain => (10.0 * tau, 30.0 * tau),
            CommandKind::Spectra => (10.0 * tau, 40.0 / rate),
            CommandKind::Scaling => ((10.0 / rate).max(2.0 * l2), (30.0 / rate).max(l2)),
        };
        let transient = self.transient.unwrap_or(default_transient);
        let t_final = self.t_final.unwrap_or(transient + default_window);
        let cfg = IntegratorConfig {
            dt: self.dt,
            t_final,
            sample_stride: self.stride,
            transient,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// A parsed command line.
#[derive(Debug, Clone)]
pub enum Invocation {
    Run {
        settings: Settings,
        output_dir: PathBuf,
        threads: Option<usize>,
    },
    Replay {
        manifest: PathBuf,
        output_dir: Option<PathBuf>,
        threads: Option<usize>,
    },
}

/// Parses `argv` (program name first) and resolves flags over the config
/// file over defaults.
pub fn parse_config<I, T>(argv: I) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    let (kind, args) = match cli.command {
        Command::Relax(a) => (CommandKind::Relax, a),
        Command::Chain(a) => (CommandKind::Chain, a),
        Command::Spectra(a) => (CommandKind::Spectra, a),
        Command::Scaling(a) => (CommandKind::Scaling, a),
        Command::Replay(r) => {
            return Ok(Invocation::Replay {
                manifest: r.manifest,
                output_dir: r.output_dir,
                threads: r.threads,
            })
        }
    };
    let file = match &args.config {
        Some(path) => Overrides::from_config_file(path)?,
        None => Overrides::default(),
    };
    let merged = args.values.clone().over(file);
    let settings = Settings::resolve(kind, &merged)?;
    Ok(Invocation::Run {
        settings,
        output_dir: args.output_dir.unwrap_or_else(|| PathBuf::from(".")),
        threads: args.threads,
    })
}
