//! Command arguments and the TOML configuration file. Every option is
//! optional at both layers; a flag wins over the config file, which wins
//! over the built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use orfel::Mode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Combines two layers field by field, preferring `self`.
pub trait Layer: Sized {
    fn or(self, lower: Self) -> Self;
}

macro_rules! layered {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Layer for $ty {
            fn or(self, lower: Self) -> Self {
                Self { $($field: self.$field.or(lower.$field)),* }
            }
        }
    };
}

/// Resolved options as strings, for echoing into outputs.
pub fn echo<T: Serialize>(args: &T) -> BTreeMap<String, String> {
    let value = serde_json::to_value(args).expect("arguments serialize");
    let mut out = BTreeMap::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::String(s) => {
                    out.insert(k, s);
                }
                other => {
                    out.insert(k, other.to_string());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    #[arg(long)]
    pub users: Option<u32>,
    #[arg(long)]
    pub products: Option<u32>,
    #[arg(long)]
    pub edges: Option<u64>,
    /// Earliest timestamp, seconds.
    #[arg(long)]
    pub t_min: Option<u64>,
    /// Latest timestamp, seconds.
    #[arg(long)]
    pub t_max: Option<u64>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Output edge list.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(GenArgs {
    users,
    products,
    edges,
    t_min,
    t_max,
    rng_seed,
    out
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectMode {
    Defamation,
    Promotion,
    /// Half the attacks of each mode, defamation first.
    Mixed,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectArgs {
    /// Host edge list.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Edge list with the attacks appended.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Ground-truth JSON to write.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Attack spec JSON; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Users per attack.
    #[arg(long)]
    pub users: Option<usize>,
    /// Products per attack.
    #[arg(long)]
    pub products: Option<usize>,
    /// Half-width of each product's time window, seconds.
    #[arg(long)]
    pub dt: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<InjectMode>,
    #[arg(long)]
    pub kappa: Option<u8>,
    /// Number of attacks.
    #[arg(long)]
    pub attacks: Option<usize>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Field separator of the edge list.
    #[arg(long)]
    pub separator: Option<char>,
    /// The edge list starts with a header line.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
}
layered!(InjectArgs {
    input,
    output,
    truth,
    spec,
    users,
    products,
    dt,
    mode,
    kappa,
    attacks,
    rng_seed,
    separator,
    header
});

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessArgs {
    /// Edge list to ingest.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output graph directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest shard file, bytes.
    #[arg(long)]
    pub memory_budget: Option<u64>,
    /// Read unit, bytes. Defaults to ORFEL_BLOCK_SIZE or 1 MiB.
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Rebuild even if the directory is up to date.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub force: Option<bool>,
    /// Field separator of the edge list.
    #[arg(long)]
    pub separator: Option<char>,
    /// The edge list starts with a header line.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
}
layered!(PreprocessArgs {
    input,
    out,
    memory_budget,
    block_size,
    force,
    separator,
    header
});

pub const DEFAULT_DT: u64 = 7 * 86_400;

/// Builds detection parameters from the option fields shared by `detect`
/// and `bench`.
macro_rules! detection_params {
    ($a:expr, $seeds:expr) => {{
        let mode = $a.mode.unwrap_or(Mode::Promotion);
        orfel::lockstep::DetectionParams::new(
            $a.n.unwrap_or(10),
            $a.m.unwrap_or(5),
            $a.rho.unwrap_or(0.8),
            $a.dt.unwrap_or(DEFAULT_DT),
            mode,
        )
        .with_kappa($a.kappa.unwrap_or(mode.default_kappa()))
        .with_seeds($seeds)
        .with_rng_seed($a.rng_seed.unwrap_or(0))
    }};
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectArgs {
    /// Preprocessed graph directory.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Report JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed count; defaults to round(1000 * log10(edges)).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Iteration cap; hitting it exits with status 4.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Minimum users per lockstep.
    #[arg(long)]
    pub n: Option<usize>,
    /// Minimum (and maximum) products per lockstep.
    #[arg(long)]
    pub m: Option<usize>,
    /// Coverage fraction in (0, 1].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Half-width of the time window, seconds.
    #[arg(long)]
    pub dt: Option<u64>,
    /// Rating threshold; defaults to 2 for defamation and 4 for promotion.
    #[arg(long)]
    pub kappa: Option<u8>,
    /// defamation or promotion.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}
layered!(DetectArgs {
    graph,
    out,
    seeds,
    max_iters,
    n,
    m,
    rho,
    dt,
    kappa,
    mode,
    rng_seed,
    threads
});

impl DetectArgs {
    pub fn params(&self, seeds: usize) -> orfel::lockstep::DetectionParams {
        detection_params!(self, seeds)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Detection report(s); locksteps of all of them are pooled.
    #[arg(long = "report", num_args = 1..)]
    pub reports: Option<Vec<PathBuf>>,
    /// Ground-truth JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Fraction of an attack a lockstep must hold to catch it.
    #[arg(long)]
    pub coverage: Option<f64>,
}
layered!(EvalArgs {
    reports,
    truth,
    coverage
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Edges,
    Seeds,
    All,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    /// Edge counts of the edge sweep.
    #[arg(long, value_delimiter = ',')]
    pub edge_counts: Option<Vec<u64>>,
    /// Seeds used by the edge sweep.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Graph size of the seed sweep.
    #[arg(long)]
    pub graph_edges: Option<u64>,
    /// Seed counts of the seed sweep.
    #[arg(long, value_delimiter = ',')]
    pub seed_counts: Option<Vec<usize>>,
    /// Runs per point; the fastest is kept.
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub memory_budget: Option<u64>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Where generated graphs go; a temporary directory if absent.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    /// CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Minimum users per lockstep.
    #[arg(long)]
    pub n: Option<usize>,
    /// Minimum (and maximum) products per lockstep.
    #[arg(long)]
    pub m: Option<usize>,
    /// Coverage fraction in (0, 1].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Half-width of the time window, seconds.
    #[arg(long)]
    pub dt: Option<u64>,
    /// Rating threshold; defaults to 2 for defamation and 4 for promotion.
    #[arg(long)]
    pub kappa: Option<u8>,
    /// defamation or promotion.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}
layered!(BenchArgs {
    suite,
    edge_counts,
    seeds,
    graph_edges,
    seed_counts,
    repetitions,
    memory_budget,
    block_size,
    workdir,
    out,
    n,
    m,
    rho,
    dt,
    kappa,
    mode,
    rng_seed,
    threads
});

impl BenchArgs {
    pub fn params(&self) -> orfel::lockstep::DetectionParams {
        detection_params!(self, 1)
    }
}

/// Contents of `--config`: one optional table per subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub gen: GenArgs,
    pub inject: InjectArgs,
    pub preprocess: PreprocessArgs,
    pub detect: DetectArgs,
    pub eval: EvalArgs,
    pub bench: BenchArgs,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::format(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cfg = ConfigFile::parse(
            "[detect]\nn = 50\nm = 25\nrho = 0.9\ngraph = \"g\"\n\n[preprocess]\nseparator = \";\"\nheader = true\n",
        )
        .unwrap();
        let flags = DetectArgs {
            n: Some(7),
            ..Default::default()
        };
        let merged = flags.or(cfg.detect);
        assert_eq!(merged.n, Some(7));
        assert_eq!(merged.m, Some(25));
        assert_eq!(merged.rho, Some(0.9));
        assert_eq!(merged.graph, Some(PathBuf::from("g")));
        assert_eq!(cfg.preprocess.separator, Some(';'));
        assert_eq!(cfg.preprocess.header, Some(true));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("[detect]\nnn = 1\n").is_err());
        assert!(ConfigFile::parse("[detekt]\nn = 1\n").is_err());
    }

    #[test]
    fn echo_skips_unset_values() {
        let a = DetectArgs {
            seeds: Some(3),
            mode: Some(Mode::Defamation),
            ..Default::default()
        };
        let e = echo(&a);
        assert_eq!(e.get("seeds").map(String::as_str), Some("3"));
        assert_eq!(e.get("mode").map(String::as_str), Some("defamation"));
        assert!(!e.contains_key("graph"));
    }
}
