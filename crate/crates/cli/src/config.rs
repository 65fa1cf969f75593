//! Run configuration: defaults, an INI file, then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ini::Ini;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    SelectK,
    Simulate,
    Summarize,
}

use Command::*;

pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub commands: &'static [Command],
}

const DATA: &[Command] = &[Fit, SelectK];
const MODEL: &[Command] = &[Fit, SelectK, Simulate];
const CHAIN: &[Command] = &[Fit, SelectK];

macro_rules! key {
    ($section:literal, $name:literal, $default:literal, $commands:expr, $help:literal) => {
        Key { section: $section, name: $name, default: $default, help: $help, commands: $commands }
    };
}

pub const KEYS: &[Key] = &[
    key!("data", "tree", "", DATA, "Newick tree file"),
    key!("data", "traits", "", DATA, "trait table (CSV, first column taxon, NA for missing)"),
    key!("data", "trace", "", &[Summarize], "trace file written by fit"),
    key!("model", "k", "2", &[Fit], "number of factors"),
    key!("model", "max_k", "3", &[SelectK], "largest number of factors compared"),
    key!("model", "kappa0", "1", MODEL, "root prior sample size"),
    key!("model", "alpha_lambda", "0.3333333333333333", MODEL, "Gamma shape of residual precisions"),
    key!("model", "beta_lambda", "0.3333333333333333", MODEL, "Gamma rate of residual precisions"),
    key!("model", "loadings_mean", "0", MODEL, "prior mean of free loadings"),
    key!("model", "loadings_precision", "1", MODEL, "prior precision of free loadings"),
    key!("model", "cutpoint_rate", "2", MODEL, "exponential rate of cut-point spacings"),
    key!("mcmc", "iterations", "10000", &[Fit], "MCMC iterations"),
    key!("mcmc", "burnin", "2500", &[Fit], "iterations discarded before recording"),
    key!("mcmc", "thin", "10", &[Fit], "record every thin-th iteration"),
    key!("mcmc", "seed", "1", CHAIN, "master random seed"),
    key!("mcmc", "workers", "1", CHAIN, "worker threads (results do not depend on it)"),
    key!("mcmc", "cutpoint_step", "0.25", CHAIN, "cut-point random-walk standard deviation"),
    key!("mcmc", "record_factors", "false", &[Fit], "include factor values in the trace"),
    key!("mcmc", "weight_loadings", "1", CHAIN, "selection weight of the loadings sweep"),
    key!("mcmc", "weight_precisions", "1", CHAIN, "selection weight of the precision sweep"),
    key!("mcmc", "weight_factor_rows", "1", CHAIN, "selection weight of the factor-row sweep"),
    key!("mcmc", "weight_latent_cells", "1", CHAIN, "selection weight of the latent-cell sweep"),
    key!("mcmc", "weight_cutpoints", "1", CHAIN, "selection weight of the cut-point moves"),
    key!("path", "points", "30", &[SelectK], "number of temperatures"),
    key!("path", "shape", "0.3", &[SelectK], "Beta(shape, 1) quantile spacing of temperatures"),
    key!("path", "path_iterations", "20000", &[SelectK], "iterations per temperature"),
    key!("path", "burnin_fraction", "0.25", &[SelectK], "fraction of each temperature's iterations discarded"),
    key!("path", "path_thin", "1", &[SelectK], "use every path_thin-th iteration"),
    key!("path", "warm_start", "true", &[SelectK], "start each temperature from the previous final state"),
    key!("simulate", "n_taxa", "20", &[Simulate], "number of taxa"),
    key!("simulate", "n_traits", "8", &[Simulate], "number of traits"),
    key!("simulate", "k_true", "2", &[Simulate], "number of factors generating the data"),
    key!("simulate", "types", "", &[Simulate], "comma-separated column types (default all continuous)"),
    key!("simulate", "missing_fraction", "0", &[Simulate], "probability a cell is masked"),
    key!("simulate", "tree_source", "yule", &[Simulate], "'yule' or a Newick file"),
    key!("simulate", "residual_precision", "", &[Simulate], "fixed residual precision (default: prior draws)"),
    key!("simulate", "rescale", "true", &[Simulate], "random affine map on continuous columns"),
    key!("simulate", "seed", "1", &[Simulate], "random seed"),
    key!("output", "out", "pfa-output", &[Fit, SelectK, Simulate, Summarize], "output directory"),
];

pub fn keys_for(command: Command) -> impl Iterator<Item = &'static Key> {
    KEYS.iter().filter(move |k| k.commands.contains(&command))
}

#[derive(Debug, Clone)]
pub struct Config {
    command: Command,
    values: BTreeMap<&'static str, String>,
    /// Declared column types in declaration order.
    pub columns: Vec<(String, String)>,
}

impl Config {
    pub fn new(command: Command) -> Self {
        let values = keys_for(command).map(|k| (k.name, k.default.to_string())).collect();
        Config { command, values, columns: Vec::new() }
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let ini = Ini::load_from_file(path).with_context(|| format!("reading config {}", path.display()))?;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (name, value) in props.iter() {
                if section == "columns" {
                    self.set_column(name, value);
                } else {
                    self.set_in(Some(section), name, value)?;
                }
            }
        }
        Ok(())
    }

    fn set_in(&mut self, section: Option<&str>, name: &str, value: &str) -> Result<()> {
        let command = self.command;
        let key = keys_for(command)
            .find(|k| k.name == name && section.is_none_or(|s| s == k.section))
            .ok_or_else(|| match section {
                Some(s) => anyhow!("unknown configuration key [{s}] {name} for this command"),
                None => anyhow!("unknown configuration key {name}"),
            })?;
        self.values.insert(key.name, value.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        self.set_in(None, name, value)
    }

    pub fn set_column(&mut self, name: &str, kind: &str) {
        let (name, kind) = (name.trim().to_string(), kind.trim().to_string());
        match self.columns.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = kind,
            None => self.columns.push((name, kind)),
        }
    }

    pub fn text(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.text(name);
        raw.parse::<T>().map_err(|e| anyhow!("invalid value '{raw}' for {name}: {e}"))
    }

    pub fn optional<T: FromStr>(&self, name: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.text(name).is_empty() {
            Ok(None)
        } else {
            self.get(name).map(Some)
        }
    }

    pub fn positive(&self, name: &str) -> Result<f64> {
        let v: f64 = self.get(name)?;
        if !(v > 0.0 && v.is_finite()) {
            bail!("{name} must be positive, got {v}");
        }
        Ok(v)
    }

    pub fn count(&self, name: &str) -> Result<usize> {
        let v: usize = self.get(name)?;
        if v == 0 {
            bail!("{name} must be at least 1");
        }
        Ok(v)
    }

    pub fn path(&self, name: &str) -> Result<&Path> {
        let p = self.text(name);
        if p.is_empty() {
            bail!("no {name} file given");
        }
        let path = Path::new(p);
        if !path.is_file() {
            bail!("{name} file '{p}' does not exist");
        }
        Ok(path)
    }

    /// The resolved configuration as INI text.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        for k in keys_for(self.command) {
            ini.with_section(Some(k.section)).set(k.name, self.text(k.name));
        }
        if matches!(self.command, Fit | SelectK) {
            for (name, kind) in &self.columns {
                ini.with_section(Some("columns")).set(name.as_str(), kind.as_str());
            }
        }
        ini
    }
}
