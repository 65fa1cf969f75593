use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tempfile::NamedTempFile;

use phylofactor::identify::{
    loadings_plot_data, relabel, summarize, write_loadings_plot, write_summary, Chain, Sample, TraceLayout,
};
use phylofactor::pathsampling::{beta_schedule, select_num_factors, write_path_table, ModelSelection};
use phylofactor::rng::{SeedSequence, Stream};
use phylofactor::samplers::{mcmc_run_with, KernelWeights, McmcSettings};
use phylofactor::simulate::{generate, SyntheticSpec, TreeSource};
use phylofactor::trace::{read_trace, TraceWriter};
use phylofactor::traits::{standardize, ColumnKind};
use phylofactor::tree::{parse_newick, scale_to_unit_depth, tree_covariance};
use phylofactor::{Hyperparameters, LatentState, Model, Phylogeny, TraitMatrix, TreeCovariance};

use crate::config::Config;

/// Writes `name` inside `dir` through a temporary file so a failed run
/// never leaves a partial output behind.
fn write_atomic(dir: &Path, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(dir.join(name)).with_context(|| format!("writing {name}"))?;
    Ok(())
}

fn output_dir(cfg: &Config) -> Result<PathBuf> {
    let out = PathBuf::from(cfg.text("out"));
    if out.as_os_str().is_empty() {
        bail!("no output directory given");
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn echo_config(cfg: &Config, out: &Path) -> Result<()> {
    let ini = cfg.to_ini();
    write_atomic(out, "effective.cfg", |w| {
        ini.write_to(&mut { w })?;
        Ok(())
    })
}

fn hyperparameters(cfg: &Config) -> Result<Hyperparameters> {
    let hyper = Hyperparameters {
        alpha_lambda: cfg.positive("alpha_lambda")?,
        beta_lambda: cfg.positive("beta_lambda")?,
        loadings_mean: cfg.get("loadings_mean")?,
        loadings_precision: cfg.positive("loadings_precision")?,
        kappa0: cfg.positive("kappa0")?,
        cutpoint_rate: cfg.positive("cutpoint_rate")?,
        ..Hyperparameters::default()
    };
    hyper.validate()?;
    Ok(hyper)
}

fn kernel_weights(cfg: &Config) -> Result<KernelWeights> {
    let weights = KernelWeights {
        loadings: cfg.get("weight_loadings")?,
        precisions: cfg.get("weight_precisions")?,
        factor_rows: cfg.get("weight_factor_rows")?,
        latent_cells: cfg.get("weight_latent_cells")?,
        cutpoints: cfg.get("weight_cutpoints")?,
    };
    weights.validate()?;
    Ok(weights)
}

fn column_kinds(cfg: &Config) -> Result<HashMap<String, ColumnKind>> {
    cfg.columns
        .iter()
        .map(|(name, kind)| Ok((name.clone(), kind.parse::<ColumnKind>()?)))
        .collect()
}

fn read_tree(path: &Path) -> Result<Phylogeny> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_newick(&text)?)
}

struct Dataset {
    cov: TreeCovariance,
    traits: TraitMatrix,
    latent: LatentState,
    hyper: Hyperparameters,
}

fn load_dataset(cfg: &Config) -> Result<Dataset> {
    let hyper = hyperparameters(cfg)?;
    let tree = scale_to_unit_depth(&read_tree(cfg.path("tree")?)?)?;
    let kinds = column_kinds(cfg)?;
    let traits_path = cfg.path("traits")?;
    let file = File::open(traits_path).with_context(|| format!("reading {}", traits_path.display()))?;
    let traits = TraitMatrix::read_csv(BufReader::new(file), &|name| kinds.get(name).copied())?.align_to(&tree)?;
    let latent = standardize(&traits)?;
    let cov = tree_covariance(&tree, hyper.kappa0)?;
    log::info!(
        "{} taxa, {} traits, {} missing cells",
        traits.n_taxa(),
        traits.n_traits(),
        (0..traits.n_taxa())
            .flat_map(|i| (0..traits.n_traits()).map(move |j| (i, j)))
            .filter(|&(i, j)| traits.get(i, j).is_none())
            .count()
    );
    Ok(Dataset { cov, traits, latent, hyper })
}

pub fn fit(cfg: &Config) -> Result<()> {
    let data = load_dataset(cfg)?;
    let k = cfg.count("k")?;
    let settings = McmcSettings {
        iterations: cfg.get("iterations")?,
        burnin: cfg.get("burnin")?,
        thin: cfg.count("thin")?,
        seed: cfg.get("seed")?,
        weights: kernel_weights(cfg)?,
        cutpoint_step: cfg.positive("cutpoint_step")?,
        record_factors: cfg.get("record_factors")?,
        workers: cfg.count("workers")?,
    };
    settings.validate()?;
    let model = Model::new(&data.cov, &data.traits, data.hyper, k)?;
    let seeds = SeedSequence::new(settings.seed);
    let init = model.initial_state(data.latent.clone(), &mut seeds.rng(Stream::Init));
    let out = output_dir(cfg)?;

    let layout = TraceLayout::new(
        data.traits.n_taxa(),
        data.traits.n_traits(),
        k,
        data.traits.kinds(),
        settings.record_factors,
    );
    let tmp = NamedTempFile::new_in(&out).context("creating temporary trace file")?;
    let mut writer = TraceWriter::new(BufWriter::new(tmp), layout)?;
    let mut samples: Vec<Sample<f64>> = Vec::new();
    let (layout, _) = mcmc_run_with(model, init, 1.0, &settings, &mut |s| {
        writer.write(s)?;
        samples.push(s.clone());
        Ok(())
    })?;
    let tmp = writer.finish()?.into_inner().context("flushing trace")?;
    tmp.persist(out.join("trace.csv")).context("writing trace.csv")?;

    let chain = relabel(&Chain { layout, beta: 1.0, samples });
    write_summaries(&chain, &out)?;
    echo_config(cfg, &out)?;
    log::info!("wrote results to {}", out.display());
    Ok(())
}

fn write_summaries(chain: &Chain<f64>, out: &Path) -> Result<()> {
    let rows = summarize(chain)?;
    write_atomic(out, "summary.csv", |w| Ok(write_summary(&rows, w)?))?;
    let points = loadings_plot_data(chain)?;
    write_atomic(out, "loadings_plot.csv", |w| Ok(write_loadings_plot(&points, w)?))
}

pub fn select_k(cfg: &Config) -> Result<()> {
    let data = load_dataset(cfg)?;
    let max_k = cfg.count("max_k")?;
    let mut schedule = beta_schedule(cfg.get("points")?, cfg.positive("shape")?)?;
    schedule.iterations = cfg.count("path_iterations")?;
    schedule.burnin_fraction = cfg.get("burnin_fraction")?;
    schedule.thin = cfg.count("path_thin")?;
    schedule.warm_start = cfg.get("warm_start")?;
    schedule.validate()?;
    let settings = McmcSettings {
        seed: cfg.get("seed")?,
        weights: kernel_weights(cfg)?,
        cutpoint_step: cfg.positive("cutpoint_step")?,
        workers: cfg.count("workers")?,
        ..McmcSettings::default()
    };
    settings.validate()?;
    let out = output_dir(cfg)?;
    let selection = select_num_factors(&data.cov, &data.traits, &data.latent, data.hyper, max_k, &schedule, &settings)?;
    write_selection(&selection, &out)?;
    echo_config(cfg, &out)?;
    log::info!("best K = {}; wrote results to {}", selection.best_k(), out.display());
    Ok(())
}

fn write_selection(sel: &ModelSelection, out: &Path) -> Result<()> {
    write_atomic(out, "marginals.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["k", "log_marginal", "mc_error", "log_prior", "posterior"])?;
        for (i, k) in sel.ks.iter().enumerate() {
            let e = &sel.estimates[i];
            c.write_record([
                k.to_string(),
                e.log_marginal.to_string(),
                e.mc_error.to_string(),
                sel.log_priors[i].to_string(),
                sel.posterior[i].to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_atomic(out, "bayes_factors.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend(sel.ks.iter().map(|k| k.to_string()));
        c.write_record(&header)?;
        for (a, k) in sel.ks.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend((0..sel.ks.len()).map(|b| sel.log_bayes_factors[(a, b)].to_string()));
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })?;
    for (k, e) in sel.ks.iter().zip(&sel.estimates) {
        write_atomic(out, &format!("path_k{k}.csv"), |w| Ok(write_path_table(e, w)?))?;
    }
    write_atomic(out, "path_summary.txt", |w| {
        writeln!(w, "best_k = {}", sel.best_k())?;
        for (i, k) in sel.ks.iter().enumerate() {
            let e = &sel.estimates[i];
            writeln!(w, "log_marginal_k{k} = {}", e.log_marginal)?;
            writeln!(w, "mc_error_k{k} = {}", e.mc_error)?;
            writeln!(w, "posterior_k{k} = {}", sel.posterior[i])?;
        }
        Ok(())
    })
}

pub fn simulate(cfg: &Config) -> Result<()> {
    let n_traits = cfg.count("n_traits")?;
    let kinds = match cfg.text("types") {
        "" => vec![ColumnKind::Continuous; n_traits],
        list => split_types(list)?,
    };
    let tree = match cfg.text("tree_source") {
        "yule" => TreeSource::Yule,
        path => TreeSource::Newick(fs::read_to_string(path).with_context(|| format!("reading {path}"))?),
    };
    let spec = SyntheticSpec {
        n_taxa: cfg.count("n_taxa")?,
        n_traits,
        k: cfg.count("k_true")?,
        kinds,
        missing_fraction: cfg.get("missing_fraction")?,
        tree,
        seed: cfg.get("seed")?,
        hyper: hyperparameters(cfg)?,
        loadings: None,
        residual_precision: cfg.optional("residual_precision")?,
        rescale: cfg.get("rescale")?,
    };
    spec.validate()?;
    let data = generate(&spec)?;
    let out = output_dir(cfg)?;
    write_atomic(&out, "tree.nwk", |w| Ok(writeln!(w, "{}", data.tree.to_newick())?))?;
    write_atomic(&out, "traits.csv", |w| Ok(data.traits.write_csv(w)?))?;
    write_atomic(&out, "truth.csv", |w| Ok(data.truth.write_csv(w)?))?;

    let mut run = ini::Ini::new();
    run.with_section(Some("data"))
        .set("tree", out.join("tree.nwk").to_string_lossy())
        .set("traits", out.join("traits.csv").to_string_lossy());
    for (name, kind) in data.traits.names().iter().zip(data.traits.kinds()) {
        run.with_section(Some("columns")).set(name.as_str(), kind.to_string());
    }
    write_atomic(&out, "run.cfg", |w| Ok(run.write_to(&mut { w })?))?;
    echo_config(cfg, &out)?;
    log::info!("wrote synthetic data to {}", out.display());
    Ok(())
}

/// Splits `continuous,ordinal(4),binary`, honouring parentheses.
fn split_types(list: &str) -> Result<Vec<ColumnKind>> {
    let mut kinds = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in list.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                kinds.push(list[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    kinds.push(list[start..].parse()?);
    Ok(kinds)
}

pub fn summarize_trace(cfg: &Config) -> Result<()> {
    let path = cfg.path("trace")?;
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let chain: Chain<f64> = read_trace(BufReader::new(file))?;
    if chain.is_empty() {
        bail!("trace {} has no samples", path.display());
    }
    let out = output_dir(cfg)?;
    write_summaries(&relabel(&chain), &out)?;
    echo_config(cfg, &out)?;
    Ok(())
}
