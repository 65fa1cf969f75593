use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::kernels::{
    factor_row_from_parts, free_count, latent_draw, loadings_from_moments, mh_cutpoint,
    precision_from_ss, weighted_cross, weighted_gram,
};
use super::{check_beta, fitted_cell, ChainState, Model};
use crate::diffusion::TreeMessenger;
use crate::error::{Error, Result};
use crate::identify::{Chain, Sample, TraceLayout};
use crate::rng::{ChainRng, SeedSequence, Stream};
use crate::scalar::Real;
use crate::traits::{CellRole, ColumnKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelClass {
    Loadings,
    Precisions,
    FactorRows,
    LatentCells,
    Cutpoints,
}

impl KernelClass {
    pub const ALL: [KernelClass; 5] = [
        KernelClass::Loadings,
        KernelClass::Precisions,
        KernelClass::FactorRows,
        KernelClass::LatentCells,
        KernelClass::Cutpoints,
    ];
}

/// Relative selection weights of the kernel classes; 0 disables a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelWeights {
    pub loadings: f64,
    pub precisions: f64,
    pub factor_rows: f64,
    pub latent_cells: f64,
    pub cutpoints: f64,
}

impl Default for KernelWeights {
    fn default() -> Self {
        KernelWeights {
            loadings: 1.0,
            precisions: 1.0,
            factor_rows: 1.0,
            latent_cells: 1.0,
            cutpoints: 1.0,
        }
    }
}

impl KernelWeights {
    pub fn get(&self, class: KernelClass) -> f64 {
        match class {
            KernelClass::Loadings => self.loadings,
            KernelClass::Precisions => self.precisions,
            KernelClass::FactorRows => self.factor_rows,
            KernelClass::LatentCells => self.latent_cells,
            KernelClass::Cutpoints => self.cutpoints,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all: Vec<f64> = KernelClass::ALL.iter().map(|&c| self.get(c)).collect();
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "kernel weights must be finite and non-negative, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument("all kernel weights are zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub weights: KernelWeights,
    /// Standard deviation of the cut-point random walk.
    pub cutpoint_step: f64,
    pub record_factors: bool,
    /// Threads for per-column updates; results do not depend on it.
    pub workers: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            iterations: 10_000,
            burnin: 2_500,
            thin: 10,
            seed: 1,
            weights: KernelWeights::default(),
            cutpoint_step: 0.25,
            record_factors: false,
            workers: 1,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if !(self.cutpoint_step > 0.0 && self.cutpoint_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cutpoint_step must be positive, got {}",
                self.cutpoint_step
            )));
        }
        Ok(())
    }
}

/// A chain at a fixed temperature.
pub struct Sampler<'a, T: Real> {
    model: Model<'a, T>,
    messenger: TreeMessenger<'a, T>,
    state: ChainState<T>,
    beta: T,
    seeds: SeedSequence,
    scan: ChainRng,
    classes: Vec<(KernelClass, f64)>,
    step_size: f64,
    parallel: bool,
    tick: u64,
    proposed: u64,
    accepted: u64,
}

impl<'a, T: Real> Sampler<'a, T> {
    pub fn new(model: Model<'a, T>, state: ChainState<T>, beta: T, settings: &McmcSettings) -> Result<Self> {
        Self::with_seeds(model, state, beta, settings, SeedSequence::new(settings.seed))
    }

    /// Starts a chain; at `β = 1` an initial state with discrete cells outside
    /// their intervals is first repaired by one latent sweep.
    pub fn with_seeds(
        model: Model<'a, T>,
        state: ChainState<T>,
        beta: T,
        settings: &McmcSettings,
        seeds: SeedSequence,
    ) -> Result<Self> {
        check_beta(beta)?;
        settings.validate()?;
        model.check_state(&state)?;
        let data = model.data;
        let (n, p) = (data.n_taxa(), data.n_traits());
        let present = |c: KernelClass| match c {
            KernelClass::Precisions => !data.continuous_columns().is_empty(),
            KernelClass::LatentCells => (0..n).any(|i| (0..p).any(|j| data.role(i, j) != CellRole::Fixed)),
            KernelClass::Cutpoints => state.latent.cutpoints.n_interior() > 0,
            _ => true,
        };
        let classes = KernelClass::ALL
            .iter()
            .map(|&c| (c, settings.weights.get(c)))
            .filter(|&(c, w)| w > 0.0 && present(c))
            .collect();
        let mut sampler = Sampler {
            messenger: TreeMessenger::new(model.cov),
            model,
            state,
            beta,
            scan: seeds.rng(Stream::Scan),
            seeds,
            classes,
            step_size: settings.cutpoint_step,
            parallel: settings.workers > 1,
            tick: 0,
            proposed: 0,
            accepted: 0,
        };
        if beta == T::one() && sampler.state.latent.violations(data) > 0 {
            sampler.sweep_latent(u64::MAX)?;
        }
        Ok(sampler)
    }

    pub fn state(&self) -> &ChainState<T> {
        &self.state
    }

    pub fn into_state(self) -> ChainState<T> {
        self.state
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn model(&self) -> &Model<'a, T> {
        &self.model
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    /// Fraction of in-support cut-point proposals accepted so far.
    pub fn cutpoint_acceptance(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    /// One random-scan iteration: a single kernel class chosen by weight.
    pub fn step(&mut self) -> Result<Option<KernelClass>> {
        let total: f64 = self.classes.iter().map(|c| c.1).sum();
        if self.classes.is_empty() {
            self.tick += 1;
            return Ok(None);
        }
        let mut u = self.scan.random::<f64>() * total;
        let mut chosen = self.classes[self.classes.len() - 1].0;
        for &(c, w) in &self.classes {
            if u < w {
                chosen = c;
                break;
            }
            u -= w;
        }
        self.apply(chosen)?;
        Ok(Some(chosen))
    }

    /// Every enabled class once, in a fixed order.
    pub fn sweep(&mut self) -> Result<()> {
        let classes: Vec<KernelClass> = self.classes.iter().map(|c| c.0).collect();
        for c in classes {
            self.apply(c)?;
        }
        Ok(())
    }

    pub fn apply(&mut self, class: KernelClass) -> Result<()> {
        self.tick += 1;
        let t = self.tick;
        match class {
            KernelClass::Loadings => self.sweep_loadings(t),
            KernelClass::Precisions => self.sweep_precisions(t),
            KernelClass::FactorRows => self.sweep_factor_rows(t),
            KernelClass::LatentCells => self.sweep_latent(t),
            KernelClass::Cutpoints => self.sweep_cutpoints(t),
        }
    }

    fn per_column<U, F>(&self, columns: &[usize], f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        if self.parallel {
            columns.par_iter().map(|&j| f(j)).collect()
        } else {
            columns.iter().map(|&j| f(j)).collect()
        }
    }

    fn sweep_loadings(&mut self, t: u64) -> Result<()> {
        let fs = &self.state.factors;
        let f = &fs.f;
        let gram = f.transpose() * f;
        let cross = f.transpose() * &self.state.latent.z;
        let k = fs.k();
        let columns: Vec<usize> = (0..self.model.n_traits()).collect();
        let (seeds, hyper, beta, lambda) = (self.seeds, &self.model.hyper, self.beta, &fs.lambda);
        let draws = self.per_column(&columns, |j| {
            let kp = free_count(j, k);
            let mut rng = seeds.derive(Stream::Loadings, t, j as u64);
            loadings_from_moments(
                hyper,
                gram.view((0, 0), (kp, kp)).into_owned(),
                cross.view((0, j), (kp, 1)).column(0).into_owned(),
                lambda[j],
                beta,
                &mut rng,
            )
        });
        for (j, draw) in draws.into_iter().enumerate() {
            let draw = draw?;
            for (r, v) in draw.iter().enumerate() {
                self.state.factors.l[(r, j)] = *v;
            }
        }
        Ok(())
    }

    fn sweep_precisions(&mut self, t: u64) -> Result<()> {
        let columns = self.model.data.continuous_columns();
        let fitted = self.state.factors.fitted();
        let z = &self.state.latent.z;
        let (seeds, hyper, beta) = (self.seeds, &self.model.hyper, self.beta);
        let n = z.nrows();
        let draws = self.per_column(&columns, |j| {
            let ss = (0..n).fold(T::zero(), |acc, i| {
                let r = z[(i, j)] - fitted[(i, j)];
                acc + r * r
            });
            let mut rng = seeds.derive(Stream::Precisions, t, j as u64);
            precision_from_ss(hyper, n, ss, beta, &mut rng)
        });
        for (&j, draw) in columns.iter().zip(draws) {
            self.state.factors.lambda[j] = draw?;
        }
        Ok(())
    }

    fn sweep_factor_rows(&mut self, t: u64) -> Result<()> {
        let mut rng = self.seeds.derive(Stream::FactorRows, t, 0);
        let n = self.model.n_taxa();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let fs = &mut self.state.factors;
        let z = &self.state.latent.z;
        let gl = weighted_gram(&fs.l, &fs.lambda);
        for i in order {
            let prior = self.messenger.tip_conditional(&fs.f, i)?;
            let lz = weighted_cross(&fs.l, &fs.lambda, z, i);
            let row = factor_row_from_parts(&prior, &gl, &lz, self.beta, &mut rng)?;
            for (c, v) in row.iter().enumerate() {
                fs.f[(i, c)] = *v;
            }
        }
        Ok(())
    }

    fn sweep_latent(&mut self, t: u64) -> Result<()> {
        let data = self.model.data;
        let (n, p) = (data.n_taxa(), data.n_traits());
        let beta = self.beta;
        let seeds = self.seeds;
        let columns: Vec<usize> = (0..p)
            .filter(|&j| (0..n).any(|i| data.role(i, j) != CellRole::Fixed))
            .collect();
        if beta == T::zero() || beta == T::one() {
            // Cells are conditionally independent at the endpoints.
            let state = &self.state;
            let draws = self.per_column(&columns, |j| {
                let mut rng = seeds.derive(Stream::LatentCells, t, j as u64);
                let mut col = DVector::from_fn(n, |i, _| state.latent.z[(i, j)]);
                for i in 0..n {
                    let role = data.role(i, j);
                    if role == CellRole::Fixed {
                        continue;
                    }
                    col[i] = draw_cell(state, i, j, role, beta, true, &mut rng);
                }
                col
            });
            for (&j, col) in columns.iter().zip(draws) {
                self.state.latent.z.set_column(j, &col);
            }
            return Ok(());
        }
        let mut violations = self.state.latent.violations(data);
        for &j in &columns {
            let mut rng = seeds.derive(Stream::LatentCells, t, j as u64);
            for i in 0..n {
                let role = data.role(i, j);
                if role == CellRole::Fixed {
                    continue;
                }
                let own = !self.state.latent.in_bounds(data, i, j, self.state.latent.z[(i, j)]);
                let others = violations - own as usize;
                let v = draw_cell(&self.state, i, j, role, beta, others == 0, &mut rng);
                self.state.latent.z[(i, j)] = v;
                violations = others + !self.state.latent.in_bounds(data, i, j, v) as usize;
            }
        }
        Ok(())
    }

    fn sweep_cutpoints(&mut self, t: u64) -> Result<()> {
        let mut rng = self.seeds.derive(Stream::Cutpoints, t, 0);
        let data = self.model.data;
        let mut violations = self.state.latent.violations(data);
        for j in 0..data.n_traits() {
            let ColumnKind::Ordinal(m) = data.kind(j) else { continue };
            for index in 0..m - 2 {
                let own = self.state.latent.column_violations(data, j);
                let others = violations - own;
                let model = self.model;
                let accepted = mh_cutpoint(
                    &model,
                    &mut self.state,
                    j,
                    index,
                    self.beta,
                    self.step_size,
                    others,
                    &mut rng,
                )?;
                self.proposed += 1;
                self.accepted += accepted as u64;
                violations = others + self.state.latent.column_violations(data, j);
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, iteration: u64, record_factors: bool) -> Sample<T> {
        let fs = &self.state.factors;
        Sample {
            iteration,
            loadings: fs.l.clone(),
            precision: fs.lambda.clone(),
            cutpoints: self.state.latent.cutpoints.flatten_interior(),
            factors: record_factors.then(|| fs.f.clone()),
        }
    }

    pub fn layout(&self, record_factors: bool) -> TraceLayout {
        TraceLayout::new(
            self.model.n_taxa(),
            self.model.n_traits(),
            self.model.k,
            self.model.data.kinds(),
            record_factors,
        )
    }
}

fn draw_cell<T: Real, R: Rng + ?Sized>(
    state: &ChainState<T>,
    i: usize,
    j: usize,
    role: CellRole,
    beta: T,
    others_satisfied: bool,
    rng: &mut R,
) -> T {
    let bounds = match role {
        CellRole::Bounded(code) => Some(state.latent.cutpoints.bounds(j, code)),
        _ => None,
    };
    let mean = fitted_cell(&state.factors.f, &state.factors.l, i, j);
    latent_draw(mean, state.factors.lambda[j], bounds, beta, others_satisfied, rng)
}

/// Runs a chain and collects its recorded samples.
pub fn mcmc_run<T: Real>(
    model: Model<'_, T>,
    init: ChainState<T>,
    beta: T,
    settings: &McmcSettings,
) -> Result<Chain<T>> {
    let mut samples = Vec::new();
    let layout = mcmc_run_with(model, init, beta, settings, &mut |s| {
        samples.push(s.clone());
        Ok(())
    })?
    .0;
    Ok(Chain { layout, beta, samples })
}

/// Like [`mcmc_run`] but hands each recorded sample to `record` as it is
/// produced. Returns the layout and the final state.
pub fn mcmc_run_with<T: Real>(
    model: Model<'_, T>,
    init: ChainState<T>,
    beta: T,
    settings: &McmcSettings,
    record: &mut (dyn FnMut(&Sample<T>) -> Result<()> + Send),
) -> Result<(TraceLayout, ChainState<T>)> {
    let run = |record: &mut (dyn FnMut(&Sample<T>) -> Result<()> + Send)| {
        let mut sampler = Sampler::new(model, init, beta, settings)?;
        let layout = sampler.layout(settings.record_factors);
        let mut recorded = false;
        if settings.iterations == 0 {
            record(&sampler.snapshot(0, settings.record_factors))?;
            recorded = true;
        }
        for m in 1..=settings.iterations {
            sampler.step()?;
            if m > settings.burnin && (m - settings.burnin) % settings.thin == 0 {
                record(&sampler.snapshot(m as u64, settings.record_factors))?;
                recorded = true;
            }
            if m % 10_000 == 0 {
                log::info!("iteration {m} of {}", settings.iterations);
            }
        }
        if !recorded {
            record(&sampler.snapshot(settings.iterations as u64, settings.record_factors))?;
        }
        Ok((layout, sampler.into_state()))
    };
    with_pool(settings.workers, || run(record))
}

/// Runs `f` on a dedicated pool of `workers` threads, or inline for one.
pub(crate) fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    if workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(f)
    } else {
        f()
    }
}
