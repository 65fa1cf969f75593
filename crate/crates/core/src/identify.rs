//! Recorded chains, sign relabeling and posterior summaries.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Real};
use crate::traits::ColumnKind;

/// Which quantities a recorded sample carries, and their names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLayout {
    pub n_taxa: usize,
    pub n_traits: usize,
    pub k: usize,
    /// `(column, c)` for every interior cut-point `γ_c`, both 1-based.
    pub cut_labels: Vec<(usize, usize)>,
    pub factors: bool,
}

impl TraceLayout {
    pub fn new(n_taxa: usize, n_traits: usize, k: usize, kinds: &[ColumnKind], factors: bool) -> Self {
        let cut_labels = kinds
            .iter()
            .enumerate()
            .flat_map(|(j, kind)| {
                let m = kind.levels().unwrap_or(0);
                (2..m).map(move |c| (j + 1, c))
            })
            .collect();
        TraceLayout { n_taxa, n_traits, k, cut_labels, factors }
    }

    /// Free loadings `(k, j)`, 0-based, row-major.
    pub fn loading_entries(&self) -> Vec<(usize, usize)> {
        (0..self.k)
            .flat_map(|r| (r..self.n_traits).map(move |j| (r, j)))
            .collect()
    }

    /// Names of the summarized parameters: free loadings, precisions,
    /// interior cut-points.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .loading_entries()
            .into_iter()
            .map(|(r, j)| format!("L[{},{}]", r + 1, j + 1))
            .collect();
        names.extend((1..=self.n_traits).map(|j| format!("Lambda[{j}]")));
        names.extend(self.cut_labels.iter().map(|(j, c)| format!("gamma[{j},{c}]")));
        names
    }

    pub fn factor_names(&self) -> Vec<String> {
        if !self.factors {
            return Vec::new();
        }
        (1..=self.n_taxa)
            .flat_map(|i| (1..=self.k).map(move |c| format!("F[{i},{c}]")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub iteration: u64,
    pub loadings: DMatrix<T>,
    pub precision: DVector<T>,
    pub cutpoints: Vec<T>,
    pub factors: Option<DMatrix<T>>,
}

impl<T: Real> Sample<T> {
    /// Values in [`TraceLayout::parameter_names`] order.
    pub fn parameters(&self, layout: &TraceLayout) -> Vec<f64> {
        let mut v: Vec<f64> = layout
            .loading_entries()
            .into_iter()
            .map(|(r, j)| to_f64(self.loadings[(r, j)]))
            .collect();
        v.extend(self.precision.iter().map(|&x| to_f64(x)));
        v.extend(self.cutpoints.iter().map(|&x| to_f64(x)));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain<T: Real> {
    pub layout: TraceLayout,
    pub beta: T,
    pub samples: Vec<Sample<T>>,
}

impl<T: Real> Chain<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One series per summarized parameter.
    pub fn series(&self) -> Vec<Vec<f64>> {
        let n = self.layout.parameter_names().len();
        let mut out = vec![Vec::with_capacity(self.len()); n];
        for s in &self.samples {
            for (p, v) in s.parameters(&self.layout).into_iter().enumerate() {
                out[p].push(v);
            }
        }
        out
    }
}

fn positive<T: Real>(x: T) -> bool {
    x >= T::zero()
}

fn sign_changes<T: Real>(chain: &Chain<T>, r: usize, j: usize) -> usize {
    chain
        .samples
        .windows(2)
        .filter(|w| positive(w[0].loadings[(r, j)]) != positive(w[1].loadings[(r, j)]))
        .count()
}

fn anchor<T: Real>(chain: &Chain<T>, r: usize) -> usize {
    let p = chain.layout.n_traits;
    (r..p).min_by_key(|&j| (sign_changes(chain, r, j), j)).unwrap_or(r)
}

fn flip_row<T: Real>(chain: &mut Chain<T>, r: usize, j: usize) {
    for s in &mut chain.samples {
        if !positive(s.loadings[(r, j)]) {
            let mut row = s.loadings.row_mut(r);
            row.neg_mut();
            if let Some(f) = s.factors.as_mut() {
                f.column_mut(r).neg_mut();
            }
        }
    }
}

/// Sign-relabels every factor by its anchor column (fewest sign changes,
/// lowest index on ties) and returns the anchors, 0-based.
///
/// The pass is repeated until the anchor is nonnegative in every sample, so
/// relabeling a relabeled chain changes nothing.
pub fn relabel_with_anchors<T: Real>(chain: &Chain<T>) -> (Chain<T>, Vec<usize>) {
    let mut out = chain.clone();
    let mut anchors = Vec::with_capacity(chain.layout.k);
    for r in 0..chain.layout.k.min(chain.layout.n_traits) {
        let mut j = anchor(&out, r);
        loop {
            flip_row(&mut out, r, j);
            let next = anchor(&out, r);
            if next == j {
                break;
            }
            j = next;
        }
        anchors.push(j);
    }
    (out, anchors)
}

pub fn relabel<T: Real>(chain: &Chain<T>) -> Chain<T> {
    relabel_with_anchors(chain).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub ess: f64,
    /// Set for a constant series, where the estimate is just its length.
    pub degenerate: bool,
}

/// Effective sample size with Geyer's initial monotone sequence. Values above
/// the series length are allowed for antithetic chains.
pub fn effective_sample_size(series: &[f64]) -> Result<EssEstimate> {
    let m = series.len();
    if m < 10 {
        return Err(Error::TooFewObservations(format!(
            "effective sample size needs at least 10 values, got {m}"
        )));
    }
    let mf = m as f64;
    let mean = series.iter().sum::<f64>() / mf;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let acov = |t: usize| -> f64 {
        centered[..m - t]
            .iter()
            .zip(&centered[t..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / mf
    };
    let v0 = acov(0);
    if !(v0 > 0.0) {
        return Ok(EssEstimate { ess: mf, degenerate: true });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < m {
        let pair = (acov(t) + acov(t + 1)) / v0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        t += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / mf.log10());
    Ok(EssEstimate { ess: mf / tau, degenerate: false })
}

/// Linear-interpolation percentile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Loadings: fraction of samples sharing the sign of the mean.
    pub sign_prob: Option<f64>,
    /// Precisions: posterior mass above 1.
    pub prob_above_one: Option<f64>,
    pub ess: Option<f64>,
}

fn sign_agreement(values: &[f64], mean: f64) -> f64 {
    let s = mean >= 0.0;
    values.iter().filter(|&&v| (v >= 0.0) == s).count() as f64 / values.len() as f64
}

pub fn summarize<T: Real>(chain: &Chain<T>) -> Result<Vec<SummaryRow>> {
    if chain.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty chain".into()));
    }
    let names = chain.layout.parameter_names();
    let n_loadings = chain.layout.loading_entries().len();
    let n_lambda = chain.layout.n_traits;
    let rows = chain
        .series()
        .into_iter()
        .zip(names)
        .enumerate()
        .map(|(p, (values, parameter))| {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let is_loading = p < n_loadings;
            let is_lambda = (n_loadings..n_loadings + n_lambda).contains(&p);
            SummaryRow {
                parameter,
                mean,
                lower: quantile(&sorted, 0.025),
                upper: quantile(&sorted, 0.975),
                sign_prob: is_loading.then(|| sign_agreement(&values, mean)),
                prob_above_one: is_lambda
                    .then(|| values.iter().filter(|&&v| v > 1.0).count() as f64 / values.len() as f64),
                ess: effective_sample_size(&values).ok().map(|e| e.ess),
            }
        })
        .collect();
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| crate::traits::MISSING.to_string(), |x| format!("{x}"))
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "mean", "lower_95", "upper_95", "sign_prob", "prob_above_one", "ess"])?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            format!("{}", r.mean),
            format!("{}", r.lower),
            format!("{}", r.upper),
            opt(r.sign_prob),
            opt(r.prob_above_one),
            opt(r.ess),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-loading plot data: position, posterior mean, sign probability and
/// magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingPoint {
    pub row: usize,
    pub column: usize,
    pub mean: f64,
    pub sign_prob: f64,
    pub magnitude: f64,
}

pub fn loadings_plot_data<T: Real>(chain: &Chain<T>) -> Result<Vec<LoadingPoint>> {
    let rows = summarize(chain)?;
    Ok(chain
        .layout
        .loading_entries()
        .into_iter()
        .zip(rows)
        .map(|((r, j), s)| LoadingPoint {
            row: r + 1,
            column: j + 1,
            mean: s.mean,
            sign_prob: s.sign_prob.unwrap_or(1.0),
            magnitude: s.mean.abs(),
        })
        .collect())
}

pub fn write_loadings_plot<W: Write>(points: &[LoadingPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "column", "mean", "sign_prob", "magnitude"])?;
    for p in points {
        w.write_record([
            p.row.to_string(),
            p.column.to_string(),
            format!("{}", p.mean),
            format!("{}", p.sign_prob),
            format!("{}", p.magnitude),
        ])?;
    }
    w.flush()?;
    Ok(())
}
