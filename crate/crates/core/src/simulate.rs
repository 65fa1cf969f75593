//! Synthetic datasets drawn from the generative model.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal};

use crate::diffusion::sample_tree_prior;
use crate::error::{Error, Result};
use crate::rng::{ChainRng, SeedSequence, Stream};
use crate::samplers::Hyperparameters;
use crate::traits::{ColumnKind, Cutpoints, TraitMatrix};
use crate::tree::{parse_newick, scale_to_unit_depth, tree_covariance, Phylogeny};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeSource {
    /// Pure-birth tree with unit rate, scaled to unit depth.
    Yule,
    Newick(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_taxa: usize,
    pub n_traits: usize,
    pub k: usize,
    pub kinds: Vec<ColumnKind>,
    pub missing_fraction: f64,
    pub tree: TreeSource,
    pub seed: u64,
    pub hyper: Hyperparameters<f64>,
    /// Fixed loadings instead of prior draws; structural zeros must hold.
    pub loadings: Option<DMatrix<f64>>,
    /// Fixed residual precision for every continuous column.
    pub residual_precision: Option<f64>,
    /// Apply a random affine map to each continuous column.
    pub rescale: bool,
}

impl SyntheticSpec {
    pub fn continuous(n_taxa: usize, n_traits: usize, k: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_taxa,
            n_traits,
            k,
            kinds: vec![ColumnKind::Continuous; n_traits],
            missing_fraction: 0.0,
            tree: TreeSource::Yule,
            seed,
            hyper: Hyperparameters::default(),
            loadings: None,
            residual_precision: None,
            rescale: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_taxa == 0 || self.n_traits == 0 {
            return bad("need at least one taxon and one trait".into());
        }
        if self.k == 0 || self.k > self.n_taxa.min(self.n_traits) {
            return bad(format!("K = {} must lie in 1..=min(N, P)", self.k));
        }
        if self.kinds.len() != self.n_traits {
            return bad(format!("{} column types for {} traits", self.kinds.len(), self.n_traits));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad(format!("missing fraction {} outside [0, 1)", self.missing_fraction));
        }
        if let Some(l) = &self.loadings {
            if l.shape() != (self.k, self.n_traits) {
                return bad(format!("loadings are {:?}, expected {:?}", l.shape(), (self.k, self.n_traits)));
            }
            if (0..self.k).any(|r| (0..r.min(self.n_traits)).any(|j| l[(r, j)] != 0.0)) {
                return bad("loadings below the diagonal must be zero".into());
            }
        }
        if let Some(v) = self.residual_precision {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("residual precision {v} must be positive"));
            }
        }
        self.hyper.validate()
    }
}

/// Every latent quantity behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub precision: DVector<f64>,
    pub z: DMatrix<f64>,
    pub cutpoints: Cutpoints<f64>,
    /// `(shift, scale)` with `Y = shift + scale · Z` on continuous columns.
    pub affine: Vec<Option<(f64, f64)>>,
}

impl Truth {
    /// Long format: `quantity,row,column,value`, indices 1-based.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["quantity", "row", "column", "value"])?;
        let mut matrix = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_record([name.to_string(), (i + 1).to_string(), (j + 1).to_string(), format!("{}", m[(i, j)])])?;
                }
            }
            Ok(())
        };
        matrix("F", &self.factors)?;
        matrix("L", &self.loadings)?;
        matrix("Z", &self.z)?;
        for (j, v) in self.precision.iter().enumerate() {
            w.write_record(["Lambda".into(), "1".into(), (j + 1).to_string(), format!("{v}")])?;
        }
        for j in 0..self.precision.len() {
            for (c, g) in self.cutpoints.interior(j).iter().enumerate() {
                w.write_record(["gamma".into(), (j + 1).to_string(), (c + 2).to_string(), format!("{g}")])?;
            }
            if let Some((a, s)) = self.affine[j] {
                w.write_record(["shift".into(), "1".into(), (j + 1).to_string(), format!("{a}")])?;
                w.write_record(["scale".into(), "1".into(), (j + 1).to_string(), format!("{s}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub tree: Phylogeny<f64>,
    pub traits: TraitMatrix<f64>,
    pub truth: Truth,
}

struct Lineage {
    children: Option<(usize, usize)>,
    length: f64,
}

fn write_node(nodes: &[Lineage], id: usize, next_label: &mut usize, out: &mut String) {
    match nodes[id].children {
        None => {
            *next_label += 1;
            out.push_str(&format!("t{next_label}"));
        }
        Some((a, b)) => {
            out.push('(');
            write_node(nodes, a, next_label, out);
            out.push(',');
            write_node(nodes, b, next_label, out);
            out.push(')');
        }
    }
    if id != 0 {
        out.push_str(&format!(":{}", nodes[id].length));
    }
}

/// Pure-birth tree on `n >= 2` tips, unit birth rate, scaled to unit depth;
/// tips are labelled `t1..tn` left to right.
pub fn yule_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Phylogeny<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("a birth-process tree needs 2 or more tips, got {n}")));
    }
    let mut nodes = vec![
        Lineage { children: Some((1, 2)), length: 0.0 },
        Lineage { children: None, length: 0.0 },
        Lineage { children: None, length: 0.0 },
    ];
    let mut active = vec![1, 2];
    loop {
        let wait = Exp::new(active.len() as f64).expect("positive rate").sample(rng);
        for &a in &active {
            nodes[a].length += wait;
        }
        if active.len() == n {
            break;
        }
        let pick = rng.random_range(0..active.len());
        let parent = active[pick];
        let (a, b) = (nodes.len(), nodes.len() + 1);
        nodes.push(Lineage { children: None, length: 0.0 });
        nodes.push(Lineage { children: None, length: 0.0 });
        nodes[parent].children = Some((a, b));
        active.swap_remove(pick);
        active.push(a);
        active.push(b);
    }
    let mut text = String::new();
    let mut label = 0;
    write_node(&nodes, 0, &mut label, &mut text);
    text.push(';');
    scale_to_unit_depth(&parse_newick(&text)?)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng: ChainRng = SeedSequence::new(spec.seed).rng(Stream::Simulation);
    let tree = match &spec.tree {
        TreeSource::Yule => yule_tree(spec.n_taxa, &mut rng)?,
        TreeSource::Newick(text) => {
            let t = parse_newick::<f64>(text)?;
            let t = if t.max_depth() > 0.0 { scale_to_unit_depth(&t)? } else { t };
            if t.n_tips() != spec.n_taxa {
                return Err(Error::Dimension(format!(
                    "supplied tree has {} tips, spec asks for {}",
                    t.n_tips(),
                    spec.n_taxa
                )));
            }
            t
        }
    };
    let (n, p, k) = (spec.n_taxa, spec.n_traits, spec.k);
    let hyper = &spec.hyper;
    let cov = tree_covariance(&tree, hyper.kappa0)?;
    let factors = sample_tree_prior(&cov, k, &mut rng)?;
    let loadings = match &spec.loadings {
        Some(l) => l.clone(),
        None => {
            let prior = Normal::new(hyper.loadings_mean, hyper.loadings_precision.sqrt().recip())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            DMatrix::from_fn(k, p, |r, j| if r <= j { prior.sample(&mut rng) } else { 0.0 })
        }
    };
    let gamma = Gamma::new(hyper.alpha_lambda, 1.0 / hyper.beta_lambda)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let precision = DVector::from_fn(p, |j, _| match spec.kinds[j] {
        ColumnKind::Continuous => spec
            .residual_precision
            .unwrap_or_else(|| gamma.sample(&mut rng).max(f64::MIN_POSITIVE)),
        _ => 1.0,
    });
    let mut z = &factors * &loadings;
    for j in 0..p {
        let sd = precision[j].sqrt().recip();
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            z[(i, j)] += sd * e;
        }
    }
    let mut cutpoints = Cutpoints::initial(&spec.kinds);
    let spacing = Exp::new(hyper.cutpoint_rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for j in 0..p {
        let mut g = 0.0;
        for c in 0..cutpoints.interior(j).len() {
            g += spacing.sample(&mut rng);
            cutpoints.set_interior(j, c, g);
        }
    }
    let affine: Vec<Option<(f64, f64)>> = spec
        .kinds
        .iter()
        .map(|k| match k {
            ColumnKind::Continuous if spec.rescale => {
                let shift: f64 = 10.0 * rng.sample::<f64, _>(StandardNormal);
                let scale = rng.sample::<f64, _>(StandardNormal).exp();
                Some((shift, scale))
            }
            ColumnKind::Continuous => Some((0.0, 1.0)),
            _ => None,
        })
        .collect();
    let mut values = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            let missing = spec.missing_fraction > 0.0 && rng.random::<f64>() < spec.missing_fraction;
            let v = match affine[j] {
                Some((a, s)) => a + s * z[(i, j)],
                None => {
                    let cuts = cutpoints.column(j);
                    (1 + cuts.iter().filter(|&&g| z[(i, j)] > g).count()) as f64
                }
            };
            values.push((!missing).then_some(v));
        }
    }
    let taxa = tree.taxa().into_iter().map(String::from).collect();
    let names = (1..=p).map(|j| format!("y{j}")).collect();
    let traits = TraitMatrix::new(taxa, names, spec.kinds.clone(), values)?;
    Ok(SyntheticData {
        tree,
        traits,
        truth: Truth { factors, loadings, precision, z, cutpoints, affine },
    })
}
