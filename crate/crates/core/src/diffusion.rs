//! Brownian diffusion on a fixed tree: the matrix-normal density of tip
//! values, two-pass Gaussian message passing for tip and ancestral
//! conditionals, draws from the tree prior, and the conjugate Wishart update
//! of the multivariate (LMBD) baseline.
//!
//! Factor columns are a priori independent, so every K-dimensional
//! conditional here is computed as K scalar message passes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det, std_normal};
use crate::scalar::{infinity, lit, to_f64, Real};
use crate::tree::{NodeId, Phylogeny, TreeCovariance};

/// Per-factor Gaussian information about one node value, in moment form.
/// `var == 0` is an exact observation and `var == ∞` carries no information.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Message<T> {
    mean: T,
    var: T,
}

impl<T: Real> Message<T> {
    fn flat() -> Self {
        Message { mean: T::zero(), var: infinity() }
    }

    fn exact(x: T) -> Self {
        Message { mean: x, var: T::zero() }
    }

    fn is_flat(&self) -> bool {
        self.var == infinity()
    }

    /// Moves the message across a branch of length `len`.
    fn along(self, len: T) -> Self {
        if self.is_flat() {
            self
        } else {
            Message { mean: self.mean, var: self.var + len }
        }
    }

    fn combine(self, other: Self) -> Self {
        if self.is_flat() {
            return other;
        }
        if other.is_flat() {
            return self;
        }
        let zero = T::zero();
        match (self.var == zero, other.var == zero) {
            (true, true) => Message {
                mean: (self.mean + other.mean) * lit(0.5),
                var: zero,
            },
            (true, false) => self,
            (false, true) => other,
            (false, false) => {
                let (pa, pb) = (self.var.recip(), other.var.recip());
                let precision = pa + pb;
                Message {
                    mean: (self.mean * pa + other.mean * pb) / precision,
                    var: precision.recip(),
                }
            }
        }
    }
}

/// Prior conditional of one tip's factor row given every other tip.
#[derive(Debug, Clone, PartialEq)]
pub struct TipConditional<T: Real> {
    pub mean: DVector<T>,
    /// Diagonal precision, one entry per factor; `∞` marks a value pinned by
    /// zero-length branches.
    pub precision: DVector<T>,
}

impl<T: Real> TipConditional<T> {
    pub fn variance(&self) -> DVector<T> {
        self.precision.map(|p| p.recip())
    }
}

/// Reusable buffers for repeated conditionals on the same tree.
#[derive(Debug, Clone)]
pub struct TreeMessenger<'a, T: Real> {
    tree: &'a Phylogeny<T>,
    kappa0: T,
    up: Vec<Message<T>>,
}

impl<'a, T: Real> TreeMessenger<'a, T> {
    pub fn new(cov: &'a TreeCovariance<T>) -> Self {
        Self::from_tree(cov.tree(), cov.kappa0)
    }

    pub fn from_tree(tree: &'a Phylogeny<T>, kappa0: T) -> Self {
        TreeMessenger {
            tree,
            kappa0,
            up: vec![Message::flat(); tree.n_nodes()],
        }
    }

    /// Post-order pass: `up[u]` summarizes the observed tips below `u`.
    fn upward(&mut self, values: &DMatrix<T>, factor: usize, skip: Option<usize>) {
        let tree = self.tree;
        for id in 0..tree.n_nodes() {
            self.up[id] = if tree.is_tip(id) {
                if Some(id) == skip {
                    Message::flat()
                } else {
                    Message::exact(values[(id, factor)])
                }
            } else {
                let kids = &tree.node(id).children;
                let (a, b) = (kids[0], kids[1]);
                self.up[a]
                    .along(tree.branch_length(a))
                    .combine(self.up[b].along(tree.branch_length(b)))
            };
        }
    }

    /// Pre-order pass down the root path: information about `target` from
    /// everything outside its subtree, root pseudo-observation included.
    fn outside(&self, target: NodeId) -> Message<T> {
        let tree = self.tree;
        let mut msg = Message {
            mean: T::zero(),
            var: self.kappa0.recip(),
        };
        let path = tree.path_from_root(target);
        for pair in path.windows(2) {
            let child = pair[1];
            if let Some(s) = tree.sibling(child) {
                msg = msg.combine(self.up[s].along(tree.branch_length(s)));
            }
            msg = msg.along(tree.branch_length(child));
        }
        msg
    }

    pub fn tip_conditional(&mut self, values: &DMatrix<T>, tip: usize) -> Result<TipConditional<T>> {
        let tree = self.tree;
        if tip >= tree.n_tips() {
            return Err(Error::IndexOutOfRange(format!(
                "tip {tip} of a {}-tip tree",
                tree.n_tips()
            )));
        }
        check_rows(values, tree.n_tips())?;
        let k = values.ncols();
        let mut mean = DVector::zeros(k);
        let mut precision = DVector::zeros(k);
        for factor in 0..k {
            self.upward(values, factor, Some(tip));
            let msg = self.outside(tip);
            mean[factor] = msg.mean;
            precision[factor] = msg.var.recip();
        }
        Ok(TipConditional { mean, precision })
    }

    /// Mean and variance of an internal node's value given all tips.
    pub fn node_conditional(
        &mut self,
        values: &DMatrix<T>,
        node: NodeId,
    ) -> Result<(DVector<T>, DVector<T>)> {
        let tree = self.tree;
        if node >= tree.n_nodes() {
            return Err(Error::IndexOutOfRange(format!("node {node}")));
        }
        if tree.is_tip(node) {
            return Err(Error::InvalidArgument(format!(
                "node {node} is a tip; ancestral reconstruction needs an internal node"
            )));
        }
        check_rows(values, tree.n_tips())?;
        let k = values.ncols();
        let mut mean = DVector::zeros(k);
        let mut var = DVector::zeros(k);
        for factor in 0..k {
            self.upward(values, factor, None);
            let msg = self.outside(node).combine(self.up[node]);
            mean[factor] = msg.mean;
            var[factor] = msg.var;
        }
        Ok((mean, var))
    }
}

fn check_rows<T: Real>(values: &DMatrix<T>, n: usize) -> Result<()> {
    if values.nrows() != n {
        return Err(Error::Dimension(format!(
            "factor matrix has {} rows for {n} tips",
            values.nrows()
        )));
    }
    Ok(())
}

/// Conditional prior of tip `tip`'s factor row given the other rows of
/// `factors` (row `tip` itself is ignored). O(NK).
pub fn conditional_tip<T: Real>(
    factors: &DMatrix<T>,
    tip: usize,
    cov: &TreeCovariance<T>,
) -> Result<TipConditional<T>> {
    TreeMessenger::new(cov).tip_conditional(factors, tip)
}

/// Conditional mean and variance of internal node `node` given all tips.
pub fn ancestral_conditional<T: Real>(
    factors: &DMatrix<T>,
    node: NodeId,
    cov: &TreeCovariance<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    TreeMessenger::new(cov).node_conditional(factors, node)
}

/// Log density of `x ~ MN(1·mu0ᵀ, rowcov, colcov)` with the column covariance
/// supplied as its inverse.
pub fn matrix_normal_logdensity<T: Real>(
    x: &DMatrix<T>,
    mu0: &DVector<T>,
    rowcov: &DMatrix<T>,
    colcov_inv: &DMatrix<T>,
) -> Result<T> {
    let (n, p) = x.shape();
    if mu0.len() != p || rowcov.shape() != (n, n) || colcov_inv.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "x {n}x{p}, mu0 {}, rowcov {:?}, colcov_inv {:?}",
            mu0.len(),
            rowcov.shape(),
            colcov_inv.shape()
        )));
    }
    let row_chol = cholesky(rowcov, "row covariance")?;
    let col_chol = cholesky(colcov_inv, "column precision")?;
    let mut resid = x.clone();
    for mut row in resid.row_iter_mut() {
        row -= mu0.transpose();
    }
    let whitened = row_chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&resid)
        .ok_or_else(|| Error::Numerical("singular row covariance factor".into()))?;
    let gram = whitened.transpose() * whitened;
    let quad = colcov_inv.component_mul(&gram).sum();
    let (nf, pf) = (lit::<T>(n as f64), lit::<T>(p as f64));
    let log_2pi = (T::two_pi()).ln();
    Ok(-(nf * pf) * log_2pi * lit(0.5) + nf * lit(0.5) * log_det(&col_chol)
        - pf * lit(0.5) * log_det(&row_chol)
        - quad * lit(0.5))
}

/// Draws `F ~ MN(0, psi + J/kappa0, I_K)`.
pub fn sample_tree_prior<T: Real, R: Rng + ?Sized>(
    cov: &TreeCovariance<T>,
    k: usize,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let n = cov.n_tips();
    let chol = cholesky(&cov.full(), "tree covariance")?;
    let noise = DMatrix::from_fn(n, k, |_, _| std_normal::<T, R>(rng));
    Ok(chol.l() * noise)
}

/// Wishart law with density ∝ |W|^((ν−P−1)/2) exp(−½ tr(S⁻¹ W)).
#[derive(Debug, Clone, PartialEq)]
pub struct Wishart<T: Real> {
    pub dof: T,
    pub scale: DMatrix<T>,
}

impl<T: Real> Wishart<T> {
    pub fn new(dof: T, scale: DMatrix<T>) -> Result<Self> {
        let p = scale.nrows();
        if scale.ncols() != p {
            return Err(Error::Dimension("Wishart scale must be square".into()));
        }
        if dof < lit(p as f64) {
            return Err(Error::InvalidArgument(format!(
                "Wishart degrees of freedom {dof} below dimension {p}"
            )));
        }
        cholesky(&scale, "Wishart scale")?;
        Ok(Wishart { dof, scale })
    }

    pub fn mean(&self) -> DMatrix<T> {
        &self.scale * self.dof
    }

    /// Bartlett decomposition.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<T>> {
        let p = self.scale.nrows();
        let chol = cholesky(&self.scale, "Wishart scale")?;
        let mut bartlett = DMatrix::<T>::zeros(p, p);
        for i in 0..p {
            let chi = ChiSquared::new(to_f64(self.dof) - i as f64)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            bartlett[(i, i)] = lit::<T>(chi.sample(rng)).sqrt();
            for j in 0..i {
                bartlett[(i, j)] = std_normal(rng);
            }
        }
        let factor = chol.l() * bartlett;
        Ok(&factor * factor.transpose())
    }
}

/// Sampled across-trait precision of the LMBD baseline and its prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix<T: Real> {
    pub sigma_inv: DMatrix<T>,
    pub prior: Wishart<T>,
}

/// Full conditional of Σ⁻¹ given traits `z` under `Z ~ MN(1μ₀ᵀ, psi + J/κ₀, Σ)`.
/// A matrix with zero rows leaves the prior unchanged.
pub fn precision_matrix_posterior<T: Real>(
    z: &DMatrix<T>,
    cov: &TreeCovariance<T>,
    prior: &Wishart<T>,
) -> Result<Wishart<T>> {
    let (n, p) = z.shape();
    if prior.scale.nrows() != p {
        return Err(Error::Dimension(format!(
            "{p} traits but a {}x{} prior scale",
            prior.scale.nrows(),
            prior.scale.ncols()
        )));
    }
    if n == 0 {
        return Ok(prior.clone());
    }
    if n != cov.n_tips() {
        return Err(Error::Dimension(format!("{n} rows for {} tips", cov.n_tips())));
    }
    let mu0 = cov.root_mean(p);
    let mut resid = z.clone();
    for mut row in resid.row_iter_mut() {
        row -= mu0.transpose();
    }
    let row_chol = cholesky(&cov.full(), "tree covariance")?;
    let scatter = resid.transpose() * row_chol.solve(&resid);
    let prior_inv = cholesky(&prior.scale, "Wishart scale")?.inverse();
    let post_inv = prior_inv + scatter;
    let scale = cholesky(&post_inv, "posterior Wishart rate")?.inverse();
    // Symmetrize away round-off so the next Cholesky sees an exact symmetric matrix.
    let scale = (&scale + scale.transpose()) * lit::<T>(0.5);
    Wishart::new(prior.dof + lit(n as f64), scale)
}

pub fn gibbs_precision_matrix<T: Real, R: Rng + ?Sized>(
    z: &DMatrix<T>,
    cov: &TreeCovariance<T>,
    prior: &Wishart<T>,
    rng: &mut R,
) -> Result<PrecisionMatrix<T>> {
    let posterior = precision_matrix_posterior(z, cov, prior)?;
    Ok(PrecisionMatrix {
        sigma_inv: posterior.sample(rng)?,
        prior: prior.clone(),
    })
}
