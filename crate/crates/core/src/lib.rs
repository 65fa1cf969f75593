//! Bayesian phylogenetic factor analysis: latent factors evolving by Brownian
//! diffusion on a fixed tree, mixed continuous and discrete traits through
//! latent liabilities, tempered Gibbs kernels, path-sampling marginal
//! likelihoods for choosing the number of factors, and posterior summaries.

pub mod diffusion;
pub mod error;
pub mod identify;
pub mod linalg;
pub mod pathsampling;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod simulate;
pub mod traits;
pub mod trace;
pub mod tree;

pub use error::{Error, Result};

pub type Phylogeny = tree::Phylogeny<f64>;
pub type TreeCovariance = tree::TreeCovariance<f64>;
pub type TraitMatrix = traits::TraitMatrix<f64>;
pub type LatentState = traits::LatentState<f64>;
pub type ChainState = samplers::ChainState<f64>;
pub type Hyperparameters = samplers::Hyperparameters<f64>;
pub type Model<'a> = samplers::Model<'a, f64>;
pub type Chain = identify::Chain<f64>;
