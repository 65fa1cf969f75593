use phylofactor::rng::{SeedSequence, Stream};
use phylofactor::samplers::{mcmc_run, KernelWeights, McmcSettings, Sampler};
use phylofactor::simulate::{generate, SyntheticData, SyntheticSpec};
use phylofactor::trace::write_trace;
use phylofactor::traits::{constraint_indicator, standardize, ColumnKind};
use phylofactor::tree::tree_covariance;
use phylofactor::{ChainState, Model, TreeCovariance};

fn mixed_data(seed: u64) -> (SyntheticData, TreeCovariance) {
    let mut spec = SyntheticSpec::continuous(12, 5, 2, seed);
    spec.kinds = vec![
        ColumnKind::Continuous,
        ColumnKind::Binary,
        ColumnKind::Ordinal(4),
        ColumnKind::Continuous,
        ColumnKind::Binary,
    ];
    spec.missing_fraction = 0.15;
    let data = generate(&spec).unwrap();
    let cov = tree_covariance(&data.tree, 1.0).unwrap();
    (data, cov)
}

fn init(model: &Model<'_>, data: &SyntheticData, seed: u64) -> ChainState {
    let latent = standardize(&data.traits).unwrap();
    model.initial_state(latent, &mut SeedSequence::new(seed).rng(Stream::Init))
}

#[test]
fn constraints_hold_after_every_step_at_temperature_one() {
    let (data, cov) = mixed_data(21);
    let model = Model::new(&cov, &data.traits, Default::default(), 2).unwrap();
    let start = init(&model, &data, 1);
    let mut sampler = Sampler::new(model, start, 1.0, &McmcSettings::default()).unwrap();
    let kinds = data.traits.kinds().to_vec();
    for _ in 0..3_000 {
        sampler.step().unwrap();
        let s = sampler.state();
        assert!(constraint_indicator(&s.latent, &data.traits));
        assert_eq!(s.factors.l[(1, 0)], 0.0, "structural zero moved");
        for (j, kind) in kinds.iter().enumerate() {
            if kind.is_discrete() {
                assert_eq!(s.factors.lambda[j], 1.0);
            }
            let cuts = s.latent.cutpoints.column(j);
            assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        }
    }
    assert!(sampler.cutpoint_acceptance().is_some());
}

#[test]
fn zero_iterations_record_the_initial_state() {
    let (data, cov) = mixed_data(22);
    let model = Model::new(&cov, &data.traits, Default::default(), 2).unwrap();
    let start = init(&model, &data, 2);
    let settings = McmcSettings { iterations: 0, burnin: 0, ..McmcSettings::default() };
    let chain = mcmc_run(model, start.clone(), 1.0, &settings).unwrap();
    assert_eq!(chain.len(), 1);
    assert_eq!(chain.samples[0].iteration, 0);
    assert_eq!(chain.samples[0].loadings, start.factors.l);
    assert_eq!(chain.samples[0].precision, start.factors.lambda);
}

#[test]
fn recording_follows_burnin_and_thinning() {
    let (data, cov) = mixed_data(23);
    let model = Model::new(&cov, &data.traits, Default::default(), 2).unwrap();
    let settings = McmcSettings { iterations: 100, burnin: 40, thin: 20, ..McmcSettings::default() };
    let chain = mcmc_run(model, init(&model, &data, 3), 1.0, &settings).unwrap();
    let its: Vec<u64> = chain.samples.iter().map(|s| s.iteration).collect();
    assert_eq!(its, vec![60, 80, 100]);
}

#[test]
fn same_seed_gives_identical_traces() {
    let (data, cov) = mixed_data(24);
    let model = Model::new(&cov, &data.traits, Default::default(), 2).unwrap();
    let settings = McmcSettings { iterations: 500, burnin: 100, thin: 5, seed: 77, ..McmcSettings::default() };
    let trace = |workers: usize| {
        let s = McmcSettings { workers, ..settings.clone() };
        let chain = mcmc_run(model, init(&model, &data, 4), 1.0, &s).unwrap();
        let mut bytes = Vec::new();
        write_trace(&chain, &mut bytes).unwrap();
        bytes
    };
    let a = trace(1);
    assert_eq!(a, trace(1));
    assert_eq!(a, trace(2));
    let other = McmcSettings { seed: 78, ..settings.clone() };
    let chain = mcmc_run(model, init(&model, &data, 4), 1.0, &other).unwrap();
    let mut b = Vec::new();
    write_trace(&chain, &mut b).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_weight_kernels_never_run() {
    let (data, cov) = mixed_data(25);
    let model = Model::new(&cov, &data.traits, Default::default(), 2).unwrap();
    let start = init(&model, &data, 5);
    let weights = KernelWeights { precisions: 0.0, cutpoints: 0.0, ..KernelWeights::default() };
    let settings = McmcSettings { iterations: 300, burnin: 0, thin: 300, weights, ..McmcSettings::default() };
    let chain = mcmc_run(model, start.clone(), 1.0, &settings).unwrap();
    let last = chain.samples.last().unwrap();
    assert_eq!(last.precision, start.factors.lambda);
    assert_eq!(last.cutpoints, start.latent.cutpoints.flatten_interior());
    assert_ne!(last.loadings, start.factors.l);
}

#[test]
fn invalid_models_and_settings_are_rejected() {
    let (data, cov) = mixed_data(26);
    assert!(Model::new(&cov, &data.traits, Default::default(), 0).is_err());
    assert!(Model::new(&cov, &data.traits, Default::default(), 6).is_err());
    let model = Model::new(&cov, &data.traits, Default::default(), 2).unwrap();
    let start = init(&model, &data, 6);
    let bad = McmcSettings { thin: 0, ..McmcSettings::default() };
    assert!(mcmc_run(model, start.clone(), 1.0, &bad).is_err());
    let none = McmcSettings {
        weights: KernelWeights { loadings: 0.0, precisions: 0.0, factor_rows: 0.0, latent_cells: 0.0, cutpoints: 0.0 },
        ..McmcSettings::default()
    };
    assert!(mcmc_run(model, start.clone(), 1.0, &none).is_err());
    assert!(mcmc_run(model, start, 1.5, &McmcSettings::default()).is_err());
}
