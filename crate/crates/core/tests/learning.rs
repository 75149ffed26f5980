use fedstas_core::compress::SketchConfig;
use fedstas_core::data::{synthesize_split, PartitionRecipe, Scheme};
use fedstas_core::engine::{run_experiment, DataBudget, ExperimentConfig, Strategy, StrategyKind};
use fedstas_core::model::{evaluate, local_train, ModelSpec, ParamVector, TrainConfig};
use fedstas_core::privacy::PrivacyConfig;
use fedstas_core::rng::{rng_stream, Domain};

fn train_centrally(spec: &ModelSpec, sep: f64, classes: usize, epochs: usize) -> f64 {
    let (train, test) = synthesize_split(classes, 16, 300, 300, sep, 21);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs,
        batch_size: 32,
    };
    let init = spec.init_params(&mut rng_stream(21, Domain::Init, 0, 0));
    let params = local_train(
        spec,
        &init,
        &train,
        &cfg,
        &mut rng_stream(21, Domain::LocalTrain, 0, 0),
    )
    .unwrap();
    evaluate(spec, &params, &test).unwrap().1
}

#[test]
fn inseparable_classes_stay_near_chance() {
    for spec in [ModelSpec::logistic(16, 4), ModelSpec::mlp(16, 8, 4)] {
        let acc = train_centrally(&spec, 0.0, 4, 5);
        assert!(acc <= 0.25 + 0.05, "{:?}: {acc}", spec.kind);
    }
}

#[test]
fn well_separated_classes_are_learned() {
    let acc = train_centrally(&ModelSpec::logistic(16, 2), 10.0, 2, 5);
    assert!(acc >= 0.99, "logistic: {acc}");
    let acc = train_centrally(&ModelSpec::mlp(16, 8, 2), 10.0, 2, 5);
    assert!(acc >= 0.99, "mlp: {acc}");
}

fn small_config(scheme: Scheme, model: ModelSpec) -> ExperimentConfig {
    ExperimentConfig {
        num_clients: 20,
        clients_per_round: 5,
        num_strata: 3,
        rounds: 100,
        data_budget: DataBudget::Ratio(0.3),
        train: TrainConfig {
            learning_rate: 0.05,
            epochs: 1,
            batch_size: 16,
        },
        sketch: SketchConfig {
            sketch_dim: 64,
            ..SketchConfig::default()
        },
        privacy: Some(PrivacyConfig::from_epsilon(3.0, 100).unwrap()),
        partition: PartitionRecipe {
            scheme,
            num_clients: 20,
            alpha_dir: 0.5,
            seed: 5,
        },
        model,
        master_seed: 5,
        stratify_max_iter: 100,
    }
}

#[test]
fn every_strategy_improves_on_its_first_round() {
    let (train, test) = synthesize_split(4, 8, 100, 50, 2.0, 5);
    let cfg = small_config(Scheme::Iid, ModelSpec::logistic(8, 4));
    for kind in [
        StrategyKind::Uniform,
        StrategyKind::Fedsts,
        StrategyKind::Fedstas,
        StrategyKind::FedstasDp,
    ] {
        let recs = run_experiment(&cfg, Strategy::new(kind), &train, &test).unwrap();
        assert_eq!(recs.len(), 100);
        let (first, last) = (&recs[0], &recs[99]);
        assert!(
            last.test_accuracy > first.test_accuracy,
            "{}: {} -> {}",
            kind.name(),
            first.test_accuracy,
            last.test_accuracy
        );
        assert!(recs.windows(2).all(|w| w[1].round == w[0].round + 1));
    }
}

#[test]
fn mlp_federation_learns_under_label_skew() {
    let (train, test) = synthesize_split(4, 8, 100, 50, 3.0, 6);
    let mut cfg = small_config(Scheme::Dirichlet, ModelSpec::mlp(8, 16, 4));
    cfg.rounds = 60;
    let recs = run_experiment(&cfg, Strategy::new(StrategyKind::Fedstas), &train, &test).unwrap();
    assert!(
        recs.last().unwrap().test_accuracy >= 0.75,
        "{}",
        recs.last().unwrap().test_accuracy
    );
}

#[test]
fn logistic_runs_start_from_zero_parameters() {
    let spec = ModelSpec::logistic(8, 4);
    let init = spec.init_params(&mut rng_stream(1, Domain::Init, 0, 0));
    assert_eq!(init, ParamVector::zeros(spec.param_count()));
}
