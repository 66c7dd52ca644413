//! End-to-end behavior of the training loop on small synthetic data.

use pipcdr_core::data::{gen_gaussian_mixture, MixtureSpec};
use pipcdr_core::numerics::Matrix;
use pipcdr_core::trainer::{
    loss_and_grads, train, FeatureSource, LossSettings, PositiveSampling, StepBatch,
};
use pipcdr_core::{Dataset, Error, Rng, TrainConfig, Trainer};

fn small_data() -> Dataset {
    gen_gaussian_mixture(&MixtureSpec::balanced(4, 20, 8, 10.0, 0.5), &mut Rng::new(3)).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        k: 4,
        epochs: 4,
        warmup_epochs: 2,
        batch_size: 16,
        backbone_hidden: vec![16],
        feature_dim: 8,
        projector_hidden: 16,
        projection_dim: 4,
        predictor_hidden: 8,
        kmeans_n_init: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = small_data();
    let a = train(&data, &small_config()).unwrap();
    let b = train(&data, &small_config()).unwrap();
    assert_eq!(a.history(), b.history());
    assert_eq!(a.state.stack, b.state.stack);
    assert_eq!(a.clusters.assign, b.clusters.assign);
}

#[test]
fn different_seeds_give_different_networks() {
    let data = small_data();
    let a = train(&data, &small_config()).unwrap();
    let cfg = TrainConfig {
        seed: 1,
        ..small_config()
    };
    let b = train(&data, &cfg).unwrap();
    assert_ne!(a.state.stack, b.state.stack);
}

#[test]
fn dispersion_term_waits_for_warmup() {
    let out = train(&small_data(), &small_config()).unwrap();
    let h = out.history();
    assert_eq!(h.len(), 4);
    assert!(h[..2].iter().all(|r| r.loss_cdr == 0.0));
    assert!(h[2..].iter().all(|r| r.loss_cdr != 0.0));
    assert_eq!(out.state.kmeans_runs, 2);
}

#[test]
fn refresh_count_follows_interval() {
    for (r, want) in [(1, 5), (2, 3), (4, 2), (8, 1)] {
        let cfg = TrainConfig {
            epochs: 7,
            kmeans_every: r,
            ..small_config()
        };
        let out = train(&small_data(), &cfg).unwrap();
        assert_eq!(out.state.kmeans_runs, want, "r = {r}");
    }
}

#[test]
fn target_is_ema_of_online_after_each_step() {
    let data = small_data();
    let cfg = small_config();
    let mut trainer = Trainer::new(&data, cfg.clone()).unwrap();
    let before = trainer.state().stack.target.flatten_params();
    let idx: Vec<usize> = (0..16).collect();
    trainer.second_m_step(&idx).unwrap();
    let online = trainer.state().stack.online.flatten_params();
    let after = trainer.state().stack.target.flatten_params();
    let m = cfg.momentum;
    for ((t0, o), t1) in before.iter().zip(&online).zip(&after) {
        assert!((m * t0 + (1.0 - m) * o - t1).abs() < 1e-15);
    }
    assert_eq!(trainer.state().step, 1);
}

#[test]
fn full_weight_on_proximity_ignores_labels() {
    let data = small_data();
    let cfg = small_config();
    let trainer = Trainer::new(&data, cfg.clone()).unwrap();
    let mut rng = Rng::new(9);
    let xa = Matrix::from_fn(10, 8, |_, _| rng.normal());
    let xb = Matrix::from_fn(10, 8, |_, _| rng.normal());
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let settings = LossSettings {
        w: 1.0,
        ..cfg.loss_settings()
    };
    let run = |labels: Option<&[usize]>| {
        let batch = StepBatch {
            xa: &xa,
            xb: &xb,
            labels,
            psa_noise: None,
        };
        loss_and_grads(&mut trainer.state().stack.clone(), &batch, &settings).unwrap()
    };
    let (gated, g_tape) = run(None);
    let (open, o_tape) = run(Some(&labels));
    assert_eq!(gated.total, open.total);
    assert_eq!(g_tape.flatten(), o_tape.flatten());
    assert!(open.cdr > 0.0);
}

#[test]
fn queue_fills_to_capacity() {
    let cfg = TrainConfig {
        queue_capacity: 50,
        ..small_config()
    };
    let out = train(&small_data(), &cfg).unwrap();
    assert_eq!(out.state.queue.len(), 50);
    assert!(out.history().iter().all(|r| r.nmi.is_finite()));
}

#[test]
fn alternative_settings_train_to_finite_metrics() {
    let variants = [
        TrainConfig {
            positive_sampling: PositiveSampling::Psa,
            sigma: 0.01,
            ..small_config()
        },
        TrainConfig {
            feature_source: FeatureSource::Encoder,
            ..small_config()
        },
        TrainConfig {
            batch_norm: true,
            ..small_config()
        },
        TrainConfig {
            use_predictor: false,
            weight_decay: 1e-4,
            sgd_momentum: 0.0,
            ..small_config()
        },
    ];
    for cfg in variants {
        let out = train(&small_data(), &cfg).unwrap();
        let last = out.history().last().unwrap();
        assert!(last.std_uniformity.is_finite() && last.loss_pip.is_finite(), "{cfg:?}");
        assert_eq!(out.clusters.assign.len(), 80);
    }
}

#[test]
fn fewer_points_than_clusters_is_rejected() {
    let data = small_data().subset(&[0, 1, 2]);
    assert!(matches!(
        Trainer::new(&data, small_config()),
        Err(Error::TooFewPoints { points: 3, k: 4 })
    ));
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = TrainConfig {
        k: 1,
        ..small_config()
    };
    assert!(matches!(Trainer::new(&small_data(), cfg), Err(Error::ConfigInvalid(_))));
}

#[test]
fn zero_epochs_still_clusters() {
    let cfg = TrainConfig {
        epochs: 0,
        ..small_config()
    };
    let out = train(&small_data(), &cfg).unwrap();
    assert!(out.history().is_empty());
    assert_eq!(out.clusters.assign.len(), 80);
}

#[test]
fn pseudo_labels_of_frozen_network_are_reproducible() {
    let data = small_data();
    let cfg = TrainConfig {
        warmup_epochs: 0,
        ..small_config()
    };
    let first = |_: ()| {
        let mut t = Trainer::new(&data, cfg.clone()).unwrap();
        t.first_m_step().unwrap();
        t.state().pseudo.clone().unwrap()
    };
    let a = first(());
    let b = first(());
    assert_eq!(a.assign, b.assign);
    assert_eq!(a.k(), 4);
}
