//! Synthetic generators, long-tail sampling, augmentations and CSV input.

use pipcdr_core::clustering::spherical_kmeans;
use pipcdr_core::data::{
    augment_batch, gen_gaussian_mixture, load_csv, long_tail_subsample, mean_row_cosine,
    parse_csv_table, realized_imbalance, MixtureSpec,
};
use pipcdr_core::metrics::ari;
use pipcdr_core::numerics::l2_normalize_rows;
use pipcdr_core::{AugmentSpec, Error, KMeansParams, Partition, Rng, TrainConfig};

#[test]
fn benchmark_mixture_is_separable_in_raw_space() {
    let spec = MixtureSpec::balanced(8, 100, 32, 10.0, 0.5);
    let data = gen_gaussian_mixture(&spec, &mut Rng::new(0)).unwrap();
    assert_eq!((data.len(), data.dim()), (800, 32));
    let x = l2_normalize_rows(&data.features).unwrap();
    let fit = spherical_kmeans(&x, &KMeansParams::new(8), &mut Rng::new(1)).unwrap();
    let score = ari(data.labels.as_ref().unwrap(), &Partition::new(&fit.assign)).unwrap();
    assert_eq!(score, 1.0);
}

#[test]
fn long_tail_hits_requested_ratio() {
    let spec = MixtureSpec::balanced(10, 500, 16, 10.0, 0.5);
    let data = gen_gaussian_mixture(&spec, &mut Rng::new(2)).unwrap();
    let tail = long_tail_subsample(&data, 0.1, &mut Rng::new(3)).unwrap();
    let labels = tail.labels.as_ref().unwrap();
    let counts = labels.counts();
    assert_eq!(counts[0], 500);
    assert_eq!(counts[9], 50);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert!((realized_imbalance(labels) - 0.1).abs() < 1e-12);
}

#[test]
fn long_tail_rejects_bad_ratio() {
    let data = gen_gaussian_mixture(&MixtureSpec::balanced(2, 10, 4, 5.0, 0.1), &mut Rng::new(0)).unwrap();
    for ratio in [0.0, -0.5, 1.5] {
        assert!(matches!(
            long_tail_subsample(&data, ratio, &mut Rng::new(0)),
            Err(Error::InvalidArgument(_))
        ));
    }
}

#[test]
fn default_augmentation_keeps_views_close() {
    let data = gen_gaussian_mixture(&MixtureSpec::balanced(4, 50, 32, 10.0, 0.5), &mut Rng::new(4)).unwrap();
    let spec = TrainConfig::default().augment;
    let view = augment_batch(&data.features, &spec, &mut Rng::new(5));
    let cos = mean_row_cosine(&data.features, &view);
    assert!(cos > 0.8 && cos < 1.0, "mean cosine {cos}");
    let same = augment_batch(&data.features, &AugmentSpec::none(), &mut Rng::new(5));
    assert_eq!(same, data.features);
}

#[test]
fn csv_loader_reports_locations() {
    let (m, labels) = parse_csv_table("1,2,0\n3,4,1\n".as_bytes(), Some(2)).unwrap();
    assert_eq!(m.shape(), (2, 2));
    assert_eq!(labels.unwrap(), vec![0, 1]);

    let err = parse_csv_table("1,2\n3,x\n".as_bytes(), None).unwrap_err();
    assert!(matches!(err, Error::Parse { row: 2, column: 2, .. }), "{err}");

    let err = parse_csv_table("1,2\n3\n".as_bytes(), None).unwrap_err();
    assert!(matches!(err, Error::RaggedRows { row: 2, expected: 2, got: 1 }), "{err}");

    let err = parse_csv_table("1,2,0.5\n".as_bytes(), Some(2)).unwrap_err();
    assert!(matches!(err, Error::Parse { row: 1, column: 3, .. }), "{err}");
}

#[test]
fn saved_dataset_loads_back() {
    let data = gen_gaussian_mixture(&MixtureSpec::balanced(3, 5, 4, 5.0, 0.1), &mut Rng::new(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    let back = load_csv(dir.path().join("features.csv"), None).unwrap();
    assert_eq!(back.features, data.features);
    assert!(matches!(
        load_csv(dir.path().join("missing.csv"), None),
        Err(Error::Io { .. })
    ));
}
