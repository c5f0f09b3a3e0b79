use compfs::autodiff::Tensor;
use compfs::baselines::{train_lasso, LassoConfig};
use compfs::datasets::{LabeledDataset, Task};
use compfs::experiment::{run_experiment, ConfigLayer, ExperimentReport, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Label depends on x0 strongly, x1 weakly; six noise columns.
fn graded(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 8);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        y.push(usize::from(row[0] + 0.3 * row[1] > 0.0));
        data.extend(row);
    }
    LabeledDataset::new("graded", Tensor::new(vec![n, 8], data).unwrap(), y, 2, None).unwrap()
}

#[test]
fn stronger_l1_never_selects_more() {
    for seed in 0..3 {
        let data = graded(2_000, seed);
        let mut prev = usize::MAX;
        for reg in [0.0, 0.01, 0.05, 0.2, 1.0, 5.0] {
            let n = train_lasso(&LassoConfig::new(reg, 20, seed), &data).unwrap().selected().len();
            assert!(n <= prev, "seed {seed} reg {reg}: {n} > {prev}");
            prev = n;
        }
        assert_eq!(prev, 0);
    }
}

fn small(model: &str, task: &str) -> ConfigLayer {
    ConfigLayer::from_toml(&format!(
        "task = \"{task}\"\nmodel = \"{model}\"\nrepeats = 2\nseed = 5\nn_train = 400\nn_test = 100\nepochs = 2\n"
    ))
    .unwrap()
}

#[test]
fn reruns_report_identical_selections() {
    for model in ["compfs", "oracle", "lasso"] {
        let config = small(model, "syn3").resolve().unwrap();
        let a = run_experiment(&config, None).unwrap();
        let b = run_experiment(&config, None).unwrap();
        assert_eq!(a.runs.len(), 2);
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert!(ra.succeeded(), "{model}: {:?}", ra.error);
            assert_eq!(ra.seed, rb.seed);
            assert_eq!(ra.groups, rb.groups);
            assert_eq!(ra.accuracy, rb.accuracy);
        }
        assert_eq!(a.runs[0].seed, 5);
        assert_eq!(a.runs[1].seed, 6);
    }
}

#[test]
fn report_files_round_trip() {
    let config = small("compfs", "chem1").resolve().unwrap();
    assert_eq!(config.model, ModelKind::CompFs);
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config, Some(dir.path())).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back = ExperimentReport::from_json(&json).unwrap();
    assert_eq!(back.runs.len(), report.runs.len());
    for (x, y) in back.runs.iter().zip(&report.runs) {
        assert_eq!(x.groups, y.groups);
        assert_eq!(x.tpr, y.tpr);
    }
    let table = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(table.contains("chem1"));
}

#[test]
fn bad_configs_are_rejected() {
    assert!(ConfigLayer::from_toml("epochs = 3\nnot_a_key = 1\n").is_err());
    let oracle = ConfigLayer::from_toml("task = \"syn1\"\nmodel = \"oracle\"\nn_learners = 3\n").unwrap();
    assert!(oracle.resolve().is_err());
    assert!(small("compfs", "syn9").resolve().is_err());
    let zero = ConfigLayer { repeats: Some(0), ..small("compfs", "syn1") };
    assert!(zero.resolve().is_err());
}

#[test]
fn every_task_loads_at_default_size() {
    for task in Task::ALL {
        let (n_train, n_test) = task.default_sizes();
        let (train, test) = task.train_test(n_train, n_test, 0).unwrap();
        assert_eq!((train.len(), test.len()), (n_train, n_test));
    }
}
