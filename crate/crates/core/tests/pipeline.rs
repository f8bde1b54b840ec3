use hardness_core::cli::{cmd_generate, load_bank};
use hardness_core::config::ExperimentConfig;
use hardness_core::sensor_sim::ClassId;

#[test]
fn dataset_on_disk_matches_simulated_bank() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config: ExperimentConfig = "sensor.per_class = 6\nseed = 8\nstrategy.iterations = 0\nstrategy.test_samples = 1\n".parse().unwrap();
    let written = cmd_generate(&config, tmp.path()).unwrap();
    assert_eq!(written, 30);

    let simulated = load_bank(&config).unwrap();
    config.data_dir = Some(tmp.path().to_path_buf());
    let from_disk = load_bank(&config).unwrap();
    assert_eq!(simulated, from_disk);
    assert_eq!(from_disk.len(), 30);
    assert_eq!(from_disk.dim(), config.pipeline.feature_len());
}

#[test]
fn softer_classes_move_markers_further() {
    let config: ExperimentConfig = "sensor.per_class = 8\nstrategy.iterations = 0\nstrategy.test_samples = 1\n".parse().unwrap();
    let bank = load_bank(&config).unwrap();
    let mean_abs = |c: usize| {
        let s = bank.class_samples(ClassId::from_index(c));
        s.iter().flat_map(|f| f.iter().map(|v| v.abs())).sum::<f64>() / s.len() as f64
    };
    let by = |pick: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (i, &c) in config.compliances.iter().enumerate() {
            if pick(c, config.compliances[best]) {
                best = i;
            }
        }
        best
    };
    let softest = by(|a, b| a > b);
    let hardest = by(|a, b| a < b);
    assert!(mean_abs(softest) > mean_abs(hardest));
}

#[test]
fn corrupted_sample_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config: ExperimentConfig = "sensor.per_class = 6\nstrategy.iterations = 0\nstrategy.test_samples = 1\n".parse().unwrap();
    cmd_generate(&config, tmp.path()).unwrap();
    let victim = tmp.path().join(hardness_core::sensor_sim::io::sample_file_name(0));
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
    config.data_dir = Some(tmp.path().to_path_buf());
    assert!(load_bank(&config).is_err());
}
