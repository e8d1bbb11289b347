use std::path::PathBuf;

use adaptive_mpc::config::{load_config, parse_config, ConfigError};
use adaptive_mpc::model::{Mode, SystemConfig};

fn bundled(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn bundled_configs_describe_the_benchmark() {
    for (name, mode, alpha) in [("benchmark_robust.toml", Mode::Robust, 0.0), ("benchmark_stochastic.toml", Mode::Stochastic, 0.4)] {
        let cfg = parse_config(&bundled(name)).unwrap();
        assert_eq!(cfg.mode(), mode);
        assert_eq!(cfg.alpha, alpha);
        assert_eq!(cfg.system, SystemConfig::benchmark(mode));
        assert_eq!(cfg.steps, 20);
        assert_eq!(cfg.trajectories, 100);
    }
}

#[test]
fn risk_levels_must_add_up() {
    let text = bundled("benchmark_stochastic.toml").replace("alpha = 0.4", "alpha = 0.3");
    let Err(ConfigError::Validation(errs)) = parse_config(&text) else { panic!("accepted") };
    assert!(errs.iter().any(|e| e.path.contains("alpha") && e.message.contains("alpha")), "{errs:?}");

    let text = bundled("benchmark_robust.toml").replace("alpha = 0.0", "alpha = 0.1");
    let Err(ConfigError::Validation(errs)) = parse_config(&text) else { panic!("accepted") };
    assert_eq!(errs[0].path, "constraints.robust.alpha");
}

#[test]
fn ragged_matrix_reports_its_line() {
    let text = bundled("benchmark_robust.toml").replace("a = [[1.2, 1.5], [0.0, 1.3]]", "a = [[1.2, 1.5], [0.0]]");
    let line = text.lines().position(|l| l.starts_with("a = ")).unwrap() + 1;
    match parse_config(&text) {
        Err(ConfigError::Parse { line: Some(l), .. }) => assert_eq!(l, line),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_fields_and_missing_files_are_errors() {
    let text = bundled("benchmark_robust.toml").replace("horizon = 6", "horizon = 6\nhorizn = 6");
    assert!(matches!(parse_config(&text), Err(ConfigError::Parse { .. })));
    assert!(matches!(load_config(&PathBuf::from("/nonexistent.toml")), Err(ConfigError::Io { .. })));
}
