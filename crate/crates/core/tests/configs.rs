use std::path::PathBuf;

use contact_shape::config::RunConfig;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load_and_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert_eq!(n, 4);
}

#[test]
fn sim_config_matches_defaults() {
    let cfg = RunConfig::load(&configs_dir().join("sim.toml")).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn experiment_config_uses_experiment_values() {
    let cfg = RunConfig::load(&configs_dir().join("experiment.toml")).unwrap();
    assert_eq!(cfg.filter.n_th, 0.207);
    assert_eq!(cfg.filter.sigma_m_nm, 6.9e-5);
    assert_eq!(cfg.baseline.alpha_reg, 1.17e4);
}
