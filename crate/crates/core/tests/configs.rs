use std::fs;
use std::path::PathBuf;

use bfaec_core::harness::build_plan;
use bfaec_core::io::RunConfig;

fn config_files() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .expect("configs directory")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn every_config_round_trips() {
    let files = config_files();
    assert!(files.len() >= 6);
    for path in files {
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
        let emitted = cfg.to_toml_string().unwrap();
        let again = RunConfig::from_toml_str(&emitted).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        assert_eq!(emitted, again.to_toml_string().unwrap(), "{}", path.display());
    }
}

#[test]
fn every_config_validates() {
    for path in config_files() {
        let cfg = RunConfig::load(&path).unwrap();
        let sc = cfg.scenario();
        sc.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if cfg.design.is_some() {
            cfg.design_spec().unwrap().validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}

#[test]
fn small_configs_build_plans() {
    for name in ["verification_ar1.toml", "verification_white.toml", "schedule_reduced.toml"] {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let sc = RunConfig::load(&path).unwrap().scenario();
        let plan = build_plan::<f64>(&sc, 0).unwrap();
        assert_eq!(plan.segments.len(), sc.events.len() + 1, "{name}");
        assert_eq!(plan.segments.last().unwrap().end, sc.n_samples);
    }
}

#[test]
fn unknown_key_in_any_section_is_named() {
    let path = config_files().into_iter().find(|p| p.ends_with("schedule_reduced.toml")).unwrap();
    let text = fs::read_to_string(path).unwrap();
    for (anchor, key) in [("[plant]\n", "mic_count"), ("[gsc]\n", "n_beam"), ("[montecarlo]\n", "run_count")] {
        let bad = text.replace(anchor, &format!("{anchor}{key} = 1\n"));
        let e = RunConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(e.contains(key), "{e}");
    }
}
