use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use rgbsde_cli::config::{apply_override, ExperimentConfig};
use rgbsde_cli::presets::{self, PRESETS};
use rgbsde_cli::{list_presets, load_config, run_experiment, validate};

const REQUIRED: [&str; 6] = [
    "snell_crosscheck",
    "american_tree",
    "random_horizon_drift",
    "infinite_horizon_decay",
    "neumann_manufactured",
    "feynman_kac_compare",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rgbsde"))
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel);
            }
        }
    }
    out
}

#[test]
fn presets_listed_and_stable() {
    let a = list_presets();
    let names: Vec<&str> = a.iter().map(|(n, _)| *n).collect();
    for r in REQUIRED {
        assert!(names.contains(&r), "missing preset {r}");
    }
    assert!(a.iter().all(|(_, d)| !d.is_empty()));
    assert_eq!(a, list_presets());
}

#[test]
fn every_preset_validates() {
    for p in PRESETS {
        let cfg = ExperimentConfig::from_toml(p.text).unwrap_or_else(|e| panic!("{}: {e}", p.name));
        let out = validate(&cfg).unwrap();
        assert!(out.passed(), "{}: {:?}", p.name, out.first_failure());
    }
}

#[test]
fn zero_beta_fails_with_the_condition_named() {
    let loaded = load_config("american_tree", &["driver.params.beta=0".into()]).unwrap();
    let out = validate(&loaded.config).unwrap();
    assert!(!out.passed());
    let first = out.first_failure().unwrap();
    assert!(first.starts_with("beta < 0"), "{first}");
}

#[test]
fn missing_dt_is_a_parse_error_naming_the_key() {
    let text = presets::find("feynman_kac_compare").unwrap().text.replace("dt = 0.001\n", "");
    let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
    assert!(err.contains("`dt`"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = format!("{}\n[output]\nbogus = 1\n", presets::find("american_tree").unwrap().text);
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn overrides_parse_values_and_create_tables() {
    let mut v: toml::Value = toml::from_str("a = 1\n").unwrap();
    apply_override(&mut v, "a=2.5").unwrap();
    apply_override(&mut v, "b.c=[1, 2]").unwrap();
    apply_override(&mut v, "b.name=plain words").unwrap();
    assert_eq!(v["a"].as_float(), Some(2.5));
    assert_eq!(v["b"]["c"].as_array().unwrap().len(), 2);
    assert_eq!(v["b"]["name"].as_str(), Some("plain words"));
    assert!(apply_override(&mut v, "novalue").is_err());
    assert!(apply_override(&mut v, "a.x=1").is_err());
}

#[test]
fn snell_crosscheck_manifest_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config("snell_crosscheck", &[]).unwrap().config;
    let m = run_experiment(&cfg, dir.path()).unwrap();
    assert!(m.summaries[0]["max_gap"].as_f64().unwrap() <= 1e-10);
    assert!(m.digest_of("seed_1/oracle_equivalence.csv").is_some());
    assert!(m.verify(dir.path()).is_empty());
    let listed: BTreeSet<String> = m.files.iter().map(|f| f.path.clone()).collect();
    let mut on_disk = files_under(dir.path());
    on_disk.remove("manifest.json");
    assert_eq!(listed, on_disk);
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let back: rgbsde_cli::RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
}

#[test]
fn rerun_gives_identical_digests() {
    let cfg = load_config("american_tree", &[]).unwrap().config;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_experiment(&cfg, a.path()).unwrap();
    let mb = run_experiment(&cfg, b.path()).unwrap();
    assert_eq!(ma.files, mb.files);
}

#[test]
fn tampered_file_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config("neumann_manufactured", &[]).unwrap().config;
    let m = run_experiment(&cfg, dir.path()).unwrap();
    std::fs::write(dir.path().join("seed_1/pde.csv"), "x\n").unwrap();
    assert_eq!(m.verify(dir.path()), vec!["seed_1/pde.csv".to_string()]);
}

#[test]
fn binary_exit_codes() {
    let out = bin().arg("list-presets").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("neumann_manufactured"));

    let out = bin().args(["validate", "american_tree"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    let out = bin()
        .args(["validate", "american_tree", "--override", "driver.params.beta=0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta < 0"));

    let out = bin().args(["validate", "no_such_thing"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Valid config whose horizon is too short for the contraction threshold.
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "infinite_horizon_decay", "--override", "horizon.t_max=1.0", "--override", "sde.n_paths=100"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rgbsde_solver"));
}

#[test]
fn run_with_seed_and_output_root() {
    let root = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "american_tree", "--seed", "5"])
        .env(rgbsde_cli::OUTPUT_ROOT_ENV, root.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.path().join("american_tree");
    assert!(run.join("manifest.json").is_file());
    assert!(run.join("seed_5/summary.json").is_file());
    assert!(run.join("seed_5/pricing.csv").is_file());
}

#[test]
fn config_file_path_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mine.toml");
    std::fs::write(&path, presets::find("neumann_manufactured").unwrap().text).unwrap();
    let loaded = load_config(path.to_str().unwrap(), &[]).unwrap();
    assert_eq!(loaded.name, "mine");
    assert!(validate(&loaded.config).unwrap().passed());
}
