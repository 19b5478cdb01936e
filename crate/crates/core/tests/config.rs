use std::path::PathBuf;

use qcycle::config::RunConfig;
use qcycle::io::{emit_plots, run_point, write_bundle};
use qcycle::resonances::fgr_width;
use qcycle::thermo::read_manifest;
use qcycle::Error;

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const MINIMAL: &str = r#"
name = "minimal"

[model]
omega0 = 1.0
period = 2.0
coupling = 0.5

[[reservoirs]]
beta = 0.5
envelope = { kind = "cosine", mean = 1.0, amplitude = 0.6 }
radial = { kind = "power_gaussian", power = 2, scale = 2.0 }

[[reservoirs]]
beta = 2.0
mu = 0.3
envelope = { kind = "harmonics", terms = [{ m = 0, re = 0.8 }] }
radial = { kind = "power_gaussian", power = 2, scale = 1.5 }

[discretization]
modes = 12
u_max = 6.0

[run]
cycles = 6
"#;

#[test]
fn bundled_configs_resolve() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for path in names {
        let cfg = RunConfig::load(&path).unwrap();
        for (k, (_, p)) in cfg.points().unwrap().into_iter().enumerate() {
            let p = p.unwrap_or_else(|e| panic!("{} point {k}: {e}", path.display()));
            assert_eq!(p.hash.len(), 64);
        }
    }
}

#[test]
fn malformed_config_names_the_key() {
    let typo = MINIMAL.replace("beta = 0.5", "betta = 0.5");
    let err = RunConfig::from_toml(&typo).unwrap_err().to_string();
    assert!(err.contains("betta"), "{err}");

    let negative = MINIMAL.replace("beta = 2.0", "beta = -2.0");
    let err = RunConfig::from_toml(&negative).unwrap().resolve(0).unwrap_err();
    match err {
        Error::Config { key, .. } => assert_eq!(key, "reservoirs[1].beta"),
        other => panic!("{other}"),
    }

    let bad_scale = MINIMAL.replace("scale = 1.5", "scale = 0.0");
    match RunConfig::from_toml(&bad_scale).unwrap().model().unwrap_err() {
        Error::Config { key, .. } => assert_eq!(key, "reservoirs[1].radial.scale"),
        other => panic!("{other}"),
    }

    let both = MINIMAL.replace("coupling = 0.5", "coupling = 0.5\ncoupling_width = 0.1");
    assert!(matches!(RunConfig::from_toml(&both).unwrap().model(), Err(Error::Config { .. })));
}

#[test]
fn sweep_expands_in_manifest_order() {
    let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
    assert_eq!(cfg.expand().unwrap().len(), 1);
    cfg.sweep.g = vec![1e-3, 2e-3, 4e-3];
    cfg.sweep.modes = vec![10, 20];
    let pts = cfg.expand().unwrap();
    assert_eq!(pts.len(), 6);
    let order: Vec<(f64, usize)> = pts.iter().map(|c| (c.model.coupling.unwrap(), c.discretization.modes)).collect();
    assert_eq!(order[..3], [(1e-3, 10), (1e-3, 20), (2e-3, 10)]);
    let hashes: std::collections::HashSet<_> = pts.iter().map(|c| c.content_hash()).collect();
    assert_eq!(hashes.len(), 6);
    cfg.sweep.max_points = 5;
    assert!(matches!(cfg.clone().with_cycles(3).resolve(0), Err(Error::Config { .. })));
    assert!(matches!(cfg.expand(), Err(Error::Config { .. })));
}

#[test]
fn hash_is_stable_across_formatting() {
    let a = RunConfig::from_toml(MINIMAL).unwrap();
    let b = RunConfig::from_toml(&MINIMAL.replace("omega0 = 1.0", "omega0   =   1.00")).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    let back = RunConfig::from_toml(&a.to_toml()).unwrap();
    assert_eq!(back, a);
    assert_ne!(a.content_hash(), a.clone().with_cycles(5).content_hash());
}

#[test]
fn coupling_width_solves_for_g() {
    let cfg = RunConfig::from_toml(&MINIMAL.replace("coupling = 0.5", "coupling_width = 0.05")).unwrap();
    let m = cfg.model().unwrap();
    let w = m.coupling * m.coupling * fgr_width(&m, 0) * m.period();
    assert!((w - 0.05).abs() < 1e-14, "{w}");
}

#[test]
fn automatic_horizon_stays_inside_trusted_fraction() {
    let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
    cfg.run.cycles = None;
    cfg.discretization.modes = 40;
    let p = cfg.resolve(0).unwrap();
    let dm = p.discretize().unwrap();
    let n = p.plan.cycles as f64;
    assert!(n * 2.0 <= 0.75 * dm.recurrence_time() && (n + 1.0) * 2.0 > 0.75 * dm.recurrence_time());
}

#[test]
fn bundle_and_plots_are_deterministic() {
    let p = RunConfig::from_toml(MINIMAL).unwrap().resolve(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_bundle(&a, &run_point(&p, None).unwrap()).unwrap();
    write_bundle(&b, &run_point(&p, None).unwrap()).unwrap();
    for f in ["trajectory.csv", "ledger.json", "report.json", "config.toml", "state.snap"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = std::fs::read_to_string(a.join("report.json")).unwrap();
    assert!(report.contains(&p.hash));

    let plots = dir.path().join("plots");
    let files = emit_plots(&a, &plots).unwrap();
    assert_eq!(files.len(), 3);
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    for (f, bytes) in files.iter().zip(&first) {
        assert!(String::from_utf8_lossy(bytes).lines().count() > 1, "{}", f.display());
    }
    let again = emit_plots(&a, &plots).unwrap();
    for (f, bytes) in again.iter().zip(&first) {
        assert_eq!(&std::fs::read(f).unwrap(), bytes);
    }
}

#[test]
fn empty_manifest_gives_header_only_plot() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    qcycle::io::write_manifest_file(&m, &[]).unwrap();
    assert!(read_manifest(&m).unwrap().is_empty());
    let files = emit_plots(&m, &dir.path().join("plots")).unwrap();
    assert_eq!(std::fs::read_to_string(&files[0]).unwrap().lines().count(), 1);

    std::fs::write(&m, "point,g\n0,0.1\n").unwrap();
    assert!(emit_plots(&m, &dir.path().join("plots")).is_err());
    assert!(emit_plots(&bundled("does-not-exist.toml"), dir.path()).is_err());
}

#[test]
fn schema_lists_every_serialized_key() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schema/run-config.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let defs = &schema["$defs"];
    let props = |v: &serde_json::Value| -> Vec<String> {
        v["properties"].as_object().unwrap().keys().cloned().collect()
    };
    let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
    cfg.sweep.g = vec![0.1];
    cfg.model.strip_width = Some(0.5);
    let json = serde_json::to_value(&cfg).unwrap();
    let top = props(&schema);
    for (key, value) in json.as_object().unwrap() {
        assert!(top.contains(key), "{key}");
        if let Some(obj) = value.as_object() {
            let known = props(&defs[key.as_str()]);
            for k in obj.keys() {
                assert!(known.contains(k), "{key}.{k}");
            }
        }
    }
    let reservoir = props(&defs["reservoir"]);
    for r in json["reservoirs"].as_array().unwrap() {
        for k in r.as_object().unwrap().keys() {
            assert!(reservoir.contains(k), "reservoirs.{k}");
        }
    }
}
