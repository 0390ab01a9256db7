use std::path::{Path, PathBuf};

use orlicz_fb::estimates::read_reports_csv;
use orlicz_fb::harness::{relative_delta, report, run, ExperimentConfig, RunManifest, RunOptions};
use orlicz_fb::Error;
use proptest::prelude::*;

fn bundled(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    ExperimentConfig::load(&path).unwrap()
}

fn run_into(cfg: &ExperimentConfig, out: &Path) -> (RunManifest, PathBuf) {
    let mut cfg = cfg.clone();
    cfg.output_dir = out.to_path_buf();
    let m = run(&cfg, &RunOptions::default()).unwrap();
    let path = out.join(&cfg.id).join(format!("{}_manifest.json", cfg.id));
    (m, path)
}

fn double_phase_1d(lambda: f64) -> ExperimentConfig {
    ExperimentConfig::from_json_str(&format!(
        r#"{{
            "id": "dp_1d",
            "integrand": {{"family": "double_phase", "params": {{"p": 2.0, "q": 3.0, "a": "x1"}}}},
            "lambda": {lambda},
            "domain": {{"lo": [0.0], "hi": [1.0]}},
            "resolutions": [16, 32],
            "boundary": "0.5 * x1",
            "estimates": [{{"kind": "lipschitz"}}]
        }}"#
    ))
    .unwrap()
}

#[test]
fn bundled_one_dimensional_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (m, path) = run_into(&bundled("power_p2_1d"), dir.path());
    assert!(m.pass, "{:?}", m.passes);
    assert_eq!(RunManifest::load(&path).unwrap(), m);
    assert_eq!(m.resolutions.len(), 3);
}

#[test]
fn report_keeps_run_rows_and_adds_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let (m, path) = run_into(&bundled("power_p2_1d"), dir.path());
    let rep = report(std::slice::from_ref(&path)).unwrap();
    assert!(rep.conflicts.is_empty());
    let run_dir = path.parent().unwrap();
    for rec in &m.resolutions {
        let mut expected = read_reports_csv(&run_dir.join(&rec.estimates_csv)).unwrap();
        let mut merged: Vec<_> = rep.rows.iter().filter(|r| r.h == rec.h).map(|r| r.source()).collect();
        expected.sort_by(|a, b| (&a.name, &a.key).cmp(&(&b.name, &b.key)));
        merged.sort_by(|a, b| (&a.name, &a.key).cmp(&(&b.name, &b.key)));
        assert_eq!(merged, expected);
    }
    for w in rep.rows.windows(2) {
        if (&w[0].name, &w[0].key) == (&w[1].name, &w[1].key) {
            assert!(w[0].h > w[1].h);
            assert_eq!(w[1].delta, Some(relative_delta(w[0].ratio, w[1].ratio)));
        } else {
            assert_eq!(w[1].delta, None);
        }
    }
}

#[test]
fn report_groups_families() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = run_into(&bundled("power_p2_1d"), dir.path());
    let (_, b) = run_into(&double_phase_1d(1.0), dir.path());
    let rep = report(&[b, a]).unwrap();
    let families: Vec<&str> = rep.rows.iter().map(|r| r.family.as_str()).collect();
    assert!(families.windows(2).all(|w| w[0] <= w[1]));
    assert!(families.contains(&"double_phase") && families.contains(&"power_law"));
    let table = rep.summary_table();
    assert!(table.contains("[double_phase]") && table.contains("[power_law]"));
    assert!(table.find("[double_phase]") < table.find("[power_law]"));
}

#[test]
fn report_flags_disagreeing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = run_into(&double_phase_1d(1.0), &dir.path().join("a"));
    let (_, b) = run_into(&double_phase_1d(0.5), &dir.path().join("b"));
    let rep = report(&[a.clone(), b]).unwrap();
    // the coarsest grid has no Lipschitz rows, so only the finer one disagrees
    assert_eq!(rep.conflicts.len(), 1, "{:?}", rep.conflicts);
    assert!(rep.rows.is_empty());

    let (_, same) = run_into(&double_phase_1d(1.0), &dir.path().join("c"));
    let rep = report(&[a.clone(), same]).unwrap();
    assert!(rep.conflicts.is_empty());

    let mut wider = double_phase_1d(1.0);
    wider.domain.hi = vec![2.0];
    let (_, wide) = run_into(&wider, &dir.path().join("d"));
    let rep = report(&[a, wide]).unwrap();
    assert!(rep.conflicts[0].contains("different domains"));
}

#[test]
fn invalid_lambda_names_the_field() {
    let json = serde_json::to_string(&double_phase_1d(1.0))
        .unwrap()
        .replace(r#""lambda":1.0"#, r#""lambda":-1.0"#);
    match ExperimentConfig::from_json_str(&json) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "lambda"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn hash_ignores_layout_and_output_dir(pretty in any::<bool>(), out in "[a-z]{1,8}") {
        let cfg = bundled("doublephase_2d");
        let value = serde_json::to_value(&cfg).unwrap();
        let text = if pretty { serde_json::to_string_pretty(&value) } else { serde_json::to_string(&value) }.unwrap();
        let mut again = ExperimentConfig::from_json_str(&text).unwrap();
        again.output_dir = PathBuf::from(out);
        prop_assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_lambda(lambda in 0.1..10.0f64) {
        let a = double_phase_1d(1.0);
        let b = double_phase_1d(lambda);
        prop_assert_eq!(a.hash() == b.hash(), lambda == 1.0);
    }
}
