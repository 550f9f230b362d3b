//! End-to-end grids on small synthetic datasets.

use super::*;
use crate::graph::Protocol;

fn spec(extra: &str) -> ExperimentSpec {
    let text = format!(
        r#"
name = "e2e"
seeds = [0, 1]
bootstrap_resamples = 50
analyses = ["dataset_summary", "graph_stats", "drift"]

[data.synthetic]
nodes = 400
seed = 3

[training]
epochs = 4
patience = 10
warmup_epochs = 1

{extra}
"#
    );
    ExperimentSpec::from_toml(&text).unwrap()
}

const GRID: &str = r#"
[[conditions]]
name = "mlp"
model = "mlp"
hidden_dim = 16
tables = ["table5", "fig2", "fig7"]

[[conditions]]
name = "sage"
model = "sage"
hidden_dim = 16
tables = ["table5", "table9", "table12", "fig2", "fig6"]

[[conditions]]
name = "sage_tr"
model = "sage"
hidden_dim = 16
protocol = "transductive"
tables = ["table9"]

[[conditions]]
name = "rf"
model = "random_forest"
forest = { n_trees = 8 }
tables = ["table6", "table13", "fig9"]

[[conditions]]
name = "lr"
model = "logistic_regression"
logreg = { epochs = 30 }
tables = ["table6", "table13"]

[[conditions]]
name = "hyb"
model = "hybrid"
hybrid = { encoder = "mlp", inputs = "embedding" }
forest = { n_trees = 4 }
tables = ["table10"]

[[conditions]]
name = "fusion"
model = "fusion"
hidden_dim = 16

[[comparisons]]
a = "sage"
b = "sage_tr"
test = "paired"
tables = ["table9"]

[[comparisons]]
a = "rf"
b = "hyb"
test = "welch"
tables = ["table11"]
"#;

fn context(s: &ExperimentSpec) -> DataContext {
    DataContext::load(&DataSource::resolve(&s.data).unwrap(), &scopes_of(s)).unwrap()
}

fn quiet() -> RunOptions {
    RunOptions {
        jobs: 1,
        resume: true,
        checkpoints: true,
    }
}

#[test]
fn grid_writes_records_tables_and_resumes() {
    let s = spec(GRID);
    let ctx = context(&s);
    let dir = tempfile::tempdir().unwrap();
    let recs = run(&s, &ctx, dir.path(), &quiet()).unwrap();
    assert_eq!(recs.len(), s.conditions.len() * 2);
    for r in &recs {
        assert!(r.is_ok(), "{} seed {}: {:?}", r.condition, r.seed, r.error);
        let m = r.metrics.as_ref().unwrap();
        assert!((0.0..=1.0).contains(&m.f1));
        assert!(r.f1_ci.is_some());
        assert_eq!(r.cost.len(), 4);
        assert!(record_path(dir.path(), "e2e", &r.condition, r.seed).is_file());
    }
    let by = |c: &str| recs.iter().find(|r| r.condition == c).unwrap();
    assert!(by("sage").audit.as_ref().unwrap().pass);
    assert_eq!(by("sage").protocol, Protocol::StrictInductive);
    assert!(by("sage").calibration.is_some());
    assert!(by("rf").importance.is_some());
    assert!(by("rf").audit.is_none());
    assert_eq!(by("hyb").graph_variant, "empty");
    assert!(checkpoint_path(dir.path(), "e2e", "sage", 0).is_file());

    let exp = dir.path().join("e2e");
    for f in [
        "spec.toml",
        "dataset_summary.json",
        "dataset_per_step.csv",
        "graph_stats.csv",
        "drift.csv",
    ] {
        assert!(exp.join(f).is_file(), "{f}");
    }
    let reread = ExperimentSpec::load(&exp.join("spec.toml")).unwrap();
    assert_eq!(reread, s);

    let loaded = load_records(&exp).unwrap();
    assert_eq!(loaded.len(), recs.len());
    let (reports, manifest) = finalize(&s, &loaded, dir.path()).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|o| o.report.is_some()), "{reports:?}");
    for f in [
        "table5_main.csv",
        "table6_classical.csv",
        "table9_protocol_gap.csv",
        "table9_tests.csv",
        "table10_hybrid.csv",
        "table11_welch.csv",
        "table12_calibration.csv",
        "table13_cost.csv",
        "fig2_per_step.csv",
        "fig6_temperature.csv",
        "fig7_training_curves.csv",
        "fig9_feature_importance.csv",
        "comparisons.json",
        "manifest.json",
    ] {
        assert!(exp.join(f).is_file(), "{f}");
    }
    assert!(manifest.files.iter().any(|e| e.anchor == "Table 4"));

    // A second run reuses every record untouched.
    let again = run(&s, &ctx, dir.path(), &quiet()).unwrap();
    assert_eq!(again, recs);
}

#[test]
fn repeated_cells_are_identical_apart_from_wall_time() {
    let s = spec(GRID);
    let ctx = context(&s);
    let graphs = prebuild_graphs(&s, &ctx);
    for c in ["sage", "rf", "fusion"] {
        let cfg = CellConfig::new(&s, s.condition(c).unwrap(), 1, &ctx.data_hash);
        let a = run_cell(&ctx, &graphs, &cfg, None).without_timing();
        let b = run_cell(&ctx, &graphs, &cfg, None).without_timing();
        assert!(a.is_ok());
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{c}");
    }
}

#[test]
fn audit_failure_fails_only_its_cell() {
    let s = spec(
        r#"
[[conditions]]
name = "leaky"
model = "sage"
hidden_dim = 8
graph_horizon = 40

[[conditions]]
name = "rf"
model = "random_forest"
forest = { n_trees = 4 }
"#,
    );
    let ctx = context(&s);
    let dir = tempfile::tempdir().unwrap();
    let recs = run(&s, &ctx, dir.path(), &quiet()).unwrap();
    assert_eq!(recs.len(), 4);
    for r in recs.iter().filter(|r| r.condition == "leaky") {
        assert!(!r.is_ok());
        assert!(
            r.error.as_deref().unwrap().contains("protocol"),
            "{:?}",
            r.error
        );
        let audit = r.audit.as_ref().unwrap();
        assert!(!audit.pass);
        assert!(r.metrics.is_none());
    }
    assert!(recs
        .iter()
        .filter(|r| r.condition == "rf")
        .all(RunRecord::is_ok));

    // Failed cells are rerun on resume rather than reused.
    let again = run(&s, &ctx, dir.path(), &quiet()).unwrap();
    assert_eq!(again.len(), 4);
}

#[test]
fn shuffled_graphs_are_built_per_cell() {
    let s = spec(
        r#"
[[conditions]]
name = "shuf"
model = "sage"
hidden_dim = 8
protocol = "transductive"
graph = { kind = "shuffled" }
"#,
    );
    let ctx = context(&s);
    let graphs = prebuild_graphs(&s, &ctx);
    assert!(graphs.is_empty());
    let c = s.condition("shuf").unwrap();
    let r0 = run_cell(
        &ctx,
        &graphs,
        &CellConfig::new(&s, c, 0, &ctx.data_hash),
        None,
    );
    let r1 = run_cell(
        &ctx,
        &graphs,
        &CellConfig::new(&s, c, 1, &ctx.data_hash),
        None,
    );
    assert!(r0.is_ok() && r1.is_ok());
    assert_eq!(r0.graph_variant, "shuffled");
}

#[test]
fn record_matches_published_schema_fields() {
    let s = spec(GRID);
    let ctx = context(&s);
    let graphs = prebuild_graphs(&s, &ctx);
    let cfg = CellConfig::new(&s, s.condition("sage").unwrap(), 0, &ctx.data_hash);
    let rec = run_cell(&ctx, &graphs, &cfg, None);
    let v: serde_json::Value = serde_json::from_str(&rec.to_json().unwrap()).unwrap();
    let schema: serde_json::Value = serde_json::from_str(RECORD_SCHEMA).unwrap();
    let required: Vec<&str> = schema["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut a = required.clone();
    let mut b = keys.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    let hist = schema["properties"]["history"]["required"]
        .as_array()
        .unwrap();
    for k in hist {
        assert!(v["history"].get(k.as_str().unwrap()).is_some(), "{k}");
    }
}
