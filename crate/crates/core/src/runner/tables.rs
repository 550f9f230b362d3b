//! CSV data behind each table and figure, plus the manifest mapping files
//! to their anchors. Missing cells are written as `NA`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::compare::ComparisonOutcome;
use super::record::{CalibrationSummary, RunRecord};
use super::spec::ExperimentSpec;
use crate::error::{Error, Result};
use crate::ingest::{LOCAL_FEATURES, MAX_TIMESTEP, TEST_MIN_STEP};
use crate::metrics::{mean, sample_sd, CalibrationReport, MetricBundle};
use crate::store::write_atomic;

pub const NA: &str = "NA";

/// In-memory CSV with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(x) => x.to_string(),
        None => NA.into(),
    }
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| mean(v))
}

fn sd_of(v: &[f64]) -> Option<f64> {
    (v.len() >= 2).then(|| sample_sd(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Summary,
    Comparisons,
    Calibration,
    Cost,
    PerStep,
    Temperature,
    Curves,
    Advantage,
    Importance,
}

struct TableDef {
    tag: &'static str,
    file: &'static str,
    anchor: &'static str,
    layout: Layout,
    description: &'static str,
}

const TABLES: &[TableDef] = &[
    TableDef {
        tag: "fig3",
        file: "fig3_graph_variants.csv",
        anchor: "Figure 3",
        layout: Layout::Summary,
        description: "F1 and AUC per graph construction",
    },
    TableDef {
        tag: "table5",
        file: "table5_main.csv",
        anchor: "Table 5",
        layout: Layout::Summary,
        description: "strict-inductive encoder benchmark",
    },
    TableDef {
        tag: "table6",
        file: "table6_classical.csv",
        anchor: "Table 6",
        layout: Layout::Summary,
        description: "feature-only baselines",
    },
    TableDef {
        tag: "table8",
        file: "table8_graph_ablation.csv",
        anchor: "Table 8",
        layout: Layout::Summary,
        description: "original, shuffled and empty edges",
    },
    TableDef {
        tag: "table9",
        file: "table9_protocol_gap.csv",
        anchor: "Table 9",
        layout: Layout::Summary,
        description: "inductive versus transductive training",
    },
    TableDef {
        tag: "table10",
        file: "table10_hybrid.csv",
        anchor: "Table 10",
        layout: Layout::Summary,
        description: "hybrid embedding ablation",
    },
    TableDef {
        tag: "table11",
        file: "table11_welch.csv",
        anchor: "Table 11",
        layout: Layout::Comparisons,
        description: "pairwise tests between hybrid cells",
    },
    TableDef {
        tag: "table12",
        file: "table12_calibration.csv",
        anchor: "Table 12",
        layout: Layout::Calibration,
        description: "temperature scaling",
    },
    TableDef {
        tag: "table13",
        file: "table13_cost.csv",
        anchor: "Table 13",
        layout: Layout::Cost,
        description: "normalised cost per FN:FP ratio",
    },
    TableDef {
        tag: "fig2",
        file: "fig2_per_step.csv",
        anchor: "Figure 2",
        layout: Layout::PerStep,
        description: "per-step test F1",
    },
    TableDef {
        tag: "fig4",
        file: "fig4_temporal_drift.csv",
        anchor: "Figure 4",
        layout: Layout::PerStep,
        description: "per-step F1 with the illicit rate",
    },
    TableDef {
        tag: "fig5",
        file: "fig5_ablation_per_step.csv",
        anchor: "Figure 5",
        layout: Layout::PerStep,
        description: "per-step F1 under each edge condition",
    },
    TableDef {
        tag: "fig6",
        file: "fig6_temperature.csv",
        anchor: "Figure 6",
        layout: Layout::Temperature,
        description: "fitted temperature and F1 change per seed",
    },
    TableDef {
        tag: "fig7",
        file: "fig7_training_curves.csv",
        anchor: "Figure 7",
        layout: Layout::Curves,
        description: "train and test F1 per epoch",
    },
    TableDef {
        tag: "fig8",
        file: "fig8_advantage.csv",
        anchor: "Figure 8",
        layout: Layout::Advantage,
        description: "per-step F1 difference between two conditions",
    },
    TableDef {
        tag: "fig9",
        file: "fig9_feature_importance.csv",
        anchor: "Figure 9",
        layout: Layout::Importance,
        description: "random forest importance by feature",
    },
];

/// Dataset-level files written by the analyses.
const ANALYSIS_FILES: &[(&str, &str, &str)] = &[
    ("dataset_summary.json", "Table 2", "dataset counts"),
    (
        "dataset_per_step.csv",
        "Table 3",
        "label counts and illicit rate per timestep",
    ),
    (
        "graph_stats.csv",
        "Table 4",
        "topology of each graph variant",
    ),
    ("drift.csv", "Figure 10", "feature drift of each test step"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub anchor: String,
    pub description: String,
    /// Conditions or comparisons the file draws on.
    pub sources: Vec<String>,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub files: Vec<ManifestEntry>,
}

/// Records of one condition, successful ones only, in seed order.
struct Group<'a> {
    ok: Vec<&'a RunRecord>,
    failed: usize,
}

impl<'a> Group<'a> {
    fn new(name: &'a str, records: &'a [RunRecord]) -> Self {
        let mut ok: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.condition == name && r.is_ok())
            .collect();
        ok.sort_by_key(|r| r.seed);
        let failed = records
            .iter()
            .filter(|r| r.condition == name && !r.is_ok())
            .count();
        Self { ok, failed }
    }

    fn values(&self, f: impl Fn(&RunRecord) -> Option<f64>) -> Vec<f64> {
        self.ok.iter().filter_map(|r| f(r)).collect()
    }

    fn metric(&self, f: impl Fn(&MetricBundle) -> f64) -> Vec<f64> {
        self.values(|r| r.metrics.as_ref().map(&f))
    }

    fn step(&self, t: u8) -> Vec<&'a MetricBundle> {
        self.ok
            .iter()
            .filter_map(|r| r.per_step.as_ref()?.steps.get(&t))
            .collect()
    }

    /// Bootstrap interval of the seed with the median F1.
    fn median_ci(&self) -> Option<(f64, f64)> {
        let mut v: Vec<(f64, (f64, f64))> = self
            .ok
            .iter()
            .filter_map(|r| Some((r.f1()?, r.f1_ci?)))
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        Some(v[(v.len() - 1) / 2].1)
    }
}

fn summary(spec: &ExperimentSpec, names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "condition",
        "model",
        "protocol",
        "graph",
        "fit_scope",
        "n_seeds",
        "n_failed",
        "f1_mean",
        "f1_sd",
        "f1_ci_lo",
        "f1_ci_hi",
        "precision_mean",
        "precision_sd",
        "recall_mean",
        "recall_sd",
        "auc_mean",
        "auc_sd",
        "ap_mean",
        "ap_sd",
        "f1_35_42_mean",
        "f1_43_49_mean",
    ]);
    for &n in names {
        let g = Group::new(n, records);
        let c = spec.condition(n);
        let ci = g.median_ci();
        let mut row = vec![
            n.to_string(),
            c.map_or(NA.into(), |c| c.model.as_str().into()),
            c.map_or(NA.into(), |c| c.protocol.as_str().into()),
            g.ok.first().map_or(NA.into(), |r| r.graph_variant.clone()),
            c.map_or(NA.into(), |c| {
                c.fit_scope.unwrap_or(spec.data.fit_scope).as_str().into()
            }),
            g.ok.len().to_string(),
            g.failed.to_string(),
        ];
        let f1 = g.metric(|m| m.f1);
        row.extend([
            num(mean_of(&f1)),
            num(sd_of(&f1)),
            num(ci.map(|c| c.0)),
            num(ci.map(|c| c.1)),
        ]);
        let cols: [fn(&MetricBundle) -> f64; 4] = [
            |m| m.precision,
            |m| m.recall,
            |m| m.auc_roc,
            |m| m.average_precision,
        ];
        for f in cols {
            let v = g.metric(f);
            row.extend([num(mean_of(&v)), num(sd_of(&v))]);
        }
        for f in [
            |r: &RunRecord| r.per_step.as_ref()?.mean_f1_35_42,
            |r: &RunRecord| r.per_step.as_ref()?.mean_f1_43_49,
        ] {
            row.push(num(mean_of(&g.values(f))));
        }
        t.push(row);
    }
    t
}

fn comparisons(outcomes: &[&ComparisonOutcome]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "comparison",
        "a",
        "b",
        "metric",
        "test",
        "n_a",
        "n_b",
        "mean_a",
        "mean_b",
        "delta",
        "t",
        "dof",
        "p_value",
        "cohens_d",
        "error",
    ]);
    for o in outcomes {
        let r = o.report.as_ref();
        t.push(vec![
            o.name.clone(),
            o.a.clone(),
            o.b.clone(),
            format!("{:?}", o.metric).to_lowercase(),
            format!("{:?}", o.test).to_lowercase(),
            r.map_or(NA.into(), |r| r.n_a.to_string()),
            r.map_or(NA.into(), |r| r.n_b.to_string()),
            num(r.map(|r| r.mean_a)),
            num(r.map(|r| r.mean_b)),
            num(r.map(|r| r.delta)),
            num(r.map(|r| r.t)),
            num(r.map(|r| r.dof)),
            r.map_or(NA.into(), |r| format!("{:e}", r.p_value)),
            num(r.map(|r| r.cohens_d)),
            o.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

fn calibration(names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "condition",
        "mode",
        "n_seeds",
        "temperature_mean",
        "ece_before_mean",
        "ece_after_mean",
        "brier_before_mean",
        "brier_after_mean",
        "delta_f1_mean",
    ]);
    type Pick = fn(&CalibrationSummary) -> Option<&CalibrationReport>;
    let modes: [(&str, Pick); 2] = [
        ("paper_faithful", |c| c.paper_faithful.as_ref()),
        ("train_tail", |c| c.train_tail.as_ref()),
    ];
    for &n in names {
        let g = Group::new(n, records);
        for (mode, pick) in modes {
            let reps: Vec<&CalibrationReport> =
                g.ok.iter()
                    .filter_map(|r| pick(r.calibration.as_ref()?))
                    .collect();
            let m = |f: fn(&CalibrationReport) -> f64| {
                num(mean_of(&reps.iter().map(|r| f(r)).collect::<Vec<_>>()))
            };
            t.push(vec![
                n.to_string(),
                mode.to_string(),
                reps.len().to_string(),
                m(|r| r.temperature),
                m(|r| r.ece_before),
                m(|r| r.ece_after),
                m(|r| r.brier_before),
                m(|r| r.brier_after),
                m(|r| r.delta_f1),
            ]);
        }
    }
    t
}

fn ratio_label(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("cost_r{}", r as i64)
    } else {
        format!("cost_r{r}")
    }
}

fn cost(spec: &ExperimentSpec, names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut header = vec!["condition".to_string(), "n_seeds".to_string()];
    header.extend(spec.cost_ratios.iter().map(|&r| ratio_label(r)));
    let mut t = CsvTable {
        header,
        rows: Vec::new(),
    };
    for &n in names {
        let g = Group::new(n, records);
        let mut row = vec![n.to_string(), g.ok.len().to_string()];
        for &r in &spec.cost_ratios {
            let v = g.values(|rec| {
                rec.cost
                    .iter()
                    .find(|c| c.ratio == r)
                    .map(|c| c.normalized_cost)
            });
            row.push(num(mean_of(&v)));
        }
        t.push(row);
    }
    t
}

/// One row per condition and test step 35–49, whether or not it has data.
fn per_step(names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "condition",
        "timestep",
        "n_seeds",
        "f1_mean",
        "f1_sd",
        "precision_mean",
        "recall_mean",
        "ap_mean",
        "labeled",
        "illicit_rate",
    ]);
    for &n in names {
        let g = Group::new(n, records);
        for step in TEST_MIN_STEP..=MAX_TIMESTEP {
            let ms = g.step(step);
            let f1: Vec<f64> = ms.iter().map(|m| m.f1).collect();
            let col = |f: fn(&MetricBundle) -> f64| {
                num(mean_of(&ms.iter().map(|m| f(m)).collect::<Vec<_>>()))
            };
            let (labeled, rate) = match ms.first() {
                Some(m) => {
                    let c = m.confusion;
                    let pos = c.tp + c.fn_;
                    (
                        c.total().to_string(),
                        num(Some(pos as f64 / c.total().max(1) as f64)),
                    )
                }
                None => (NA.into(), NA.into()),
            };
            t.push(vec![
                n.to_string(),
                step.to_string(),
                ms.len().to_string(),
                num(mean_of(&f1)),
                num(sd_of(&f1)),
                col(|m| m.precision),
                col(|m| m.recall),
                col(|m| m.average_precision),
                labeled,
                rate,
            ]);
        }
    }
    t
}

fn temperature(names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "condition",
        "seed",
        "temperature",
        "ece_before",
        "ece_after",
        "delta_f1",
    ]);
    for &n in names {
        let g = Group::new(n, records);
        if g.ok.is_empty() {
            t.push(vec![
                n.to_string(),
                NA.into(),
                NA.into(),
                NA.into(),
                NA.into(),
                NA.into(),
            ]);
        }
        for r in &g.ok {
            let c = r
                .calibration
                .as_ref()
                .and_then(|c| c.paper_faithful.as_ref());
            t.push(vec![
                n.to_string(),
                r.seed.to_string(),
                num(c.map(|c| c.temperature)),
                num(c.map(|c| c.ece_before)),
                num(c.map(|c| c.ece_after)),
                num(c.map(|c| c.delta_f1)),
            ]);
        }
    }
    t
}

fn curves(names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&["condition", "seed", "epoch", "loss", "train_f1", "test_f1"]);
    for &n in names {
        let g = Group::new(n, records);
        let mut any = false;
        for r in &g.ok {
            for p in r.history.iter().flat_map(|h| &h.curve) {
                any = true;
                t.push(vec![
                    n.to_string(),
                    r.seed.to_string(),
                    p.epoch.to_string(),
                    num(Some(p.loss)),
                    num(Some(p.train_f1)),
                    num(Some(p.test_f1)),
                ]);
            }
        }
        if !any {
            t.push(vec![
                n.to_string(),
                NA.into(),
                NA.into(),
                NA.into(),
                NA.into(),
                NA.into(),
            ]);
        }
    }
    t
}

/// Per-step mean F1 of `a` minus `b`.
fn advantage(a: &str, b: &str, records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "timestep",
        "condition_a",
        "condition_b",
        "f1_a",
        "f1_b",
        "delta",
    ]);
    let ga = Group::new(a, records);
    let gb = Group::new(b, records);
    for step in TEST_MIN_STEP..=MAX_TIMESTEP {
        let fa = mean_of(&ga.step(step).iter().map(|m| m.f1).collect::<Vec<_>>());
        let fb = mean_of(&gb.step(step).iter().map(|m| m.f1).collect::<Vec<_>>());
        let d = fa.zip(fb).map(|(x, y)| x - y);
        t.push(vec![
            step.to_string(),
            a.into(),
            b.into(),
            num(fa),
            num(fb),
            num(d),
        ]);
    }
    t
}

fn importance(names: &[&str], records: &[RunRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "condition",
        "rank",
        "feature",
        "group",
        "importance_mean",
        "cumulative",
    ]);
    for &n in names {
        let g = Group::new(n, records);
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        let mut k = 0usize;
        for r in &g.ok {
            if let Some(imp) = &r.importance {
                k += 1;
                for &(f, v) in &imp.top {
                    *sums.entry(f).or_default() += v;
                }
            }
        }
        if k == 0 {
            t.push(vec![
                n.to_string(),
                NA.into(),
                NA.into(),
                NA.into(),
                NA.into(),
                NA.into(),
            ]);
            continue;
        }
        let mut v: Vec<(usize, f64)> = sums.into_iter().map(|(f, s)| (f, s / k as f64)).collect();
        v.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut cum = 0.0;
        for (rank, (f, m)) in v.into_iter().enumerate() {
            cum += m;
            let group = if f < LOCAL_FEATURES {
                "local"
            } else {
                "aggregate"
            };
            t.push(vec![
                n.to_string(),
                (rank + 1).to_string(),
                f.to_string(),
                group.into(),
                num(Some(m)),
                num(Some(cum)),
            ]);
        }
    }
    t
}

/// Writes every table and figure series that some condition or comparison
/// is tagged for, the comparison reports, and `manifest.json`.
pub fn emit_tables(
    spec: &ExperimentSpec,
    records: &[RunRecord],
    reports: &[ComparisonOutcome],
    outdir: &Path,
) -> Result<Manifest> {
    let mut files = Vec::new();
    for def in TABLES {
        let names: Vec<&str> = spec
            .conditions
            .iter()
            .filter(|c| c.tables.iter().any(|t| t == def.tag))
            .map(|c| c.name.as_str())
            .collect();
        let tagged: Vec<&ComparisonOutcome> = reports
            .iter()
            .filter(|o| o.tables.iter().any(|t| t == def.tag))
            .collect();
        let mut emit = |file: String,
                        table: CsvTable,
                        sources: Vec<String>,
                        description: &str|
         -> Result<()> {
            table.write(&outdir.join(&file))?;
            files.push(ManifestEntry {
                file,
                anchor: def.anchor.into(),
                description: description.into(),
                sources,
                rows: table.rows.len(),
            });
            Ok(())
        };
        let owned = || names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        if def.layout == Layout::Advantage {
            // A tagged comparison fixes the direction; otherwise the first
            // two tagged conditions in declaration order.
            let pair = match (tagged.first(), names.as_slice()) {
                (Some(o), _) => Some((o.a.as_str(), o.b.as_str())),
                (None, [a, b, ..]) => Some((*a, *b)),
                _ => None,
            };
            if let Some((a, b)) = pair {
                emit(
                    def.file.into(),
                    advantage(a, b, records),
                    vec![a.into(), b.into()],
                    def.description,
                )?;
            }
        } else if !names.is_empty() {
            let table = match def.layout {
                Layout::Summary => summary(spec, &names, records),
                Layout::Comparisons => comparisons(&tagged),
                Layout::Calibration => calibration(&names, records),
                Layout::Cost => cost(spec, &names, records),
                Layout::PerStep => per_step(&names, records),
                Layout::Temperature => temperature(&names, records),
                Layout::Curves => curves(&names, records),
                Layout::Advantage => unreachable!(),
                Layout::Importance => importance(&names, records),
            };
            if def.layout != Layout::Comparisons {
                emit(def.file.into(), table, owned(), def.description)?;
            }
        }
        if !tagged.is_empty() {
            let file = if def.layout == Layout::Comparisons {
                def.file.to_string()
            } else {
                format!("{}_tests.csv", def.tag)
            };
            let sources = tagged.iter().map(|o| o.name.clone()).collect();
            emit(file, comparisons(&tagged), sources, "statistical tests")?;
        }
    }
    write_atomic(
        &outdir.join("comparisons.json"),
        serde_json::to_string_pretty(reports)?.as_bytes(),
    )?;
    for &(file, anchor, description) in ANALYSIS_FILES {
        if outdir.join(file).is_file() {
            files.push(ManifestEntry {
                file: file.into(),
                anchor: anchor.into(),
                description: description.into(),
                sources: vec![],
                rows: 0,
            });
        }
    }
    let manifest = Manifest {
        experiment: spec.name.clone(),
        files,
    };
    write_atomic(
        &outdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Confusion, PerStepReport};
    use crate::runner::record::sample_record;

    fn spec(tags: &[(&str, &str)]) -> ExperimentSpec {
        let mut text = String::from("name = \"e\"\nseeds = [0, 1, 2]\n");
        for (name, tag) in tags {
            text.push_str(&format!(
                "[[conditions]]\nname = \"{name}\"\nmodel = \"sage\"\ntables = [\"{tag}\"]\n"
            ));
        }
        ExperimentSpec::from_toml(&text).unwrap()
    }

    fn read(path: &Path) -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.records()
            .map(|x| x.unwrap().iter().map(String::from).collect())
            .collect()
    }

    #[test]
    fn main_table_has_one_row_per_condition() {
        let s = spec(&[
            ("mlp", "table5"),
            ("gcn", "table5"),
            ("sage", "table5"),
            ("gat", "table5"),
        ]);
        let mut recs = Vec::new();
        for c in ["mlp", "gcn", "sage", "gat"] {
            for seed in 0..3 {
                recs.push(sample_record(c, seed, 0.5 + 0.1 * seed as f64));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let m = emit_tables(&s, &recs, &[], dir.path()).unwrap();
        let rows = read(&dir.path().join("table5_main.csv"));
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2][0], "sage");
        assert_eq!(rows[2][5], "3");
        assert_eq!(rows[2][7], "0.600000");
        // Median seed's interval.
        assert_eq!(rows[2][9], "0.590000");
        assert!(m
            .files
            .iter()
            .any(|f| f.file == "table5_main.csv" && f.anchor == "Table 5" && f.rows == 4));
        assert!(dir.path().join("manifest.json").is_file());
    }

    #[test]
    fn missing_cells_are_na_not_omitted() {
        let s = spec(&[("sage", "table5"), ("gat", "table5")]);
        let mut recs = vec![sample_record("sage", 0, 0.7)];
        let mut failed = sample_record("gat", 0, 0.0);
        failed.status = crate::runner::record::CellStatus::Failed;
        failed.metrics = None;
        recs.push(failed);
        let dir = tempfile::tempdir().unwrap();
        emit_tables(&s, &recs, &[], dir.path()).unwrap();
        let rows = read(&dir.path().join("table5_main.csv"));
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1][0], "gat");
        assert_eq!(rows[1][5], "0");
        assert_eq!(rows[1][6], "1");
        assert_eq!(rows[1][7], NA);
        // A single seed has no standard deviation.
        assert_eq!(rows[0][8], NA);
    }

    #[test]
    fn per_step_series_has_fifteen_rows_per_condition() {
        let s = spec(&[("sage", "fig2"), ("mlp", "fig2")]);
        let mut r = sample_record("sage", 0, 0.5);
        let m = r.metrics.clone().unwrap();
        let mut steps = BTreeMap::new();
        steps.insert(
            35,
            MetricBundle {
                confusion: Confusion {
                    tp: 1,
                    fp: 0,
                    fn_: 1,
                    tn: 2,
                },
                ..m.clone()
            },
        );
        r.per_step = Some(PerStepReport {
            steps,
            mean_f1_35_42: Some(0.5),
            mean_f1_43_49: None,
        });
        let dir = tempfile::tempdir().unwrap();
        emit_tables(&s, &[r], &[], dir.path()).unwrap();
        let rows = read(&dir.path().join("fig2_per_step.csv"));
        assert_eq!(rows.len(), 30);
        assert_eq!(rows[0][1], "35");
        assert_eq!(rows[0][9], "0.500000");
        assert_eq!(rows[1][3], NA);
        assert!(rows[15..].iter().all(|r| r[0] == "mlp" && r[2] == "0"));
    }
}
