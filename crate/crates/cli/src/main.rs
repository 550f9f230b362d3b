use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use inductive_bench::error::Error;
use inductive_bench::graph::{
    export_edge_list, graph_stats, induce_inductive_subgraph, GraphRecipe, Protocol,
    CLUSTERING_SAMPLE,
};
use inductive_bench::ingest::{dataset_summary, FitScope, TRAIN_MAX_STEP};
use inductive_bench::models::load_checkpoint;
use inductive_bench::runner::{
    compare_all, emit_tables, finalize, load_records, run, scopes_of, DataContext, DataSource,
    ExperimentSpec, RunOptions, RunRecord, SyntheticConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "inductive-bench",
    version,
    about = "Strict-inductive fraud-detection benchmark on the Elliptic graph"
)]
struct Cli {
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory holding the three Elliptic CSV files; overrides the spec
    /// and INDUCTIVE_BENCH_DATA.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Where standardised tables are cached (default: <data>/.cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Use a generated dataset with this many nodes instead of files.
    #[arg(long, value_name = "NODES")]
    synthetic: Option<usize>,
}

#[derive(Args)]
struct Overrides {
    /// Comma-separated seeds replacing the spec's seed list.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Protocol for every neural condition.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
    /// Scaler fit scope for every condition.
    #[arg(long, value_parser = parse_scope)]
    fit_scope: Option<FitScope>,
    /// Output root (default: the spec's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse the dataset, build the standardised cache and print its summary.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_scope, default_value = "full_population")]
        fit_scope: FitScope,
        /// Also write dataset_summary.json and dataset_per_step.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build graph variants, print their statistics and export edge lists.
    BuildGraphs {
        #[command(flatten)]
        data: DataArgs,
        /// Recipe kinds with default parameters: original, similarity,
        /// knn_feature, temporal, augmented, shuffled, empty.
        #[arg(long = "variant", default_value = "original")]
        variants: Vec<String>,
        /// Seed for stochastic recipes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `<variant>.edges` files; statistics only if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (condition, seed) cell of a spec and write its tables.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: Overrides,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Recompute cells even when a matching record exists.
        #[arg(long)]
        no_resume: bool,
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Statistical comparisons of a finished run.
    Compare {
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Rewrite the tables and manifest of an experiment directory.
    Report { dir: PathBuf },
    /// Re-run the leakage audit recorded in a model checkpoint.
    Audit { checkpoint: PathBuf },
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s.replace('-', "_").as_str() {
        "strict_inductive" | "inductive" => Ok(Protocol::StrictInductive),
        "transductive" => Ok(Protocol::Transductive),
        _ => Err(format!(
            "unknown protocol {s:?} (strict_inductive, transductive)"
        )),
    }
}

fn parse_scope(s: &str) -> Result<FitScope, String> {
    match s.replace('-', "_").as_str() {
        "full_population" => Ok(FitScope::FullPopulation),
        "train_only" => Ok(FitScope::TrainOnly),
        _ => Err(format!(
            "unknown fit scope {s:?} (full_population, train_only)"
        )),
    }
}

fn source(args: &DataArgs, spec: Option<&ExperimentSpec>) -> anyhow::Result<DataSource> {
    if let Some(nodes) = args.synthetic {
        let cfg = SyntheticConfig {
            nodes,
            ..SyntheticConfig::default()
        };
        cfg.validate()
            .map_err(|m| Error::Validation(format!("--synthetic: {m}")))?;
        return Ok(DataSource::Synthetic(cfg));
    }
    let mut data = spec.map(|s| s.data.clone()).unwrap_or_default();
    if let Some(root) = &args.data {
        data.root = Some(root.clone());
        data.synthetic = None;
    }
    if let Some(c) = &args.cache {
        data.cache_dir = Some(c.clone());
    }
    Ok(DataSource::resolve(&data)?)
}

fn apply(spec: &mut ExperimentSpec, o: &Overrides) -> anyhow::Result<()> {
    if let Some(seeds) = &o.seed_list {
        spec.seeds = seeds.clone();
    }
    if let Some(p) = o.protocol {
        for c in spec
            .conditions
            .iter_mut()
            .filter(|c| c.model.trains_encoder())
        {
            c.protocol = p;
        }
    }
    if let Some(s) = o.fit_scope {
        spec.data.fit_scope = s;
        for c in &mut spec.conditions {
            c.fit_scope = None;
        }
    }
    if let Some(out) = &o.out {
        spec.output_dir = out.clone();
    }
    spec.validate()?;
    Ok(())
}

fn load_spec(path: &Path, o: &Overrides) -> anyhow::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    apply(&mut spec, o)?;
    Ok(spec)
}

fn cmd_ingest(data: &DataArgs, fit_scope: FitScope, out: Option<&Path>) -> anyhow::Result<()> {
    let start = Instant::now();
    let ctx = DataContext::load(&source(data, None)?, &[fit_scope])?;
    let s = dataset_summary(&ctx.any().dataset, &ctx.masks);
    log::info!("ingested in {:.1}s", start.elapsed().as_secs_f64());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        std::fs::write(
            dir.join("dataset_summary.json"),
            serde_json::to_string_pretty(&s)?,
        )?;
        s.write_csv(&dir.join("dataset_per_step.csv"))?;
    }
    println!(
        "nodes {}  edges {}  labeled {}  illicit {}  licit {}  data hash {}",
        s.nodes,
        s.undirected_edges,
        s.totals.labeled(),
        s.totals.illicit,
        s.totals.licit,
        &ctx.data_hash[..16]
    );
    Ok(())
}

fn cmd_build_graphs(
    data: &DataArgs,
    variants: &[String],
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let ctx = DataContext::load(&source(data, None)?, &[FitScope::FullPopulation])?;
    let ds = &ctx.any().dataset;
    println!("variant\tnodes\tdirected_edges\tmean_degree\tmax_degree\tclustering\tcomponents");
    let show = |name: &str, g: &inductive_bench::graph::Graph| {
        let s = graph_stats(g, CLUSTERING_SAMPLE, &mut seeded(0));
        println!(
            "{name}\t{}\t{}\t{:.3}\t{}\t{:.4}\t{}",
            s.num_nodes,
            s.directed_edge_count,
            s.mean_degree,
            s.max_degree,
            s.clustering_estimate,
            s.connected_components
        );
    };
    for v in variants {
        let recipe: GraphRecipe = serde_json::from_value(serde_json::json!({ "kind": v }))
            .map_err(|e| Error::Validation(format!("--variant {v:?}: {e}")))?;
        let g = recipe.build(ds, &mut seeded(seed))?;
        show(v, &g);
        if let Some(dir) = out {
            let rs = recipe.is_stochastic().then_some(seed);
            export_edge_list(
                &g,
                &dir.join(format!("{v}.edges")),
                serde_json::to_value(&recipe)?,
                rs,
            )?;
        }
        if recipe == GraphRecipe::Original {
            let sub = induce_inductive_subgraph(&g, ds, TRAIN_MAX_STEP)?;
            show("induced", &sub.graph);
            if let Some(dir) = out {
                let b = serde_json::json!({ "kind": "induced", "t_max": TRAIN_MAX_STEP });
                export_edge_list(&sub.graph, &dir.join("induced.edges"), b, None)?;
            }
        }
    }
    Ok(())
}

/// Mean F1 per condition, in declaration order.
fn print_summary(spec: &ExperimentSpec, records: &[RunRecord]) {
    for c in &spec.conditions {
        let f1: Vec<f64> = records
            .iter()
            .filter(|r| r.condition == c.name)
            .filter_map(RunRecord::f1)
            .collect();
        let failed = records
            .iter()
            .filter(|r| r.condition == c.name && !r.is_ok())
            .count();
        let mean = if f1.is_empty() {
            f64::NAN
        } else {
            f1.iter().sum::<f64>() / f1.len() as f64
        };
        println!(
            "{:<24} F1 {mean:.4}  ok {}  failed {failed}",
            c.name,
            f1.len()
        );
    }
}

fn cmd_run(
    spec_path: &Path,
    data: &DataArgs,
    o: &Overrides,
    opts: RunOptions,
) -> anyhow::Result<ExitCode> {
    let spec = load_spec(spec_path, o)?;
    let ctx = DataContext::load(&source(data, Some(&spec))?, &scopes_of(&spec))?;
    let start = Instant::now();
    let records = run(&spec, &ctx, &spec.output_dir, &opts)?;
    let (reports, manifest) = finalize(&spec, &records, &spec.output_dir)?;
    print_summary(&spec, &records);
    for r in &reports {
        if let Some(e) = &r.error {
            log::warn!("comparison {}: {e}", r.name);
        }
    }
    let dir = spec.output_dir.join(&spec.name);
    println!(
        "{} records, {} files in {} ({:.1}s)",
        records.len(),
        manifest.files.len(),
        dir.display(),
        start.elapsed().as_secs_f64()
    );
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see their records for the error");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(spec_path: &Path, o: &Overrides) -> anyhow::Result<ExitCode> {
    let spec = load_spec(spec_path, o)?;
    let dir = spec.output_dir.join(&spec.name);
    let records = load_records(&dir)?;
    let reports = compare_all(&spec, &records);
    std::fs::write(
        dir.join("comparisons.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    let mut bad = false;
    for r in &reports {
        match (&r.report, &r.error) {
            (Some(s), _) => println!(
                "{:<28} delta {:+.4}  t {:+.3}  dof {:.1}  p {:.3e}  d {:+.2}  (n {}/{})",
                r.name, s.delta, s.t, s.dof, s.p_value, s.cohens_d, s.n_a, s.n_b
            ),
            (None, e) => {
                bad = true;
                println!(
                    "{:<28} error: {}",
                    r.name,
                    e.as_deref().unwrap_or("unknown")
                );
            }
        }
    }
    Ok(if bad {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_report(dir: &Path) -> anyhow::Result<()> {
    let spec = ExperimentSpec::load(&dir.join("spec.toml"))?;
    let records = load_records(dir)?;
    let reports = compare_all(&spec, &records);
    let manifest = emit_tables(&spec, &records, &reports, dir)?;
    for f in &manifest.files {
        println!("{:<32} {:<10} {}", f.file, f.anchor, f.description);
    }
    Ok(())
}

fn cmd_audit(path: &Path) -> anyhow::Result<()> {
    let model = load_checkpoint(path)?;
    let report = model.reaudit()?;
    let digest = report.digest();
    println!(
        "protocol {}  training graph {} nodes  pass {}  violations {}",
        model.config.protocol.as_str(),
        model.train_graph.num_nodes(),
        report.pass,
        report.violations.len()
    );
    for (kind, n) in &digest.counts {
        println!(
            "  {kind:?}: {n} (e.g. {})",
            digest.examples[kind].join(", ")
        );
    }
    Ok(())
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Ingest {
            data,
            fit_scope,
            out,
        } => cmd_ingest(&data, fit_scope, out.as_deref()).map(|_| ExitCode::SUCCESS),
        Cmd::BuildGraphs {
            data,
            variants,
            seed,
            out,
        } => {
            if variants.is_empty() {
                bail!(Error::Validation(
                    "--variant: at least one is required".into()
                ));
            }
            cmd_build_graphs(&data, &variants, seed, out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Cmd::Run {
            spec,
            data,
            overrides,
            jobs,
            no_resume,
            no_checkpoints,
        } => cmd_run(
            &spec,
            &data,
            &overrides,
            RunOptions {
                jobs,
                resume: !no_resume,
                checkpoints: !no_checkpoints,
            },
        ),
        Cmd::Compare { spec, overrides } => cmd_compare(&spec, &overrides),
        Cmd::Report { dir } => cmd_report(&dir).map(|_| ExitCode::SUCCESS),
        Cmd::Audit { checkpoint } => cmd_audit(&checkpoint).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_validation));
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
