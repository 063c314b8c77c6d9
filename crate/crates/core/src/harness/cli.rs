use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adgraph::HeteroGraph;
use crate::error::{Error, Result};
use crate::evalkit::MetricsReport;
use crate::numkit::Checkpoint;
use crate::synthgen::{gen_interactions, gen_world, Dataset};

use super::ablate::{run_ablation, ArmSpec};
use super::config::{Arm, RunConfig};
use super::data::{split_occurrences, train_graph, Prepared};
use super::eval::{evaluate, retrieve};
use super::train::train;

/// Exit status of an ablation whose ordering checks fail.
pub const EXIT_ORDERING: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "adgt", about = "Cross-lingual query-ad matching with graph-refined dual encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra config overrides, `key=value`.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into <out>/data (or data_dir).
    GenData,
    /// Build the train-split graph into <out>/graph.tsv.
    BuildGraph,
    /// Train with early stopping; writes trace.csv, checkpoint.txt.
    Train,
    /// Evaluate a checkpoint on the test split; writes report.tsv.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Top-k ads for one query string.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate arms over seeds; writes results.tsv, summary.tsv.
    Ablate {
        #[arg(long, default_value = "FULL,ENCODER_ONLY,GAT_ONLY")]
        arms: String,
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Dataset plus graph: `<out>/graph.tsv` when present, else rebuilt.
fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let dataset = Dataset::load(&cfg.data_path())?;
    let gpath = cfg.out_dir.join("graph.tsv");
    let graph = if gpath.exists() { Some(HeteroGraph::load(&gpath)?) } else { None };
    Prepared::with_graph(dataset, cfg, graph)
}

fn checkpoint_path(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint.txt"))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::config(format!("bad {what} {x:?}"))))
        .collect()
}

fn execute(cli: &Cli) -> Result<i32> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::GenData => {
            let world = gen_world(&cfg.synth, cfg.seed)?;
            let logs = gen_interactions(&world, cfg.seed);
            let ds = Dataset::from_world(&world, &logs);
            ds.save(&cfg.data_path())?;
            println!(
                "wrote {} occurrences, {} ads, {} clicks to {}",
                ds.occurrences.len(),
                ds.ads.len(),
                ds.clicks.len(),
                cfg.data_path().display()
            );
        }
        Command::BuildGraph => {
            let ds = Dataset::load(&cfg.data_path())?;
            let (keys, split) = split_occurrences(&ds, &cfg)?;
            let g = train_graph(&ds, &keys, &split, &cfg)?;
            let path = cfg.out_dir.join("graph.tsv");
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            g.save(&path)?;
            let st = g.degree_stats();
            println!("wrote {} nodes, {} edges to {}", g.total_nodes(), st.total_edges, path.display());
        }
        Command::Train => {
            let prep = prepare(&cfg)?;
            let out = train(&cfg, &prep)?;
            out.save(&cfg.out_dir)?;
            write(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
            let s = &out.summary;
            println!(
                "best epoch {} val {:.5} (initial {:.5}); {} epochs, {} steps",
                s.best_epoch, s.best_val_loss, s.initial_val_loss, s.epochs_run, s.steps
            );
        }
        Command::Eval { checkpoint } => {
            let prep = prepare(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint_path(&cfg, checkpoint))?;
            let r = evaluate(&cfg, &prep, &ckpt)?;
            let text = format!("{}\n{}\n", MetricsReport::tsv_header(), r.tsv_row());
            write(&cfg.out_dir.join("report.tsv"), &text)?;
            print!("{text}");
        }
        Command::Retrieve { query, lang, k, checkpoint } => {
            let mut prep = prepare(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint_path(&cfg, checkpoint))?;
            for (i, ad) in retrieve(&cfg, &mut prep, &ckpt, query, lang, *k)?.iter().enumerate() {
                println!("{}\t{}\t{:.6}\t{}", i + 1, ad.ad_id, ad.score, ad.text);
            }
        }
        Command::Ablate { arms, seeds } => {
            let arms: Vec<Arm> = parse_list(arms, "arm")?;
            let seeds: Vec<u64> = parse_list(seeds, "seed")?;
            let specs: Vec<ArmSpec> = arms.into_iter().map(ArmSpec::new).collect();
            let ds = Dataset::load(&cfg.data_path())?;
            let out = run_ablation(&cfg, &ds, &specs, &seeds)?;
            out.save(&cfg.out_dir)?;
            print!("{}", out.summary_tsv());
            let checks = out.ordering();
            for c in &checks {
                println!("{}\t{}\t{}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !checks.iter().all(|c| c.passed) {
                return Ok(EXIT_ORDERING);
            }
        }
    }
    Ok(0)
}

/// Runs the command line `args` (program name first) and returns the
/// exit status: 0 ok, 1 usage or config, 2 data, 3 numeric, 4 ablation
/// ordering not met.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
