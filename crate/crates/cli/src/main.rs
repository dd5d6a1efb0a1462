use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chunkgnn::bench::{
    cmd_stats, emit_report, plan_width, run_sweep, trace_events, write_report, GraphSource, ReportFormat, RunOptions,
    RunRecord,
};
use chunkgnn::graph::CooGraph;
use chunkgnn::models::{load_weights, ModelConfig, ModelKind, Scheme};
use chunkgnn::tensor::load_feature_file;
use chunkgnn::{Features, Weights};

#[derive(Parser)]
#[command(name = "chunkgnn", version, about = "Memory-budgeted GNN inference benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark one configuration.
    Run(RunArgs),
    /// Benchmark a list of chunk widths on the same graph.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        chunk_widths: Vec<Width>,
        /// Run the configurations on separate threads.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print vertex count, edge count and average degree.
    Stats {
        #[arg(long)]
        graph: GraphSource,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report the widest chunk width that fits a byte budget.
    Plan {
        #[arg(long)]
        budget_bytes: u64,
        #[arg(long)]
        graph: GraphSource,
        #[arg(long)]
        hidden: usize,
        #[arg(long, default_value = "gcn")]
        model: ModelKind,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value = "coo")]
        scheme: Scheme,
        /// Input feature width; defaults to the hidden dimension.
        #[arg(long)]
        in_dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// A fixed chunk width, or `auto` to let the planner pick one for the budget.
#[derive(Clone, Copy, Debug)]
enum Width {
    Fixed(usize),
    Auto,
}

impl std::str::FromStr for Width {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Width::Auto);
        }
        s.parse().map(Width::Fixed).map_err(|_| format!("`{s}` is not a width or `auto`"))
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "gcn")]
    model: ModelKind,
    /// Edge-list path, `synthetic:V,deg`, `pubmed-like` or `reddit-like`.
    #[arg(long)]
    graph: GraphSource,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Columns per decomposition chunk; defaults to the hidden dimension.
    #[arg(long)]
    chunk_width: Option<Width>,
    #[arg(long, default_value = "coo")]
    scheme: Scheme,
    #[arg(long)]
    budget_bytes: Option<u64>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Input features in the binary feature format.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Weight manifest; weights are generated from the seed when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write the ledger events of one pass as `<alloc|free> <bytes> <label>` lines.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

struct Loaded {
    graph: CooGraph,
    graph_id: String,
    features: Option<Features>,
    weights: Option<Vec<Weights>>,
}

impl RunArgs {
    fn load(&self) -> Result<Loaded> {
        let graph = self
            .graph
            .load(self.seed)
            .with_context(|| format!("loading graph {}", self.graph))?;
        let features = self
            .features
            .as_ref()
            .map(|p| load_feature_file(p).with_context(|| format!("loading features {}", p.display())))
            .transpose()?;
        let weights = self
            .weights
            .as_ref()
            .map(|p| load_weights(self.model, p).with_context(|| format!("loading weights {}", p.display())))
            .transpose()?;
        Ok(Loaded {
            graph,
            graph_id: self.graph.to_string(),
            features,
            weights,
        })
    }

    fn base_config(&self) -> ModelConfig {
        ModelConfig {
            model: self.model,
            num_layers: self.layers,
            hidden_dim: self.hidden,
            chunk_width: self.hidden,
            scheme: self.scheme,
        }
    }

    fn resolve(&self, loaded: &Loaded, width: Width) -> Result<ModelConfig> {
        let base = self.base_config();
        let width = match width {
            Width::Fixed(w) => w,
            Width::Auto => {
                let budget = self.budget_bytes.context("--chunk-width auto needs --budget-bytes")?;
                let in_dim = loaded.features.as_ref().map_or(self.hidden, |f| f.cols());
                match plan_width(&loaded.graph, &base, in_dim, budget) {
                    Ok(w) => w,
                    Err(e) => {
                        eprintln!("planner: {e}; running monolithic");
                        self.hidden
                    }
                }
            }
        };
        let cfg = base.with_chunk_width(width);
        cfg.validate()?;
        Ok(cfg)
    }

    fn options<'a>(&self, loaded: &'a Loaded) -> RunOptions<'a> {
        RunOptions {
            graph_id: loaded.graph_id.clone(),
            budget_bytes: self.budget_bytes,
            repetitions: self.reps,
            seed: self.seed,
            features: loaded.features.as_ref(),
            weights: loaded.weights.as_deref(),
        }
    }
}

fn summarize(records: &[RunRecord]) {
    for r in records {
        let checksum = r.checksum.map_or_else(|| "-".to_string(), |c| format!("{c:016x}"));
        let mut timing = String::new();
        if !r.layers.is_empty() {
            let agg: f64 = r.layers.iter().map(|l| l.agg_ms).sum();
            let total: f64 = r.layers.iter().map(|l| l.comb_ms + l.coeff_ms + l.agg_ms + l.concat_ms).sum();
            timing = format!(" agg_ms={agg:.3} total_ms={total:.3} agg_share={:.1}%", 100.0 * agg / total);
            if let Some(c) = r.conversion_ms {
                timing.push_str(&format!(" conversion_ms={c:.3} agg+conversion_ms={:.3}", agg + c));
            }
        }
        eprintln!(
            "{} {} hidden={} w={} outcome={} peak_bytes={}{timing} checksum={checksum}",
            r.config.model, r.config.scheme, r.config.hidden_dim, r.config.chunk_width, r.outcome, r.peak_bytes
        );
    }
}

fn report(records: &[RunRecord], args: &RunArgs) -> Result<()> {
    summarize(records);
    match &args.out {
        Some(path) => emit_report(records, args.format, path).with_context(|| format!("writing {}", path.display()))?,
        None => write_report(records, args.format, io::stdout().lock())?,
    }
    Ok(())
}

fn run(args: &RunArgs, widths: &[Width], parallel: bool) -> Result<()> {
    let loaded = args.load()?;
    let cfgs = widths
        .iter()
        .map(|&w| args.resolve(&loaded, w))
        .collect::<Result<Vec<_>>>()?;
    let opts = args.options(&loaded);
    if let Some(path) = &args.event_log {
        let events = trace_events(&loaded.graph, &cfgs[0], &opts)?;
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for ev in &events {
            writeln!(w, "{ev}")?;
        }
        w.flush()?;
    }
    let records = run_sweep(&loaded.graph, &cfgs, &opts, parallel)?;
    report(&records, args)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let width = args.chunk_width.unwrap_or(Width::Fixed(args.hidden));
            run(&args, &[width], false)
        }
        Command::Sweep {
            chunk_widths,
            parallel,
            run: args,
        } => {
            if args.chunk_width.is_some() {
                bail!("sweep takes --chunk-widths, not --chunk-width");
            }
            run(&args, &chunk_widths, parallel)
        }
        Command::Stats { graph, seed } => {
            let stats = cmd_stats(&graph, seed).with_context(|| format!("reading {graph}"))?;
            println!("{stats}");
            Ok(())
        }
        Command::Plan {
            budget_bytes,
            graph,
            hidden,
            model,
            layers,
            scheme,
            in_dim,
            seed,
        } => {
            let g = graph.load(seed).with_context(|| format!("loading graph {graph}"))?;
            let cfg = ModelConfig {
                model,
                num_layers: layers,
                hidden_dim: hidden,
                chunk_width: hidden,
                scheme,
            };
            cfg.validate()?;
            match plan_width(&g, &cfg, in_dim.unwrap_or(hidden), budget_bytes) {
                Ok(w) => println!("chunk_width {w} chunks {}", hidden.div_ceil(w)),
                Err(e) => {
                    println!("infeasible: {e}");
                    std::process::exit(2);
                }
            }
            Ok(())
        }
    }
}
