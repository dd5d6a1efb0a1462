//! Benchmark harness: synthetic graphs, timed runs, sweeps and reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{graph_stats, load_edge_list, CooGraph, GraphStats};
use crate::ledger::{LedgerEvent, MemoryLedger};
use crate::models::{init_weights, network_forward, random_features, LayerReport, ModelConfig, PreparedGraph};
use crate::tensor::{FeatureMatrix, LayerWeights};

/// `round(V * avg_degree)` directed edges with both endpoints uniform over
/// the vertices, from a Xoshiro256++ stream seeded with `seed`.
pub fn gen_synthetic(num_vertices: u32, avg_degree: f64, seed: u64) -> CooGraph {
    assert!(num_vertices >= 1, "synthetic graph needs at least one vertex");
    assert!(avg_degree >= 0.0, "average degree must be non-negative");
    let num_edges = (num_vertices as f64 * avg_degree).round() as usize;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut src = Vec::with_capacity(num_edges);
    let mut dst = Vec::with_capacity(num_edges);
    for _ in 0..num_edges {
        src.push(rng.gen_range(0..num_vertices));
        dst.push(rng.gen_range(0..num_vertices));
    }
    CooGraph::from_parts_unchecked(num_vertices, src, dst)
}

/// Where a benchmark graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    File(PathBuf),
    Synthetic { num_vertices: u32, avg_degree: f64 },
}

impl GraphSource {
    /// Desk-scale stand-in for a small, sparse citation graph.
    pub const PUBMED_LIKE: GraphSource = GraphSource::Synthetic {
        num_vertices: 20_000,
        avg_degree: 4.5,
    };
    /// Desk-scale stand-in for a dense social graph.
    pub const REDDIT_LIKE: GraphSource = GraphSource::Synthetic {
        num_vertices: 50_000,
        avg_degree: 200.0,
    };

    pub fn load(&self, seed: u64) -> Result<CooGraph> {
        match self {
            GraphSource::File(p) => load_edge_list(p),
            GraphSource::Synthetic {
                num_vertices,
                avg_degree,
            } => Ok(gen_synthetic(*num_vertices, *avg_degree, seed)),
        }
    }
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSource::File(p) => write!(f, "{}", p.display()),
            GraphSource::Synthetic {
                num_vertices,
                avg_degree,
            } => write!(f, "synthetic:{num_vertices},{avg_degree}"),
        }
    }
}

impl FromStr for GraphSource {
    type Err = Error;

    /// Accepts `synthetic:V,deg`, the presets `pubmed-like` and
    /// `reddit-like`, or an edge-list path.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pubmed-like" => return Ok(Self::PUBMED_LIKE),
            "reddit-like" => return Ok(Self::REDDIT_LIKE),
            _ => {}
        }
        let Some(spec) = s.strip_prefix("synthetic:") else {
            return Ok(GraphSource::File(PathBuf::from(s)));
        };
        let bad = || Error::Config(format!("expected synthetic:V,deg, got `{s}`"));
        let (v, d) = spec.split_once(',').ok_or_else(bad)?;
        let num_vertices: u32 = v.trim().parse().map_err(|_| bad())?;
        let avg_degree: f64 = d.trim().parse().map_err(|_| bad())?;
        if num_vertices == 0 || avg_degree < 0.0 || !avg_degree.is_finite() {
            return Err(bad());
        }
        Ok(GraphSource::Synthetic {
            num_vertices,
            avg_degree,
        })
    }
}

/// Statistics of the graph behind `source`.
pub fn cmd_stats(source: &GraphSource, seed: u64) -> Result<GraphStats> {
    graph_stats(&source.load(seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Oom,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Ok => "ok",
            Outcome::Oom => "oom",
        })
    }
}

/// Median phase times of one layer, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerTimings {
    pub comb_ms: f64,
    pub coeff_ms: f64,
    pub agg_ms: f64,
    pub concat_ms: f64,
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config: ModelConfig,
    pub graph: String,
    pub seed: u64,
    pub num_vertices: usize,
    pub num_edges: usize,
    /// Empty when the run ran out of budget.
    pub layers: Vec<LayerTimings>,
    /// Median COO to CSR conversion time; CSR scheme only.
    pub conversion_ms: Option<f64>,
    pub peak_bytes: u64,
    pub outcome: Outcome,
    /// 64-bit FNV-1a of the output matrix bytes for successful runs.
    pub checksum: Option<u64>,
}

/// Inputs of [`run_benchmark`] that are not part of the model config.
#[derive(Debug, Clone)]
pub struct RunOptions<'a> {
    pub graph_id: String,
    pub budget_bytes: Option<u64>,
    pub repetitions: usize,
    pub seed: u64,
    /// Input features; random `V x hidden` features from `seed` when absent.
    pub features: Option<&'a FeatureMatrix<f32>>,
    /// Layer weights; generated from `seed` when absent.
    pub weights: Option<&'a [LayerWeights<f32>]>,
}

impl RunOptions<'_> {
    pub fn new(graph_id: impl Into<String>, seed: u64) -> Self {
        Self {
            graph_id: graph_id.into(),
            budget_bytes: None,
            repetitions: 1,
            seed,
            features: None,
            weights: None,
        }
    }
}

fn median(mut xs: Vec<Duration>) -> f64 {
    xs.sort();
    let n = xs.len();
    let mid = if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    };
    mid.as_secs_f64() * 1e3
}

/// Default input features for a graph when none are supplied.
pub fn default_features(num_vertices: usize, cfg: &ModelConfig, seed: u64) -> FeatureMatrix<f32> {
    random_features(num_vertices, cfg.hidden_dim, seed)
}

/// Widest chunk width that keeps a run of `cfg` within `budget_bytes`.
pub fn plan_width(g: &CooGraph, cfg: &ModelConfig, in_dim: usize, budget_bytes: u64) -> Result<usize> {
    PreparedGraph::<f32>::new(g, cfg.model, cfg.scheme).plan_chunk_width(cfg, in_dim, budget_bytes)
}

/// Budget-independent memory profile of `cfg` on `g`.
pub fn memory_profile(g: &CooGraph, cfg: &ModelConfig, in_dim: usize) -> crate::models::MemoryProfile {
    PreparedGraph::<f32>::new(g, cfg.model, cfg.scheme).memory_profile(cfg, in_dim)
}

/// One untimed warm-up pass followed by `repetitions` timed passes, each on
/// a fresh ledger with the same budget. Running out of budget is recorded
/// as [`Outcome::Oom`], not returned as an error.
pub fn run_benchmark(g: &CooGraph, cfg: &ModelConfig, opts: &RunOptions<'_>) -> Result<RunRecord> {
    cfg.validate()?;
    if opts.repetitions == 0 {
        return Err(Error::Config("at least one repetition required".into()));
    }
    let owned;
    let features = match opts.features {
        Some(f) => f,
        None => {
            owned = default_features(g.num_vertices(), cfg, opts.seed);
            &owned
        }
    };
    let generated;
    let weights = match opts.weights {
        Some(w) => w,
        None => {
            generated = init_weights::<f32>(cfg, features.cols(), opts.seed);
            &generated
        }
    };

    let mut record = RunRecord {
        config: *cfg,
        graph: opts.graph_id.clone(),
        seed: opts.seed,
        num_vertices: g.num_vertices(),
        num_edges: g.num_edges(),
        layers: Vec::new(),
        conversion_ms: None,
        peak_bytes: 0,
        outcome: Outcome::Ok,
        checksum: None,
    };

    let mut conversions = Vec::new();
    let mut per_layer: Vec<[Vec<Duration>; 4]> = vec![Default::default(); cfg.num_layers];
    let mut layer_peaks: Vec<u64> = vec![0; cfg.num_layers];
    for rep in 0..=opts.repetitions {
        let prepared = PreparedGraph::<f32>::new(g, cfg.model, cfg.scheme);
        let mut ledger = MemoryLedger::with_optional_budget(opts.budget_bytes);
        match network_forward(&prepared, features, weights, cfg, &mut ledger) {
            Ok(out) => {
                record.peak_bytes = out.peak_bytes;
                record.checksum = Some(out.output.checksum());
                if rep == 0 {
                    continue;
                }
                conversions.extend(prepared.conversion_time());
                for (k, LayerReport { times, peak_bytes, .. }) in out.layers.iter().enumerate() {
                    let slot = &mut per_layer[k];
                    slot[0].push(times.combination);
                    slot[1].push(times.coefficients);
                    slot[2].push(times.aggregation);
                    slot[3].push(times.concat);
                    layer_peaks[k] = *peak_bytes;
                }
            }
            Err(e) if e.is_oom() => {
                record.outcome = Outcome::Oom;
                record.peak_bytes = ledger.peak_bytes();
                record.checksum = None;
                conversions.extend(prepared.conversion_time());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if !conversions.is_empty() {
        record.conversion_ms = Some(median(conversions));
    }
    if record.outcome == Outcome::Ok {
        record.layers = per_layer
            .into_iter()
            .zip(layer_peaks)
            .map(|([comb, coeff, agg, concat], peak_bytes)| LayerTimings {
                comb_ms: median(comb),
                coeff_ms: median(coeff),
                agg_ms: median(agg),
                concat_ms: median(concat),
                peak_bytes,
            })
            .collect();
    }
    Ok(record)
}

/// Ledger events of a single pass, whether or not it fits the budget.
pub fn trace_events(g: &CooGraph, cfg: &ModelConfig, opts: &RunOptions<'_>) -> Result<Vec<LedgerEvent>> {
    cfg.validate()?;
    let owned;
    let features = match opts.features {
        Some(f) => f,
        None => {
            owned = default_features(g.num_vertices(), cfg, opts.seed);
            &owned
        }
    };
    let generated;
    let weights = match opts.weights {
        Some(w) => w,
        None => {
            generated = init_weights::<f32>(cfg, features.cols(), opts.seed);
            &generated
        }
    };
    let prepared = PreparedGraph::<f32>::new(g, cfg.model, cfg.scheme);
    let mut ledger = MemoryLedger::with_optional_budget(opts.budget_bytes).record_events();
    match network_forward(&prepared, features, weights, cfg, &mut ledger) {
        Ok(_) => {}
        Err(e) if e.is_oom() => {}
        Err(e) => return Err(e),
    }
    Ok(ledger.events().to_vec())
}

/// Runs `cfgs` on the same graph, sequentially or one thread per config.
/// Records come back in `cfgs` order either way.
pub fn run_sweep(g: &CooGraph, cfgs: &[ModelConfig], opts: &RunOptions<'_>, parallel: bool) -> Result<Vec<RunRecord>> {
    if !parallel {
        return cfgs.iter().map(|c| run_benchmark(g, c, opts)).collect();
    }
    thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|c| s.spawn(move || run_benchmark(g, c, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// One report row: a layer of a successful run, or a whole failed run.
#[derive(Debug, Serialize)]
struct ReportRow {
    model: String,
    scheme: String,
    #[serde(rename = "V")]
    num_vertices: usize,
    #[serde(rename = "E")]
    num_edges: usize,
    hidden: usize,
    chunk_width: usize,
    layer: Option<usize>,
    comb_ms: Option<String>,
    coeff_ms: Option<String>,
    agg_ms: Option<String>,
    concat_ms: Option<String>,
    conversion_ms: Option<String>,
    peak_bytes: u64,
    outcome: String,
}

fn ms(x: f64) -> String {
    format!("{x:.6}")
}

fn report_rows(records: &[RunRecord]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for r in records {
        let row = |layer: Option<usize>, t: Option<&LayerTimings>| ReportRow {
            model: r.config.model.to_string(),
            scheme: r.config.scheme.to_string(),
            num_vertices: r.num_vertices,
            num_edges: r.num_edges,
            hidden: r.config.hidden_dim,
            chunk_width: r.config.chunk_width,
            layer,
            comb_ms: t.map(|t| ms(t.comb_ms)),
            coeff_ms: t.map(|t| ms(t.coeff_ms)),
            agg_ms: t.map(|t| ms(t.agg_ms)),
            concat_ms: t.map(|t| ms(t.concat_ms)),
            conversion_ms: match r.outcome {
                Outcome::Ok => r.conversion_ms.map(ms),
                Outcome::Oom => None,
            },
            peak_bytes: t.map_or(r.peak_bytes, |t| t.peak_bytes),
            outcome: r.outcome.to_string(),
        };
        match r.outcome {
            Outcome::Ok => rows.extend(r.layers.iter().enumerate().map(|(k, t)| row(Some(k), Some(t)))),
            Outcome::Oom => rows.push(row(None, None)),
        }
    }
    rows
}

/// Writes the records as CSV or JSON. Successful runs produce one row per
/// layer; out-of-budget runs produce a single row with empty timings.
pub fn write_report<W: Write>(records: &[RunRecord], format: ReportFormat, out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("no records to report".into()));
    }
    let rows = report_rows(records);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn emit_report(records: &[RunRecord], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_report(records, format, &mut w)?;
    w.flush()?;
    Ok(())
}
