//! GCN, GraphSAGE and GAT forward passes.
//!
//! Every layer runs combination before aggregation, so aggregation always
//! sees `hidden_dim` columns and the chunk width applies to that axis.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::aggregate::{decomposed_aggregate, gat_attention_coeffs, gcn_norm_coeffs, AggregatorKind, EdgeWeights, Topology};
use crate::error::{Error, Result};
use crate::graph::{add_self_loops, compute_degrees, csr_by_destination, CooGraph, CsrGraph};
use crate::ledger::{plan_chunk_width, MemoryLedger, PlanError};
use crate::scalar::Scalar;
use crate::tensor::{add_bias_in_place, load_feature_file, matmul, relu_in_place, save_feature_file, ChunkPlan, FeatureMatrix, LayerWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    /// GraphSAGE with mean aggregation and a root-weight update.
    Gsc,
    Gat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Gcn, ModelKind::Gsc, ModelKind::Gat];

    fn adds_self_loops(self) -> bool {
        matches!(self, ModelKind::Gcn | ModelKind::Gat)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gsc => "gsc",
            ModelKind::Gat => "gat",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "gsc" | "sage" | "graphsage" => Ok(ModelKind::Gsc),
            "gat" => Ok(ModelKind::Gat),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Aggregation scheme: gather-scatter over COO or segment-reduce over CSR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Coo,
    Csr,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Coo => "coo",
            Scheme::Csr => "csr",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coo" => Ok(Scheme::Coo),
            "csr" => Ok(Scheme::Csr),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub chunk_width: usize,
    pub scheme: Scheme,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("at least one layer required".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden dimension must be at least 1".into()));
        }
        if self.chunk_width == 0 || self.chunk_width > self.hidden_dim {
            return Err(Error::Config(format!(
                "chunk width {} outside [1, {}]",
                self.chunk_width, self.hidden_dim
            )));
        }
        Ok(())
    }

    pub fn with_chunk_width(self, chunk_width: usize) -> Self {
        Self { chunk_width, ..self }
    }

    pub fn chunk_plan(&self) -> Result<ChunkPlan> {
        ChunkPlan::new(self.hidden_dim, self.chunk_width)
    }
}

/// The graph as a model consumes it: self-looped where the model needs it,
/// converted to destination-keyed CSR for the CSR scheme, and with GCN
/// normalization coefficients computed once.
#[derive(Debug, Clone)]
pub struct PreparedGraph<T> {
    model: ModelKind,
    scheme: Scheme,
    coo: CooGraph,
    csr: Option<CsrGraph>,
    gcn_coeffs: Option<EdgeWeights<T>>,
    conversion: Option<Duration>,
}

impl<T: Scalar> PreparedGraph<T> {
    pub fn new(g: &CooGraph, model: ModelKind, scheme: Scheme) -> Self {
        let coo = if model.adds_self_loops() {
            add_self_loops(g)
        } else {
            g.clone()
        };
        let (csr, conversion) = match scheme {
            Scheme::Coo => (None, None),
            Scheme::Csr => {
                let start = Instant::now();
                let csr = csr_by_destination(&coo);
                (Some(csr), Some(start.elapsed()))
            }
        };
        let gcn_coeffs = (model == ModelKind::Gcn).then(|| gcn_norm_coeffs(&coo, &compute_degrees(&coo)));
        // warm the in-degree cache so it is part of the graph, not of a layer
        coo.in_degree();
        Self {
            model,
            scheme,
            coo,
            csr,
            gcn_coeffs,
            conversion,
        }
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Edge list the aggregation runs over (self-looped for GCN and GAT).
    pub fn coo(&self) -> &CooGraph {
        &self.coo
    }

    pub fn num_vertices(&self) -> usize {
        self.coo.num_vertices()
    }

    pub fn num_edges(&self) -> usize {
        self.coo.num_edges()
    }

    /// Wall time of the COO to CSR conversion, for the CSR scheme.
    pub fn conversion_time(&self) -> Option<Duration> {
        self.conversion
    }

    pub fn topology(&self) -> Topology<'_> {
        match &self.csr {
            Some(csr) => Topology::Csr(csr),
            None => Topology::Coo(&self.coo),
        }
    }

    pub fn tracked_bytes(&self) -> u64 {
        self.coo.tracked_bytes()
            + self.csr.as_ref().map_or(0, CsrGraph::tracked_bytes)
            + self.gcn_coeffs.as_ref().map_or(0, EdgeWeights::byte_size)
    }

    /// Ledger requirements of a forward pass, independent of chunk width.
    pub fn memory_profile(&self, cfg: &ModelConfig, in_dim: usize) -> MemoryProfile {
        let b = T::BYTES as u64;
        let v = self.num_vertices() as u64;
        let e = self.num_edges() as u64;
        let h = cfg.hidden_dim as u64;
        let graph = self.tracked_bytes();
        let mut aggregation_overhead = 0;
        let mut resident_peak = 0;
        for k in 0..cfg.num_layers {
            let input = v * if k == 0 { in_dim as u64 } else { h } * b;
            let base = graph + input + v * h * b;
            let coeffs = if cfg.model == ModelKind::Gat { e * b } else { 0 };
            let coeff_phase = if cfg.model == ModelKind::Gat { base + coeffs + 4 * v * b } else { base };
            let agg_phase = base + coeffs + v * h * b;
            aggregation_overhead = aggregation_overhead.max(agg_phase);
            resident_peak = resident_peak.max(coeff_phase).max(agg_phase);
        }
        let message_row_bytes = match self.scheme {
            Scheme::Coo => e * b,
            Scheme::Csr => 0,
        };
        MemoryProfile {
            aggregation_overhead,
            resident_peak,
            message_row_bytes,
        }
    }

    /// Widest chunk width whose forward pass fits in `budget_bytes`.
    pub fn plan_chunk_width(&self, cfg: &ModelConfig, in_dim: usize, budget_bytes: u64) -> Result<usize> {
        let profile = self.memory_profile(cfg, in_dim);
        if profile.resident_peak > budget_bytes {
            return Err(Error::Infeasible(format!(
                "resident buffers need {} bytes, budget is {budget_bytes}",
                profile.resident_peak
            )));
        }
        let edges = match self.scheme {
            Scheme::Coo => self.num_edges() as u64,
            Scheme::Csr => 0,
        };
        plan_chunk_width(budget_bytes, edges, cfg.hidden_dim, T::BYTES as u64, profile.aggregation_overhead)
            .map_err(|e: PlanError| Error::Infeasible(e.to_string()))
    }
}

/// Chunk-width-independent memory needs of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryProfile {
    /// Bytes resident while aggregation runs, excluding message buffers.
    pub aggregation_overhead: u64,
    /// Highest resident level outside message buffers over the whole pass.
    pub resident_peak: u64,
    /// Bytes of one message-buffer column (`E x elem` for COO, 0 for CSR).
    pub message_row_bytes: u64,
}

impl MemoryProfile {
    /// Ledger peak of a pass using chunk width `w`.
    pub fn peak_for_width(&self, w: usize) -> u64 {
        self.resident_peak
            .max(self.aggregation_overhead + self.message_row_bytes * w as u64)
    }
}

/// Wall time of each phase of one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub combination: Duration,
    pub coefficients: Duration,
    pub aggregation: Duration,
    /// Concat and update: assembling the chunk results and applying the
    /// layer's update (bias, or the GraphSAGE root map). Chunks are reduced
    /// straight into their output columns, so the concatenation itself
    /// moves no data.
    pub concat: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LayerReport {
    pub times: PhaseTimes,
    /// Highest ledger level reached during the layer.
    pub peak_bytes: u64,
    /// Highest message-buffer level during aggregation.
    pub peak_transient_bytes: u64,
}

/// One layer: combine, edge coefficients, decomposed aggregation, update.
///
/// `f` is expected to be charged to `ledger` by the caller. On success the
/// returned matrix is charged to `ledger`; on error everything this call
/// charged has been released.
pub fn layer_forward<T: Scalar>(
    g: &PreparedGraph<T>,
    f: &FeatureMatrix<T>,
    w: &LayerWeights<T>,
    cfg: &ModelConfig,
    ledger: &mut MemoryLedger,
) -> Result<(FeatureMatrix<T>, LayerReport)> {
    cfg.validate()?;
    w.validate()?;
    if cfg.model != g.model() || cfg.scheme != g.scheme() {
        return Err(Error::Config(format!(
            "graph prepared for {}/{}, config is {}/{}",
            g.model(),
            g.scheme(),
            cfg.model,
            cfg.scheme
        )));
    }
    if f.rows() != g.num_vertices() || f.cols() != w.in_dim() || w.out_dim() != cfg.hidden_dim {
        return Err(Error::dim(format!(
            "layer maps {}x{} through {}x{} weights to hidden {}",
            f.rows(),
            f.cols(),
            w.in_dim(),
            w.out_dim(),
            cfg.hidden_dim
        )));
    }
    let base = ledger.current_bytes();
    ledger.open_window();
    let res = layer_forward_inner(g, f, w, cfg, ledger);
    let above = ledger.close_window();
    match res {
        Ok((out, times, peak_transient_bytes)) => Ok((
            out,
            LayerReport {
                times,
                peak_bytes: base + above,
                peak_transient_bytes,
            },
        )),
        Err(e) => {
            ledger.release_to(base, "layer.unwind");
            Err(e)
        }
    }
}

fn layer_forward_inner<T: Scalar>(
    g: &PreparedGraph<T>,
    f: &FeatureMatrix<T>,
    w: &LayerWeights<T>,
    cfg: &ModelConfig,
    ledger: &mut MemoryLedger,
) -> Result<(FeatureMatrix<T>, PhaseTimes, u64)> {
    let mut times = PhaseTimes::default();
    let hidden_bytes = FeatureMatrix::<T>::bytes_for(f.rows(), cfg.hidden_dim);

    let t = Instant::now();
    ledger.track_alloc(hidden_bytes, "layer.combined")?;
    let mut combined = matmul(f, &w.w_matrix)?;
    times.combination = t.elapsed();

    let t = Instant::now();
    let attention;
    let (kind, weights) = match cfg.model {
        ModelKind::Gcn => (AggregatorKind::WeightedSum, g.gcn_coeffs.as_ref()),
        ModelKind::Gsc => (AggregatorKind::Mean, None),
        ModelKind::Gat => {
            attention = gat_attention_coeffs(g.coo(), &combined, w, ledger)?;
            (AggregatorKind::WeightedSum, Some(&attention))
        }
    };
    times.coefficients = t.elapsed();

    let agg = decomposed_aggregate(g.topology(), &combined, &cfg.chunk_plan()?, kind, weights, ledger)?;
    times.aggregation = agg.elapsed;
    let mut aggregated = agg.output;

    let t = Instant::now();
    let out = match cfg.model {
        ModelKind::Gcn | ModelKind::Gat => {
            add_bias_in_place(&mut aggregated, &w.bias);
            ledger.track_free(hidden_bytes, "layer.combined");
            drop(combined);
            aggregated
        }
        ModelKind::Gsc => {
            let root = w
                .root
                .as_ref()
                .ok_or_else(|| Error::Config("GraphSAGE layer without root weights".into()))?;
            sage_update_in_place(&mut combined, &aggregated, root, &w.bias);
            ledger.track_free(aggregated.byte_size(), "aggregate.output");
            drop(aggregated);
            combined
        }
    };
    if cfg.model == ModelKind::Gat {
        ledger.track_free((g.num_edges() * T::BYTES) as u64, "gat.coeffs");
    }
    times.concat = t.elapsed();
    Ok((out, times, agg.peak_transient_bytes))
}

/// `self_feat[i] <- [self_feat[i] || aggregated[i]] x root + bias`, row by
/// row, reusing the self-feature rows for the output.
fn sage_update_in_place<T: Scalar>(
    self_feat: &mut FeatureMatrix<T>,
    aggregated: &FeatureMatrix<T>,
    root: &FeatureMatrix<T>,
    bias: &[T],
) {
    let hidden = self_feat.cols();
    let mut cat = vec![T::zero(); 2 * hidden];
    let mut row_out = vec![T::zero(); hidden];
    for i in 0..self_feat.rows() {
        cat[..hidden].copy_from_slice(self_feat.row(i));
        cat[hidden..].copy_from_slice(aggregated.row(i));
        row_out.fill(T::zero());
        for (k, &a) in cat.iter().enumerate() {
            for (o, &r) in row_out.iter_mut().zip(root.row(k)) {
                *o += a * r;
            }
        }
        for (o, &b) in row_out.iter_mut().zip(bias) {
            *o += b;
        }
        self_feat.row_mut(i).copy_from_slice(&row_out);
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub output: FeatureMatrix<T>,
    pub layers: Vec<LayerReport>,
    /// Highest ledger level reached during the pass.
    pub peak_bytes: u64,
}

/// Runs all layers with ReLU between them (not after the last).
///
/// The prepared graph and the input features are charged to `ledger` for
/// the duration of the pass. The ledger is returned to its starting level
/// on both success and failure; the output is not left charged.
pub fn network_forward<T: Scalar>(
    g: &PreparedGraph<T>,
    f0: &FeatureMatrix<T>,
    weights: &[LayerWeights<T>],
    cfg: &ModelConfig,
    ledger: &mut MemoryLedger,
) -> Result<ForwardOutput<T>> {
    cfg.validate()?;
    if weights.len() != cfg.num_layers {
        return Err(Error::Config(format!(
            "{} weight sets for {} layers",
            weights.len(),
            cfg.num_layers
        )));
    }
    let base = ledger.current_bytes();
    ledger.open_window();
    let res = network_forward_inner(g, f0, weights, cfg, ledger);
    let above = ledger.close_window();
    ledger.release_to(base, "network.release");
    let (output, layers) = res?;
    Ok(ForwardOutput {
        output,
        layers,
        peak_bytes: base + above,
    })
}

fn network_forward_inner<T: Scalar>(
    g: &PreparedGraph<T>,
    f0: &FeatureMatrix<T>,
    weights: &[LayerWeights<T>],
    cfg: &ModelConfig,
    ledger: &mut MemoryLedger,
) -> Result<(FeatureMatrix<T>, Vec<LayerReport>)> {
    ledger.track_alloc(g.tracked_bytes(), "graph")?;
    ledger.track_alloc(f0.byte_size(), "features.input")?;
    let mut reports = Vec::with_capacity(weights.len());
    let (mut h, report) = layer_forward(g, f0, &weights[0], cfg, ledger)?;
    ledger.track_free(f0.byte_size(), "features.input");
    reports.push(report);
    for w in &weights[1..] {
        relu_in_place(&mut h);
        let (next, report) = layer_forward(g, &h, w, cfg, ledger)?;
        ledger.track_free(h.byte_size(), "features.hidden");
        h = next;
        reports.push(report);
    }
    Ok((h, reports))
}

fn uniform_vec<T: Scalar>(rng: &mut Xoshiro256PlusPlus, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound))).collect()
}

const WEIGHT_BOUND: f64 = 0.1;
const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Deterministic weights, uniform in `[-0.1, 0.1]`, drawn from a
/// Xoshiro256++ stream seeded with `seed`.
pub fn init_weights<T: Scalar>(cfg: &ModelConfig, in_dim: usize, seed: u64) -> Vec<LayerWeights<T>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let h = cfg.hidden_dim;
    (0..cfg.num_layers)
        .map(|k| {
            let rows = if k == 0 { in_dim } else { h };
            let w_matrix = FeatureMatrix::from_vec(rows, h, uniform_vec(&mut rng, rows * h, WEIGHT_BOUND))
                .expect("shape matches");
            let bias = uniform_vec(&mut rng, h, WEIGHT_BOUND);
            let mut layer = LayerWeights::linear(w_matrix, bias);
            layer.leaky_slope = T::from_f64_lossy(GAT_LEAKY_SLOPE);
            match cfg.model {
                ModelKind::Gcn => {}
                ModelKind::Gat => {
                    layer.attn_src = Some(uniform_vec(&mut rng, h, WEIGHT_BOUND));
                    layer.attn_dst = Some(uniform_vec(&mut rng, h, WEIGHT_BOUND));
                }
                ModelKind::Gsc => {
                    layer.root = Some(
                        FeatureMatrix::from_vec(2 * h, h, uniform_vec(&mut rng, 2 * h * h, WEIGHT_BOUND))
                            .expect("shape matches"),
                    );
                }
            }
            layer
        })
        .collect()
}

/// Input features uniform in `[-1, 1]`, from their own seeded stream.
pub fn random_features<T: Scalar>(rows: usize, cols: usize, seed: u64) -> FeatureMatrix<T> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    FeatureMatrix::from_vec(rows, cols, uniform_vec(&mut rng, rows * cols, 1.0)).expect("shape matches")
}

fn vector_matrix(v: &[f32]) -> FeatureMatrix<f32> {
    FeatureMatrix::from_vec(1, v.len(), v.to_vec()).expect("shape matches")
}

fn matrix_vector(m: FeatureMatrix<f32>, what: &str) -> Result<Vec<f32>> {
    if m.rows() != 1 {
        return Err(Error::dim(format!("{what} must be stored as a 1xN matrix")));
    }
    Ok(m.into_vec())
}

/// Writes one feature-format file per matrix or vector into `dir` plus a
/// manifest listing them in layer order. Per layer the entries are
/// `w, bias` then `attn_src, attn_dst, slope` (GAT) or `root` (GraphSAGE).
pub fn save_weights(model: ModelKind, weights: &[LayerWeights<f32>], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (k, layer) in weights.iter().enumerate() {
        let mut entries = vec![("w", layer.w_matrix.clone()), ("bias", vector_matrix(&layer.bias))];
        match model {
            ModelKind::Gcn => {}
            ModelKind::Gat => {
                let missing = || Error::Config("GAT weights without attention vectors".into());
                entries.push(("attn_src", vector_matrix(layer.attn_src.as_ref().ok_or_else(missing)?)));
                entries.push(("attn_dst", vector_matrix(layer.attn_dst.as_ref().ok_or_else(missing)?)));
                entries.push(("slope", vector_matrix(&[layer.leaky_slope])));
            }
            ModelKind::Gsc => {
                let root = layer
                    .root
                    .clone()
                    .ok_or_else(|| Error::Config("GraphSAGE weights without root map".into()))?;
                entries.push(("root", root));
            }
        }
        for (name, m) in entries {
            let file = format!("layer{k}_{name}.bin");
            save_feature_file(&m, dir.join(&file))?;
            manifest.push_str(&file);
            manifest.push('\n');
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Reads weights written by [`save_weights`]. Relative manifest entries
/// resolve against the manifest's directory.
pub fn load_weights(model: ModelKind, manifest: impl AsRef<Path>) -> Result<Vec<LayerWeights<f32>>> {
    let manifest = manifest.as_ref();
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let paths: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| dir.join(l))
        .collect();
    let per_layer = match model {
        ModelKind::Gcn => 2,
        ModelKind::Gsc => 3,
        ModelKind::Gat => 5,
    };
    if paths.is_empty() || !paths.len().is_multiple_of(per_layer) {
        return Err(Error::Config(format!(
            "{} manifest entries is not a whole number of {model} layers ({per_layer} each)",
            paths.len()
        )));
    }
    paths
        .chunks(per_layer)
        .map(|files| {
            let mut it = files.iter();
            let mut next = || load_feature_file(it.next().expect("chunk has per_layer entries"));
            let w_matrix = next()?;
            let bias = matrix_vector(next()?, "bias")?;
            let mut layer = LayerWeights::linear(w_matrix, bias);
            match model {
                ModelKind::Gcn => {}
                ModelKind::Gat => {
                    layer.attn_src = Some(matrix_vector(next()?, "attn_src")?);
                    layer.attn_dst = Some(matrix_vector(next()?, "attn_dst")?);
                    let slope = matrix_vector(next()?, "slope")?;
                    layer.leaky_slope = *slope
                        .first()
                        .ok_or_else(|| Error::dim("empty slope entry"))?;
                }
                ModelKind::Gsc => layer.root = Some(next()?),
            }
            layer.validate()?;
            Ok(layer)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: ModelKind, layers: usize, hidden: usize, w: usize, scheme: Scheme) -> ModelConfig {
        ModelConfig {
            model,
            num_layers: layers,
            hidden_dim: hidden,
            chunk_width: w,
            scheme,
        }
    }

    fn three_vertex() -> (CooGraph, FeatureMatrix<f32>) {
        let g = CooGraph::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![1., 2.], vec![3., 4.], vec![0., 0.]]).unwrap();
        (g, f)
    }

    #[test]
    fn gcn_single_self_loop_is_identity() {
        let g = CooGraph::from_edges(1, &[(0, 0)]).unwrap();
        let pg = PreparedGraph::<f32>::new(&g, ModelKind::Gcn, Scheme::Coo);
        let f = FeatureMatrix::from_rows(&[vec![1.5, -2.25, 7.0]]).unwrap();
        let w = LayerWeights::linear(FeatureMatrix::identity(3), vec![0.0; 3]);
        let c = cfg(ModelKind::Gcn, 1, 3, 3, Scheme::Coo);
        let mut l = MemoryLedger::new();
        let (out, _) = layer_forward(&pg, &f, &w, &c, &mut l).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn gcn_self_loops_only_reduces_to_combine() {
        let g = CooGraph::new(4, vec![], vec![]).unwrap();
        let f = random_features::<f32>(4, 5, 11);
        let c = cfg(ModelKind::Gcn, 1, 3, 2, Scheme::Coo);
        let w = init_weights::<f32>(&c, 5, 3);
        for scheme in [Scheme::Coo, Scheme::Csr] {
            let pg = PreparedGraph::<f32>::new(&g, ModelKind::Gcn, scheme);
            let (out, _) = layer_forward(&pg, &f, &w[0], &ModelConfig { scheme, ..c }, &mut MemoryLedger::new()).unwrap();
            let expected = crate::tensor::combine(&f, &w[0]).unwrap();
            assert_eq!(out.to_le_bytes(), expected.to_le_bytes());
        }
    }

    #[test]
    fn sage_mean_on_three_vertices() {
        let (g, f) = three_vertex();
        let pg = PreparedGraph::<f32>::new(&g, ModelKind::Gsc, Scheme::Coo);
        let mut w = LayerWeights::linear(FeatureMatrix::identity(2), vec![0.0; 2]);
        // root = [I; I] so the update is self + mean(neighbors)
        let mut root = FeatureMatrix::zeros(4, 2);
        for (r, c) in [(0, 0), (1, 1), (2, 0), (3, 1)] {
            root.row_mut(r)[c] = 1.0;
        }
        w.root = Some(root);
        let c = cfg(ModelKind::Gsc, 1, 2, 1, Scheme::Coo);
        let (out, _) = layer_forward(&pg, &f, &w, &c, &mut MemoryLedger::new()).unwrap();
        assert_eq!(out.row(2), &[2.0, 3.0]);
        assert_eq!(out.row(0), &[1.0, 2.0]);
    }

    /// Dense f64 two-hop GCN propagation with identity weights.
    fn gcn_two_layer_oracle(edges: &[(usize, usize)], n: usize, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut e: Vec<(usize, usize)> = edges.to_vec();
        for v in 0..n {
            if !e.contains(&(v, v)) {
                e.push((v, v));
            }
        }
        let deg: Vec<f64> = (0..n).map(|v| e.iter().filter(|&&(_, d)| d == v).count() as f64).collect();
        let prop = |h: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..n)
                .map(|v| {
                    let mut acc = vec![0.0; h[0].len()];
                    for &(s, d) in &e {
                        if d == v {
                            let c = 1.0 / (deg[s] * deg[d]).sqrt();
                            for (a, x) in acc.iter_mut().zip(&h[s]) {
                                *a += c * x;
                            }
                        }
                    }
                    acc
                })
                .collect()
        };
        let h1: Vec<Vec<f64>> = prop(x).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        prop(&h1)
    }

    #[test]
    fn gcn_two_layers_match_oracle() {
        let (g, _) = three_vertex();
        let f = FeatureMatrix::from_rows(&[vec![1., -2.], vec![3., 4.], vec![-1., 0.5]]).unwrap();
        let c = cfg(ModelKind::Gcn, 2, 2, 1, Scheme::Coo);
        let w = vec![LayerWeights::linear(FeatureMatrix::identity(2), vec![0.0; 2]); 2];
        let pg = PreparedGraph::<f32>::new(&g, ModelKind::Gcn, Scheme::Coo);
        let out = network_forward(&pg, &f, &w, &c, &mut MemoryLedger::new()).unwrap().output;
        let x: Vec<Vec<f64>> = (0..3).map(|i| f.row(i).iter().map(|&v| v as f64).collect()).collect();
        let expected = gcn_two_layer_oracle(&[(0, 2), (1, 2)], 3, &x);
        for i in 0..3 {
            for j in 0..2 {
                assert!((out.get(i, j) as f64 - expected[i][j]).abs() < 1e-5, "{i},{j}");
            }
        }
    }

    #[test]
    fn one_layer_network_equals_layer_forward() {
        let g = crate::bench::gen_synthetic(50, 4.0, 9);
        for model in ModelKind::ALL {
            let c = cfg(model, 1, 8, 3, Scheme::Coo);
            let pg = PreparedGraph::<f32>::new(&g, model, Scheme::Coo);
            let f = random_features::<f32>(50, 6, 1);
            let w = init_weights::<f32>(&c, 6, 2);
            let net = network_forward(&pg, &f, &w, &c, &mut MemoryLedger::new()).unwrap();
            let (layer, _) = layer_forward(&pg, &f, &w[0], &c, &mut MemoryLedger::new()).unwrap();
            assert_eq!(net.output.to_le_bytes(), layer.to_le_bytes());
        }
    }

    #[test]
    fn chunk_width_does_not_change_output() {
        let g = crate::bench::gen_synthetic(200, 6.0, 5);
        for model in ModelKind::ALL {
            for scheme in [Scheme::Coo, Scheme::Csr] {
                let base = cfg(model, 2, 8, 8, scheme);
                let pg = PreparedGraph::<f32>::new(&g, model, scheme);
                let f = random_features::<f32>(200, 5, 4);
                let w = init_weights::<f32>(&base, 5, 4);
                let reference = network_forward(&pg, &f, &w, &base, &mut MemoryLedger::new()).unwrap().output;
                for width in [1, 3, 5] {
                    let c = base.with_chunk_width(width);
                    let out = network_forward(&pg, &f, &w, &c, &mut MemoryLedger::new()).unwrap().output;
                    assert_eq!(out.checksum(), reference.checksum(), "{model} {scheme} w={width}");
                }
            }
        }
    }

    #[test]
    fn ledger_balanced_and_profile_exact() {
        let g = crate::bench::gen_synthetic(300, 5.0, 8);
        for model in ModelKind::ALL {
            for scheme in [Scheme::Coo, Scheme::Csr] {
                for width in [1, 4, 16] {
                    let c = cfg(model, 2, 16, width, scheme);
                    let pg = PreparedGraph::<f32>::new(&g, model, scheme);
                    let f = random_features::<f32>(300, 12, 4);
                    let w = init_weights::<f32>(&c, 12, 4);
                    let mut l = MemoryLedger::new();
                    let out = network_forward(&pg, &f, &w, &c, &mut l).unwrap();
                    assert_eq!(l.current_bytes(), 0);
                    let profile = pg.memory_profile(&c, 12);
                    assert_eq!(out.peak_bytes, profile.peak_for_width(width), "{model} {scheme} w={width}");
                    let transient = match scheme {
                        Scheme::Coo => (pg.num_edges() * width * 4) as u64,
                        Scheme::Csr => 0,
                    };
                    assert!(out.layers.iter().all(|r| r.peak_transient_bytes == transient));
                }
            }
        }
    }

    #[test]
    fn budget_failure_unwinds_ledger() {
        let g = crate::bench::gen_synthetic(100, 10.0, 2);
        let c = cfg(ModelKind::Gat, 2, 8, 8, Scheme::Coo);
        let pg = PreparedGraph::<f32>::new(&g, ModelKind::Gat, Scheme::Coo);
        let f = random_features::<f32>(100, 8, 1);
        let w = init_weights::<f32>(&c, 8, 1);
        let need = pg.memory_profile(&c, 8).peak_for_width(8);
        let mut l = MemoryLedger::with_budget(need - 1);
        assert!(network_forward(&pg, &f, &w, &c, &mut l).unwrap_err().is_oom());
        assert_eq!(l.current_bytes(), 0);
        let mut l = MemoryLedger::with_budget(need);
        network_forward(&pg, &f, &w, &c, &mut l).unwrap();
    }

    #[test]
    fn init_weights_deterministic_and_bounded() {
        let c = cfg(ModelKind::Gat, 2, 6, 2, Scheme::Coo);
        let a = init_weights::<f32>(&c, 4, 42);
        let b = init_weights::<f32>(&c, 4, 42);
        let other = init_weights::<f32>(&c, 4, 43);
        assert_eq!(a, b);
        assert_ne!(a, other);
        for layer in &a {
            let all = layer
                .w_matrix
                .as_slice()
                .iter()
                .chain(&layer.bias)
                .chain(layer.attn_src.iter().flatten())
                .chain(layer.attn_dst.iter().flatten());
            for &x in all {
                assert!((-0.1..=0.1).contains(&x), "{x}");
            }
        }
    }

    #[test]
    fn weight_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for model in ModelKind::ALL {
            let c = cfg(model, 2, 4, 2, Scheme::Coo);
            let w = init_weights::<f32>(&c, 3, 7);
            let manifest = save_weights(model, &w, dir.path().join(model.to_string())).unwrap();
            assert_eq!(load_weights(model, &manifest).unwrap(), w);
        }
        let gcn_manifest = dir.path().join("gcn/manifest.txt");
        assert!(load_weights(ModelKind::Gat, gcn_manifest).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(ModelKind::Gcn, 0, 4, 1, Scheme::Coo).validate().is_err());
        assert!(cfg(ModelKind::Gcn, 1, 0, 1, Scheme::Coo).validate().is_err());
        assert!(cfg(ModelKind::Gcn, 1, 4, 5, Scheme::Coo).validate().is_err());
        assert!(cfg(ModelKind::Gcn, 1, 4, 4, Scheme::Coo).validate().is_ok());
        assert_eq!("GAT".parse::<ModelKind>().unwrap(), ModelKind::Gat);
        assert!("gin".parse::<ModelKind>().is_err());
    }
}
