//! Neighborhood aggregation kernels and the feature-decomposition driver.
//!
//! Two schemes compute the same reductions:
//!
//! * gather-scatter over the COO edge list, which materializes one message
//!   per edge (`E x width` values) before scattering into destination rows;
//! * segment-reduce over a destination-keyed CSR, which accumulates each
//!   destination row directly and needs no message buffer.
//!
//! Both reduce the messages of a destination in ascending edge order, and
//! every output column depends only on the same input column. Splitting the
//! feature axis into chunks therefore reproduces the monolithic result bit
//! for bit, while the message buffer shrinks to `E x chunk_width`.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::graph::{CooGraph, CsrGraph, DegreeVector};
use crate::ledger::MemoryLedger;
use crate::scalar::Scalar;
use crate::tensor::{chunk_features, ChunkPlan, ChunkView, ColumnsMut, FeatureMatrix, LayerWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    Sum,
    Mean,
    Max,
    /// Sum of messages scaled by a per-edge coefficient.
    WeightedSum,
}

/// One coefficient per edge, aligned with the COO edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights<T> {
    pub coeff: Vec<T>,
}

impl<T: Scalar> EdgeWeights<T> {
    pub fn new(coeff: Vec<T>) -> Self {
        Self { coeff }
    }

    pub fn len(&self) -> usize {
        self.coeff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff.is_empty()
    }

    pub fn byte_size(&self) -> u64 {
        (self.coeff.len() * T::BYTES) as u64
    }

    /// Sum of coefficients into each destination vertex.
    pub fn per_destination_sums(&self, g: &CooGraph) -> Vec<T> {
        let mut sums = vec![T::zero(); g.num_vertices()];
        for (&d, &c) in g.dst().iter().zip(&self.coeff) {
            sums[d as usize] += c;
        }
        sums
    }
}

/// Graph layout handed to the aggregation driver; the variant selects the
/// scheme. The CSR variant must be keyed by destination
/// (see [`crate::graph::csr_by_destination`]).
#[derive(Debug, Clone, Copy)]
pub enum Topology<'a> {
    Coo(&'a CooGraph),
    Csr(&'a CsrGraph),
}

impl Topology<'_> {
    pub fn num_vertices(&self) -> usize {
        match self {
            Topology::Coo(g) => g.num_vertices(),
            Topology::Csr(g) => g.num_vertices(),
        }
    }

    pub fn num_edges(&self) -> usize {
        match self {
            Topology::Coo(g) => g.num_edges(),
            Topology::Csr(g) => g.num_edges(),
        }
    }
}

fn check_inputs<T: Scalar>(
    num_vertices: usize,
    num_edges: usize,
    rows: usize,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<T>>,
) -> Result<()> {
    if rows != num_vertices {
        return Err(Error::dim(format!(
            "feature rows {rows} differ from vertex count {num_vertices}"
        )));
    }
    match (kind, weights) {
        (AggregatorKind::WeightedSum, None) => {
            Err(Error::Config("weighted sum needs edge weights".into()))
        }
        (AggregatorKind::WeightedSum, Some(w)) if w.len() != num_edges => Err(Error::dim(format!(
            "{} edge weights for {num_edges} edges",
            w.len()
        ))),
        (AggregatorKind::WeightedSum, Some(_)) => Ok(()),
        (_, Some(_)) => Err(Error::Config(format!("{kind:?} takes no edge weights"))),
        (_, None) => Ok(()),
    }
}

fn init_rows<T: Scalar>(out: &mut ColumnsMut<'_, T>, kind: AggregatorKind) {
    let fill = if kind == AggregatorKind::Max {
        T::neg_infinity()
    } else {
        T::zero()
    };
    for i in 0..out.rows() {
        out.row_mut(i).fill(fill);
    }
}

#[inline]
fn reduce_into<T: Scalar>(acc: &mut [T], msg: &[T], kind: AggregatorKind) {
    if kind == AggregatorKind::Max {
        for (a, &m) in acc.iter_mut().zip(msg) {
            if m > *a {
                *a = m;
            }
        }
    } else {
        for (a, &m) in acc.iter_mut().zip(msg) {
            *a += m;
        }
    }
}

/// Mean divides by in-degree; Max maps untouched (empty-neighborhood) rows
/// to zero. Both leave zero-degree rows at zero.
fn finalize_rows<T: Scalar>(out: &mut ColumnsMut<'_, T>, kind: AggregatorKind, in_degree: impl Fn(usize) -> usize) {
    match kind {
        AggregatorKind::Mean => {
            for v in 0..out.rows() {
                let d = in_degree(v);
                if d > 0 {
                    let d = T::from_usize(d).expect("degree fits scalar");
                    for x in out.row_mut(v) {
                        *x /= d;
                    }
                }
            }
        }
        AggregatorKind::Max => {
            for v in 0..out.rows() {
                for x in out.row_mut(v) {
                    if *x == T::neg_infinity() {
                        *x = T::zero();
                    }
                }
            }
        }
        AggregatorKind::Sum | AggregatorKind::WeightedSum => {}
    }
}

fn scatter_into<T: Scalar>(
    g: &CooGraph,
    f: &ChunkView<'_, T>,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<T>>,
    ledger: &mut MemoryLedger,
    out: &mut ColumnsMut<'_, T>,
) -> Result<()> {
    let width = f.width();
    let num_edges = g.num_edges();
    let msg_bytes = (num_edges * width * T::BYTES) as u64;
    ledger.track_alloc(msg_bytes, "aggregate.messages")?;

    // gather: one message per edge
    let mut messages = vec![T::zero(); num_edges * width];
    for (e, (msg, &s)) in messages.chunks_exact_mut(width.max(1)).zip(g.src()).enumerate() {
        let x = f.row(s as usize);
        match weights {
            Some(w) => {
                let c = w.coeff[e];
                for (m, &xv) in msg.iter_mut().zip(x) {
                    *m = c * xv;
                }
            }
            None => msg.copy_from_slice(x),
        }
    }

    // scatter in ascending edge order
    init_rows(out, kind);
    for (msg, &d) in messages.chunks_exact(width.max(1)).zip(g.dst()) {
        reduce_into(out.row_mut(d as usize), msg, kind);
    }
    let in_degree = g.in_degree();
    finalize_rows(out, kind, |v| in_degree[v] as usize);

    drop(messages);
    ledger.track_free(msg_bytes, "aggregate.messages");
    Ok(())
}

fn segment_into<T: Scalar>(
    g: &CsrGraph,
    f: &ChunkView<'_, T>,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<T>>,
    out: &mut ColumnsMut<'_, T>,
) {
    init_rows(out, kind);
    let row_ptr = g.row_ptr();
    for v in 0..g.num_vertices() {
        let acc = out.row_mut(v);
        for slot in row_ptr[v]..row_ptr[v + 1] {
            let x = f.row(g.col_idx()[slot] as usize);
            match (kind, weights) {
                (AggregatorKind::WeightedSum, Some(w)) => {
                    let c = w.coeff[g.edge_id()[slot] as usize];
                    for (a, &xv) in acc.iter_mut().zip(x) {
                        *a += c * xv;
                    }
                }
                _ => reduce_into(acc, x, kind),
            }
        }
    }
    finalize_rows(out, kind, |v| row_ptr[v + 1] - row_ptr[v]);
}

fn alloc_output<T: Scalar>(
    rows: usize,
    cols: usize,
    ledger: &mut MemoryLedger,
) -> Result<FeatureMatrix<T>> {
    ledger.track_alloc(FeatureMatrix::<T>::bytes_for(rows, cols), "aggregate.output")?;
    Ok(FeatureMatrix::zeros(rows, cols))
}

/// Gather-scatter aggregation of one column view over a COO graph.
///
/// Both the `E x width` message buffer and the `V x width` output are
/// charged to `ledger`; the message buffer is released before returning,
/// the output stays charged and belongs to the caller.
pub fn scatter_aggregate_coo<T: Scalar>(
    g: &CooGraph,
    f: ChunkView<'_, T>,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<T>>,
    ledger: &mut MemoryLedger,
) -> Result<FeatureMatrix<T>> {
    check_inputs(g.num_vertices(), g.num_edges(), f.rows(), kind, weights)?;
    let mut out = alloc_output(g.num_vertices(), f.width(), ledger)?;
    let width = f.width();
    if let Err(e) = scatter_into(g, &f, kind, weights, ledger, &mut out.columns_mut(0..width)) {
        ledger.track_free(out.byte_size(), "aggregate.output");
        return Err(e);
    }
    Ok(out)
}

/// Segment-reduce aggregation over a destination-keyed CSR. Only the output
/// is charged to `ledger`.
pub fn segment_aggregate_csr<T: Scalar>(
    g: &CsrGraph,
    f: ChunkView<'_, T>,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<T>>,
    ledger: &mut MemoryLedger,
) -> Result<FeatureMatrix<T>> {
    check_inputs(g.num_vertices(), g.num_edges(), f.rows(), kind, weights)?;
    let mut out = alloc_output(g.num_vertices(), f.width(), ledger)?;
    let width = f.width();
    segment_into(g, &f, kind, weights, &mut out.columns_mut(0..width));
    Ok(out)
}

/// Symmetric GCN normalization `1 / sqrt(deg(src) * deg(dst))`, with
/// degrees counted on the self-looped graph.
pub fn gcn_norm_coeffs<T: Scalar>(g: &CooGraph, deg: &DegreeVector) -> EdgeWeights<T> {
    let coeff = g
        .edges()
        .map(|(s, d)| {
            let (ds, dd) = (deg.in_degree[s as usize], deg.in_degree[d as usize]);
            assert!(ds > 0 && dd > 0, "gcn normalization needs self-loops on every vertex");
            T::from_f64_lossy(1.0 / (ds as f64 * dd as f64).sqrt())
        })
        .collect();
    EdgeWeights { coeff }
}

/// Single-head GAT attention: leaky-ReLU edge scores, softmax over the
/// in-edges of each destination with max subtraction.
///
/// Needs the full-width post-combination features. The returned weights
/// stay charged to `ledger`; per-vertex scratch is released before return.
pub fn gat_attention_coeffs<T: Scalar>(
    g: &CooGraph,
    h: &FeatureMatrix<T>,
    w: &LayerWeights<T>,
    ledger: &mut MemoryLedger,
) -> Result<EdgeWeights<T>> {
    let (attn_src, attn_dst) = match (&w.attn_src, &w.attn_dst) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Config("GAT layer without attention vectors".into())),
    };
    if h.rows() != g.num_vertices() || h.cols() != attn_src.len() || h.cols() != attn_dst.len() {
        return Err(Error::dim(format!(
            "features {}x{} vs {} vertices and attention width {}",
            h.rows(),
            h.cols(),
            g.num_vertices(),
            attn_src.len()
        )));
    }
    let v = g.num_vertices();
    let scratch_bytes = (4 * v * T::BYTES) as u64;
    let coeff_bytes = (g.num_edges() * T::BYTES) as u64;
    ledger.track_alloc(coeff_bytes, "gat.coeffs")?;
    if let Err(e) = ledger.track_alloc(scratch_bytes, "gat.scratch") {
        ledger.track_free(coeff_bytes, "gat.coeffs");
        return Err(e.into());
    }

    let dot = |row: &[T], a: &[T]| row.iter().zip(a).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let score_src: Vec<T> = (0..v).map(|i| dot(h.row(i), attn_src)).collect();
    let score_dst: Vec<T> = (0..v).map(|i| dot(h.row(i), attn_dst)).collect();
    let slope = w.leaky_slope;

    let mut coeff: Vec<T> = g
        .edges()
        .map(|(s, d)| {
            let z = score_src[s as usize] + score_dst[d as usize];
            if z < T::zero() {
                z * slope
            } else {
                z
            }
        })
        .collect();
    let mut max = vec![T::neg_infinity(); v];
    for (&d, &z) in g.dst().iter().zip(&coeff) {
        let m = &mut max[d as usize];
        if z > *m {
            *m = z;
        }
    }
    let mut denom = vec![T::zero(); v];
    for (&d, c) in g.dst().iter().zip(coeff.iter_mut()) {
        *c = (*c - max[d as usize]).exp();
        denom[d as usize] += *c;
    }
    for (&d, c) in g.dst().iter().zip(coeff.iter_mut()) {
        *c /= denom[d as usize];
    }

    ledger.track_free(scratch_bytes, "gat.scratch");
    Ok(EdgeWeights { coeff })
}

/// Result of [`decomposed_aggregate`].
#[derive(Debug, Clone)]
pub struct Aggregated<T> {
    pub output: FeatureMatrix<T>,
    /// Highest number of bytes held above the output allocation while the
    /// chunks ran; the message buffer of the widest chunk for COO, zero for
    /// CSR.
    pub peak_transient_bytes: u64,
    pub elapsed: Duration,
}

/// Aggregates `f` chunk by chunk along the feature axis.
///
/// The `V x L` output is charged once; each chunk's messages are
/// allocated, reduced directly into that chunk's column range of the
/// output, and released before the next chunk starts, so the column ranges
/// together form the concatenated result. Edge weights, if any, must
/// already be computed on full-width features. The output stays charged to
/// `ledger` on success.
pub fn decomposed_aggregate<T: Scalar>(
    topo: Topology<'_>,
    f: &FeatureMatrix<T>,
    plan: &ChunkPlan,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<T>>,
    ledger: &mut MemoryLedger,
) -> Result<Aggregated<T>> {
    check_inputs(topo.num_vertices(), topo.num_edges(), f.rows(), kind, weights)?;
    let views = chunk_features(f, plan)?;
    let start = Instant::now();
    let mut output = alloc_output(f.rows(), f.cols(), ledger)?;
    ledger.open_window();
    for (view, range) in views.iter().zip(plan.ranges()) {
        let mut cols = output.columns_mut(range);
        let res = match topo {
            Topology::Coo(g) => scatter_into(g, view, kind, weights, ledger, &mut cols),
            Topology::Csr(g) => {
                segment_into(g, view, kind, weights, &mut cols);
                Ok(())
            }
        };
        if let Err(e) = res {
            ledger.close_window();
            ledger.track_free(output.byte_size(), "aggregate.output");
            return Err(e);
        }
    }
    let peak_transient_bytes = ledger.close_window();
    Ok(Aggregated {
        output,
        peak_transient_bytes,
        elapsed: start.elapsed(),
    })
}
