//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use chunkgnn::aggregate::{AggregatorKind, EdgeWeights};
use chunkgnn::graph::CooGraph;
use chunkgnn::tensor::FeatureMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Random multigraph with `num_vertices` vertices and `num_edges` edges.
pub fn random_graph(rng: &mut impl Rng, num_vertices: u32, num_edges: usize) -> CooGraph {
    let edges: Vec<(u32, u32)> = (0..num_edges)
        .map(|_| (rng.gen_range(0..num_vertices), rng.gen_range(0..num_vertices)))
        .collect();
    CooGraph::from_edges(num_vertices, &edges).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> FeatureMatrix<f32> {
    FeatureMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Per-vertex brute force in f64: for every vertex scan the whole edge list.
/// Returns `(value, scale)` per element, where `scale` is the sum of the
/// absolute message values (the natural error scale of a reduction).
pub fn oracle_aggregate(
    g: &CooGraph,
    f: &FeatureMatrix<f32>,
    kind: AggregatorKind,
    weights: Option<&EdgeWeights<f32>>,
) -> Vec<Vec<(f64, f64)>> {
    let cols = f.cols();
    (0..g.num_vertices())
        .map(|v| {
            let mut msgs: Vec<Vec<f64>> = Vec::new();
            for (e, (s, d)) in g.edges().enumerate() {
                if d as usize == v {
                    let c = weights.map_or(1.0, |w| w.coeff[e] as f64);
                    msgs.push(f.row(s as usize).iter().map(|&x| c * x as f64).collect());
                }
            }
            (0..cols)
                .map(|j| {
                    let col: Vec<f64> = msgs.iter().map(|m| m[j]).collect();
                    let scale: f64 = col.iter().map(|x| x.abs()).sum();
                    if col.is_empty() {
                        return (0.0, 0.0);
                    }
                    let value = match kind {
                        AggregatorKind::Sum | AggregatorKind::WeightedSum => col.iter().sum(),
                        AggregatorKind::Mean => col.iter().sum::<f64>() / col.len() as f64,
                        AggregatorKind::Max => col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    };
                    let scale = match kind {
                        AggregatorKind::Mean => scale / col.len() as f64,
                        AggregatorKind::Max => value.abs(),
                        _ => scale,
                    };
                    (value, scale)
                })
                .collect()
        })
        .collect()
}

/// Largest relative deviation of `got` from the oracle, measured against
/// each element's reduction scale.
pub fn max_relative_error(got: &FeatureMatrix<f32>, oracle: &[Vec<(f64, f64)>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in oracle.iter().enumerate() {
        for (j, &(value, scale)) in row.iter().enumerate() {
            let err = (got.get(i, j) as f64 - value).abs();
            let rel = if scale > 0.0 { err / scale } else if err == 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(rel);
        }
    }
    worst
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`, zero where both are zero.
pub fn max_pairwise_relative(a: &FeatureMatrix<f32>, b: &FeatureMatrix<f32>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            let m = x.abs().max(y.abs());
            if m == 0.0 {
                0.0
            } else {
                (x - y).abs() / m
            }
        })
        .fold(0.0, f64::max)
}
