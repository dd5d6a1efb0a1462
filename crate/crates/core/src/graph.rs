//! Directed graphs in edge-list (COO) and compressed-row (CSR) form.
//!
//! Edge order is significant everywhere: it fixes the floating-point
//! reduction order of every aggregation, so no operation here reorders
//! edges except the stable CSR conversion.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::mem::size_of;
use std::path::Path;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};

/// Vertex index. Graphs with more than 2^31 vertices are not supported.
pub type VertexId = u32;

/// Edge list with parallel `src`/`dst` arrays. Duplicate edges are allowed.
#[derive(Debug, Clone)]
pub struct CooGraph {
    num_vertices: u32,
    src: Vec<VertexId>,
    dst: Vec<VertexId>,
    in_degree: OnceLock<Vec<u32>>,
}

impl PartialEq for CooGraph {
    fn eq(&self, other: &Self) -> bool {
        self.num_vertices == other.num_vertices && self.src == other.src && self.dst == other.dst
    }
}

impl Eq for CooGraph {}

impl CooGraph {
    pub fn new(num_vertices: u32, src: Vec<VertexId>, dst: Vec<VertexId>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::dim(format!(
                "src has {} entries, dst has {}",
                src.len(),
                dst.len()
            )));
        }
        if num_vertices > i32::MAX as u32 {
            return Err(Error::Value(format!("{num_vertices} vertices exceeds 2^31")));
        }
        for (e, (&s, &d)) in src.iter().zip(&dst).enumerate() {
            let bad = if s >= num_vertices { Some(s) } else if d >= num_vertices { Some(d) } else { None };
            if let Some(index) = bad {
                return Err(Error::IndexOutOfRange {
                    line: e + 2,
                    index: index as u64,
                    num_vertices,
                });
            }
        }
        Ok(Self::from_parts_unchecked(num_vertices, src, dst))
    }

    pub(crate) fn from_parts_unchecked(num_vertices: u32, src: Vec<VertexId>, dst: Vec<VertexId>) -> Self {
        debug_assert_eq!(src.len(), dst.len());
        Self {
            num_vertices,
            src,
            dst,
            in_degree: OnceLock::new(),
        }
    }

    /// Builds a graph from `(src, dst)` pairs.
    pub fn from_edges(num_vertices: u32, edges: &[(VertexId, VertexId)]) -> Result<Self> {
        let (src, dst) = edges.iter().copied().unzip();
        Self::new(num_vertices, src, dst)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices as usize
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn src(&self) -> &[VertexId] {
        &self.src
    }

    pub fn dst(&self) -> &[VertexId] {
        &self.dst
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = (VertexId, VertexId)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    /// In-degree of every vertex, computed once and cached.
    pub fn in_degree(&self) -> &[u32] {
        self.in_degree.get_or_init(|| {
            let mut deg = vec![0u32; self.num_vertices()];
            for &d in &self.dst {
                deg[d as usize] += 1;
            }
            deg
        })
    }

    /// Same edges with every direction flipped, in the same order.
    pub fn reversed(&self) -> Self {
        Self::from_parts_unchecked(self.num_vertices, self.dst.clone(), self.src.clone())
    }

    /// Bytes the ledger charges for this graph: both index arrays plus the
    /// in-degree cache.
    pub fn tracked_bytes(&self) -> u64 {
        ((2 * self.num_edges() + self.num_vertices()) * size_of::<VertexId>()) as u64
    }
}

/// Compressed rows. `edge_id[j]` is the index in the source edge list of the
/// edge stored in slot `j`, so per-edge data stays addressable after
/// conversion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    num_vertices: u32,
    row_ptr: Vec<usize>,
    col_idx: Vec<VertexId>,
    edge_id: Vec<u32>,
}

impl CsrGraph {
    pub fn num_vertices(&self) -> usize {
        self.num_vertices as usize
    }

    pub fn num_edges(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[VertexId] {
        &self.col_idx
    }

    pub fn edge_id(&self) -> &[u32] {
        &self.edge_id
    }

    pub fn row(&self, v: usize) -> &[VertexId] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    /// Expands back into `(row, col)` pairs in storage order.
    pub fn expand(&self) -> Vec<(VertexId, VertexId)> {
        (0..self.num_vertices())
            .flat_map(|r| self.row(r).iter().map(move |&c| (r as VertexId, c)))
            .collect()
    }

    pub fn tracked_bytes(&self) -> u64 {
        (self.row_ptr.len() * size_of::<usize>()
            + self.col_idx.len() * size_of::<VertexId>()
            + self.edge_id.len() * size_of::<u32>()) as u64
    }
}

/// Stable counting sort of the edge list by source vertex. O(V + E).
pub fn coo_to_csr(g: &CooGraph) -> CsrGraph {
    let v = g.num_vertices();
    let mut row_ptr = vec![0usize; v + 1];
    for &s in g.src() {
        row_ptr[s as usize + 1] += 1;
    }
    for i in 0..v {
        row_ptr[i + 1] += row_ptr[i];
    }
    let mut cursor = row_ptr[..v].to_vec();
    let mut col_idx = vec![0; g.num_edges()];
    let mut edge_id = vec![0; g.num_edges()];
    for (e, (s, d)) in g.edges().enumerate() {
        let slot = &mut cursor[s as usize];
        col_idx[*slot] = d;
        edge_id[*slot] = e as u32;
        *slot += 1;
    }
    CsrGraph {
        num_vertices: g.num_vertices,
        row_ptr,
        col_idx,
        edge_id,
    }
}

/// CSR whose rows are destination vertices and columns are their sources,
/// the layout segment-reduce aggregation consumes. Within a row, sources
/// appear in ascending edge order.
pub fn csr_by_destination(g: &CooGraph) -> CsrGraph {
    coo_to_csr(&g.reversed())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector {
    pub in_degree: Vec<u32>,
    pub out_degree: Vec<u32>,
}

pub fn compute_degrees(g: &CooGraph) -> DegreeVector {
    let mut out_degree = vec![0u32; g.num_vertices()];
    for &s in g.src() {
        out_degree[s as usize] += 1;
    }
    DegreeVector {
        in_degree: g.in_degree().to_vec(),
        out_degree,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphStats {
    pub num_vertices: u64,
    pub num_edges: u64,
    pub avg_degree: f64,
}

impl std::fmt::Display for GraphStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {:.1}", self.num_vertices, self.num_edges, self.avg_degree)
    }
}

pub fn stats_from_counts(num_vertices: u64, num_edges: u64) -> Result<GraphStats> {
    if num_vertices == 0 {
        return Err(Error::EmptyGraph);
    }
    Ok(GraphStats {
        num_vertices,
        num_edges,
        avg_degree: num_edges as f64 / num_vertices as f64,
    })
}

pub fn graph_stats(g: &CooGraph) -> Result<GraphStats> {
    stats_from_counts(g.num_vertices() as u64, g.num_edges() as u64)
}

/// Appends `(v, v)` for every vertex lacking a self-loop, in vertex order,
/// after the existing edges.
pub fn add_self_loops(g: &CooGraph) -> CooGraph {
    let mut has_loop = vec![false; g.num_vertices()];
    for (s, d) in g.edges() {
        if s == d {
            has_loop[s as usize] = true;
        }
    }
    let mut src = g.src.clone();
    let mut dst = g.dst.clone();
    for (v, _) in has_loop.iter().enumerate().filter(|(_, &l)| !l) {
        src.push(v as VertexId);
        dst.push(v as VertexId);
    }
    CooGraph::from_parts_unchecked(g.num_vertices, src, dst)
}

fn parse_pair(line: &str, lineno: usize) -> Result<(u64, u64)> {
    let mut it = line.split_ascii_whitespace();
    let parse = |tok: Option<&str>| -> Result<u64> {
        let tok = tok.ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected two integers".into(),
        })?;
        tok.parse::<u64>().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("`{tok}`: {e}"),
        })
    };
    let a = parse(it.next())?;
    let b = parse(it.next())?;
    if it.next().is_some() {
        return Err(Error::Parse {
            line: lineno,
            msg: "trailing tokens".into(),
        });
    }
    Ok((a, b))
}

/// Reads the text edge-list format: header `V E`, then `E` lines `u v`.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<CooGraph> {
    let reader = BufReader::new(File::open(path)?);
    read_edge_list(reader)
}

pub fn read_edge_list<R: BufRead>(reader: R) -> Result<CooGraph> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (num_vertices, num_edges) = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
            Some((n, l)) => {
                let l = l?;
                if l.trim().is_empty() {
                    continue;
                }
                break parse_pair(&l, n)?;
            }
        }
    };
    if num_vertices > i32::MAX as u64 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{num_vertices} vertices exceeds 2^31"),
        });
    }
    let num_vertices = num_vertices as u32;
    let mut src = Vec::with_capacity(num_edges as usize);
    let mut dst = Vec::with_capacity(num_edges as usize);
    let mut last_line = 1;
    for (n, l) in lines {
        let l = l?;
        last_line = n;
        if l.trim().is_empty() {
            continue;
        }
        if src.len() as u64 == num_edges {
            return Err(Error::Parse {
                line: n,
                msg: format!("more than the {num_edges} edges declared in the header"),
            });
        }
        let (u, v) = parse_pair(&l, n)?;
        for idx in [u, v] {
            if idx >= num_vertices as u64 {
                return Err(Error::IndexOutOfRange {
                    line: n,
                    index: idx,
                    num_vertices,
                });
            }
        }
        src.push(u as VertexId);
        dst.push(v as VertexId);
    }
    if (src.len() as u64) < num_edges {
        return Err(Error::Parse {
            line: last_line + 1,
            msg: format!("expected {num_edges} edges, found {}", src.len()),
        });
    }
    Ok(CooGraph::from_parts_unchecked(num_vertices, src, dst))
}

pub fn save_edge_list(g: &CooGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", g.num_vertices(), g.num_edges())?;
    for (s, d) in g.edges() {
        writeln!(w, "{s} {d}")?;
    }
    w.flush()?;
    Ok(())
}
