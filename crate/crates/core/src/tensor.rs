//! Dense row-major feature matrices, feature-axis chunking, and the dense
//! combination primitive.

use std::fs;
use std::hash::Hasher;
use std::ops::Range;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `rows x cols` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// Bytes the ledger charges for a matrix of this shape.
    pub fn byte_size(&self) -> u64 {
        Self::bytes_for(self.rows, self.cols)
    }

    pub fn bytes_for(rows: usize, cols: usize) -> u64 {
        (rows * cols * T::BYTES) as u64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Little-endian encoding of the values, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * T::BYTES);
        for &x in &self.data {
            x.write_le(&mut out);
        }
        out
    }

    /// 64-bit FNV-1a over the little-endian value bytes.
    pub fn checksum(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&self.to_le_bytes());
        h.finish()
    }

    /// Every element scaled by `alpha`.
    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    pub fn view(&self) -> ChunkView<'_, T> {
        ChunkView {
            matrix: self,
            offset: 0,
            width: self.cols,
        }
    }

    pub(crate) fn columns_mut(&mut self, cols: Range<usize>) -> ColumnsMut<'_, T> {
        assert!(cols.end <= self.cols);
        ColumnsMut {
            stride: self.cols,
            offset: cols.start,
            width: cols.len(),
            data: &mut self.data,
        }
    }
}

/// Decomposition of a feature axis of width `total_width` into chunks of
/// `chunk_width` columns; the last chunk may be narrower.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    total_width: usize,
    chunk_width: usize,
    offsets: Vec<usize>,
}

impl ChunkPlan {
    pub fn new(total_width: usize, chunk_width: usize) -> Result<Self> {
        if total_width == 0 {
            return Err(Error::Config("feature width must be at least 1".into()));
        }
        if chunk_width == 0 || chunk_width > total_width {
            return Err(Error::Config(format!(
                "chunk width {chunk_width} outside [1, {total_width}]"
            )));
        }
        let offsets = (0..total_width).step_by(chunk_width).collect();
        Ok(Self {
            total_width,
            chunk_width,
            offsets,
        })
    }

    /// A single chunk spanning the whole axis.
    pub fn monolithic(total_width: usize) -> Result<Self> {
        Self::new(total_width, total_width)
    }

    pub fn total_width(&self) -> usize {
        self.total_width
    }

    pub fn chunk_width(&self) -> usize {
        self.chunk_width
    }

    pub fn num_chunks(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn width(&self, p: usize) -> usize {
        self.range(p).len()
    }

    pub fn range(&self, p: usize) -> Range<usize> {
        let start = self.offsets[p];
        start..(start + self.chunk_width).min(self.total_width)
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_chunks()).map(|p| self.range(p))
    }
}

/// Non-owning view of a contiguous column range of a [`FeatureMatrix`].
/// Rows of the view are strided slices of the underlying matrix.
#[derive(Debug, Clone, Copy)]
pub struct ChunkView<'a, T> {
    matrix: &'a FeatureMatrix<T>,
    offset: usize,
    width: usize,
}

impl<'a, T: Scalar> ChunkView<'a, T> {
    pub fn rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [T] {
        let start = i * self.matrix.cols + self.offset;
        &self.matrix.data[start..start + self.width]
    }

    /// Copies the view into an owned matrix.
    pub fn to_matrix(&self) -> FeatureMatrix<T> {
        let mut data = Vec::with_capacity(self.rows() * self.width);
        for i in 0..self.rows() {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: self.rows(),
            cols: self.width,
            data,
        }
    }
}

/// Mutable column range of a matrix; the write-side twin of [`ChunkView`].
pub(crate) struct ColumnsMut<'a, T> {
    data: &'a mut [T],
    stride: usize,
    offset: usize,
    width: usize,
}

impl<T> ColumnsMut<'_, T> {
    pub(crate) fn rows(&self) -> usize {
        self.data.len().checked_div(self.stride).unwrap_or(0)
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [T] {
        let start = i * self.stride + self.offset;
        &mut self.data[start..start + self.width]
    }
}

/// Splits the feature axis of `f` into the column views described by `plan`.
pub fn chunk_features<'a, T: Scalar>(
    f: &'a FeatureMatrix<T>,
    plan: &ChunkPlan,
) -> Result<Vec<ChunkView<'a, T>>> {
    if plan.total_width() != f.cols() {
        return Err(Error::dim(format!(
            "chunk plan covers {} columns, matrix has {}",
            plan.total_width(),
            f.cols()
        )));
    }
    Ok(plan
        .ranges()
        .map(|r| ChunkView {
            matrix: f,
            offset: r.start,
            width: r.len(),
        })
        .collect())
}

/// Reassembles per-chunk results into one matrix.
pub fn concat_chunks<T: Scalar>(parts: &[FeatureMatrix<T>], plan: &ChunkPlan) -> Result<FeatureMatrix<T>> {
    if parts.len() != plan.num_chunks() {
        return Err(Error::dim(format!(
            "{} parts for {} chunks",
            parts.len(),
            plan.num_chunks()
        )));
    }
    let rows = parts.first().map_or(0, FeatureMatrix::rows);
    for (p, part) in parts.iter().enumerate() {
        if part.rows() != rows || part.cols() != plan.width(p) {
            return Err(Error::dim(format!(
                "part {p} is {}x{}, expected {rows}x{}",
                part.rows(),
                part.cols(),
                plan.width(p)
            )));
        }
    }
    let mut out = FeatureMatrix::zeros(rows, plan.total_width());
    for (part, range) in parts.iter().zip(plan.ranges()) {
        let mut cols = out.columns_mut(range);
        for i in 0..rows {
            cols.row_mut(i).copy_from_slice(part.row(i));
        }
    }
    Ok(out)
}

/// `f x m` with a fixed accumulation order (ascending inner index).
pub fn matmul<T: Scalar>(f: &FeatureMatrix<T>, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
    if f.cols() != m.rows() {
        return Err(Error::dim(format!(
            "cannot multiply {}x{} by {}x{}",
            f.rows(),
            f.cols(),
            m.rows(),
            m.cols()
        )));
    }
    let mut out = FeatureMatrix::zeros(f.rows(), m.cols());
    for i in 0..f.rows() {
        let out_row = out.row_mut(i);
        for (k, &a) in f.row(i).iter().enumerate() {
            for (o, &b) in out_row.iter_mut().zip(m.row(k)) {
                *o += a * b;
            }
        }
    }
    Ok(out)
}

pub(crate) fn add_bias_in_place<T: Scalar>(f: &mut FeatureMatrix<T>, bias: &[T]) {
    debug_assert_eq!(f.cols(), bias.len());
    for i in 0..f.rows() {
        for (x, &b) in f.row_mut(i).iter_mut().zip(bias) {
            *x += b;
        }
    }
}

/// Dense combination: `f x w_matrix + bias`, bias broadcast over rows.
pub fn combine<T: Scalar>(f: &FeatureMatrix<T>, w: &LayerWeights<T>) -> Result<FeatureMatrix<T>> {
    if w.bias.len() != w.w_matrix.cols() {
        return Err(Error::dim("bias length differs from weight output width"));
    }
    let mut out = matmul(f, &w.w_matrix)?;
    add_bias_in_place(&mut out, &w.bias);
    Ok(out)
}

pub fn relu<T: Scalar>(f: &FeatureMatrix<T>) -> FeatureMatrix<T> {
    let mut out = f.clone();
    relu_in_place(&mut out);
    out
}

pub(crate) fn relu_in_place<T: Scalar>(f: &mut FeatureMatrix<T>) {
    for x in &mut f.data {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Parameters of one GNN layer.
///
/// `w_matrix` is `in x out`. GAT layers carry the two attention vectors and
/// the leaky-ReLU slope; GraphSAGE layers carry `root`, the `2*out x out`
/// map applied to `[self || aggregated]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub w_matrix: FeatureMatrix<T>,
    pub bias: Vec<T>,
    pub attn_src: Option<Vec<T>>,
    pub attn_dst: Option<Vec<T>>,
    pub leaky_slope: T,
    pub root: Option<FeatureMatrix<T>>,
}

impl<T: Scalar> LayerWeights<T> {
    /// Plain linear layer: no attention, no root map.
    pub fn linear(w_matrix: FeatureMatrix<T>, bias: Vec<T>) -> Self {
        Self {
            w_matrix,
            bias,
            attn_src: None,
            attn_dst: None,
            leaky_slope: T::from_f64_lossy(0.2),
            root: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_matrix.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_matrix.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let out = self.out_dim();
        if self.bias.len() != out {
            return Err(Error::dim(format!("bias has {} entries, expected {out}", self.bias.len())));
        }
        for (name, v) in [("attn_src", &self.attn_src), ("attn_dst", &self.attn_dst)] {
            if let Some(v) = v {
                if v.len() != out {
                    return Err(Error::dim(format!("{name} has {} entries, expected {out}", v.len())));
                }
            }
        }
        if let Some(root) = &self.root {
            if root.shape() != (2 * out, out) {
                return Err(Error::dim(format!(
                    "root map is {}x{}, expected {}x{out}",
                    root.rows(),
                    root.cols(),
                    2 * out
                )));
            }
        }
        let finite = self.w_matrix.is_finite()
            && self.leaky_slope.is_finite()
            && self.root.as_ref().is_none_or(FeatureMatrix::is_finite)
            && self
                .bias
                .iter()
                .chain(self.attn_src.iter().flatten())
                .chain(self.attn_dst.iter().flatten())
                .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Value("non-finite weight".into()));
        }
        Ok(())
    }
}

const HEADER_BYTES: usize = 8;

/// Reads the binary feature format: `rows: u32 LE`, `cols: u32 LE`, then
/// `rows * cols` little-endian `f32` values, row-major.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix<f32>> {
    decode_features(&fs::read(path)?)
}

pub fn save_feature_file(f: &FeatureMatrix<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_features(f))?;
    Ok(())
}

pub fn encode_features(f: &FeatureMatrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + f.data.len() * 4);
    out.extend_from_slice(&(f.rows as u32).to_le_bytes());
    out.extend_from_slice(&(f.cols as u32).to_le_bytes());
    out.extend_from_slice(&f.to_le_bytes());
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix<f32>> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the 8-byte header",
            bytes.len()
        )));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_BYTES..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("{rows}x{cols} overflows")))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{rows}x{cols} needs {expected} body bytes, found {}",
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Value(format!(
            "non-finite value at row {}, column {}",
            pos / cols,
            pos % cols
        )));
    }
    Ok(FeatureMatrix { rows, cols, data })
}
