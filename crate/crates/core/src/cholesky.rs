//! Tile kernels for tiled Cholesky factorization, tiling and assembly, and
//! the serial references every parallel variant is checked against.
//!
//! Indexing is row `i`, column `j`; the factor lives in the lower triangle
//! (`i >= j`). Kernels are plain loops over row-major storage. All variants
//! call the same three kernels on the same inputs in the same per-tile
//! order, so their results are bitwise identical.

use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CholeskyError, NumericError};

/// A `b x b` block of doubles, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    b: usize,
    data: Vec<f64>,
}

impl Tile {
    pub fn zeros(b: usize) -> Self {
        assert!(b >= 1, "tile edge must be positive");
        Self { b, data: vec![0.0; b * b] }
    }

    pub fn identity(b: usize) -> Self {
        let mut t = Self::zeros(b);
        for i in 0..b {
            t.data[i * b + i] = 1.0;
        }
        t
    }

    pub fn from_vec(b: usize, data: Vec<f64>) -> Self {
        assert!(b >= 1 && data.len() == b * b, "tile data must hold b*b values");
        Self { b, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let b = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(b, data)
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.b + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.b + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.b..(i + 1) * self.b]
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.b).all(|i| (i + 1..self.b).all(|j| self.get(i, j) == 0.0))
    }
}

/// Dense `n x n` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "dense data must hold n*n values");
        Self { n, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        Self::from_vec(n, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Copies tile `(ti, tj)` of a `b`-blocking into `tile`.
    fn write_tile_into(&mut self, ti: usize, tj: usize, tile: &Tile) {
        let b = tile.b;
        for r in 0..b {
            let dst = (ti * b + r) * self.n + tj * b;
            self.data[dst..dst + b].copy_from_slice(tile.row(r));
        }
    }

    /// Places `tile` at block position `(ti, tj)`.
    pub fn put_tile(&mut self, ti: usize, tj: usize, tile: &Tile) {
        self.write_tile_into(ti, tj, tile);
    }
}

/// `p x p` grid of `b x b` tiles. Tiles are shared handles, so copying a
/// grid or replacing one tile is cheap.
#[derive(Clone, Debug)]
pub struct TiledMatrix {
    p: usize,
    b: usize,
    tiles: Vec<Arc<Tile>>,
}

impl PartialEq for TiledMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.b == other.b && self.tiles.iter().zip(&other.tiles).all(|(a, b)| a == b)
    }
}

impl TiledMatrix {
    pub fn zeros(p: usize, b: usize) -> Self {
        let zero = Arc::new(Tile::zeros(b));
        Self { p, b, tiles: vec![zero; p * p] }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n(&self) -> usize {
        self.p * self.b
    }

    pub fn tile(&self, i: usize, j: usize) -> &Arc<Tile> {
        &self.tiles[i * self.p + j]
    }

    pub fn set_tile(&mut self, i: usize, j: usize, tile: Arc<Tile>) {
        assert_eq!(tile.b, self.b, "tile size mismatch");
        self.tiles[i * self.p + j] = tile;
    }

    /// True if every tile above the block diagonal is zero and every
    /// diagonal tile is lower-triangular.
    pub fn is_lower_factor(&self) -> bool {
        (0..self.p).all(|i| {
            self.tile(i, i).is_lower_triangular()
                && (i + 1..self.p).all(|j| self.tile(i, j).data.iter().all(|&x| x == 0.0))
        })
    }
}

/// Dot product with four independent partial sums; every kernel and the
/// dense reference share it, so the summation order is the same everywhere
/// a given product is formed.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Unblocked lower Cholesky of the `n x n` row-major matrix `src`. Reads
/// only the lower triangle; the result has exact zeros above the diagonal.
fn factor_lower(src: &[f64], n: usize) -> Result<Vec<f64>, NumericError> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let (head, tail) = l.split_at_mut((j + 1) * n);
        let row_j = &mut head[j * n..];
        let pivot = src[j * n + j] - dot(&row_j[..j], &row_j[..j]);
        if !(pivot > 0.0) {
            return Err(NumericError::NonPositivePivot { index: j, value: pivot });
        }
        let d = pivot.sqrt();
        row_j[j] = d;
        let row_j = &row_j[..j];
        for (r, row_i) in tail.chunks_exact_mut(n).enumerate() {
            let i = j + 1 + r;
            row_i[j] = (src[i * n + j] - dot(&row_i[..j], row_j)) / d;
        }
    }
    Ok(l)
}

/// Factors a diagonal tile: `a = L Lᵀ`, `L` lower-triangular.
pub fn potrf_tile(a: &Tile) -> Result<Tile, NumericError> {
    Ok(Tile { b: a.b, data: factor_lower(&a.data, a.b)? })
}

/// Solves `X L_kkᵀ = a_jk` for `X` by forward substitution on each row.
pub fn trsm_tile(l_kk: &Tile, a_jk: &Tile) -> Result<Tile, NumericError> {
    let b = l_kk.b;
    assert_eq!(a_jk.b, b, "tile size mismatch");
    if let Some(index) = (0..b).find(|&c| l_kk.get(c, c) == 0.0) {
        return Err(NumericError::ZeroDiagonal { index });
    }
    let mut x = vec![0.0; b * b];
    for (r, x_row) in x.chunks_exact_mut(b).enumerate() {
        let a_row = a_jk.row(r);
        for c in 0..b {
            let l_row = l_kk.row(c);
            x_row[c] = (a_row[c] - dot(&l_row[..c], &x_row[..c])) / l_row[c];
        }
    }
    Ok(Tile { b, data: x })
}

/// `a_ij - l_ik l_jkᵀ`, computed over the full tile.
pub fn update_tile(a_ij: &Tile, l_ik: &Tile, l_jk: &Tile) -> Tile {
    let b = a_ij.b;
    assert!(l_ik.b == b && l_jk.b == b, "tile size mismatch");
    let mut out = vec![0.0; b * b];
    for (r, out_row) in out.chunks_exact_mut(b).enumerate() {
        let left = l_ik.row(r);
        let a_row = a_ij.row(r);
        for c in 0..b {
            out_row[c] = a_row[c] - dot(left, l_jk.row(c));
        }
    }
    Tile { b, data: out }
}

/// Kernel invocation counts of a `p x p` tiled factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskCounts {
    pub potrf: u64,
    pub trsm: u64,
    pub update: u64,
}

impl TaskCounts {
    pub fn for_blocks(p: usize) -> Self {
        let p = p as u64;
        let update = (0..p).map(|k| (p - 1 - k) * (p - k) / 2).sum();
        Self { potrf: p, trsm: p * p.saturating_sub(1) / 2, update }
    }

    pub fn total(&self) -> u64 {
        self.potrf + self.trsm + self.update
    }

    /// Tiles of the factor: p(p+1)/2.
    pub fn out_tiles(p: usize) -> u64 {
        (p * (p + 1) / 2) as u64
    }
}

/// The k/j/i loop nest over the three kernels.
pub fn serial_tiled_cholesky(m: &TiledMatrix) -> Result<TiledMatrix, CholeskyError> {
    let p = m.p;
    let mut a = m.clone();
    let mut l = TiledMatrix::zeros(p, m.b);
    for k in 0..p {
        let l_kk = Arc::new(potrf_tile(a.tile(k, k)).map_err(|source| CholeskyError::Numeric { k, i: k, j: k, source })?);
        l.set_tile(k, k, l_kk.clone());
        for i in k + 1..p {
            let l_ik = trsm_tile(&l_kk, a.tile(i, k)).map_err(|source| CholeskyError::Numeric { k, i, j: k, source })?;
            l.set_tile(i, k, Arc::new(l_ik));
        }
        for j in k + 1..p {
            for i in j..p {
                let updated = update_tile(a.tile(i, j), l.tile(i, k), l.tile(j, k));
                a.set_tile(i, j, Arc::new(updated));
            }
        }
    }
    Ok(l)
}

/// Unblocked Cholesky of a whole matrix.
pub fn dense_cholesky(a: &DenseMatrix) -> Result<DenseMatrix, NumericError> {
    Ok(DenseMatrix { n: a.n, data: factor_lower(&a.data, a.n)? })
}

/// Splits `a` into `b x b` tiles (all `p x p` of them).
pub fn decompose(a: &DenseMatrix, b: usize) -> Result<TiledMatrix, CholeskyError> {
    if b == 0 {
        return Err(CholeskyError::ZeroBlock);
    }
    if a.n % b != 0 || a.n == 0 {
        return Err(CholeskyError::Indivisible { n: a.n, b });
    }
    let p = a.n / b;
    let mut tiles = Vec::with_capacity(p * p);
    for ti in 0..p {
        for tj in 0..p {
            let mut data = Vec::with_capacity(b * b);
            for r in 0..b {
                let start = (ti * b + r) * a.n + tj * b;
                data.extend_from_slice(&a.data[start..start + b]);
            }
            tiles.push(Arc::new(Tile { b, data }));
        }
    }
    Ok(TiledMatrix { p, b, tiles })
}

pub fn assemble(m: &TiledMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.n());
    for ti in 0..m.p {
        for tj in 0..m.p {
            out.write_tile_into(ti, tj, m.tile(ti, tj));
        }
    }
    out
}

/// `M Mᵀ + n I` for `M` uniform in `[0, 1)`, deterministic in `seed`.
pub fn gen_spd(n: usize, seed: u64) -> DenseMatrix {
    assert!(n >= 1, "matrix size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let mut a = DenseMatrix::zeros(n);
    for i in 0..n {
        let row_i = &m[i * n..(i + 1) * n];
        for j in 0..=i {
            let v = dot(row_i, &m[j * n..(j + 1) * n]);
            a.data[i * n + j] = v;
            a.data[j * n + i] = v;
        }
        a.data[i * n + i] += n as f64;
    }
    a
}

/// `‖A - L Lᵀ‖_F / ‖A‖_F`, using the lower triangle of `L` only.
pub fn residual(a: &DenseMatrix, l: &DenseMatrix) -> f64 {
    let n = a.n;
    assert_eq!(l.n, n, "size mismatch");
    let mut err = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let llt = dot(&l.row(i)[..=j], &l.row(j)[..=j]);
            let d = a.get(i, j) - llt;
            err += if i == j { d * d } else { 2.0 * d * d };
        }
    }
    err.sqrt() / a.frobenius()
}

const MAGIC: &[u8; 4] = b"TCHO";

/// Writes `"TCHO"`, `n` as little-endian u64, then n² little-endian f64
/// values in row-major order.
pub fn write_matrix<W: Write>(mut w: W, a: &DenseMatrix) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(a.n as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(a.data.len() * 8);
    for x in &a.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DenseMatrix, CholeskyError> {
    let io_err = |e: io::Error| CholeskyError::Format(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CholeskyError::Format(format!("bad magic {magic:?}")));
    }
    let mut n = [0u8; 8];
    r.read_exact(&mut n).map_err(io_err)?;
    let n = usize::try_from(u64::from_le_bytes(n)).map_err(|e| CholeskyError::Format(e.to_string()))?;
    let len = n.checked_mul(n).and_then(|x| x.checked_mul(8)).ok_or_else(|| CholeskyError::Format("size overflow".into()))?;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes).map_err(io_err)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DenseMatrix { n, data })
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix, CholeskyError> {
    let file = std::fs::File::open(path).map_err(|e| CholeskyError::Format(format!("{}: {e}", path.display())))?;
    read_matrix(io::BufReader::new(file))
}

pub fn save_matrix(path: &Path, a: &DenseMatrix) -> io::Result<()> {
    write_matrix(io::BufWriter::new(std::fs::File::create(path)?), a)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook triple loop, independent of `dot`.
    fn naive_update(a: &Tile, x: &Tile, y: &Tile) -> Tile {
        let b = a.b();
        let mut out = a.clone();
        for r in 0..b {
            for c in 0..b {
                let mut s = 0.0;
                for m in 0..b {
                    s += x.get(r, m) * y.get(c, m);
                }
                out.set(r, c, a.get(r, c) - s);
            }
        }
        out
    }

    fn reconstruct(l: &Tile) -> Tile {
        naive_update(&Tile::zeros(l.b()), l, l)
    }

    fn close(a: &Tile, b: &Tile, tol: f64) -> bool {
        a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn potrf_two_by_two() {
        let a = Tile::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let l = potrf_tile(&a).unwrap();
        assert_eq!(l.data(), &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        // L Lᵀ = a, via the naive product with a negated sign
        let mut neg = reconstruct(&l);
        neg.data.iter_mut().for_each(|x| *x = -*x);
        assert!(close(&neg, &a, 1e-15));
    }

    #[test]
    fn potrf_identity_and_errors() {
        assert_eq!(potrf_tile(&Tile::identity(5)).unwrap(), Tile::identity(5));
        let err = potrf_tile(&Tile::from_rows(&[&[-1.0]])).unwrap_err();
        assert!(matches!(err, NumericError::NonPositivePivot { index: 0, .. }));
        let err = potrf_tile(&Tile::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, NumericError::NonPositivePivot { index: 1, .. }));
    }

    #[test]
    fn potrf_ignores_upper_triangle() {
        let a = Tile::from_rows(&[&[4.0, 99.0], &[2.0, 3.0]]);
        assert_eq!(potrf_tile(&a).unwrap().data(), &[2.0, 0.0, 1.0, 2f64.sqrt()]);
    }

    #[test]
    fn trsm_cases() {
        let x = Tile::from_rows(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(trsm_tile(&Tile::identity(2), &x).unwrap(), x);
        let l = Tile::from_rows(&[&[2.0, 0.0], &[1.0, 2f64.sqrt()]]);
        let a = Tile::from_rows(&[&[2.0, 1.0], &[4.0, 2.0]]);
        let sol = trsm_tile(&l, &a).unwrap();
        assert_eq!(sol.data(), &[1.0, 0.0, 2.0, 0.0]);
        // X Lᵀ reconstructs a
        let back = naive_update(&Tile::zeros(2), &sol, &l);
        assert!(back.data().iter().zip(a.data()).all(|(x, y)| (-x - y).abs() < 1e-15));
        assert_eq!(trsm_tile(&l, &Tile::zeros(2)).unwrap(), Tile::zeros(2));
        let singular = Tile::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(trsm_tile(&singular, &a).unwrap_err(), NumericError::ZeroDiagonal { index: 1 });
    }

    #[test]
    fn update_cases() {
        let a = Tile::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(update_tile(&a, &Tile::zeros(2), &Tile::identity(2)), a);
        let expect = Tile::from_rows(&[&[0.0, 2.0], &[3.0, 3.0]]);
        assert_eq!(update_tile(&a, &Tile::identity(2), &Tile::identity(2)), expect);
        let x = Tile::from_rows(&[&[0.3, -1.2], &[2.5, 0.7]]);
        let y = Tile::from_rows(&[&[-0.4, 1.1], &[0.9, 3.3]]);
        assert!(close(&update_tile(&a, &x, &y), &naive_update(&a, &x, &y), 1e-14));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_tile = |b: usize| Tile::from_vec(b, (0..b * b).map(|_| rng.random::<f64>() - 0.5).collect());
        let (a, x, y) = (rand_tile(7), rand_tile(7), rand_tile(7));
        assert!(close(&update_tile(&a, &x, &y), &naive_update(&a, &x, &y), 1e-13));
    }

    #[test]
    fn decompose_round_trip_and_indexing() {
        let a = gen_spd(16, 3);
        let t = decompose(&a, 4).unwrap();
        assert_eq!(assemble(&t), a);
        let mut m = DenseMatrix::zeros(8);
        m.set(5, 2, 42.0);
        let t = decompose(&m, 4).unwrap();
        assert_eq!(t.tile(1, 0).get(1, 2), 42.0);
        assert_eq!(decompose(&DenseMatrix::zeros(8), 3).unwrap_err(), CholeskyError::Indivisible { n: 8, b: 3 });
        assert_eq!(decompose(&DenseMatrix::zeros(8), 0).unwrap_err(), CholeskyError::ZeroBlock);
    }

    #[test]
    fn gen_spd_properties() {
        let a = gen_spd(33, 11);
        assert_eq!(a, gen_spd(33, 11));
        assert_ne!(a, gen_spd(33, 12));
        for i in 0..33 {
            for j in 0..33 {
                assert_eq!(a.get(i, j).to_bits(), a.get(j, i).to_bits());
            }
        }
        dense_cholesky(&a).unwrap();
    }

    #[test]
    fn tiled_matches_dense() {
        let a = gen_spd(8, 1);
        let tiled = assemble(&serial_tiled_cholesky(&decompose(&a, 2).unwrap()).unwrap());
        let dense = dense_cholesky(&a).unwrap();
        for (x, y) in tiled.data().iter().zip(dense.data()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
        assert!(residual(&a, &tiled) <= 1e-14);
    }

    #[test]
    fn one_tile_is_potrf() {
        let a = gen_spd(6, 4);
        let tiled = serial_tiled_cholesky(&decompose(&a, 6).unwrap()).unwrap();
        let l = potrf_tile(&Tile::from_vec(6, a.data().to_vec())).unwrap();
        assert_eq!(**tiled.tile(0, 0), l);
        assert_eq!(assemble(&tiled), dense_cholesky(&a).unwrap());
    }

    #[test]
    fn factor_is_exactly_lower() {
        let a = gen_spd(12, 5);
        let l = serial_tiled_cholesky(&decompose(&a, 4).unwrap()).unwrap();
        assert!(l.is_lower_factor());
        let d = assemble(&l);
        for i in 0..12 {
            for j in i + 1..12 {
                assert_eq!(d.get(i, j).to_bits(), 0);
            }
        }
    }

    #[test]
    fn numeric_error_carries_location() {
        let mut a = gen_spd(4, 2);
        a.set(2, 2, -100.0);
        let err = serial_tiled_cholesky(&decompose(&a, 2).unwrap()).unwrap_err();
        assert!(matches!(err, CholeskyError::Numeric { k: 1, i: 1, j: 1, .. }), "{err}");
    }

    #[test]
    fn matrix_file_round_trip() {
        let a = gen_spd(5, 8);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        assert_eq!(&buf[..4], b"TCHO");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 5);
        assert_eq!(buf.len(), 12 + 25 * 8);
        assert_eq!(read_matrix(&buf[..]).unwrap(), a);
        assert!(read_matrix(&b"XCHO"[..]).is_err());
        assert!(read_matrix(&buf[..20]).is_err());
    }

    #[test]
    fn task_counts_closed_form() {
        let c = TaskCounts::for_blocks(4);
        assert_eq!((c.potrf, c.trsm, c.update), (4, 6, 10));
        assert_eq!(TaskCounts::for_blocks(1), TaskCounts { potrf: 1, trsm: 0, update: 0 });
        assert_eq!(TaskCounts::out_tiles(4), 10);
        // brute-force enumeration of the loop nest
        for p in 1..10 {
            let mut update = 0;
            for k in 0..p {
                for j in k + 1..p {
                    update += p - j;
                }
            }
            assert_eq!(TaskCounts::for_blocks(p).update, update as u64);
        }
    }
}
