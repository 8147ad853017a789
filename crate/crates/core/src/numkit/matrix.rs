//! Dense row-major `f64` matrices.
//!
//! The product kernel packs both operands into panels and walks the
//! contraction index in ascending order for every output element, using one
//! fused multiply-add per term. The result is bit-identical to the textbook
//! `i,k,j` loop with `c = a.mul_add(b, c)` regardless of blocking or of which
//! micro-kernel (AVX-512 or scalar) runs.

use std::cell::RefCell;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major values. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite entry at flat index {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Data("ragged rows".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    /// Changes the shape in place, keeping the allocation. Contents are
    /// unspecified afterwards; callers overwrite every entry.
    pub(crate) fn reset_shape(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, 0.0);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                t.data[j * self.rows + i] = v;
            }
        }
        t
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Standard product `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        matmul(self, rhs)
    }
}

/// Frobenius norm as a free function, mirroring [`Matrix::frobenius_norm`].
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.frobenius_norm()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, &b.data, &mut c.data);
    Ok(c)
}

const MR: usize = 12;
const NR: usize = 16;
const MC: usize = 48;
const KC: usize = 1024;

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`. `c` is overwritten.
///
/// Every `c[i][j]` is accumulated as `fma(a[i][k], b[k][j], acc)` in ascending
/// `k` starting from `0.0`; blocking only changes when partial sums are parked
/// in `c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    if m == 0 || n == 0 || k == 0 {
        return;
    }

    // Panel jp holds columns jp*NR..jp*NR+NR of b, laid out [k][NR], zero padded.
    let panels = n.div_ceil(NR);
    PACK.with(|cell| {
        let mut bufs = cell.borrow_mut();
        let (bpack, apack) = &mut *bufs;
        gemm_packed(m, k, n, a, b, c, panels, bpack, apack);
    });
}

thread_local! {
    /// Packing buffers reused across calls on the same thread.
    static PACK: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

#[allow(clippy::too_many_arguments)]
fn gemm_packed(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    panels: usize,
    bpack: &mut Vec<f64>,
    apack: &mut Vec<f64>,
) {
    if bpack.len() < panels * k * NR {
        bpack.resize(panels * k * NR, 0.0);
    }
    for jp in 0..panels {
        let j0 = jp * NR;
        let w = NR.min(n - j0);
        let dst = &mut bpack[jp * k * NR..(jp + 1) * k * NR];
        for kk in 0..k {
            let row = &mut dst[kk * NR..(kk + 1) * NR];
            row[..w].copy_from_slice(&b[kk * n + j0..kk * n + j0 + w]);
            row[w..].fill(0.0);
        }
    }

    // Row strip of a, laid out [kc][MR], zero padded past the last row.
    // Short, wide products (few rows, long contraction) run as one row block so
    // the packed right operand streams through cache once.
    let mc_block = if m <= 2 * MC + MR { m } else { MC };
    if apack.len() < mc_block.div_ceil(MR) * MR * KC {
        apack.resize(mc_block.div_ceil(MR) * MR * KC, 0.0);
    }
    let mut tile = [[0.0f64; NR]; MR];

    for ic in (0..m).step_by(mc_block) {
        let mc = mc_block.min(m - ic);
        let strips = mc.div_ceil(MR);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            for s in 0..strips {
                let dst = &mut apack[s * MR * kc..(s + 1) * MR * kc];
                for r in 0..MR {
                    let i = ic + s * MR + r;
                    if i < ic + mc {
                        let src = &a[i * k + pc..i * k + pc + kc];
                        for (kk, &x) in src.iter().enumerate() {
                            dst[kk * MR + r] = x;
                        }
                    } else {
                        for kk in 0..kc {
                            dst[kk * MR + r] = 0.0;
                        }
                    }
                }
            }
            for jp in 0..panels {
                let j0 = jp * NR;
                let w = NR.min(n - j0);
                let bpanel = &bpack[(jp * k + pc) * NR..(jp * k + pc + kc) * NR];
                for s in 0..strips {
                    let i0 = ic + s * MR;
                    let h = MR.min(ic + mc - i0);
                    for (r, row) in tile.iter_mut().enumerate().take(h) {
                        row[..w].copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + w]);
                    }
                    micro_kernel(&apack[s * MR * kc..(s + 1) * MR * kc], bpanel, &mut tile);
                    for (r, row) in tile.iter().enumerate().take(h) {
                        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + w].copy_from_slice(&row[..w]);
                    }
                }
            }
        }
    }
}

fn micro_kernel(apanel: &[f64], bpanel: &[f64], tile: &mut [[f64; NR]; MR]) {
    debug_assert_eq!(apanel.len() / MR, bpanel.len() / NR);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature checked above; panel lengths agree.
            unsafe { micro_kernel_avx512(apanel, bpanel, tile) };
            return;
        }
    }
    micro_kernel_scalar(apanel, bpanel, tile);
}

#[inline(always)]
fn micro_kernel_scalar(apanel: &[f64], bpanel: &[f64], tile: &mut [[f64; NR]; MR]) {
    for (av, bv) in apanel.chunks_exact(MR).zip(bpanel.chunks_exact(NR)) {
        for r in 0..MR {
            let x = av[r];
            for j in 0..NR {
                tile[r][j] = x.mul_add(bv[j], tile[r][j]);
            }
        }
    }
}

// One rounding per term, same as `f64::mul_add` in the scalar path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
#[allow(clippy::needless_range_loop)]
unsafe fn micro_kernel_avx512(apanel: &[f64], bpanel: &[f64], tile: &mut [[f64; NR]; MR]) {
    use std::arch::x86_64::*;
    let kc = apanel.len() / MR;
    let ap = apanel.as_ptr();
    let bp = bpanel.as_ptr();
    let mut acc: [[__m512d; 2]; MR] = [[_mm512_setzero_pd(); 2]; MR];
    for r in 0..MR {
        acc[r][0] = _mm512_loadu_pd(tile[r].as_ptr());
        acc[r][1] = _mm512_loadu_pd(tile[r].as_ptr().add(8));
    }
    for kk in 0..kc {
        let b0 = _mm512_loadu_pd(bp.add(kk * NR));
        let b1 = _mm512_loadu_pd(bp.add(kk * NR + 8));
        for r in 0..MR {
            let x = _mm512_set1_pd(*ap.add(kk * MR + r));
            acc[r][0] = _mm512_fmadd_pd(x, b0, acc[r][0]);
            acc[r][1] = _mm512_fmadd_pd(x, b1, acc[r][1]);
        }
    }
    for r in 0..MR {
        _mm512_storeu_pd(tile[r].as_mut_ptr(), acc[r][0]);
        _mm512_storeu_pd(tile[r].as_mut_ptr().add(8), acc[r][1]);
    }
}
