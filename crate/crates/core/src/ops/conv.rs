//! 2-D cross-correlation with zero padding.
//!
//! The public entry points use a patch-matrix (im2col) formulation on top of
//! [`gemm`](super::gemm). [`reference`] holds the direct nested-loop version;
//! both accumulate every sum in the same order and agree bitwise.

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm_packed, panel_count, RowsView, NR};
use crate::tensor::{Scalar, Shape, Tensor};

/// Columns of the patch matrix processed per block.
const COL_BLOCK: usize = 256 * NR;
/// Rows of the input-gradient patch matrix materialized per block.
const ROW_BLOCK: usize = 64;

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, bias: Shape, stride: usize, pad: usize) -> Result<Self> {
        let [batch, in_c, h, w] = input.0;
        let [out_c, w_in, kh, kw] = weight.0;
        if w_in != in_c {
            return Err(Error::dim("conv2d (input vs weight channels)", input, weight));
        }
        if bias.numel() != out_c {
            return Err(Error::dim("conv2d (bias vs output channels)", bias, weight));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be positive".into()));
        }
        let out_dim = |len: usize, k: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * pad;
            if padded < k || !(padded - k).is_multiple_of(stride) {
                return Err(Error::Geometry(format!(
                    "conv2d {axis}: ({len} + 2*{pad} - {k}) is not a non-negative multiple of stride {stride}"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        let oh = out_dim(h, kh, "height")?;
        let ow = out_dim(w, kw, "width")?;
        Ok(ConvGeometry { batch, in_c, h, w, out_c, kh, kw, stride, pad, oh, ow })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.batch, self.out_c, self.oh, self.ow)
    }

    /// Length of one patch (rows of the patch matrix).
    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `lo..hi` whose tap at kernel column `kx` lands inside the input.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        // ox * stride + kx - pad < w  <=>  ox * stride < w + pad - kx
        let limit = (self.w + self.pad).saturating_sub(kx);
        let hi = limit.div_ceil(self.stride).min(self.ow);
        (lo.min(hi), hi)
    }

    /// Input coordinate read by output `(oy, ox)` at tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// Gradients of a convolution with respect to each operand.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), bias.shape(), stride, pad)?;
    let (k_len, n) = (g.patch_len(), g.out_plane());
    let mut out = Tensor::zeros(g.output_shape());
    let in_per = g.in_c * g.h * g.w;
    let out_per = g.out_c * n;
    let mut panels = Vec::new();
    for b in 0..g.batch {
        let x = &input.data()[b * in_per..(b + 1) * in_per];
        let y = &mut out.data_mut()[b * out_per..(b + 1) * out_per];
        if g.direct_ok() {
            conv2d_direct_fast(&g, x, weight.data(), bias.data(), y);
        } else {
            for col0 in (0..n).step_by(COL_BLOCK) {
                let cols = (n - col0).min(COL_BLOCK);
                pack_patches_by_column(&g, x, col0, cols, &mut panels);
                let a = RowsView { data: weight.data(), rows: g.out_c, stride: k_len, offset: 0 };
                gemm_packed(a, k_len, &panels, cols, y, n, col0, false);
            }
            for (row, &bv) in y.chunks_exact_mut(n).zip(bias.data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let out_c = weight.shape().n();
    let g = ConvGeometry::new(input.shape(), weight.shape(), Shape::new(out_c, 1, 1, 1), stride, pad)?;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::dim("conv2d backward (grad vs output)", grad_out.shape(), g.output_shape()));
    }
    let (k_len, n) = (g.patch_len(), g.out_plane());
    let in_per = g.in_c * g.h * g.w;
    let out_per = g.out_c * n;

    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = vec![T::zero(); g.out_c * k_len];
    let mut grad_b = vec![T::zero(); g.out_c];

    let weight_t = transpose(weight.data(), g.out_c, k_len);
    let mut sample_w = vec![T::zero(); g.out_c * k_len];
    let mut panels = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..g.batch {
        let x = &input.data()[b * in_per..(b + 1) * in_per];
        let dy = &grad_out.data()[b * out_per..(b + 1) * out_per];

        bias_grad_accumulate(dy, n, &mut grad_b);

        // Weight gradient: reduction over output positions, ascending.
        sample_w.iter_mut().for_each(|v| *v = T::zero());
        if g.direct_ok() {
            conv2d_weight_grad_fast(&g, x, dy, &mut sample_w);
        } else {
        for col0 in (0..n).step_by(COL_BLOCK) {
            let cols = (n - col0).min(COL_BLOCK);
            pack_patches_by_row(&g, x, col0, cols, &mut panels);
            let a = RowsView { data: dy, rows: g.out_c, stride: n, offset: col0 };
            gemm_packed(a, cols, &panels, k_len, &mut sample_w, k_len, 0, true);
        }
        }
        for (acc, v) in grad_w.iter_mut().zip(&sample_w) {
            *acc += *v;
        }

        let dx = &mut grad_in.data_mut()[b * in_per..(b + 1) * in_per];
        if g.direct_ok() {
            conv2d_input_grad_fast(&g, dy, weight.data(), dx);
            continue;
        }
        // Input gradient: patch-matrix gradient, then scatter back.
        pack_rows_by_column(dy, g.out_c, n, &mut panels);
        for k0 in (0..k_len).step_by(ROW_BLOCK) {
            let rows = (k_len - k0).min(ROW_BLOCK);
            dcol.clear();
            dcol.resize(rows * n, T::zero());
            let a = RowsView { data: &weight_t, rows, stride: g.out_c, offset: k0 * g.out_c };
            gemm_packed(a, g.out_c, &panels, n, &mut dcol, n, 0, false);
            scatter_patches(&g, &dcol, k0, rows, dx);
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: Tensor::from_vec(weight.shape(), grad_w)?,
        bias: Tensor::from_vec(Shape::new(1, out_c, 1, 1), grad_b)?,
    })
}

fn bias_grad_accumulate<T: Scalar>(dy: &[T], n: usize, grad_b: &mut [T]) {
    for (acc, row) in grad_b.iter_mut().zip(dy.chunks_exact(n)) {
        let mut s = T::zero();
        for &v in row {
            s += v;
        }
        *acc += s;
    }
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Walks the patch matrix for columns `col0..col0+cols`, calling
/// `f(k, local column, source offset)` for every in-bounds entry.
#[inline(always)]
fn for_each_patch_entry(g: &ConvGeometry, col0: usize, cols: usize, mut f: impl FnMut(usize, usize, usize)) {
    let taps = g.kh * g.kw;
    for k in 0..g.patch_len() {
        let (c, ky, kx) = (k / taps, (k / g.kw) % g.kh, k % g.kw);
        let plane = c * g.h * g.w;
        let (mut oy, mut ox) = (col0 / g.ow, col0 % g.ow);
        let mut local = 0;
        while local < cols {
            let run = (g.ow - ox).min(cols - local);
            let iy = (oy * g.stride + ky).wrapping_sub(g.pad);
            if iy < g.h {
                let row = plane + iy * g.w;
                for t in 0..run {
                    let ix = ((ox + t) * g.stride + kx).wrapping_sub(g.pad);
                    if ix < g.w {
                        f(k, local + t, row + ix);
                    }
                }
            }
            local += run;
            ox = 0;
            oy += 1;
        }
    }
}

/// Patch matrix `[k][j]` packed as column panels `[k][NR]`.
fn pack_patches_by_column<T: Scalar>(g: &ConvGeometry, x: &[T], col0: usize, cols: usize, out: &mut Vec<T>) {
    let k_len = g.patch_len();
    out.clear();
    out.resize(panel_count(cols) * k_len * NR, T::zero());
    for_each_patch_entry(g, col0, cols, |k, j, src| {
        out[(j / NR) * k_len * NR + k * NR + j % NR] = x[src];
    });
}

/// Transposed patch matrix `[j][k]` packed as panels over `k`, laid out `[j][NR]`.
fn pack_patches_by_row<T: Scalar>(g: &ConvGeometry, x: &[T], col0: usize, cols: usize, out: &mut Vec<T>) {
    let k_len = g.patch_len();
    out.clear();
    out.resize(panel_count(k_len) * cols * NR, T::zero());
    for_each_patch_entry(g, col0, cols, |k, j, src| {
        out[(k / NR) * cols * NR + j * NR + k % NR] = x[src];
    });
}

/// Plain row-major `[rows][n]` matrix packed as column panels.
fn pack_rows_by_column<T: Scalar>(m: &[T], rows: usize, n: usize, out: &mut Vec<T>) {
    out.clear();
    out.resize(panel_count(n) * rows * NR, T::zero());
    for r in 0..rows {
        for j in 0..n {
            out[(j / NR) * rows * NR + r * NR + j % NR] = m[r * n + j];
        }
    }
}

/// Adds patch-matrix rows `k0..k0+rows` back onto the input positions they
/// read, row by row in ascending column order.
fn scatter_patches<T: Scalar>(g: &ConvGeometry, dcol: &[T], k0: usize, rows: usize, dx: &mut [T]) {
    let n = g.out_plane();
    let taps = g.kh * g.kw;
    for k in k0..k0 + rows {
        let (c, ky, kx) = (k / taps, (k / g.kw) % g.kh, k % g.kw);
        let row = &dcol[(k - k0) * n..(k - k0 + 1) * n];
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        let (lo, hi) = g.valid_columns(kx);
        for oy in 0..g.oh {
            let iy = (oy * g.stride + ky).wrapping_sub(g.pad);
            if iy >= g.h || lo >= hi {
                continue;
            }
            let src = &row[oy * g.ow..(oy + 1) * g.ow];
            let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
            if g.stride == 1 {
                let shift = lo + kx - g.pad;
                for (d, &v) in dst[shift..shift + hi - lo].iter_mut().zip(&src[lo..hi]) {
                    *d += v;
                }
            } else {
                for ox in lo..hi {
                    dst[ox * g.stride + kx - g.pad] += src[ox];
                }
            }
        }
    }
}

/// Row-chunk width of the register-blocked direct kernels.
const XW: usize = 16;
/// Channels computed together by the direct kernels.
const CB: usize = 4;

impl ConvGeometry {
    /// Stride-1 convolutions whose padding keeps the transposed pass in
    /// bounds use the register-blocked direct kernels.
    fn direct_ok(&self) -> bool {
        self.stride == 1 && self.pad < self.kh && self.pad < self.kw && self.ow >= XW
    }
}

/// Copies `planes` planes of `h × w` into a zero border of `top`/`left`
/// rows/columns, producing planes of `ph × pw`.
fn pad_planes<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, top: usize, left: usize, ph: usize, pw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); planes * ph * pw];
    for p in 0..planes {
        for y in 0..h {
            let src = &x[(p * h + y) * w..(p * h + y + 1) * w];
            let d = (p * ph + y + top) * pw + left;
            out[d..d + w].copy_from_slice(src);
        }
    }
    out
}

/// Direct forward pass: each output row chunk accumulates all taps in
/// registers, in patch order, reading a zero-padded copy of the input.
fn conv2d_direct_fast<T: Scalar>(g: &ConvGeometry, x: &[T], weight: &[T], bias: &[T], y: &mut [T]) {
    let (ph, pw) = (g.h + 2 * g.pad, g.w + 2 * g.pad + XW);
    let xp = pad_planes(x, g.in_c, g.h, g.w, g.pad, g.pad, ph, pw);
    let k_len = g.patch_len();
    let n = g.out_plane();
    let zeros = vec![T::zero(); k_len];
    for o0 in (0..g.out_c).step_by(CB) {
        let live = (g.out_c - o0).min(CB);
        let wrows: [&[T]; CB] = std::array::from_fn(|i| {
            if i < live { &weight[(o0 + i) * k_len..(o0 + i + 1) * k_len] } else { &zeros[..] }
        });
        for oy in 0..g.oh {
            for x0 in (0..g.ow).step_by(XW) {
                let mut acc = [[T::zero(); XW]; CB];
                let mut k = 0;
                for c in 0..g.in_c {
                    for ky in 0..g.kh {
                        let row = &xp[(c * ph + oy + ky) * pw..(c * ph + oy + ky + 1) * pw];
                        for kx in 0..g.kw {
                            let src: &[T; XW] = row[x0 + kx..x0 + kx + XW].try_into().unwrap();
                            for i in 0..CB {
                                let wv = wrows[i][k];
                                for t in 0..XW {
                                    acc[i][t] += wv * src[t];
                                }
                            }
                            k += 1;
                        }
                    }
                }
                let width = (g.ow - x0).min(XW);
                for i in 0..live {
                    let o = o0 + i;
                    let dst = &mut y[o * n + oy * g.ow + x0..o * n + oy * g.ow + x0 + width];
                    for (d, a) in dst.iter_mut().zip(&acc[i][..width]) {
                        *d = *a + bias[o];
                    }
                }
            }
        }
    }
}

/// Output channels held in vector lanes by the direct weight-gradient kernel.
const OB: usize = 8;
/// Patch entries accumulated together by the direct weight-gradient kernel.
const KB: usize = 12;

/// Direct weight gradient for one sample. Each `(o, k)` entry is a running
/// sum over output positions in raster order, starting from zero.
fn conv2d_weight_grad_fast<T: Scalar>(g: &ConvGeometry, x: &[T], dy: &[T], dw: &mut [T]) {
    let (ph, pw) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
    let xp = pad_planes(x, g.in_c, g.h, g.w, g.pad, g.pad, ph, pw);
    let k_len = g.patch_len();
    let n = g.out_plane();
    let offsets: Vec<usize> = (0..g.in_c)
        .flat_map(|c| (0..g.kh).flat_map(move |ky| (0..g.kw).map(move |kx| (c * ph + ky) * pw + kx)))
        .collect();
    let rows: Vec<usize> = (0..g.oh).flat_map(|oy| (0..g.ow).map(move |ox| oy * pw + ox)).collect();
    let mut dyt = vec![T::zero(); n * OB];
    for o0 in (0..g.out_c).step_by(OB) {
        let live = (g.out_c - o0).min(OB);
        for i in 0..live {
            for (j, &v) in dy[(o0 + i) * n..(o0 + i + 1) * n].iter().enumerate() {
                dyt[j * OB + i] = v;
            }
        }
        for k0 in (0..k_len).step_by(KB) {
            let kn = (k_len - k0).min(KB);
            let off: [usize; KB] = std::array::from_fn(|q| offsets[k0 + q.min(kn - 1)]);
            let mut acc = [[T::zero(); OB]; KB];
            for (j, &r) in rows.iter().enumerate() {
                let d: &[T; OB] = dyt[j * OB..(j + 1) * OB].try_into().unwrap();
                for q in 0..KB {
                    let xv = xp[off[q] + r];
                    for i in 0..OB {
                        acc[q][i] += d[i] * xv;
                    }
                }
            }
            for q in 0..kn {
                for i in 0..live {
                    dw[(o0 + i) * k_len + k0 + q] = acc[q][i];
                }
            }
        }
    }
}

/// Direct input gradient. For every input pixel the taps are visited in
/// patch order and each tap's sum over output channels is formed first,
/// matching the patch-matrix route.
fn conv2d_input_grad_fast<T: Scalar>(g: &ConvGeometry, dy: &[T], weight: &[T], dx: &mut [T]) {
    let (top, left) = (g.kh - 1 - g.pad, g.kw - 1 - g.pad);
    let (ph, pw) = (g.oh + 2 * top, g.ow + 2 * left + XW);
    let dyp = pad_planes(dy, g.out_c, g.oh, g.ow, top, left, ph, pw);
    let taps = g.kh * g.kw;
    let k_len = g.patch_len();
    for c0 in (0..g.in_c).step_by(CB) {
        let live = (g.in_c - c0).min(CB);
        // w_t[tap][o][i] = weight[o][c0 + i][tap]
        let mut w_t = vec![T::zero(); taps * g.out_c * CB];
        for tap in 0..taps {
            for o in 0..g.out_c {
                for i in 0..live {
                    w_t[(tap * g.out_c + o) * CB + i] = weight[o * k_len + (c0 + i) * taps + tap];
                }
            }
        }
        for iy in 0..g.h {
            for x0 in (0..g.w).step_by(XW) {
                let mut acc = [[T::zero(); XW]; CB];
                for ky in 0..g.kh {
                    // output row oy = iy + pad - ky, stored at padded row oy + top
                    let prow = iy + g.pad + top - ky;
                    for kx in 0..g.kw {
                        let tap = ky * g.kw + kx;
                        let col = x0 + g.pad + left - kx;
                        let mut s = [[T::zero(); XW]; CB];
                        for o in 0..g.out_c {
                            let base = (o * ph + prow) * pw + col;
                            let src: &[T; XW] = dyp[base..base + XW].try_into().unwrap();
                            let wv = &w_t[(tap * g.out_c + o) * CB..(tap * g.out_c + o + 1) * CB];
                            for i in 0..CB {
                                for t in 0..XW {
                                    s[i][t] += wv[i] * src[t];
                                }
                            }
                        }
                        for i in 0..CB {
                            for t in 0..XW {
                                acc[i][t] += s[i][t];
                            }
                        }
                    }
                }
                let width = (g.w - x0).min(XW);
                for i in 0..live {
                    let base = ((c0 + i) * g.h + iy) * g.w + x0;
                    for (d, a) in dx[base..base + width].iter_mut().zip(&acc[i][..width]) {
                        *d += *a;
                    }
                }
            }
        }
    }
}

/// Direct nested-loop convolution, kept as the correctness reference.
pub mod reference {
    use super::*;

    pub fn conv2d<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let g = ConvGeometry::new(input.shape(), weight.shape(), bias.shape(), stride, pad)?;
        let mut out = Tensor::zeros(g.output_shape());
        let mut idx = 0;
        for b in 0..g.batch {
            for o in 0..g.out_c {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = T::zero();
                        for c in 0..g.in_c {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                        acc += weight.at(o, c, ky, kx) * input.at(b, c, iy, ix);
                                    }
                                }
                            }
                        }
                        out.data_mut()[idx] = acc + bias.data()[o];
                        idx += 1;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn conv2d_backward<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        grad_out: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGrads<T>> {
        let out_c = weight.shape().n();
        let g = ConvGeometry::new(input.shape(), weight.shape(), Shape::new(out_c, 1, 1, 1), stride, pad)?;
        if grad_out.shape() != g.output_shape() {
            return Err(Error::dim("conv2d backward (grad vs output)", grad_out.shape(), g.output_shape()));
        }
        let mut grad_in = Tensor::zeros(input.shape());
        let mut grad_w = Tensor::zeros(weight.shape());
        let mut grad_b = vec![T::zero(); out_c];
        let n = g.out_plane();
        for b in 0..g.batch {
            let dy = &grad_out.data()[b * out_c * n..(b + 1) * out_c * n];
            super::bias_grad_accumulate(dy, n, &mut grad_b);
            for o in 0..out_c {
                for c in 0..g.in_c {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let mut s = T::zero();
                            for oy in 0..g.oh {
                                for ox in 0..g.ow {
                                    if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                        s += grad_out.at(b, o, oy, ox) * input.at(b, c, iy, ix);
                                    }
                                }
                            }
                            let wi = ((o * g.in_c + c) * g.kh + ky) * g.kw + kx;
                            grad_w.data_mut()[wi] += s;
                        }
                    }
                }
            }
            for c in 0..g.in_c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        for oy in 0..g.oh {
                            for ox in 0..g.ow {
                                let mut s = T::zero();
                                for o in 0..out_c {
                                    s += weight.at(o, c, ky, kx) * grad_out.at(b, o, oy, ox);
                                }
                                if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                    let xi = ((b * g.in_c + c) * g.h + iy) * g.w + ix;
                                    grad_in.data_mut()[xi] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: grad_in,
            weight: grad_w,
            bias: Tensor::from_vec(Shape::new(1, out_c, 1, 1), grad_b)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random<T: Scalar>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::<f64>::ones([1, 1, 3, 3]);
        let w = Tensor::<f64>::ones([1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, yy, xx), 4.0);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f32> = random([2, 1, 5, 7], &mut rng);
        let mut w = Tensor::<f32>::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d(&x, &w, &Tensor::zeros([1, 1, 1, 1]), 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor::<f64>::zeros([1, 2, 8, 8]);
        let w = Tensor::<f64>::zeros([4, 3, 3, 3]);
        let b = Tensor::<f64>::zeros([4, 1, 1, 1]);
        let err = conv2d(&x, &w, &b, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }), "{err}");
        let w = Tensor::<f64>::zeros([4, 2, 3, 3]);
        let err = conv2d(&x, &w, &b, 2, 0).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "{err}");
    }

    #[test]
    fn patch_path_matches_direct_bitwise_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, c, h, w, o, k, s, p) in &[
            (2, 3, 8, 8, 4, 3, 1, 1),
            (1, 5, 9, 7, 6, 3, 2, 1),
            (2, 2, 6, 6, 3, 1, 1, 0),
            (1, 17, 20, 12, 9, 3, 1, 1),
            (2, 6, 16, 20, 21, 3, 1, 1),
            (1, 3, 18, 33, 5, 3, 1, 1),
            (1, 4, 16, 16, 3, 1, 1, 0),
        ] {
            let x: Tensor<f64> = random([n, c, h, w], &mut rng);
            let wt: Tensor<f64> = random([o, c, k, k], &mut rng);
            let b: Tensor<f64> = random([o, 1, 1, 1], &mut rng);
            let fast = conv2d(&x, &wt, &b, s, p).unwrap();
            let slow = reference::conv2d(&x, &wt, &b, s, p).unwrap();
            assert_eq!(fast, slow);
            let dy: Tensor<f64> = random(fast.shape().0, &mut rng);
            let gf = conv2d_backward(&x, &wt, &dy, s, p).unwrap();
            let gs = reference::conv2d_backward(&x, &wt, &dy, s, p).unwrap();
            assert_eq!(gf.input, gs.input);
            assert_eq!(gf.weight, gs.weight);
            assert_eq!(gf.bias, gs.bias);
        }
    }

    #[test]
    fn patch_path_matches_direct_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Tensor<f32> = random([2, 6, 16, 16], &mut rng);
        let wt: Tensor<f32> = random([5, 6, 3, 3], &mut rng);
        let b: Tensor<f32> = random([5, 1, 1, 1], &mut rng);
        let fast = conv2d(&x, &wt, &b, 1, 1).unwrap();
        let slow = reference::conv2d(&x, &wt, &b, 1, 1).unwrap();
        for (a, r) in fast.data().iter().zip(slow.data()) {
            assert!((a - r).abs() <= 1e-5 * r.abs().max(1.0));
        }
    }
}
