//! Register-blocked matrix product used by the patch-matrix convolution.
//!
//! Every output element is accumulated over the reduction index in strictly
//! ascending order, starting from the current output value (or zero). The
//! direct convolution loops in `conv::reference` use the same order, which is
//! what makes the two paths bitwise comparable.

use crate::tensor::Scalar;

pub(crate) const MR: usize = 4;
pub(crate) const NR: usize = 32;

/// Row-major left operand with an optional column offset.
#[derive(Clone, Copy)]
pub(crate) struct RowsView<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub stride: usize,
    pub offset: usize,
}

impl<'a, T> RowsView<'a, T> {
    fn row(&self, r: usize, len: usize) -> &'a [T] {
        let start = r * self.stride + self.offset;
        &self.data[start..start + len]
    }
}

pub(crate) fn panel_count(n: usize) -> usize {
    n.div_ceil(NR)
}

/// `out[m][col0 + j] (+)= sum_k a[m][k] * b[k][j]` for `j < n`.
///
/// `b` is packed as `NR`-wide column panels, panel `p` laid out `[k][NR]`,
/// zero-filled past column `n`.
pub(crate) fn gemm_packed<T: Scalar>(
    a: RowsView<'_, T>,
    k_len: usize,
    b_panels: &[T],
    n: usize,
    out: &mut [T],
    out_stride: usize,
    col0: usize,
    accumulate: bool,
) {
    debug_assert!(b_panels.len() >= panel_count(n) * k_len * NR);
    let zeros = vec![T::zero(); k_len];
    for m0 in (0..a.rows).step_by(MR) {
        let live = (a.rows - m0).min(MR);
        let rows: [&[T]; MR] =
            std::array::from_fn(|i| if i < live { a.row(m0 + i, k_len) } else { &zeros[..] });
        for p in 0..panel_count(n) {
            let panel = &b_panels[p * k_len * NR..(p + 1) * k_len * NR];
            let j0 = p * NR;
            let width = (n - j0).min(NR);
            let mut acc = [[T::zero(); NR]; MR];
            if accumulate {
                for i in 0..live {
                    let base = (m0 + i) * out_stride + col0 + j0;
                    acc[i][..width].copy_from_slice(&out[base..base + width]);
                }
            }
            microkernel(&rows, panel, k_len, &mut acc);
            for i in 0..live {
                let base = (m0 + i) * out_stride + col0 + j0;
                out[base..base + width].copy_from_slice(&acc[i][..width]);
            }
        }
    }
}

#[inline(always)]
fn microkernel<T: Scalar>(rows: &[&[T]; MR], panel: &[T], k_len: usize, acc: &mut [[T; NR]; MR]) {
    let rows: [&[T]; MR] = std::array::from_fn(|i| &rows[i][..k_len]);
    for (k, bp) in panel.chunks_exact(NR).take(k_len).enumerate() {
        let bp: &[T; NR] = bp.try_into().unwrap();
        for i in 0..MR {
            let a = rows[i][k];
            for j in 0..NR {
                acc[i][j] += a * bp[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pack(b: &[f64], k_len: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; panel_count(n) * k_len * NR];
        for k in 0..k_len {
            for j in 0..n {
                out[(j / NR) * k_len * NR + k * NR + j % NR] = b[k * n + j];
            }
        }
        out
    }

    #[test]
    fn matches_naive_product_with_ragged_edges() {
        let (m, k_len, n) = (7, 5, 37);
        let a: Vec<f64> = (0..m * k_len).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k_len * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut out = vec![0.0; m * n];
        let view = RowsView { data: &a, rows: m, stride: k_len, offset: 0 };
        gemm_packed(view, k_len, &pack(&b, k_len, n), n, &mut out, n, 0, false);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..k_len {
                    s += a[i * k_len + k] * b[k * n + j];
                }
                assert_eq!(out[i * n + j].to_bits(), s.to_bits());
            }
        }
    }
}
