//! 3x3 convolution with replicate padding, lowered to GEMM via im2col.
//!
//! Activations are `channels x (height * width)` row-major f64 buffers.
//! Weights are `[out][in][3][3]`, i.e. an `out x (in * 9)` matrix whose
//! column order matches the rows of the im2col matrix.

pub const KSIZE: usize = 3;
pub const TAPS: usize = KSIZE * KSIZE;

#[inline]
fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// im2col: row `ci * 9 + ky * 3 + kx`, column `y * w + x` holds
/// `input[ci][clamp(y + ky - 1)][clamp(x + kx - 1)]`.
pub fn im2col(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    debug_assert_eq!(input.len(), channels * hw);
    let mut col = vec![0.0; channels * TAPS * hw];
    for ci in 0..channels {
        let src = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = &mut col[((ci * TAPS) + ky * KSIZE + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = clamp_idx(y as isize + ky as isize - 1, h);
                    let srow = &src[sy * w..(sy + 1) * w];
                    let drow = &mut row[y * w..(y + 1) * w];
                    // Interior columns are a shifted copy; only the edges clamp.
                    for (x, d) in drow.iter_mut().enumerate() {
                        *d = srow[clamp_idx(x as isize + kx as isize - 1, w)];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back to the input.
pub fn col2im(col: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; channels * hw];
    for ci in 0..channels {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = &col[((ci * TAPS) + ky * KSIZE + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = clamp_idx(y as isize + ky as isize - 1, h);
                    for x in 0..w {
                        let sx = clamp_idx(x as isize + kx as isize - 1, w);
                        dst[sy * w + sx] += row[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// `c = a(m x k) * b(k x n) + beta * c`, all row-major.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += a(m x n) * b(k x n)^T`, giving `m x k`.
pub fn gemm_nt_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            1.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `a(m x k)^T * b(m x n)`, giving `k x n`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![0.0; k * n];
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Forward 3x3 conv: `out = W * im2col(x) + bias`. Returns `(out, col)`.
pub fn conv_forward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    out_ch: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let col = im2col(input, in_ch, h, w);
    let mut out = vec![0.0; out_ch * hw];
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].fill(*b);
    }
    gemm_nn(out_ch, in_ch * TAPS, hw, weight, &col, 1.0, &mut out);
    (out, col)
}

/// Accumulates weight and bias gradients of a conv given `d_out`; returns
/// the input gradient when `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    d_out: &[f64],
    col: &[f64],
    weight: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let hw = h * w;
    let k = in_ch * TAPS;
    gemm_nt_acc(out_ch, hw, k, d_out, col, d_weight);
    for (o, db) in d_bias.iter_mut().enumerate() {
        *db += d_out[o * hw..(o + 1) * hw].iter().sum::<f64>();
    }
    need_input.then(|| {
        let d_col = gemm_tn(out_ch, k, hw, weight, d_out);
        col2im(&d_col, in_ch, h, w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        b: &[f64],
        cout: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1)
                                    as usize;
                                let sx = (xx as isize + kx as isize - 1).clamp(0, w as isize - 1)
                                    as usize;
                                s += wt[((o * cin + i) * 3 + ky) * 3 + kx]
                                    * x[(i * h + sy) * w + sx];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = s;
                }
            }
        }
        out
    }

    fn seq(n: usize, k: f64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as f64 * k).sin() * 1.7).fract())
            .collect()
    }

    #[test]
    fn matches_direct_convolution() {
        let (cin, cout, h, w) = (3, 4, 5, 6);
        let x = seq(cin * h * w, 0.37);
        let wt = seq(cout * cin * 9, 0.91);
        let b = seq(cout, 1.3);
        let (fast, _) = conv_forward(&x, cin, h, w, &wt, &b, cout);
        let slow = naive_conv(&x, cin, h, w, &wt, &b, cout);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 4, 3);
        let x = seq(c * h * w, 0.5);
        let y = seq(c * 9 * h * w, 0.77);
        let lhs: f64 = im2col(&x, c, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
