//! 3x3 same-padding convolution (im2col + GEMM), rectifier and 2x2 max
//! pooling, each with its backward pass. Tensors are per-sample CHW slices.

use super::linalg::{gemm, View};

pub(crate) const KERNEL: usize = 3;
pub(crate) const TAPS: usize = KERNEL * KERNEL;

/// Unfolds a `c x h x w` input into a `(h*w) x (c*9)` row-major patch matrix.
pub(crate) fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let q = c * TAPS;
    let mut cols = vec![0.0; h * w * q];
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * q..(y * w + x + 1) * q];
            for ch in 0..c {
                let plane = &input[ch * h * w..(ch + 1) * h * w];
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        row[ch * TAPS + ky * KERNEL + kx] = plane[sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let q = c * TAPS;
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let row = &cols[(y * w + x) * q..(y * w + x + 1) * q];
            for ch in 0..c {
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[ch * h * w + sy as usize * w + sx as usize] +=
                            row[ch * TAPS + ky * KERNEL + kx];
                    }
                }
            }
        }
    }
    out
}

/// `out (o x p) = weight (o x q) . cols^T + bias`.
pub(crate) fn conv_forward(weight: &[f64], bias: &[f64], cols: &[f64], p: usize) -> Vec<f64> {
    let o = bias.len();
    let q = weight.len() / o;
    let mut out = vec![0.0; o * p];
    for (row, b) in out.chunks_exact_mut(p).zip(bias) {
        row.fill(*b);
    }
    gemm(
        o,
        q,
        p,
        1.0,
        View::row_major(weight, q),
        View::transposed(cols, q),
        1.0,
        &mut out,
    );
    out
}

/// Accumulates weight/bias gradients; returns the patch gradient when
/// `need_input` is set.
pub(crate) fn conv_backward(
    weight: &[f64],
    cols: &[f64],
    dout: &[f64],
    p: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let o = dbias.len();
    let q = weight.len() / o;
    for (db, row) in dbias.iter_mut().zip(dout.chunks_exact(p)) {
        *db += row.iter().sum::<f64>();
    }
    gemm(
        o,
        p,
        q,
        1.0,
        View::row_major(dout, p),
        View::row_major(cols, q),
        1.0,
        dweight,
    );
    need_input.then(|| {
        let mut dcols = vec![0.0; p * q];
        gemm(
            p,
            o,
            q,
            1.0,
            View::transposed(dout, p),
            View::row_major(weight, q),
            0.0,
            &mut dcols,
        );
        dcols
    })
}

pub(crate) fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling; returns the pooled tensor and, per output, the
/// flat input index that won (first maximum in raster order).
pub(crate) fn maxpool2(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = ch * oh * ow + y * ow + x;
                out[o] = best;
                arg[o] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward(dout: &[f64], arg: &[u32], input_len: usize) -> Vec<f64> {
    let mut din = vec![0.0; input_len];
    for (g, &i) in dout.iter().zip(arg) {
        din[i as usize] += g;
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let o = bias.len();
        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            for y in 0..h {
                for x in 0..w {
                    let mut s = bias[oc];
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += weight[oc * c * 9 + ic * 9 + ky * 3 + kx]
                                        * input[ic * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[oc * h * w + y * w + x] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (c, h, w, o) = (2, 5, 4, 3);
        let input: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64) / 7.0 - 0.6).collect();
        let weight: Vec<f64> = (0..o * c * 9).map(|i| ((i * 13 % 17) as f64) / 9.0 - 0.8).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let cols = im2col(&input, c, h, w);
        let got = conv_forward(&weight, &bias, &cols, h * w);
        let want = naive_conv(&input, c, h, w, &weight, &bias);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).cos()).collect();
        let y: Vec<f64> = (0..h * w * c * 9).map(|i| (i as f64 * 0.11).sin()).collect();
        let ax = im2col(&x, c, h, w);
        let aty = col2im(&y, c, h, w);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let input = vec![1.0, 2.0, 0.0, 0.0, 3.0, -1.0, 0.0, 5.0];
        // one channel, 2x4
        let (out, arg) = maxpool2(&input, 1, 2, 4);
        assert_eq!(out, vec![3.0, 5.0]);
        let din = maxpool2_backward(&[1.0, 2.0], &arg, input.len());
        assert_eq!(din, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0]);
    }
}
