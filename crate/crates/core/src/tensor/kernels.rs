//! Slice-level compute kernels used by the differentiable ops.
//!
//! Convolution is lowered to im2col + GEMM per image; images in a batch are
//! processed independently under the chosen [`Exec`] strategy and any
//! cross-image reduction is summed sequentially in batch order.

use crate::parallel::{for_each_chunk_mut, map_indexed, Exec};

/// `out[m x n] += a[m x k] * b[k x n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b[n x k]^T`
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

/// `out[m x n] += a[k x m]^T * b[k x n]`
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Shape bookkeeping for a 2-d cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn image_in(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn image_out(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }
}

fn im2col(g: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        dst[oy * ow + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.height
                            && (ix as usize) < g.width
                        {
                            image[(c * g.height + iy as usize) * g.width + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        image[(c * g.height + iy as usize) * g.width + ix as usize] +=
                            src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the output and, when `keep_cols` is set,
/// the per-image im2col buffers for reuse in the backward pass.
pub fn conv2d_forward(
    exec: Exec,
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    keep_cols: bool,
) -> (Vec<f64>, Option<Vec<Vec<f64>>>) {
    let (patch, plane) = (g.patch(), g.out_h() * g.out_w());
    let per_image = map_indexed(exec, g.batch, |n| {
        let mut cols = vec![0.0; patch * plane];
        im2col(g, &input[n * g.image_in()..(n + 1) * g.image_in()], &mut cols);
        let mut out = vec![0.0; g.image_out()];
        if let Some(b) = bias {
            for (k, chunk) in out.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[k]);
            }
        }
        gemm_nn(g.out_channels, patch, plane, weight, &cols, &mut out);
        (out, cols)
    });
    let mut out = Vec::with_capacity(g.batch * g.image_out());
    let mut saved = keep_cols.then(|| Vec::with_capacity(g.batch));
    for (o, cols) in per_image {
        out.extend_from_slice(&o);
        if let Some(s) = saved.as_mut() {
            s.push(cols);
        }
    }
    (out, saved)
}

/// Gradients of a convolution.
pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    exec: Exec,
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    cols: Option<&[Vec<f64>]>,
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> ConvGrads {
    let (patch, plane) = (g.patch(), g.out_h() * g.out_w());
    let k = g.out_channels;

    let weight_grad = want_weight.then(|| {
        let partials = map_indexed(exec, g.batch, |n| {
            let go = &grad_out[n * g.image_out()..(n + 1) * g.image_out()];
            let owned;
            let c: &[f64] = match cols {
                Some(c) => &c[n],
                None => {
                    let mut buf = vec![0.0; patch * plane];
                    im2col(g, &input[n * g.image_in()..(n + 1) * g.image_in()], &mut buf);
                    owned = buf;
                    &owned
                }
            };
            let mut dw = vec![0.0; k * patch];
            gemm_nt(k, plane, patch, go, c, &mut dw);
            dw
        });
        let mut dw = vec![0.0; k * patch];
        for p in partials {
            dw.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
        dw
    });

    let bias_grad = want_bias.then(|| {
        let mut db = vec![0.0; k];
        for n in 0..g.batch {
            let go = &grad_out[n * g.image_out()..(n + 1) * g.image_out()];
            for (kk, chunk) in go.chunks(plane).enumerate() {
                db[kk] += chunk.iter().sum::<f64>();
            }
        }
        db
    });

    let input_grad = want_input.then(|| {
        let mut di = vec![0.0; g.batch * g.image_in()];
        for_each_chunk_mut(exec, &mut di, g.image_in(), |n, dst| {
            let go = &grad_out[n * g.image_out()..(n + 1) * g.image_out()];
            let mut dcols = vec![0.0; patch * plane];
            gemm_tn(patch, k, plane, weight, go, &mut dcols);
            col2im(g, &dcols, dst);
        });
        di
    });

    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}
