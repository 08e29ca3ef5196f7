use super::kernels::{conv2d_backward, conv2d_forward, gemm_nn, gemm_nt, gemm_tn, ConvGeometry};
use super::{BackwardArgs, Tensor};
use crate::error::{Error, Result};
use crate::parallel::Exec;

impl Tensor {
    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.data(), other.data(), &mut out);
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let (a, b) = (&args.inputs[0], &args.inputs[1]);
                let g = args.grad_output;
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(m, n, k, g, b.data(), &mut ga);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(k, m, n, a.data(), g, &mut gb);
                    gb
                });
                Ok(vec![ga, gb])
            }),
        ))
    }

    /// Cross-correlation of `[N, C, H, W]` with `[K, C, kh, kw]`, plus an
    /// optional per-output-channel bias of shape `[K]`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        self.conv2d_with(Exec::default(), weight, bias, stride, padding)
    }

    pub fn conv2d_with(
        &self,
        exec: Exec,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (si, sw) = (self.shape(), weight.shape());
        if si.len() != 4 || sw.len() != 4 {
            return Err(Error::Shape(format!("conv2d of {si:?} with {sw:?}")));
        }
        if si[1] != sw[1] {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {}, weight expects {}",
                si[1], sw[1]
            )));
        }
        if sw[2] % 2 == 0 || sw[3] % 2 == 0 {
            return Err(Error::Shape(format!("conv2d kernel {sw:?} must be odd")));
        }
        if stride == 0 || 2 * padding > sw[2] - 1 || 2 * padding > sw[3] - 1 {
            return Err(Error::Invalid(format!(
                "conv2d stride {stride} / padding {padding} for kernel {sw:?}"
            )));
        }
        if sw[2] > si[2] + 2 * padding || sw[3] > si[3] + 2 * padding {
            return Err(Error::Shape(format!("kernel {sw:?} larger than input {si:?}")));
        }
        if let Some(b) = bias {
            if b.shape() != [sw[0]] {
                return Err(Error::Shape(format!("conv2d bias {:?} for {} outputs", b.shape(), sw[0])));
            }
        }
        let g = ConvGeometry {
            batch: si[0],
            in_channels: si[1],
            height: si[2],
            width: si[3],
            out_channels: sw[0],
            kernel_h: sw[2],
            kernel_w: sw[3],
            stride,
            padding,
        };
        let track = self.requires_grad()
            || weight.requires_grad()
            || bias.is_some_and(Tensor::requires_grad);
        let (out, cols) = conv2d_forward(
            exec,
            &g,
            self.data(),
            weight.data(),
            bias.map(|b| b.data()),
            track && weight.requires_grad(),
        );
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            "conv2d",
            vec![g.batch, g.out_channels, g.out_h(), g.out_w()],
            out,
            inputs,
            Box::new(move |args: &BackwardArgs<'_>| {
                let ins = args.inputs;
                let grads = conv2d_backward(
                    exec,
                    &g,
                    ins[0].data(),
                    ins[1].data(),
                    args.grad_output,
                    cols.as_deref(),
                    ins[0].requires_grad(),
                    ins[1].requires_grad(),
                    ins.len() > 2 && ins[2].requires_grad(),
                );
                let mut out = vec![grads.input, grads.weight];
                if ins.len() > 2 {
                    out.push(grads.bias);
                }
                Ok(out)
            }),
        ))
    }
}
