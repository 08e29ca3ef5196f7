use super::{numel, BackwardArgs, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Reduces `t` over `axes`, dropping the reduced dimensions.
///
/// Max routes its gradient to the first maximal element of each slice.
pub fn reduce(op: ReduceOp, t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    if axes.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let shape = t.shape();
    let mut reduced = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::Shape(format!(
                "axis {a} out of range for shape {shape:?}"
            )));
        }
        if reduced[a] {
            return Err(Error::Shape(format!("axis {a} repeated")));
        }
        reduced[a] = true;
    }
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, r)| !**r)
        .map(|(d, _)| *d)
        .collect();
    let extent: usize = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, r)| **r)
        .map(|(d, _)| *d)
        .product();

    // out index for every input element
    let mut out_strides = vec![0usize; shape.len()];
    let mut s = 1;
    for d in (0..shape.len()).rev() {
        if !reduced[d] {
            out_strides[d] = s;
            s *= shape[d];
        }
    }
    let n = t.len();
    let mut map = Vec::with_capacity(n);
    let mut coord = vec![0usize; shape.len()];
    let mut idx = 0usize;
    for _ in 0..n {
        map.push(idx);
        for d in (0..shape.len()).rev() {
            coord[d] += 1;
            idx += out_strides[d];
            if coord[d] < shape[d] {
                break;
            }
            idx -= out_strides[d] * coord[d];
            coord[d] = 0;
        }
    }

    let m = numel(&out_shape);
    let data = t.data();
    let (out, argmax) = match op {
        ReduceOp::Sum | ReduceOp::Mean => {
            let mut out = vec![0.0; m];
            for (i, &v) in data.iter().enumerate() {
                out[map[i]] += v;
            }
            if op == ReduceOp::Mean {
                let k = extent as f64;
                out.iter_mut().for_each(|v| *v /= k);
            }
            (out, None)
        }
        ReduceOp::Max => {
            let mut out = vec![f64::NEG_INFINITY; m];
            let mut arg = vec![usize::MAX; m];
            for (i, &v) in data.iter().enumerate() {
                let j = map[i];
                if arg[j] == usize::MAX || v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
            (out, Some(arg))
        }
    };
    let tag = match op {
        ReduceOp::Sum => "sum",
        ReduceOp::Mean => "mean",
        ReduceOp::Max => "reduce_max",
    };
    Ok(Tensor::from_op(
        tag,
        out_shape,
        out,
        vec![t.clone()],
        Box::new(move |args: &BackwardArgs<'_>| {
            let g = args.grad_output;
            let grad = match &argmax {
                Some(arg) => {
                    let mut grad = vec![0.0; n];
                    for (j, &i) in arg.iter().enumerate() {
                        grad[i] += g[j];
                    }
                    grad
                }
                None => {
                    let k = if op == ReduceOp::Mean { extent as f64 } else { 1.0 };
                    map.iter().map(|&j| g[j] / k).collect()
                }
            };
            Ok(vec![Some(grad)])
        }),
    ))
}

impl Tensor {
    /// Sum of every element as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        if self.shape().is_empty() {
            return self.affine(1.0, 0.0);
        }
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        reduce(ReduceOp::Sum, self, &axes).expect("full reduction is valid")
    }

    pub fn mean_all(&self) -> Tensor {
        if self.shape().is_empty() {
            return self.affine(1.0, 0.0);
        }
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        reduce(ReduceOp::Mean, self, &axes).expect("full reduction is valid")
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        reduce(ReduceOp::Sum, self, axes)
    }
}
