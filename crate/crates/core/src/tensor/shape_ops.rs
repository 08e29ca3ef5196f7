use super::{numel, BackwardArgs, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Same values under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|args: &BackwardArgs<'_>| Ok(vec![Some(args.grad_output.to_vec())])),
        ))
    }

    /// Picks elements by flat index into a 1-d tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Shape("gather with no indices".into()));
        }
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather index {bad} out of range {n}")));
        }
        let data = self.data();
        let out = indices.iter().map(|&i| data[i]).collect();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            "gather",
            vec![indices.len()],
            out,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let mut g = vec![0.0; n];
                for (k, &i) in idx.iter().enumerate() {
                    g[i] += args.grad_output[k];
                }
                Ok(vec![Some(g)])
            }),
        ))
    }
}
