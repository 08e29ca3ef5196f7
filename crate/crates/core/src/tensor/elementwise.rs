use super::{numel, BackwardArgs, Tensor};
use crate::error::{Error, Result};

/// Elementwise operation tags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Ln,
    Pow,
    Abs,
    Max,
    Min,
    Clamp { lo: f64, hi: f64 },
    Sigmoid,
    Relu,
}

impl ElementwiseOp {
    pub fn arity(self) -> usize {
        match self {
            ElementwiseOp::Add
            | ElementwiseOp::Sub
            | ElementwiseOp::Mul
            | ElementwiseOp::Div
            | ElementwiseOp::Pow
            | ElementwiseOp::Max
            | ElementwiseOp::Min => 2,
            _ => 1,
        }
    }
}

/// Applies `op` to `inputs` with numpy-style broadcasting for binary ops.
pub fn elementwise(op: ElementwiseOp, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() != op.arity() {
        return Err(Error::Invalid(format!(
            "{op:?} takes {} inputs, got {}",
            op.arity(),
            inputs.len()
        )));
    }
    let unary_kind = match op {
        ElementwiseOp::Add => return binary(Binary::Add, inputs[0], inputs[1]),
        ElementwiseOp::Sub => return binary(Binary::Sub, inputs[0], inputs[1]),
        ElementwiseOp::Mul => return binary(Binary::Mul, inputs[0], inputs[1]),
        ElementwiseOp::Div => return binary(Binary::Div, inputs[0], inputs[1]),
        ElementwiseOp::Pow => return binary(Binary::Pow, inputs[0], inputs[1]),
        ElementwiseOp::Max => return binary(Binary::Max, inputs[0], inputs[1]),
        ElementwiseOp::Min => return binary(Binary::Min, inputs[0], inputs[1]),
        ElementwiseOp::Exp => Unary::Exp,
        ElementwiseOp::Ln => Unary::Ln,
        ElementwiseOp::Abs => Unary::Abs,
        ElementwiseOp::Clamp { lo, hi } => {
            if !(lo <= hi) {
                return Err(Error::Invalid(format!("clamp bounds [{lo}, {hi}]")));
            }
            Unary::Clamp(lo, hi)
        }
        ElementwiseOp::Sigmoid => Unary::Sigmoid,
        ElementwiseOp::Relu => Unary::Relu,
    };
    unary(unary_kind, inputs[0])
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Exp,
    Ln,
    Abs,
    Clamp(f64, f64),
    Sigmoid,
    Relu,
    Affine(f64, f64),
    Powf(f64),
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape(format!(
                    "cannot broadcast {a:?} with {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

/// Maps flat output indices to flat input indices under broadcasting.
pub(crate) enum IndexMap {
    Same,
    Scalar,
    Table(Vec<usize>),
}

impl IndexMap {
    pub(crate) fn new(input: &[usize], output: &[usize]) -> Self {
        if input == output {
            return IndexMap::Same;
        }
        if numel(input) == 1 {
            return IndexMap::Scalar;
        }
        let offset = output.len() - input.len();
        let mut in_strides = vec![0usize; output.len()];
        let mut stride = 1;
        for d in (0..input.len()).rev() {
            in_strides[d + offset] = if input[d] == 1 { 0 } else { stride };
            stride *= input[d];
        }
        let total = numel(output);
        let mut table = Vec::with_capacity(total);
        let mut coord = vec![0usize; output.len()];
        let mut idx = 0usize;
        for _ in 0..total {
            table.push(idx);
            for d in (0..output.len()).rev() {
                coord[d] += 1;
                idx += in_strides[d];
                if coord[d] < output[d] {
                    break;
                }
                idx -= in_strides[d] * coord[d];
                coord[d] = 0;
            }
        }
        IndexMap::Table(table)
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Same => i,
            IndexMap::Scalar => 0,
            IndexMap::Table(t) => t[i],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn pow_value(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        1.0
    } else {
        x.powf(y)
    }
}

fn binary(kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let n = numel(&out_shape);
    let ia = IndexMap::new(a.shape(), &out_shape);
    let ib = IndexMap::new(b.shape(), &out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = (ad[ia.get(i)], bd[ib.get(i)]);
        out.push(match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
            Binary::Pow => {
                if x < 0.0 && y.fract() != 0.0 {
                    return Err(Error::Domain(format!(
                        "pow with negative base {x} and non-integer exponent {y}"
                    )));
                }
                pow_value(x, y)
            }
            Binary::Max => x.max(y),
            Binary::Min => x.min(y),
        });
    }
    let tag = match kind {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
        Binary::Div => "div",
        Binary::Pow => "pow",
        Binary::Max => "max",
        Binary::Min => "min",
    };
    let (la, lb) = (a.len(), b.len());
    Ok(Tensor::from_op(
        tag,
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |args: &BackwardArgs<'_>| {
            let (ta, tb) = (&args.inputs[0], &args.inputs[1]);
            let (ad, bd) = (ta.data(), tb.data());
            let want_a = ta.requires_grad();
            let want_b = tb.requires_grad();
            let mut ga = want_a.then(|| vec![0.0; la]);
            let mut gb = want_b.then(|| vec![0.0; lb]);
            for (i, &g) in args.grad_output.iter().enumerate() {
                let (ja, jb) = (ia.get(i), ib.get(i));
                let (x, y) = (ad[ja], bd[jb]);
                let (dx, dy) = match kind {
                    Binary::Add => (1.0, 1.0),
                    Binary::Sub => (1.0, -1.0),
                    Binary::Mul => (y, x),
                    Binary::Div => (1.0 / y, -x / (y * y)),
                    Binary::Pow => {
                        let dx = if y == 0.0 { 0.0 } else { y * pow_value(x, y - 1.0) };
                        let dy = if x > 0.0 { args.output[i] * x.ln() } else { 0.0 };
                        (dx, dy)
                    }
                    Binary::Max => {
                        if x >= y {
                            (1.0, 0.0)
                        } else {
                            (0.0, 1.0)
                        }
                    }
                    Binary::Min => {
                        if x <= y {
                            (1.0, 0.0)
                        } else {
                            (0.0, 1.0)
                        }
                    }
                };
                if let Some(ga) = ga.as_mut() {
                    ga[ja] += g * dx;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[jb] += g * dy;
                }
            }
            Ok(vec![ga, gb])
        }),
    ))
}

fn unary(kind: Unary, a: &Tensor) -> Result<Tensor> {
    let data = a.data();
    if let Unary::Ln = kind {
        if let Some(x) = data.iter().find(|x| **x < 0.0) {
            return Err(Error::Domain(format!("ln of negative value {x}")));
        }
    }
    if let Unary::Powf(e) = kind {
        if e.fract() != 0.0 {
            if let Some(x) = data.iter().find(|x| **x < 0.0) {
                return Err(Error::Domain(format!(
                    "pow with negative base {x} and non-integer exponent {e}"
                )));
            }
        }
    }
    let f = |x: f64| match kind {
        Unary::Exp => x.exp(),
        Unary::Ln => x.ln(),
        Unary::Abs => x.abs(),
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        Unary::Sigmoid => sigmoid(x),
        Unary::Relu => x.max(0.0),
        Unary::Affine(m, c) => m * x + c,
        Unary::Powf(e) => pow_value(x, e),
    };
    let out: Vec<f64> = data.iter().map(|&x| f(x)).collect();
    let tag = match kind {
        Unary::Exp => "exp",
        Unary::Ln => "ln",
        Unary::Abs => "abs",
        Unary::Clamp(..) => "clamp",
        Unary::Sigmoid => "sigmoid",
        Unary::Relu => "relu",
        Unary::Affine(..) => "affine",
        Unary::Powf(_) => "powf",
    };
    Ok(Tensor::from_op(
        tag,
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |args: &BackwardArgs<'_>| {
            let x = args.inputs[0].data();
            let y = args.output;
            let grad = args
                .grad_output
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    let d = match kind {
                        Unary::Exp => y[i],
                        Unary::Ln => 1.0 / x[i],
                        Unary::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Clamp(lo, hi) => {
                            if x[i] >= lo && x[i] <= hi {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Affine(m, _) => m,
                        Unary::Powf(e) => {
                            if e == 0.0 {
                                0.0
                            } else {
                                e * pow_value(x[i], e - 1.0)
                            }
                        }
                    };
                    g * d
                })
                .collect();
            Ok(vec![Some(grad)])
        }),
    ))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Div, self, other)
    }

    /// `self ^ exponent`, differentiable in both arguments. `pow(0, 0) = 1`.
    pub fn pow(&self, exponent: &Tensor) -> Result<Tensor> {
        binary(Binary::Pow, self, exponent)
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Max, self, other)
    }

    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Min, self, other)
    }

    pub fn exp(&self) -> Tensor {
        unary(Unary::Exp, self).expect("exp is total")
    }

    pub fn ln(&self) -> Result<Tensor> {
        unary(Unary::Ln, self)
    }

    pub fn abs(&self) -> Tensor {
        unary(Unary::Abs, self).expect("abs is total")
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(Unary::Sigmoid, self).expect("sigmoid is total")
    }

    pub fn relu(&self) -> Tensor {
        unary(Unary::Relu, self).expect("relu is total")
    }

    /// Clamps into `[lo, hi]`; gradient is 1 on the closed interval, 0 outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        elementwise(ElementwiseOp::Clamp { lo, hi }, &[self])
    }

    /// `scale * self + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        unary(Unary::Affine(scale, shift), self).expect("affine is total")
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.affine(1.0, c)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    /// `self ^ e` for a constant exponent.
    pub fn powf(&self, e: f64) -> Result<Tensor> {
        unary(Unary::Powf(e), self)
    }
}
