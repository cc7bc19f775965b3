//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every value produced during a forward pass together
//! with the operation that produced it. [`Tape::backward`] walks the record in
//! reverse and returns exact gradients for every recorded value.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::params::Linear;
use crate::Scalar;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows(Vec<(Var, usize)>),
    Mse {
        pred: Var,
        target: Array2<F>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Array1<F>,
    },
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `[1 × n]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + self.value(row);
        self.push(value, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let value = self.value(x) * factor;
        self.push(value, Op::Scale(x, factor))
    }

    pub fn linear(&mut self, x: Var, layer: &Linear<Var>) -> Var {
        let y = self.matmul_t(x, layer.weight);
        self.add_row(y, layer.bias)
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let half = F::from_f64_lossy(0.5);
        let inv_sqrt2 = F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
        let value = self
            .value(x)
            .mapv(|v| v * half * (F::one() + (v * inv_sqrt2).erf()));
        self.push(value, Op::Gelu(x))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.dim();
        let n = F::from_usize(cols).unwrap();
        let eps = F::from_f64_lossy(LN_EPS);
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.sum() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            Zip::from(xhat.row_mut(r))
                .and(row)
                .for_each(|h, &v| *h = (v - mean) * is);
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + width]).to_owned();
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Builds a matrix whose row `i` is row `sources[i].1` of `sources[i].0`.
    pub fn gather_rows(&mut self, sources: Vec<(Var, usize)>) -> Var {
        assert!(!sources.is_empty(), "gather_rows: no rows");
        let cols = self.value(sources[0].0).ncols();
        let mut value = Array2::zeros((sources.len(), cols));
        for (i, &(v, r)) in sources.iter().enumerate() {
            value.row_mut(i).assign(&self.value(v).row(r));
        }
        self.push(value, Op::GatherRows(sources))
    }

    /// Mean of squared differences over all entries; `target` is constant.
    pub fn mse(&mut self, pred: Var, target: Array2<F>) -> Var {
        assert_eq!(self.value(pred).dim(), target.dim(), "mse: shape mismatch");
        let n = F::from_usize(target.len()).unwrap();
        let sum = Zip::from(self.value(pred))
            .and(&target)
            .fold(F::zero(), |acc, &p, &t| acc + (p - t) * (p - t));
        let value = Array2::from_elem((1, 1), sum / n);
        self.push(value, Op::Mse { pred, target })
    }

    /// `-log softmax(logits)[label]` for a `[1 × C]` logit row; `label` is 0-based.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let row = self.value(logits).row(0).to_owned();
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let exp = row.mapv(|v| (v - max).exp());
        let sum = exp.sum();
        let lse = max + sum.ln();
        let probs = exp / sum;
        let value = Array2::from_elem((1, 1), lse - row[label]);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value,
    /// scaled by `seed`.
    pub fn backward(&self, loss: Var, seed: F) -> Result<Grads<F>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward expects a 1x1 loss, got {:?}",
                self.value(loss).dim()
            )));
        }
        self.backward_seeded(loss, Array2::from_elem((1, 1), seed))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back through the tape.
    pub fn backward_seeded(&self, output: Var, seed: Array2<F>) -> Result<Grads<F>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(output).dim() != seed.dim() {
            return Err(Error::Shape("seed shape differs from output".into()));
        }
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *row, grow);
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, g * *factor);
                }
                Op::Gelu(x) => {
                    let half = F::from_f64_lossy(0.5);
                    let inv_sqrt2 = F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = F::from_f64_lossy(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|gv, &v| {
                        let cdf = half * (F::one() + (v * inv_sqrt2).erf());
                        let pdf = (-(v * v) * half).exp() * inv_sqrt_2pi;
                        *gv = *gv * (cdf + v * pdf);
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = &g * y;
                    for (mut row, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|r, &yv| *r = *r - yv * dot);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let ggain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &g * self.value(*gain);
                    let n = F::from_usize(xhat.ncols()).unwrap();
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let gh = gxhat.row(r);
                        let h = xhat.row(r);
                        let mean_g = gh.sum() / n;
                        let mean_gh = gh.iter().zip(h.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
                        let is = inv_std[r];
                        Zip::from(gx.row_mut(r))
                            .and(&gh)
                            .and(&h)
                            .for_each(|o, &a, &b| *o = is * (a - mean_g - b * mean_gh));
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::GatherRows(sources) => {
                    for (i, &(v, r)) in sources.iter().enumerate() {
                        let slot = grads[v.0].get_or_insert_with(|| Array2::zeros(self.value(v).raw_dim()));
                        let mut dst = slot.row_mut(r);
                        dst += &g.row(i);
                    }
                }
                Op::Mse { pred, target } => {
                    let scale = g[[0, 0]] * F::from_f64_lossy(2.0) / F::from_usize(target.len()).unwrap();
                    let gp = (self.value(*pred) - target) * scale;
                    accumulate(&mut grads, *pred, gp);
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let mut gl = probs.clone();
                    gl[*label] = gl[*label] - F::one();
                    let gl = (gl * g[[0, 0]]).insert_axis(Axis(0));
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        Ok(Grads { grads })
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn softmax_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads<F> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Array2<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like its value when nothing flowed into it.
    pub fn of(&self, tape: &Tape<F>, v: Var) -> Array2<F> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).raw_dim()))
    }
}

/// Records every leaf of `tree` on the tape.
pub fn bind<F: Scalar, T: crate::params::Tree<Array2<F>>>(tape: &mut Tape<F>, tree: &T) -> T::Mapped<Var> {
    tree.map(|a| tape.leaf(a.clone()))
}

/// Gradients for a bound tree, zeros where nothing flowed.
pub fn gradients_of<F: Scalar, T: crate::params::Tree<Var>>(
    tape: &Tape<F>,
    grads: &Grads<F>,
    bound: &T,
) -> T::Mapped<Array2<F>> {
    bound.map(|&v| grads.of(tape, v))
}
