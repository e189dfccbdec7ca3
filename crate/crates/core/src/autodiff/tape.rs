//! Dynamic Wengert tape for reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value and enough
//! information to run its vector-Jacobian product. The tape is rebuilt for
//! each forward pass and consumed by a single call to [`Tape::backward`].

use std::sync::Arc;

use rayon::prelude::*;

use super::kernels;
use crate::error::{config, usage, Error, Result};
use crate::resample::EnsemblePlan;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Reshape(Var),
    ToRows(Var),
    PixelShuffle(Var, usize),
    Blend(Var, Arc<EnsemblePlan>),
    GatherNeighbors(Var, Arc<EnsemblePlan>),
    WeightedSum4(Var, Arc<EnsemblePlan>),
    Sum(Var),
    L1Mean(Var, Tensor),
    MseMean(Var, Tensor),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Reshape(_) => "reshape",
            Op::ToRows(_) => "to_rows",
            Op::PixelShuffle(..) => "pixel_shuffle",
            Op::Blend(..) => "blend",
            Op::GatherNeighbors(..) => "gather_neighbors",
            Op::WeightedSum4(..) => "weighted_sum4",
            Op::Sum(_) => "sum",
            Op::L1Mean(..) => "l1_mean",
            Op::MseMean(..) => "mse_mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return usage("tape already consumed by backward()");
        }
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Same-padded 2D cross-correlation. `input` is `[N, Cin, H, W]`,
    /// `kernel` is `[Cout, Cin, k, k]` with odd `k`, `bias` is `[Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        let b = bias.map(|b| self.value(b));
        let geom = kernels::ConvGeom::check(x.shape(), w.shape(), b.map(|b| b.shape()))?;
        let out = kernels::conv2d_forward(&geom, x.data(), w.data(), b.map(|b| b.data()));
        let t = Tensor::new(&[geom.n, geom.cout, geom.h, geom.w], out)?;
        let mut ins = vec![input, kernel];
        ins.extend(bias);
        self.push(
            t,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            &ins,
        )
    }

    /// Affine map along the last axis: `input[.., in] · weightᵀ + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.rank() == 0 || w.rank() != 2 {
            return config(format!(
                "linear expects [*, in] input and [out, in] weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            ));
        }
        let fan_in = *x.shape().last().unwrap();
        let (fan_out, w_in) = (w.shape()[0], w.shape()[1]);
        if fan_in != w_in {
            return config(format!(
                "linear inner dims differ: input {:?}, weight {:?}",
                x.shape(),
                w.shape()
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [fan_out] {
                return config(format!(
                    "linear bias {:?} does not match {} outputs",
                    self.value(b).shape(),
                    fan_out
                ));
            }
        }
        let rows = x.len() / fan_in.max(1);
        let out = kernels::linear_forward(
            rows,
            fan_in,
            fan_out,
            x.data(),
            w.data(),
            bias.map(|b| self.value(b).data()),
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let t = Tensor::new(&shape, out)?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        self.push(
            t,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &ins,
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(x.shape(), out)?;
        self.push(t, Op::Relu(input), &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape(), out)?;
        self.push(t, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape(), out)?;
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v * factor).collect();
        let t = Tensor::new(x.shape(), out)?;
        self.push(t, Op::Scale(input, factor), &[input])
    }

    pub fn add_scalar(&mut self, input: Var, value: f32) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v + value).collect();
        let t = Tensor::new(x.shape(), out)?;
        self.push(t, Op::AddScalar(input), &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshape(shape)?;
        self.push(t, Op::Reshape(input), &[input])
    }

    /// `[N, C, H, W]` → `[N·H·W, C]`: one row per spatial cell.
    pub fn to_rows(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = rank4("to_rows", x)?;
        let mut out = vec![0.0; x.len()];
        let hw = h * w;
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (p, &v) in src.iter().enumerate() {
                    out[(b * hw + p) * c + ch] = v;
                }
            }
        }
        let t = Tensor::new(&[n * hw, c], out)?;
        self.push(t, Op::ToRows(input), &[input])
    }

    /// Sub-pixel rearrangement `[N, C·r², H, W]` → `[N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let x = self.value(input);
        let [n, crr, h, w] = rank4("pixel_shuffle", x)?;
        if r == 0 || crr % (r * r) != 0 {
            return config(format!(
                "pixel_shuffle: {} channels not divisible by {}²",
                crr, r
            ));
        }
        let c = crr / (r * r);
        let mut out = vec![0.0; x.len()];
        kernels::pixel_shuffle_map(n, c, h, w, r, |src, dst| out[dst] = x.data()[src]);
        let t = Tensor::new(&[n, c, h * r, w * r], out)?;
        self.push(t, Op::PixelShuffle(input, r), &[input])
    }

    /// Blends per-cell values onto output query points with ensemble
    /// weights: `[N, C, l, w]` → `[N, C, H', W']`.
    pub fn blend(&mut self, input: Var, plan: Arc<EnsemblePlan>) -> Result<Var> {
        let x = self.value(input);
        let [n, c, l, w] = rank4("blend", x)?;
        if (l, w) != plan.grid_dims() {
            return config(format!(
                "blend plan built for grid {:?}, input grid is {:?}",
                plan.grid_dims(),
                (l, w)
            ));
        }
        let (oh, ow) = plan.out_dims();
        let mut out = vec![0.0; n * c * oh * ow];
        for (plane, dst) in x.data().chunks(l * w).zip(out.chunks_mut(oh * ow)) {
            for (o, e) in dst.iter_mut().zip(plan.entries()) {
                *o = e.blend(|cell| plane[cell]);
            }
        }
        let t = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(t, Op::Blend(input, plan), &[input])
    }

    /// For each query point and each of its four neighbors, emits the
    /// neighbor's code followed by the `(dy, dx)` offset from that neighbor's
    /// center in cell units: `[N, d, l, w]` → `[N·P·4, d + 2]`.
    pub fn gather_neighbors(&mut self, input: Var, plan: Arc<EnsemblePlan>) -> Result<Var> {
        let x = self.value(input);
        let [n, d, l, w] = rank4("gather_neighbors", x)?;
        if (l, w) != plan.grid_dims() {
            return config("gather_neighbors plan/grid mismatch");
        }
        let p = plan.entries().len();
        let cols = d + 2;
        let hw = l * w;
        let mut out = vec![0.0; n * p * 4 * cols];
        for b in 0..n {
            let feat = &x.data()[b * d * hw..(b + 1) * d * hw];
            for (pi, e) in plan.entries().iter().enumerate() {
                for k in 0..4 {
                    let row = ((b * p + pi) * 4 + k) * cols;
                    let cell = e.cells[k];
                    for ch in 0..d {
                        out[row + ch] = feat[ch * hw + cell];
                    }
                    out[row + d] = e.offsets[k].0;
                    out[row + d + 1] = e.offsets[k].1;
                }
            }
        }
        let t = Tensor::new(&[n * p * 4, cols], out)?;
        self.push(t, Op::GatherNeighbors(input, plan), &[input])
    }

    /// Collapses `[N·P·4, 1]` neighbor predictions into `[N, 1, H', W']`
    /// using the plan's ensemble weights.
    pub fn weighted_sum4(&mut self, input: Var, plan: Arc<EnsemblePlan>) -> Result<Var> {
        let x = self.value(input);
        let p = plan.entries().len();
        if x.len() % (4 * p) != 0 || x.shape().last() != Some(&1) {
            return config(format!(
                "weighted_sum4 expects [N·{}·4, 1], got {:?}",
                p,
                x.shape()
            ));
        }
        let n = x.len() / (4 * p);
        let (oh, ow) = plan.out_dims();
        let mut out = vec![0.0; n * p];
        for b in 0..n {
            for (pi, e) in plan.entries().iter().enumerate() {
                let base = (b * p + pi) * 4;
                let mut acc = 0.0f32;
                for k in 0..4 {
                    acc += e.weights[k] * x.data()[base + k];
                }
                out[b * p + pi] = acc;
            }
        }
        let t = Tensor::new(&[n, 1, oh, ow], out)?;
        self.push(t, Op::WeightedSum4(input, plan), &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(input), &[input])
    }

    /// Mean absolute difference against a constant target.
    pub fn l1_mean(&mut self, input: Var, target: &Tensor) -> Result<Var> {
        let x = self.value(input);
        same_shape("l1_mean", x, target)?;
        let n = x.len().max(1) as f64;
        let s: f64 = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        self.push(
            Tensor::scalar((s / n) as f32),
            Op::L1Mean(input, target.clone()),
            &[input],
        )
    }

    /// Mean squared difference against a constant target.
    pub fn mse_mean(&mut self, input: Var, target: &Tensor) -> Result<Var> {
        let x = self.value(input);
        same_shape("mse_mean", x, target)?;
        let n = x.len().max(1) as f64;
        let s: f64 = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        self.push(
            Tensor::scalar((s / n) as f32),
            Op::MseMean(input, target.clone()),
            &[input],
        )
    }

    /// Runs the reverse sweep from a scalar `loss` and consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return usage("backward() called twice on the same tape");
        }
        if self.nodes.is_empty() {
            return usage("backward() on an empty tape");
        }
        if self.value(loss).len() != 1 {
            return usage(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (input, gi) in self.vjp(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape(), g).expect("gradient shape"))
                }
                (Op::Leaf, None) if node.requires_grad => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn vjp(&self, idx: usize, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let node = &self.nodes[idx];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let geom = kernels::ConvGeom::check(x.shape(), w.shape(), None)
                    .expect("shape checked in forward");
                let (dx, dw, db) =
                    kernels::conv2d_backward(&geom, x.data(), w.data(), g, want(*input));
                let mut out = vec![(*kernel, dw)];
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(b) = bias {
                    out.push((*b, db));
                }
                out
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let fan_in = w.shape()[1];
                let fan_out = w.shape()[0];
                let rows = x.len() / fan_in.max(1);
                let (dx, dw, db) = kernels::linear_backward(
                    rows,
                    fan_in,
                    fan_out,
                    x.data(),
                    w.data(),
                    g,
                    want(*input),
                );
                let mut out = vec![(*weight, dw)];
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(b) = bias {
                    out.push((*b, db));
                }
                out
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let d = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(*input, d)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let da = g.iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let db = g.iter().zip(x.data()).map(|(p, q)| p * q).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(input, f) => vec![(*input, g.iter().map(|v| v * f).collect())],
            Op::AddScalar(input) | Op::Reshape(input) => vec![(*input, g.to_vec())],
            Op::ToRows(input) => {
                let [n, c, h, w] = rank4("to_rows", self.value(*input)).expect("rank checked");
                let hw = h * w;
                let mut d = vec![0.0; g.len()];
                for b in 0..n {
                    for ch in 0..c {
                        for p in 0..hw {
                            d[(b * c + ch) * hw + p] = g[(b * hw + p) * c + ch];
                        }
                    }
                }
                vec![(*input, d)]
            }
            Op::PixelShuffle(input, r) => {
                let [n, crr, h, w] = rank4("pixel_shuffle", self.value(*input)).expect("rank");
                let mut d = vec![0.0; g.len()];
                kernels::pixel_shuffle_map(n, crr / (r * r), h, w, *r, |src, dst| d[src] = g[dst]);
                vec![(*input, d)]
            }
            Op::Blend(input, plan) => {
                let x = self.value(*input);
                let (l, w) = plan.grid_dims();
                let (oh, ow) = plan.out_dims();
                let mut d = vec![0.0; x.len()];
                d.par_chunks_mut(l * w)
                    .zip(g.par_chunks(oh * ow))
                    .for_each(|(plane, gp)| {
                        for (gv, e) in gp.iter().zip(plan.entries()) {
                            for k in 0..4 {
                                plane[e.cells[k]] += e.weights[k] * gv;
                            }
                        }
                    });
                vec![(*input, d)]
            }
            Op::GatherNeighbors(input, plan) => {
                let x = self.value(*input);
                let [n, d, l, w] = rank4("gather_neighbors", x).expect("rank");
                let hw = l * w;
                let p = plan.entries().len();
                let cols = d + 2;
                let mut dx = vec![0.0; x.len()];
                for b in 0..n {
                    let feat = &mut dx[b * d * hw..(b + 1) * d * hw];
                    for (pi, e) in plan.entries().iter().enumerate() {
                        for k in 0..4 {
                            let row = ((b * p + pi) * 4 + k) * cols;
                            let cell = e.cells[k];
                            for ch in 0..d {
                                feat[ch * hw + cell] += g[row + ch];
                            }
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::WeightedSum4(input, plan) => {
                let p = plan.entries().len();
                let n = g.len() / p;
                let mut d = vec![0.0; n * p * 4];
                for b in 0..n {
                    for (pi, e) in plan.entries().iter().enumerate() {
                        let base = (b * p + pi) * 4;
                        for k in 0..4 {
                            d[base + k] = e.weights[k] * g[b * p + pi];
                        }
                    }
                }
                vec![(*input, d)]
            }
            Op::Sum(input) => vec![(*input, vec![g[0]; self.value(*input).len()])],
            Op::L1Mean(input, target) => {
                let x = self.value(*input);
                let scale = g[0] / x.len().max(1) as f32;
                let d = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| {
                        let diff = a - b;
                        if diff > 0.0 {
                            scale
                        } else if diff < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*input, d)]
            }
            Op::MseMean(input, target) => {
                let x = self.value(*input);
                let scale = 2.0 * g[0] / x.len().max(1) as f32;
                let d = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                vec![(*input, d)]
            }
        }
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return config(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn rank4(op: &str, t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => config(format!("{op} expects [N, C, H, W], got {s:?}")),
    }
}
