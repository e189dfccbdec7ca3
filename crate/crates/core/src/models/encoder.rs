//! EDSR-style residual encoder without upsampling: head conv, residual
//! blocks (conv, ReLU, conv, ×0.1, skip), body tail conv and a global skip.
//! Same-padded 3×3 convolutions keep one feature vector per input pixel.

use rand_chacha::ChaCha8Rng;

use super::params::{kaiming_uniform, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
pub const RES_SCALE: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub d: usize,
    pub blocks: usize,
    base: usize,
}

fn add_conv(params: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) {
    let fan_in = cin * KERNEL * KERNEL;
    params.push(
        format!("{name}.weight"),
        kaiming_uniform(&[cout, cin, KERNEL, KERNEL], fan_in, rng),
    );
    params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

impl Encoder {
    pub fn new(d: usize, blocks: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let base = params.len();
        add_conv(params, "enc.head", 1, d, rng);
        for b in 0..blocks {
            add_conv(params, &format!("enc.block{b}.conv1"), d, d, rng);
            add_conv(params, &format!("enc.block{b}.conv2"), d, d, rng);
        }
        add_conv(params, "enc.tail", d, d, rng);
        Self { d, blocks, base }
    }

    /// Number of parameter tensors this encoder owns.
    pub fn tensor_count(&self) -> usize {
        2 * (2 + 2 * self.blocks)
    }

    /// Closed-form scalar parameter count.
    pub fn param_count(d: usize, blocks: usize) -> usize {
        let conv = |cin: usize, cout: usize| cout * cin * KERNEL * KERNEL + cout;
        conv(1, d) + blocks * 2 * conv(d, d) + conv(d, d)
    }

    /// `x` is `[N, 1, H, W]`; returns `[N, d, H, W]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let p = |i: usize| vars[self.base + i];
        let mut layer = 0usize;
        let mut conv = |tape: &mut Tape, input: Var, i: usize| -> Result<Var> {
            layer += 1;
            tape.conv2d(input, p(2 * i), Some(p(2 * i + 1)))
                .map_err(|e| with_layer(e, layer))
        };
        let head = conv(tape, x, 0)?;
        let mut r = head;
        for b in 0..self.blocks {
            let t = conv(tape, r, 1 + 2 * b)?;
            let t = tape.relu(t)?;
            let t = conv(tape, t, 2 + 2 * b)?;
            let t = tape.scale(t, RES_SCALE)?;
            r = tape.add(r, t)?;
        }
        let tail = conv(tape, r, 1 + 2 * self.blocks)?;
        tape.add(tail, head)
    }
}

fn with_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("encoder layer {layer} ({op})"),
        },
        other => other,
    }
}
