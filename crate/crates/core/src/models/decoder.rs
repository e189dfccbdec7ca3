//! Decoders from a feature grid to intensities.
//!
//! The coordinate decoder is an MLP `g` applied to latent codes; a query at
//! a continuous location blends `g` evaluated at the four surrounding cells
//! with bilinear ensemble weights. Without relative offsets `g` depends only
//! on the code, so it is evaluated once per cell and the results blended;
//! with `liif_mode` each (code, offset) pair is evaluated separately.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::params::{kaiming_uniform, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{config, usage, Result};
use crate::resample::EnsemblePlan;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordDecoder {
    pub d: usize,
    pub hidden: usize,
    /// Number of affine layers (hidden layers + output layer).
    pub layers: usize,
    pub liif_mode: bool,
    base: usize,
}

impl CoordDecoder {
    pub fn new(
        d: usize,
        hidden: usize,
        layers: usize,
        liif_mode: bool,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if layers < 1 {
            return config("the MLP needs at least one layer");
        }
        let base = params.len();
        let in_dim = d + if liif_mode { 2 } else { 0 };
        let mut fan_in = in_dim;
        for j in 0..layers {
            let fan_out = if j + 1 == layers { 1 } else { hidden };
            params.push(
                format!("dec.mlp{j}.weight"),
                kaiming_uniform(&[fan_out, fan_in], fan_in, rng),
            );
            params.push(format!("dec.mlp{j}.bias"), Tensor::zeros(&[fan_out]));
            fan_in = fan_out;
        }
        Ok(Self {
            d,
            hidden,
            layers,
            liif_mode,
            base,
        })
    }

    pub fn tensor_count(&self) -> usize {
        2 * self.layers
    }

    pub fn param_count(in_dim: usize, hidden: usize, layers: usize) -> usize {
        if layers == 1 {
            return in_dim + 1;
        }
        (in_dim * hidden + hidden) + (layers - 2) * (hidden * hidden + hidden) + (hidden + 1)
    }

    /// Applies the MLP to `[rows, in]`, returning `[rows, 1]`.
    pub fn mlp(&self, tape: &mut Tape, vars: &[Var], rows: Var) -> Result<Var> {
        let mut h = rows;
        for j in 0..self.layers {
            let w = vars[self.base + 2 * j];
            let b = vars[self.base + 2 * j + 1];
            h = tape.linear(h, w, Some(b))?;
            if j + 1 < self.layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Decodes `features` (`[N, d, l, w]`) at every entry of `plan`,
    /// returning `[N, 1, H', W']`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: Var, plan: Arc<EnsemblePlan>) -> Result<Var> {
        let shape = tape.value(features).shape().to_vec();
        let &[n, d, l, w] = shape.as_slice() else {
            return config(format!("feature grid must be [N, d, l, w], got {shape:?}"));
        };
        if d != self.d {
            return config(format!("decoder expects {} channels, grid has {d}", self.d));
        }
        if self.liif_mode {
            let rows = tape.gather_neighbors(features, plan.clone())?;
            let out = self.mlp(tape, vars, rows)?;
            tape.weighted_sum4(out, plan)
        } else {
            let rows = tape.to_rows(features)?;
            let cell_values = self.mlp(tape, vars, rows)?;
            let grid = tape.reshape(cell_values, &[n, 1, l, w])?;
            tape.blend(grid, plan)
        }
    }
}

/// Sub-pixel upsampling head of the fixed-scale baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDecoder {
    pub d: usize,
    pub scale: usize,
    base: usize,
}

impl ConvDecoder {
    pub fn new(d: usize, scale: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let base = params.len();
        let mut conv = |name: String, cin: usize, cout: usize| {
            params.push(
                format!("{name}.weight"),
                kaiming_uniform(&[cout, cin, 3, 3], cin * 9, rng),
            );
            params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        };
        match scale {
            2 | 3 => conv("dec.up0".into(), d, d * scale * scale),
            4 => {
                conv("dec.up0".into(), d, 4 * d);
                conv("dec.up1".into(), d, 4 * d);
            }
            s => return config(format!("conv decoder supports scales 2, 3 and 4, not {s}")),
        }
        conv("dec.out".into(), d, 1);
        Ok(Self { d, scale, base })
    }

    fn stages(&self) -> Vec<usize> {
        if self.scale == 4 {
            vec![2, 2]
        } else {
            vec![self.scale]
        }
    }

    pub fn tensor_count(&self) -> usize {
        2 * (self.stages().len() + 1)
    }

    /// `[N, d, l, w]` → `[N, 1, s·l, s·w]`. Any other output size is a
    /// usage error: this decoder is not scale-agnostic.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: Var, out_dims: (usize, usize)) -> Result<Var> {
        let shape = tape.value(features).shape().to_vec();
        let (l, w) = (shape[2], shape[3]);
        if out_dims != (l * self.scale, w * self.scale) {
            return usage(format!(
                "conv decoder is fixed at {}x: {l}x{w} features cannot produce {}x{}",
                self.scale, out_dims.0, out_dims.1
            ));
        }
        let mut h = features;
        let mut idx = self.base;
        for r in self.stages() {
            h = tape.conv2d(h, vars[idx], Some(vars[idx + 1]))?;
            h = tape.pixel_shuffle(h, r)?;
            idx += 2;
        }
        tape.conv2d(h, vars[idx], Some(vars[idx + 1]))
    }
}
