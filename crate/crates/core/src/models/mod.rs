//! Encoder, coordinate decoder, the fixed-scale convolutional baseline, and
//! checkpoints.
//!
//! Networks see `x - 0.5` and add `0.5` back to their output, so freshly
//! initialized models start near mid-gray instead of zero.

mod decoder;
mod encoder;
mod params;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{ConvDecoder, CoordDecoder};
pub use encoder::Encoder;
pub use params::ParamSet;

use crate::autodiff::{Tape, Var};
use crate::error::{config, domain, Result};
use crate::image::ImageGrid;
use crate::resample::{ContinuousCoord, EnsemblePlan};
use crate::tensor::Tensor;

pub const INPUT_SHIFT: f32 = 0.5;
pub const MIN_INPUT_SIDE: usize = 8;
pub const DESCRIPTOR_FILE: &str = "descriptor.json";

/// Output points decoded per tape when offsets make every query distinct.
const POINT_CHUNK: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Coord,
    Conv,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Coord => "coord",
            Arch::Conv => "conv",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coord" => Ok(Arch::Coord),
            "conv" => Ok(Arch::Conv),
            other => config(format!("unknown model kind `{other}` (expected coord or conv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d: usize,
    pub blocks: usize,
    pub mlp_layers: usize,
    pub hidden: usize,
    #[serde(default)]
    pub liif_mode: bool,
    /// Fixed upsampling factor of the conv baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
}

impl ModelConfig {
    /// Desk-scale coordinate model: 8 blocks at d = 64, 5-layer MLP with
    /// 256 hidden units.
    pub fn coord_default() -> Self {
        Self {
            arch: Arch::Coord,
            d: 64,
            blocks: 8,
            mlp_layers: 5,
            hidden: 256,
            liif_mode: false,
            scale: None,
        }
    }

    /// The larger 16-block configuration.
    pub fn coord_full() -> Self {
        Self {
            blocks: 16,
            ..Self::coord_default()
        }
    }

    pub fn conv_default(scale: usize) -> Self {
        Self {
            arch: Arch::Conv,
            scale: Some(scale),
            ..Self::coord_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return config("feature dim d must be positive");
        }
        match self.arch {
            Arch::Coord => {
                if self.mlp_layers == 0 || (self.mlp_layers > 1 && self.hidden == 0) {
                    return config("coordinate MLP needs >= 1 layer and a positive hidden width");
                }
                if self.scale.is_some() {
                    return config("coordinate models take no fixed scale");
                }
            }
            Arch::Conv => match self.scale {
                Some(2..=4) => {}
                other => return config(format!("conv models need scale 2, 3 or 4, got {other:?}")),
            },
        }
        Ok(())
    }

    /// Closed-form scalar parameter count.
    pub fn param_count(&self) -> usize {
        let enc = Encoder::param_count(self.d, self.blocks);
        match self.arch {
            Arch::Coord => {
                let in_dim = self.d + if self.liif_mode { 2 } else { 0 };
                enc + CoordDecoder::param_count(in_dim, self.hidden, self.mlp_layers)
            }
            Arch::Conv => {
                let d = self.d;
                let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
                let up = match self.scale {
                    Some(4) => 2 * conv(d, 4 * d),
                    Some(s) => conv(d, d * s * s),
                    None => 0,
                };
                enc + up + conv(d, 1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    Coord(CoordDecoder),
    Conv(ConvDecoder),
}

/// Latent grid `[1, d, l, w]`: one code per input pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    tensor: Tensor,
}

impl FeatureGrid {
    pub fn new(tensor: Tensor) -> Result<Self> {
        match tensor.shape() {
            [1, _, _, _] if tensor.all_finite() => Ok(Self { tensor }),
            s => config(format!("feature grid must be finite [1, d, l, w], got {s:?}")),
        }
    }

    pub fn d(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.tensor.shape()[2], self.tensor.shape()[3])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    /// Code of cell `(row, col)`.
    pub fn code(&self, row: usize, col: usize) -> Vec<f32> {
        let (l, w) = self.dims();
        (0..self.d())
            .map(|c| self.tensor.data()[c * l * w + row * w + col])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    /// Fresh model with Kaiming-uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let encoder = Encoder::new(config.d, config.blocks, &mut params, &mut rng);
        let decoder = match config.arch {
            Arch::Coord => Decoder::Coord(CoordDecoder::new(
                config.d,
                config.hidden,
                config.mlp_layers,
                config.liif_mode,
                &mut params,
                &mut rng,
            )?),
            Arch::Conv => Decoder::Conv(ConvDecoder::new(
                config.d,
                config.scale.expect("validated"),
                &mut params,
                &mut rng,
            )?),
        };
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Scalar parameters owned by the encoder / decoder respectively.
    pub fn split_param_counts(&self) -> (usize, usize) {
        let n = self.encoder.tensor_count();
        let enc = self.params.tensors()[..n].iter().map(Tensor::len).sum();
        (enc, self.params.count() - enc)
    }

    /// Output dims this model can produce for an `l × w` input, if fixed.
    pub fn fixed_scale(&self) -> Option<usize> {
        match &self.decoder {
            Decoder::Conv(c) => Some(c.scale),
            Decoder::Coord(_) => None,
        }
    }

    fn check_input(x: &ImageGrid) -> Result<()> {
        let (h, w) = x.dims();
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
            return domain(format!(
                "input {h}x{w} is smaller than {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
            ));
        }
        Ok(())
    }

    /// Records the encoder on `tape`: `[1, 1, l, w]` image → `[1, d, l, w]`.
    pub fn encode_on(&self, tape: &mut Tape, vars: &[Var], x_lr: &ImageGrid) -> Result<Var> {
        Self::check_input(x_lr)?;
        let x = tape.constant(x_lr.to_tensor());
        let x = tape.add_scalar(x, -INPUT_SHIFT)?;
        self.encoder.forward(tape, vars, x)
    }

    /// Records decoding of `features` at the pixel centers of `out_dims`.
    pub fn decode_on(&self, tape: &mut Tape, vars: &[Var], features: Var, out_dims: (usize, usize)) -> Result<Var> {
        let out = match &self.decoder {
            Decoder::Coord(dec) => {
                let s = tape.value(features).shape();
                let plan = Arc::new(EnsemblePlan::new((s[2], s[3]), out_dims)?);
                dec.forward(tape, vars, features, plan)?
            }
            Decoder::Conv(dec) => dec.forward(tape, vars, features, out_dims)?,
        };
        tape.add_scalar(out, INPUT_SHIFT)
    }

    /// Full differentiable forward pass; returns the `[1, 1, H', W']` node.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x_lr: &ImageGrid, out_dims: (usize, usize)) -> Result<Var> {
        let f = self.encode_on(tape, vars, x_lr)?;
        self.decode_on(tape, vars, f, out_dims)
    }

    pub fn encode(&self, x_lr: &ImageGrid) -> Result<FeatureGrid> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let f = self.encode_on(&mut tape, &vars, x_lr)?;
        FeatureGrid::new(tape.value(f).clone())
    }

    /// Decodes the whole output raster (unclamped).
    pub fn decode_image(&self, grid: &FeatureGrid, out_dims: (usize, usize)) -> Result<ImageGrid> {
        if out_dims.0 == 0 || out_dims.1 == 0 {
            return domain("output dims must be at least 1x1");
        }
        match &self.decoder {
            Decoder::Coord(dec) if dec.liif_mode && out_dims.0 * out_dims.1 > POINT_CHUNK => {
                let (oh, ow) = out_dims;
                let mut data = Vec::with_capacity(oh * ow);
                let all: Vec<ContinuousCoord> = (0..oh)
                    .flat_map(|r| (0..ow).map(move |c| ContinuousCoord::pixel_center(r, c, oh, ow)))
                    .collect();
                for chunk in all.chunks(POINT_CHUNK) {
                    data.extend(self.decode_points(grid, chunk)?);
                }
                ImageGrid::new(oh, ow, data)
            }
            _ => {
                let mut tape = Tape::new();
                let vars = self.params.register(&mut tape, false);
                let f = tape.constant(grid.tensor().clone());
                let out = self.decode_on(&mut tape, &vars, f, out_dims)?;
                ImageGrid::from_tensor(tape.value(out))
            }
        }
    }

    /// Decodes arbitrary query points (coordinate decoders only).
    pub fn decode_points(&self, grid: &FeatureGrid, queries: &[ContinuousCoord]) -> Result<Vec<f32>> {
        let Decoder::Coord(dec) = &self.decoder else {
            return crate::error::usage("point queries need a coordinate decoder");
        };
        let plan = Arc::new(EnsemblePlan::from_queries(grid.dims(), queries)?);
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let f = tape.constant(grid.tensor().clone());
        let out = dec.forward(&mut tape, &vars, f, plan)?;
        let out = tape.add_scalar(out, INPUT_SHIFT)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn decode_point(&self, grid: &FeatureGrid, query: ContinuousCoord) -> Result<f32> {
        Ok(self.decode_points(grid, &[query])?[0])
    }

    /// The MLP applied to a single latent code.
    pub fn mlp_at_code(&self, code: &[f32]) -> Result<f32> {
        let Decoder::Coord(dec) = &self.decoder else {
            return crate::error::usage("no MLP in a conv decoder");
        };
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let row = tape.constant(Tensor::new(&[1, code.len()], code.to_vec())?);
        let out = dec.mlp(&mut tape, &vars, row)?;
        Ok(tape.value(out).data()[0] + INPUT_SHIFT)
    }

    /// Encode + decode without recording gradients (unclamped).
    pub fn predict(&self, x_lr: &ImageGrid, out_dims: (usize, usize)) -> Result<ImageGrid> {
        let grid = self.encode(x_lr)?;
        self.decode_image(&grid, out_dims)
    }

    pub fn save(&self, dir: &Path, step: u64, seed: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.params.save_dir(dir)?;
        let desc = CheckpointDescriptor {
            model: self.config.clone(),
            step,
            seed,
        };
        let mut s = serde_json::to_string_pretty(&desc)?;
        s.push('\n');
        fs::write(dir.join(DESCRIPTOR_FILE), s)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointDescriptor)> {
        let desc: CheckpointDescriptor = serde_json::from_slice(&fs::read(dir.join(DESCRIPTOR_FILE))?)?;
        let mut model = Self::new(desc.model.clone(), desc.seed)?;
        model.params.load_dir(dir)?;
        Ok((model, desc))
    }
}

/// `descriptor.json` of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub step: u64,
    pub seed: u64,
}

/// Mean of each `factor × factor` block.
pub fn block_mean(img: &ImageGrid, factor: usize) -> ImageGrid {
    let (h, w) = (img.height() / factor, img.width() / factor);
    ImageGrid::from_fn(h, w, |y, x| {
        let mut s = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                s += img.get(y * factor + dy, x * factor + dx);
            }
        }
        s / (factor * factor) as f32
    })
}
