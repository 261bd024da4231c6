//! Toy audio and visual encoders with the interface widths of the full-size
//! models they stand in for.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::nn::{
    sinusoidal_table, Conv1d, Conv1dCache, Grads, Init, Linear, Matrix, ParamStore, StackCache,
    TransformerStack,
};

/// Longest accepted audio sequence, in frames.
pub const MAX_AUDIO_FRAMES: usize = 1500;

/// `H x W x C` image with values in `[0, 1]`, stored row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, ModelError> {
        if data.len() != height * width * channels {
            return Err(ModelError::Config(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ModelError::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// From packed 8-bit RGB, `width * height * 3` bytes.
    pub fn from_rgb8(width: u32, height: u32, rgb: &[u8]) -> Self {
        let (w, h) = (width as usize, height as usize);
        assert_eq!(rgb.len(), w * h * 3, "rgb buffer size");
        Self {
            height: h,
            width: w,
            channels: 3,
            data: rgb.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// Back to packed 8-bit RGB. Exact inverse of [`ImageTensor::from_rgb8`].
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c] as f64
    }
}

/// Frame sequence produced by (or standing in for) a speech front end.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    frames: Matrix,
}

impl AudioFeatureSequence {
    pub fn new(frames: Matrix) -> Result<Self, ModelError> {
        if frames.nrows() == 0 {
            return Err(ModelError::EmptySequence);
        }
        if frames.nrows() > MAX_AUDIO_FRAMES {
            return Err(ModelError::Overlength {
                len: frames.nrows(),
                max: MAX_AUDIO_FRAMES,
            });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.frames.ncols()
    }
}

/// Output of the visual encoder, one row per image patch.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTokenSequence(pub Matrix);

impl VisualTokenSequence {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioEncoderConfig {
    pub d_audio: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub kernel: usize,
    pub ffn_mult: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self {
            d_audio: 768,
            n_blocks: 2,
            n_heads: 4,
            kernel: 3,
            ffn_mult: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualEncoderConfig {
    pub d_visual: usize,
    pub image_size: usize,
    pub patch: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
}

impl Default for VisualEncoderConfig {
    fn default() -> Self {
        Self {
            d_visual: 768,
            image_size: 224,
            patch: 32,
            n_blocks: 2,
            n_heads: 4,
            ffn_mult: 4,
        }
    }
}

impl VisualEncoderConfig {
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }
}

/// Convolution over frames followed by bidirectional transformer blocks.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub cfg: AudioEncoderConfig,
    pub conv: Conv1d,
    pub blocks: TransformerStack,
}

#[derive(Debug, Clone)]
pub struct AudioEncoderCache {
    conv: Conv1dCache,
    blocks: StackCache,
}

impl AudioEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &AudioEncoderConfig) -> Self {
        let d = cfg.d_audio;
        let conv = Conv1d::new(store, init, &format!("{name}.conv"), cfg.kernel, d, d);
        let blocks = TransformerStack::new(
            store,
            init,
            &format!("{name}.blocks"),
            cfg.n_blocks,
            d,
            cfg.n_heads,
            cfg.ffn_mult,
            false,
        );
        Self {
            cfg: cfg.clone(),
            conv,
            blocks,
        }
    }

    fn check(&self, a: &AudioFeatureSequence) -> Result<(), ModelError> {
        if a.width() != self.cfg.d_audio {
            return Err(ModelError::WidthMismatch {
                what: "audio features",
                expected: self.cfg.d_audio,
                got: a.width(),
            });
        }
        Ok(())
    }

    pub fn forward_train(
        &self,
        p: &ParamStore,
        a: &AudioFeatureSequence,
    ) -> Result<(Matrix, AudioEncoderCache), ModelError> {
        self.check(a)?;
        let x = a.frames() + &sinusoidal_table(a.len(), self.cfg.d_audio);
        let (h, conv) = self.conv.forward_train(p, &x);
        let (y, blocks) = self.blocks.forward_train(p, &h);
        Ok((y, AudioEncoderCache { conv, blocks }))
    }

    pub fn backward(&self, p: &ParamStore, cache: &AudioEncoderCache, dy: &Matrix, g: &mut Grads) {
        let dh = self.blocks.backward(p, &cache.blocks, dy, g);
        self.conv.backward(p, &cache.conv, &dh, g);
    }

    pub fn encode(
        &self,
        p: &ParamStore,
        a: &AudioFeatureSequence,
    ) -> Result<AudioFeatureSequence, ModelError> {
        let (y, _) = self.forward_train(p, a)?;
        AudioFeatureSequence::new(y)
    }
}

/// Bilinear resize to `size x size`, half-pixel centres, edge clamping.
/// Returns the resized image as a flat channel-last buffer.
pub fn resize_bilinear(img: &ImageTensor, size: usize) -> Vec<f64> {
    let (h, w, c) = (img.height, img.width, img.channels);
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    let axis = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };
    let cols: Vec<_> = (0..size).map(|x| axis(x, sx, w)).collect();
    let mut out = vec![0.0; size * size * c];
    for y in 0..size {
        let (y0, y1, fy) = axis(y, sy, h);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let top = img.get(x0, y0, ch) * (1.0 - fx) + img.get(x1, y0, ch) * fx;
                let bottom = img.get(x0, y1, ch) * (1.0 - fx) + img.get(x1, y1, ch) * fx;
                out[(y * size + x) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Resize, cut into patches and affinely embed each patch, then run
/// bidirectional transformer blocks over the patch sequence.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pub cfg: VisualEncoderConfig,
    pub embed: Linear,
    pub blocks: TransformerStack,
}

#[derive(Debug, Clone)]
pub struct VisualEncoderCache {
    patches: Matrix,
    blocks: StackCache,
}

impl VisualEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cfg: &VisualEncoderConfig,
    ) -> Result<Self, ModelError> {
        if cfg.patch == 0 || cfg.image_size % cfg.patch != 0 {
            return Err(ModelError::Config(format!(
                "patch size {} does not divide image size {}",
                cfg.patch, cfg.image_size
            )));
        }
        let pd = cfg.patch_dim();
        let embed = Linear::new(
            store,
            init,
            &format!("{name}.patch_embed"),
            pd,
            cfg.d_visual,
            1.0 / (pd as f64).sqrt(),
        );
        let blocks = TransformerStack::new(
            store,
            init,
            &format!("{name}.blocks"),
            cfg.n_blocks,
            cfg.d_visual,
            cfg.n_heads,
            cfg.ffn_mult,
            false,
        );
        Ok(Self {
            cfg: cfg.clone(),
            embed,
            blocks,
        })
    }

    /// Flattened patches, one row per patch in raster order; each row is
    /// the patch pixels in `(row, col, channel)` order.
    pub fn patches(&self, img: &ImageTensor) -> Result<Matrix, ModelError> {
        if img.channels != 3 {
            return Err(ModelError::Channels(img.channels));
        }
        if img.width < 8 || img.height < 8 {
            return Err(ModelError::ImageTooSmall {
                width: img.width,
                height: img.height,
            });
        }
        let size = self.cfg.image_size;
        let ps = self.cfg.patch;
        let grid = size / ps;
        let resized = resize_bilinear(img, size);
        let mut out = Matrix::zeros((grid * grid, self.cfg.patch_dim()));
        for gy in 0..grid {
            for gx in 0..grid {
                let mut row = out.row_mut(gy * grid + gx);
                for py in 0..ps {
                    let src = ((gy * ps + py) * size + gx * ps) * 3;
                    for (k, v) in resized[src..src + ps * 3].iter().enumerate() {
                        row[py * ps * 3 + k] = *v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Patch embeddings before position encoding and blocks.
    pub fn patch_embeddings(&self, p: &ParamStore, img: &ImageTensor) -> Result<Matrix, ModelError> {
        Ok(self.embed.forward(p, &self.patches(img)?))
    }

    pub fn forward_patches_train(&self, p: &ParamStore, patches: &Matrix) -> (Matrix, VisualEncoderCache) {
        let mut x = self.embed.forward(p, patches);
        x += &sinusoidal_table(x.nrows(), self.cfg.d_visual);
        let (y, blocks) = self.blocks.forward_train(p, &x);
        (
            y,
            VisualEncoderCache {
                patches: patches.clone(),
                blocks,
            },
        )
    }

    pub fn forward_train(
        &self,
        p: &ParamStore,
        img: &ImageTensor,
    ) -> Result<(Matrix, VisualEncoderCache), ModelError> {
        Ok(self.forward_patches_train(p, &self.patches(img)?))
    }

    pub fn backward(&self, p: &ParamStore, cache: &VisualEncoderCache, dy: &Matrix, g: &mut Grads) {
        let dx = self.blocks.backward(p, &cache.blocks, dy, g);
        self.embed.backward(p, &cache.patches, &dx, g);
    }

    pub fn encode(&self, p: &ParamStore, img: &ImageTensor) -> Result<VisualTokenSequence, ModelError> {
        Ok(VisualTokenSequence(self.forward_train(p, img)?.0))
    }
}
