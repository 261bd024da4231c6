//! Dataset generation and the on-disk format.
//!
//! A dataset directory holds `manifest.json`, `samples.jsonl` (one record per
//! line) and `images/<id>.png`. Audio features are not stored; they are
//! re-synthesised from the instruction text with the manifest's audio seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::audio::{synth_audio_features_with, DEFAULT_AUDIO_SEED, DEFAULT_FRAMES_PER_CHAR};
use super::instruct::make_instruction;
use super::normalize::normalize_text;
use super::scene::{render_scene, synth_scene_on, DEFAULT_CANVAS, MAX_SHAPES, MIN_SHAPES};
use super::{BBox, DataError, InstructionType, Sample};
use crate::encoders::{ImageTensor, MAX_AUDIO_FRAMES};

pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = "shapes-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const IMAGES_DIR: &str = "images";

/// How pseudo-speech is synthesised for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioSettings {
    pub d_audio: usize,
    pub seed: u64,
    pub frames_per_char: usize,
}

impl AudioSettings {
    pub fn new(d_audio: usize) -> Self {
        Self {
            d_audio,
            seed: DEFAULT_AUDIO_SEED,
            frames_per_char: DEFAULT_FRAMES_PER_CHAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub canvas: (u32, u32),
    /// Instruction types, assigned round-robin over samples.
    pub types: Vec<InstructionType>,
    pub audio: AudioSettings,
}

impl DatasetConfig {
    pub fn new(n: usize, seed: u64, d_audio: usize) -> Self {
        Self {
            n,
            seed,
            shapes_min: MIN_SHAPES,
            shapes_max: 4,
            canvas: DEFAULT_CANVAS,
            types: InstructionType::ALL.to_vec(),
            audio: AudioSettings::new(d_audio),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n == 0 {
            return Err(DataError::Empty);
        }
        if self.shapes_min < MIN_SHAPES || self.shapes_max > MAX_SHAPES || self.shapes_min > self.shapes_max {
            return Err(DataError::ShapeCount {
                requested: if self.shapes_min < MIN_SHAPES {
                    self.shapes_min
                } else {
                    self.shapes_max
                },
                min: MIN_SHAPES,
                max: MAX_SHAPES,
            });
        }
        if self.types.is_empty() {
            return Err(DataError::InvalidScene("no instruction types requested".into()));
        }
        Ok(())
    }
}

/// Recorded next to the samples; enough to regenerate them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub generator_version: String,
    /// `None` for datasets that were not produced by [`generate_dataset`].
    pub config: Option<DatasetConfig>,
    pub audio: AudioSettings,
    pub n_samples: usize,
    /// sha256 over `samples.jsonl` followed by every image file in order.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    image: String,
    image_size: (u32, u32),
    instruction_text: String,
    instruction_type: InstructionType,
    response_text: String,
    bbox: Option<BBox>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds `cfg.n` samples. Bit-reproducible for a fixed config.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let span = (cfg.shapes_max - cfg.shapes_min + 1) as u64;
    let mut samples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let s = splitmix(cfg.seed ^ splitmix(i as u64));
        let n_shapes = cfg.shapes_min + (s % span) as usize;
        let spec = synth_scene_on(s, n_shapes, cfg.canvas)?;
        let itype = cfg.types[i % cfg.types.len()];
        let (instruction, response) = make_instruction(&spec, itype, splitmix(s))?;
        let instruction = normalize_text(&instruction).text;
        let audio = synth_audio_features_with(
            &instruction,
            cfg.audio.d_audio,
            cfg.audio.seed,
            cfg.audio.frames_per_char,
        )?;
        samples.push(Sample {
            id: format!("s{:05}", i),
            image: render_scene(&spec),
            image_size: (spec.width, spec.height),
            instruction_text: instruction,
            instruction_type: itype,
            audio_features: audio,
            response_text: response,
            bbox: Some(spec.target_shape().bbox),
        });
    }
    let content_hash = content_hash(&samples)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            generator_version: GENERATOR_VERSION.into(),
            config: Some(cfg.clone()),
            audio: cfg.audio,
            n_samples: samples.len(),
            content_hash,
        },
        samples,
    })
}

impl Dataset {
    /// Samples of the given types, in order, with the manifest count updated.
    /// The content hash is recomputed for the subset.
    pub fn filter_types(&self, types: &[InstructionType]) -> Result<Dataset, DataError> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| types.contains(&s.instruction_type))
            .cloned()
            .collect();
        self.with_samples(samples)
    }

    pub fn take(&self, n: usize) -> Result<Dataset, DataError> {
        self.with_samples(self.samples.iter().take(n).cloned().collect())
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Result<Dataset, DataError> {
        let mut manifest = self.manifest.clone();
        manifest.n_samples = samples.len();
        manifest.content_hash = content_hash(&samples)?;
        Ok(Dataset { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn record_of(s: &Sample) -> SampleRecord {
    SampleRecord {
        id: s.id.clone(),
        image: format!("{IMAGES_DIR}/{}.png", s.id),
        image_size: s.image_size,
        instruction_text: s.instruction_text.clone(),
        instruction_type: s.instruction_type,
        response_text: s.response_text.clone(),
        bbox: s.bbox,
    }
}

fn jsonl_bytes(samples: &[Sample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, &record_of(s)).expect("records serialise");
        out.push(b'\n');
    }
    out
}

pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>, DataError> {
    if img.channels() != 3 {
        return Err(DataError::Image(format!("expected 3 channels, got {}", img.channels())));
    }
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &img.to_rgb8(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| DataError::Image(e.to_string()))?;
    Ok(out)
}

/// Loads any image file the `image` crate can decode as RGB.
pub fn load_image(path: &Path) -> Result<ImageTensor, DataError> {
    let bytes = fs::read(path)?;
    decode_png(&bytes)
}

fn decode_png(bytes: &[u8]) -> Result<ImageTensor, DataError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| DataError::Image(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImageTensor::from_rgb8(w, h, img.as_raw()))
}

/// Hash of the serialised records and images, as written to disk.
pub fn content_hash(samples: &[Sample]) -> Result<String, DataError> {
    let mut h = Sha256::new();
    h.update(jsonl_bytes(samples));
    for s in samples {
        h.update(encode_png(&s.image)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the dataset under `dir` (created if needed) and returns the
/// content hash recorded in the manifest.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<String, DataError> {
    fs::create_dir_all(dir.join(IMAGES_DIR))?;
    let jsonl = jsonl_bytes(&dataset.samples);
    let mut h = Sha256::new();
    h.update(&jsonl);
    for s in &dataset.samples {
        let png = encode_png(&s.image)?;
        h.update(&png);
        write_atomic(&dir.join(IMAGES_DIR).join(format!("{}.png", s.id)), &png)?;
    }
    write_atomic(&dir.join(SAMPLES_FILE), &jsonl)?;
    let mut manifest = dataset.manifest.clone();
    manifest.n_samples = dataset.samples.len();
    manifest.content_hash = hex::encode(h.finalize());
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest.content_hash)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| DataError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| DataError::Manifest {
        path,
        message: e.to_string(),
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest = read_manifest(dir)?;
    let samples_path = dir.join(SAMPLES_FILE);
    let text = fs::read(&samples_path)?;
    let mut h = Sha256::new();
    h.update(&text);
    let text = String::from_utf8(text).map_err(|e| DataError::MalformedLine {
        path: samples_path.clone(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let rec: SampleRecord =
            serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
                path: samples_path.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        let img_path: PathBuf = dir.join(&rec.image);
        let png = fs::read(&img_path).map_err(|_| DataError::MissingSidecar {
            id: rec.id.clone(),
            path: img_path.clone(),
        })?;
        h.update(&png);
        let image = decode_png(&png)?;
        let audio = synth_audio_features_with(
            &rec.instruction_text,
            manifest.audio.d_audio,
            manifest.audio.seed,
            manifest.audio.frames_per_char,
        )
        .map_err(|e| DataError::InvalidSample {
            id: rec.id.clone(),
            message: e.to_string(),
        })?;
        let sample = Sample {
            id: rec.id,
            image,
            image_size: rec.image_size,
            instruction_text: rec.instruction_text,
            instruction_type: rec.instruction_type,
            audio_features: audio,
            response_text: rec.response_text,
            bbox: rec.bbox,
        };
        validate_sample(&sample, &manifest.audio)?;
        samples.push(sample);
    }
    let hash = hex::encode(h.finalize());
    if hash != manifest.content_hash {
        return Err(DataError::Manifest {
            path: dir.join(MANIFEST_FILE),
            message: format!(
                "content hash {hash} does not match recorded {}",
                manifest.content_hash
            ),
        });
    }
    if samples.len() != manifest.n_samples {
        return Err(DataError::Manifest {
            path: dir.join(MANIFEST_FILE),
            message: format!(
                "manifest lists {} samples, found {}",
                manifest.n_samples,
                samples.len()
            ),
        });
    }
    Ok(Dataset { manifest, samples })
}

/// Checks the per-sample invariants.
pub fn validate_sample(s: &Sample, audio: &AudioSettings) -> Result<(), DataError> {
    let bad = |message: String| DataError::InvalidSample {
        id: s.id.clone(),
        message,
    };
    let (w, h) = s.image_size;
    if (s.image.width(), s.image.height()) != (w as usize, h as usize) {
        return Err(bad(format!(
            "image is {}x{}, record says {w}x{h}",
            s.image.width(),
            s.image.height()
        )));
    }
    if let Some(b) = s.bbox {
        if !b.fits_in(w, h) {
            return Err(bad(format!("box {b} outside {w}x{h} image")));
        }
        if !s.response_text.contains(&b.to_string()) {
            return Err(bad(format!("response does not contain box {b}")));
        }
    }
    let expected = (s.instruction_text.chars().count() * audio.frames_per_char.max(1)).min(MAX_AUDIO_FRAMES);
    if s.audio_features.len() != expected || s.audio_features.width() != audio.d_audio {
        return Err(bad(format!(
            "audio is {}x{}, expected {expected}x{}",
            s.audio_features.len(),
            s.audio_features.width(),
            audio.d_audio
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::parse_bbox;

    fn small() -> Dataset {
        generate_dataset(&DatasetConfig::new(12, 3, 8)).unwrap()
    }

    #[test]
    fn generation_is_reproducible() {
        assert_eq!(small(), small());
    }

    #[test]
    fn every_sample_is_valid_and_box_parses_back() {
        let d = small();
        for s in &d.samples {
            validate_sample(s, &d.manifest.audio).unwrap();
            assert_eq!(parse_bbox(&s.response_text), s.bbox);
        }
    }

    #[test]
    fn types_cycle_round_robin() {
        let d = small();
        let types: Vec<_> = d.samples.iter().take(3).map(|s| s.instruction_type).collect();
        assert_eq!(types, InstructionType::ALL.to_vec());
    }

    #[test]
    fn zero_samples_is_an_error() {
        assert!(matches!(
            generate_dataset(&DatasetConfig::new(0, 1, 8)),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn png_round_trip() {
        let d = small();
        let img = &d.samples[0].image;
        assert_eq!(&decode_png(&encode_png(img).unwrap()).unwrap(), img);
    }
}
