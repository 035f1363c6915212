use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::Split;
use crate::numerics::Tensor;

const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;
const TEMPLATE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Train, validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

/// Parameters of the template-plus-noise image generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub samples: usize,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 2000,
            classes: 4,
            channels: 1,
            height: 16,
            width: 16,
            noise: 1.0,
        }
    }
}

/// Fixed random class templates, uniform in `[-1, 1]`.
pub fn class_templates(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(TEMPLATE_STREAM);
    let pixels = spec.channels * spec.height * spec.width;
    (0..spec.classes)
        .map(|_| (0..pixels).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect()
}

/// Sample `i` has class `i % classes` and is its template plus Gaussian
/// noise. The first 80% of indices train, the next 10% validate, the rest test.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset, HarnessError> {
    if spec.classes < 2 {
        return Err(HarnessError::Config("synthetic data needs at least 2 classes".into()));
    }
    if spec.samples < 10 || spec.channels == 0 || spec.height == 0 || spec.width == 0 {
        return Err(HarnessError::Config("synthetic data sizes must be positive (at least 10 samples)".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(HarnessError::Config(format!("noise {} must be a finite non-negative number", spec.noise)));
    }
    let templates = class_templates(spec);
    let pixels = spec.channels * spec.height * spec.width;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(NOISE_STREAM);
    let mut data = Vec::with_capacity(spec.samples * pixels);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let c = i % spec.classes;
        labels.push(c);
        for &t in &templates[c] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(t + spec.noise * z);
        }
    }
    let shape = [spec.channels, spec.height, spec.width];
    let train_end = spec.samples * 8 / 10;
    let val_end = spec.samples * 9 / 10;
    let part = |start: usize, end: usize| -> Result<Split, HarnessError> {
        let mut s = vec![end - start];
        s.extend(shape);
        Ok(Split {
            inputs: Tensor::new(s, data[start * pixels..end * pixels].to_vec())?,
            labels: labels[start..end].to_vec(),
        })
    };
    Ok(Dataset {
        train: part(0, train_end)?,
        val: part(train_end, val_end)?,
        test: part(val_end, spec.samples)?,
    })
}

/// One CIFAR-10 record: label byte then 3072 channel-major pixel bytes.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<(Vec<u8>, Vec<[u8; CIFAR_PIXELS]>), HarnessError> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(HarnessError::Format(format!(
            "CIFAR batch of {} bytes is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(HarnessError::Format(format!("CIFAR label byte {} exceeds 9", rec[0])));
        }
        labels.push(rec[0]);
        let mut px = [0u8; CIFAR_PIXELS];
        px.copy_from_slice(&rec[1..]);
        images.push(px);
    }
    Ok((labels, images))
}

/// Inverse of [`parse_cifar_records`] for a single record.
pub fn encode_cifar_record(label: u8, pixels: &[u8; CIFAR_PIXELS]) -> Vec<u8> {
    let mut out = Vec::with_capacity(CIFAR_RECORD);
    out.push(label);
    out.extend_from_slice(pixels);
    out
}

/// Parsed batch as `[N, 3, 32, 32]` scaled to `[0, 1]`.
pub fn cifar_split(bytes: &[u8]) -> Result<Split, HarnessError> {
    let (labels, images) = parse_cifar_records(bytes)?;
    let data = images.iter().flat_map(|im| im.iter().map(|&b| b as f64 / 255.0)).collect();
    Ok(Split {
        inputs: Tensor::new(vec![labels.len(), 3, 32, 32], data)?,
        labels: labels.into_iter().map(usize::from).collect(),
    })
}

/// Reads `data_batch_1..5.bin` and `test_batch.bin` from `dir`. Validation
/// is a seeded half of the test batch; test is the other half.
pub fn load_cifar10(dir: &Path, seed: u64) -> Result<Dataset, HarnessError> {
    let mut train_bytes = Vec::new();
    for i in 1..=5 {
        train_bytes.extend(std::fs::read(dir.join(format!("data_batch_{i}.bin")))?);
    }
    let train = cifar_split(&train_bytes)?;
    let test_all = cifar_split(&std::fs::read(dir.join("test_batch.bin"))?)?;
    let mut idx: Vec<usize> = (0..test_all.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = idx.len() / 2;
    let (mut val_idx, mut test_idx) = (idx[..half].to_vec(), idx[half..].to_vec());
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Dataset {
        train,
        val: test_all.subset(&val_idx)?,
        test: test_all.subset(&test_idx)?,
    })
}
