//! Dataset ingestion (IDX parser, synthetic generator) and adversarial-batch
//! persistence.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const ADV_MAGIC: &[u8; 4] = b"GADV";
const ADV_VERSION: u32 = 1;

/// Images with labels. Every image is a `1 x H x W` tensor in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        for (i, label) in self.labels.iter().enumerate() {
            if *label >= self.num_classes {
                return Err(Error::Data(format!(
                    "label {} at index {} exceeds class count {}",
                    label, i, self.num_classes
                )));
            }
        }
        for (i, image) in self.images.iter().enumerate() {
            if !image.in_range(0.0, 1.0) {
                return Err(Error::Data(format!("image {} has pixels outside [0, 1]", i)));
            }
        }
        Ok(())
    }

    /// Borrow a contiguous slice of examples.
    pub fn slice(&self, start: usize, len: usize) -> (&[Tensor], &[usize]) {
        let end = (start + len).min(self.images.len());
        let start = start.min(end);
        (&self.images[start..end], &self.labels[start..end])
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Reader<'a> {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after end of data",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parse an IDX image/label file pair into a dataset. Pixels are divided by
/// 255 into `[0, 1]` and shapes promoted to `1 x H x W`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut r = Reader::new(&image_bytes);
    let magic = r.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image header dimensions overflow".into()))?;
    let pixels = r.take(need)?;
    r.finish()?;

    let mut r = Reader::new(&label_bytes);
    let magic = r.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let label_count = r.u32_be()? as usize;
    if label_count != count {
        return Err(Error::Data(format!(
            "image file has {count} items but label file has {label_count}"
        )));
    }
    let raw_labels = r.take(label_count)?;
    r.finish()?;

    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * rows * cols;
        let data: Vec<f64> = pixels[start..start + rows * cols]
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .collect();
        images.push(Tensor::from_vec(&[1, rows, cols], data)?);
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);

    let dataset = LabeledDataset {
        images,
        labels,
        num_classes,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset as an IDX image/label pair (inverse of [`load_idx`]).
/// Pixels are quantized to `round(v * 255)`.
pub fn save_idx(dataset: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut image_bytes = Vec::new();
    image_bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    let count = dataset.images.len() as u32;
    image_bytes.extend_from_slice(&count.to_be_bytes());
    let (rows, cols) = match dataset.images.first() {
        Some(t) => (t.shape()[1], t.shape()[2]),
        None => (0, 0),
    };
    image_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for image in &dataset.images {
        for &v in image.data() {
            image_bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }

    let mut label_bytes = Vec::new();
    label_bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&count.to_be_bytes());
    for &label in &dataset.labels {
        label_bytes.push(label as u8);
    }

    fs::write(images_path, image_bytes)?;
    fs::write(labels_path, label_bytes)?;
    Ok(())
}

// Blob geometry for the synthetic corpus: class centers sit on a circle of
// this radius (fraction of the side), blobs have this standard deviation
// (fraction of the side) and amplitudes jitter uniformly in the given range.
const BLOB_RING_RADIUS: f64 = 0.30;
const BLOB_SIGMA: f64 = 0.11;
const BLOB_AMPLITUDE: (f64, f64) = (0.55, 0.95);
const BLOB_NOISE_SIGMA: f64 = 0.05;

/// Synthetic classification corpus: class `k` is a Gaussian intensity blob
/// at a class-specific fixed location on a square canvas, with per-sample
/// amplitude jitter and pixel noise, clamped to `[0, 1]`. Deterministic per
/// seed. Examples are interleaved by class (0, 1, ..., K-1, 0, 1, ...).
pub fn synthetic_blobs(per_class: usize, num_classes: usize, side: usize, seed: u64) -> LabeledDataset {
    assert!(num_classes >= 2, "need at least two classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626c_6f62 /* "blob" */);
    let noise = Normal::new(0.0, BLOB_NOISE_SIGMA).unwrap();
    let centers: Vec<(f64, f64)> = (0..num_classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
            let r = BLOB_RING_RADIUS * side as f64;
            let mid = (side as f64 - 1.0) / 2.0;
            (mid + r * angle.sin(), mid + r * angle.cos())
        })
        .collect();

    let blob_sigma = BLOB_SIGMA * side as f64;
    let mut images = Vec::with_capacity(per_class * num_classes);
    let mut labels = Vec::with_capacity(per_class * num_classes);
    for _ in 0..per_class {
        for (k, &(cy, cx)) in centers.iter().enumerate() {
            let amplitude = rng.random_range(BLOB_AMPLITUDE.0..BLOB_AMPLITUDE.1);
            let mut data = Vec::with_capacity(side * side);
            for i in 0..side {
                for j in 0..side {
                    let dy = i as f64 - cy;
                    let dx = j as f64 - cx;
                    let v = amplitude
                        * (-(dy * dy + dx * dx) / (2.0 * blob_sigma * blob_sigma)).exp()
                        + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
            images.push(Tensor::from_vec(&[1, side, side], data).unwrap());
            labels.push(k);
        }
    }
    LabeledDataset {
        images,
        labels,
        num_classes,
    }
}

/// A persisted batch of adversarial examples with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvBatch {
    /// Fingerprint of the attack configuration that produced the batch.
    pub fingerprint: u64,
    /// Seed the generator ran with.
    pub seed: u64,
    /// Index of each example in the source dataset.
    pub indices: Vec<u64>,
    pub tensors: Vec<Tensor>,
}

/// Serialize an adversarial batch. Format: magic "GADV", version u32 LE,
/// config fingerprint u64 LE, generator seed u64 LE, count u64 LE, then per
/// example: original index u64 LE, rank u32 LE, dims u64 LE each, payload
/// f64 LE.
pub fn save_adv_batch(batch: &AdvBatch, path: &Path) -> Result<()> {
    if batch.indices.len() != batch.tensors.len() {
        return Err(Error::Data(format!(
            "{} indices but {} tensors",
            batch.indices.len(),
            batch.tensors.len()
        )));
    }
    let mut bytes = Vec::new();
    bytes.extend_from_slice(ADV_MAGIC);
    bytes.extend_from_slice(&ADV_VERSION.to_le_bytes());
    bytes.extend_from_slice(&batch.fingerprint.to_le_bytes());
    bytes.extend_from_slice(&batch.seed.to_le_bytes());
    bytes.extend_from_slice(&(batch.tensors.len() as u64).to_le_bytes());
    for (index, tensor) in batch.indices.iter().zip(&batch.tensors) {
        bytes.extend_from_slice(&index.to_le_bytes());
        bytes.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            bytes.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Load an adversarial batch. When `expected_fingerprint` is given, a file
/// whose stored fingerprint differs fails with a drift error.
pub fn load_adv_batch(path: &Path, expected_fingerprint: Option<u64>) -> Result<AdvBatch> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let magic = r.take(4)?;
    if magic != ADV_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, ADV_MAGIC
        )));
    }
    let version = r.u32_le()?;
    if version != ADV_VERSION {
        return Err(Error::Version {
            found: version,
            expected: ADV_VERSION,
        });
    }
    let fingerprint = r.u64_le()?;
    if let Some(expected) = expected_fingerprint {
        if fingerprint != expected {
            return Err(Error::ConfigDrift {
                expected,
                found: fingerprint,
            });
        }
    }
    let seed = r.u64_le()?;
    let count = r.u64_le()? as usize;
    // capacities come from untrusted headers; truncation errors fire before
    // any oversized allocation could
    let mut indices = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        indices.push(r.u64_le()?);
        let rank = r.u32_le()? as usize;
        let mut shape = Vec::new();
        for _ in 0..rank {
            shape.push(r.u64_le()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
        let payload_len = numel
            .checked_mul(8)
            .ok_or_else(|| Error::Format("tensor payload overflows".into()))?;
        let payload = r.take(payload_len)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    r.finish()?;
    Ok(AdvBatch {
        fingerprint,
        seed,
        indices,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Byte-level IDX writer independent of `save_idx`.
    fn write_idx_pair(dir: &Path, pixels: &[Vec<u8>], labels: &[u8], rows: u32, cols: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        for p in pixels {
            img.extend_from_slice(p);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        let ip = dir.join("images-idx3-ubyte");
        let lp = dir.join("labels-idx1-ubyte");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_round_trip_exact_pixels() {
        let dir = tempdir().unwrap();
        let pixels = vec![
            vec![0u8, 51, 102, 153, 204, 255, 10, 20, 30],
            vec![255u8, 0, 128, 64, 32, 16, 8, 4, 2],
        ];
        let (ip, lp) = write_idx_pair(dir.path(), &pixels, &[1, 0], 3, 3);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.images[0].shape(), &[1, 3, 3]);
        for (img, raw) in ds.images.iter().zip(&pixels) {
            for (&v, &p) in img.data().iter().zip(raw) {
                assert_eq!(v, f64::from(p) / 255.0);
            }
        }
        assert_eq!(ds.labels, vec![1, 0]);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[vec![0u8; 9]], &[0], 3, 3);
        let mut bytes = fs::read(&ip).unwrap();
        bytes[3] = 0x02; // 0x00000802
        fs::write(&ip, &bytes).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        assert!(err.to_string().contains("0x00000802"));
    }

    #[test]
    fn idx_rejects_count_mismatch() {
        let dir = tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[vec![0u8; 9], vec![0u8; 9]], &[0], 3, 3);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn idx_rejects_single_byte_truncation_at_every_offset() {
        let dir = tempdir().unwrap();
        let (ip, lp) = write_idx_pair(
            dir.path(),
            &[vec![7u8; 9], vec![9u8; 9]],
            &[0, 1],
            3,
            3,
        );
        let full_img = fs::read(&ip).unwrap();
        let full_lab = fs::read(&lp).unwrap();

        let tip = dir.path().join("trunc-images");
        for cut in 0..full_img.len() {
            fs::write(&tip, &full_img[..cut]).unwrap();
            assert!(load_idx(&tip, &lp).is_err(), "image file cut at {cut} accepted");
        }
        let tlp = dir.path().join("trunc-labels");
        for cut in 0..full_lab.len() {
            fs::write(&tlp, &full_lab[..cut]).unwrap();
            assert!(load_idx(&ip, &tlp).is_err(), "label file cut at {cut} accepted");
        }
        // the untouched pair still loads
        assert!(load_idx(&ip, &lp).is_ok());
    }

    #[test]
    fn save_idx_then_load_idx_round_trips_quantized() {
        let dir = tempdir().unwrap();
        let ds = synthetic_blobs(3, 2, 8, 11);
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        save_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.images.iter().zip(&ds.images) {
            assert!(a.linf_distance(b).unwrap() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn synthetic_blobs_deterministic_and_in_range() {
        let a = synthetic_blobs(10, 3, 12, 42);
        let b = synthetic_blobs(10, 3, 12, 42);
        assert_eq!(a.len(), 30);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert!(x.bits_eq(y));
        }
        assert_eq!(a.labels, b.labels);
        for image in &a.images {
            assert!(image.in_range(0.0, 1.0));
        }
        a.validate().unwrap();
        let c = synthetic_blobs(10, 3, 12, 43);
        assert!(!a.images[0].bits_eq(&c.images[0]));
    }

    #[test]
    fn adv_batch_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let batch = AdvBatch {
            fingerprint: 0xdead_beef_cafe_f00d,
            seed: 7,
            indices: vec![3, 1, 4],
            tensors: vec![
                Tensor::from_vec(&[1, 2, 2], vec![0.0, 0.25, -0.5, 1.0]).unwrap(),
                Tensor::from_vec(&[1, 2, 2], vec![f64::MIN_POSITIVE, 1e300, 0.1, 0.9]).unwrap(),
                Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            ],
        };
        let path = dir.path().join("batch.gadv");
        save_adv_batch(&batch, &path).unwrap();
        let back = load_adv_batch(&path, Some(batch.fingerprint)).unwrap();
        assert_eq!(back.indices, batch.indices);
        assert_eq!(back.seed, batch.seed);
        for (a, b) in back.tensors.iter().zip(&batch.tensors) {
            assert!(a.bits_eq(b));
        }
    }

    #[test]
    fn adv_batch_detects_fingerprint_drift() {
        let dir = tempdir().unwrap();
        let batch = AdvBatch {
            fingerprint: 10,
            seed: 0,
            indices: vec![0],
            tensors: vec![Tensor::zeros(&[2])],
        };
        let path = dir.path().join("batch.gadv");
        save_adv_batch(&batch, &path).unwrap();

        // load with a different expected config
        let err = load_adv_batch(&path, Some(11)).unwrap_err();
        assert!(matches!(err, Error::ConfigDrift { .. }), "{err}");

        // tamper with the stored fingerprint on disk
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let err = load_adv_batch(&path, Some(10)).unwrap_err();
        assert!(matches!(err, Error::ConfigDrift { .. }), "{err}");
    }

    #[test]
    fn adv_batch_empty_is_valid() {
        let dir = tempdir().unwrap();
        let batch = AdvBatch {
            fingerprint: 1,
            seed: 2,
            indices: vec![],
            tensors: vec![],
        };
        let path = dir.path().join("empty.gadv");
        save_adv_batch(&batch, &path).unwrap();
        let back = load_adv_batch(&path, None).unwrap();
        assert_eq!(back.tensors.len(), 0);
        assert_eq!(back.fingerprint, 1);
    }
}
