//! Dataset loading: MNIST IDX files, CIFAR-10 binary batches, and a
//! seeded synthetic set for fast self-contained runs.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Xorshift64Star;
use crate::tensor::Tensor4;

/// Images in NHWC with pixel values already normalized, plus labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Vec<u8>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies records `indices` into one batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor4, Vec<u8>) {
        let [_, h, w, c] = self.images.dims();
        let record = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * record);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * record..(i + 1) * record]);
            labels.push(self.labels[i]);
        }
        let images = Tensor4::from_data([indices.len(), h, w, c], data)
            .expect("batch slicing preserves finiteness");
        (images, labels)
    }

    /// Splits off the first `n` records; the remainder forms the second
    /// set.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let first: Vec<usize> = (0..n.min(self.len())).collect();
        let rest: Vec<usize> = (n.min(self.len())..self.len()).collect();
        let (ai, al) = self.batch(&first);
        let (bi, bl) = self.batch(&rest);
        (
            Dataset { images: ai, labels: al, classes: self.classes },
            Dataset { images: bi, labels: bl, classes: self.classes },
        )
    }

    /// Keeps only the first `n` records.
    pub fn truncate(mut self, n: usize) -> Self {
        if n >= self.len() {
            return self;
        }
        let [_, h, w, c] = self.images.dims();
        let record = h * w * c;
        let data = self.images.data()[..n * record].to_vec();
        self.images = Tensor4::from_data([n, h, w, c], data).expect("prefix stays finite");
        self.labels.truncate(n);
        self
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .map_err(|e| Error::MissingDataset(format!("{}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

fn idx_header(buf: &[u8], magic: u32, path: &Path) -> Result<Vec<usize>> {
    if buf.len() < 4 {
        return Err(Error::CorruptFile(format!("{}: truncated", path.display())));
    }
    let got = u32::from_be_bytes(buf[0..4].try_into().unwrap());
    if got != magic {
        return Err(Error::CorruptFile(format!(
            "{}: magic {got:#x}, expected {magic:#x}",
            path.display()
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        dims.push(u32::from_be_bytes(buf[off..off + 4].try_into().unwrap()) as usize);
    }
    Ok(dims)
}

/// Loads the four uncompressed IDX files (`train-images-idx3-ubyte` etc.)
/// from `dir`. `train` selects the training or test split. Pixels are
/// scaled to [0, 1].
pub fn load_mnist(dir: &Path, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let images_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let ibuf = read_file(&images_path)?;
    let lbuf = read_file(&labels_path)?;
    let idims = idx_header(&ibuf, 0x0000_0803, &images_path)?;
    let ldims = idx_header(&lbuf, 0x0000_0801, &labels_path)?;
    let [n, h, w] = [idims[0], idims[1], idims[2]];
    if ldims[0] != n || ibuf.len() != 16 + n * h * w || lbuf.len() != 8 + n {
        return Err(Error::CorruptFile(format!(
            "{}: image/label sizes disagree",
            dir.display()
        )));
    }
    let data = ibuf[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Dataset {
        images: Tensor4::from_data([n, h, w, 1], data)?,
        labels: lbuf[8..].to_vec(),
        classes: 10,
    })
}

/// Loads CIFAR-10 binary batches from `dir`: the five `data_batch_N.bin`
/// files for training or `test_batch.bin` otherwise. Records are stored
/// label byte first, then 3072 pixels channel-planar; they are converted
/// to NHWC and normalized per channel.
pub fn load_cifar10(dir: &Path, train: bool) -> Result<Dataset> {
    const REC: usize = 3073;
    const MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
    const STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
    let files: Vec<_> = if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let buf = read_file(&path)?;
        if buf.len() % REC != 0 {
            return Err(Error::CorruptFile(format!(
                "{}: size {} is not a whole number of records",
                path.display(),
                buf.len()
            )));
        }
        for rec in buf.chunks_exact(REC) {
            labels.push(rec[0]);
            for y in 0..32 {
                for x in 0..32 {
                    for ch in 0..3 {
                        let v = rec[1 + ch * 1024 + y * 32 + x] as f32 / 255.0;
                        data.push((v - MEAN[ch]) / STD[ch]);
                    }
                }
            }
        }
    }
    let n = labels.len();
    Ok(Dataset {
        images: Tensor4::from_data([n, 32, 32, 3], data)?,
        labels,
        classes: 10,
    })
}

/// Deterministic synthetic classification set: each class is a fixed
/// random template; samples are the template plus Gaussian noise. Linearly
/// separable enough to train in seconds, hard enough that an untrained
/// model sits at chance.
pub fn synthetic_dataset(
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty synthetic dataset".into()));
    }
    let mut rng = Xorshift64Star::new(seed);
    let record = h * w * c;
    let templates: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..record).map(|_| rng.next_gaussian() as f32).collect())
        .collect();
    let mut data = Vec::with_capacity(n * record);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label as u8);
        for j in 0..record {
            data.push(templates[label][j] + (rng.next_gaussian() * noise) as f32);
        }
    }
    Ok(Dataset {
        images: Tensor4::from_data([n, h, w, c], data)?,
        labels,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synthetic_dataset(40, 6, 6, 2, 4, 0.3, 9).unwrap();
        let b = synthetic_dataset(40, 6, 6, 2, 4, 0.3, 9).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        for class in 0..4u8 {
            assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), 10);
        }
        let c = synthetic_dataset(40, 6, 6, 2, 4, 0.3, 10).unwrap();
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn batch_and_truncate_slice_records() {
        let d = synthetic_dataset(10, 2, 2, 1, 2, 0.1, 1).unwrap();
        let (images, labels) = d.batch(&[3, 7]);
        assert_eq!(images.dims(), [2, 2, 2, 1]);
        assert_eq!(labels, vec![d.labels[3], d.labels[7]]);
        assert_eq!(images.data()[..4], d.images.data()[12..16]);
        let t = d.truncate(4);
        assert_eq!(t.len(), 4);
        assert_eq!(t.images.dims()[0], 4);
    }

    #[test]
    fn mnist_round_trip_through_idx_files() {
        let dir = tempfile::tempdir().unwrap();
        let n = 3usize;
        let mut images = vec![];
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&(n as u32).to_be_bytes());
        images.extend_from_slice(&4u32.to_be_bytes());
        images.extend_from_slice(&4u32.to_be_bytes());
        images.extend((0..n * 16).map(|i| (i % 256) as u8));
        let mut labels = vec![];
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&(n as u32).to_be_bytes());
        labels.extend_from_slice(&[7u8, 0, 3]);
        File::create(dir.path().join("train-images-idx3-ubyte"))
            .unwrap()
            .write_all(&images)
            .unwrap();
        File::create(dir.path().join("train-labels-idx1-ubyte"))
            .unwrap()
            .write_all(&labels)
            .unwrap();
        let d = load_mnist(dir.path(), true).unwrap();
        assert_eq!(d.images.dims(), [3, 4, 4, 1]);
        assert_eq!(d.labels, vec![7, 0, 3]);
        assert!((d.images.get(0, 0, 0, 0) - 0.0).abs() < 1e-6);
        assert!((d.images.get(0, 0, 1, 0) - 1.0 / 255.0) < 1e-6);
        assert!(load_mnist(dir.path(), false).is_err());
    }

    #[test]
    fn cifar_round_trip_through_binary_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![0u8; 3073];
        rec[0] = 5;
        rec[1] = 255;
        rec[1 + 1024] = 128;
        let mut buf = rec.clone();
        rec[0] = 2;
        buf.extend_from_slice(&rec);
        File::create(dir.path().join("test_batch.bin"))
            .unwrap()
            .write_all(&buf)
            .unwrap();
        let d = load_cifar10(dir.path(), false).unwrap();
        assert_eq!(d.images.dims(), [2, 32, 32, 3]);
        assert_eq!(d.labels, vec![5, 2]);
        let r = d.images.get(0, 0, 0, 0);
        assert!((r - (1.0 - 0.4914) / 0.2470).abs() < 1e-4);
        let g = d.images.get(0, 0, 0, 1);
        assert!((g - (128.0 / 255.0 - 0.4822) / 0.2435).abs() < 1e-4);
        assert!(load_cifar10(dir.path(), true).is_err());
    }
}
