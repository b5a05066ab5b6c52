//! Dataset ingestion: IDX (big-endian headers) and CIFAR-10 binary (3073-byte
//! records) readers, per-channel normalization, seeded batching, and a
//! self-contained synthetic digit generator for environments without the
//! canonical files. Lo
//! aders are bit-exact: bytes on disk round-trip unchanged into memory.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;

/// Raw u8 image set plus labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// (n, c, h, w) row-major pixel bytes.
    pub images: Vec<u8>,
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub n_cls: usize,
    pub name: String,
    pub split: String,
}

impl Dataset {
    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.channels * self.height * self.width;
        &self.images[i * sz..(i + 1) * sz]
    }

    /// FNV-1a64 over pixels and labels; loaders being bit-exact means this is
    /// stable across reloads.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &b in self.images.iter().chain(&self.labels) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("truncated file: cannot read {field}")))
}

/// Read an IDX image/label file pair (the MNIST container format).
pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<Dataset> {
    let img = read_file(path_images)?;
    let lab = read_file(path_labels)?;

    let magic_i = be_u32(&img, 0, "image magic")?;
    if magic_i != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic_i:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n_img = be_u32(&img, 4, "image count")? as usize;
    let h = be_u32(&img, 8, "image rows")? as usize;
    let w = be_u32(&img, 12, "image cols")? as usize;
    let expected = 16 + n_img * h * w;
    if img.len() != expected {
        return Err(Error::Format(format!(
            "image payload length {} does not match header ({n_img} x {h} x {w})",
            img.len() - 16.min(img.len())
        )));
    }

    let magic_l = be_u32(&lab, 0, "label magic")?;
    if magic_l != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic_l:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_lab = be_u32(&lab, 4, "label count")? as usize;
    if lab.len() != 8 + n_lab {
        return Err(Error::Format("label payload length does not match header count".into()));
    }
    if n_img != n_lab {
        return Err(Error::Format(format!(
            "image count {n_img} does not match label count {n_lab}"
        )));
    }

    let labels = lab[8..].to_vec();
    let n_cls = labels.iter().copied().max().map(|m| m as usize + 1).unwrap_or(0);
    Ok(Dataset {
        images: img[16..].to_vec(),
        n: n_img,
        channels: 1,
        height: h,
        width: w,
        labels,
        n_cls: n_cls.max(2),
        name: "idx".into(),
        split: String::new(),
    })
}

/// Write a dataset as an IDX pair; the inverse of [`load_idx`], byte for byte.
pub fn write_idx(ds: &Dataset, path_images: &Path, path_labels: &Path) -> Result<()> {
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.n as u32).to_be_bytes());
    img.extend_from_slice(&(ds.height as u32).to_be_bytes());
    img.extend_from_slice(&(ds.width as u32).to_be_bytes());
    img.extend_from_slice(&ds.images);
    fs::write(path_images, img).map_err(|e| Error::io(path_images.display().to_string(), e))?;

    let mut lab = Vec::with_capacity(8 + ds.labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.n as u32).to_be_bytes());
    lab.extend_from_slice(&ds.labels);
    fs::write(path_labels, lab).map_err(|e| Error::io(path_labels.display().to_string(), e))
}

/// Read the CIFAR-10 binary layout: five training batch files plus one test
/// file of 3073-byte records (1 label byte + 3072 channel-major pixels).
pub fn load_cifar_binary(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = cifar_files(
        dir,
        &(1..=5).map(|i| format!("data_batch_{i}.bin")).collect::<Vec<_>>(),
        "train",
    )?;
    let test = cifar_files(dir, &["test_batch.bin".to_string()], "test")?;
    train.name = "cifar10".into();
    Ok((train, test))
}

fn cifar_files(dir: &Path, names: &[String], split: &str) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path: PathBuf = dir.join(name);
        let bytes = read_file(&path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{name}: length {} is not a positive multiple of {CIFAR_RECORD}-byte records",
                bytes.len()
            )));
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            let label = rec[0];
            if label >= 10 {
                return Err(Error::Format(format!("{name}: label byte {label} >= 10")));
            }
            labels.push(label);
            images.extend_from_slice(&rec[1..]);
        }
    }
    Ok(Dataset {
        n: labels.len(),
        images,
        channels: 3,
        height: 32,
        width: 32,
        labels,
        n_cls: 10,
        name: "cifar10".into(),
        split: split.into(),
    })
}

/// Per-channel normalization constants applied after the /255 rescale.
#[derive(Debug, Clone, PartialEq)]
pub struct NormConstants {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormConstants {
    pub fn mnist() -> Self {
        NormConstants { name: "mnist".into(), mean: vec![0.1307], std: vec![0.3081] }
    }

    /// CIFAR-10 training-set statistics.
    pub fn cifar10() -> Self {
        NormConstants {
            name: "cifar10".into(),
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }

    pub fn describe(&self) -> String {
        format!("{} normalization: mean {:?}, std {:?}", self.name, self.mean, self.std)
    }
}

/// u8 image batch → float tensor: x/255 then per-channel (x − μ)/σ.
pub fn normalize_batch<T: Scalar>(
    images: &[u8],
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    norm: &NormConstants,
) -> Result<Tensor<T>> {
    if norm.mean.len() != channels || norm.std.len() != channels {
        return Err(Error::Config(format!(
            "{} normalization constants for {channels} channels",
            norm.mean.len()
        )));
    }
    if images.len() != batch * channels * h * w {
        return Err(Error::dim(format!(
            "batch byte count {} does not match {batch}x{channels}x{h}x{w}",
            images.len()
        )));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(images.len());
    for b in 0..batch {
        for c in 0..channels {
            let inv_std = 1.0 / norm.std[c];
            let mean = norm.mean[c];
            let src = &images[(b * channels + c) * plane..(b * channels + c + 1) * plane];
            data.extend(src.iter().map(|&px| T::from_f64((px as f64 / 255.0 - mean) * inv_std)));
        }
    }
    Tensor::new(vec![batch, channels, h, w], data)
}

/// Shuffled batching plan: every epoch's order is a pure function of
/// (seed, epoch), and the optional subset is the first `k` indices of a
/// seeded shuffle that does not depend on the epoch (so smaller subsets are
/// prefixes of larger ones).
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub subset: Option<usize>,
}

impl BatchPlan {
    pub fn subset_indices(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        Stream::derive(self.seed, "subset", &[]).shuffle(&mut order);
        match self.subset {
            Some(k) if k < n => order.truncate(k),
            _ => {}
        }
        order
    }

    /// Index order for one epoch over the (possibly subset) dataset.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut idx = self.subset_indices(n);
        Stream::derive(self.seed, "shuffle", &[epoch as u64]).shuffle(&mut idx);
        idx
    }

    /// Deterministic evaluation order (subset without shuffling).
    pub fn eval_order(&self, n: usize) -> Vec<usize> {
        let mut idx = self.subset_indices(n);
        idx.sort_unstable();
        idx
    }
}

/// Gather a batch of images/labels by index.
pub fn gather(ds: &Dataset, indices: &[usize]) -> (Vec<u8>, Vec<usize>) {
    let sz = ds.channels * ds.height * ds.width;
    let mut images = Vec::with_capacity(indices.len() * sz);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        images.extend_from_slice(ds.image(i));
        labels.push(ds.labels[i] as usize);
    }
    (images, labels)
}

// ---------------------------------------------------------------------------
// synthetic digits
// ---------------------------------------------------------------------------

/// 5x7 digit glyphs, row-major bits.
const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

fn glyph_at(digit: usize, gx: f64, gy: f64) -> f64 {
    // bilinear sample of the 5x7 bitmap, zero outside
    let sample = |ix: isize, iy: isize| -> f64 {
        if !(0..5).contains(&ix) || !(0..7).contains(&iy) {
            return 0.0;
        }
        let row = GLYPHS[digit][iy as usize];
        if (row >> (4 - ix)) & 1 == 1 {
            1.0
        } else {
            0.0
        }
    };
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let top = sample(x0, y0) * (1.0 - fx) + sample(x0 + 1, y0) * fx;
    let bot = sample(x0, y0 + 1) * (1.0 - fx) + sample(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Deterministic digit images: each sample renders a glyph under a random
/// rotation, scale, and shift, with intensity jitter and additive noise.
/// Written in MNIST's container format, learnable but not trivial.
pub fn synth_digits(n: usize, seed: u64, split: &str) -> Dataset {
    let salt = match split {
        "train" => 0u64,
        _ => 1u64,
    };
    let (h, w) = (28usize, 28usize);
    let mut images = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = Stream::derive(seed, "synth", &[salt, i as u64]);
        let digit = s.next_below(10) as usize;
        labels.push(digit as u8);

        let angle = s.uniform(-0.35, 0.35);
        let scale = s.uniform(2.4, 3.4);
        let dx = s.uniform(-2.5, 2.5);
        let dy = s.uniform(-2.5, 2.5);
        let gain = s.uniform(0.65, 1.0);
        let (sin, cos) = angle.sin_cos();
        let (cx, cy) = (w as f64 / 2.0 + dx, h as f64 / 2.0 + dy);

        for y in 0..h {
            for x in 0..w {
                // inverse-map the output pixel into glyph space
                let rx = (x as f64 - cx) / scale;
                let ry = (y as f64 - cy) / scale;
                let gx = cos * rx + sin * ry + 2.0;
                let gy = -sin * rx + cos * ry + 3.0;
                let v = glyph_at(digit, gx, gy) * gain;
                let noise = s.next_gaussian() * 0.05;
                let px = ((v + noise).clamp(0.0, 1.0) * 255.0).round() as u8;
                images.push(px);
            }
        }
    }
    Dataset {
        images,
        n,
        channels: 1,
        height: h,
        width: w,
        labels,
        n_cls: 10,
        name: "synth-digits".into(),
        split: split.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn idx_roundtrip_is_bit_exact() {
        let ds = synth_digits(20, 42, "train");
        let dir = tmpdir();
        let ip = dir.path().join("train-images-idx3-ubyte");
        let lp = dir.path().join("train-labels-idx1-ubyte");
        write_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.images, ds.images);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.n, 20);
        assert_eq!((back.height, back.width), (28, 28));
        assert_eq!(back.content_hash(), load_idx(&ip, &lp).unwrap().content_hash());
    }

    #[test]
    fn idx_bad_magic_and_count_mismatch() {
        let ds = synth_digits(4, 1, "train");
        let dir = tmpdir();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        write_idx(&ds, &ip, &lp).unwrap();

        // corrupt the image magic
        let mut img = fs::read(&ip).unwrap();
        img[3] = 0x99;
        fs::write(&ip, &img).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("image magic"), "{err}");

        // restore, then shrink the label count header
        write_idx(&ds, &ip, &lp).unwrap();
        let mut lab = fs::read(&lp).unwrap();
        lab[7] = 3; // claims 3 labels, file has 4
        lab.truncate(8 + 3);
        fs::write(&lp, &lab).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");
    }

    #[test]
    fn idx_empty_file_is_a_format_error() {
        let dir = tmpdir();
        let ip = dir.path().join("empty_img");
        let lp = dir.path().join("empty_lab");
        fs::write(&ip, b"").unwrap();
        fs::write(&lp, b"").unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
    }

    #[test]
    fn cifar_roundtrip_and_length_checks() {
        let dir = tmpdir();
        let mut s = Stream::derive(7, "cifar-test", &[]);
        // two records per train file
        let mut all_pixels = Vec::new();
        for i in 1..=5 {
            let mut bytes = Vec::new();
            for _ in 0..2 {
                bytes.push(s.next_below(10) as u8);
                let pixels: Vec<u8> = (0..3072).map(|_| s.next_below(256) as u8).collect();
                all_pixels.extend_from_slice(&pixels);
                bytes.extend_from_slice(&pixels);
            }
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), &bytes).unwrap();
        }
        let mut test_bytes = vec![3u8];
        test_bytes.extend((0..3072).map(|_| s.next_below(256) as u8));
        fs::write(dir.path().join("test_batch.bin"), &test_bytes).unwrap();

        let (train, test) = load_cifar_binary(dir.path()).unwrap();
        assert_eq!(train.n, 10);
        assert_eq!(test.n, 1);
        assert_eq!(train.images, all_pixels, "pixel bytes round-trip unchanged");
        assert_eq!((train.channels, train.height, train.width), (3, 32, 32));

        // truncated file
        fs::write(dir.path().join("test_batch.bin"), &test_bytes[..3000]).unwrap();
        assert!(load_cifar_binary(dir.path()).is_err());

        // bad label byte
        test_bytes[0] = 10;
        fs::write(dir.path().join("test_batch.bin"), &test_bytes).unwrap();
        assert!(load_cifar_binary(dir.path()).is_err());
    }

    #[test]
    fn normalization_hand_values() {
        let norm = NormConstants::mnist();
        let t: Tensor<f64> = normalize_batch(&[0u8, 255u8], 2, 1, 1, 1, &norm).unwrap();
        assert!((t.data()[0] - (0.0 - 0.1307) / 0.3081).abs() < 1e-12);
        assert!((t.data()[1] - (1.0 - 0.1307) / 0.3081).abs() < 1e-12);
        assert!((t.data()[0] + 0.4242).abs() < 1e-3);
        assert!((t.data()[1] - 2.8215).abs() < 1e-3);
    }

    #[test]
    fn epoch_orders_are_reproducible_and_distinct() {
        let plan = BatchPlan { batch_size: 4, seed: 5, subset: None };
        assert_eq!(plan.epoch_order(100, 0), plan.epoch_order(100, 0));
        assert_ne!(plan.epoch_order(100, 0), plan.epoch_order(100, 1));
    }

    #[test]
    fn subsets_are_nested() {
        let small = BatchPlan { batch_size: 4, seed: 9, subset: Some(10) };
        let large = BatchPlan { batch_size: 4, seed: 9, subset: Some(30) };
        let s = small.subset_indices(100);
        let l = large.subset_indices(100);
        assert_eq!(s.len(), 10);
        assert_eq!(&l[..10], &s[..], "subset(k1) is a prefix of subset(k2)");
    }

    #[test]
    fn synth_digits_are_deterministic_and_labeled() {
        let a = synth_digits(16, 3, "train");
        let b = synth_digits(16, 3, "train");
        assert_eq!(a, b);
        let c = synth_digits(16, 3, "test");
        assert_ne!(a.images, c.images, "splits draw from distinct streams");
        assert!(a.labels.iter().all(|&l| l < 10));
        // images are not blank
        assert!(a.images.iter().map(|&v| v as u64).sum::<u64>() > 0);
    }
}
