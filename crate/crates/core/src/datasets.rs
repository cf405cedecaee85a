//! Image classification datasets: the 4×4 Tetris task and IDX files.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{bail, Error, Result};
use crate::rng::SeedStream;

/// Images stored as one contiguous `[n, c, h, w]` buffer in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub name: String,
    /// `[c, h, w]` of a single image.
    pub image_shape: [usize; 3],
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

/// Train/test halves of a base dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: ImageDataset,
    pub test: ImageDataset,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let l = self.image_len();
        &self.images[i * l..(i + 1) * l]
    }

    /// Shape of a batch of `n` images.
    pub fn batch_shape(&self, n: usize) -> [usize; 4] {
        let [c, h, w] = self.image_shape;
        [n, c, h, w]
    }

    /// Gathers the images and labels at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.image_len());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.image(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn subset(&self, indices: &[usize], name: &str) -> ImageDataset {
        let (images, labels) = self.batch(indices);
        ImageDataset {
            name: name.to_string(),
            image_shape: self.image_shape,
            images,
            labels,
            class_count: self.class_count,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// SHA-256 over shape, labels and pixel bits, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.image_shape {
            h.update((d as u64).to_le_bytes());
        }
        h.update((self.class_count as u64).to_le_bytes());
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for &p in &self.images {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Cells `(row, col)` of the four tetrominoes: L, T, S, I.
pub const TETROMINOES: [[(usize, usize); 4]; 4] = [
    [(0, 0), (1, 0), (2, 0), (2, 1)],
    [(0, 0), (0, 1), (0, 2), (1, 1)],
    [(0, 1), (0, 2), (1, 0), (1, 1)],
    [(0, 0), (0, 1), (0, 2), (0, 3)],
];

pub const TETRIS_SIDE: usize = 4;

/// All translations of `shape` that keep it inside the grid.
fn placements(shape: &[(usize, usize); 4]) -> Vec<(usize, usize)> {
    let h = shape.iter().map(|c| c.0).max().unwrap() + 1;
    let w = shape.iter().map(|c| c.1).max().unwrap() + 1;
    (0..=TETRIS_SIDE - h)
        .flat_map(|r| (0..=TETRIS_SIDE - w).map(move |c| (r, c)))
        .collect()
}

/// Tetris shapes at uniformly random valid positions plus clamped noise.
pub fn generate_tetris(seed: u64, samples_per_class: usize, noise_std: f64) -> Result<ImageDataset> {
    if samples_per_class == 0 {
        bail!(Config, "samples_per_class must be at least 1");
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        bail!(Config, "noise_std must be finite and non-negative, got {noise_std}");
    }
    let stream = SeedStream::new(seed);
    let px = TETRIS_SIDE * TETRIS_SIDE;
    let mut images = Vec::with_capacity(4 * samples_per_class * px);
    let mut labels = Vec::with_capacity(4 * samples_per_class);
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    for (class, shape) in TETROMINOES.iter().enumerate() {
        let spots = placements(shape);
        let mut rng = stream.rng_for(&[class as u64]);
        for _ in 0..samples_per_class {
            let &(dr, dc) = spots.choose(&mut rng).expect("every shape fits");
            let mut img = vec![0f32; px];
            for &(r, c) in shape {
                img[(r + dr) * TETRIS_SIDE + c + dc] = 1.0;
            }
            if noise_std > 0.0 {
                for p in img.iter_mut() {
                    *p = (*p as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
            images.extend(img);
            labels.push(class);
        }
    }
    Ok(ImageDataset {
        name: "tetris".into(),
        image_shape: [1, TETRIS_SIDE, TETRIS_SIDE],
        images,
        labels,
        class_count: 4,
    })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().unwrap())),
        None => Err(Error::Length {
            expected: at + 4,
            found: bytes.len(),
        }),
    }
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let got = read_u32(bytes, 0)?;
    if got != want {
        bail!(Format, "{what}: magic {got:#010x}, expected {want:#010x}");
    }
    Ok(())
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx_bytes(images: &[u8], labels: &[u8]) -> Result<ImageDataset> {
    check_magic(images, IDX_IMAGES, "image file")?;
    check_magic(labels, IDX_LABELS, "label file")?;
    let n = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let nl = read_u32(labels, 4)? as usize;
    if n != nl {
        bail!(Consistency, "{n} images but {nl} labels");
    }
    let px = rows * cols;
    let body = &images[16..];
    if body.len() < n * px {
        return Err(Error::Length {
            expected: 16 + n * px,
            found: images.len(),
        });
    }
    let lbody = &labels[8..];
    if lbody.len() < n {
        return Err(Error::Length {
            expected: 8 + n,
            found: labels.len(),
        });
    }
    let labels: Vec<usize> = lbody[..n].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Ok(ImageDataset {
        name: "idx".into(),
        image_shape: [1, rows, cols],
        images: body[..n * px].iter().map(|&b| b as f32 / 255.0).collect(),
        labels,
        class_count,
    })
}

/// Reads an IDX image/label file pair (e.g. MNIST).
pub fn parse_idx(image_path: &Path, label_path: &Path) -> Result<ImageDataset> {
    let imgs = std::fs::read(image_path).map_err(|e| Error::storage(image_path, e))?;
    let lbls = std::fs::read(label_path).map_err(|e| Error::storage(label_path, e))?;
    parse_idx_bytes(&imgs, &lbls)
}

/// Serializes a single-channel dataset back to IDX bytes `(images, labels)`.
pub fn encode_idx(d: &ImageDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, h, w] = d.image_shape;
    if c != 1 {
        bail!(Format, "IDX images are single channel, dataset has {c}");
    }
    let mut img = Vec::with_capacity(16 + d.images.len());
    img.extend(IDX_IMAGES.to_be_bytes());
    for v in [d.len(), h, w] {
        img.extend((v as u32).to_be_bytes());
    }
    img.extend(d.images.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lbl = Vec::with_capacity(8 + d.len());
    lbl.extend(IDX_LABELS.to_be_bytes());
    lbl.extend((d.len() as u32).to_be_bytes());
    for &l in &d.labels {
        if l > 255 {
            bail!(Format, "label {l} does not fit in a byte");
        }
        lbl.push(l as u8);
    }
    Ok((img, lbl))
}

/// Stratified shuffle split. Train size is `round(fraction * n)`, spread
/// across classes by largest remainder.
pub fn split_dataset(d: &ImageDataset, train_fraction: f64, seed: u64) -> Result<DataSplit> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        bail!(Config, "train fraction {train_fraction} must lie in (0, 1]");
    }
    let stream = SeedStream::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.class_count];
    for (i, &l) in d.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut stream.rng_for(&[c as u64]));
    }
    let total = (train_fraction * d.len() as f64).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|v| v.len() as f64 * train_fraction).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..d.class_count).collect();
    order.shuffle(&mut stream.rng_for(&[u64::MAX]));
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut short = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if short == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            short -= 1;
        }
    }
    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(d.len() - total);
    for (idx, &t) in by_class.iter().zip(&take) {
        train.extend_from_slice(&idx[..t]);
        test.extend_from_slice(&idx[t..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train_fraction == 1.0 {
        train = (0..d.len()).collect();
        test.clear();
    }
    Ok(DataSplit {
        train: d.subset(&train, &format!("{}-train", d.name)),
        test: d.subset(&test, &format!("{}-test", d.name)),
    })
}

/// Base-dataset parameters recorded in a zoo manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetrisSpec {
    pub seed: u64,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub train_split: f64,
}

impl Default for TetrisSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            samples_per_class: 200,
            noise_std: 0.1,
            train_split: 0.7,
        }
    }
}

impl TetrisSpec {
    pub fn build(&self) -> Result<DataSplit> {
        let d = generate_tetris(self.seed, self.samples_per_class, self.noise_std)?;
        split_dataset(&d, self.train_split, self.seed.wrapping_add(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_tetris_has_four_lit_pixels() {
        let d = generate_tetris(3, 20, 0.0).unwrap();
        assert_eq!(d.class_count, 4);
        assert_eq!(d.len(), 80);
        for i in 0..d.len() {
            assert_eq!(d.image(i).iter().filter(|&&p| p == 1.0).count(), 4);
            assert_eq!(d.image(i).iter().filter(|&&p| p == 0.0).count(), 12);
        }
    }

    #[test]
    fn tetris_is_deterministic() {
        let a = generate_tetris(7, 10, 0.1).unwrap();
        let b = generate_tetris(7, 10, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_tetris(8, 10, 0.1).unwrap());
        assert!(a.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn shapes_are_translated() {
        let d = generate_tetris(1, 200, 0.0).unwrap();
        let distinct: std::collections::HashSet<Vec<u32>> = (0..200)
            .map(|i| d.image(i).iter().map(|p| p.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), placements(&TETROMINOES[0]).len());
    }

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        img.extend((0..2 * 784).map(|i| (i % 256) as u8));
        let lbl = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 9];
        (img, lbl)
    }

    #[test]
    fn idx_fixture_parses() {
        let (img, lbl) = fixture();
        let d = parse_idx_bytes(&img, &lbl).unwrap();
        assert_eq!(d.batch_shape(d.len()), [2, 1, 28, 28]);
        assert_eq!(d.labels, vec![3, 9]);
        assert_eq!(d.image(0)[255], 1.0);
        let (img2, lbl2) = encode_idx(&d).unwrap();
        assert_eq!((img2, lbl2), (img, lbl));
    }

    #[test]
    fn idx_errors() {
        let (img, lbl) = fixture();
        assert!(matches!(parse_idx_bytes(&lbl, &lbl), Err(Error::Format(_))));
        assert!(matches!(parse_idx_bytes(&[], &lbl), Err(Error::Length { .. })));
        assert!(matches!(parse_idx_bytes(&img[..100], &lbl), Err(Error::Length { .. })));
        let mut short = lbl.clone();
        short[7] = 3;
        assert!(matches!(parse_idx_bytes(&img, &short), Err(Error::Consistency(_))));
    }

    #[test]
    fn stratified_half_split() {
        let d = generate_tetris(2, 25, 0.0).unwrap();
        let s = split_dataset(&d, 0.5, 11).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (50, 50));
        for counts in [s.train.class_counts(), s.test.class_counts()] {
            assert!(counts.iter().all(|&c| c == 12 || c == 13), "{counts:?}");
        }
        assert_eq!(s, split_dataset(&d, 0.5, 11).unwrap());
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let d = generate_tetris(2, 5, 0.1).unwrap();
        let s = split_dataset(&d, 1.0, 0).unwrap();
        assert_eq!(s.train.images, d.images);
        assert!(s.test.is_empty());
        assert!(matches!(split_dataset(&d, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(split_dataset(&d, 1.5, 0), Err(Error::Config(_))));
    }
}
