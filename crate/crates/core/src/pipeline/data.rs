//! Paired image data: the synthetic corpus, disjoint splits, the on-disk
//! layout `root/<split>/<input|target>/<index>.png`, and watermark images.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::metrics::WatermarkKind;
use crate::pipeline::config::SplitSizes;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input images and their ground-truth targets, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset<T> {
    pub inputs: Vec<ImageArray<T>>,
    pub targets: Vec<ImageArray<T>>,
}

impl<T: Scalar> PairedDataset<T> {
    pub fn new(inputs: Vec<ImageArray<T>>, targets: Vec<ImageArray<T>>) -> Result<Self> {
        ensure(inputs.len() == targets.len(), || {
            Error::Shape(format!("{} inputs but {} targets", inputs.len(), targets.len()))
        })?;
        if let Some(first) = inputs.first() {
            ensure(inputs.iter().chain(&targets).all(|im| im.same_dims(first)), || {
                Error::Shape("images of a dataset must share dimensions".into())
            })?;
        }
        Ok(PairedDataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        PairedDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        PairedDataset {
            inputs: self.inputs[..n].to_vec(),
            targets: self.targets[..n].to_vec(),
        }
    }
}

/// Stacks the selected images into one batch tensor.
pub fn stack_indices<T: Scalar>(images: &[ImageArray<T>], indices: &[usize]) -> Result<Tensor<T>> {
    let picked: Vec<ImageArray<T>> = indices.iter().map(|&i| images[i].clone()).collect();
    ImageArray::stack(&picked)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Disk,
    Box,
    Ellipse,
}

const PALETTE: [[f64; 3]; 3] = [[0.86, 0.36, 0.27], [0.26, 0.46, 0.80], [0.90, 0.78, 0.32]];

struct Figure {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [f64; 3],
}

impl Figure {
    /// Approximate signed distance in pixels; negative inside.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Disk => (dx * dx + dy * dy).sqrt() - self.rx,
            ShapeKind::Box => (dx.abs() - self.rx).max(dy.abs() - self.ry),
            ShapeKind::Ellipse => {
                let r = ((dx / self.rx).powi(2) + (dy / self.ry).powi(2)).sqrt();
                (r - 1.0) * self.rx.min(self.ry)
            }
        }
    }
}

/// Edge width and fill softness, in pixels.
const EDGE_WIDTH: f64 = 1.0;
const FILL_SOFTNESS: f64 = 1.2;

fn synth_pair<T: Scalar>(side: usize, rng: &mut ChaCha8Rng) -> (ImageArray<T>, ImageArray<T>) {
    let s = side as f64;
    let bg: Vec<[f64; 3]> = (0..3)
        .map(|_| [rng.random_range(0.3..0.7), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)])
        .collect();
    let canvas: [f64; 3] = [rng.random_range(0.8..0.92), rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06)];
    let count = rng.random_range(2..=4);
    let figures: Vec<Figure> = (0..count)
        .map(|_| {
            let k = rng.random_range(0..3usize);
            let kind = [ShapeKind::Disk, ShapeKind::Box, ShapeKind::Ellipse][k];
            let rx = rng.random_range(0.1..0.25) * s;
            let ry = match kind {
                ShapeKind::Disk => rx,
                _ => rng.random_range(0.1..0.25) * s,
            };
            let color = PALETTE[k].map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
            Figure {
                kind,
                cx: rng.random_range(0.2..0.8) * s,
                cy: rng.random_range(0.2..0.8) * s,
                rx,
                ry,
                color,
            }
        })
        .collect();

    let mut input = ImageArray::zeros(3, side, side);
    let mut target = ImageArray::zeros(3, side, side);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut fill = [bg[0][0] + bg[0][1] * u + bg[0][2] * v, 0.0, 0.0];
            for c in 1..3 {
                fill[c] = bg[c][0] + bg[c][1] * u + bg[c][2] * v;
            }
            let mut ink: f64 = 0.0;
            for f in &figures {
                let d = f.distance(px, py);
                let m = sigmoid(-d / FILL_SOFTNESS);
                for c in 0..3 {
                    fill[c] = fill[c] * (1.0 - m) + f.color[c] * m;
                }
                ink = ink.max((-(d / EDGE_WIDTH).powi(2)).exp());
            }
            let tint = canvas[0] + canvas[1] * u + canvas[2] * v;
            for c in 0..3 {
                target.put(c, y, x, T::lit(fill[c].clamp(0.0, 1.0)));
                input.put(c, y, x, T::lit((tint * (1.0 - 0.75 * ink)).clamp(0.0, 1.0)));
            }
        }
    }
    (input.quantized(), target.quantized())
}

/// Procedural (edge map, filled coloring) pairs. Shapes are disks, boxes
/// and ellipses whose fill color follows the shape type, over a smooth
/// background; the input is a tinted sheet with the outlines inked in.
/// Values sit on the 8-bit grid so a PNG round trip is exact.
pub fn synth_dataset<T: Scalar>(count: usize, side: usize, seed: u64) -> Result<PairedDataset<T>> {
    ensure(side >= 8, || Error::Argument(format!("synthetic side must be at least 8, got {side}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, targets) = (0..count).map(|_| synth_pair(side, &mut rng)).unzip();
    PairedDataset::new(inputs, targets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Host,
    Train,
    Val,
    Test,
    Surrogate,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Host, Split::Train, Split::Val, Split::Test, Split::Surrogate];

    pub fn name(self) -> &'static str {
        match self {
            Split::Host => "host",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Surrogate => "surrogate",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Source indices of each subset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub host: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub surrogate: Vec<usize>,
}

impl SplitPlan {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Host => &self.host,
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Surrogate => &self.surrogate,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            host: self.host.len(),
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
            surrogate: self.surrogate.len(),
        }
    }
}

/// Shuffles `0..available` with `seed` and deals out the subsets in order.
pub fn plan_splits(available: usize, sizes: &SplitSizes, seed: u64) -> Result<SplitPlan> {
    sizes.validate()?;
    let need = sizes.total();
    ensure(available >= need, || {
        Error::InsufficientData(format!("{available} images available, the splits need {need}"))
    })?;
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = order.into_iter();
    let mut take = |n: usize| -> Vec<usize> { rest.by_ref().take(n).collect() };
    Ok(SplitPlan {
        host: take(sizes.host),
        train: take(sizes.train),
        val: take(sizes.val),
        test: take(sizes.test),
        surrogate: take(sizes.surrogate),
    })
}

/// The five subsets in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits<T> {
    pub host: PairedDataset<T>,
    pub train: PairedDataset<T>,
    pub val: PairedDataset<T>,
    pub test: PairedDataset<T>,
    pub surrogate: PairedDataset<T>,
}

impl<T: Scalar> DatasetSplits<T> {
    pub fn from_plan(source: &PairedDataset<T>, plan: &SplitPlan) -> Self {
        DatasetSplits {
            host: source.subset(&plan.host),
            train: source.subset(&plan.train),
            val: source.subset(&plan.val),
            test: source.subset(&plan.test),
            surrogate: source.subset(&plan.surrogate),
        }
    }

    pub fn get(&self, split: Split) -> &PairedDataset<T> {
        match split {
            Split::Host => &self.host,
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Surrogate => &self.surrogate,
        }
    }

    /// Writes the layout `root/<split>/<input|target>/<index>.png`.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let root = root.as_ref();
        let mut written = Vec::new();
        for split in Split::ALL {
            let data = self.get(split);
            for (side, images) in [("input", &data.inputs), ("target", &data.targets)] {
                let dir = root.join(split.name()).join(side);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (i, img) in images.iter().enumerate() {
                    let path = dir.join(format!("{i}.png"));
                    img.save_png(&path)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let load = |split: Split| load_split(root, split);
        Ok(DatasetSplits {
            host: load(Split::Host)?,
            train: load(Split::Train)?,
            val: load(Split::Val)?,
            test: load(Split::Test)?,
            surrogate: load(Split::Surrogate)?,
        })
    }
}

fn numbered_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index: usize = stem
            .parse()
            .map_err(|_| Error::Value(format!("{}: file names must be <index>.png", path.display())))?;
        found.push((index, path));
    }
    found.sort();
    for (expect, (index, path)) in found.iter().enumerate() {
        ensure(*index == expect, || {
            Error::Value(format!("{}: expected index {expect}", path.display()))
        })?;
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Loads one subset of the on-disk layout.
pub fn load_split<T: Scalar>(root: impl AsRef<Path>, split: Split) -> Result<PairedDataset<T>> {
    let base = root.as_ref().join(split.name());
    load_pairs(&base)
}

/// Loads `dir/input/<i>.png` and `dir/target/<i>.png` pairs.
pub fn load_pairs<T: Scalar>(dir: impl AsRef<Path>) -> Result<PairedDataset<T>> {
    let dir = dir.as_ref();
    let inputs = numbered_pngs(&dir.join("input"))?;
    let targets = numbered_pngs(&dir.join("target"))?;
    let read = |paths: &[PathBuf]| paths.iter().map(ImageArray::load).collect::<Result<Vec<_>>>();
    PairedDataset::new(read(&inputs)?, read(&targets)?)
}

/// Splits a pool of pairs according to `sizes`.
pub fn prepare_splits<T: Scalar>(source: &PairedDataset<T>, sizes: &SplitSizes, seed: u64) -> Result<DatasetSplits<T>> {
    let plan = plan_splits(source.len(), sizes, seed)?;
    Ok(DatasetSplits::from_plan(source, &plan))
}

/// Side of one cell of a generated binary watermark.
pub const BINARY_CELL: usize = 8;

/// A generated watermark: smooth color blobs for [`WatermarkKind::Color`],
/// a grid of random black/white cells for [`WatermarkKind::Binary`].
pub fn generate_watermark<T: Scalar>(kind: WatermarkKind, side: usize, seed: u64) -> Result<ImageArray<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        WatermarkKind::Color => {
            let s = side as f64;
            let base: [f64; 3] = [0.0; 3].map(|_| if rng.random::<bool>() { 0.15 } else { 0.85 });
            let blobs: Vec<([f64; 3], f64, f64, f64)> = (0..4)
                .map(|_| {
                    let color = [0.0; 3].map(|_| if rng.random::<bool>() { 0.1 } else { 0.9 });
                    (
                        color,
                        rng.random_range(0.15..0.85) * s,
                        rng.random_range(0.15..0.85) * s,
                        rng.random_range(0.12..0.2) * s,
                    )
                })
                .collect();
            let img = ImageArray::from_fn(3, side, side, |c, y, x| {
                let mut v = base[c];
                for (color, cx, cy, r) in &blobs {
                    let d2 = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)) / (r * r);
                    let m = (-d2).exp();
                    v = v * (1.0 - m) + color[c] * m;
                }
                T::lit(v)
            });
            Ok(img.quantized())
        }
        WatermarkKind::Binary => {
            ensure(side % BINARY_CELL == 0, || {
                Error::Argument(format!("binary watermark side must be a multiple of {BINARY_CELL}"))
            })?;
            let cells = side / BINARY_CELL;
            let bits: Vec<bool> = (0..cells * cells).map(|_| rng.random()).collect();
            Ok(ImageArray::from_fn(3, side, side, |_, y, x| {
                if bits[(y / BINARY_CELL) * cells + x / BINARY_CELL] {
                    T::one()
                } else {
                    T::zero()
                }
            }))
        }
    }
}

/// Loads a watermark PNG; binary maps are thresholded at 0.5.
pub fn load_watermark<T: Scalar>(path: impl AsRef<Path>, kind: WatermarkKind, side: usize) -> Result<ImageArray<T>> {
    let img = ImageArray::<T>::load(path.as_ref())?;
    ensure(img.dims() == (3, side, side), || {
        Error::Shape(format!("watermark must be {side}x{side}, got {:?}", img.dims()))
    })?;
    Ok(match kind {
        WatermarkKind::Color => img,
        WatermarkKind::Binary => img.map(|v| if v >= T::lit(0.5) { T::one() } else { T::zero() }),
    })
}
