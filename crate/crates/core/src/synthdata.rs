//! Seeded synthetic image datasets (classification and segmentation
//! variants, two vendor styles), splits, and the label oracle.
//!
//! Each image is a smoothed-noise background; positive images additionally
//! carry one bright elliptical region at a task-specific location. The
//! classification tasks draw a per-image quality archetype (clean, washed
//! out, or speckled) so that samples differ in how much a model can learn
//! from them — the axis the selection strategies compete on.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::rng::{derive_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vendor {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    EffusionLike,
    PneumoniaLike,
    GlandSeg,
}

/// Full recipe for a synthetic dataset. Generation is a pure function of
/// this value: identical specs produce bit-identical datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_images: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    pub positive_fraction: f64,
    /// Lesion/background contrast in intensity units.
    pub contrast: f64,
    /// Background Gaussian noise std (pre-blur).
    pub noise_sigma: f64,
    #[serde(default = "default_vendor")]
    pub vendor: Vendor,
    pub task: Task,
    pub seed: u64,
}

fn default_size() -> usize {
    64
}

fn default_vendor() -> Vendor {
    Vendor::A
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::invalid("n_images", "must be positive"));
        }
        if self.size < 16 {
            return Err(Error::invalid("size", "must be at least 16"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::invalid(
                "positive_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        if self.contrast < 0.0 || !self.contrast.is_finite() {
            return Err(Error::invalid("contrast", "must be finite and >= 0"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Per-image quality archetype (classification tasks). Washed-out images
/// carry a near-invisible lesion under a strong blur; speckled images pair a
/// near-invisible lesion with a handful of saturated hot pixels uncorrelated
/// with the label. Both are low-value training samples by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Clean,
    Washed,
    Speckled,
}

/// One synthetic image. Hidden fields are only reachable through the oracle
/// operations on [`Dataset`].
#[derive(Clone, Debug)]
pub struct Image {
    pub id: String,
    pub pixels: Grid,
    pub vendor: Vendor,
    hidden_label: u8,
    hidden_mask: Option<Mask>,
    lesion: Option<EllipseParams>,
    archetype: Archetype,
}

impl Image {
    pub fn size(&self) -> (usize, usize) {
        (self.pixels.h(), self.pixels.w())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EllipseParams {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl EllipseParams {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    pub fn rasterize(&self, h: usize, w: usize) -> Mask {
        let mut m = Mask::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                if self.contains(y as f64, x as f64) {
                    m.set(y, x, true);
                }
            }
        }
        m
    }
}

/// A generated dataset plus its label oracle. The oracle query counter is
/// the only mutable state and is atomically incremented.
#[derive(Debug)]
pub struct Dataset {
    spec: DatasetSpec,
    images: Vec<Image>,
    index: HashMap<String, usize>,
    query_counter: AtomicU64,
}

impl Dataset {
    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Result<&Image> {
        self.index
            .get(id)
            .map(|&i| &self.images[i])
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub fn has_masks(&self) -> bool {
        self.spec.task == Task::GlandSeg
    }

    /// Query the hidden label. Increments the interaction counter.
    pub fn oracle_label(&self, id: &str) -> Result<u8> {
        let image = self.image(id)?;
        self.query_counter.fetch_add(1, Ordering::Relaxed);
        Ok(image.hidden_label)
    }

    /// Query the hidden segmentation mask. Increments the interaction
    /// counter. Errors on classification datasets.
    pub fn oracle_mask(&self, id: &str) -> Result<Mask> {
        let image = self.image(id)?;
        match &image.hidden_mask {
            Some(m) => {
                self.query_counter.fetch_add(1, Ordering::Relaxed);
                Ok(m.clone())
            }
            None => Err(Error::NoMask(id.to_string())),
        }
    }

    pub fn query_count(&self) -> u64 {
        self.query_counter.load(Ordering::Relaxed)
    }

    pub fn reset_query_count(&self) {
        self.query_counter.store(0, Ordering::Relaxed);
    }

    /// Generator-side label for evaluation harnesses and reference models
    /// (not an oracle query; the interaction counter is untouched).
    pub fn eval_label(&self, id: &str) -> Result<u8> {
        Ok(self.image(id)?.hidden_label)
    }

    /// Generator-side segmentation mask for evaluation harnesses and
    /// reference models (not an oracle query).
    pub fn eval_mask(&self, id: &str) -> Result<Mask> {
        let image = self.image(id)?;
        image
            .hidden_mask
            .clone()
            .ok_or_else(|| Error::NoMask(id.to_string()))
    }

    /// Generator-side ground truth for evaluation harnesses (lesion region of
    /// a positive image). Not an oracle query: evaluation only, never used
    /// by selection strategies.
    pub fn eval_lesion_mask(&self, id: &str) -> Result<Option<Mask>> {
        let image = self.image(id)?;
        Ok(image
            .lesion
            .map(|e| e.rasterize(image.pixels.h(), image.pixels.w())))
    }

    /// Generator-side archetype, for evaluation and reporting only.
    pub fn eval_archetype(&self, id: &str) -> Result<Archetype> {
        Ok(self.image(id)?.archetype)
    }

    /// Label visible to the split logic (generator side, not counted as an
    /// oracle interaction).
    pub(crate) fn internal_label(&self, id: &str) -> Result<u8> {
        Ok(self.image(id)?.hidden_label)
    }
}

/// Generate a dataset from a spec. Pure function of the spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_images;
    let size = spec.size;
    // Exact positive count by construction; assignment order shuffled.
    let n_pos = (n as f64 * spec.positive_fraction).round() as usize;
    let mut labels = vec![0u8; n];
    for l in labels.iter_mut().take(n_pos) {
        *l = 1;
    }
    let mut assign_rng = rng_for(spec.seed, "labels", 0);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = assign_rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let (contrast, noise_sigma) = match spec.vendor {
        Vendor::A => (spec.contrast, spec.noise_sigma),
        // Vendor B: higher contrast, lower noise.
        Vendor::B => (spec.contrast * 1.3, spec.noise_sigma * 0.6),
    };

    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(spec.seed, "image", i as u64);
        let id = format!("img-{:05}", i);
        let label = labels[i];

        // Background: mid-gray base with a per-image brightness offset (so
        // global mean intensity alone cannot separate the classes) plus
        // 3x3-box-blurred white noise.
        let base = 0.40 + rng.random_range(-0.08..0.08);
        let mut pixels = Grid::filled(size, size, base);
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).unwrap();
            let mut noise = Grid::zeros(size, size);
            for v in noise.values_mut() {
                *v = normal.sample(&mut rng);
            }
            let blurred = noise.box_blur3(1);
            for (p, nz) in pixels.values_mut().iter_mut().zip(blurred.values()) {
                *p += nz;
            }
        }

        let archetype = match spec.task {
            Task::GlandSeg => {
                if rng.random_range(0.0..1.0) < 0.2 {
                    Archetype::Washed
                } else {
                    Archetype::Clean
                }
            }
            _ => {
                let u: f64 = rng.random_range(0.0..1.0);
                if u < 0.62 {
                    Archetype::Clean
                } else if u < 0.95 {
                    Archetype::Washed
                } else {
                    Archetype::Speckled
                }
            }
        };

        // Lesion / gland geometry. Classification tasks render an ellipse in
        // every image: the classes differ by its brightness, so the model
        // must learn a contrast threshold rather than mere presence.
        let s = size as f64;
        let (lesion, mask) = match spec.task {
            Task::EffusionLike | Task::PneumoniaLike => {
                // Task-specific quadrant: effusion pools low, pneumonia sits
                // high in the opposite corner.
                let (cy_range, cx_range) = match spec.task {
                    Task::EffusionLike => ((0.58, 0.78), (0.25, 0.45)),
                    _ => ((0.22, 0.42), (0.55, 0.75)),
                };
                let e = EllipseParams {
                    cy: s * rng.random_range(cy_range.0..cy_range.1),
                    cx: s * rng.random_range(cx_range.0..cx_range.1),
                    ry: s * rng.random_range(0.08..0.16),
                    rx: s * rng.random_range(0.08..0.16),
                };
                (Some(e), None)
            }
            Task::GlandSeg => {
                // Everyone gets a gland; positives ("malign") are large
                // (mask fraction > 0.15 by construction), negatives small.
                let r_range = if label == 1 { (0.28, 0.38) } else { (0.08, 0.16) };
                let e = EllipseParams {
                    cy: s * rng.random_range(0.38..0.62),
                    cx: s * rng.random_range(0.38..0.62),
                    ry: s * rng.random_range(r_range.0..r_range.1),
                    rx: s * rng.random_range(r_range.0..r_range.1),
                };
                let m = e.rasterize(size, size);
                (Some(e), Some(m))
            }
        };

        // Per-image lesion contrast factor. Clean positives are clearly
        // bright; negatives carry a dim ellipse; washed/speckled positives
        // fall into an ambiguous band overlapping the negatives, so their
        // labels carry almost no pixel evidence. The gland task keeps full
        // contrast so masks stay learnable.
        let clean_pos: f64 = rng.random_range(0.5..1.0);
        let neg: f64 = rng.random_range(0.15..0.35);
        let ambiguous: f64 = rng.random_range(0.10..0.25);
        let factor = match (spec.task, archetype, label) {
            (Task::GlandSeg, _, _) => clean_pos,
            (_, Archetype::Clean, 1) => clean_pos,
            (_, _, 1) => ambiguous,
            (_, _, _) => neg,
        };
        if let Some(e) = &lesion {
            let c = contrast * factor;
            for y in 0..size {
                for x in 0..size {
                    let dy = (y as f64 - e.cy) / e.ry;
                    let dx = (x as f64 - e.cx) / e.rx;
                    let r2 = dy * dy + dx * dx;
                    if r2 <= 1.0 {
                        let v = pixels.at(y, x) + c * (1.0 - 0.3 * r2);
                        pixels.set(y, x, v);
                    }
                }
            }
        }

        match archetype {
            Archetype::Clean => {}
            Archetype::Washed => {
                pixels = pixels.box_blur3(3);
            }
            Archetype::Speckled => {
                let n_spots = rng.random_range(3..8);
                for _ in 0..n_spots {
                    let y = rng.random_range(0..size);
                    let x = rng.random_range(0..size);
                    let v = (pixels.at(y, x) + 0.35).min(1.0);
                    pixels.set(y, x, v);
                }
            }
        }

        pixels.clamp(0.0, 1.0);
        images.push(Image {
            id,
            pixels,
            vendor: spec.vendor,
            hidden_label: label,
            hidden_mask: mask,
            lesion,
            archetype,
        });
    }

    // Gland positives must exceed the area-fraction proxy threshold.
    if spec.task == Task::GlandSeg {
        for img in &images {
            let frac = img.hidden_mask.as_ref().map(|m| m.fraction()).unwrap_or(0.0);
            debug_assert_eq!(img.hidden_label == 1, frac > 0.15, "{}: {frac}", img.id);
        }
    }

    let index = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.id.clone(), i))
        .collect();
    Ok(Dataset {
        spec: spec.clone(),
        images,
        index,
        query_counter: AtomicU64::new(0),
    })
}

/// Disjoint labeled / unlabeled / validation / test partitions driving the
/// active-learning loop. Validation and test never change during a run.
#[derive(Clone, Debug)]
pub struct PoolState {
    pub labeled: Vec<(String, u8)>,
    pub unlabeled: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl PoolState {
    pub fn assert_disjoint(&self) {
        let mut seen = std::collections::HashSet::new();
        for id in self
            .labeled
            .iter()
            .map(|(id, _)| id)
            .chain(self.unlabeled.iter())
            .chain(self.validation.iter())
            .chain(self.test.iter())
        {
            assert!(seen.insert(id.clone()), "partition overlap at {id}");
        }
    }

    /// Total pool size available for training (labeled + unlabeled).
    pub fn pool_total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}

/// Stratified split into (train pool, validation, test). The labeled set
/// starts empty; all training ids go to the unlabeled pool.
pub fn split(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<PoolState> {
    let (rt, rv, rs) = ratios;
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("ratios", "must sum to 1"));
    }
    if rt < 0.0 || rv < 0.0 || rs < 0.0 {
        return Err(Error::invalid("ratios", "must be non-negative"));
    }
    if dataset.len() < 10 {
        return Err(Error::invalid("dataset", "needs at least 10 images"));
    }
    // Stratify: shuffle within each class, then split each class by the
    // ratios and round-robin the remainders so each partition's positive
    // fraction stays within one sample of the global fraction.
    let mut pos: Vec<String> = Vec::new();
    let mut neg: Vec<String> = Vec::new();
    for img in dataset.images() {
        if dataset.internal_label(&img.id)? == 1 {
            pos.push(img.id.clone());
        } else {
            neg.push(img.id.clone());
        }
    }
    let mut rng = rng_for(seed, "split", 0);
    for class in [&mut pos, &mut neg] {
        for i in (1..class.len()).rev() {
            let j = rng.random_range(0..=i);
            class.swap(i, j);
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in [pos, neg] {
        let n = class.len();
        let n_train = (n as f64 * rt).round() as usize;
        let n_val = (n as f64 * rv).round() as usize;
        let n_train = n_train.min(n);
        let n_val = n_val.min(n - n_train);
        for (i, id) in class.into_iter().enumerate() {
            if i < n_train {
                train.push(id);
            } else if i < n_train + n_val {
                val.push(id);
            } else {
                test.push(id);
            }
        }
    }
    // Deterministic order within partitions.
    train.sort();
    val.sort();
    test.sort();
    Ok(PoolState {
        labeled: Vec::new(),
        unlabeled: train,
        validation: val,
        test,
    })
}

/// Add i.i.d. Gaussian noise and clamp to [0,1]. Deterministic given the
/// provided RNG stream.
pub fn inject_noise(image: &Image, sigma: f64, rng: &mut impl Rng) -> Result<Image> {
    if sigma < 0.0 {
        return Err(Error::invalid("sigma", "must be >= 0"));
    }
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for v in out.pixels.values_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit) export/import with a JSON manifest.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    spec: DatasetSpec,
    images: Vec<ImageEntry>,
    redacted: bool,
}

#[derive(Serialize, Deserialize)]
struct ImageEntry {
    id: String,
    vendor: Vendor,
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_file: Option<String>,
}

/// Write one 8-bit P5 PGM.
pub fn write_pgm(path: &Path, grid: &Grid) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", grid.w(), grid.h())?;
    let bytes: Vec<u8> = grid
        .values()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Read an 8-bit P5 PGM into a grid of [0,1] values.
pub fn read_pgm(path: &Path) -> Result<Grid> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let bad = |m: &str| Error::Malformed {
        path: path.display().to_string(),
        message: m.to_string(),
    };
    // Header: magic, width, height, maxval, single whitespace, then data.
    let mut pos = 0usize;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = fields[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only 8-bit PGMs supported"));
    }
    pos += 1; // single whitespace after maxval
    if raw.len() < pos + w * h {
        return Err(bad("truncated pixel data"));
    }
    let data: Vec<f64> = raw[pos..pos + w * h].iter().map(|&b| b as f64 / 255.0).collect();
    Grid::from_vec(h, w, data)
}

/// Export a dataset as one PGM per image plus `manifest.json`. With
/// `redact_labels`, hidden labels are omitted from the manifest.
pub fn export_dataset(dataset: &Dataset, dir: &Path, redact_labels: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for img in dataset.images() {
        let file = format!("{}.pgm", img.id);
        write_pgm(&dir.join(&file), &img.pixels)?;
        let mask_file = match &img.hidden_mask {
            Some(m) if !redact_labels => {
                let mf = format!("{}_mask.pgm", img.id);
                let mut g = Grid::zeros(m.h(), m.w());
                for y in 0..m.h() {
                    for x in 0..m.w() {
                        if m.at(y, x) {
                            g.set(y, x, 1.0);
                        }
                    }
                }
                write_pgm(&dir.join(&mf), &g)?;
                Some(mf)
            }
            _ => None,
        };
        entries.push(ImageEntry {
            id: img.id.clone(),
            vendor: img.vendor,
            file,
            label: if redact_labels {
                None
            } else {
                Some(img.hidden_label)
            },
            mask_file,
        });
    }
    let manifest = DatasetManifest {
        spec: dataset.spec.clone(),
        images: entries,
        redacted: redact_labels,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Import a dataset previously written by [`export_dataset`]. Labels are
/// only available when the manifest was not redacted.
pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let json = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let pixels = read_pgm(&dir.join(&entry.file))?;
        let hidden_mask = match &entry.mask_file {
            Some(mf) => {
                let g = read_pgm(&dir.join(mf))?;
                let mut m = Mask::empty(g.h(), g.w());
                for y in 0..g.h() {
                    for x in 0..g.w() {
                        if g.at(y, x) > 0.5 {
                            m.set(y, x, true);
                        }
                    }
                }
                Some(m)
            }
            None => None,
        };
        images.push(Image {
            id: entry.id.clone(),
            pixels,
            vendor: entry.vendor,
            hidden_label: entry.label.unwrap_or(0),
            hidden_mask,
            lesion: None,
            archetype: Archetype::Clean,
        });
    }
    let index = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.id.clone(), i))
        .collect();
    Ok(Dataset {
        spec: manifest.spec,
        images,
        index,
        query_counter: AtomicU64::new(0),
    })
}

/// Derive the dataset seed for replicate `run_seed` of an experiment.
pub fn replicate_spec(spec: &DatasetSpec, run_seed: u64) -> DatasetSpec {
    let mut s = spec.clone();
    s.seed = derive_seed(spec.seed, "replicate", run_seed);
    s
}
