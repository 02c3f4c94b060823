//! Dataset discovery and image preprocessing.
//!
//! A [`DatasetSpec`] names a directory layout and an optional subset; [`load_dataset`]
//! turns it into a deterministic, lexicographically sorted list of [`Sample`]s.
//! [`preprocess`] converts a decoded image into a normalized `(C, H, W)` tensor using a
//! model's own preprocessing constants: short-side resize to 8/7 of the crop size,
//! center crop, scale to `[0, 1]`, then per-channel standardization.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GenericImageView};
use ndarray::{Array2, Array3, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use iia_models::{ModelMeta, Scalar};

use crate::error::{AttributionError, Result};
use crate::resize::bilinear_resize;

/// Directory layouts the loader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Classification images: either class subdirectories (sorted names become
    /// label indices) or a flat directory with an optional labels CSV.
    ImageFolder,
    /// Validation images for a large classification set; same layout rules as
    /// [`DatasetKind::ImageFolder`].
    ImagenetVal,
    /// `images/` paired with binary `masks/` by file stem; nonzero mask pixels
    /// are foreground.
    InSeg,
    /// `images/` plus an `annotations.json` with polygon segmentations that are
    /// rasterized and unioned into one mask per image.
    CocoMasks,
    /// `JPEGImages/` paired with palette `SegmentationClass/` PNGs; foreground is
    /// any pixel that is neither black nor the boundary color (224, 224, 192).
    VocMasks,
}

impl DatasetKind {
    /// Parse a kind from its config-file name.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "image_folder" => Ok(Self::ImageFolder),
            "imagenet_val" => Ok(Self::ImagenetVal),
            "in_seg" => Ok(Self::InSeg),
            "coco_masks" => Ok(Self::CocoMasks),
            "voc_masks" => Ok(Self::VocMasks),
            other => Err(AttributionError::InvalidArgument(format!(
                "unknown dataset kind '{other}' (expected image_folder, imagenet_val, in_seg, coco_masks, or voc_masks)"
            ))),
        }
    }

    /// Stable name for reports and logs.
    pub fn name(self) -> &'static str {
        match self {
            Self::ImageFolder => "image_folder",
            Self::ImagenetVal => "imagenet_val",
            Self::InSeg => "in_seg",
            Self::CocoMasks => "coco_masks",
            Self::VocMasks => "voc_masks",
        }
    }
}

/// Where a dataset lives and which part of it to load.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub root: PathBuf,
    /// Keep only samples whose stem appears here; applied before size subsetting.
    pub subset_names: Option<Vec<String>>,
    /// Cap the number of samples after filtering.
    pub subset_size: Option<usize>,
    /// When set, pick the `subset_size` samples by a seeded shuffle instead of
    /// taking the first ones; iteration order stays lexicographic either way.
    pub subset_seed: Option<u64>,
    /// CSV of `name,label` rows for flat classification layouts.
    pub labels_csv: Option<PathBuf>,
}

impl DatasetSpec {
    /// A spec with no subsetting and no label file.
    pub fn new(kind: DatasetKind, root: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            root: root.into(),
            subset_names: None,
            subset_size: None,
            subset_seed: None,
            labels_csv: None,
        }
    }
}

/// One image, with whatever ground truth the layout provides.
#[derive(Debug, Clone)]
pub struct Sample {
    pub path: PathBuf,
    /// File stem; used for pairing, subsetting, and reports.
    pub name: String,
    pub label: Option<usize>,
    pub mask: Option<Array2<bool>>,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        entries.push(entry?.path());
    }
    entries.sort();
    Ok(entries)
}

fn image_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_image_file(p))
        .collect())
}

/// Parse a `name,label` CSV; a leading header row is tolerated.
fn read_labels_csv(path: &Path) -> Result<HashMap<String, usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut labels = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(AttributionError::InvalidArgument(format!(
                "label file {}: row {} has {} fields, expected name,label",
                path.display(),
                row + 1,
                record.len()
            )));
        }
        let name = record[0].trim().to_string();
        match record[1].trim().parse::<usize>() {
            Ok(label) => {
                labels.insert(name, label);
            }
            Err(_) if row == 0 => continue, // header row
            Err(_) => {
                return Err(AttributionError::InvalidArgument(format!(
                    "label file {}: row {} has non-numeric label '{}'",
                    path.display(),
                    row + 1,
                    &record[1]
                )));
            }
        }
    }
    Ok(labels)
}

/// Classification layout: class subdirectories, or flat files with optional CSV labels.
fn folder_samples(root: &Path, labels_csv: Option<&Path>) -> Result<Vec<Sample>> {
    let entries = read_dir_sorted(root)?;
    let flat: Vec<&PathBuf> = entries.iter().filter(|p| p.is_file() && is_image_file(p)).collect();
    let class_dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();

    let mut samples = Vec::new();
    if flat.is_empty() && !class_dirs.is_empty() {
        for (label, dir) in class_dirs.iter().enumerate() {
            for path in image_files_in(dir)? {
                samples.push(Sample {
                    name: stem_of(&path),
                    path,
                    label: Some(label),
                    mask: None,
                });
            }
        }
    } else {
        let labels = labels_csv.map(read_labels_csv).transpose()?;
        for path in flat {
            let name = stem_of(path);
            let label = labels.as_ref().and_then(|m| {
                m.get(&name)
                    .or_else(|| m.get(&path.file_name().unwrap_or_default().to_string_lossy().into_owned()))
                    .copied()
            });
            if labels.is_some() && label.is_none() {
                log::warn!("no label for image {}; skipping it", path.display());
                continue;
            }
            samples.push(Sample { path: path.clone(), name, label, mask: None });
        }
    }
    Ok(samples)
}

/// Binarize a mask image: any nonzero luma pixel is foreground.
fn binary_mask(path: &Path) -> Result<Array2<bool>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut mask = Array2::from_elem((h as usize, w as usize), false);
    for (x, y, p) in img.enumerate_pixels() {
        if p.0[0] > 0 {
            mask[(y as usize, x as usize)] = true;
        }
    }
    Ok(mask)
}

fn inseg_samples(root: &Path) -> Result<Vec<Sample>> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    let mut samples = Vec::new();
    for path in image_files_in(&images_dir)? {
        let name = stem_of(&path);
        let mask_path = masks_dir.join(format!("{name}.png"));
        if !mask_path.is_file() {
            log::warn!("no mask for image {}; skipping it", path.display());
            continue;
        }
        let mask = binary_mask(&mask_path)?;
        samples.push(Sample { path, name, label: None, mask: Some(mask) });
    }
    Ok(samples)
}

/// Boundary color that marks "ignore" pixels in the palette masks.
const VOC_VOID: [u8; 3] = [224, 224, 192];

fn voc_samples(root: &Path) -> Result<Vec<Sample>> {
    let images_dir = root.join("JPEGImages");
    let masks_dir = root.join("SegmentationClass");
    let mut samples = Vec::new();
    for path in image_files_in(&images_dir)? {
        let name = stem_of(&path);
        let mask_path = masks_dir.join(format!("{name}.png"));
        if !mask_path.is_file() {
            log::warn!("no segmentation for image {}; skipping it", path.display());
            continue;
        }
        let rgb = image::open(&mask_path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut mask = Array2::from_elem((h as usize, w as usize), false);
        for (x, y, p) in rgb.enumerate_pixels() {
            let c = p.0;
            if c != [0, 0, 0] && c != VOC_VOID {
                mask[(y as usize, x as usize)] = true;
            }
        }
        samples.push(Sample { path, name, label: None, mask: Some(mask) });
    }
    Ok(samples)
}

#[derive(Deserialize)]
struct CocoRoot {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: i64,
    file_name: String,
    height: usize,
    width: usize,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    #[serde(default)]
    segmentation: serde_json::Value,
}

/// Even-odd rasterization of one annotation's polygon rings at pixel centers.
fn rasterize_polygons(height: usize, width: usize, rings: &[Vec<f64>], mask: &mut Array2<bool>) {
    for y in 0..height {
        let py = y as f64 + 0.5;
        for x in 0..width {
            let px = x as f64 + 0.5;
            let mut inside = false;
            for ring in rings {
                let n = ring.len() / 2;
                if n < 3 {
                    continue;
                }
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = (ring[2 * i], ring[2 * i + 1]);
                    let (xj, yj) = (ring[2 * j], ring[2 * j + 1]);
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
            }
            if inside {
                mask[(y, x)] = true;
            }
        }
    }
}

/// Decode one annotation's segmentation value into polygon rings.
/// Returns `None` for run-length encodings, which this loader does not support.
fn polygon_rings(segmentation: &serde_json::Value) -> Option<Vec<Vec<f64>>> {
    let arrays = segmentation.as_array()?;
    let mut rings = Vec::new();
    for ring in arrays {
        let coords = ring
            .as_array()?
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<Vec<f64>>>()?;
        if coords.len() % 2 != 0 {
            return None;
        }
        rings.push(coords);
    }
    Some(rings)
}

fn coco_samples(root: &Path) -> Result<Vec<Sample>> {
    let annotations_path = root.join("annotations.json");
    let text = std::fs::read_to_string(&annotations_path)?;
    let parsed: CocoRoot = serde_json::from_str(&text)?;

    let mut by_image: HashMap<i64, Vec<&CocoAnnotation>> = HashMap::new();
    for ann in &parsed.annotations {
        by_image.entry(ann.image_id).or_default().push(ann);
    }

    let images_dir = root.join("images");
    let mut samples = Vec::new();
    for info in &parsed.images {
        let path = images_dir.join(&info.file_name);
        if !path.is_file() {
            log::warn!("annotated image {} is missing; skipping it", path.display());
            continue;
        }
        let Some(annotations) = by_image.get(&info.id) else {
            log::warn!("no annotations for image {}; skipping it", info.file_name);
            continue;
        };
        let mut mask = Array2::from_elem((info.height, info.width), false);
        let mut rasterized = 0usize;
        for ann in annotations {
            match polygon_rings(&ann.segmentation) {
                Some(rings) => {
                    rasterize_polygons(info.height, info.width, &rings, &mut mask);
                    rasterized += 1;
                }
                None => {
                    log::warn!(
                        "image {}: skipping a non-polygon segmentation (run-length encodings are not supported)",
                        info.file_name
                    );
                }
            }
        }
        if rasterized == 0 {
            log::warn!("no usable annotations for image {}; skipping it", info.file_name);
            continue;
        }
        samples.push(Sample {
            path,
            name: stem_of(Path::new(&info.file_name)),
            label: None,
            mask: Some(mask),
        });
    }
    Ok(samples)
}

/// Discover a dataset: list its samples, apply any subset, and return them in
/// lexicographic name order.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    if !spec.root.is_dir() {
        return Err(AttributionError::InvalidArgument(format!(
            "dataset root {} is not a directory",
            spec.root.display()
        )));
    }
    let mut samples = match spec.kind {
        DatasetKind::ImageFolder | DatasetKind::ImagenetVal => {
            folder_samples(&spec.root, spec.labels_csv.as_deref())?
        }
        DatasetKind::InSeg => inseg_samples(&spec.root)?,
        DatasetKind::CocoMasks => coco_samples(&spec.root)?,
        DatasetKind::VocMasks => voc_samples(&spec.root)?,
    };
    samples.sort_by(|a, b| a.name.cmp(&b.name));

    if let Some(names) = &spec.subset_names {
        samples.retain(|s| names.iter().any(|n| n == &s.name));
    }
    if let Some(size) = spec.subset_size {
        if let Some(seed) = spec.subset_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            samples.shuffle(&mut rng);
            samples.truncate(size);
            samples.sort_by(|a, b| a.name.cmp(&b.name));
        } else {
            samples.truncate(size);
        }
    }
    Ok(samples)
}

/// Convert a decoded image into the normalized `(C, H, W)` tensor a model expects.
pub fn preprocess<T: Scalar>(img: &DynamicImage, meta: &ModelMeta) -> Result<ArrayD<T>> {
    let (target_h, target_w) = meta.input_hw;
    let channels = meta.in_channels;
    if target_h == 0 || target_w == 0 {
        return Err(AttributionError::InvalidArgument(
            "model expects a zero-sized input".into(),
        ));
    }
    if channels != 1 && channels != 3 {
        return Err(AttributionError::InvalidArgument(format!(
            "preprocessing supports 1 or 3 input channels, model expects {channels}"
        )));
    }
    let preproc = &meta.preproc;
    if preproc.mean.len() != channels || preproc.std.len() != channels {
        return Err(AttributionError::shape(
            "preprocessing constants",
            &[channels],
            &[preproc.mean.len(), preproc.std.len()],
        ));
    }

    let (src_w, src_h) = img.dimensions();
    if src_w == 0 || src_h == 0 {
        return Err(AttributionError::InvalidArgument("image has zero pixels".into()));
    }
    let (src_h, src_w) = (src_h as usize, src_w as usize);

    // Planar float channels in [0, 1].
    let mut planes: Vec<Array2<f64>> = Vec::with_capacity(channels);
    if channels == 1 {
        let gray = img.to_luma8();
        let mut plane = Array2::zeros((src_h, src_w));
        for (x, y, p) in gray.enumerate_pixels() {
            plane[(y as usize, x as usize)] = f64::from(p.0[0]) / 255.0;
        }
        planes.push(plane);
    } else {
        let rgb = img.to_rgb8();
        let mut r = Array2::zeros((src_h, src_w));
        let mut g = Array2::zeros((src_h, src_w));
        let mut b = Array2::zeros((src_h, src_w));
        for (x, y, p) in rgb.enumerate_pixels() {
            let (yy, xx) = (y as usize, x as usize);
            r[(yy, xx)] = f64::from(p.0[0]) / 255.0;
            g[(yy, xx)] = f64::from(p.0[1]) / 255.0;
            b[(yy, xx)] = f64::from(p.0[2]) / 255.0;
        }
        planes.extend([r, g, b]);
    }

    // Short-side resize to 8/7 of the crop size, then center crop.
    let short_target = (8.0 / 7.0 * target_h.min(target_w) as f64).round();
    let scale = short_target / src_h.min(src_w) as f64;
    let resized_h = ((src_h as f64 * scale).round() as usize).max(target_h);
    let resized_w = ((src_w as f64 * scale).round() as usize).max(target_w);
    let off_y = (resized_h - target_h) / 2;
    let off_x = (resized_w - target_w) / 2;

    let mut out = Array3::<T>::zeros((channels, target_h, target_w));
    for (c, plane) in planes.iter().enumerate() {
        let resized = bilinear_resize(plane, resized_h, resized_w);
        let (mean, std) = (preproc.mean[c], preproc.std[c]);
        if std == 0.0 {
            return Err(AttributionError::Numeric(
                "preprocessing standard deviation is zero".into(),
            ));
        }
        for y in 0..target_h {
            for x in 0..target_w {
                let v = (resized[(off_y + y, off_x + x)] - mean) / std;
                out[(c, y, x)] = T::from_f64(v);
            }
        }
    }
    Ok(out.into_dyn())
}

/// Decode an image from disk and preprocess it for a model.
pub fn load_and_preprocess<T: Scalar>(path: &Path, meta: &ModelMeta) -> Result<ArrayD<T>> {
    let img = image::open(path)?;
    preprocess(&img, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use iia_models::{ArchKind, Preproc};
    use image::{GrayImage, Rgb, RgbImage};

    fn meta(input_hw: (usize, usize), in_channels: usize, preproc: Preproc) -> ModelMeta {
        ModelMeta {
            id: "test".into(),
            arch: ArchKind::Cnn,
            layer_count: 1,
            input_hw,
            in_channels,
            num_classes: 2,
            token_grid: None,
            heads: None,
            preproc,
        }
    }

    fn write_rgb(path: &Path, w: u32, h: u32, color: [u8; 3]) {
        let img = RgbImage::from_pixel(w, h, Rgb(color));
        img.save(path).unwrap();
    }

    #[test]
    fn flat_folder_lists_lexicographically_and_subsets() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.png", "a.png", "b.png"] {
            write_rgb(&dir.path().join(name), 4, 4, [10, 20, 30]);
        }
        let spec = DatasetSpec::new(DatasetKind::ImageFolder, dir.path());
        let all = load_dataset(&spec).unwrap();
        let names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(all.iter().all(|s| s.label.is_none() && s.mask.is_none()));

        let mut firsts = DatasetSpec::new(DatasetKind::ImageFolder, dir.path());
        firsts.subset_size = Some(2);
        let two = load_dataset(&firsts).unwrap();
        let names: Vec<&str> = two.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);

        let mut named = DatasetSpec::new(DatasetKind::ImageFolder, dir.path());
        named.subset_names = Some(vec!["c".into(), "a".into()]);
        let picked = load_dataset(&named).unwrap();
        let names: Vec<&str> = picked.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "c"]);
    }

    #[test]
    fn seeded_subset_is_deterministic_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..6 {
            write_rgb(&dir.path().join(format!("img{i}.png")), 4, 4, [i as u8, 0, 0]);
        }
        let mut spec = DatasetSpec::new(DatasetKind::ImageFolder, dir.path());
        spec.subset_size = Some(3);
        spec.subset_seed = Some(7);
        let a = load_dataset(&spec).unwrap();
        let b = load_dataset(&spec).unwrap();
        let names_a: Vec<&str> = a.iter().map(|s| s.name.as_str()).collect();
        let names_b: Vec<&str> = b.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names_a, names_b);
        assert_eq!(names_a.len(), 3);
        let mut sorted = names_a.clone();
        sorted.sort();
        assert_eq!(names_a, sorted, "seeded subset must still iterate in name order");
    }

    #[test]
    fn class_directories_become_sorted_labels() {
        let dir = tempfile::tempdir().unwrap();
        for (class, file) in [("dog", "x.png"), ("cat", "y.png"), ("cat", "z.png")] {
            let class_dir = dir.path().join(class);
            std::fs::create_dir_all(&class_dir).unwrap();
            write_rgb(&class_dir.join(file), 4, 4, [1, 2, 3]);
        }
        let spec = DatasetSpec::new(DatasetKind::ImagenetVal, dir.path());
        let samples = load_dataset(&spec).unwrap();
        let got: Vec<(&str, usize)> = samples.iter().map(|s| (s.name.as_str(), s.label.unwrap())).collect();
        // "cat" sorts before "dog", so cat = 0 and dog = 1.
        assert_eq!(got, [("x", 1), ("y", 0), ("z", 0)]);
    }

    #[test]
    fn csv_labels_attach_and_unlabeled_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb(&dir.path().join("a.png"), 4, 4, [0, 0, 0]);
        write_rgb(&dir.path().join("b.png"), 4, 4, [0, 0, 0]);
        let csv_path = dir.path().join("labels.csv");
        std::fs::write(&csv_path, "name,label\na,3\n").unwrap();
        let mut spec = DatasetSpec::new(DatasetKind::ImageFolder, dir.path());
        spec.labels_csv = Some(csv_path);
        let samples = load_dataset(&spec).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].name, "a");
        assert_eq!(samples[0].label, Some(3));
    }

    #[test]
    fn paired_masks_binarize_and_missing_masks_skip() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        let masks = dir.path().join("masks");
        std::fs::create_dir_all(&images).unwrap();
        std::fs::create_dir_all(&masks).unwrap();
        write_rgb(&images.join("p.png"), 3, 2, [9, 9, 9]);
        write_rgb(&images.join("q.png"), 3, 2, [9, 9, 9]);
        let mut mask = GrayImage::new(3, 2);
        mask.put_pixel(1, 0, image::Luma([255]));
        mask.put_pixel(2, 1, image::Luma([1]));
        mask.save(masks.join("p.png")).unwrap();

        let spec = DatasetSpec::new(DatasetKind::InSeg, dir.path());
        let samples = load_dataset(&spec).unwrap();
        assert_eq!(samples.len(), 1, "the image without a mask is skipped");
        assert_eq!(samples[0].name, "p");
        let got = samples[0].mask.as_ref().unwrap();
        assert_eq!(got.dim(), (2, 3));
        let on: Vec<(usize, usize)> = got
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|(ix, _)| ix)
            .collect();
        assert_eq!(on, [(0, 1), (1, 2)]);
    }

    #[test]
    fn palette_masks_treat_black_and_boundary_as_background() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("JPEGImages");
        let masks = dir.path().join("SegmentationClass");
        std::fs::create_dir_all(&images).unwrap();
        std::fs::create_dir_all(&masks).unwrap();
        write_rgb(&images.join("v.jpg"), 3, 1, [0, 0, 0]);
        let mut mask = RgbImage::new(3, 1);
        mask.put_pixel(0, 0, Rgb([0, 0, 0]));
        mask.put_pixel(1, 0, Rgb([128, 0, 0]));
        mask.put_pixel(2, 0, Rgb(VOC_VOID));
        mask.save(masks.join("v.png")).unwrap();

        let spec = DatasetSpec::new(DatasetKind::VocMasks, dir.path());
        let samples = load_dataset(&spec).unwrap();
        assert_eq!(samples.len(), 1);
        let got = samples[0].mask.as_ref().unwrap();
        assert_eq!(got.as_slice().unwrap(), [false, true, false]);
    }

    #[test]
    fn polygon_annotations_union_and_rle_entries_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        std::fs::create_dir_all(&images).unwrap();
        write_rgb(&images.join("one.png"), 10, 10, [0, 0, 0]);
        write_rgb(&images.join("two.png"), 10, 10, [0, 0, 0]);
        let annotations = serde_json::json!({
            "images": [
                {"id": 1, "file_name": "one.png", "height": 10, "width": 10},
                {"id": 2, "file_name": "two.png", "height": 10, "width": 10}
            ],
            "annotations": [
                {"image_id": 1, "segmentation": [[1.0, 1.0, 4.0, 1.0, 4.0, 4.0, 1.0, 4.0]]},
                {"image_id": 1, "segmentation": [[6.0, 6.0, 9.0, 6.0, 9.0, 9.0, 6.0, 9.0]]},
                {"image_id": 2, "segmentation": {"counts": "abc", "size": [10, 10]}}
            ]
        });
        std::fs::write(dir.path().join("annotations.json"), annotations.to_string()).unwrap();

        let spec = DatasetSpec::new(DatasetKind::CocoMasks, dir.path());
        let samples = load_dataset(&spec).unwrap();
        assert_eq!(samples.len(), 1, "the image whose only annotation is run-length encoded is skipped");
        assert_eq!(samples[0].name, "one");
        let mask = samples[0].mask.as_ref().unwrap();
        // Pixel centers strictly inside [1,4]x[1,4] are x,y in {1,2,3}: nine per square.
        let count = mask.iter().filter(|&&v| v).count();
        assert_eq!(count, 18);
        assert!(mask[(2, 2)] && mask[(7, 7)]);
        assert!(!mask[(5, 5)] && !mask[(0, 0)]);
    }

    #[test]
    fn unparseable_annotations_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::write(dir.path().join("annotations.json"), "not json").unwrap();
        let spec = DatasetSpec::new(DatasetKind::CocoMasks, dir.path());
        assert!(load_dataset(&spec).is_err());
    }

    #[test]
    fn missing_root_is_fatal() {
        let spec = DatasetSpec::new(DatasetKind::ImageFolder, "/nonexistent/path/xyz");
        assert!(load_dataset(&spec).is_err());
    }

    #[test]
    fn preprocess_matches_hand_computed_values() {
        // A 7x7 crop wants short side 8/7 * 7 = 8: an 8x8 input resizes by
        // scale 1 (identity), and the center crop starts at offset 0.
        let mut img = RgbImage::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let v = (y * 8 + x) as u8;
                img.put_pixel(x, y, Rgb([v, v, v]));
            }
        }
        let meta = meta(
            (7, 7),
            3,
            Preproc { mean: vec![0.5, 0.5, 0.5], std: vec![0.25, 0.25, 0.25] },
        );
        let out: ArrayD<f64> = preprocess(&DynamicImage::ImageRgb8(img), &meta).unwrap();
        assert_eq!(out.shape(), [3, 7, 7]);
        for c in 0..3 {
            for y in 0..7 {
                for x in 0..7 {
                    let raw = (y * 8 + x) as f64 / 255.0;
                    let expected = (raw - 0.5) / 0.25;
                    assert_eq!(out[[c, y, x]], expected, "channel {c} pixel ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn grayscale_models_get_single_channel_planes() {
        let mut img = RgbImage::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                img.put_pixel(x, y, Rgb([100, 100, 100]));
            }
        }
        let meta = meta((4, 4), 1, Preproc::unit(1));
        let out: ArrayD<f64> = preprocess(&DynamicImage::ImageRgb8(img), &meta).unwrap();
        assert_eq!(out.shape(), [1, 4, 4]);
        // A constant image stays constant through resize and crop.
        let expected = 100.0 / 255.0;
        for v in out.iter() {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn preprocess_rejects_unsupported_channel_counts() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(4, 4));
        let meta = meta((4, 4), 2, Preproc::unit(2));
        assert!(preprocess::<f64>(&img, &meta).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            DatasetKind::ImageFolder,
            DatasetKind::ImagenetVal,
            DatasetKind::InSeg,
            DatasetKind::CocoMasks,
            DatasetKind::VocMasks,
        ] {
            assert_eq!(DatasetKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(DatasetKind::parse("bogus").is_err());
    }
}
