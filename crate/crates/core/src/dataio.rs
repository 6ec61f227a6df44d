//! Datasets: CIFAR-10 binary batches, synthetic template images, splits and
//! an on-disk dump in the checkpoint container format.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{read_container, write_container};
use crate::numerics::{Rng, Tensor};
use crate::pairs::ImageRef;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: usize,
    /// `[C, H, W]`.
    pub image: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub class_names: Option<Vec<String>>,
    pub split: String,
    /// Set once normalization statistics have been applied.
    pub normalized: bool,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        class_names: Option<Vec<String>>,
        split: impl Into<String>,
    ) -> Result<Self> {
        let mut ids = HashSet::with_capacity(samples.len());
        let shape = samples.first().map(|s| s.image.shape().to_vec());
        for s in &samples {
            if !ids.insert(s.id) {
                return Err(Error::invalid(format!("duplicate image id {}", s.id)));
            }
            if s.label >= num_classes {
                return Err(Error::invalid(format!(
                    "image {} has label {} outside [0, {num_classes})",
                    s.id, s.label
                )));
            }
            if Some(s.image.shape()) != shape.as_deref() || s.image.rank() != 3 {
                return Err(Error::invalid(format!(
                    "image {} has shape {:?}, expected {:?} of rank 3",
                    s.id,
                    s.image.shape(),
                    shape
                )));
            }
        }
        if let Some(names) = &class_names {
            if names.len() != num_classes {
                return Err(Error::invalid(format!(
                    "{} class names for {num_classes} classes",
                    names.len()
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            class_names,
            split: split.into(),
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Batch handles whose `slot` is the sample index.
    pub fn refs(&self) -> Vec<ImageRef> {
        self.samples
            .iter()
            .enumerate()
            .map(|(slot, s)| ImageRef {
                id: s.id,
                class_label: s.label,
                slot,
                source: None,
            })
            .collect()
    }

    pub(crate) fn with_samples(&self, samples: Vec<Sample>, split: String) -> Dataset {
        Dataset {
            samples,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            split,
            normalized: self.normalized,
        }
    }
}

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PER_FILE: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Parses one binary batch. Ids are `first_id, first_id + 1, …` in record order.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path, first_id: u64) -> Result<Vec<Sample>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::CifarTruncated {
            path: path.to_path_buf(),
            offset: bytes.len() / CIFAR_RECORD * CIFAR_RECORD,
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label > 9 {
                return Err(Error::CifarBadLabel {
                    path: path.to_path_buf(),
                    offset: i * CIFAR_RECORD,
                    label,
                });
            }
            let pixels = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(Sample {
                id: first_id + i as u64,
                label: label as usize,
                image: Tensor::from_vec(&[3, 32, 32], pixels)?,
            })
        })
        .collect()
}

/// Reads one batch file; `expected_records` enforces the standard size.
pub fn read_cifar_file(
    path: &Path,
    first_id: u64,
    expected_records: Option<usize>,
) -> Result<Vec<Sample>> {
    if !path.is_file() {
        return Err(Error::CifarMissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let samples = parse_cifar_batch(&bytes, path, first_id)?;
    if let Some(expected) = expected_records {
        if samples.len() != expected {
            return Err(Error::CifarWrongSize {
                path: path.to_path_buf(),
                records: samples.len(),
                expected,
            });
        }
    }
    Ok(samples)
}

/// `(train, test)` from the six standard batch files, each required to hold
/// exactly 10 000 records. Train ids start at 0, test ids follow them.
pub fn read_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    read_cifar10_with(dir, Some(CIFAR_PER_FILE))
}

/// As [`read_cifar10`], with the per-file record count check optional.
pub fn read_cifar10_with(
    dir: &Path,
    records_per_file: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let names = || Some(CIFAR_CLASSES.iter().map(|s| s.to_string()).collect());
    if let Some(missing) = CIFAR_TRAIN_FILES
        .iter()
        .chain([&CIFAR_TEST_FILE])
        .map(|f| dir.join(f))
        .find(|p| !p.is_file())
    {
        return Err(Error::CifarMissingFile(missing));
    }
    let mut train = Vec::new();
    for file in CIFAR_TRAIN_FILES {
        let batch = read_cifar_file(&dir.join(file), train.len() as u64, records_per_file)?;
        train.extend(batch);
    }
    let test = read_cifar_file(
        &dir.join(CIFAR_TEST_FILE),
        train.len() as u64,
        records_per_file,
    )?;
    Ok((
        Dataset::new(train, 10, names(), "train")?,
        Dataset::new(test, 10, names(), "test")?,
    ))
}

/// Parameters of [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SyntheticSpec {
    /// 4 classes × 200 images of 3×16×16 at σ = 0.05.
    pub fn desk() -> Self {
        SyntheticSpec {
            num_classes: 4,
            per_class: 200,
            channels: 3,
            height: 16,
            width: 16,
            noise_sigma: 0.05,
        }
    }
}

const GRID: usize = 4;

/// Balanced 16-bit codes chosen greedily to maximize the minimum pairwise
/// Hamming distance (ties to the smallest code).
fn grid_codes(n: usize) -> Vec<u16> {
    let candidates: Vec<u16> = (0..=u16::MAX).filter(|c| c.count_ones() == 8).collect();
    let mut chosen = vec![candidates[0]];
    let mut min_dist: Vec<u32> = candidates
        .iter()
        .map(|c| (c ^ chosen[0]).count_ones())
        .collect();
    while chosen.len() < n {
        let (best, _) = min_dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        let code = candidates[best];
        chosen.push(code);
        for (d, c) in min_dist.iter_mut().zip(&candidates) {
            *d = (*d).min((c ^ code).count_ones());
        }
    }
    chosen
}

/// Noise-free image of class `c`: a 4×4 on/off grid pattern (0.15 / 0.75)
/// plus a class colour tint of at most 0.25 per channel.
pub fn class_template(
    code: u16,
    class: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> Tensor {
    let mut data = Vec::with_capacity(channels * height * width);
    for ch in 0..channels {
        let tint = 0.25 * ((class as f64 * 0.618_033_988_75 + ch as f64 / channels as f64) % 1.0);
        for y in 0..height {
            for x in 0..width {
                let cell = (y * GRID / height) * GRID + x * GRID / width;
                let bit = f64::from((code >> cell) & 1);
                data.push(0.15 + 0.6 * bit + tint);
            }
        }
    }
    Tensor::from_vec(&[channels, height, width], data).expect("consistent shape")
}

/// Class templates plus i.i.d. Gaussian noise, clipped to `[0, 1]`.
/// Ids run class-major from 0.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Dataset> {
    if spec.num_classes < 2 || spec.per_class < 2 {
        return Err(Error::invalid(
            "synthetic data needs >= 2 classes and >= 2 images per class",
        ));
    }
    if spec.num_classes > 1000 {
        return Err(Error::invalid(
            "synthetic data supports at most 1000 classes",
        ));
    }
    if spec.channels == 0 || spec.height < GRID || spec.width < GRID {
        return Err(Error::invalid(format!(
            "synthetic images need >= 1 channel and >= {GRID}x{GRID} pixels"
        )));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be >= 0, got {}",
            spec.noise_sigma
        )));
    }
    let codes = grid_codes(spec.num_classes);
    let mut samples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for (c, &code) in codes.iter().enumerate() {
        let template = class_template(code, c, spec.channels, spec.height, spec.width);
        for _ in 0..spec.per_class {
            let mut image = template.clone();
            if spec.noise_sigma > 0.0 {
                for v in image.data_mut() {
                    *v = (*v + spec.noise_sigma * rng.normal()).clamp(0.0, 1.0);
                }
            }
            samples.push(Sample {
                id: samples.len() as u64,
                label: c,
                image,
            });
        }
    }
    Dataset::new(samples, spec.num_classes, None, "synthetic")
}

/// Largest-remainder allocation of `n` items to `fractions`.
fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Disjoint, covering split. Stratified mode allocates every class
/// separately, so per-class proportions are kept within one image. Each part
/// is returned in id order and tagged `"{split}/{k}"`.
pub fn split(
    dataset: &Dataset,
    fractions: &[f64],
    stratified: bool,
    rng: &mut Rng,
) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::invalid(format!(
            "invalid split fractions {fractions:?}"
        )));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} do not sum to 1"
        )));
    }
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in dataset.samples.iter().enumerate() {
            by_class.entry(s.label).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..dataset.len()).collect()]
    };
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for mut group in groups {
        rng.shuffle(&mut group);
        let mut rest = group.as_slice();
        for (part, count) in parts.iter_mut().zip(allocate(group.len(), fractions)) {
            let (take, tail) = rest.split_at(count);
            part.extend_from_slice(take);
            rest = tail;
        }
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(k, mut idx)| {
            idx.sort_by_key(|&i| dataset.samples[i].id);
            let samples = idx
                .into_iter()
                .map(|i| dataset.samples[i].clone())
                .collect();
            dataset.with_samples(samples, format!("{}/{k}", dataset.split))
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    num_classes: usize,
    class_names: Option<Vec<String>>,
    split: String,
    #[serde(default)]
    normalized: bool,
    ids: Vec<u64>,
    labels: Vec<usize>,
}

const DATASET_FORMAT: &str = "siamese-dataset";

/// Writes the dataset as one `images` tensor `[N, C, H, W]` with ids and
/// labels in the JSON header.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let shape = dataset
        .image_shape()
        .ok_or_else(|| Error::invalid("cannot save an empty dataset"))?;
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        num_classes: dataset.num_classes,
        class_names: dataset.class_names.clone(),
        split: dataset.split.clone(),
        normalized: dataset.normalized,
        ids: dataset.samples.iter().map(|s| s.id).collect(),
        labels: dataset.samples.iter().map(|s| s.label).collect(),
    };
    let mut all_shape = vec![dataset.len()];
    all_shape.extend_from_slice(shape);
    let data = dataset
        .samples
        .iter()
        .flat_map(|s| s.image.data().iter().copied())
        .collect();
    let images = Tensor::from_vec(&all_shape, data)?;
    let json = serde_json::to_string(&header).expect("header serializes");
    write_container(path, &json, &[("images", &images)])
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let malformed = |message: String| Error::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let (json, tensors) = read_container(path)?;
    let header: DatasetHeader =
        serde_json::from_str(&json).map_err(|e| malformed(format!("dataset header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(malformed(format!(
            "not a dataset file (format {:?})",
            header.format
        )));
    }
    let [(name, images)] = <[(String, Tensor); 1]>::try_from(tensors)
        .map_err(|t| malformed(format!("expected one tensor, found {}", t.len())))?;
    let shape = images.shape();
    if name != "images"
        || shape.len() != 4
        || shape[0] != header.ids.len()
        || header.labels.len() != header.ids.len()
    {
        return Err(malformed(format!(
            "images tensor {name:?} {shape:?} does not match header"
        )));
    }
    let per = shape[1] * shape[2] * shape[3];
    let image_shape = [shape[1], shape[2], shape[3]];
    let samples = images
        .data()
        .chunks_exact(per)
        .zip(header.ids.iter().zip(&header.labels))
        .map(|(px, (&id, &label))| {
            Ok(Sample {
                id,
                label,
                image: Tensor::from_vec(&image_shape, px.to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset::new(
        samples,
        header.num_classes,
        header.class_names,
        header.split,
    )
    .map_err(|e| malformed(e.to_string()))?;
    dataset.normalized = header.normalized;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::squared_distance;

    fn record(label: u8, pixel: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..3072).map(pixel));
        r
    }

    #[test]
    fn single_record_fixture() {
        let bytes = record(3, |_| 255);
        let got = parse_cifar_batch(&bytes, Path::new("x.bin"), 7).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].label, 3);
        assert_eq!(got[0].id, 7);
        assert!(got[0].image.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn record_layout_is_channel_planar_row_major() {
        // Pixel byte k encodes its own position modulo 251.
        let bytes = record(0, |k| (k % 251) as u8);
        let img = &parse_cifar_batch(&bytes, Path::new("x.bin"), 0).unwrap()[0].image;
        let at = |c: usize, y: usize, x: usize| img.data()[(c * 32 + y) * 32 + x];
        let byte = |c: usize, y: usize, x: usize| ((c * 1024 + y * 32 + x) % 251) as f64 / 255.0;
        for (c, y, x) in [(0, 0, 1), (1, 0, 0), (2, 31, 31), (1, 5, 17)] {
            assert_eq!(at(c, y, x), byte(c, y, x));
        }
    }

    #[test]
    fn truncated_and_bad_label_errors() {
        let mut bytes = record(1, |_| 0);
        bytes.extend(record(2, |_| 0));
        bytes.truncate(CIFAR_RECORD + 100);
        match parse_cifar_batch(&bytes, Path::new("t.bin"), 0) {
            Err(Error::CifarTruncated { offset, .. }) => assert_eq!(offset, CIFAR_RECORD),
            other => panic!("{other:?}"),
        }
        let mut bytes = record(1, |_| 0);
        bytes.extend(record(10, |_| 0));
        match parse_cifar_batch(&bytes, Path::new("b.bin"), 0) {
            Err(Error::CifarBadLabel { offset, label, .. }) => {
                assert_eq!((offset, label), (CIFAR_RECORD, 10))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn directory_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_cifar10(dir.path()),
            Err(Error::CifarMissingFile(_))
        ));
        for f in CIFAR_TRAIN_FILES.iter().chain([&CIFAR_TEST_FILE]) {
            std::fs::write(dir.path().join(f), record(4, |_| 9)).unwrap();
        }
        assert!(matches!(
            read_cifar10(dir.path()),
            Err(Error::CifarWrongSize {
                records: 1,
                expected: 10_000,
                ..
            })
        ));
        let (train, test) = read_cifar10_with(dir.path(), None).unwrap();
        assert_eq!((train.len(), test.len()), (5, 1));
        assert_eq!(test.samples[0].id, 5);
        assert_eq!(train.class_names.as_ref().unwrap()[4], "deer");
    }

    fn spec(sigma: f64) -> SyntheticSpec {
        SyntheticSpec {
            noise_sigma: sigma,
            per_class: 10,
            ..SyntheticSpec::desk()
        }
    }

    #[test]
    fn synthetic_without_noise_is_templated() {
        let d = gen_synthetic(&spec(0.0), &mut Rng::new(0)).unwrap();
        assert_eq!(d.len(), 40);
        for s in &d.samples {
            let first = d.samples.iter().find(|t| t.label == s.label).unwrap();
            assert_eq!(s.image, first.image);
        }
    }

    #[test]
    fn templates_differ_enough() {
        let classes = 10;
        let codes = grid_codes(classes);
        let t: Vec<Tensor> = (0..classes)
            .map(|c| class_template(codes[c], c, 3, 16, 16))
            .collect();
        for a in 0..classes {
            for b in a + 1..classes {
                let differing = t[a]
                    .data()
                    .iter()
                    .zip(t[b].data())
                    .filter(|(x, y)| (*x - *y).abs() >= 0.2)
                    .count();
                assert!(differing * 10 >= t[a].len(), "{a} vs {b}: {differing}");
            }
        }
    }

    #[test]
    fn synthetic_is_separable_and_deterministic() {
        for sigma in [0.05, 0.1] {
            let d = gen_synthetic(&spec(sigma), &mut Rng::new(3)).unwrap();
            assert_eq!(d, gen_synthetic(&spec(sigma), &mut Rng::new(3)).unwrap());
            let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
            for (i, a) in d.samples.iter().enumerate() {
                for b in &d.samples[i + 1..] {
                    let dist = squared_distance(&a.image, &b.image).unwrap().sqrt();
                    if a.label == b.label {
                        intra += dist;
                        ni += 1;
                    } else {
                        inter += dist;
                        nx += 1;
                    }
                }
            }
            assert!(intra / (ni as f64) < inter / (nx as f64));
            assert!(d.samples.iter().all(|s| s
                .image
                .data()
                .iter()
                .all(|v| (0.0..=1.0).contains(v))));
        }
        assert!(gen_synthetic(
            &SyntheticSpec {
                num_classes: 1,
                ..spec(0.0)
            },
            &mut Rng::new(0)
        )
        .is_err());
    }

    #[test]
    fn split_cases() {
        let full = gen_synthetic(
            &SyntheticSpec {
                num_classes: 10,
                per_class: 100,
                height: 4,
                width: 4,
                ..spec(0.0)
            },
            &mut Rng::new(1),
        )
        .unwrap();
        let whole = split(&full, &[1.0], true, &mut Rng::new(2)).unwrap();
        assert_eq!(whole[0].samples, full.samples);
        let parts = split(&full, &[0.8, 0.2], true, &mut Rng::new(2)).unwrap();
        assert_eq!(parts[0].class_counts(), vec![80; 10]);
        assert_eq!(parts[1].class_counts(), vec![20; 10]);
        let mut ids: Vec<u64> = parts
            .iter()
            .flat_map(|p| p.samples.iter().map(|s| s.id))
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..1000).collect::<Vec<u64>>());
        assert!(split(&full, &[0.5, 0.6], true, &mut Rng::new(2)).is_err());
    }

    #[test]
    fn uneven_stratified_split_is_within_one() {
        let full = gen_synthetic(
            &SyntheticSpec {
                num_classes: 3,
                per_class: 7,
                height: 4,
                width: 4,
                ..spec(0.0)
            },
            &mut Rng::new(1),
        )
        .unwrap();
        let fr = [0.5, 0.3, 0.2];
        let parts = split(&full, &fr, true, &mut Rng::new(9)).unwrap();
        for (p, f) in parts.iter().zip(fr) {
            for c in p.class_counts() {
                assert!((c as f64 - 7.0 * f).abs() <= 1.0);
            }
        }
        let plain = split(&full, &fr, false, &mut Rng::new(9)).unwrap();
        assert_eq!(plain.iter().map(Dataset::len).sum::<usize>(), 21);
    }

    #[test]
    fn dataset_dump_round_trips() {
        let d = gen_synthetic(&spec(0.05), &mut Rng::new(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.simn");
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);
    }
}
