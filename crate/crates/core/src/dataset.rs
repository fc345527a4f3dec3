//! Dataset variants: downsampling, windowing, stratified splits and the
//! on-disk archive layout.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{
    apply_standardizer, compute_features, fit_standardizer, FeatureSequence, FeatureVector,
    Standardizer, FEATURE_NAMES,
};
use crate::seed::sub_rng;
use crate::trajectory::{Labeled, RoadUserClass, Trajectory, TrajectoryCollection};

/// Sampling stride and window length of one dataset variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetVariantSpec {
    pub sampling_stride: usize,
    pub window_len: usize,
}

impl DatasetVariantSpec {
    pub fn new(sampling_stride: usize, window_len: usize) -> Result<Self> {
        if !matches!(sampling_stride, 1 | 2) {
            return Err(Error::Dataset(format!(
                "sampling stride must be 1 or 2, got {sampling_stride}"
            )));
        }
        if window_len <= 2 {
            return Err(Error::Dataset(format!(
                "window length must exceed 2 timesteps, got {window_len}"
            )));
        }
        Ok(Self {
            sampling_stride,
            window_len,
        })
    }

    /// The six variants: 1, 2 and 4 minutes at 1 s and 2 s sampling.
    pub fn standard_variants() -> [DatasetVariantSpec; 6] {
        [(1, 60), (1, 120), (1, 240), (2, 30), (2, 60), (2, 120)].map(|(s, w)| Self {
            sampling_stride: s,
            window_len: w,
        })
    }

    /// Directory name inside a dataset archive, e.g. `stride2_win30`.
    pub fn dir_name(&self) -> String {
        format!("stride{}_win{}", self.sampling_stride, self.window_len)
    }
}

/// Splits a trajectory into consecutive non-overlapping windows anchored at
/// index 0. The trailing remainder is dropped.
pub fn window_trajectory(traj: &Trajectory, window_len: usize) -> Vec<Trajectory> {
    assert!(window_len >= 2, "window length must be at least 2");
    (0..traj.len() / window_len)
        .map(|k| {
            let start = k * window_len;
            traj.slice(format!("{}#{k}", traj.id()), start..start + window_len)
        })
        .collect()
}

/// Keeps the fixes at even indices (0, 2, 4, ...).
pub fn downsample_alternate(traj: &Trajectory) -> Trajectory {
    traj.filter_samples(|i, _| i % 2 == 0)
        .expect("a non-empty trajectory keeps index 0")
}

/// Fractions for the two-stage split: the test share of the whole, then the
/// validation share of what remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            test: 0.25,
            validation: 0.20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class partition sizes `(train, validation, test)` for `n` items.
pub fn stratum_counts(n: usize, fractions: SplitFractions) -> (usize, usize, usize) {
    let test = round_half_up(n as f64 * fractions.test).min(n);
    let validation = round_half_up((n - test) as f64 * fractions.validation).min(n - test);
    (n - test - validation, validation, test)
}

/// Stratified, seeded split. Each class is shuffled with its own stream and
/// cut into test, validation and train in that order; partitions list the
/// classes in enumeration order.
pub fn stratified_split<T: Labeled>(items: Vec<T>, fractions: SplitFractions, seed: u64) -> Result<Split<T>> {
    for (name, f) in [("test", fractions.test), ("validation", fractions.validation)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Dataset(format!("{name} fraction {f} must lie in (0, 1)")));
        }
    }
    let mut by_class: [Vec<T>; 4] = Default::default();
    for item in items {
        by_class[item.label().index()].push(item);
    }
    if let Some(c) = RoadUserClass::ALL.iter().find(|c| by_class[c.index()].is_empty()) {
        return Err(Error::Dataset(format!("class {c} has no sequences to split")));
    }

    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (class_index, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(&mut sub_rng(seed, class_index as u64));
        let (_, n_val, n_test) = stratum_counts(members.len(), fractions);
        let mut rest = members.split_off(n_test);
        split.test.extend(members);
        let train = rest.split_off(n_val);
        split.validation.extend(rest);
        split.train.extend(train);
    }
    Ok(split)
}

/// Standardized train/validation/test partitions of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub train: Vec<FeatureSequence>,
    pub validation: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
    pub spec: DatasetVariantSpec,
    pub standardizer: Standardizer,
    pub split_seed: u64,
}

/// Summary written to `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: DatasetVariantSpec,
    pub split_seed: u64,
    pub fractions: SplitFractions,
    pub class_order: Vec<String>,
    pub counts: PartitionCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub train: [usize; 4],
    pub validation: [usize; 4],
    pub test: [usize; 4],
    pub train_total: usize,
    pub validation_total: usize,
    pub test_total: usize,
}

pub fn class_counts<T: Labeled>(items: &[T]) -> [usize; 4] {
    let mut counts = [0; 4];
    for item in items {
        counts[item.label().index()] += 1;
    }
    counts
}

/// Runs the full preprocessing chain for one variant: downsample (stride 2),
/// window, split windows, compute features, then standardize every partition
/// with statistics fitted on the training windows.
pub fn build_variant(
    collection: &TrajectoryCollection,
    spec: DatasetVariantSpec,
    fractions: SplitFractions,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut windows = Vec::new();
    for traj in collection.trajectories() {
        let source = if spec.sampling_stride == 2 {
            downsample_alternate(traj)
        } else {
            traj.clone()
        };
        windows.extend(window_trajectory(&source, spec.window_len));
    }
    let split = stratified_split(windows, fractions, seed)?;
    if split.train.is_empty() {
        return Err(Error::Dataset("training partition is empty".into()));
    }

    let features = |part: &[Trajectory]| -> Result<Vec<FeatureSequence>> {
        part.par_iter().map(compute_features).collect()
    };
    let train = features(&split.train)?;
    let validation = features(&split.validation)?;
    let test = features(&split.test)?;
    let standardizer = fit_standardizer(&train)?;
    let standardize =
        |part: Vec<FeatureSequence>| part.iter().map(|s| apply_standardizer(&standardizer, s)).collect();

    Ok(LabeledDataset {
        train: standardize(train),
        validation: standardize(validation),
        test: standardize(test),
        spec,
        standardizer: standardizer.clone(),
        split_seed: seed,
    })
}

const PARTITION_HEADER: [&str; 8] = [
    "sequence_id",
    "step_index",
    FEATURE_NAMES[0],
    FEATURE_NAMES[1],
    FEATURE_NAMES[2],
    FEATURE_NAMES[3],
    FEATURE_NAMES[4],
    "label",
];

/// Writes one partition as CSV, one row per timestep.
pub fn write_partition<W: std::io::Write>(sequences: &[FeatureSequence], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PARTITION_HEADER)?;
    for seq in sequences {
        for (i, step) in seq.steps.iter().enumerate() {
            let mut row = vec![seq.id.clone(), i.to_string()];
            row.extend(step.to_array().iter().map(|v| v.to_string()));
            row.push(seq.label.name().to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("partition csv", e))
}

/// Reads a partition CSV back into sequences. Rows of one sequence must be
/// contiguous and ordered by step index.
pub fn read_partition<R: std::io::Read>(source: R) -> Result<Vec<FeatureSequence>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(PARTITION_HEADER.iter().copied()) {
        return Err(Error::Dataset(format!(
            "unexpected partition header {:?}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<FeatureSequence> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Dataset(format!("partition row {}: invalid {what}", row + 1));
        let id = &record[0];
        let step: usize = record[1].parse().map_err(|_| bad("step_index"))?;
        let mut values = [0.0; 5];
        for (i, v) in values.iter_mut().enumerate() {
            *v = record[2 + i].parse().map_err(|_| bad(FEATURE_NAMES[i]))?;
        }
        let label: RoadUserClass = record[7].parse()?;
        let vector = FeatureVector::from_array(values);
        match out.last_mut() {
            Some(seq) if seq.id == id => {
                if step != seq.steps.len() || seq.label != label {
                    return Err(bad("step ordering or label"));
                }
                seq.steps.push(vector);
            }
            _ => {
                if step != 0 {
                    return Err(bad("step_index (sequence must start at 0)"));
                }
                out.push(FeatureSequence {
                    id: id.to_string(),
                    label,
                    steps: vec![vector],
                });
            }
        }
    }
    Ok(out)
}

pub fn read_partition_file(path: &Path) -> Result<Vec<FeatureSequence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_partition(std::io::BufReader::new(file))
}

impl LabeledDataset {
    pub fn meta(&self, fractions: SplitFractions) -> DatasetMeta {
        let counts = PartitionCounts {
            train: class_counts(&self.train),
            validation: class_counts(&self.validation),
            test: class_counts(&self.test),
            train_total: self.train.len(),
            validation_total: self.validation.len(),
            test_total: self.test.len(),
        };
        DatasetMeta {
            spec: self.spec,
            split_seed: self.split_seed,
            fractions,
            class_order: RoadUserClass::names().iter().map(|s| s.to_string()).collect(),
            counts,
        }
    }

    /// Writes `<root>/stride<k>_win<n>/` and returns that directory.
    pub fn write_archive(&self, root: &Path, fractions: SplitFractions) -> Result<PathBuf> {
        let dir = root.join(self.spec.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for (name, part) in [
            ("train.csv", &self.train),
            ("validation.csv", &self.validation),
            ("test.csv", &self.test),
        ] {
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            write_partition(part, std::io::BufWriter::new(file))?;
        }
        write_json(&dir.join("standardizer.json"), &self.standardizer)?;
        write_json(&dir.join("meta.json"), &self.meta(fractions))?;
        Ok(dir)
    }

    /// Reads a variant directory written by [`LabeledDataset::write_archive`].
    pub fn read_archive(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
        let stats: Standardizer = read_json(&dir.join("standardizer.json"))?;
        let standardizer = Standardizer::from_stats(stats.mean, stats.std)?;
        let dataset = Self {
            train: read_partition_file(&dir.join("train.csv"))?,
            validation: read_partition_file(&dir.join("validation.csv"))?,
            test: read_partition_file(&dir.join("test.csv"))?,
            spec: meta.spec,
            standardizer,
            split_seed: meta.split_seed,
        };
        let lens = dataset
            .train
            .iter()
            .chain(&dataset.validation)
            .chain(&dataset.test)
            .map(|s| s.len());
        if let Some(bad) = lens.into_iter().find(|&l| l != meta.spec.window_len) {
            return Err(Error::Dataset(format!(
                "sequence of length {bad} in a dataset with window length {}",
                meta.spec.window_len
            )));
        }
        Ok(dataset)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
