//! Labeled raw GNSS trajectories: data model, CSV ingestion and manifests.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;

/// Header line of the trajectory CSV format.
pub const TRAJECTORY_HEADER: [&str; 4] = ["timestamp_ms", "lat", "lon", "accuracy_m"];

/// The four road user classes, in one-hot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadUserClass {
    Pedestrian,
    Cyclist,
    Motorcyclist,
    PassengerCar,
}

impl RoadUserClass {
    pub const COUNT: usize = 4;
    pub const ALL: [RoadUserClass; 4] = [
        RoadUserClass::Pedestrian,
        RoadUserClass::Cyclist,
        RoadUserClass::Motorcyclist,
        RoadUserClass::PassengerCar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadUserClass::Pedestrian => "pedestrian",
            RoadUserClass::Cyclist => "cyclist",
            RoadUserClass::Motorcyclist => "motorcyclist",
            RoadUserClass::PassengerCar => "passenger_car",
        }
    }

    pub fn names() -> [&'static str; 4] {
        Self::ALL.map(Self::name)
    }
}

impl fmt::Display for RoadUserClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoadUserClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::Collection(format!(
                    "unknown class {s:?}; valid labels are {}",
                    Self::names().join(", ")
                ))
            })
    }
}

/// Anything carrying a class label.
pub trait Labeled {
    fn label(&self) -> RoadUserClass;
}

/// One GNSS fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub timestamp_ms: i64,
    pub point: GeoPoint,
    pub accuracy_m: f64,
}

impl RawSample {
    pub fn new(timestamp_ms: i64, lat: f64, lon: f64, accuracy_m: f64) -> Result<Self> {
        let point = GeoPoint::new(lat, lon)?;
        if !(accuracy_m >= 0.0) || !accuracy_m.is_finite() {
            return Err(Error::Validation(format!(
                "accuracy {accuracy_m} must be a non-negative finite number"
            )));
        }
        Ok(Self {
            timestamp_ms,
            point,
            accuracy_m,
        })
    }
}

/// An ordered, labeled sequence of fixes from one road user.
///
/// Construction enforces a non-empty sample list with non-decreasing
/// timestamps; equal consecutive timestamps are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    id: String,
    label: RoadUserClass,
    samples: Vec<RawSample>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, label: RoadUserClass, samples: Vec<RawSample>) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::Validation(format!("trajectory {id:?} has no samples")));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.point.is_valid() {
                return Err(Error::Validation(format!(
                    "trajectory {id:?} sample {}: coordinates ({}, {}) out of range",
                    i + 1,
                    s.point.lat,
                    s.point.lon
                )));
            }
            if !(s.accuracy_m >= 0.0) {
                return Err(Error::Validation(format!(
                    "trajectory {id:?} sample {}: negative accuracy",
                    i + 1
                )));
            }
        }
        if let Some(i) = first_decreasing(&samples) {
            return Err(Error::Validation(format!(
                "trajectory {id:?} sample {}: timestamp decreases",
                i + 1
            )));
        }
        Ok(Self { id, label, samples })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> RoadUserClass {
        self.label
    }

    pub fn samples(&self) -> &[RawSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the fixes in seconds.
    pub fn duration_s(&self) -> f64 {
        let first = self.samples.first().map_or(0, |s| s.timestamp_ms);
        let last = self.samples.last().map_or(0, |s| s.timestamp_ms);
        (last - first) as f64 / 1000.0
    }

    /// A new trajectory over a contiguous range of samples. The invariants
    /// carry over from `self`, so no re-validation is needed.
    pub fn slice(&self, id: impl Into<String>, range: std::ops::Range<usize>) -> Trajectory {
        assert!(!range.is_empty() && range.end <= self.samples.len());
        Trajectory {
            id: id.into(),
            label: self.label,
            samples: self.samples[range].to_vec(),
        }
    }

    /// Keeps only samples selected by `keep`, preserving order.
    pub fn filter_samples(&self, mut keep: impl FnMut(usize, &RawSample) -> bool) -> Result<Trajectory> {
        let samples: Vec<RawSample> = self
            .samples
            .iter()
            .enumerate()
            .filter(|(i, s)| keep(*i, s))
            .map(|(_, s)| *s)
            .collect();
        Trajectory::new(self.id.clone(), self.label, samples)
    }

    /// Drops fixes whose estimated accuracy exceeds `max_accuracy_m`.
    pub fn filter_accuracy(&self, max_accuracy_m: f64) -> Result<Trajectory> {
        self.filter_samples(|_, s| s.accuracy_m <= max_accuracy_m)
    }

    /// Serializes to the trajectory CSV format. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = TRAJECTORY_HEADER.join(",");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.timestamp_ms, s.point.lat, s.point.lon, s.accuracy_m
            ));
        }
        out
    }
}

impl Labeled for Trajectory {
    fn label(&self) -> RoadUserClass {
        self.label
    }
}

fn first_decreasing(samples: &[RawSample]) -> Option<usize> {
    samples
        .windows(2)
        .position(|w| w[1].timestamp_ms < w[0].timestamp_ms)
        .map(|i| i + 1)
}

/// Parses trajectory CSV content. Rows are numbered from 1, excluding the header.
pub fn parse_trajectory_file(content: &[u8], id: &str, label: RoadUserClass) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(content);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{id}: unreadable header: {e}")))?;
    if headers.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "{id}: expected header {:?}, found {:?}",
            TRAJECTORY_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut samples: Vec<RawSample> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Format(format!("{id} row {row}: {e}")))?;
        if record.len() != 4 {
            return Err(Error::Format(format!(
                "{id} row {row}: expected 4 fields, found {}",
                record.len()
            )));
        }
        let timestamp_ms: i64 = parse_field(id, row, "timestamp_ms", &record[0])?;
        let lat: f64 = parse_field(id, row, "lat", &record[1])?;
        let lon: f64 = parse_field(id, row, "lon", &record[2])?;
        let accuracy_m: f64 = parse_field(id, row, "accuracy_m", &record[3])?;
        let sample = RawSample::new(timestamp_ms, lat, lon, accuracy_m)
            .map_err(|e| Error::Validation(format!("{id} row {row}: {}", inner_message(&e))))?;
        if let Some(prev) = samples.last() {
            if sample.timestamp_ms < prev.timestamp_ms {
                return Err(Error::Validation(format!(
                    "{id} row {row}: timestamp {} precedes previous timestamp {}",
                    sample.timestamp_ms, prev.timestamp_ms
                )));
            }
        }
        samples.push(sample);
    }
    Trajectory::new(id, label, samples)
}

fn parse_field<T: FromStr>(id: &str, row: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Format(format!("{id} row {row}: cannot parse {name} from {raw:?}")))
}

fn inner_message(e: &Error) -> String {
    match e {
        Error::Validation(m) | Error::Format(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Trajectories plus free-text provenance. Ids are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCollection {
    trajectories: Vec<Trajectory>,
    pub provenance: String,
}

impl TrajectoryCollection {
    pub fn new(trajectories: Vec<Trajectory>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &trajectories {
            if !seen.insert(t.id()) {
                return Err(Error::Collection(format!("duplicate trajectory id {:?}", t.id())));
            }
        }
        Ok(Self {
            trajectories,
            provenance: provenance.into(),
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Applies the optional accuracy filter to every trajectory.
    pub fn filter_accuracy(&self, max_accuracy_m: f64) -> Result<Self> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| t.filter_accuracy(max_accuracy_m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(trajectories, self.provenance.clone())
    }

    /// Writes `manifest.json` plus one CSV per trajectory into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut entries = Vec::with_capacity(self.trajectories.len());
        for t in &self.trajectories {
            let file = format!("{}.csv", t.id());
            let path = dir.join(&file);
            std::fs::write(&path, t.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))?;
            entries.push(ManifestEntry {
                id: t.id().to_string(),
                label: t.label().name().to_string(),
                path: file,
            });
        }
        let manifest = Manifest {
            trajectories: entries,
            provenance: self.provenance.clone(),
        };
        let path = dir.join("manifest.json");
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub trajectories: Vec<ManifestEntry>,
    #[serde(default)]
    pub provenance: String,
}

/// Loads a collection from manifest JSON; `resolve` fetches the bytes of
/// each referenced trajectory file.
pub fn load_collection<F>(manifest: &[u8], mut resolve: F) -> Result<TrajectoryCollection>
where
    F: FnMut(&str) -> std::io::Result<Vec<u8>>,
{
    let manifest: Manifest = serde_json::from_slice(manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let mut seen = HashSet::new();
    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let label: RoadUserClass = entry.label.parse()?;
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::Collection(format!("duplicate trajectory id {:?}", entry.id)));
        }
        let bytes = resolve(&entry.path).map_err(|e| {
            Error::Collection(format!("missing trajectory file {:?}: {e}", entry.path))
        })?;
        trajectories.push(parse_trajectory_file(&bytes, &entry.id, label)?);
    }
    TrajectoryCollection::new(trajectories, manifest.provenance)
}

/// Loads a collection whose file paths are relative to the manifest's directory.
pub fn load_collection_from_path(manifest_path: &Path) -> Result<TrajectoryCollection> {
    let bytes = std::fs::read(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    load_collection(&bytes, |p| std::fs::read(base.join(p)))
}

/// Per-class counts and duration shares of a collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub counts: [usize; 4],
    pub total_hours: f64,
    pub duration_share: [f64; 4],
}

pub fn summarize(collection: &TrajectoryCollection) -> Result<CollectionSummary> {
    if collection.is_empty() {
        return Err(Error::Collection("cannot summarize an empty collection".into()));
    }
    let mut counts = [0usize; 4];
    let mut seconds = [0.0f64; 4];
    for t in collection.trajectories() {
        counts[t.label().index()] += 1;
        seconds[t.label().index()] += t.duration_s();
    }
    let total: f64 = seconds.iter().sum();
    if total <= 0.0 {
        return Err(Error::Collection("collection covers zero duration".into()));
    }
    Ok(CollectionSummary {
        counts,
        total_hours: total / 3600.0,
        duration_share: seconds.map(|s| s / total),
    })
}
