//! Exhaustive hyperparameter grid search with a resumable leaderboard.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{build_network, Activation, HyperParams, Network};
use crate::seed::derive_seed;
use crate::training::{train_sequences, TrainConfig};

pub const LEADERBOARD_HEADER: [&str; 10] = [
    "combo_index",
    "l_in2rec",
    "l_lstm",
    "l_rec2out",
    "n",
    "activation",
    "val_loss",
    "best_epoch",
    "status",
    "elapsed_ms",
];

/// Candidate values per hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_in2rec: Vec<usize>,
    pub n_lstm: Vec<usize>,
    pub n_rec2out: Vec<usize>,
    pub width: Vec<usize>,
    pub activation: Vec<Activation>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_in2rec: vec![1, 2, 4],
            n_lstm: vec![1, 2, 4],
            n_rec2out: vec![1, 2, 4],
            width: vec![32, 64, 128, 256],
            activation: vec![Activation::Tanh, Activation::Relu],
        }
    }
}

impl GridSpec {
    pub fn single(hp: HyperParams) -> Self {
        Self {
            n_in2rec: vec![hp.n_in2rec],
            n_lstm: vec![hp.n_lstm],
            n_rec2out: vec![hp.n_rec2out],
            width: vec![hp.width],
            activation: vec![hp.activation],
        }
    }

    pub fn cardinality(&self) -> usize {
        self.n_in2rec.len() * self.n_lstm.len() * self.n_rec2out.len() * self.width.len() * self.activation.len()
    }
}

/// Cartesian product with `n_in2rec` outermost and the activation innermost.
pub fn enumerate_grid(grid: &GridSpec) -> Result<Vec<HyperParams>> {
    if grid.cardinality() == 0 {
        return Err(Error::Tuning("every grid list must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(grid.cardinality());
    for &a in &grid.n_in2rec {
        for &b in &grid.n_lstm {
            for &c in &grid.n_rec2out {
                for &n in &grid.width {
                    for &phi in &grid.activation {
                        out.push(HyperParams::new(a, b, c, n, phi).map_err(|e| Error::Tuning(e.to_string()))?);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub combo_index: usize,
    pub hyper_params: HyperParams,
    /// Best validation loss; `None` for failed jobs.
    pub val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub status: JobStatus,
    pub elapsed_ms: u128,
}

impl GridRecord {
    fn to_row(&self) -> Vec<String> {
        let hp = &self.hyper_params;
        vec![
            self.combo_index.to_string(),
            hp.n_in2rec.to_string(),
            hp.n_lstm.to_string(),
            hp.n_rec2out.to_string(),
            hp.width.to_string(),
            hp.activation.to_string(),
            self.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            self.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            match self.status {
                JobStatus::Ok => "ok".into(),
                JobStatus::Failed => "failed".into(),
            },
            self.elapsed_ms.to_string(),
        ]
    }

    fn from_row(row: &csv::StringRecord) -> Result<Self> {
        let bad = || Error::Tuning(format!("malformed leaderboard row: {}", row.iter().collect::<Vec<_>>().join(",")));
        if row.len() != LEADERBOARD_HEADER.len() {
            return Err(bad());
        }
        let int = |i: usize| row[i].parse::<usize>().map_err(|_| bad());
        let hyper_params = HyperParams::new(
            int(1)?,
            int(2)?,
            int(3)?,
            int(4)?,
            row[5].parse().map_err(|_| bad())?,
        )
        .map_err(|_| bad())?;
        let status = match &row[8] {
            "ok" => JobStatus::Ok,
            "failed" => JobStatus::Failed,
            _ => return Err(bad()),
        };
        let val_loss = match (&row[6], status) {
            ("", JobStatus::Failed) => None,
            (s, JobStatus::Ok) => Some(s.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        let best_epoch = match &row[7] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad())?),
        };
        Ok(Self {
            combo_index: int(0)?,
            hyper_params,
            val_loss,
            best_epoch,
            status,
            elapsed_ms: row[9].parse().map_err(|_| bad())?,
        })
    }
}

/// Writes records sorted by combination index.
pub fn write_leaderboard<W: Write>(records: &[GridRecord], sink: W) -> Result<()> {
    let mut sorted: Vec<&GridRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.combo_index);
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(LEADERBOARD_HEADER)?;
    for r in sorted {
        w.write_record(r.to_row())?;
    }
    w.flush().map_err(|e| Error::io("leaderboard", e))
}

pub fn read_leaderboard(content: &[u8]) -> Result<Vec<GridRecord>> {
    let mut r = csv::Reader::from_reader(content);
    if r.headers()?.iter().ne(LEADERBOARD_HEADER) {
        return Err(Error::Tuning(format!(
            "leaderboard header must be `{}`",
            LEADERBOARD_HEADER.join(",")
        )));
    }
    r.records().map(|row| GridRecord::from_row(&row?)).collect()
}

/// Ordering key: lower loss, then fewer parameters, then earlier index.
fn rank_key(r: &GridRecord) -> Option<(f64, usize, usize)> {
    match (r.status, r.val_loss) {
        (JobStatus::Ok, Some(loss)) => Some((loss, r.hyper_params.parameter_count(), r.combo_index)),
        _ => None,
    }
}

fn better(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).is_lt()
}

/// Position in `records` of the winning record, or `None` if every job failed.
pub fn select_winner(records: &[GridRecord]) -> Option<usize> {
    let mut best: Option<(usize, (f64, usize, usize))> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(key) = rank_key(r) {
            if best.map_or(true, |(_, b)| better(key, b)) {
                best = Some((i, key));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub variant: String,
    pub base_seed: u64,
    /// Sorted by combination index.
    pub records: Vec<GridRecord>,
    /// Position of the winner in `records`.
    pub winner: usize,
}

impl GridResult {
    pub fn winner_record(&self) -> &GridRecord {
        &self.records[self.winner]
    }
}

/// Contents of `gridsearch.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub variant: String,
    pub base_seed: u64,
    pub combinations: usize,
    pub failed: usize,
    pub winner: GridRecord,
    pub winner_parameter_count: usize,
}

impl GridSummary {
    pub fn new(result: &GridResult) -> Self {
        let winner = result.winner_record().clone();
        Self {
            variant: result.variant.clone(),
            base_seed: result.base_seed,
            combinations: result.records.len(),
            failed: result.records.iter().filter(|r| r.status == JobStatus::Failed).count(),
            winner_parameter_count: winner.hyper_params.parameter_count(),
            winner,
        }
    }
}

/// Knobs that do not change which models are trained.
pub struct SearchOptions<'a> {
    /// Concurrent training jobs; 0 uses rayon's default.
    pub workers: usize,
    /// Leaderboard CSV appended as jobs complete and rewritten sorted at the end.
    pub leaderboard: Option<PathBuf>,
    /// Skip combinations already present in `leaderboard`.
    pub resume: bool,
    /// Per-combination override of the training configuration.
    pub config_override: Option<&'a (dyn Fn(usize, &HyperParams, &TrainConfig) -> TrainConfig + Sync)>,
}

impl Default for SearchOptions<'_> {
    fn default() -> Self {
        Self {
            workers: 0,
            leaderboard: None,
            resume: false,
            config_override: None,
        }
    }
}

/// Network and shuffle seeds for one combination.
pub fn job_seeds(base_seed: u64, combo_index: usize) -> (u64, u64) {
    let job = derive_seed(base_seed, combo_index as u64);
    (derive_seed(job, 0), derive_seed(job, 1))
}

pub struct SearchOutcome {
    pub result: GridResult,
    /// Trained winner, absent when it was loaded from a resumed leaderboard.
    pub winner_network: Option<Network>,
}

pub fn grid_search(
    data: &LabeledDataset,
    grid: &GridSpec,
    config: &TrainConfig,
    base_seed: u64,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    config.validate()?;
    let combos = enumerate_grid(grid)?;

    let mut done: BTreeMap<usize, GridRecord> = BTreeMap::new();
    if options.resume {
        if let Some(path) = options.leaderboard.as_deref().filter(|p| p.exists()) {
            let content = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            for r in read_leaderboard(&content)? {
                if combos.get(r.combo_index) != Some(&r.hyper_params) {
                    return Err(Error::Tuning(format!(
                        "leaderboard entry {} does not match the current grid",
                        r.combo_index
                    )));
                }
                done.insert(r.combo_index, r);
            }
        }
    }
    let sink = open_leaderboard(options.leaderboard.as_deref(), &done)?;

    let pending: Vec<(usize, HyperParams)> =
        combos.iter().copied().enumerate().filter(|(i, _)| !done.contains_key(i)).collect();
    let best: Mutex<Option<((f64, usize, usize), Network)>> = Mutex::new(None);

    let run = || -> Result<Vec<GridRecord>> {
        pending
            .par_iter()
            .map(|&(index, hp)| {
                let (net_seed, shuffle_seed) = job_seeds(base_seed, index);
                let mut job_config = match options.config_override {
                    Some(f) => f(index, &hp, config),
                    None => config.clone(),
                };
                job_config.shuffle_seed = shuffle_seed;
                let started = Instant::now();
                let outcome = build_network(hp, net_seed)
                    .and_then(|net| train_sequences(&net, &data.train, &data.validation, &job_config, |_| Ok(())));
                let elapsed_ms = started.elapsed().as_millis();
                let record = match outcome {
                    Ok((net, history)) => {
                        let record = GridRecord {
                            combo_index: index,
                            hyper_params: hp,
                            val_loss: Some(history.best_val_loss),
                            best_epoch: Some(history.best_epoch),
                            status: JobStatus::Ok,
                            elapsed_ms,
                        };
                        let key = rank_key(&record).expect("ok record");
                        let mut slot = best.lock().expect("winner lock");
                        if slot.as_ref().map_or(true, |(b, _)| better(key, *b)) {
                            *slot = Some((key, net));
                        }
                        record
                    }
                    Err(Error::Training(_)) => GridRecord {
                        combo_index: index,
                        hyper_params: hp,
                        val_loss: None,
                        best_epoch: None,
                        status: JobStatus::Failed,
                        elapsed_ms,
                    },
                    Err(e) => return Err(e),
                };
                if let Some(sink) = &sink {
                    let mut w = sink.lock().expect("leaderboard lock");
                    w.write_record(record.to_row())?;
                    w.flush().map_err(|e| Error::io("leaderboard", e))?;
                }
                Ok(record)
            })
            .collect()
    };
    let fresh = if options.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::Tuning(format!("cannot start worker pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };

    for r in fresh {
        done.insert(r.combo_index, r);
    }
    let records: Vec<GridRecord> = done.into_values().collect();
    if let Some(path) = &options.leaderboard {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        write_leaderboard(&records, file)?;
    }
    let winner = select_winner(&records).ok_or_else(|| Error::Tuning("every grid combination failed".into()))?;
    let winner_network = best
        .into_inner()
        .expect("winner lock")
        .filter(|(key, _)| key.2 == records[winner].combo_index)
        .map(|(_, net)| net);
    Ok(SearchOutcome {
        result: GridResult {
            variant: data.spec.dir_name(),
            base_seed,
            records,
            winner,
        },
        winner_network,
    })
}

type SharedWriter = Mutex<csv::Writer<File>>;

/// Rewrites the leaderboard with the resumed records and leaves it open for appending.
fn open_leaderboard(path: Option<&Path>, done: &BTreeMap<usize, GridRecord>) -> Result<Option<SharedWriter>> {
    let Some(path) = path else { return Ok(None) };
    let ctx = |e| Error::io(path.display().to_string(), e);
    let records: Vec<GridRecord> = done.values().cloned().collect();
    write_leaderboard(&records, File::create(path).map_err(ctx)?)?;
    let file = OpenOptions::new().append(true).open(path).map_err(ctx)?;
    Ok(Some(Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(file))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_216_combinations() {
        let combos = enumerate_grid(&GridSpec::default()).unwrap();
        assert_eq!(combos.len(), 216);
        assert_eq!(combos[0], HyperParams::new(1, 1, 1, 32, Activation::Tanh).unwrap());
        assert_eq!(combos[1].activation, Activation::Relu);
        assert_eq!(combos[2].width, 64);
        assert_eq!(combos[215], HyperParams::new(4, 4, 4, 256, Activation::Relu).unwrap());
        let unique: std::collections::HashSet<_> = combos.iter().collect();
        assert_eq!(unique.len(), 216);
    }

    #[test]
    fn grid_sizes() {
        let hp = HyperParams::new(2, 1, 4, 16, Activation::Relu).unwrap();
        assert_eq!(enumerate_grid(&GridSpec::single(hp)).unwrap(), vec![hp]);
        let grid = GridSpec {
            n_in2rec: vec![1, 2],
            n_lstm: vec![1],
            n_rec2out: vec![1],
            width: vec![4, 8, 16],
            activation: vec![Activation::Tanh],
        };
        assert_eq!(enumerate_grid(&grid).unwrap().len(), 6);
        let empty = GridSpec {
            width: vec![],
            ..GridSpec::default()
        };
        assert!(enumerate_grid(&empty).is_err());
    }

    #[test]
    fn parameter_formula_matches_allocation() {
        for hp in enumerate_grid(&GridSpec::default()).unwrap() {
            let net = build_network(hp, 1).unwrap();
            let allocated: usize = net.tensors().iter().map(|t| t.data.len()).sum();
            assert_eq!(hp.parameter_count(), allocated, "{hp}");
        }
    }

    fn record(i: usize, width: usize, loss: Option<f64>) -> GridRecord {
        GridRecord {
            combo_index: i,
            hyper_params: HyperParams::new(1, 1, 1, width, Activation::Tanh).unwrap(),
            val_loss: loss,
            best_epoch: loss.map(|_| 3),
            status: if loss.is_some() { JobStatus::Ok } else { JobStatus::Failed },
            elapsed_ms: 12,
        }
    }

    #[test]
    fn winner_tie_breaks() {
        let records = vec![record(0, 8, Some(0.5)), record(1, 4, Some(0.5)), record(2, 4, None), record(3, 4, Some(0.5))];
        assert_eq!(select_winner(&records), Some(1));
        let records = vec![record(0, 8, Some(0.4)), record(1, 4, Some(0.5))];
        assert_eq!(select_winner(&records), Some(0));
        assert_eq!(select_winner(&[record(0, 4, None)]), None);
    }

    #[test]
    fn leaderboard_round_trip_keeps_winner() {
        let records = vec![
            record(2, 4, Some(0.1 + 0.2)),
            record(0, 8, Some(0.30000000000000004)),
            record(1, 4, None),
        ];
        let mut buf = Vec::new();
        write_leaderboard(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "combo_index,l_in2rec,l_lstm,l_rec2out,n,activation,val_loss,best_epoch,status,elapsed_ms\n0,"
        ));
        let back = read_leaderboard(&buf).unwrap();
        assert_eq!(back.len(), 3);
        let w = select_winner(&back).unwrap();
        assert_eq!(back[w].combo_index, 2);
        assert!(back.contains(&records[0]) && back.contains(&records[2]));
    }

    #[test]
    fn job_seeds_are_distinct() {
        let (a, b) = job_seeds(5, 0);
        let (c, _) = job_seeds(5, 1);
        assert!(a != b && a != c);
    }
}
