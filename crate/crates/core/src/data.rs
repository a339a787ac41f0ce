//! Trial-level dataset model: parsing, validation, informativeness
//! classification and label inversion.
//!
//! A dataset file is comma-delimited UTF-8 with the header
//!
//! ```text
//! meta_id,trial_id,events_treat,size_treat,events_ctrl,size_ctrl,<flag_1>,...,<flag_p>
//! ```
//!
//! Lines starting with `#` are comments. Each flag column is a binary
//! indicator (`0` or `1`) for one study characteristic.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::stats::quantile_sorted;

const FIXED_COLUMNS: [&str; 6] = [
    "meta_id",
    "trial_id",
    "events_treat",
    "size_treat",
    "events_ctrl",
    "size_ctrl",
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("header: {0}")]
    Header(String),
    #[error("events exceed size at row {row}")]
    EventsExceedSize { row: u64 },
    #[error("duplicate trial '{trial_id}' in meta-analysis '{meta_id}' at row {row}")]
    DuplicateTrial {
        meta_id: String,
        trial_id: String,
        row: u64,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One two-arm trial with binary outcome counts and characteristic flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub events_treat: u32,
    pub size_treat: u32,
    pub events_ctrl: u32,
    pub size_ctrl: u32,
    pub flags: Vec<bool>,
}

impl Trial {
    pub fn validate(&self, p: usize) -> Result<(), String> {
        if self.size_treat == 0 || self.size_ctrl == 0 {
            return Err("arm size must be at least 1".into());
        }
        if self.events_treat > self.size_treat || self.events_ctrl > self.size_ctrl {
            return Err("events exceed size".into());
        }
        if self.flags.len() != p {
            return Err(format!("expected {p} flags, found {}", self.flags.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaAnalysis {
    pub meta_id: String,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta_analyses: Vec<MetaAnalysis>,
    pub characteristic_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    pub fn new(
        meta_analyses: Vec<MetaAnalysis>,
        characteristic_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let dataset = Self {
            meta_analyses,
            characteristic_names,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let p = self.characteristic_names.len();
        let mut metas = HashSet::new();
        for ma in &self.meta_analyses {
            if !metas.insert(ma.meta_id.as_str()) {
                return Err(DataError::Invalid(format!(
                    "duplicate meta_id '{}'",
                    ma.meta_id
                )));
            }
            if ma.trials.is_empty() {
                return Err(DataError::Invalid(format!(
                    "meta-analysis '{}' has no trials",
                    ma.meta_id
                )));
            }
            let mut ids = HashSet::new();
            for trial in &ma.trials {
                if !ids.insert(trial.trial_id.as_str()) {
                    return Err(DataError::Invalid(format!(
                        "duplicate trial '{}' in '{}'",
                        trial.trial_id, ma.meta_id
                    )));
                }
                trial.validate(p).map_err(|msg| {
                    DataError::Invalid(format!("{}/{}: {msg}", ma.meta_id, trial.trial_id))
                })?;
            }
        }
        Ok(())
    }

    pub fn n_characteristics(&self) -> usize {
        self.characteristic_names.len()
    }

    pub fn n_trials(&self) -> usize {
        self.meta_analyses.iter().map(|m| m.trials.len()).sum()
    }

    pub fn characteristic_index(&self, name: &str) -> Option<usize> {
        self.characteristic_names.iter().position(|n| n == name)
    }

    /// Writes the dataset in the canonical file format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(writer);
        let header: Vec<&str> = FIXED_COLUMNS
            .iter()
            .copied()
            .chain(self.characteristic_names.iter().map(String::as_str))
            .collect();
        out.write_record(&header)?;
        for ma in &self.meta_analyses {
            for t in &ma.trials {
                let mut record = vec![
                    ma.meta_id.clone(),
                    t.trial_id.clone(),
                    t.events_treat.to_string(),
                    t.size_treat.to_string(),
                    t.events_ctrl.to_string(),
                    t.size_ctrl.to_string(),
                ];
                record.extend(t.flags.iter().map(|&f| u8::from(f).to_string()));
                out.write_record(&record)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Parses a dataset from delimited text. Trials are grouped by `meta_id`
/// in order of first appearance.
pub fn parse_dataset<R: Read>(source: R) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let header = reader.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len() {
        return Err(DataError::Header(format!(
            "expected at least {} columns, found {}",
            FIXED_COLUMNS.len(),
            header.len()
        )));
    }
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        if &header[i] != *expected {
            return Err(DataError::Header(format!(
                "column {} must be '{expected}', found '{}'",
                i + 1,
                &header[i]
            )));
        }
    }
    let names: Vec<String> = header
        .iter()
        .skip(FIXED_COLUMNS.len())
        .map(str::to_string)
        .collect();
    let p = names.len();
    let arity = FIXED_COLUMNS.len() + p;

    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Trial>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        let bad = |message: String| DataError::Row { row, message };
        if record.len() != arity {
            return Err(bad(format!(
                "expected {arity} fields, found {}",
                record.len()
            )));
        }
        let count = |i: usize| -> Result<u32, DataError> {
            record[i].parse::<u32>().map_err(|_| {
                bad(format!(
                    "column '{}' is not a non-negative integer: '{}'",
                    FIXED_COLUMNS[i], &record[i]
                ))
            })
        };
        let meta_id = record[0].to_string();
        let trial_id = record[1].to_string();
        let events_treat = count(2)?;
        let size_treat = count(3)?;
        let events_ctrl = count(4)?;
        let size_ctrl = count(5)?;
        if events_treat > size_treat || events_ctrl > size_ctrl {
            return Err(DataError::EventsExceedSize { row });
        }
        if size_treat == 0 || size_ctrl == 0 {
            return Err(bad("arm size must be at least 1".into()));
        }
        let flags = (0..p)
            .map(|j| match &record[FIXED_COLUMNS.len() + j] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!(
                    "flag '{}' must be 0 or 1, found '{other}'",
                    names[j]
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !seen.insert((meta_id.clone(), trial_id.clone())) {
            return Err(DataError::DuplicateTrial {
                meta_id,
                trial_id,
                row,
            });
        }
        let trial = Trial {
            trial_id,
            events_treat,
            size_treat,
            events_ctrl,
            size_ctrl,
            flags,
        };
        match groups.get_mut(&meta_id) {
            Some(trials) => trials.push(trial),
            None => {
                order.push(meta_id.clone());
                groups.insert(meta_id, vec![trial]);
            }
        }
    }

    let meta_analyses = order
        .into_iter()
        .map(|meta_id| {
            let trials = groups.remove(&meta_id).unwrap_or_default();
            MetaAnalysis { meta_id, trials }
        })
        .collect();
    Dataset::new(meta_analyses, names)
}

pub fn parse_dataset_str(text: &str) -> Result<Dataset, DataError> {
    parse_dataset(text.as_bytes())
}

/// Contrast counts for one meta-analysis and one characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contrast {
    pub with_flag: usize,
    pub without_flag: usize,
    pub informative: bool,
    pub cut_eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformativenessReport {
    pub min_each_side_for_variance: usize,
    pub meta_ids: Vec<String>,
    /// `contrasts[m][j]`
    pub contrasts: Vec<Vec<Contrast>>,
}

impl InformativenessReport {
    pub fn get(&self, meta: usize, characteristic: usize) -> Contrast {
        self.contrasts[meta][characteristic]
    }

    pub fn informative_count(&self, characteristic: usize) -> usize {
        self.contrasts
            .iter()
            .filter(|row| row[characteristic].informative)
            .count()
    }

    pub fn cut_eligible_count(&self, characteristic: usize) -> usize {
        self.contrasts
            .iter()
            .filter(|row| row[characteristic].cut_eligible)
            .count()
    }
}

/// Classifies every (meta-analysis, characteristic) pair. A pair is
/// informative with at least one trial on each side of the flag, and
/// cut-eligible with at least `min_each_side_for_variance` on each side.
pub fn classify(dataset: &Dataset, min_each_side_for_variance: usize) -> InformativenessReport {
    let p = dataset.n_characteristics();
    let threshold = min_each_side_for_variance.max(1);
    let contrasts = dataset
        .meta_analyses
        .iter()
        .map(|ma| {
            (0..p)
                .map(|j| {
                    let with_flag = ma.trials.iter().filter(|t| t.flags[j]).count();
                    let without_flag = ma.trials.len() - with_flag;
                    Contrast {
                        with_flag,
                        without_flag,
                        informative: with_flag >= 1 && without_flag >= 1,
                        cut_eligible: with_flag >= threshold && without_flag >= threshold,
                    }
                })
                .collect()
        })
        .collect();
    InformativenessReport {
        min_each_side_for_variance: threshold,
        meta_ids: dataset
            .meta_analyses
            .iter()
            .map(|m| m.meta_id.clone())
            .collect(),
        contrasts,
    }
}

/// Keeps the meta-analyses informative for every characteristic in
/// `characteristics`; with `require_all == false`, for at least one of them.
pub fn informative_subset_with(
    dataset: &Dataset,
    characteristics: &[usize],
    require_all: bool,
) -> Dataset {
    let keep = |ma: &MetaAnalysis| {
        let informative = |&j: &usize| {
            let with = ma.trials.iter().filter(|t| t.flags[j]).count();
            with >= 1 && with < ma.trials.len()
        };
        if require_all {
            characteristics.iter().all(informative)
        } else {
            characteristics.iter().any(informative)
        }
    };
    Dataset {
        meta_analyses: dataset
            .meta_analyses
            .iter()
            .filter(|ma| keep(ma))
            .cloned()
            .collect(),
        characteristic_names: dataset.characteristic_names.clone(),
    }
}

pub fn informative_subset(dataset: &Dataset, characteristics: &[usize]) -> Dataset {
    informative_subset_with(dataset, characteristics, true)
}

/// Inverts the labels of characteristic `j` in every trial.
pub fn relabel(dataset: &Dataset, j: usize) -> Dataset {
    let mut out = dataset.clone();
    for ma in &mut out.meta_analyses {
        for trial in &mut ma.trials {
            trial.flags[j] = !trial.flags[j];
        }
    }
    out
}

/// Five-number description of trials per meta-analysis. Quartiles use
/// linear interpolation between order statistics, so for an even count the
/// median is the mean of the two central values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicCounts {
    pub name: String,
    pub flagged_trials: usize,
    pub informative_meta_analyses: usize,
    pub cut_eligible_meta_analyses: usize,
    pub flagged_per_meta: Option<SizeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub meta_analyses: usize,
    pub trials: usize,
    pub trials_per_meta: Option<SizeSummary>,
    pub quantile_rule: String,
    pub characteristics: Vec<CharacteristicCounts>,
    pub trials_all_flagged: usize,
    pub trials_none_flagged: usize,
}

fn size_summary(mut values: Vec<f64>) -> Option<SizeSummary> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(SizeSummary {
        min: values[0],
        q1: quantile_sorted(&values, 0.25),
        median: quantile_sorted(&values, 0.5),
        q3: quantile_sorted(&values, 0.75),
        max: values[values.len() - 1],
    })
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    let report = classify(dataset, 2);
    let sizes = dataset
        .meta_analyses
        .iter()
        .map(|m| m.trials.len() as f64)
        .collect();
    let characteristics = dataset
        .characteristic_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let per_meta: Vec<f64> = dataset
                .meta_analyses
                .iter()
                .map(|m| m.trials.iter().filter(|t| t.flags[j]).count() as f64)
                .collect();
            CharacteristicCounts {
                name: name.clone(),
                flagged_trials: per_meta.iter().sum::<f64>() as usize,
                informative_meta_analyses: report.informative_count(j),
                cut_eligible_meta_analyses: report.cut_eligible_count(j),
                flagged_per_meta: size_summary(per_meta),
            }
        })
        .collect();
    let trials = || dataset.meta_analyses.iter().flat_map(|m| m.trials.iter());
    DatasetSummary {
        meta_analyses: dataset.meta_analyses.len(),
        trials: dataset.n_trials(),
        trials_per_meta: size_summary(sizes),
        quantile_rule: "linear interpolation between order statistics (h = (n-1)p)".into(),
        characteristics,
        trials_all_flagged: trials().filter(|t| t.flags.iter().all(|&f| f)).count(),
        trials_none_flagged: trials().filter(|t| t.flags.iter().all(|&f| !f)).count(),
    }
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} trials in {} meta-analyses",
            self.trials, self.meta_analyses
        )?;
        if let Some(s) = &self.trials_per_meta {
            writeln!(
                f,
                "trials per meta-analysis: range {} to {}, median {}, IQR {} to {}",
                s.min, s.max, s.median, s.q1, s.q3
            )?;
        }
        for c in &self.characteristics {
            write!(
                f,
                "{}: {} flagged trials; informative in {} meta-analyses ({} cut-eligible)",
                c.name, c.flagged_trials, c.informative_meta_analyses, c.cut_eligible_meta_analyses
            )?;
            if let Some(s) = &c.flagged_per_meta {
                write!(
                    f,
                    "; flagged per meta-analysis range {} to {}, median {}, IQR {} to {}",
                    s.min, s.max, s.median, s.q1, s.q3
                )?;
            }
            writeln!(f)?;
        }
        if self.characteristics.len() > 1 {
            writeln!(
                f,
                "all characteristics flagged: {} trials; none flagged: {} trials",
                self.trials_all_flagged, self.trials_none_flagged
            )?;
        }
        write!(f, "quantiles: {}", self.quantile_rule)
    }
}
