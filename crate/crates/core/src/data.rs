//! Individually-timed longitudinal measurements for one or two repeated outcomes.
//!
//! The canonical on-disk representation is the long CSV format with one row per
//! `id × outcome × wave`:
//!
//! ```text
//! id,outcome,wave,time,value
//! 1,read,1,0.02,51.3
//! ```
//!
//! Missingness is row absence. Sentinel codes present in source data can be
//! dropped at load time through [`LoadOptions::drop_values`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{LbgmError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub wave: usize,
    pub time: f64,
    pub value: f64,
}

/// Measurements of one outcome for one individual, ordered by wave.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeSeries {
    pub label: String,
    pub observations: Vec<Observation>,
    /// Total waves declared for this outcome (J).
    pub waves: usize,
}

impl OutcomeSeries {
    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.time).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    pub fn wave_indices(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.wave).collect()
    }

    pub fn at_wave(&self, wave: usize) -> Option<&Observation> {
        self.observations.iter().find(|o| o.wave == wave)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: String,
    /// One series per declared outcome, in the sample's outcome order.
    pub series: Vec<OutcomeSeries>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalSample {
    individuals: Vec<Individual>,
    outcome_labels: Vec<String>,
    waves: Vec<usize>,
    dropped_rows: usize,
}

impl LongitudinalSample {
    /// Assemble a sample without validating it. Use [`validate`] to check invariants.
    pub fn new(individuals: Vec<Individual>, outcome_labels: Vec<String>, waves: Vec<usize>) -> Self {
        assert_eq!(outcome_labels.len(), waves.len(), "one wave count per outcome");
        Self {
            individuals,
            outcome_labels,
            waves,
            dropped_rows: 0,
        }
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn outcome_labels(&self) -> &[String] {
        &self.outcome_labels
    }

    /// Declared wave count J for each outcome.
    pub fn waves(&self) -> &[usize] {
        &self.waves
    }

    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    /// Rows discarded at load time because time or value was missing or a sentinel.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn outcome_index(&self, label: &str) -> Option<usize> {
        self.outcome_labels.iter().position(|l| l == label)
    }

    /// Waves at which at least one individual has an observation of `outcome`.
    pub fn observed_waves(&self, outcome: usize) -> BTreeSet<usize> {
        self.individuals
            .iter()
            .filter_map(|ind| ind.series.get(outcome))
            .flat_map(|s| s.observations.iter().map(|o| o.wave))
            .collect()
    }

    /// Mean observed time per wave (index 0 is wave 1); `None` where nobody was measured.
    pub fn mean_wave_times(&self, outcome: usize) -> Vec<Option<f64>> {
        let j = self.waves[outcome];
        let mut times: Vec<Vec<f64>> = vec![Vec::new(); j];
        for ind in &self.individuals {
            for o in &ind.series[outcome].observations {
                if o.wave >= 1 && o.wave <= j {
                    times[o.wave - 1].push(o.time);
                }
            }
        }
        // exact summation keeps the result independent of individual order
        times
            .iter()
            .map(|t| (!t.is_empty()).then(|| crate::numeric::fsum(t.iter().copied()) / t.len() as f64))
            .collect()
    }

    /// Keep only the listed outcomes, in the given order.
    pub fn select_outcomes(&self, labels: &[&str]) -> Result<Self> {
        let idx = labels
            .iter()
            .map(|l| {
                self.outcome_index(l)
                    .ok_or_else(|| LbgmError::UnknownOutcome(l.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let individuals = self
            .individuals
            .iter()
            .map(|ind| Individual {
                id: ind.id.clone(),
                series: idx.iter().map(|&k| ind.series[k].clone()).collect(),
            })
            .collect();
        Ok(Self {
            individuals,
            outcome_labels: idx.iter().map(|&k| self.outcome_labels[k].clone()).collect(),
            waves: idx.iter().map(|&k| self.waves[k]).collect(),
            dropped_rows: self.dropped_rows,
        })
    }

    /// A sample with the same outcomes but a different set of individuals.
    pub fn with_individuals(&self, individuals: Vec<Individual>) -> Self {
        Self {
            individuals,
            outcome_labels: self.outcome_labels.clone(),
            waves: self.waves.clone(),
            dropped_rows: self.dropped_rows,
        }
    }
}

/// Column names used to locate the five required fields.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub id: String,
    pub outcome: String,
    pub wave: String,
    pub time: String,
    pub value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            outcome: "outcome".into(),
            wave: "wave".into(),
            time: "time".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub schema: CsvSchema,
    /// Values in the time or value column that mark a missing measurement.
    pub drop_values: Vec<f64>,
    /// Declared J per outcome label; otherwise the largest wave index seen.
    pub waves_override: HashMap<String, usize>,
}

pub fn load_long_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<LongitudinalSample> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| LbgmError::io(path, e))?;
    read_long_csv(file, options)
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

/// Parse a long-format CSV stream and validate the result.
pub fn read_long_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<LongitudinalSample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LbgmError::MissingColumn(name.to_string()))
    };
    let schema = &options.schema;
    let (c_id, c_out, c_wave, c_time, c_value) = (
        col(&schema.id)?,
        col(&schema.outcome)?,
        col(&schema.wave)?,
        col(&schema.time)?,
        col(&schema.value)?,
    );

    let mut outcome_labels: Vec<String> = Vec::new();
    let mut id_order: Vec<String> = Vec::new();
    let mut id_pos: HashMap<String, usize> = HashMap::new();
    // (individual, outcome) -> observations
    let mut cells: HashMap<(usize, usize), Vec<Observation>> = HashMap::new();
    let mut dropped = 0usize;

    let is_sentinel = |x: f64| options.drop_values.iter().any(|&d| d == x);

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record.get(c_id).unwrap_or("").to_string();
        let outcome = record.get(c_out).unwrap_or("").to_string();
        let wave_raw = record.get(c_wave).unwrap_or("");
        let wave: usize = match wave_raw.parse::<usize>() {
            Ok(w) if w >= 1 => w,
            _ => {
                return Err(LbgmError::BadWave {
                    line,
                    value: wave_raw.to_string(),
                })
            }
        };
        let time_raw = record.get(c_time).unwrap_or("");
        let value_raw = record.get(c_value).unwrap_or("");
        if is_missing(time_raw) || is_missing(value_raw) {
            dropped += 1;
            continue;
        }
        let time: f64 = time_raw.parse().map_err(|_| LbgmError::NonNumeric {
            line,
            field: "time",
            value: time_raw.to_string(),
        })?;
        let value: f64 = value_raw.parse().map_err(|_| LbgmError::NonNumeric {
            line,
            field: "value",
            value: value_raw.to_string(),
        })?;
        if is_sentinel(time) || is_sentinel(value) {
            dropped += 1;
            continue;
        }

        let oi = match outcome_labels.iter().position(|l| *l == outcome) {
            Some(k) => k,
            None => {
                outcome_labels.push(outcome.clone());
                outcome_labels.len() - 1
            }
        };
        let ii = *id_pos.entry(id.clone()).or_insert_with(|| {
            id_order.push(id.clone());
            id_order.len() - 1
        });
        let obs = cells.entry((ii, oi)).or_default();
        if obs.iter().any(|o| o.wave == wave) {
            return Err(LbgmError::DuplicateRow { id, outcome, wave });
        }
        obs.push(Observation { wave, time, value });
    }

    let mut waves: Vec<usize> = vec![0; outcome_labels.len()];
    for ((_, oi), obs) in &cells {
        for o in obs {
            waves[*oi] = waves[*oi].max(o.wave);
        }
    }
    for (k, label) in outcome_labels.iter().enumerate() {
        if let Some(&j) = options.waves_override.get(label) {
            waves[k] = j;
        }
    }

    let mut individuals = Vec::with_capacity(id_order.len());
    for (ii, id) in id_order.iter().enumerate() {
        let mut series = Vec::with_capacity(outcome_labels.len());
        for (oi, label) in outcome_labels.iter().enumerate() {
            let mut observations = cells.remove(&(ii, oi)).unwrap_or_default();
            observations.sort_by_key(|o| o.wave);
            if let Some(w) = observations.windows(2).find(|w| w[1].time <= w[0].time) {
                return Err(LbgmError::NonMonotoneTime {
                    id: id.clone(),
                    outcome: label.clone(),
                    wave: w[1].wave,
                });
            }
            series.push(OutcomeSeries {
                label: label.clone(),
                observations,
                waves: waves[oi],
            });
        }
        individuals.push(Individual {
            id: id.clone(),
            series,
        });
    }

    let mut sample = LongitudinalSample::new(individuals, outcome_labels, waves);
    sample.dropped_rows = dropped;
    let report = validate(&sample);
    if !report.is_empty() {
        return Err(LbgmError::Invalid(report.to_string()));
    }
    Ok(sample)
}

/// Write a sample in the canonical long format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_long_csv<W: Write>(sample: &LongitudinalSample, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "outcome", "wave", "time", "value"])?;
    for ind in sample.individuals() {
        for s in &ind.series {
            for o in &s.observations {
                wtr.write_record([
                    ind.id.as_str(),
                    s.label.as_str(),
                    &o.wave.to_string(),
                    &o.time.to_string(),
                    &o.value.to_string(),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| LbgmError::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_long_csv(sample: &LongitudinalSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| LbgmError::io(path, e))?;
    write_long_csv(sample, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    DuplicateId,
    MissingSeries,
    NoObservations,
    WaveOutOfRange,
    WaveNotIncreasing,
    TimeNotIncreasing,
    NonFinite,
    /// Fewer than three waves observed anywhere in the sample.
    IdentificationFloor { observed_waves: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub id: Option<String>,
    pub outcome: String,
    pub wave: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            ViolationKind::DuplicateId => "duplicate individual id".to_string(),
            ViolationKind::MissingSeries => "no series for declared outcome".to_string(),
            ViolationKind::NoObservations => "no observations for declared outcome".to_string(),
            ViolationKind::WaveOutOfRange => "wave index outside 1..J".to_string(),
            ViolationKind::WaveNotIncreasing => "wave indices not strictly increasing".to_string(),
            ViolationKind::TimeNotIncreasing => "times not strictly increasing".to_string(),
            ViolationKind::NonFinite => "non-finite time or value".to_string(),
            ViolationKind::IdentificationFloor { observed_waves } => format!(
                "only {observed_waves} waves observed across the sample (need at least 3)"
            ),
        };
        write!(f, "outcome `{}`", self.outcome)?;
        if let Some(id) = &self.id {
            write!(f, ", individual `{id}`")?;
        }
        if let Some(w) = self.wave {
            write!(f, ", wave {w}")?;
        }
        write!(f, ": {what}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate(sample: &LongitudinalSample) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    let labels = sample.outcome_labels();

    for ind in sample.individuals() {
        if !seen.insert(ind.id.as_str()) {
            violations.push(Violation {
                id: Some(ind.id.clone()),
                outcome: labels.first().cloned().unwrap_or_default(),
                wave: None,
                kind: ViolationKind::DuplicateId,
            });
        }
        for (k, label) in labels.iter().enumerate() {
            let v = |wave, kind| Violation {
                id: Some(ind.id.clone()),
                outcome: label.clone(),
                wave,
                kind,
            };
            let Some(series) = ind.series.get(k) else {
                violations.push(v(None, ViolationKind::MissingSeries));
                continue;
            };
            if series.observations.is_empty() {
                violations.push(v(None, ViolationKind::NoObservations));
                continue;
            }
            let j = sample.waves()[k];
            for o in &series.observations {
                if o.wave < 1 || o.wave > j {
                    violations.push(v(Some(o.wave), ViolationKind::WaveOutOfRange));
                }
                if !o.time.is_finite() || !o.value.is_finite() {
                    violations.push(v(Some(o.wave), ViolationKind::NonFinite));
                }
            }
            for w in series.observations.windows(2) {
                if w[1].wave <= w[0].wave {
                    violations.push(v(Some(w[1].wave), ViolationKind::WaveNotIncreasing));
                } else if w[1].time <= w[0].time {
                    violations.push(v(Some(w[1].wave), ViolationKind::TimeNotIncreasing));
                }
            }
        }
    }

    for (k, label) in labels.iter().enumerate() {
        let observed = sample.observed_waves(k).len();
        if observed < 3 {
            violations.push(Violation {
                id: None,
                outcome: label.clone(),
                wave: None,
                kind: ViolationKind::IdentificationFloor {
                    observed_waves: observed,
                },
            });
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, j: usize, obs: &[(usize, f64, f64)]) -> OutcomeSeries {
        OutcomeSeries {
            label: label.into(),
            observations: obs
                .iter()
                .map(|&(wave, time, value)| Observation { wave, time, value })
                .collect(),
            waves: j,
        }
    }

    fn complete(n: usize, j: usize) -> LongitudinalSample {
        let individuals = (0..n)
            .map(|i| Individual {
                id: format!("{i}"),
                series: vec![series(
                    "y",
                    j,
                    &(1..=j)
                        .map(|w| (w, (w - 1) as f64, 10.0 + w as f64 + i as f64))
                        .collect::<Vec<_>>(),
                )],
            })
            .collect();
        LongitudinalSample::new(individuals, vec!["y".into()], vec![j])
    }

    #[test]
    fn minimal_complete_file() {
        let csv = "id,outcome,wave,time,value\n\
                   a,y,1,0,1.0\na,y,2,1,2.0\na,y,3,2,3.0\n\
                   b,y,1,0.1,1.5\nb,y,2,1.1,2.5\nb,y,3,2.1,3.5\n";
        let s = read_long_csv(csv.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.waves(), &[3]);
        assert_eq!(s.dropped_rows(), 0);
    }

    #[test]
    fn empty_value_is_dropped_and_counted() {
        let csv = "id,outcome,wave,time,value\n\
                   a,y,1,0,1.0\na,y,2,1,\na,y,3,2,3.0\n\
                   b,y,1,0,1.5\nb,y,2,1,2.5\nb,y,3,2,3.5\n";
        let s = read_long_csv(csv.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(s.dropped_rows(), 1);
        assert_eq!(s.individuals()[0].series[0].wave_indices(), vec![1, 3]);
    }

    #[test]
    fn sentinel_drop_list() {
        let csv = "id,outcome,wave,time,value\n\
                   a,y,1,0,1.0\na,y,2,1,-9\na,y,3,2,3.0\n\
                   b,y,1,0,1.5\nb,y,2,1,2.5\nb,y,3,2,3.5\n";
        let opts = LoadOptions {
            drop_values: vec![-9.0, -8.0],
            ..Default::default()
        };
        let s = read_long_csv(csv.as_bytes(), &opts).unwrap();
        assert_eq!(s.dropped_rows(), 1);
    }

    #[test]
    fn custom_schema_columns() {
        let csv = "subject,var,occ,age,score\na,y,1,0,1\na,y,2,1,2\na,y,3,2,3\n";
        let opts = LoadOptions {
            schema: CsvSchema {
                id: "subject".into(),
                outcome: "var".into(),
                wave: "occ".into(),
                time: "age".into(),
                value: "score".into(),
            },
            ..Default::default()
        };
        let s = read_long_csv(csv.as_bytes(), &opts).unwrap();
        assert_eq!(s.n(), 1);
    }

    #[test]
    fn load_errors() {
        let dup = "id,outcome,wave,time,value\na,y,1,0,1\na,y,1,0.5,2\n";
        assert!(matches!(
            read_long_csv(dup.as_bytes(), &LoadOptions::default()),
            Err(LbgmError::DuplicateRow { wave: 1, .. })
        ));
        let nonnum = "id,outcome,wave,time,value\na,y,1,zero,1\n";
        assert!(matches!(
            read_long_csv(nonnum.as_bytes(), &LoadOptions::default()),
            Err(LbgmError::NonNumeric { field: "time", .. })
        ));
        let mono = "id,outcome,wave,time,value\na,y,1,0,1\na,y,2,2,1\na,y,3,1,1\n";
        assert!(matches!(
            read_long_csv(mono.as_bytes(), &LoadOptions::default()),
            Err(LbgmError::NonMonotoneTime { wave: 3, .. })
        ));
        let missing_col = "id,outcome,wave,value\na,y,1,1\n";
        assert!(matches!(
            read_long_csv(missing_col.as_bytes(), &LoadOptions::default()),
            Err(LbgmError::MissingColumn(c)) if c == "time"
        ));
        assert!(matches!(
            load_long_csv("/nonexistent/file.csv", &LoadOptions::default()),
            Err(LbgmError::Io { .. })
        ));
    }

    #[test]
    fn bivariate_with_spring_only_outcome() {
        let mut csv = String::from("id,outcome,wave,time,value\n");
        for id in 0..4 {
            for w in 1..=9usize {
                let t = w as f64 + 0.01 * id as f64;
                csv.push_str(&format!("{id},y,{w},{t},{}\n", 10.0 + t));
                if ![1, 3, 5].contains(&w) {
                    csv.push_str(&format!("{id},z,{w},{t},{}\n", 20.0 + t));
                }
            }
        }
        let opts = LoadOptions {
            waves_override: [("z".to_string(), 9)].into(),
            ..Default::default()
        };
        let s = read_long_csv(csv.as_bytes(), &opts).unwrap();
        let z = s.outcome_index("z").unwrap();
        let expected: BTreeSet<usize> = [2, 4, 6, 7, 8, 9].into();
        assert_eq!(s.observed_waves(z), expected);
        for ind in s.individuals() {
            assert_eq!(ind.series[z].observations.len(), 6);
        }
        assert_eq!(s.waves(), &[9, 9]);
    }

    #[test]
    fn validate_complete_sample_is_clean() {
        assert!(validate(&complete(5, 6)).is_empty());
    }

    #[test]
    fn validate_flags_time_order() {
        let s = LongitudinalSample::new(
            vec![
                Individual {
                    id: "a".into(),
                    series: vec![series("y", 3, &[(1, 0.0, 1.0), (2, 2.0, 1.0), (3, 1.0, 1.0)])],
                },
            ],
            vec!["y".into()],
            vec![3],
        );
        let report = validate(&s);
        assert_eq!(report.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.kind, ViolationKind::TimeNotIncreasing);
        assert_eq!(v.wave, Some(3));
        assert_eq!(v.id.as_deref(), Some("a"));
    }

    #[test]
    fn validate_flags_identification_floor() {
        let s = LongitudinalSample::new(
            (0..3)
                .map(|i| Individual {
                    id: format!("{i}"),
                    series: vec![series("y", 5, &[(1, 0.0, 1.0), (4, 3.0, 2.0)])],
                })
                .collect(),
            vec!["y".into()],
            vec![5],
        );
        let report = validate(&s);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::IdentificationFloor { observed_waves: 2 }));
    }

    #[test]
    fn validate_flags_empty_outcome_and_duplicate_id() {
        let ind = |id: &str| Individual {
            id: id.into(),
            series: vec![
                series("y", 3, &[(1, 0.0, 1.0), (2, 1.0, 1.0), (3, 2.0, 1.0)]),
                series("z", 3, &[]),
            ],
        };
        let s = LongitudinalSample::new(
            vec![ind("a"), ind("a")],
            vec!["y".into(), "z".into()],
            vec![3, 3],
        );
        let kinds: Vec<_> = validate(&s).violations.into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::DuplicateId));
        assert!(kinds.contains(&ViolationKind::NoObservations));
    }

    #[test]
    fn mean_wave_times_skip_unobserved() {
        let s = complete(3, 4);
        let m = s.mean_wave_times(0);
        assert_eq!(m, vec![Some(0.0), Some(1.0), Some(2.0), Some(3.0)]);
    }
}
