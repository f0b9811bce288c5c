//! Evaluation reports, radar rescaling and cross-method comparison tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{Direction, MetricResult, NA};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no reports given")]
    NoReports,
    #[error("reports mix datasets `{0}` and `{1}`")]
    MixedDatasets(String, String),
    #[error("metric `{metric}` is present in {found} report(s); rescaling needs at least 2")]
    MetricAbsent { metric: String, found: usize },
    #[error("metric `{0}` appears more than once in a report")]
    DuplicateMetric(String),
    #[error("metric `{0}` has conflicting directions across reports")]
    DirectionConflict(String),
    #[error("unsupported bundle schema version {0}")]
    SchemaVersion(u32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub dataset: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub config_digest: String,
    /// Seconds since the Unix epoch. Left out unless asked for so that
    /// reports of identical runs are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
    pub metrics: Vec<MetricResult>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn check(&self) -> Result<(), ReportError> {
        let mut seen = std::collections::HashSet::new();
        for m in &self.metrics {
            if !seen.insert(m.name.as_str()) {
                return Err(ReportError::DuplicateMetric(m.name.clone()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        report.check()?;
        Ok(report)
    }

    /// The zero rule applies to every metric of a report whose CFG pass
    /// rate is 0.
    fn fails_structure(&self) -> bool {
        self.metric("cfg_pr").is_some_and(|m| m.value == Some(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledScore {
    pub metric: String,
    pub method: String,
    pub raw: Option<f64>,
    /// 0 for zeroed methods, otherwise in [20, 100].
    pub score: f64,
}

/// Best achievable value per metric. Unlisted metrics use 1 when higher is
/// better and 0 when lower is better.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bounds(pub BTreeMap<String, f64>);

impl Bounds {
    pub fn get(&self, metric: &str, direction: Direction) -> f64 {
        self.0.get(metric).copied().unwrap_or(match direction {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => 0.0,
        })
    }
}

pub fn rescale(reports: &[EvalReport], metric: &str) -> Result<Vec<RescaledScore>, ReportError> {
    rescale_with(reports, metric, &Bounds::default())
}

/// Map raw values onto the radar scale: the worst non-zeroed method gets 20,
/// the bound gets 100, linear in between. A method scores 0 when its CFG
/// pass rate is 0 or the metric is not applicable. When every remaining
/// method has the same value they all get 100.
pub fn rescale_with(reports: &[EvalReport], metric: &str, bounds: &Bounds) -> Result<Vec<RescaledScore>, ReportError> {
    let present: Vec<&MetricResult> = reports.iter().filter_map(|r| r.metric(metric)).collect();
    if present.len() < 2 {
        return Err(ReportError::MetricAbsent {
            metric: metric.to_string(),
            found: present.len(),
        });
    }
    let direction = present[0].direction;
    if present.iter().any(|m| m.direction != direction) {
        return Err(ReportError::DirectionConflict(metric.to_string()));
    }
    let live: Vec<Option<f64>> = reports
        .iter()
        .map(|r| if r.fails_structure() { None } else { r.metric(metric).and_then(|m| m.value) })
        .collect();
    let values = live.iter().flatten().copied();
    let worst = match direction {
        Direction::HigherBetter => values.fold(f64::INFINITY, f64::min),
        Direction::LowerBetter => values.fold(f64::NEG_INFINITY, f64::max),
    };
    let bound = bounds.get(metric, direction);
    let flat = live.iter().flatten().all(|&v| v == worst);
    Ok(reports
        .iter()
        .zip(&live)
        .map(|(r, v)| {
            let score = match v {
                None => 0.0,
                Some(_) if flat || bound == worst => 100.0,
                Some(v) => (20.0 + 80.0 * (v - worst) / (bound - worst)).clamp(20.0, 100.0),
            };
            RescaledScore {
                metric: metric.to_string(),
                method: r.method.clone(),
                raw: r.metric(metric).and_then(|m| m.value),
                score,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub schema_version: u32,
    pub dataset: String,
    pub metrics: Vec<String>,
    pub reports: Vec<EvalReport>,
    /// Per report, in report order: metric → radar score.
    pub rescaled: Vec<BTreeMap<String, f64>>,
}

impl Bundle {
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let bundle: Bundle = serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if bundle.schema_version != SCHEMA_VERSION {
            return Err(ReportError::SchemaVersion(bundle.schema_version));
        }
        Ok(bundle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub raw: Vec<Vec<String>>,
    pub rescaled: Vec<Vec<String>>,
    pub bundle: Bundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonFiles {
    pub raw_csv: PathBuf,
    pub rescaled_csv: PathBuf,
    pub bundle_json: PathBuf,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

/// Build the method × metric tables. Metric columns follow first appearance
/// across the reports; a metric found in only one report gets "n/a" radar
/// cells.
pub fn comparison(reports: &[EvalReport], bounds: &Bounds) -> Result<Comparison, ReportError> {
    let first = reports.first().ok_or(ReportError::NoReports)?;
    for r in reports {
        if r.dataset != first.dataset {
            return Err(ReportError::MixedDatasets(first.dataset.clone(), r.dataset.clone()));
        }
        r.check()?;
    }
    let mut metrics: Vec<String> = Vec::new();
    for m in reports.iter().flat_map(|r| &r.metrics) {
        if !metrics.contains(&m.name) {
            metrics.push(m.name.clone());
        }
    }
    if reports.len() < 2 {
        return Err(ReportError::MetricAbsent {
            metric: metrics.first().cloned().unwrap_or_default(),
            found: 1,
        });
    }

    let mut scores: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); reports.len()];
    for name in &metrics {
        match rescale_with(reports, name, bounds) {
            Ok(rows) => {
                for (slot, s) in scores.iter_mut().zip(rows) {
                    slot.insert(name.clone(), s.score);
                }
            }
            Err(ReportError::MetricAbsent { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    let label = |r: &EvalReport| vec![r.method.clone(), r.epsilon.map_or_else(String::new, |e| e.to_string())];
    let raw = reports
        .iter()
        .map(|r| {
            let mut row = label(r);
            row.extend(metrics.iter().map(|m| fmt_value(r.metric(m).and_then(|x| x.value))));
            row
        })
        .collect();
    let rescaled = reports
        .iter()
        .zip(&scores)
        .map(|(r, s)| {
            let mut row = label(r);
            row.extend(metrics.iter().map(|m| fmt_value(s.get(m).copied())));
            row
        })
        .collect();
    Ok(Comparison {
        metrics: metrics.clone(),
        raw,
        rescaled,
        bundle: Bundle {
            schema_version: SCHEMA_VERSION,
            dataset: first.dataset.clone(),
            metrics,
            reports: reports.to_vec(),
            rescaled: scores,
        },
    })
}

fn write_csv(path: &Path, metrics: &[String], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "epsilon".to_string()];
    header.extend(metrics.iter().cloned());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Write `raw.csv`, `rescaled.csv` and `bundle.json` into `out_dir`.
pub fn compare(reports: &[EvalReport], out_dir: &Path, bounds: &Bounds) -> Result<ComparisonFiles, ReportError> {
    let c = comparison(reports, bounds)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files = ComparisonFiles {
        raw_csv: out_dir.join("raw.csv"),
        rescaled_csv: out_dir.join("rescaled.csv"),
        bundle_json: out_dir.join("bundle.json"),
    };
    write_csv(&files.raw_csv, &c.metrics, &c.raw)?;
    write_csv(&files.rescaled_csv, &c.metrics, &c.rescaled)?;
    let json = serde_json::to_string_pretty(&c.bundle).expect("bundle serializes") + "\n";
    fs::write(&files.bundle_json, json).map_err(io_err(&files.bundle_json))?;
    Ok(files)
}
