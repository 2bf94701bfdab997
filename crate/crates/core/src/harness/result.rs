use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::audit::{AssumptionReport, EventBudget, HermiteCondition, HermiteProfile};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] =
    ["experiment", "p", "n", "N", "seed", "test_error", "l2_to_ref", "solver_iters", "converged", "wall_ms"];
pub const ROWS_FILE: &str = "rows.csv";
pub const RESULT_FILE: &str = "result.json";

/// One `(p, N, seed)` cell. Quantities an experiment does not measure are NaN.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub p: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub n_features: usize,
    pub seed: u64,
    pub test_error: f64,
    pub l2_to_ref: f64,
    pub solver_iters: usize,
    pub converged: bool,
    pub wall_ms: f64,
}

impl Row {
    /// Field-by-field equality with floats compared bitwise, so NaN matches NaN.
    pub fn same_as(&self, o: &Row) -> bool {
        self.experiment == o.experiment
            && self.p.to_bits() == o.p.to_bits()
            && (self.n, self.n_features, self.seed, self.solver_iters, self.converged)
                == (o.n, o.n_features, o.seed, o.solver_iters, o.converged)
            && self.test_error.to_bits() == o.test_error.to_bits()
            && self.l2_to_ref.to_bits() == o.l2_to_ref.to_bits()
            && self.wall_ms.to_bits() == o.wall_ms.to_bits()
    }
}

/// Mean with a normal-approximation 95% interval `mean +- 1.96 sd / sqrt(k)` over finite values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    pub ci_half: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        let k = v.len();
        if k == 0 {
            return Self { mean: f64::NAN, ci_half: 0.0, count: 0 };
        }
        let mean = v.iter().sum::<f64>() / k as f64;
        let ci_half = if k > 1 {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            1.96 * var.sqrt() / (k as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, ci_half, count: k }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.ci_half
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.ci_half
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub p: f64,
    #[serde(rename = "N")]
    pub n_features: usize,
    pub test_error: Summary,
    pub l2_to_ref: Summary,
    pub converged: usize,
    pub rows: usize,
}

/// Aggregate rows over seeds, keyed by `(p, N)` in ascending order.
pub fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(u64, usize), Vec<&Row>> = BTreeMap::new();
    for r in rows {
        // Bit patterns of nonnegative floats sort like the floats.
        groups.entry((r.p.to_bits(), r.n_features)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((p, nf), g)| Aggregate {
            p: f64::from_bits(p),
            n_features: nf,
            test_error: Summary::of(g.iter().map(|r| r.test_error)),
            l2_to_ref: Summary::of(g.iter().map(|r| r.l2_to_ref)),
            converged: g.iter().filter(|r| r.converged).count(),
            rows: g.len(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub p: f64,
    /// Least-squares slope of `log(mean l2_to_ref)` against `log N`.
    pub slope: f64,
    pub intercept: f64,
    /// Consecutive widths where the mean distance did not decrease.
    pub increases: usize,
    /// Of those, the ones whose 95% intervals do not overlap.
    pub increases_outside_ci: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedValue {
    pub seed: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReference {
    /// Test error of the kernel interpolant, the `N -> infinity` limit at `p = 2`.
    pub per_seed: Vec<SeedValue>,
    pub test_error: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub p: f64,
    #[serde(rename = "N")]
    pub n_features: usize,
    pub seed: u64,
    #[serde(with = "nan_as_null")]
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSeed {
    pub seed: u64,
    /// `sigma_min(X) / sqrt(n)`.
    pub c0_hat: f64,
    /// `n >= 2 d / c0_hat^2`, under which the noise residual controls the distance.
    pub precondition: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    pub seeds: Vec<LatentSeed>,
    /// `||(1/N) Z s(Phi^T lambda_N) - E[z s(<phi, lambda_hat>)]||_2` per row.
    pub noise_residual: Vec<CellValue>,
    /// Per `p`: mean distance at the largest `N` below that at the smallest.
    pub trend_decreasing: Vec<(f64, bool)>,
    pub precondition_met: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventEntry {
    pub p: f64,
    #[serde(rename = "N")]
    pub n_features: usize,
    pub seed: u64,
    pub reference: String,
    pub budget: EventBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub hermite: HermiteProfile,
    pub hermite_condition: HermiteCondition,
    pub assumptions: AssumptionReport,
    pub smallball_eta: f64,
    pub smallball_prob: f64,
    pub events: Vec<EventEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub p: f64,
    #[serde(rename = "N")]
    pub n_features: usize,
    pub seed: u64,
    pub message: String,
}

/// Rows go to CSV; everything else, including the resolved config, to JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<SlopeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_reference: Option<KernelReference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
    #[serde(default)]
    pub failures: Vec<RowFailure>,
}

impl ExperimentResult {
    pub fn new(config: ExperimentConfig, rows: Vec<Row>) -> Self {
        let aggregates = aggregate(&rows);
        Self { config, rows, aggregates, slopes: vec![], kernel_reference: None, latent: None, audit: None, failures: vec![] }
    }

    /// Any row that did not converge or failed outright.
    pub fn has_row_failures(&self) -> bool {
        !self.failures.is_empty() || self.rows.iter().any(|r| !r.converged)
    }

    pub fn aggregate_at(&self, p: f64, n_features: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.p == p && a.n_features == n_features)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows_csv(rows: &[Row], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            fmt_f64(r.p),
            r.n.to_string(),
            r.n_features.to_string(),
            r.seed.to_string(),
            fmt_f64(r.test_error),
            fmt_f64(r.l2_to_ref),
            r.solver_iters.to_string(),
            r.converged.to_string(),
            fmt_f64(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::SchemaMismatch(format!("line {line}: missing column {}", CSV_HEADER[i])))?;
    raw.parse().map_err(|_| Error::SchemaMismatch(format!("line {line}: bad value {raw:?} in column {}", CSV_HEADER[i])))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::SchemaMismatch(format!("expected header {}, got {}", CSV_HEADER.join(","), header.join(","))));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::SchemaMismatch(format!("line {line}: expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
        }
        rows.push(Row {
            experiment: field(&rec, 0, line)?,
            p: field(&rec, 1, line)?,
            n: field(&rec, 2, line)?,
            n_features: field(&rec, 3, line)?,
            seed: field(&rec, 4, line)?,
            test_error: field(&rec, 5, line)?,
            l2_to_ref: field(&rec, 6, line)?,
            solver_iters: field(&rec, 7, line)?,
            converged: field(&rec, 8, line)?,
            wall_ms: field(&rec, 9, line)?,
        });
    }
    Ok(rows)
}

/// Write `rows.csv` and `result.json` into `dir`, creating it if needed.
pub fn persist(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows_csv(&result.rows, &dir.join(ROWS_FILE))?;
    fs::write(dir.join(RESULT_FILE), serde_json::to_string_pretty(result)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ExperimentResult> {
    let rows = read_rows_csv(&dir.join(ROWS_FILE))?;
    let text = fs::read_to_string(dir.join(RESULT_FILE))?;
    let mut result: ExperimentResult =
        serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch(format!("{RESULT_FILE}: {e}")))?;
    result.rows = rows;
    Ok(result)
}

/// Serialize non-finite floats as `null` and read `null` back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
