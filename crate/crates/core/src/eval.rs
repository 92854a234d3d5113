//! Coverage and set-size metrics, evaluation reports and the regularizer
//! sweep.
//!
//! Missing values (a class with no test points, a size stratum with no
//! sets) are `None`: `null` in JSON and the literal `null` in CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::conformal::PreparedMethod;
use crate::error::{invalid, Error, Result};
use crate::types::{PredictionSet, RegParams};

const MISSING: &str = "null";

fn check_lengths(sets: &[PredictionSet], labels: &[usize]) -> Result<()> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

/// `(coverage, mean set size)` over all points.
pub fn marginal_metrics(sets: &[PredictionSet], labels: &[usize]) -> Result<(f64, f64)> {
    check_lengths(sets, labels)?;
    if sets.is_empty() {
        return Err(Error::Empty("prediction sets"));
    }
    let n = sets.len() as f64;
    let covered = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count();
    let size: usize = sets.iter().map(PredictionSet::len).sum();
    Ok((covered as f64 / n, size as f64 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub coverage: f64,
    pub mean_size: f64,
    pub count: usize,
}

/// Coverage and mean size among points whose true label is each class.
pub fn class_conditional_metrics(
    sets: &[PredictionSet],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Option<ClassMetrics>>> {
    check_lengths(sets, labels)?;
    let mut covered = vec![0usize; n_classes];
    let mut size = vec![0usize; n_classes];
    let mut count = vec![0usize; n_classes];
    for (s, &y) in sets.iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: n_classes,
            });
        }
        count[y] += 1;
        size[y] += s.len();
        covered[y] += usize::from(s.contains(y));
    }
    Ok((0..n_classes)
        .map(|c| {
            (count[c] > 0).then(|| ClassMetrics {
                coverage: covered[c] as f64 / count[c] as f64,
                mean_size: size[c] as f64 / count[c] as f64,
                count: count[c],
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub lower: f64,
    pub upper: f64,
    pub coverage: Option<f64>,
    pub count: usize,
}

/// Validates strata edges for sets over `n_classes` labels: strictly
/// increasing, starting at or below 0 and ending at or above `n_classes`.
pub fn check_edges(edges: &[f64], n_classes: usize) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::InvalidBins("need at least two edges".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidBins("edges must be finite and strictly increasing".into()));
    }
    if edges[0] > 0.0 || edges[edges.len() - 1] < n_classes as f64 {
        return Err(Error::InvalidBins(format!(
            "edges must cover [0, {n_classes}]"
        )));
    }
    Ok(())
}

/// Five roughly equal-width bins over `[0, K]`.
pub fn default_edges(n_classes: usize) -> Vec<f64> {
    let k = n_classes as f64;
    let mut edges: Vec<f64> = (0..=5).map(|i| (i as f64 * k / 5.0).round()).collect();
    edges.dedup();
    if edges.len() < 2 {
        edges = vec![0.0, k.max(1.0)];
    }
    edges
}

/// Coverage within bins of realized set size. Bins are `[e_i, e_{i+1})`,
/// except the last, which also contains its upper edge.
pub fn set_stratified_metrics(
    sets: &[PredictionSet],
    labels: &[usize],
    edges: &[f64],
    n_classes: usize,
) -> Result<Vec<Stratum>> {
    check_lengths(sets, labels)?;
    check_edges(edges, n_classes)?;
    let bins = edges.len() - 1;
    let mut covered = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (s, &y) in sets.iter().zip(labels) {
        let size = s.len() as f64;
        let bin = (0..bins)
            .find(|&i| size >= edges[i] && (size < edges[i + 1] || i == bins - 1))
            .expect("edges cover every size");
        count[bin] += 1;
        covered[bin] += usize::from(s.contains(y));
    }
    Ok((0..bins)
        .map(|i| Stratum {
            lower: edges[i],
            upper: edges[i + 1],
            coverage: (count[i] > 0).then(|| covered[i] as f64 / count[i] as f64),
            count: count[i],
        })
        .collect())
}

/// Metrics for one `(method, alpha, reg)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub alpha: f64,
    pub lambda: f64,
    pub k_reg: usize,
    pub seed: u64,
    pub n_test: usize,
    pub coverage: f64,
    pub mean_size: f64,
    pub per_class: Vec<Option<ClassMetrics>>,
    pub strata: Vec<Stratum>,
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_sets(
        method: &str,
        alpha: f64,
        reg: RegParams,
        seed: u64,
        sets: &[PredictionSet],
        labels: &[usize],
        n_classes: usize,
        edges: &[f64],
    ) -> Result<Self> {
        let (coverage, mean_size) = marginal_metrics(sets, labels)?;
        Ok(Self {
            method: method.to_string(),
            alpha,
            lambda: reg.lambda,
            k_reg: reg.k_reg,
            seed,
            n_test: sets.len(),
            coverage,
            mean_size,
            per_class: class_conditional_metrics(sets, labels, n_classes)?,
            strata: set_stratified_metrics(sets, labels, edges, n_classes)?,
        })
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "alpha", "method", "lambda", "k_reg", "seed", "n_test", "coverage", "set_size",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for c in 0..self.per_class.len() {
            cols.push(format!("class{c}_coverage"));
            cols.push(format!("class{c}_size"));
            cols.push(format!("class{c}_count"));
        }
        for s in &self.strata {
            cols.push(format!("stratum_{}_{}_coverage", s.lower, s.upper));
            cols.push(format!("stratum_{}_{}_count", s.lower, s.upper));
        }
        cols
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut row = vec![
            fmt_f64(self.alpha),
            self.method.clone(),
            fmt_f64(self.lambda),
            self.k_reg.to_string(),
            self.seed.to_string(),
            self.n_test.to_string(),
            fmt_f64(self.coverage),
            fmt_f64(self.mean_size),
        ];
        for m in &self.per_class {
            match m {
                Some(m) => {
                    row.push(fmt_f64(m.coverage));
                    row.push(fmt_f64(m.mean_size));
                    row.push(m.count.to_string());
                }
                None => {
                    row.push(MISSING.into());
                    row.push(MISSING.into());
                    row.push("0".into());
                }
            }
        }
        for s in &self.strata {
            row.push(s.coverage.map_or_else(|| MISSING.into(), fmt_f64));
            row.push(s.count.to_string());
        }
        row
    }

    /// Parses a record written by [`EvalReport::csv_record`] under
    /// `header`.
    pub fn from_csv(header: &[&str], record: &[&str]) -> Result<Self> {
        if header.len() != record.len() || header.len() < 8 {
            return Err(Error::LengthMismatch {
                left: header.len(),
                right: record.len(),
            });
        }
        let mut report = Self {
            alpha: parse_f64(record[0])?,
            method: record[1].to_string(),
            lambda: parse_f64(record[2])?,
            k_reg: parse_usize(record[3])?,
            seed: record[4].parse().map_err(|_| bad_cell(record[4]))?,
            n_test: parse_usize(record[5])?,
            coverage: parse_f64(record[6])?,
            mean_size: parse_f64(record[7])?,
            per_class: Vec::new(),
            strata: Vec::new(),
        };
        let mut i = 8;
        while i < header.len() && header[i].starts_with("class") {
            let count = parse_usize(record[i + 2])?;
            report.per_class.push(if record[i] == MISSING {
                None
            } else {
                Some(ClassMetrics {
                    coverage: parse_f64(record[i])?,
                    mean_size: parse_f64(record[i + 1])?,
                    count,
                })
            });
            i += 3;
        }
        while i < header.len() {
            let bounds: Vec<&str> = header[i]
                .strip_prefix("stratum_")
                .and_then(|h| h.strip_suffix("_coverage"))
                .ok_or_else(|| bad_cell(header[i]))?
                .split('_')
                .collect();
            if bounds.len() != 2 {
                return Err(bad_cell(header[i]));
            }
            report.strata.push(Stratum {
                lower: parse_f64(bounds[0])?,
                upper: parse_f64(bounds[1])?,
                coverage: if record[i] == MISSING {
                    None
                } else {
                    Some(parse_f64(record[i])?)
                },
                count: parse_usize(record[i + 1])?,
            });
            i += 2;
        }
        Ok(report)
    }
}

/// Shortest representation that parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn bad_cell(cell: &str) -> Error {
    invalid("csv", format!("unparseable cell `{cell}`"))
}

fn parse_f64(cell: &str) -> Result<f64> {
    cell.parse().map_err(|_| bad_cell(cell))
}

fn parse_usize(cell: &str) -> Result<usize> {
    cell.parse().map_err(|_| bad_cell(cell))
}

/// Reports as CSV text: one header line, one row per report. All reports
/// must share a column layout.
pub fn reports_to_csv(reports: &[EvalReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Ok(String::new());
    };
    let header = first.csv_header();
    let mut out = header.join(",");
    out.push('\n');
    for r in reports {
        if r.csv_header() != header {
            return Err(invalid("reports", "reports have different column layouts"));
        }
        let _ = writeln!(out, "{}", r.csv_record().join(","));
    }
    Ok(out)
}

/// Inverse of [`reports_to_csv`].
pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else {
        return Ok(Vec::new());
    };
    let header: Vec<&str> = header.split(',').collect();
    lines
        .map(|l| EvalReport::from_csv(&header, &l.split(',').collect::<Vec<_>>()))
        .collect()
}

/// Regularizer grid: the Cartesian product of `lambdas` and `k_regs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub k_regs: Vec<usize>,
}

impl SweepGrid {
    /// Ten evenly spaced `lambda` in `[0.01, 10]` by ten evenly spaced
    /// `k_reg` in `[1, K - 1]`, rounded to integers. Rounded duplicates are
    /// kept so the grid is always 10 x 10.
    pub fn default_for(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(invalid("K", "the sweep needs at least two classes"));
        }
        let lambdas = linspace(0.01, 10.0, 10);
        let k_regs = linspace(1.0, (n_classes - 1) as f64, 10)
            .into_iter()
            .map(|k| k.round() as usize)
            .collect();
        Ok(Self { lambdas, k_regs })
    }

    /// Pairs sorted by `(lambda, k_reg)` ascending.
    pub fn pairs(&self) -> Result<Vec<RegParams>> {
        let mut pairs = Vec::with_capacity(self.lambdas.len() * self.k_regs.len());
        for &lambda in &self.lambdas {
            for &k in &self.k_regs {
                pairs.push(RegParams::new(lambda, k)?);
            }
        }
        pairs.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.k_reg.cmp(&b.k_reg)));
        Ok(pairs)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// One report per grid pair, reusing the prepared (already fitted) models.
pub fn regularizer_sweep(
    prepared: &PreparedMethod,
    test_labels: &[usize],
    n_classes: usize,
    alpha: f64,
    grid: &SweepGrid,
    seed: u64,
    edges: &[f64],
) -> Result<Vec<EvalReport>> {
    let pairs = grid.pairs()?;
    if pairs.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    if prepared.n_classes() < 2 {
        return Err(invalid("K", "the sweep needs at least two classes"));
    }
    pairs
        .into_iter()
        .map(|reg| {
            let sets = prepared.predict(alpha, reg)?;
            EvalReport::from_sets(
                prepared.method().name(),
                alpha,
                prepared.effective_reg(reg),
                seed,
                &sets,
                test_labels,
                n_classes,
                edges,
            )
        })
        .collect()
}
