//! Max-softmax confidence scoring and AUROC.
//!
//! In-distribution is the positive class. AUROC is computed as the
//! Mann–Whitney statistic with ties counted one half; the ROC curve sweeps
//! every distinct observed score as a `>=` threshold.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::ScoringModel;
use crate::error::{Error, Result};
use crate::tensorio::{ImageTensor, LabeledDataset};

/// Confidence scores of in-distribution and OOD inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    in_dist: Vec<f64>,
    ood: Vec<f64>,
}

impl ScoreSet {
    pub fn new(in_dist: Vec<f64>, ood: Vec<f64>) -> Result<Self> {
        if let Some(s) = in_dist.iter().chain(&ood).find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("score {s} is not finite")));
        }
        Ok(Self { in_dist, ood })
    }

    pub fn in_dist(&self) -> &[f64] {
        &self.in_dist
    }

    pub fn ood(&self) -> &[f64] {
        &self.ood
    }

    /// The same scores with the roles of the two populations exchanged.
    pub fn swapped(&self) -> ScoreSet {
        ScoreSet {
            in_dist: self.ood.clone(),
            ood: self.in_dist.clone(),
        }
    }

    /// CSV with header `score,is_in_distribution`, in-distribution rows first.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["score", "is_in_distribution"])?;
        for (scores, flag) in [(&self.in_dist, "1"), (&self.ood, "0")] {
            for s in scores {
                w.write_record([format!("{s:?}").as_str(), flag])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = read_score_rows(text.as_bytes())?;
        let mut in_dist = Vec::new();
        let mut ood = Vec::new();
        for (score, flag) in rows {
            if flag {
                in_dist.push(score)
            } else {
                ood.push(score)
            }
        }
        Self::new(in_dist, ood)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Every value of the `score` column, for files holding one side only.
pub fn read_score_column(reader: impl std::io::Read) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let col = r
        .headers()?
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| Error::Argument("score CSV lacks a \"score\" column".into()))?;
    r.records()
        .enumerate()
        .map(|(line, record)| {
            record?
                .get(col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format {
                    record: line,
                    message: "unparsable score".into(),
                })
        })
        .collect()
}

/// `(score, is_in_distribution)` rows of a score CSV.
pub fn read_score_rows(reader: impl std::io::Read) -> Result<Vec<(f64, bool)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Argument(format!("score CSV lacks a {name:?} column")))
    };
    let (score_col, flag_col) = (col("score")?, col("is_in_distribution")?);
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let bad = |m: &str| Error::Format {
            record: line,
            message: m.to_string(),
        };
        let score: f64 = record
            .get(score_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("unparsable score"))?;
        let flag = match record.get(flag_col) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(bad("is_in_distribution must be 0 or 1")),
        };
        rows.push((score, flag));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocReport {
    pub auroc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub roc_points: Vec<(f64, f64)>,
    pub threshold_count: usize,
    /// Twice the Mann–Whitney U of the in-distribution sample (integer valued).
    pub twice_u: u64,
}

/// Area under a piecewise-linear curve by the trapezoid rule.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// `(tpr, fpr)`: fractions of each population scoring at least `threshold`.
pub fn detect_at_threshold(scores: &ScoreSet, threshold: f64) -> (f64, f64) {
    let frac = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().filter(|&&s| s >= threshold).count() as f64 / v.len() as f64
        }
    };
    (frac(&scores.in_dist), frac(&scores.ood))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn auroc(scores: &ScoreSet) -> Result<RocReport> {
    let (n_in, n_ood) = (scores.in_dist.len(), scores.ood.len());
    if n_in == 0 || n_ood == 0 {
        return Err(Error::Domain(format!(
            "AUROC needs both populations, got {n_in} in-distribution and {n_ood} OOD scores"
        )));
    }
    let ins = sorted(&scores.in_dist);
    let oods = sorted(&scores.ood);

    // 2U = sum over in-scores of 2 * #(ood < s) + #(ood == s).
    let twice_u: u64 = ins
        .iter()
        .map(|&s| {
            let below = oods.partition_point(|&o| o < s);
            let not_above = oods.partition_point(|&o| o <= s);
            (below + not_above) as u64
        })
        .sum();
    let auroc = twice_u as f64 / (2 * n_in as u64 * n_ood as u64) as f64;

    // Descending sweep over distinct thresholds.
    let mut thresholds: Vec<f64> = ins.iter().chain(&oods).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut roc_points = Vec::with_capacity(thresholds.len() + 1);
    roc_points.push((0.0, 0.0));
    let (mut i, mut o) = (ins.len(), oods.len());
    for &t in &thresholds {
        while i > 0 && ins[i - 1] >= t {
            i -= 1;
        }
        while o > 0 && oods[o - 1] >= t {
            o -= 1;
        }
        let tpr = (ins.len() - i) as f64 / n_in as f64;
        let fpr = (oods.len() - o) as f64 / n_ood as f64;
        roc_points.push((fpr, tpr));
    }
    Ok(RocReport {
        auroc,
        roc_points,
        threshold_count: thresholds.len(),
        twice_u,
    })
}

/// Max-softmax confidence of every image, in order.
pub fn score_dataset(model: &dyn ScoringModel, images: &[ImageTensor]) -> Result<Vec<f64>> {
    images
        .par_iter()
        .enumerate()
        .map(|(index, image)| {
            let scores = model.scores(image).map_err(|e| Error::Model {
                index,
                source: Box::new(e),
            })?;
            Ok(scores.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub name: String,
    pub report: RocReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodTable {
    pub in_accuracy: f64,
    pub rows: Vec<OodRow>,
}

impl OodTable {
    /// One line per OOD set with AUROC in percent, then the in-distribution accuracy.
    pub fn render_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  AUROC (%)\n", "dataset");
        for row in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:.2}", row.name, 100.0 * row.report.auroc);
        }
        let _ = writeln!(out, "{:<width$}  {:.2}", "in-dist accuracy", 100.0 * self.in_accuracy);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,auroc\n");
        for row in &self.rows {
            let _ = writeln!(out, "{},{:.6}", row.name, row.report.auroc);
        }
        out
    }
}

/// AUROC of `model`'s confidence on `in_dataset` against each named OOD set,
/// plus the model's accuracy on `in_dataset`.
pub fn evaluate_ood(
    model: &dyn ScoringModel,
    in_dataset: &LabeledDataset,
    ood_datasets: &[(String, Vec<ImageTensor>)],
) -> Result<OodTable> {
    let with_name = |name: &str| {
        let name = name.to_string();
        move |e: Error| Error::Dataset {
            name: name.clone(),
            source: Box::new(e),
        }
    };
    let in_scores = score_dataset(model, in_dataset.images()).map_err(with_name("in-distribution"))?;
    let correct = in_dataset
        .images()
        .par_iter()
        .enumerate()
        .map(|(index, image)| {
            let s = model.scores(image).map_err(|e| Error::Model {
                index,
                source: Box::new(e),
            })?;
            Ok::<_, Error>(usize::from(crate::classifier::argmax(&s) == image.label()))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
        .map_err(with_name("in-distribution"))?;
    let in_accuracy = if in_dataset.is_empty() {
        0.0
    } else {
        correct as f64 / in_dataset.len() as f64
    };
    let rows = ood_datasets
        .iter()
        .map(|(name, images)| {
            let ood = score_dataset(model, images).map_err(with_name(name))?;
            let report = auroc(&ScoreSet::new(in_scores.clone(), ood)?).map_err(with_name(name))?;
            Ok(OodRow {
                name: name.clone(),
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(OodTable { in_accuracy, rows })
}
