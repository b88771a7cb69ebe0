//! Evaluation reports: per-class and overall accuracy, confusion counts,
//! per-fold breakdown, plus text and CSV rendering.

use crate::error::{Error, Result};
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: String,
    pub truth: String,
    pub predicted: String,
    pub fold: u32,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    /// Sorted distinct labels over truth and predictions.
    pub classes: Vec<String>,
    /// Percent correct per class, aligned with `classes`; `None` when the
    /// class never appears as a truth label.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Percent correct over all recordings.
    pub overall_accuracy: f64,
    /// Counts; rows = truth, columns = predicted.
    pub confusion: Array2<usize>,
    /// (fold, percent correct), ascending fold id.
    pub per_fold_accuracy: Vec<(u32, f64)>,
}

/// Score aligned prediction/truth lists.
pub fn evaluate(predictions: &[Prediction]) -> Result<EvaluationReport> {
    if predictions.is_empty() {
        return Err(Error::Manifest("no predictions to evaluate".into()));
    }
    let mut classes: Vec<String> = predictions
        .iter()
        .flat_map(|p| [p.truth.clone(), p.predicted.clone()])
        .collect();
    classes.sort();
    classes.dedup();
    let idx = |label: &str| classes.iter().position(|c| c == label).unwrap();

    let n = classes.len();
    let mut confusion = Array2::zeros((n, n));
    for p in predictions {
        confusion[(idx(&p.truth), idx(&p.predicted))] += 1;
    }
    let per_class_accuracy: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let total: usize = confusion.row(i).sum();
            if total == 0 {
                None
            } else {
                Some(confusion[(i, i)] as f64 / total as f64 * 100.0)
            }
        })
        .collect();
    let correct: usize = (0..n).map(|i| confusion[(i, i)]).sum();
    let overall_accuracy = correct as f64 / predictions.len() as f64 * 100.0;

    let mut folds: Vec<u32> = predictions.iter().map(|p| p.fold).collect();
    folds.sort_unstable();
    folds.dedup();
    let per_fold_accuracy = folds
        .into_iter()
        .map(|f| {
            let members: Vec<&Prediction> =
                predictions.iter().filter(|p| p.fold == f).collect();
            let correct = members.iter().filter(|p| p.truth == p.predicted).count();
            (f, correct as f64 / members.len() as f64 * 100.0)
        })
        .collect();

    Ok(EvaluationReport {
        classes,
        per_class_accuracy,
        overall_accuracy,
        confusion,
        per_fold_accuracy,
    })
}

/// Length-checked convenience wrapper over parallel truth/prediction lists.
pub fn evaluate_lists(predicted: &[String], truth: &[String]) -> Result<EvaluationReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            predictions: predicted.len(),
            truth: truth.len(),
        });
    }
    let preds: Vec<Prediction> = predicted
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (p, t))| Prediction {
            id: i.to_string(),
            truth: t.clone(),
            predicted: p.clone(),
            fold: 1,
        })
        .collect();
    evaluate(&preds)
}

impl EvaluationReport {
    /// Recompute the overall accuracy from the stored confusion counts and
    /// check it against the reported value.
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.confusion.iter().sum();
        let correct: usize = (0..self.classes.len()).map(|i| self.confusion[(i, i)]).sum();
        let recomputed = correct as f64 / total.max(1) as f64 * 100.0;
        if (recomputed - self.overall_accuracy).abs() > 1e-9 {
            return Err(Error::Manifest(format!(
                "overall accuracy {} disagrees with confusion matrix ({recomputed})",
                self.overall_accuracy
            )));
        }
        for (i, acc) in self.per_class_accuracy.iter().enumerate() {
            let total: usize = self.confusion.row(i).sum();
            match acc {
                None if total == 0 => {}
                Some(a) if total > 0 => {
                    let r = self.confusion[(i, i)] as f64 / total as f64 * 100.0;
                    if (r - a).abs() > 1e-9 {
                        return Err(Error::Manifest(format!(
                            "class {} accuracy {a} disagrees with confusion matrix ({r})",
                            self.classes[i]
                        )));
                    }
                }
                _ => {
                    return Err(Error::Manifest(format!(
                        "class {} accuracy presence disagrees with confusion matrix",
                        self.classes[i]
                    )))
                }
            }
        }
        Ok(())
    }

    /// Table with one row per class and an Overall line.
    pub fn render_text(&self) -> String {
        let name_width = self
            .classes
            .iter()
            .map(|c| c.len())
            .chain(std::iter::once("Category".len()))
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        out.push_str(&format!("{:<name_width$}  Accuracy (%)\n", "Category"));
        for (c, acc) in self.classes.iter().zip(&self.per_class_accuracy) {
            match acc {
                Some(a) => out.push_str(&format!("{c:<name_width$}  {a:>10.1}\n")),
                None => out.push_str(&format!("{c:<name_width$}  {:>10}\n", "-")),
            }
        }
        out.push_str(&format!(
            "{:<name_width$}  {:>10.1}\n",
            "Overall", self.overall_accuracy
        ));
        if !self.per_fold_accuracy.is_empty() {
            out.push('\n');
            for (f, a) in &self.per_fold_accuracy {
                out.push_str(&format!("fold {f}: {a:.1}%\n"));
            }
        }
        out
    }

    /// CSV rows: `class,<name>,,<accuracy>`, `overall,,,<accuracy>`,
    /// `fold,<id>,,<accuracy>`, `confusion,<truth>,<predicted>,<count>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,a,b,value\n");
        for (c, acc) in self.classes.iter().zip(&self.per_class_accuracy) {
            if let Some(a) = acc {
                out.push_str(&format!("class,{c},,{a}\n"));
            }
        }
        out.push_str(&format!("overall,,,{}\n", self.overall_accuracy));
        for (f, a) in &self.per_fold_accuracy {
            out.push_str(&format!("fold,{f},,{a}\n"));
        }
        for i in 0..self.classes.len() {
            for j in 0..self.classes.len() {
                let v = self.confusion[(i, j)];
                if v > 0 {
                    out.push_str(&format!(
                        "confusion,{},{},{v}\n",
                        self.classes[i], self.classes[j]
                    ));
                }
            }
        }
        out
    }

    /// Parse the CSV form back and re-validate it against its own
    /// confusion counts.
    pub fn from_csv(text: &str) -> Result<EvaluationReport> {
        let mut classes: Vec<String> = Vec::new();
        let mut class_acc: Vec<(String, f64)> = Vec::new();
        let mut overall = None;
        let mut folds = Vec::new();
        let mut conf_rows: Vec<(String, String, usize)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 {
                if line.trim() != "record,a,b,value" {
                    return Err(Error::Manifest(format!("bad report header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, ',').collect();
            if fields.len() != 4 {
                return Err(Error::Manifest(format!("bad report row {line:?}")));
            }
            let value: f64 = fields[3]
                .parse()
                .map_err(|_| Error::Manifest(format!("bad value in {line:?}")))?;
            match fields[0] {
                "class" => class_acc.push((fields[1].to_string(), value)),
                "overall" => overall = Some(value),
                "fold" => folds.push((
                    fields[1]
                        .parse()
                        .map_err(|_| Error::Manifest(format!("bad fold in {line:?}")))?,
                    value,
                )),
                "confusion" => conf_rows.push((
                    fields[1].to_string(),
                    fields[2].to_string(),
                    value as usize,
                )),
                other => return Err(Error::Manifest(format!("bad record kind {other:?}"))),
            }
        }
        for (t, p, _) in &conf_rows {
            classes.push(t.clone());
            classes.push(p.clone());
        }
        for (c, _) in &class_acc {
            classes.push(c.clone());
        }
        classes.sort();
        classes.dedup();
        let n = classes.len();
        let idx = |label: &str| classes.iter().position(|c| c == label).unwrap();
        let mut confusion = Array2::zeros((n, n));
        for (t, p, v) in &conf_rows {
            confusion[(idx(t), idx(p))] = *v;
        }
        let per_class_accuracy = classes
            .iter()
            .map(|c| class_acc.iter().find(|(name, _)| name == c).map(|(_, a)| *a))
            .collect();
        let report = EvaluationReport {
            classes,
            per_class_accuracy,
            overall_accuracy: overall
                .ok_or_else(|| Error::Manifest("report missing overall row".into()))?,
            confusion,
            per_fold_accuracy: folds,
        };
        report.validate()?;
        Ok(report)
    }
}
