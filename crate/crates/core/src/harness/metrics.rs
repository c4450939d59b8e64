use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    None,
    Quadratic,
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if labels.len() != predictions.len() {
        return Err(Error::Shape(format!("{} labels, {} predictions", labels.len(), predictions.len())));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        if t >= classes || p >= classes {
            return Err(Error::InvalidArgument(format!("class index out of range: ({t}, {p})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// `(p_o - p_e) / (1 - p_e)` with agreement weights `1` on the diagonal
/// (unweighted) or `1 - (i - j)^2 / (C - 1)^2` (quadratic).
pub fn cohen_kappa(confusion: &[Vec<u64>], weighting: Weighting) -> Result<f64> {
    let c = confusion.len();
    if c == 0 || confusion.iter().any(|r| r.len() != c) {
        return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
    }
    let n: u64 = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let n = n as f64;
    let rows: Vec<f64> = confusion.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let cols: Vec<f64> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum::<u64>() as f64 / n).collect();
    let weight = |i: usize, j: usize| match weighting {
        Weighting::None => f64::from(u8::from(i == j)),
        Weighting::Quadratic if c == 1 => 1.0,
        Weighting::Quadratic => 1.0 - ((i as f64 - j as f64) / (c - 1) as f64).powi(2),
    };
    let (mut po, mut pe) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            po += weight(i, j) * confusion[i][j] as f64 / n;
            pe += weight(i, j) * rows[i] * cols[j];
        }
    }
    if (1.0 - pe).abs() < 1e-15 {
        return Err(Error::UndefinedKappa);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Evaluation summary. Kappas are `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub kappa: Option<f64>,
    pub kappa_quadratic: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub config_hash: String,
}

impl Metrics {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], config_hash: &str) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
        }
        let confusion = confusion_matrix(labels, predictions, crate::fusion::NUM_CLASSES)?;
        Metrics::from_confusion(confusion, config_hash)
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>, config_hash: &str) -> Result<Self> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
        }
        let trace: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedKappa) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Metrics {
            accuracy: trace as f64 / total as f64,
            kappa: defined(cohen_kappa(&confusion, Weighting::None))?,
            kappa_quadratic: defined(cohen_kappa(&confusion, Weighting::Quadratic))?,
            confusion,
            config_hash: config_hash.to_string(),
        })
    }

    /// Pretty JSON with a trailing newline; byte-stable for equal inputs.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_derived_kappas() {
        let k = cohen_kappa(&[vec![2, 1], vec![1, 2]], Weighting::None).unwrap();
        assert!((k - 1.0 / 3.0).abs() < 1e-12);
        let m = vec![vec![2, 1, 0], vec![1, 2, 0], vec![0, 0, 3]];
        assert!((cohen_kappa(&m, Weighting::None).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let eye = vec![vec![4, 0, 0], vec![0, 2, 0], vec![0, 0, 5]];
        assert_eq!(cohen_kappa(&eye, Weighting::None).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&eye, Weighting::Quadratic).unwrap(), 1.0);
        // rows proportional to column marginals
        let indep = vec![vec![2, 4, 2], vec![1, 2, 1], vec![3, 6, 3]];
        assert!(cohen_kappa(&indep, Weighting::None).unwrap().abs() < 1e-12);
        assert!(cohen_kappa(&indep, Weighting::Quadratic).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quadratic_penalises_distance() {
        // same unweighted agreement, errors one vs two grades apart
        let near = vec![vec![5, 1, 0], vec![0, 5, 1], vec![0, 0, 6]];
        let far = vec![vec![5, 0, 1], vec![0, 5, 1], vec![0, 0, 6]];
        let (qn, qf) = (cohen_kappa(&near, Weighting::Quadratic).unwrap(), cohen_kappa(&far, Weighting::Quadratic).unwrap());
        assert!(qn > qf);
    }

    #[test]
    fn undefined_kappa() {
        assert!(matches!(cohen_kappa(&[vec![5, 0], vec![0, 0]], Weighting::None), Err(Error::UndefinedKappa)));
        let m = Metrics::from_predictions(&[1, 1], &[1, 1], "h").unwrap();
        assert_eq!((m.accuracy, m.kappa), (1.0, None));
        assert!(Metrics::from_predictions(&[], &[], "h").is_err());
    }

    #[test]
    fn degenerate_predictor() {
        let labels = [0, 0, 1, 1, 2, 2];
        let m = Metrics::from_predictions(&labels, &[1; 6], "").unwrap();
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.kappa, Some(0.0));
    }
}
