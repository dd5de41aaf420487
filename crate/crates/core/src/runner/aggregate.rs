//! Cross-dataset averaging and clean-minus-perturbed drops.

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricKey, MetricValues};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("nothing to aggregate")]
    Empty,
    #[error("metric sets differ: {0}")]
    Mismatch(String),
}

fn check_same_keys(a: &MetricValues, b: &MetricValues) -> Result<(), AggregateError> {
    if a.keys().eq(b.keys()) {
        return Ok(());
    }
    let only = |x: &MetricValues, y: &MetricValues| {
        x.keys()
            .filter(|k| !y.contains_key(k))
            .map(MetricKey::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    };
    Err(AggregateError::Mismatch(format!(
        "only left [{}], only right [{}]",
        only(a, b),
        only(b, a)
    )))
}

/// Unweighted mean per metric across datasets.
pub fn aggregate_across_datasets(reports: &[&MetricValues]) -> Result<MetricValues, AggregateError> {
    let (first, rest) = reports.split_first().ok_or(AggregateError::Empty)?;
    for r in rest {
        check_same_keys(first, r)?;
    }
    let n = reports.len() as f64;
    Ok(first
        .keys()
        .map(|k| (*k, reports.iter().map(|r| r[k]).sum::<f64>() / n))
        .collect())
}

/// `clean - perturbed` per metric; positive values are degradation.
pub fn compute_drop(clean: &MetricValues, perturbed: &MetricValues) -> Result<MetricValues, AggregateError> {
    check_same_keys(clean, perturbed)?;
    Ok(clean.iter().map(|(k, c)| (*k, c - perturbed[k])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub model: String,
    pub rate: f64,
    pub drops: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DropTable {
    pub rows: Vec<DropRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{headline_keys, Metric};

    fn values(xs: [f64; 6]) -> MetricValues {
        headline_keys().into_iter().zip(xs).collect()
    }

    #[test]
    fn ance_accuracy_average() {
        let fiqa = values([0.523, 0.523, 0.269, 0.532, 0.611, 0.469]);
        let quora = values([0.952, 0.952, 0.820, 0.969, 0.969, 0.959]);
        let hotpot = values([0.821, 0.821, 0.411, 0.682, 0.862, 0.606]);
        let avg = aggregate_across_datasets(&[&fiqa, &quora, &hotpot]).unwrap();
        let acc = avg[&Metric::Accuracy.at(1)];
        assert!((acc - 0.765333).abs() < 1e-6);
        assert_eq!(format!("{acc:.2}"), "0.77");
    }

    #[test]
    fn single_dataset_is_identity() {
        let v = values([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(aggregate_across_datasets(&[&v]).unwrap(), v);
    }

    #[test]
    fn mismatched_sets_rejected() {
        let a = values([0.0; 6]);
        let mut b = a.clone();
        b.remove(&Metric::Map.at(100));
        assert!(matches!(aggregate_across_datasets(&[&a, &b]), Err(AggregateError::Mismatch(m)) if m.contains("MAP@100")));
        assert!(compute_drop(&a, &b).is_err());
        assert_eq!(aggregate_across_datasets(&[]), Err(AggregateError::Empty));
    }

    #[test]
    fn drop_is_clean_minus_perturbed() {
        let clean = values([0.5, 0.5, 0.3, 0.4, 0.6, 0.2]);
        let zero = compute_drop(&clean, &clean).unwrap();
        assert!(zero.values().all(|&d| d == 0.0));

        // DPR Acc@1 at 20%: (0.142+0.769+0.636)/3 - (0.088+0.436+0.333)/3.
        let c = aggregate_across_datasets(&[
            &values([0.142; 6]),
            &values([0.769; 6]),
            &values([0.636; 6]),
        ])
        .unwrap();
        let p = aggregate_across_datasets(&[
            &values([0.088; 6]),
            &values([0.436; 6]),
            &values([0.333; 6]),
        ])
        .unwrap();
        let drop = compute_drop(&c, &p).unwrap()[&Metric::Accuracy.at(1)];
        assert!((drop - 0.23).abs() < 5e-4);
    }
}
