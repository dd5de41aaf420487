//! JSON and plain-text report tables.
//!
//! Per-dataset tables list every condition; the average table takes the
//! unweighted mean over datasets; the drop table holds clean minus perturbed
//! averages. JSON keeps full precision, text tables are rounded.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_across_datasets, compute_drop, AggregateError, DropRow, DropTable};
use super::experiment::{Condition, ExperimentResult};
use crate::metrics::{headline_keys, MetricKey, MetricValues};
use crate::retrieval::write_trec_run;

pub const DATASET_DECIMALS: usize = 3;
pub const AVERAGE_DECIMALS: usize = 2;
pub const DROP_DECIMALS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageTable {
    pub model: String,
    pub datasets: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Headline columns present in `values`, or every key if none are.
pub fn columns(values: &MetricValues) -> Vec<MetricKey> {
    let headline: Vec<MetricKey> = headline_keys().into_iter().filter(|k| values.contains_key(k)).collect();
    if headline.is_empty() {
        values.keys().copied().collect()
    } else {
        headline
    }
}

/// Aligned plain-text table with a `Model` column followed by `keys`.
pub fn format_table(title: &str, rows: &[TableRow], keys: &[MetricKey], decimals: usize) -> String {
    let mut header = vec!["Model".to_string()];
    header.extend(keys.iter().map(MetricKey::to_string));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            std::iter::once(r.label.clone())
                .chain(keys.iter().map(|k| {
                    r.values
                        .get(k)
                        .map_or_else(|| "-".to_string(), |v| format!("{v:.decimals$}"))
                }))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(&header));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn row_label(model: &str, c: Condition) -> String {
    match c {
        Condition::Clean => model.to_string(),
        _ => format!("{model}-{}", c.label()),
    }
}

/// Condition averages across every dataset that completed.
pub fn average_table(result: &ExperimentResult) -> Result<AverageTable, ReportError> {
    let model = &result.provenance.provider;
    let done: Vec<_> = result.datasets.iter().filter(|d| d.error.is_none()).collect();
    let mut rows = Vec::new();
    for c in result.conditions() {
        let values: Vec<&MetricValues> = done
            .iter()
            .filter_map(|d| d.condition(c).map(|r| &r.report.averaged))
            .collect();
        if values.is_empty() {
            continue;
        }
        rows.push(TableRow {
            label: row_label(model, c),
            values: aggregate_across_datasets(&values)?,
        });
    }
    Ok(AverageTable {
        model: model.clone(),
        datasets: done.iter().map(|d| d.name.clone()).collect(),
        rows,
    })
}

pub fn drop_table(result: &ExperimentResult, average: &AverageTable) -> Result<DropTable, ReportError> {
    let find = |c: Condition| {
        let label = row_label(&average.model, c);
        average.rows.iter().find(|r| r.label == label)
    };
    let Some(clean) = find(Condition::Clean) else {
        return Ok(DropTable::default());
    };
    let mut rows = Vec::new();
    for &rate in &result.rates {
        if let Some(p) = find(Condition::Perturbed(rate)) {
            rows.push(DropRow {
                model: average.model.clone(),
                rate,
                drops: compute_drop(&clean.values, &p.values)?,
            });
        }
    }
    Ok(DropTable { rows })
}

fn write(path: PathBuf, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    fs::write(&path, contents).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>, ReportError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn mkdir(dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `result.json`, `datasets/<name>.{json,txt}`, `average.{json,txt}`,
/// `drop.{json,txt}` and, when ranked lists are present,
/// `runs/<name>.<condition>.trec`. Returns the paths written.
pub fn emit_report(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    let datasets_dir = out_dir.join("datasets");
    mkdir(&datasets_dir)?;
    let model = &result.provenance.provider;

    let path = out_dir.join("result.json");
    write(path.clone(), &json(&path, result)?, &mut written)?;

    for d in &result.datasets {
        let path = datasets_dir.join(format!("{}.json", d.name));
        write(path.clone(), &json(&path, d)?, &mut written)?;
        let rows: Vec<TableRow> = d
            .conditions
            .iter()
            .map(|c| TableRow {
                label: row_label(model, c.condition),
                values: c.report.averaged.clone(),
            })
            .collect();
        let text = match (&d.error, rows.first()) {
            (Some(err), _) => format!("Summary of results for {}\nerror: {err}\n", d.name),
            (None, Some(first)) => format_table(
                &format!("Summary of results for {}", d.name),
                &rows,
                &columns(&first.values),
                DATASET_DECIMALS,
            ),
            (None, None) => format!("Summary of results for {}\n(no conditions)\n", d.name),
        };
        write(datasets_dir.join(format!("{}.txt", d.name)), text.as_bytes(), &mut written)?;

        let runs_dir = out_dir.join("runs");
        for c in d.conditions.iter().filter(|c| !c.run.is_empty()) {
            mkdir(&runs_dir)?;
            let path = runs_dir.join(format!("{}.{}.trec", d.name, c.condition.label()));
            let mut buf = Vec::new();
            write_trec_run(&mut buf, &c.run, &c.condition.label())
                .map_err(|source| ReportError::Io { path: path.clone(), source })?;
            write(path, &buf, &mut written)?;
        }
    }

    let average = average_table(result)?;
    let path = out_dir.join("average.json");
    write(path.clone(), &json(&path, &average)?, &mut written)?;
    let title = format!("Average performance ({})", average.datasets.join(", "));
    let text = match average.rows.first() {
        Some(first) => format_table(&title, &average.rows, &columns(&first.values), AVERAGE_DECIMALS),
        None => format!("{title}\n(no completed datasets)\n"),
    };
    write(out_dir.join("average.txt"), text.as_bytes(), &mut written)?;

    let drops = drop_table(result, &average)?;
    let path = out_dir.join("drop.json");
    write(path.clone(), &json(&path, &drops)?, &mut written)?;
    let rates: Vec<String> = result.rates.iter().map(|r| format!("{}%", super::experiment::percent(*r))).collect();
    let title = format!(
        "Average performance drop with {} perturbation ({})",
        rates.join(", "),
        average.datasets.join(", ")
    );
    let rows: Vec<TableRow> = drops
        .rows
        .iter()
        .map(|r| TableRow {
            label: row_label(&r.model, Condition::Perturbed(r.rate)),
            values: r.drops.clone(),
        })
        .collect();
    let text = match rows.first() {
        Some(first) => format_table(&title, &rows, &columns(&first.values), DROP_DECIMALS),
        None => format!("{title}\n(no perturbed conditions)\n"),
    };
    write(out_dir.join("drop.txt"), text.as_bytes(), &mut written)?;
    Ok(written)
}

pub fn read_result(path: &Path) -> Result<ExperimentResult, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;

    #[test]
    fn table_columns_follow_headline_order() {
        let values: MetricValues = headline_keys().into_iter().zip([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).collect();
        let text = format_table("T", &[TableRow { label: "ANCE".into(), values }], &columns(&headline_keys().into_iter().map(|k| (k, 0.0)).collect()), 3);
        let header = text.lines().nth(1).unwrap();
        let names: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(names, ["Model", "Acc@1", "Prec@1", "Rec@1", "NDCG@10", "MRR@10", "MAP@100"]);
        assert!(text.lines().nth(3).unwrap().ends_with("0.600"));
    }

    #[test]
    fn missing_headline_keys_fall_back_to_all() {
        let values: MetricValues = [(Metric::Ndcg.at(5), 0.5), (Metric::Mrr.at(5), 0.25)].into_iter().collect();
        assert_eq!(columns(&values), vec![Metric::Ndcg.at(5), Metric::Mrr.at(5)]);
    }

    #[test]
    fn rounding_in_text() {
        let values: MetricValues = [(Metric::Accuracy.at(1), 0.765_333)].into_iter().collect();
        let text = format_table("avg", &[TableRow { label: "m".into(), values }], &[Metric::Accuracy.at(1)], 2);
        assert!(text.contains("0.77"));
    }
}
