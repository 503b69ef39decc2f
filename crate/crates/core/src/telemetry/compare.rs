use std::collections::{BTreeMap, BTreeSet};

use super::summary::fmt_num;
use super::{RunSummary, TelemetryError};

/// Per-level means of every summary metric, with deltas against the first level.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub factor: String,
    /// Levels in order of first appearance (summaries sorted by run id).
    pub levels: Vec<String>,
    pub runs_per_level: Vec<usize>,
    pub metrics: Vec<String>,
    /// `means[level][metric]`
    pub means: Vec<Vec<f64>>,
    /// `deltas[level][metric]`, zero for the first level.
    pub deltas: Vec<Vec<f64>>,
}

impl ComparisonTable {
    pub fn mean(&self, level: &str, metric: &str) -> Option<f64> {
        let l = self.levels.iter().position(|x| x == level)?;
        let m = self.metrics.iter().position(|x| x == metric)?;
        Some(self.means[l][m])
    }

    pub fn delta(&self, level: &str, metric: &str) -> Option<f64> {
        let l = self.levels.iter().position(|x| x == level)?;
        let m = self.metrics.iter().position(|x| x == metric)?;
        Some(self.deltas[l][m])
    }

    pub fn render_text(&self) -> String {
        let mut header = vec![format!("metric \\ {}", self.factor)];
        for (l, n) in self.levels.iter().zip(&self.runs_per_level) {
            header.push(format!("{l} (n={n})"));
        }
        for l in self.levels.iter().skip(1) {
            header.push(format!("Δ {l}"));
        }
        let mut rows = vec![header];
        for (mi, m) in self.metrics.iter().enumerate() {
            let mut row = vec![m.clone()];
            row.extend(self.means.iter().map(|lv| fmt_num(lv[mi])));
            row.extend(self.deltas.iter().skip(1).map(|lv| fmt_num(lv[mi])));
            rows.push(row);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    let pad = widths[c] - cell.chars().count();
                    if c == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One row per level and statistic: `level,stat,runs,<metrics...>`.
    pub fn render_csv(&self) -> String {
        let mut out = format!("{},stat,runs", self.factor);
        for m in &self.metrics {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (stat, table) in [("mean", &self.means), ("delta", &self.deltas)] {
            for (li, level) in self.levels.iter().enumerate() {
                out.push_str(&format!("{level},{stat},{}", self.runs_per_level[li]));
                for v in &table[li] {
                    out.push(',');
                    out.push_str(&fmt_num(*v));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn compare(summaries: &[RunSummary], group_by: &str) -> Result<ComparisonTable, TelemetryError> {
    if summaries.len() < 2 {
        return Err(TelemetryError::Compare(format!(
            "comparison needs at least 2 run summaries, got {}",
            summaries.len()
        )));
    }
    let experiments: BTreeSet<Option<&str>> = summaries.iter().map(|s| s.experiment.as_deref()).collect();
    if experiments.len() > 1 {
        let names: Vec<String> = experiments
            .iter()
            .map(|e| e.unwrap_or("<none>").to_string())
            .collect();
        return Err(TelemetryError::Compare(format!(
            "summaries come from different experiments: {}",
            names.join(", ")
        )));
    }
    if summaries.iter().any(|s| !s.factors.contains_key(group_by)) {
        let known: BTreeSet<&String> = summaries.iter().flat_map(|s| s.factors.keys()).collect();
        let known: Vec<&str> = known.into_iter().map(String::as_str).collect();
        return Err(TelemetryError::Compare(format!(
            "factor {group_by:?} is not recorded in every run; known factors: [{}]",
            known.join(", ")
        )));
    }

    let mut sorted: Vec<&RunSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let metrics: Vec<String> = sorted
        .iter()
        .flat_map(|s| s.metrics().into_keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut levels: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<BTreeMap<String, f64>>> = BTreeMap::new();
    for s in &sorted {
        let level = s.factors[group_by].clone();
        if !levels.contains(&level) {
            levels.push(level.clone());
        }
        groups.entry(level).or_default().push(s.metrics());
    }

    let means: Vec<Vec<f64>> = levels
        .iter()
        .map(|l| {
            let runs = &groups[l];
            metrics
                .iter()
                .map(|m| runs.iter().map(|r| r.get(m).copied().unwrap_or(0.0)).sum::<f64>() / runs.len() as f64)
                .collect()
        })
        .collect();
    let deltas = means
        .iter()
        .map(|row| row.iter().zip(&means[0]).map(|(v, base)| v - base).collect())
        .collect();
    Ok(ComparisonTable {
        factor: group_by.to_string(),
        runs_per_level: levels.iter().map(|l| groups[l].len()).collect(),
        levels,
        metrics,
        means,
        deltas,
    })
}
