use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LogRecord, TelemetryError, KNOWN_KINDS};

/// Aggregates of one run log. Every field is recomputable from the log alone.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub factors: BTreeMap<String, String>,
    pub records: u64,
    pub unknown_kinds: u64,
    pub grid_steps: u64,
    /// Bus-steps outside the voltage band.
    pub violation_count: u64,
    pub max_excursion_pu: f64,
    pub diverged_steps: u64,
    pub clearings: u64,
    pub clearings_with_accepted: u64,
    pub unresolved_clearings: u64,
    pub resolution_rate: f64,
    pub payments: BTreeMap<String, f64>,
    pub accepted_mvar: BTreeMap<String, f64>,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    /// Test-mode episodes.
    pub episodes: u64,
    pub train_episodes: u64,
    pub return_mean: f64,
    pub return_min: f64,
    pub return_max: f64,
}

impl RunSummary {
    /// Flat numeric view used by comparison tables and CSV output.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            m.insert(k.to_string(), v);
        };
        put("violation_count", self.violation_count as f64);
        put("max_excursion_pu", self.max_excursion_pu);
        put("diverged_steps", self.diverged_steps as f64);
        put("clearings", self.clearings as f64);
        put("clearings_with_accepted", self.clearings_with_accepted as f64);
        put("unresolved_clearings", self.unresolved_clearings as f64);
        put("resolution_rate", self.resolution_rate);
        put("frames_sent", self.frames_sent as f64);
        put("frames_delivered", self.frames_delivered as f64);
        put("frames_dropped", self.frames_dropped as f64);
        put("episodes", self.episodes as f64);
        put("return_mean", self.return_mean);
        put("total_payments", self.payments.values().sum());
        for (a, v) in &self.payments {
            m.insert(format!("payments.{a}"), *v);
        }
        for (a, v) in &self.accepted_mvar {
            m.insert(format!("accepted_mvar.{a}"), *v);
        }
        m
    }

    pub fn render_text(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("run_id".into(), self.run_id.clone()),
            ("experiment".into(), self.experiment.clone().unwrap_or_else(|| "-".into())),
            ("seed".into(), self.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into())),
        ];
        for (k, v) in &self.factors {
            rows.push((format!("factor.{k}"), v.clone()));
        }
        rows.push(("records".into(), self.records.to_string()));
        if self.unknown_kinds > 0 {
            rows.push(("unknown_kinds".into(), self.unknown_kinds.to_string()));
        }
        rows.push(("grid_steps".into(), self.grid_steps.to_string()));
        for (k, v) in self.metrics() {
            rows.push((k, fmt_num(v)));
        }
        rows.push(("return_min".into(), fmt_num(self.return_min)));
        rows.push(("return_max".into(), fmt_num(self.return_max)));
        rows.push(("train_episodes".into(), self.train_episodes.to_string()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.6}")
    }
}

/// CSV with a header row and one row per summary. Metric columns are the
/// union over all summaries; missing entries are written as 0.
pub fn summaries_to_csv(summaries: &[RunSummary]) -> String {
    let factor_names: std::collections::BTreeSet<&String> = summaries.iter().flat_map(|s| s.factors.keys()).collect();
    let metric_names: std::collections::BTreeSet<String> =
        summaries.iter().flat_map(|s| s.metrics().into_keys()).collect();
    let mut out = String::from("run_id,experiment,seed");
    for f in &factor_names {
        out.push_str(&format!(",factor.{f}"));
    }
    for m in &metric_names {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for s in summaries {
        let metrics = s.metrics();
        out.push_str(&s.run_id);
        out.push(',');
        out.push_str(s.experiment.as_deref().unwrap_or(""));
        out.push(',');
        out.push_str(&s.seed.map(|x| x.to_string()).unwrap_or_default());
        for f in &factor_names {
            out.push(',');
            out.push_str(s.factors.get(*f).map(String::as_str).unwrap_or(""));
        }
        for m in &metric_names {
            out.push(',');
            out.push_str(&fmt_num(metrics.get(m).copied().unwrap_or(0.0)));
        }
        out.push('\n');
    }
    out
}

pub fn summarize(path: &Path) -> Result<RunSummary, TelemetryError> {
    summarize_reader(File::open(path)?)
}

fn scalar_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn summarize_reader(reader: impl Read) -> Result<RunSummary, TelemetryError> {
    let mut s = RunSummary::default();
    let mut resolved = 0u64;
    let mut returns = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = LogRecord::parse(&line).map_err(|message| TelemetryError::MalformedLine {
            line: line_no,
            message,
        })?;
        let malformed = |what: &str| TelemetryError::MalformedLine {
            line: line_no,
            message: format!("{}: {what}", rec.kind),
        };
        s.records += 1;
        if s.run_id.is_empty() {
            s.run_id = rec.run_id.clone();
        }
        let p = &rec.payload;
        match rec.kind.as_str() {
            "run.start" => {
                s.experiment = p.get("experiment").and_then(Value::as_str).map(str::to_string);
                s.seed = p.get("seed").and_then(Value::as_u64);
                if let Some(f) = p.get("factors").and_then(Value::as_object) {
                    s.factors = f.iter().map(|(k, v)| (k.clone(), scalar_string(v))).collect();
                }
            }
            "grid.state" => {
                s.grid_steps += 1;
                let v_min = p.get("v_min").and_then(Value::as_f64).ok_or_else(|| malformed("v_min"))?;
                let v_max = p.get("v_max").and_then(Value::as_f64).ok_or_else(|| malformed("v_max"))?;
                let vm = p.get("vm").and_then(Value::as_object).ok_or_else(|| malformed("vm"))?;
                for v in vm.values() {
                    let v = v.as_f64().ok_or_else(|| malformed("vm entry"))?;
                    let exc = (v_min - v).max(v - v_max).max(0.0);
                    if exc > 0.0 {
                        s.violation_count += 1;
                        s.max_excursion_pu = s.max_excursion_pu.max(exc);
                    }
                }
                if p.get("converged").and_then(Value::as_bool) == Some(false) {
                    s.diverged_steps += 1;
                }
            }
            "market.clearing" => {
                s.clearings += 1;
                let accepted = p.get("accepted").and_then(Value::as_array).ok_or_else(|| malformed("accepted"))?;
                if !accepted.is_empty() {
                    s.clearings_with_accepted += 1;
                }
                for a in accepted {
                    let agent = a.get("agent_id").and_then(Value::as_str).ok_or_else(|| malformed("agent_id"))?;
                    let q = a.get("q_mvar").and_then(Value::as_f64).ok_or_else(|| malformed("q_mvar"))?;
                    *s.accepted_mvar.entry(agent.to_string()).or_default() += q.abs();
                }
                if let Some(pay) = p.get("payments").and_then(Value::as_object) {
                    for (agent, v) in pay {
                        let v = v.as_f64().ok_or_else(|| malformed("payment"))?;
                        *s.payments.entry(agent.clone()).or_default() += v;
                    }
                }
                match p.get("resolved").and_then(Value::as_bool) {
                    Some(true) => resolved += 1,
                    Some(false) => s.unresolved_clearings += 1,
                    None => return Err(malformed("resolved")),
                }
            }
            "net.send" => s.frames_sent += 1,
            "net.deliver" => s.frames_delivered += 1,
            "net.drop" => s.frames_dropped += 1,
            "agent.episode" => {
                let r = p.get("return").and_then(Value::as_f64).ok_or_else(|| malformed("return"))?;
                if p.get("mode").and_then(Value::as_str) == Some("train") {
                    s.train_episodes += 1;
                } else {
                    returns.push(r);
                }
            }
            k if KNOWN_KINDS.contains(&k) => {}
            _ => s.unknown_kinds += 1,
        }
    }
    if s.clearings > 0 {
        s.resolution_rate = resolved as f64 / s.clearings as f64;
    }
    if !returns.is_empty() {
        s.episodes = returns.len() as u64;
        s.return_mean = returns.iter().sum::<f64>() / returns.len() as f64;
        s.return_min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        s.return_max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_gives_zero_summary() {
        let s = summarize_reader("".as_bytes()).unwrap();
        assert_eq!(s, RunSummary::default());
    }

    #[test]
    fn single_drop_counts() {
        let line = r#"{"kind":"net.drop","payload":{"frame_id":3},"run_id":"r","seq":0,"source":"net","t_sim":1.0}"#;
        let s = summarize_reader(line.as_bytes()).unwrap();
        assert_eq!(s.frames_dropped, 1);
        assert_eq!(s.records, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"kind\":\"net.send\",\"payload\":{},\"run_id\":\"r\",\"seq\":0,\"source\":\"net\",\"t_sim\":0.0}\nnot json\n";
        let err = summarize_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, TelemetryError::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_kinds_are_counted() {
        let text = r#"{"kind":"custom.thing","payload":{},"run_id":"r","seq":0,"source":"x","t_sim":0.0}"#;
        let s = summarize_reader(text.as_bytes()).unwrap();
        assert_eq!(s.unknown_kinds, 1);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut a = RunSummary {
            run_id: "a".into(),
            ..Default::default()
        };
        a.payments.insert("pv_a".into(), 5.0);
        let b = RunSummary {
            run_id: "b".into(),
            ..Default::default()
        };
        let csv = summaries_to_csv(&[a, b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("run_id,experiment,seed"));
        assert!(lines[0].contains("payments.pv_a"));
    }
}
