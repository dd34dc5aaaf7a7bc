use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Axes every report is grouped by. `branch` comes from the trace, the
/// others from the record taxonomy; missing values group as `unknown`.
pub const TAXONOMY_AXES: [&str; 4] = ["branch", "dynamism", "category", "domain"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub session_id: String,
    pub turn_index: usize,
    pub question: String,
    pub ground_truth: String,
    pub final_answer: String,
    pub fallback: bool,
    /// 0 or 1.
    pub accuracy: f64,
    /// In [0, 1].
    pub overlap: f64,
    /// Wall clock of the turn, capped at its deadline.
    pub elapsed_secs: f64,
    pub stages: Vec<String>,
    pub taxonomy: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Accuracy and overlap in percent, elapse in mean seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub overlap: f64,
    pub elapse: f64,
}

impl GroupMetrics {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a RecordResult>) -> Self {
        let (mut n, mut acc, mut ov, mut el) = (0usize, 0.0, 0.0, 0.0);
        for r in records {
            n += 1;
            acc += r.accuracy;
            ov += r.overlap;
            el += r.elapsed_secs;
        }
        if n == 0 {
            return Self {
                n,
                accuracy: 0.0,
                overlap: 0.0,
                elapse: 0.0,
            };
        }
        let d = n as f64;
        Self {
            n,
            accuracy: 100.0 * acc / d,
            overlap: 100.0 * ov / d,
            elapse: el / d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n: usize,
    pub accuracy: f64,
    pub overlap: f64,
    pub elapse: f64,
    /// axis → value → metrics.
    pub per_taxonomy: BTreeMap<String, BTreeMap<String, GroupMetrics>>,
    pub records: Vec<RecordResult>,
}

impl EvalReport {
    /// Headline and grouped metrics are plain averages of `records`, so a
    /// report can always be recomputed from its own record list.
    pub fn from_records(records: Vec<RecordResult>) -> Self {
        let total = GroupMetrics::of(&records);
        let mut per_taxonomy = BTreeMap::new();
        for axis in TAXONOMY_AXES {
            let mut groups: BTreeMap<String, Vec<&RecordResult>> = BTreeMap::new();
            for r in &records {
                let value = r
                    .taxonomy
                    .get(axis)
                    .cloned()
                    .unwrap_or_else(|| "unknown".into());
                groups.entry(value).or_default().push(r);
            }
            let metrics = groups
                .into_iter()
                .map(|(k, v)| (k, GroupMetrics::of(v)))
                .collect();
            per_taxonomy.insert(axis.to_owned(), metrics);
        }
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            n: total.n,
            accuracy: total.accuracy,
            overlap: total.overlap,
            elapse: total.elapse,
            per_taxonomy,
            records,
        }
    }

    pub fn headline(&self) -> GroupMetrics {
        GroupMetrics {
            n: self.n,
            accuracy: self.accuracy,
            overlap: self.overlap,
            elapse: self.elapse,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, m: &GroupMetrics| {
            let _ = writeln!(
                out,
                "| {name} | {} | {:.2} | {:.2} | {:.2} |",
                m.n, m.accuracy, m.overlap, m.elapse
            );
        };
        let header = |out: &mut String, first: &str| {
            let _ = writeln!(out, "| {first} | N | Accuracy ↑ | Overlap ↑ | Elapse ↓ |");
            let _ = writeln!(out, "|---|---:|---:|---:|---:|");
        };
        let _ = writeln!(out, "# Evaluation report\n");
        header(&mut out, "Method");
        row(&mut out, "dynrag", &self.headline());
        for (axis, groups) in &self.per_taxonomy {
            let _ = writeln!(out, "\n## By {axis}\n");
            header(&mut out, axis);
            for (value, m) in groups {
                row(&mut out, value, m);
            }
        }
        out
    }

    /// Write `path` as JSON and the markdown table next to it with an `md`
    /// extension.
    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())?;
        std::fs::write(path.with_extension("md"), self.to_markdown())
    }
}
