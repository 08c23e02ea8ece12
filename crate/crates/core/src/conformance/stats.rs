use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::classify::{classify_name, ScriptKind};

pub const DEFAULT_COMMENT_PREFIX: &str = "#";

/// Line comment prefixes for common script languages, keyed by extension.
pub fn default_comment_prefixes() -> BTreeMap<String, String> {
    [
        ("py", "#"),
        ("sh", "#"),
        ("bash", "#"),
        ("r", "#"),
        ("R", "#"),
        ("jl", "#"),
        ("pl", "#"),
        ("rb", "#"),
        ("m", "%"),
        ("do", "*"),
        ("sql", "--"),
        ("lua", "--"),
        ("js", "//"),
        ("rs", "//"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LineCounts {
    pub code: usize,
    pub comment: usize,
    pub blank: usize,
}

impl LineCounts {
    pub fn total(&self) -> usize {
        self.code + self.comment + self.blank
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AggregateStats {
    /// Mean code lines over numbered step files.
    pub mean_code: f64,
    /// Population standard deviation, `sqrt(mean(x^2) - mean(x)^2)`.
    pub std_code: f64,
    pub step_files: usize,
    pub total_files: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LineStats {
    pub per_file: BTreeMap<PathBuf, LineCounts>,
    pub aggregate: AggregateStats,
    /// Files left out, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Classifies each physical line: blank if whitespace only, comment if its
/// first non-whitespace characters are `prefix`, code otherwise. A trailing
/// newline does not start an extra line.
pub fn count_lines(text: &str, prefix: &str) -> LineCounts {
    let mut counts = LineCounts::default();
    if text.is_empty() {
        return counts;
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    for line in body.split('\n') {
        let trimmed = line.trim_start();
        if trimmed.trim_end().is_empty() {
            counts.blank += 1;
        } else if !prefix.is_empty() && trimmed.starts_with(prefix) {
            counts.comment += 1;
        } else {
            counts.code += 1;
        }
    }
    counts
}

fn prefix_for<'a>(path: &Path, prefixes: &'a BTreeMap<String, String>) -> &'a str {
    path.extension()
        .and_then(|e| e.to_str())
        .and_then(|e| prefixes.get(e))
        .map(String::as_str)
        .unwrap_or(DEFAULT_COMMENT_PREFIX)
}

/// Line breakdown per file, with mean and spread of code lines over the
/// numbered step files. Files containing a NUL byte are skipped.
pub fn summarize_scripts(
    paths: &[PathBuf],
    comment_prefixes: &BTreeMap<String, String>,
) -> io::Result<LineStats> {
    let mut stats = LineStats::default();
    let mut step_code: Vec<f64> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path)?;
        if bytes.contains(&0) {
            log::warn!("{}: not a text file, skipped", path.display());
            stats.skipped.push((path.clone(), "contains NUL bytes".into()));
            continue;
        }
        let text = String::from_utf8_lossy(&bytes);
        let counts = count_lines(&text, prefix_for(path, comment_prefixes));
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
        if let Some(ScriptKind::OfficialStep(_)) = name.as_deref().and_then(classify_name) {
            step_code.push(counts.code as f64);
        }
        stats.per_file.insert(path.clone(), counts);
    }
    let n = step_code.len();
    if n > 0 {
        let mean = step_code.iter().sum::<f64>() / n as f64;
        let mean_sq = step_code.iter().map(|x| x * x).sum::<f64>() / n as f64;
        stats.aggregate.mean_code = mean;
        stats.aggregate.std_code = (mean_sq - mean * mean).max(0.0).sqrt();
    }
    stats.aggregate.step_files = n;
    stats.aggregate.total_files = stats.per_file.len();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_of_each() {
        assert_eq!(
            count_lines("# hi\n\nx = 1\n", "#"),
            LineCounts {
                code: 1,
                comment: 1,
                blank: 1
            }
        );
        assert_eq!(count_lines("# hi\n\nx = 1", "#").total(), 3);
    }

    #[test]
    fn empty_file() {
        assert_eq!(count_lines("", "#"), LineCounts::default());
    }

    #[test]
    fn edge_lines() {
        // indented comment, whitespace-only line, crlf, trailing blank line
        let c = count_lines("  # c\n \t \r\ncode # not a comment\r\n\n", "#");
        assert_eq!(
            c,
            LineCounts {
                code: 1,
                comment: 1,
                blank: 2
            }
        );
        assert_eq!(count_lines("\n", "#").blank, 1);
        assert_eq!(count_lines("-- x\nselect 1\n", "--").comment, 1);
    }

    #[test]
    fn nul_files_skipped_and_aggregate_over_steps() {
        let dir = tempfile::tempdir().unwrap();
        let files = [
            ("01_a.py", "a\nb\n"),
            ("02_b.py", "a\nb\nc\nd\n# x\n"),
            ("figure_x.py", "a\na\na\na\na\na\n"),
        ];
        let mut paths: Vec<PathBuf> = files
            .iter()
            .map(|(n, t)| {
                let p = dir.path().join(n);
                std::fs::write(&p, t).unwrap();
                p
            })
            .collect();
        let bin = dir.path().join("03_bin.py");
        std::fs::write(&bin, b"a\0b").unwrap();
        paths.push(bin.clone());
        let s = summarize_scripts(&paths, &default_comment_prefixes()).unwrap();
        assert_eq!(s.skipped.len(), 1);
        assert_eq!(s.skipped[0].0, bin);
        assert_eq!(s.aggregate.step_files, 2);
        assert_eq!(s.aggregate.total_files, 3);
        // code counts 2 and 4
        assert!((s.aggregate.mean_code - 3.0).abs() < 1e-12);
        assert!((s.aggregate.std_code - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn classes_partition_lines(text in "([ #a\t]{0,6}\n?){0,20}") {
                let c = count_lines(&text, "#");
                let newlines = text.bytes().filter(|&b| b == b'\n').count();
                let physical = newlines + usize::from(!text.is_empty() && !text.ends_with('\n'));
                prop_assert_eq!(c.total(), physical);
            }
        }
    }
}
