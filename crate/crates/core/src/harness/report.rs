//! Replay reports and per-request log records.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Outcome, TimingBreakdown};
use crate::error::{Error, Result};
use crate::latency::LatencyStats;

/// Per-stage latency statistics, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub encode: LatencyStats,
    pub search: LatencyStats,
    /// Gate time per request (all evaluations together).
    pub eval: LatencyStats,
    /// Mean time of a single candidate evaluation.
    pub eval_per_candidate_ms: f64,
    pub total: LatencyStats,
}

/// Candidate-rank usage over a replayed test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub lambda: f64,
    pub threshold: f64,
    pub k: usize,
    pub encoder_id: String,
    pub evaluator_id: String,
    pub frozen_cache: bool,
    pub total_requests: u64,
    /// `rank_counts[r - 1]` requests answered by candidate `r`.
    pub rank_counts: Vec<u64>,
    pub miss_count: u64,
    pub rank_proportions: Vec<f64>,
    pub miss_proportion: f64,
    pub hit_rate: f64,
    /// Candidates scored by the gate, and how many of those passed.
    pub candidates_evaluated: u64,
    pub candidates_above_threshold: u64,
    pub store_size_before: usize,
    pub store_size_after: usize,
    /// Modelled from measured means; absent when timings are stripped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyReport>,
}

impl RankReport {
    /// Drops every wall-clock field so reports from separate runs compare byte for byte.
    pub fn strip_timings(&mut self) {
        self.average_latency_ms = None;
        self.latency = None;
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json_pretty()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Human-readable table: one row with per-rank percentages, miss and latency.
    pub fn to_table(&self) -> String {
        let mut header = String::from("lambda     k     t");
        let mut row = format!(
            "{:<6} {:>4} {:>5}",
            fmt_num(self.lambda),
            self.k,
            fmt_num(self.threshold)
        );
        for r in 1..=self.k {
            let _ = write!(header, " {:>7}", ordinal(r));
            let _ = write!(row, " {:>7.2}", 100.0 * self.rank_proportions[r - 1]);
        }
        let _ = write!(header, " {:>7} {:>9} {:>8}", "miss", "latency", "requests");
        let latency = self
            .average_latency_ms
            .map(|l| format!("{l:.1}ms"))
            .unwrap_or_else(|| "-".into());
        let _ = write!(
            row,
            " {:>7.2} {:>9} {:>8}",
            100.0 * self.miss_proportion,
            latency,
            self.total_requests
        );
        let mut out = format!("{header}\n{row}\n");
        if let Some(l) = &self.latency {
            for (name, s) in [
                ("encode", &l.encode),
                ("search", &l.search),
                ("eval", &l.eval),
                ("total", &l.total),
            ] {
                let _ = writeln!(
                    out,
                    "  {name:<7} mean {:>8.3}ms  sd {:>8.3}ms  max {:>8.3}ms",
                    s.mean, s.std_dev, s.max
                );
            }
            let _ = writeln!(out, "  per-candidate eval mean {:.3}ms", l.eval_per_candidate_ms);
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn ordinal(r: usize) -> String {
    let suffix = match (r % 10, r % 100) {
        (1, n) if n != 11 => "st",
        (2, n) if n != 12 => "nd",
        (3, n) if n != 13 => "rd",
        _ => "th",
    };
    format!("{r}{suffix}")
}

/// One line of the per-request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub index: usize,
    /// First 16 hex digits of SHA-256 over the history texts.
    pub history_hash: String,
    pub history: Vec<String>,
    pub reference_response: String,
    pub response_text: String,
    pub outcome: Outcome,
    pub candidate_rank: Option<usize>,
    pub similarity: Option<f64>,
    pub coherence: Option<f64>,
    pub evals_used: usize,
    pub candidates_above_threshold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<TimingBreakdown>,
}

pub fn write_log(records: &[RequestLog], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<RequestLog>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(Error::from)?);
    }
    Ok(out)
}

/// Result of running a split at one truncation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchReport {
    pub split: f64,
    pub report: RankReport,
}

pub fn prefetch_table(reports: &[PrefetchReport]) -> String {
    let mut out = String::from(" split  hit rate    miss  requests\n");
    for p in reports {
        let _ = writeln!(
            out,
            "{:>5.0}% {:>8.2}% {:>6.2}% {:>9}",
            100.0 * p.split,
            100.0 * p.report.hit_rate,
            100.0 * p.report.miss_proportion,
            p.report.total_requests
        );
    }
    out
}
