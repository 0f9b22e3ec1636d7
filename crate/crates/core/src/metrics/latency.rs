use std::io;

use serde::Serialize;

use super::profile::RunningStats;
use super::MetricsError;

/// Published per-step latencies (ms) of the reference implementation, by
/// mode label. Absolute values are hardware specific; only their ratios are
/// meant to be compared.
pub const REFERENCE_LATENCY_MS: [(&str, f64); 5] = [
    ("sequential", 4997.0),
    ("k_step_5", 3514.0),
    ("two_track", 3655.0),
    ("parallel_sync", 2156.0),
    ("parallel_async", 686.0),
];

fn reference(label: &str) -> Option<f64> {
    REFERENCE_LATENCY_MS.iter().find(|(l, _)| *l == label).map(|(_, v)| *v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    pub count: usize,
    pub min_ms: f64,
    pub max_ms: f64,
}

pub fn latency_summary(latencies: &[f64]) -> Result<LatencySummary, MetricsError> {
    if latencies.is_empty() {
        return Err(MetricsError::Empty);
    }
    let stats: RunningStats = latencies.iter().copied().collect();
    Ok(LatencySummary {
        mean_ms: stats.mean(),
        std_ms: stats.population_std(),
        count: latencies.len(),
        min_ms: latencies.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: latencies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRow {
    pub mode: String,
    #[serde(flatten)]
    pub summary: LatencySummary,
    pub tokens: u64,
    /// Sequential mean over this row's mean, when a sequential row exists.
    pub speedup: Option<f64>,
    pub reference_ms: Option<f64>,
    pub reference_speedup: Option<f64>,
}

/// Side-by-side latency comparison, fastest mode first.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModeTable {
    pub rows: Vec<ModeRow>,
}

impl ModeTable {
    /// Builds the table from `(mode label, latencies, tokens)` cells; cells
    /// sharing a label are pooled.
    pub fn build<'a>(cells: impl IntoIterator<Item = (&'a str, &'a [f64], u64)>) -> Result<Self, MetricsError> {
        let mut pooled: Vec<(String, Vec<f64>, u64)> = Vec::new();
        for (label, lat, tokens) in cells {
            match pooled.iter_mut().find(|(l, _, _)| l == label) {
                Some((_, all, t)) => {
                    all.extend_from_slice(lat);
                    *t += tokens;
                }
                None => pooled.push((label.to_owned(), lat.to_vec(), tokens)),
            }
        }
        let mut rows = pooled
            .into_iter()
            .map(|(mode, lat, tokens)| {
                Ok(ModeRow {
                    reference_ms: reference(&mode),
                    mode,
                    summary: latency_summary(&lat)?,
                    tokens,
                    speedup: None,
                    reference_speedup: None,
                })
            })
            .collect::<Result<Vec<_>, MetricsError>>()?;
        rows.sort_by(|a, b| a.summary.mean_ms.total_cmp(&b.summary.mean_ms).then_with(|| a.mode.cmp(&b.mode)));
        let seq = rows.iter().find(|r| r.mode == "sequential").map(|r| r.summary.mean_ms);
        let seq_ref = reference("sequential");
        for r in &mut rows {
            r.speedup = seq.map(|s| s / r.summary.mean_ms);
            r.reference_speedup = seq_ref.zip(r.reference_ms).map(|(s, x)| s / x);
        }
        Ok(Self { rows })
    }

    pub fn row(&self, mode: &str) -> Option<&ModeRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn mean(&self, mode: &str) -> Option<f64> {
        self.row(mode).map(|r| r.summary.mean_ms)
    }

    /// `mean(numerator) / mean(denominator)`.
    pub fn ratio(&self, numerator: &str, denominator: &str) -> Option<f64> {
        Some(self.mean(numerator)? / self.mean(denominator)?)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode",
            "mean_ms",
            "std_ms",
            "count",
            "min_ms",
            "max_ms",
            "tokens",
            "speedup",
            "reference_ms",
            "reference_speedup",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                r.mode.clone(),
                s.mean_ms.to_string(),
                s.std_ms.to_string(),
                s.count.to_string(),
                s.min_ms.to_string(),
                s.max_ms.to_string(),
                r.tokens.to_string(),
                opt(r.speedup),
                opt(r.reference_ms),
                opt(r.reference_speedup),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
