use std::io::Write;

use serde::Serialize;

/// Evaluation after one aggregation round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based: row `r` describes the global model after `r` aggregations.
    pub round: usize,
    /// Main accuracy on the clean held-out set.
    pub ma: f64,
    /// Fraction of triggered non-target held-out samples classified as the target label.
    pub ba: f64,
    pub accepted: usize,
    pub rejected_malicious: usize,
    pub rejected_benign: usize,
    /// Accepted models from malicious clients.
    #[serde(skip)]
    pub accepted_malicious: usize,
}

/// Writes `rows` as CSV with a header line.
pub fn write_csv<W: Write>(out: W, rows: &[RoundMetrics]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
