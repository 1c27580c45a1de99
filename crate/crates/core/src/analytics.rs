//! Accuracy, flow matrices, follow rates and time-of-day statistics over
//! disposal records.
//!
//! Every function here drops records whose item never reached a bin
//! (`bin_thrown` absent) before counting anything.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BinColor, DisposalRecord, SessionOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("no disposed records to analyse")]
    EmptyInput,
    #[error("records missing annotations: {}", .0.join(", "))]
    MissingAnnotation(Vec<String>),
    #[error("no correctly predicted records to compute a follow rate from")]
    EmptyQualifyingSet,
    #[error("slot width {0} min does not divide a day")]
    InvalidSlot(i64),
}

/// `numerator / denominator` kept as integers so exact values survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    pub fn percent(self) -> f64 {
        100.0 * self.value()
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} = {:.2}%", self.numerator, self.denominator, self.percent())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// bin_predicted against bin_real.
    Prediction,
    /// bin_thrown against bin_real.
    Disposal,
}

impl FromStr for AccuracyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prediction" => Ok(AccuracyMode::Prediction),
            "disposal" => Ok(AccuracyMode::Disposal),
            other => Err(format!("unknown mode `{other}` (expected prediction|disposal)")),
        }
    }
}

fn disposed(records: &[DisposalRecord]) -> impl Iterator<Item = &DisposalRecord> {
    records.iter().filter(|r| r.is_disposed())
}

/// Pairs (a, b) from every disposed record, or the ids of records lacking
/// one of the two fields.
fn pairs(
    records: &[DisposalRecord],
    a: fn(&DisposalRecord) -> Option<BinColor>,
    b: fn(&DisposalRecord) -> Option<BinColor>,
) -> Result<Vec<(BinColor, BinColor)>, AnalyticsError> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for r in disposed(records) {
        match (a(r), b(r)) {
            (Some(x), Some(y)) => out.push((x, y)),
            _ => missing.push(r.record_id().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(AnalyticsError::MissingAnnotation(missing));
    }
    if out.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    Ok(out)
}

/// Correct / all, where "correct" means the mode's bin equals bin_real.
pub fn accuracy(records: &[DisposalRecord], mode: AccuracyMode) -> Result<Ratio, AnalyticsError> {
    let field = match mode {
        AccuracyMode::Prediction => DisposalRecord::bin_predicted,
        AccuracyMode::Disposal => DisposalRecord::bin_thrown,
    };
    let pairs = pairs(records, field, DisposalRecord::bin_real)?;
    Ok(Ratio {
        numerator: pairs.iter().filter(|(x, real)| x == real).count() as u64,
        denominator: pairs.len() as u64,
    })
}

/// Difference between two accuracies in percentage points.
pub fn accuracy_delta_points(better: Ratio, baseline: Ratio) -> f64 {
    better.percent() - baseline.percent()
}

/// Which two record fields a [`FlowMatrix`] relates. Rows are the first
/// named axis, columns the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Rows bin_real, columns bin_thrown.
    ThrownVsReal,
    /// Rows bin_real, columns bin_predicted.
    PredictedVsReal,
    /// Only records with bin_predicted == bin_real; rows that shared value,
    /// columns bin_thrown.
    CorrectPredictedVsThrown,
}

impl Pairing {
    pub fn axis_names(self) -> (&'static str, &'static str) {
        match self {
            Pairing::ThrownVsReal => ("real", "thrown"),
            Pairing::PredictedVsReal => ("real", "predicted"),
            Pairing::CorrectPredictedVsThrown => ("predicted", "thrown"),
        }
    }
}

impl FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" | "thrown_vs_real" => Ok(Pairing::ThrownVsReal),
            "B" | "b" | "predicted_vs_real" => Ok(Pairing::PredictedVsReal),
            "C" | "c" | "correct_predicted_vs_thrown" => Ok(Pairing::CorrectPredictedVsThrown),
            other => Err(format!("unknown pairing `{other}` (expected A|B|C)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMatrix {
    pub pairing: Pairing,
    /// `counts[row][col]`, indexed by [`BinColor::index`].
    pub counts: [[u64; 3]; 3],
}

impl FlowMatrix {
    pub fn zero(pairing: Pairing) -> Self {
        FlowMatrix {
            pairing,
            counts: [[0; 3]; 3],
        }
    }

    pub fn get(&self, row: BinColor, col: BinColor) -> u64 {
        self.counts[row.index()][col.index()]
    }

    pub fn row(&self, row: BinColor) -> [u64; 3] {
        self.counts[row.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

impl fmt::Display for FlowMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (rows, cols) = self.pairing.axis_names();
        writeln!(f, "{:<16}{:>8}{:>8}{:>8}", format!("{rows} \\ {cols}"), "blue", "yellow", "brown")?;
        for c in BinColor::ALL {
            let r = self.row(c);
            writeln!(f, "{:<16}{:>8}{:>8}{:>8}", c.as_str(), r[0], r[1], r[2])?;
        }
        write!(f, "total {}", self.total())
    }
}

pub fn flow_matrix(records: &[DisposalRecord], pairing: Pairing) -> Result<FlowMatrix, AnalyticsError> {
    let cells: Vec<(BinColor, BinColor)> = match pairing {
        Pairing::ThrownVsReal => pairs(records, DisposalRecord::bin_real, DisposalRecord::bin_thrown)?,
        Pairing::PredictedVsReal => pairs(records, DisposalRecord::bin_real, DisposalRecord::bin_predicted)?,
        Pairing::CorrectPredictedVsThrown => {
            // validates annotations before filtering on them
            pairs(records, DisposalRecord::bin_predicted, DisposalRecord::bin_real)?;
            disposed(records)
                .filter(|r| r.bin_predicted() == r.bin_real())
                .map(|r| (r.bin_predicted().expect("checked"), r.bin_thrown().expect("disposed")))
                .collect()
        }
    };
    let mut m = FlowMatrix::zero(pairing);
    for (row, col) in cells {
        m.counts[row.index()][col.index()] += 1;
    }
    Ok(m)
}

/// Among correctly predicted, disposed items: the share thrown where the
/// LED said.
pub fn follow_rate(records: &[DisposalRecord]) -> Result<Ratio, AnalyticsError> {
    let m = flow_matrix(records, Pairing::CorrectPredictedVsThrown)?;
    if m.total() == 0 {
        return Err(AnalyticsError::EmptyQualifyingSet);
    }
    Ok(Ratio {
        numerator: m.diagonal(),
        denominator: m.total(),
    })
}

/// [`follow_rate`] restricted to each predicted color; `None` where no
/// correct prediction of that color exists.
pub fn follow_rate_by_color(records: &[DisposalRecord]) -> Result<[Option<Ratio>; 3], AnalyticsError> {
    let m = flow_matrix(records, Pairing::CorrectPredictedVsThrown)?;
    Ok(BinColor::ALL.map(|c| {
        let row = m.row(c);
        let total: u64 = row.iter().sum();
        (total > 0).then_some(Ratio {
            numerator: row[c.index()],
            denominator: total,
        })
    }))
}

/// Box-plot summary of one series of per-day counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    /// Raw per-day counts the summary was computed from.
    pub counts: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
}

/// Percentile by linear interpolation between closest ranks of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

impl BoxStats {
    /// Quartiles by linear interpolation, whiskers at 1.5 IQR clamped to
    /// the data. An empty series yields all zeros.
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return BoxStats {
                counts: Vec::new(),
                median: 0.0,
                q1: 0.0,
                q3: 0.0,
                iqr: 0.0,
                whisker_low: 0.0,
                whisker_high: 0.0,
                outliers: Vec::new(),
                mean: 0.0,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = percentile(&sorted, 0.25);
        let median = percentile(&sorted, 0.5);
        let q3 = percentile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = sorted.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence);
        let whisker_low = inside.clone().next().unwrap_or(q1);
        let whisker_high = inside.last().unwrap_or(q3);
        BoxStats {
            counts: values.to_vec(),
            median,
            q1,
            q3,
            iqr,
            whisker_low,
            whisker_high,
            outliers: sorted.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

/// Disposals per bin in one time-of-day slot, across days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalStats {
    /// Minutes after midnight (UTC) where the slot starts.
    pub slot_start_min: u32,
    pub slot_end_min: u32,
    pub blue: BoxStats,
    pub yellow: BoxStats,
    pub brown: BoxStats,
    /// All bins together.
    pub total: BoxStats,
}

impl TemporalStats {
    pub fn color(&self, c: BinColor) -> &BoxStats {
        match c {
            BinColor::Blue => &self.blue,
            BinColor::Yellow => &self.yellow,
            BinColor::Brown => &self.brown,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{:02}:{:02}-{:02}:{:02}",
            self.slot_start_min / 60,
            self.slot_start_min % 60,
            self.slot_end_min / 60,
            self.slot_end_min % 60
        )
    }
}

/// Per-slot box-plot statistics of items disposed into each bin. Day 0 is
/// the UTC date of the earliest disposed record; records on or after day
/// `days` are ignored.
pub fn temporal_stats(
    records: &[DisposalRecord],
    slot_width: Duration,
    days: u32,
) -> Result<Vec<TemporalStats>, AnalyticsError> {
    let width_min = slot_width.num_minutes();
    if width_min <= 0 || (24 * 60) % width_min != 0 || slot_width != Duration::minutes(width_min) {
        return Err(AnalyticsError::InvalidSlot(width_min));
    }
    let slots = (24 * 60 / width_min) as usize;
    let days = days as usize;
    // counts[slot][color][day]
    let mut counts = vec![[vec![0u32; days], vec![0u32; days], vec![0u32; days]]; slots];
    let first_day: Option<NaiveDate> = disposed(records).map(|r| r.time().date_naive()).min();
    if let Some(first) = first_day {
        for r in disposed(records) {
            let day = (r.time().date_naive() - first).num_days() as usize;
            if day >= days {
                continue;
            }
            let minute = i64::from(r.time().hour() * 60 + r.time().minute());
            let slot = (minute / width_min) as usize;
            let color = r.bin_thrown().expect("disposed").index();
            counts[slot][color][day] += 1;
        }
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(s, per_color)| {
            let series = |c: usize| per_color[c].iter().map(|v| f64::from(*v)).collect::<Vec<_>>();
            let total: Vec<f64> = (0..days)
                .map(|d| f64::from(per_color[0][d] + per_color[1][d] + per_color[2][d]))
                .collect();
            TemporalStats {
                slot_start_min: (s as i64 * width_min) as u32,
                slot_end_min: ((s as i64 + 1) * width_min) as u32,
                blue: BoxStats::from_values(&series(0)),
                yellow: BoxStats::from_values(&series(1)),
                brown: BoxStats::from_values(&series(2)),
                total: BoxStats::from_values(&total),
            }
        })
        .collect())
}

/// Mean per-slot total inside `peak` divided by the mean per-slot total in
/// the rest of `window` (both as minute ranges after midnight).
pub fn peak_ratio(stats: &[TemporalStats], peak: (u32, u32), window: (u32, u32)) -> Option<f64> {
    let in_range = |s: &TemporalStats, (lo, hi): (u32, u32)| s.slot_start_min >= lo && s.slot_end_min <= hi;
    let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let peak_mean = mean_of(stats.iter().filter(|s| in_range(s, peak)).map(|s| s.total.mean).collect())?;
    let off_mean = mean_of(
        stats
            .iter()
            .filter(|s| in_range(s, window) && !in_range(s, peak))
            .map(|s| s.total.mean)
            .collect(),
    )?;
    (off_mean > 0.0).then(|| peak_mean / off_mean)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: usize,
    pub target: usize,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyDiagram {
    pub pairing: Pairing,
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
}

/// Nodes 0..3 are the row colors, 3..6 the column colors; one link per
/// nonzero cell.
pub fn sankey(matrix: &FlowMatrix) -> SankeyDiagram {
    let (src, dst) = matrix.pairing.axis_names();
    let nodes = BinColor::ALL
        .iter()
        .map(|c| format!("{c} ({src})"))
        .chain(BinColor::ALL.iter().map(|c| format!("{c} ({dst})")))
        .enumerate()
        .map(|(id, name)| SankeyNode { id, name })
        .collect();
    let mut links = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if matrix.counts[i][j] > 0 {
                links.push(SankeyLink {
                    source: i,
                    target: 3 + j,
                    value: matrix.counts[i][j],
                });
            }
        }
    }
    SankeyDiagram {
        pairing: matrix.pairing,
        nodes,
        links,
    }
}

pub fn export_sankey(matrix: &FlowMatrix, path: &Path) -> io::Result<SankeyDiagram> {
    let diagram = sankey(matrix);
    let text = serde_json::to_string_pretty(&diagram).expect("diagram serializes");
    fs::write(path, text + "\n")?;
    Ok(diagram)
}

/// Outcome counts, including the reward claims that carry no metric.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub presented: u64,
    pub disposed: u64,
    pub undisposed: u64,
    pub by_outcome: BTreeMap<String, u64>,
    pub donations_by_ngo: BTreeMap<u32, u64>,
    pub user_claims: u64,
}

pub fn summarize(records: &[DisposalRecord]) -> OutcomeSummary {
    let mut s = OutcomeSummary {
        presented: records.len() as u64,
        ..OutcomeSummary::default()
    };
    for r in records {
        if r.is_disposed() {
            s.disposed += 1;
        } else {
            s.undisposed += 1;
        }
        let key = serde_json::to_value(r.outcome().kind())
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *s.by_outcome.entry(key).or_default() += 1;
        match r.outcome() {
            SessionOutcome::CorrectDonated(n) => *s.donations_by_ngo.entry(n.get()).or_default() += 1,
            SessionOutcome::CorrectRewarded => s.user_claims += 1,
            _ => {}
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, TimeZone, Utc};

    fn at(day: u32, hour: u32, min: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 4 + day, hour, min, 0).unwrap()
    }

    fn rec(
        id: usize,
        time: DateTime<Utc>,
        pred: BinColor,
        thrown: Option<BinColor>,
        real: Option<BinColor>,
    ) -> DisposalRecord {
        let outcome = match thrown {
            None => SessionOutcome::Timeout,
            Some(t) if t == pred => SessionOutcome::CorrectUnclaimed,
            Some(_) => SessionOutcome::IncorrectBin,
        };
        DisposalRecord::new(format!("r{id}"), b"i", time, Some(pred), thrown, real, outcome).unwrap()
    }

    fn simple(pred: BinColor, thrown: BinColor, real: BinColor) -> DisposalRecord {
        rec(0, at(0, 9, 0), pred, Some(thrown), Some(real))
    }

    #[test]
    fn all_correct_accuracy_is_one() {
        use BinColor::*;
        let rs = vec![simple(Blue, Blue, Blue), simple(Brown, Yellow, Brown)];
        assert_eq!(accuracy(&rs, AccuracyMode::Prediction).unwrap().value(), 1.0);
        assert_eq!(accuracy(&rs, AccuracyMode::Disposal).unwrap().value(), 0.5);
    }

    #[test]
    fn accuracy_errors() {
        use BinColor::*;
        assert_eq!(accuracy(&[], AccuracyMode::Prediction), Err(AnalyticsError::EmptyInput));
        let undisposed_only = vec![rec(1, at(0, 9, 0), Blue, None, None)];
        assert_eq!(accuracy(&undisposed_only, AccuracyMode::Prediction), Err(AnalyticsError::EmptyInput));
        let missing = vec![rec(7, at(0, 9, 0), Blue, Some(Blue), None), simple(Blue, Blue, Blue)];
        assert_eq!(
            accuracy(&missing, AccuracyMode::Prediction),
            Err(AnalyticsError::MissingAnnotation(vec!["r7".into()]))
        );
    }

    #[test]
    fn undisposed_records_are_excluded() {
        use BinColor::*;
        let rs = vec![
            simple(Blue, Blue, Blue),
            // unannotated and undisposed: ignored, not an error
            rec(2, at(0, 9, 1), Yellow, None, None),
        ];
        assert_eq!(accuracy(&rs, AccuracyMode::Prediction).unwrap().denominator, 1);
        assert_eq!(flow_matrix(&rs, Pairing::PredictedVsReal).unwrap().total(), 1);
        assert_eq!(follow_rate(&rs).unwrap().denominator, 1);
    }

    #[test]
    fn follow_rates() {
        use BinColor::*;
        let rs = vec![simple(Blue, Blue, Blue), simple(Yellow, Yellow, Yellow)];
        assert_eq!(follow_rate(&rs).unwrap().value(), 1.0);
        let wrong = vec![simple(Blue, Blue, Brown)];
        assert_eq!(follow_rate(&wrong), Err(AnalyticsError::EmptyQualifyingSet));
        let by = follow_rate_by_color(&rs).unwrap();
        assert_eq!(by[Blue.index()].unwrap().value(), 1.0);
        assert!(by[Brown.index()].is_none());
    }

    #[test]
    fn matrix_axes() {
        use BinColor::*;
        let rs = vec![simple(Yellow, Brown, Blue)];
        let a = flow_matrix(&rs, Pairing::ThrownVsReal).unwrap();
        assert_eq!(a.get(Blue, Brown), 1);
        let b = flow_matrix(&rs, Pairing::PredictedVsReal).unwrap();
        assert_eq!(b.get(Blue, Yellow), 1);
        let c = flow_matrix(&rs, Pairing::CorrectPredictedVsThrown).unwrap();
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn percentile_linear() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.25), 1.75);
        assert_eq!(percentile(&xs, 0.5), 2.5);
        assert_eq!(percentile(&xs, 0.75), 3.25);
        assert_eq!(percentile(&[5.0], 0.3), 5.0);
        assert_eq!(percentile(&[], 0.3), 0.0);
    }

    #[test]
    fn box_stats_with_outlier() {
        let b = BoxStats::from_values(&[1.0, 1.0, 1.0, 1.0, 9.0]);
        assert_eq!((b.q1, b.median, b.q3, b.iqr), (1.0, 1.0, 1.0, 0.0));
        assert_eq!(b.outliers, vec![9.0]);
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 1.0));
        assert!((b.mean - 2.6).abs() < 1e-12);
    }

    #[test]
    fn constant_series_temporal() {
        let mut rs = Vec::new();
        for day in 0..5 {
            for k in 0..2 {
                rs.push(rec(rs.len(), at(day, 13, 10 + k), BinColor::Yellow, Some(BinColor::Yellow), None));
            }
        }
        let stats = temporal_stats(&rs, Duration::hours(1), 5).unwrap();
        assert_eq!(stats.len(), 24);
        let slot = &stats[13];
        assert_eq!(slot.label(), "13:00-14:00");
        assert_eq!(slot.yellow.median, 2.0);
        assert_eq!(slot.yellow.iqr, 0.0);
        assert!(slot.yellow.outliers.is_empty());
        assert_eq!(slot.blue.mean, 0.0);
        assert_eq!(stats[9].total.mean, 0.0);
    }

    #[test]
    fn temporal_slot_validation() {
        assert_eq!(temporal_stats(&[], Duration::minutes(7), 5), Err(AnalyticsError::InvalidSlot(7)));
        assert!(temporal_stats(&[], Duration::seconds(90), 5).is_err());
        let empty = temporal_stats(&[], Duration::minutes(30), 5).unwrap();
        assert_eq!(empty.len(), 48);
        assert!(empty.iter().all(|s| s.total.mean == 0.0));
    }

    #[test]
    fn sankey_links() {
        let mut m = FlowMatrix::zero(Pairing::ThrownVsReal);
        assert!(sankey(&m).links.is_empty());
        for i in 0..3 {
            m.counts[i][i] = 4;
        }
        let d = sankey(&m);
        assert_eq!(d.nodes.len(), 6);
        assert_eq!(d.links.len(), 3);
        assert_eq!(d.nodes[3].name, "blue (thrown)");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        export_sankey(&m, &path).unwrap();
        let back: SankeyDiagram = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn pairing_names() {
        assert_eq!("A".parse::<Pairing>().unwrap(), Pairing::ThrownVsReal);
        assert_eq!("b".parse::<Pairing>().unwrap(), Pairing::PredictedVsReal);
        assert_eq!("C".parse::<Pairing>().unwrap(), Pairing::CorrectPredictedVsThrown);
        assert!("D".parse::<Pairing>().is_err());
    }
}
