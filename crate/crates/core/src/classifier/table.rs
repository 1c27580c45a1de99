use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::domain::{BinColor, ClassificationOutcome, DisposalRecord};

const ROW_TOLERANCE: f64 = 1e-9;

/// Row-normalized probability of each predicted bin given the true bin,
/// plus the chance that an image is rejected outright.
///
/// Rows and columns follow [`BinColor::index`] order (blue, yellow, brown).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: [[f64; 3]; 3],
    pub invalid_rate: f64,
}

impl ConfusionTable {
    pub fn identity() -> Self {
        ConfusionTable {
            rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            invalid_rate: 0.0,
        }
    }

    /// Rates observed over the 67 disposed items of the five-day trial.
    pub fn reported_itrash() -> Self {
        ConfusionTable {
            rows: [
                [11.0 / 17.0, 2.0 / 17.0, 4.0 / 17.0],
                [3.0 / 36.0, 30.0 / 36.0, 3.0 / 36.0],
                [0.0, 0.0, 1.0],
            ],
            invalid_rate: 0.0,
        }
    }

    /// Same confusion rates, with the share of presented items that never
    /// made it into a bin (12 of 79) treated as rejected images.
    pub fn presentation_noise() -> Self {
        ConfusionTable {
            invalid_rate: 12.0 / 79.0,
            ..Self::reported_itrash()
        }
    }

    pub fn row(&self, real: BinColor) -> [f64; 3] {
        self.rows[real.index()]
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(0.0..=1.0).contains(&self.invalid_rate) || self.invalid_rate.is_nan() {
            return Err(ClassifierError::InvalidTable(format!(
                "invalid_rate {} outside [0, 1]",
                self.invalid_rate
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ClassifierError::InvalidTable(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(ClassifierError::InvalidTable(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Probability that an item drawn from `mixture` (weights per true bin)
    /// is classified into its own bin.
    pub fn expected_accuracy(&self, mixture: [f64; 3]) -> f64 {
        let total: f64 = mixture.iter().sum();
        let hit: f64 = (0..3).map(|i| mixture[i] * self.rows[i][i]).sum();
        (1.0 - self.invalid_rate) * hit / total
    }
}

/// Seeded draw of a classifier answer for an item whose true bin is known.
pub fn classify_simulated(
    true_label: BinColor,
    table: &ConfusionTable,
    seed: u64,
) -> Result<ClassificationOutcome, ClassifierError> {
    table.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reject: f64 = rng.random();
    if reject < table.invalid_rate {
        return Ok(ClassificationOutcome::Invalid);
    }
    let u: f64 = rng.random();
    let row = table.row(true_label);
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(ClassificationOutcome::Valid(BinColor::ALL[i]));
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let last = row.iter().rposition(|p| *p > 0.0).unwrap_or(true_label.index());
    Ok(ClassificationOutcome::Valid(BinColor::ALL[last]))
}

/// Estimates a confusion table from annotated records (predicted given real).
/// A true bin with no records gets an identity row.
pub fn fit_confusion_table(records: &[DisposalRecord]) -> Result<ConfusionTable, ClassifierError> {
    if records.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let mut counts = [[0u64; 3]; 3];
    for r in records {
        counts[r.real()?.index()][r.predicted()?.index()] += 1;
    }
    let mut rows = [[0.0; 3]; 3];
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            log::warn!("no records with real bin {}; using an identity row", BinColor::ALL[i]);
            rows[i][i] = 1.0;
            continue;
        }
        for j in 0..3 {
            rows[i][j] = row[j] as f64 / total as f64;
        }
    }
    Ok(ConfusionTable {
        rows,
        invalid_rate: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SessionOutcome;
    use chrono::{DateTime, TimeZone, Utc};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 4, 8, 0, 0).unwrap()
    }

    fn annotated(id: usize, real: BinColor, predicted: BinColor) -> DisposalRecord {
        DisposalRecord::new(
            format!("r{id}"),
            b"i",
            t0(),
            Some(predicted),
            Some(predicted),
            Some(real),
            SessionOutcome::CorrectUnclaimed,
        )
        .unwrap()
    }

    #[test]
    fn identity_table_is_exact() {
        for seed in 0..100 {
            assert_eq!(
                classify_simulated(BinColor::Brown, &ConfusionTable::identity(), seed).unwrap(),
                ClassificationOutcome::Valid(BinColor::Brown)
            );
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let t = ConfusionTable::presentation_noise();
        for seed in 0..200 {
            assert_eq!(
                classify_simulated(BinColor::Yellow, &t, seed).unwrap(),
                classify_simulated(BinColor::Yellow, &t, seed).unwrap()
            );
        }
    }

    #[test]
    fn invalid_tables_rejected() {
        let mut t = ConfusionTable::identity();
        t.rows[1] = [0.5, 0.6, 0.0];
        assert!(matches!(classify_simulated(BinColor::Blue, &t, 0), Err(ClassifierError::InvalidTable(_))));
        let mut t = ConfusionTable::identity();
        t.rows[0] = [1.5, -0.5, 0.0];
        assert!(t.validate().is_err());
        let mut t = ConfusionTable::identity();
        t.invalid_rate = 1.2;
        assert!(t.validate().is_err());
        assert!(ConfusionTable::reported_itrash().validate().is_ok());
        assert!(ConfusionTable::presentation_noise().validate().is_ok());
    }

    #[test]
    fn blue_row_matches_reported_flows() {
        let row = ConfusionTable::reported_itrash().row(BinColor::Blue);
        // 11 blue, 2 yellow, 4 brown out of 17
        assert_eq!(row.map(|p| (p * 17.0).round() as u32), [11, 2, 4]);
    }

    #[test]
    fn blue_row_empirical_frequencies() {
        let t = ConfusionTable::reported_itrash();
        let n = 50_000u64;
        let mut hist = [0u64; 3];
        for seed in 0..n {
            if let ClassificationOutcome::Valid(c) = classify_simulated(BinColor::Blue, &t, seed).unwrap() {
                hist[c.index()] += 1;
            }
        }
        for (j, expected) in t.row(BinColor::Blue).iter().enumerate() {
            let freq = hist[j] as f64 / n as f64;
            assert!((freq - expected).abs() < 0.01, "col {j}: {freq} vs {expected}");
        }
    }

    #[test]
    fn invalid_rate_is_honored() {
        let t = ConfusionTable::presentation_noise();
        let n = 20_000u64;
        let invalid = (0..n)
            .filter(|s| classify_simulated(BinColor::Blue, &t, *s).unwrap() == ClassificationOutcome::Invalid)
            .count();
        assert!((invalid as f64 / n as f64 - 12.0 / 79.0).abs() < 0.01);
    }

    #[test]
    fn fit_single_record() {
        let t = fit_confusion_table(&[annotated(0, BinColor::Blue, BinColor::Blue)]).unwrap();
        assert_eq!(t.row(BinColor::Blue), [1.0, 0.0, 0.0]);
        // unseen classes fall back to identity rows
        assert_eq!(t.row(BinColor::Yellow), [0.0, 1.0, 0.0]);
        assert_eq!(t.row(BinColor::Brown), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_confusion_table(&[]), Err(ClassifierError::EmptyInput));
        let unannotated = DisposalRecord::new(
            "x",
            b"i",
            t0(),
            Some(BinColor::Blue),
            None,
            None,
            SessionOutcome::Timeout,
        )
        .unwrap();
        assert!(matches!(fit_confusion_table(&[unannotated]), Err(ClassifierError::Record(_))));
    }

    #[test]
    fn regenerated_set_round_trips() {
        // 14 brown, 17 blue, 36 yellow items; counts per cell = row share * class size
        let table = ConfusionTable::reported_itrash();
        let class_sizes = [(BinColor::Blue, 17u32), (BinColor::Yellow, 36), (BinColor::Brown, 14)];
        let mut records = Vec::new();
        for (real, n) in class_sizes {
            for (j, p) in table.row(real).iter().enumerate() {
                let count = (p * f64::from(n)).round() as usize;
                for _ in 0..count {
                    records.push(annotated(records.len(), real, BinColor::ALL[j]));
                }
            }
        }
        assert_eq!(records.len(), 67);
        let fitted = fit_confusion_table(&records).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((fitted.rows[i][j] - table.rows[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn json_format() {
        let t: ConfusionTable =
            serde_json::from_str(r#"{"rows":[[1,0,0],[0,1,0],[0,0,1]],"invalid_rate":0.0}"#).unwrap();
        assert_eq!(t, ConfusionTable::identity());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fitted_rows_sum_to_one(cells in proptest::collection::vec((0usize..3, 0usize..3), 1..200)) {
                let records: Vec<_> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, (r, p))| annotated(i, BinColor::ALL[*r], BinColor::ALL[*p]))
                    .collect();
                let t = fit_confusion_table(&records).unwrap();
                for row in t.rows {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
                prop_assert!(t.validate().is_ok());
            }

            #[test]
            fn draws_stay_in_label_set(seed in any::<u64>(), real in 0usize..3, invalid in 0.0f64..1.0) {
                let t = ConfusionTable { invalid_rate: invalid, ..ConfusionTable::reported_itrash() };
                let out = classify_simulated(BinColor::ALL[real], &t, seed).unwrap();
                prop_assert!(matches!(out, ClassificationOutcome::Invalid | ClassificationOutcome::Valid(_)));
                if real == BinColor::Brown.index() {
                    prop_assert!(out != ClassificationOutcome::Valid(BinColor::Blue));
                }
            }
        }
    }
}
