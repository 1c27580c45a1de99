//! Shared vocabulary: bin colors, classifier outcomes, session outcomes and
//! the persisted disposal record.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when a record or one of its fields is malformed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("unknown bin color `{0}`")]
    UnknownColor(String),
    #[error("invalid NGO id {0}; expected 1..=4")]
    InvalidNgo(u32),
    #[error("record {record_id} is missing `{field}`")]
    MissingField {
        record_id: String,
        field: &'static str,
    },
    #[error("record {record_id}: outcome {outcome} requires bin_thrown == bin_predicted")]
    InconsistentOutcome { record_id: String, outcome: String },
    #[error("record {record_id}: timeout outcome cannot carry bin_thrown")]
    TimeoutWithThrow { record_id: String },
    #[error("record {record_id}: image is not valid base64")]
    InvalidImage { record_id: String },
    #[error("record id must not be empty")]
    EmptyRecordId,
}

/// Municipal sorting category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinColor {
    /// Paper and cardboard.
    Blue,
    /// Plastic.
    Yellow,
    /// Organic.
    Brown,
}

impl BinColor {
    pub const ALL: [BinColor; 3] = [BinColor::Blue, BinColor::Yellow, BinColor::Brown];

    /// Row/column index used by every 3x3 table in the crate.
    pub fn index(self) -> usize {
        match self {
            BinColor::Blue => 0,
            BinColor::Yellow => 1,
            BinColor::Brown => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<BinColor> {
        BinColor::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinColor::Blue => "blue",
            BinColor::Yellow => "yellow",
            BinColor::Brown => "brown",
        }
    }
}

impl fmt::Display for BinColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinColor {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blue" => Ok(BinColor::Blue),
            "yellow" => Ok(BinColor::Yellow),
            "brown" => Ok(BinColor::Brown),
            other => Err(DomainError::UnknownColor(other.to_string())),
        }
    }
}

/// What the classifier said about one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationOutcome {
    Valid(BinColor),
    /// No usable item in the frame; the user is asked to present it again.
    Invalid,
}

impl ClassificationOutcome {
    pub fn color(self) -> Option<BinColor> {
        match self {
            ClassificationOutcome::Valid(c) => Some(c),
            ClassificationOutcome::Invalid => None,
        }
    }
}

/// One of the four donation targets offered on the LCD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct NgoId(u8);

impl NgoId {
    pub const ALL: [NgoId; 4] = [NgoId(1), NgoId(2), NgoId(3), NgoId(4)];

    pub fn new(id: u32) -> Result<Self, DomainError> {
        match id {
            1..=4 => Ok(NgoId(id as u8)),
            _ => Err(DomainError::InvalidNgo(id)),
        }
    }

    pub fn get(self) -> u32 {
        u32::from(self.0)
    }

    /// Label of the ledger wallet that receives donations for this NGO.
    pub fn wallet_label(self) -> String {
        format!("ngo_{}", self.0)
    }
}

impl TryFrom<u32> for NgoId {
    type Error = DomainError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        NgoId::new(value)
    }
}

impl From<NgoId> for u32 {
    fn from(id: NgoId) -> u32 {
        id.get()
    }
}

impl fmt::Display for NgoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How a session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    /// Correct bin and the user scanned their wallet QR code.
    CorrectRewarded,
    /// Correct bin but nobody claimed or donated the reward.
    CorrectUnclaimed,
    /// Correct bin and the reward was donated to an NGO.
    CorrectDonated(NgoId),
    IncorrectBin,
    /// No bin sensor fired before the disposal deadline.
    Timeout,
}

impl SessionOutcome {
    pub fn is_correct(self) -> bool {
        matches!(
            self,
            SessionOutcome::CorrectRewarded
                | SessionOutcome::CorrectUnclaimed
                | SessionOutcome::CorrectDonated(_)
        )
    }
}

impl fmt::Display for SessionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionOutcome::CorrectRewarded => f.write_str("correct_rewarded"),
            SessionOutcome::CorrectUnclaimed => f.write_str("correct_unclaimed"),
            SessionOutcome::CorrectDonated(n) => write!(f, "correct_donated({n})"),
            SessionOutcome::IncorrectBin => f.write_str("incorrect_bin"),
            SessionOutcome::Timeout => f.write_str("timeout"),
        }
    }
}

/// [`SessionOutcome`] without the NGO payload, for filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    CorrectRewarded,
    CorrectUnclaimed,
    CorrectDonated,
    IncorrectBin,
    Timeout,
}

impl SessionOutcome {
    pub fn kind(self) -> OutcomeKind {
        match self {
            SessionOutcome::CorrectRewarded => OutcomeKind::CorrectRewarded,
            SessionOutcome::CorrectUnclaimed => OutcomeKind::CorrectUnclaimed,
            SessionOutcome::CorrectDonated(_) => OutcomeKind::CorrectDonated,
            SessionOutcome::IncorrectBin => OutcomeKind::IncorrectBin,
            SessionOutcome::Timeout => OutcomeKind::Timeout,
        }
    }
}

impl FromStr for OutcomeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "correct_rewarded" => OutcomeKind::CorrectRewarded,
            "correct_unclaimed" => OutcomeKind::CorrectUnclaimed,
            "correct_donated" => OutcomeKind::CorrectDonated,
            "incorrect_bin" => OutcomeKind::IncorrectBin,
            "timeout" => OutcomeKind::Timeout,
            other => return Err(format!("unknown outcome `{other}`")),
        })
    }
}

/// Timestamps are persisted in whole seconds, ISO-8601 UTC.
pub mod utc_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// One completed interaction, as persisted by the event store.
///
/// Construction goes through [`DisposalRecord::new`] (or deserialization,
/// which applies the same checks), so a value of this type always satisfies
/// the outcome/bin consistency rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RecordWire", into = "RecordWire")]
pub struct DisposalRecord {
    record_id: String,
    image_b64: String,
    time: DateTime<Utc>,
    bin_predicted: Option<BinColor>,
    bin_thrown: Option<BinColor>,
    bin_real: Option<BinColor>,
    outcome: SessionOutcome,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    record_id: String,
    image_b64: String,
    #[serde(with = "utc_seconds")]
    time: DateTime<Utc>,
    bin_predicted: Option<BinColor>,
    bin_thrown: Option<BinColor>,
    bin_real: Option<BinColor>,
    outcome: SessionOutcome,
}

impl TryFrom<RecordWire> for DisposalRecord {
    type Error = DomainError;

    fn try_from(w: RecordWire) -> Result<Self, Self::Error> {
        let rec = DisposalRecord {
            record_id: w.record_id,
            image_b64: w.image_b64,
            time: w.time,
            bin_predicted: w.bin_predicted,
            bin_thrown: w.bin_thrown,
            bin_real: w.bin_real,
            outcome: w.outcome,
        };
        rec.validate()?;
        Ok(rec)
    }
}

impl From<DisposalRecord> for RecordWire {
    fn from(r: DisposalRecord) -> Self {
        RecordWire {
            record_id: r.record_id,
            image_b64: r.image_b64,
            time: r.time,
            bin_predicted: r.bin_predicted,
            bin_thrown: r.bin_thrown,
            bin_real: r.bin_real,
            outcome: r.outcome,
        }
    }
}

impl DisposalRecord {
    /// Builds a record from raw image bytes. `time` is truncated to seconds.
    pub fn new(
        record_id: impl Into<String>,
        image: &[u8],
        time: DateTime<Utc>,
        bin_predicted: Option<BinColor>,
        bin_thrown: Option<BinColor>,
        bin_real: Option<BinColor>,
        outcome: SessionOutcome,
    ) -> Result<Self, DomainError> {
        let rec = DisposalRecord {
            record_id: record_id.into(),
            image_b64: BASE64.encode(image),
            time: time.trunc_subsecs(0),
            bin_predicted,
            bin_thrown,
            bin_real,
            outcome,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<(), DomainError> {
        if self.record_id.is_empty() {
            return Err(DomainError::EmptyRecordId);
        }
        if BASE64.decode(&self.image_b64).is_err() {
            return Err(DomainError::InvalidImage {
                record_id: self.record_id.clone(),
            });
        }
        if self.outcome.is_correct()
            && (self.bin_thrown.is_none() || self.bin_thrown != self.bin_predicted)
        {
            return Err(DomainError::InconsistentOutcome {
                record_id: self.record_id.clone(),
                outcome: self.outcome.to_string(),
            });
        }
        if self.outcome == SessionOutcome::Timeout && self.bin_thrown.is_some() {
            return Err(DomainError::TimeoutWithThrow {
                record_id: self.record_id.clone(),
            });
        }
        Ok(())
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn image_b64(&self) -> &str {
        &self.image_b64
    }

    pub fn image_bytes(&self) -> Vec<u8> {
        // validated at construction
        BASE64.decode(&self.image_b64).unwrap_or_default()
    }

    pub fn time(&self) -> DateTime<Utc> {
        self.time
    }

    pub fn bin_predicted(&self) -> Option<BinColor> {
        self.bin_predicted
    }

    pub fn bin_thrown(&self) -> Option<BinColor> {
        self.bin_thrown
    }

    pub fn bin_real(&self) -> Option<BinColor> {
        self.bin_real
    }

    pub fn outcome(&self) -> SessionOutcome {
        self.outcome
    }

    /// True when the item actually went into some bin.
    pub fn is_disposed(&self) -> bool {
        self.bin_thrown.is_some()
    }

    /// Returns a copy with the manual ground-truth annotation set.
    pub fn with_bin_real(mut self, real: BinColor) -> Self {
        self.bin_real = Some(real);
        self
    }

    pub(crate) fn set_bin_real(&mut self, real: BinColor) {
        self.bin_real = Some(real);
    }

    fn require(&self, value: Option<BinColor>, field: &'static str) -> Result<BinColor, DomainError> {
        value.ok_or_else(|| DomainError::MissingField {
            record_id: self.record_id.clone(),
            field,
        })
    }

    pub fn predicted(&self) -> Result<BinColor, DomainError> {
        self.require(self.bin_predicted, "bin_predicted")
    }

    pub fn thrown(&self) -> Result<BinColor, DomainError> {
        self.require(self.bin_thrown, "bin_thrown")
    }

    pub fn real(&self) -> Result<BinColor, DomainError> {
        self.require(self.bin_real, "bin_real")
    }

    /// Encodes the record as one canonical JSONL line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Whether the classifier's suggestion matched the manual ground truth.
pub fn is_correct_prediction(r: &DisposalRecord) -> Result<bool, DomainError> {
    Ok(r.predicted()? == r.real()?)
}

/// Whether the user threw the item where the LED told them to.
pub fn is_followed_instruction(r: &DisposalRecord) -> Result<bool, DomainError> {
    Ok(r.thrown()? == r.predicted()?)
}
