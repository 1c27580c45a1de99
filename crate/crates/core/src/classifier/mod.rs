//! Waste classification port.
//!
//! Every implementation answers with [`ClassificationOutcome`], so the label
//! set is closed at the type level: one of the three bins, or invalid.

mod remote;
mod table;

pub use remote::{
    classify_remote, parse_reply, HttpTransport, RemoteClassifier, RemoteConfig, TransportError, VisionRequest,
    VisionTransport,
};
pub use table::{classify_simulated, fit_confusion_table, ConfusionTable};

use thiserror::Error;

use crate::domain::{BinColor, ClassificationOutcome, DomainError};
use crate::item::ItemTag;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("invalid confusion table: {0}")]
    InvalidTable(String),
    #[error("image is empty")]
    EmptyImage,
    #[error("no records to fit")]
    EmptyInput,
    #[error(transparent)]
    Record(#[from] DomainError),
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("invalid remote classifier config: {0}")]
    Config(String),
    #[error("image carries no ground-truth label")]
    UnlabelledImage,
}

pub trait Classifier {
    fn classify(&mut self, image: &[u8]) -> Result<ClassificationOutcome, ClassifierError>;
}

/// Always returns the same outcome.
#[derive(Debug, Clone, Copy)]
pub struct FixedClassifier(pub ClassificationOutcome);

impl Classifier for FixedClassifier {
    fn classify(&mut self, image: &[u8]) -> Result<ClassificationOutcome, ClassifierError> {
        if image.is_empty() {
            return Err(ClassifierError::EmptyImage);
        }
        Ok(self.0)
    }
}

/// Returns the answer scripted into a simulated item image; images without a
/// script are treated as unusable.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedClassifier;

impl Classifier for ScriptedClassifier {
    fn classify(&mut self, image: &[u8]) -> Result<ClassificationOutcome, ClassifierError> {
        if image.is_empty() {
            return Err(ClassifierError::EmptyImage);
        }
        Ok(ItemTag::decode(image)
            .and_then(|t| t.scripted)
            .unwrap_or(ClassificationOutcome::Invalid))
    }
}

/// Draws predictions from a confusion table using the ground truth carried
/// by simulated item images. Each call consumes one seed from a counter, so
/// a fresh instance with the same seed reproduces the same sequence.
#[derive(Debug, Clone)]
pub struct SimulatedClassifier {
    table: ConfusionTable,
    seed: u64,
    calls: u64,
}

impl SimulatedClassifier {
    pub fn new(table: ConfusionTable, seed: u64) -> Result<Self, ClassifierError> {
        table.validate()?;
        Ok(SimulatedClassifier { table, seed, calls: 0 })
    }

    pub fn classify_label(&mut self, true_label: BinColor) -> Result<ClassificationOutcome, ClassifierError> {
        let call_seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.calls);
        self.calls += 1;
        classify_simulated(true_label, &self.table, call_seed)
    }
}

impl Classifier for SimulatedClassifier {
    fn classify(&mut self, image: &[u8]) -> Result<ClassificationOutcome, ClassifierError> {
        if image.is_empty() {
            return Err(ClassifierError::EmptyImage);
        }
        match ItemTag::decode(image).and_then(|t| t.real) {
            Some(real) => self.classify_label(real),
            // nothing recyclable in frame
            None => Ok(ClassificationOutcome::Invalid),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_reads_tag() {
        let img = ItemTag {
            item: 1,
            real: Some(BinColor::Blue),
            scripted: Some(ClassificationOutcome::Valid(BinColor::Yellow)),
        }
        .encode();
        assert_eq!(
            ScriptedClassifier.classify(&img).unwrap(),
            ClassificationOutcome::Valid(BinColor::Yellow)
        );
        assert_eq!(ScriptedClassifier.classify(b"blurry").unwrap(), ClassificationOutcome::Invalid);
        assert_eq!(ScriptedClassifier.classify(b""), Err(ClassifierError::EmptyImage));
    }

    #[test]
    fn simulated_instances_are_reproducible() {
        let table = ConfusionTable::reported_itrash();
        let img = ItemTag {
            item: 1,
            real: Some(BinColor::Yellow),
            scripted: None,
        }
        .encode();
        let mut a = SimulatedClassifier::new(table.clone(), 42).unwrap();
        let mut b = SimulatedClassifier::new(table, 42).unwrap();
        let xs: Vec<_> = (0..50).map(|_| a.classify(&img).unwrap()).collect();
        let ys: Vec<_> = (0..50).map(|_| b.classify(&img).unwrap()).collect();
        assert_eq!(xs, ys);
        // not a constant stream
        assert!(xs.iter().any(|o| *o != xs[0]));
    }

    #[test]
    fn simulated_without_truth_is_invalid() {
        let mut c = SimulatedClassifier::new(ConfusionTable::identity(), 1).unwrap();
        assert_eq!(c.classify(b"random bytes").unwrap(), ClassificationOutcome::Invalid);
    }
}
