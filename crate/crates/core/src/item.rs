//! Synthetic item images.
//!
//! Simulated camera frames are small text blobs that carry the item's
//! ground-truth bin (what a manual reviewer would decide from the photo) and,
//! for scripted replays, the label the classifier should return.

use crate::domain::{BinColor, ClassificationOutcome};

const MAGIC: &str = "itrash-sim-item";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemTag {
    pub item: u64,
    /// Ground truth; `None` for things that belong in no bin (phones, keys).
    pub real: Option<BinColor>,
    /// Scripted classifier answer, if any.
    pub scripted: Option<ClassificationOutcome>,
}

impl ItemTag {
    pub fn encode(&self) -> Vec<u8> {
        let real = self.real.map_or("none", BinColor::as_str);
        let mut s = format!("{MAGIC};item={};real={real}", self.item);
        match self.scripted {
            Some(ClassificationOutcome::Valid(c)) => s.push_str(&format!(";predict={c}")),
            Some(ClassificationOutcome::Invalid) => s.push_str(";predict=invalid"),
            None => {}
        }
        s.into_bytes()
    }

    pub fn decode(image: &[u8]) -> Option<ItemTag> {
        let text = std::str::from_utf8(image).ok()?;
        let mut parts = text.split(';');
        if parts.next()? != MAGIC {
            return None;
        }
        let mut tag = ItemTag {
            item: 0,
            real: None,
            scripted: None,
        };
        for part in parts {
            let (key, value) = part.split_once('=')?;
            match key {
                "item" => tag.item = value.parse().ok()?,
                "real" if value == "none" => tag.real = None,
                "real" => tag.real = Some(value.parse().ok()?),
                "predict" if value == "invalid" => tag.scripted = Some(ClassificationOutcome::Invalid),
                "predict" => tag.scripted = Some(ClassificationOutcome::Valid(value.parse().ok()?)),
                _ => return None,
            }
        }
        Some(tag)
    }
}
