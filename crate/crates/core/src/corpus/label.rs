use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of classes in the NDA clause taxonomy.
pub const NUM_LABELS: usize = 14;

const NAMES: [&str; NUM_LABELS] = [
    "Party Identification",
    "Purpose",
    "NDA Type (Unilateral/Bilateral)",
    "Definition of Confidential Information",
    "Confidentiality Obligations",
    "Authorized Disclosure",
    "Non-Confidential Information",
    "Liability for Damages",
    "Competition Rights",
    "Term and Termination",
    "Intellectual Property",
    "Employees",
    "Governing Law and Jurisdiction",
    "Additional Information",
];

/// One class of the clause taxonomy, identified by its 1-based id.
///
/// Class 14 ("Additional Information") is the catch-all for clauses not
/// covered by the other categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClauseLabel(u8);

impl ClauseLabel {
    pub const PARTY_IDENTIFICATION: ClauseLabel = ClauseLabel(1);
    pub const CONFIDENTIALITY_OBLIGATIONS: ClauseLabel = ClauseLabel(5);
    pub const GOVERNING_LAW: ClauseLabel = ClauseLabel(13);
    pub const ADDITIONAL_INFORMATION: ClauseLabel = ClauseLabel(14);

    /// Returns `None` when `id` is outside `1..=14`.
    pub fn new(id: u8) -> Option<Self> {
        (1..=NUM_LABELS as u8)
            .contains(&id)
            .then_some(ClauseLabel(id))
    }

    /// Label for a 0-based column index of a label matrix.
    pub fn from_index(index: usize) -> Option<Self> {
        u8::try_from(index + 1).ok().and_then(Self::new)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// 0-based column index used in label matrices.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn name(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = ClauseLabel> {
        (1..=NUM_LABELS as u8).map(ClauseLabel)
    }
}

impl fmt::Display for ClauseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for ClauseLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for ClauseLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let id = u8::deserialize(deserializer)?;
        ClauseLabel::new(id)
            .ok_or_else(|| serde::de::Error::custom(format!("label id {id} outside 1..=14")))
    }
}
