//! Triples and search candidates shared by the search, ranking and task stages.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open token interval `[start, end)` in the exporter's token space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    /// Panics if `start >= end`; use [`TokenSpan::checked`] for untrusted input.
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start < end, "empty or inverted span {start}..{end}");
        TokenSpan { start, end }
    }

    pub fn checked(start: usize, end: usize, len: usize) -> Option<Self> {
        (start < end && end <= len).then_some(TokenSpan { start, end })
    }

    pub fn single(index: usize) -> Self {
        TokenSpan {
            start: index,
            end: index + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Where a relation path sits relative to the two anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PositionMode {
    Between,
    LeftOfBoth,
    RightOfBoth,
}

impl PositionMode {
    pub const ALL: [PositionMode; 3] = [
        PositionMode::Between,
        PositionMode::LeftOfBoth,
        PositionMode::RightOfBoth,
    ];
}

impl fmt::Display for PositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionMode::Between => "between",
            PositionMode::LeftOfBoth => "left",
            PositionMode::RightOfBoth => "right",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<TokenSpan>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub head: Argument,
    pub relation: Relation,
    pub tail: Argument,
}

impl Triple {
    /// Surface-only triple, as read from gold files.
    pub fn from_text(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Triple {
            head: Argument {
                text: head.into(),
                span: None,
            },
            relation: Relation {
                text: relation.into(),
                predicate_id: None,
                path: None,
            },
            tail: Argument {
                text: tail.into(),
                span: None,
            },
        }
    }

    /// Linearization fed to sentence/triple encoders: `head ; relation ; tail`.
    pub fn surface(&self) -> String {
        format!("{} ; {} ; {}", self.head.text, self.relation.text, self.tail.text)
    }

    pub fn is_well_formed(&self) -> bool {
        !self.head.text.trim().is_empty()
            && !self.relation.text.trim().is_empty()
            && !self.tail.text.trim().is_empty()
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}; {}; {})",
            self.head.text, self.relation.text, self.tail.text
        )
    }
}

/// Ordered anchor pair: the search starts at `start` ([S]) and completes on reaching `end` ([E]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArgumentPair {
    pub start: TokenSpan,
    pub end: TokenSpan,
}

impl ArgumentPair {
    pub fn new(start: TokenSpan, end: TokenSpan) -> Self {
        ArgumentPair { start, end }
    }

    pub fn is_disjoint(&self) -> bool {
        !self.start.overlaps(&self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleCandidate {
    pub triple: Triple,
    pub pair: ArgumentPair,
    /// Emitted token indices in sentence order.
    pub path: Vec<usize>,
    pub search_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_score: Option<f64>,
    pub position_mode: PositionMode,
}
