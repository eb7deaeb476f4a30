//! Token categories of a multimodal prompt: system, image, user, response.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open index interval `[start, end)`. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub const fn empty() -> Self {
        Span { start: 0, end: 0 }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.end.max(self.start)
    }

    fn intersects(&self, other: &Span) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Partition of a token sequence into system (S), image (V), user (U) and
/// response positions. Positions not covered by any span are uncategorized.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSegmentation {
    pub total_len: usize,
    pub system: Span,
    pub image: Vec<Span>,
    pub user: Vec<Span>,
    pub response: Span,
}

/// The span layout as it appears in the dump header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanSet {
    pub system: Span,
    pub image: Vec<Span>,
    pub user: Vec<Span>,
    pub response: Span,
}

impl TokenSegmentation {
    pub fn new(
        total_len: usize,
        system: Span,
        image: Vec<Span>,
        user: Vec<Span>,
        response: Span,
    ) -> Self {
        TokenSegmentation {
            total_len,
            system,
            image,
            user,
            response,
        }
    }

    pub fn from_spans(total_len: usize, spans: SpanSet) -> Self {
        Self::new(total_len, spans.system, spans.image, spans.user, spans.response)
    }

    pub fn spans(&self) -> SpanSet {
        SpanSet {
            system: self.system,
            image: self.image.clone(),
            user: self.user.clone(),
            response: self.response,
        }
    }

    /// Checks bounds first, then pairwise disjointness, reporting the first
    /// violation in span order (system, image.., user.., response).
    pub fn validate(&self) -> Result<()> {
        let all = self.all_spans();
        for span in &all {
            if span.start > span.end || span.end > self.total_len {
                return Err(Error::OutOfRange {
                    span: *span,
                    total_len: self.total_len,
                });
            }
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.intersects(b) {
                    return Err(Error::Overlap {
                        first: *a,
                        second: *b,
                    });
                }
            }
        }
        Ok(())
    }

    fn all_spans(&self) -> Vec<Span> {
        let mut v = Vec::with_capacity(2 + self.image.len() + self.user.len());
        v.push(self.system);
        v.extend(self.image.iter().copied());
        v.extend(self.user.iter().copied());
        v.push(self.response);
        v
    }

    /// K_sys: system positions in ascending order.
    pub fn system_indices(&self) -> Vec<usize> {
        self.system.iter().collect()
    }

    /// K_img / V: union of the image spans, ascending.
    pub fn image_indices(&self) -> Vec<usize> {
        union_indices(&self.image)
    }

    /// U: union of the user spans, ascending.
    pub fn user_indices(&self) -> Vec<usize> {
        union_indices(&self.user)
    }

    pub fn response_indices(&self) -> Vec<usize> {
        self.response.iter().collect()
    }

    pub fn is_image(&self, i: usize) -> bool {
        self.image.iter().any(|s| s.contains(i))
    }

    pub fn image_len(&self) -> usize {
        self.image.iter().map(Span::len).sum()
    }
}

fn union_indices(spans: &[Span]) -> Vec<usize> {
    let mut v: Vec<usize> = spans.iter().flat_map(|s| s.iter()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> TokenSegmentation {
        TokenSegmentation::new(
            10,
            Span::new(0, 2),
            vec![Span::new(2, 6)],
            vec![Span::new(6, 9)],
            Span::new(9, 10),
        )
    }

    #[test]
    fn canonical_layout_is_valid() {
        canonical().validate().unwrap();
    }

    #[test]
    fn overlap_is_reported() {
        let mut seg = canonical();
        seg.system = Span::new(0, 3);
        match seg.validate() {
            Err(Error::Overlap { first, second }) => {
                assert_eq!(first, Span::new(0, 3));
                assert_eq!(second, Span::new(2, 6));
            }
            other => panic!("expected overlap, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_is_reported() {
        let seg = TokenSegmentation::new(
            5,
            Span::empty(),
            vec![],
            vec![Span::new(4, 7)],
            Span::empty(),
        );
        assert!(matches!(
            seg.validate(),
            Err(Error::OutOfRange { span, total_len: 5 }) if span == Span::new(4, 7)
        ));
    }

    #[test]
    fn inverted_span_is_out_of_range() {
        let mut seg = canonical();
        seg.response = Span::new(9, 8);
        assert!(matches!(seg.validate(), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn empty_spans_never_overlap() {
        let seg = TokenSegmentation::new(
            4,
            Span::new(0, 2),
            vec![Span::new(1, 1)],
            vec![Span::new(2, 4)],
            Span::new(2, 2),
        );
        seg.validate().unwrap();
    }

    #[test]
    fn interleaved_image_spans_union() {
        let seg = TokenSegmentation::new(
            12,
            Span::new(0, 1),
            vec![Span::new(5, 7), Span::new(1, 3)],
            vec![Span::new(3, 5), Span::new(7, 9)],
            Span::new(9, 12),
        );
        seg.validate().unwrap();
        assert_eq!(seg.image_indices(), vec![1, 2, 5, 6]);
        assert_eq!(seg.user_indices(), vec![3, 4, 7, 8]);
        assert!(seg.is_image(6) && !seg.is_image(7));
    }

    #[test]
    fn span_serializes_as_pair() {
        let s = serde_json::to_string(&Span::new(2, 6)).unwrap();
        assert_eq!(s, "[2,6]");
        let back: Span = serde_json::from_str(&s).unwrap();
        assert_eq!(back, Span::new(2, 6));
    }
}
