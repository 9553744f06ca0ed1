//! Sample-local types shared by synthesis, dataset assembly and attribution.
//!
//! Inside a sample the attribution unit is a [`SampleRef`]: a document
//! position plus a sentence index, serialized as `[doc, sent]`. Prompts
//! number sentences globally across documents in order, starting at 0.

use serde::{Deserialize, Serialize};

/// Sentence reference local to a sample's document list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct SampleRef {
    pub doc: usize,
    pub sent: usize,
}

impl SampleRef {
    pub fn new(doc: usize, sent: usize) -> Self {
        Self { doc, sent }
    }
}

impl From<(usize, usize)> for SampleRef {
    fn from((doc, sent): (usize, usize)) -> Self {
        Self { doc, sent }
    }
}

impl From<SampleRef> for (usize, usize) {
    fn from(r: SampleRef) -> Self {
        (r.doc, r.sent)
    }
}

/// An article excerpt included in a sample's context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub article_id: String,
    pub title: String,
    pub sentences: Vec<String>,
}

/// One prior (question, answer) turn of a conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
}

/// Everything an attributor sees: the QA pair, any conversation history and
/// the context documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionTask {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub history: Vec<Turn>,
    pub documents: Vec<Document>,
}

impl AttributionTask {
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    /// All sentence refs in global numbering order.
    pub fn refs(&self) -> impl Iterator<Item = SampleRef> + '_ {
        self.documents
            .iter()
            .enumerate()
            .flat_map(|(doc, d)| (0..d.sentences.len()).map(move |sent| SampleRef { doc, sent }))
    }

    /// Ref carrying global sentence number `n`.
    pub fn ref_at(&self, mut n: usize) -> Option<SampleRef> {
        for (doc, d) in self.documents.iter().enumerate() {
            if n < d.sentences.len() {
                return Some(SampleRef { doc, sent: n });
            }
            n -= d.sentences.len();
        }
        None
    }

    /// Global sentence number of `r`, if it lies inside the documents.
    pub fn number_of(&self, r: SampleRef) -> Option<usize> {
        let d = self.documents.get(r.doc)?;
        if r.sent >= d.sentences.len() {
            return None;
        }
        Some(self.documents[..r.doc].iter().map(|d| d.sentences.len()).sum::<usize>() + r.sent)
    }

    pub fn sentence(&self, r: SampleRef) -> Option<&str> {
        self.documents
            .get(r.doc)
            .and_then(|d| d.sentences.get(r.sent))
            .map(String::as_str)
    }

    pub fn resolves(&self, r: SampleRef) -> bool {
        self.sentence(r).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(sizes: &[usize]) -> AttributionTask {
        AttributionTask {
            question: "q".into(),
            answer: "a".into(),
            history: vec![],
            documents: sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| Document {
                    article_id: format!("d{i}"),
                    title: format!("D{i}"),
                    sentences: (0..n).map(|s| format!("s{s}")).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn numbering_is_bijective() {
        let t = task(&[2, 0, 3, 1]);
        let refs: Vec<SampleRef> = t.refs().collect();
        assert_eq!(refs.len(), t.sentence_count());
        for (n, r) in refs.iter().enumerate() {
            assert_eq!(t.ref_at(n), Some(*r));
            assert_eq!(t.number_of(*r), Some(n));
        }
        assert_eq!(t.ref_at(6), None);
        assert_eq!(t.number_of(SampleRef::new(1, 0)), None);
    }

    #[test]
    fn sample_ref_serializes_as_pair() {
        let r = SampleRef::new(2, 5);
        assert_eq!(serde_json::to_string(&r).unwrap(), "[2,5]");
        assert_eq!(serde_json::from_str::<SampleRef>("[2,5]").unwrap(), r);
    }
}
