//! The annotated clause file format.
//!
//! Each clause is wrapped in a block:
//!
//! ```text
//! [INIT_CLAUSE]
//! 20. Governing Law. All questions concerning ...
//! [INIT_CLASSE]13[END_CLASSE]
//! [END_CLAUSE]
//! ```
//!
//! A label payload may list several ids separated by commas (`5,10`), and a
//! block may carry several consecutive class tags; both forms are merged
//! into one label set. A block with no class tag yields an empty label set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::label::ClauseLabel;
use super::CorpusError;

pub const INIT_CLAUSE: &str = "[INIT_CLAUSE]";
pub const END_CLAUSE: &str = "[END_CLAUSE]";
pub const INIT_CLASSE: &str = "[INIT_CLASSE]";
pub const END_CLASSE: &str = "[END_CLASSE]";

const MARKERS: [&str; 4] = [INIT_CLAUSE, END_CLAUSE, INIT_CLASSE, END_CLASSE];

pub type LabelSet = BTreeSet<ClauseLabel>;

/// A single clause: trimmed text plus its (possibly empty) label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub index: usize,
    text: String,
    pub labels: LabelSet,
}

impl Clause {
    /// Builds a clause, trimming outer whitespace. Interior whitespace is
    /// kept verbatim.
    pub fn new(index: usize, text: &str, labels: LabelSet) -> Result<Self, CorpusError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(CorpusError::EmptyClauseText { block: index });
        }
        if let Some(marker) = MARKERS.iter().find(|m| text.contains(*m)) {
            return Err(CorpusError::UnbalancedDelimiter {
                offset: text.find(marker).unwrap_or(0),
                detail: format!("clause text contains the reserved marker {marker}"),
            });
        }
        Ok(Clause {
            index,
            text: text.to_string(),
            labels,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub clauses: Vec<Clause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl Document {
    /// Builds a document from clauses, renumbering their indices to match
    /// their position.
    pub fn new(id: impl Into<String>, clauses: Vec<Clause>) -> Self {
        let clauses = clauses
            .into_iter()
            .enumerate()
            .map(|(index, clause)| Clause { index, ..clause })
            .collect();
        Document {
            id: id.into(),
            clauses,
            raw_text: None,
        }
    }

    /// Convenience constructor from `(text, label ids)` pairs.
    pub fn from_texts<S: AsRef<str>>(
        id: impl Into<String>,
        items: &[(S, &[u8])],
    ) -> Result<Self, CorpusError> {
        let clauses = items
            .iter()
            .enumerate()
            .map(|(i, (text, ids))| {
                let labels = ids
                    .iter()
                    .map(|&id| {
                        ClauseLabel::new(id).ok_or_else(|| CorpusError::InvalidLabel {
                            token: id.to_string(),
                            block: i,
                        })
                    })
                    .collect::<Result<LabelSet, _>>()?;
                Clause::new(i, text.as_ref(), labels)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Document::new(id, clauses))
    }

    /// Clause texts joined by single newlines.
    pub fn clause_content(&self) -> String {
        self.clause_texts().collect::<Vec<_>>().join("\n")
    }

    pub fn clause_texts(&self) -> impl Iterator<Item = &str> {
        self.clauses.iter().map(Clause::text)
    }

    /// Text handed to the segmenter: the raw NDA when known, otherwise the
    /// clause texts separated by blank lines.
    pub fn source_text(&self) -> String {
        match &self.raw_text {
            Some(raw) => raw.clone(),
            None => self.clause_texts().collect::<Vec<_>>().join("\n\n"),
        }
    }
}

/// Parses one annotated file. `id` is usually the filename stem.
pub fn parse_annotated_document(text: &str, id: &str) -> Result<Document, CorpusError> {
    let blocks = scan_blocks(text)?;
    let mut clauses = Vec::with_capacity(blocks.len());
    for (index, block) in blocks.iter().enumerate() {
        let (body, labels) = split_label_tags(block.body, block.body_offset, index)?;
        clauses.push(Clause::new(index, &body, labels)?);
    }
    Ok(Document::new(id, clauses))
}

/// Emits the block format; inverse of [`parse_annotated_document`].
pub fn serialize_document(doc: &Document) -> String {
    let mut out = String::new();
    for clause in &doc.clauses {
        out.push_str(INIT_CLAUSE);
        out.push('\n');
        out.push_str(clause.text());
        out.push('\n');
        if !clause.labels.is_empty() {
            let ids: Vec<String> = clause.labels.iter().map(|l| l.id().to_string()).collect();
            out.push_str(INIT_CLASSE);
            out.push_str(&ids.join(","));
            out.push_str(END_CLASSE);
            out.push('\n');
        }
        out.push_str(END_CLAUSE);
        out.push('\n');
    }
    out
}

/// Recovers clause texts from free-form model output.
///
/// Text outside `[INIT_CLAUSE]…[END_CLAUSE]` is discarded, class tags are
/// stripped, blocks left open at the end of the output are dropped, and an
/// `[INIT_CLAUSE]` inside an open block restarts the block.
pub fn extract_clause_blocks(output: &str) -> Vec<String> {
    let mut clauses = Vec::new();
    let mut open: Option<usize> = None;
    let mut pos = 0;
    while let Some((at, marker)) = next_marker(output, pos, &[INIT_CLAUSE, END_CLAUSE]) {
        match marker {
            INIT_CLAUSE => open = Some(at + INIT_CLAUSE.len()),
            _ => {
                if let Some(start) = open.take() {
                    let body = strip_class_tags(&output[start..at]);
                    let body = body.trim();
                    if !body.is_empty() {
                        clauses.push(body.to_string());
                    }
                }
            }
        }
        pos = at + marker.len();
    }
    clauses
}

struct RawBlock<'a> {
    body: &'a str,
    body_offset: usize,
}

fn next_marker<'m>(text: &str, from: usize, markers: &[&'m str]) -> Option<(usize, &'m str)> {
    markers
        .iter()
        .filter_map(|m| text[from..].find(m).map(|i| (from + i, *m)))
        .min_by_key(|(i, _)| *i)
}

fn scan_blocks(text: &str) -> Result<Vec<RawBlock<'_>>, CorpusError> {
    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    let mut pos = 0;
    while let Some((at, marker)) = next_marker(text, pos, &[INIT_CLAUSE, END_CLAUSE]) {
        match (marker, open) {
            (INIT_CLAUSE, None) => open = Some(at),
            (INIT_CLAUSE, Some(_)) => {
                return Err(CorpusError::UnbalancedDelimiter {
                    offset: at,
                    detail: "nested [INIT_CLAUSE] inside an open block".into(),
                })
            }
            (_, Some(start)) => {
                let body_offset = start + INIT_CLAUSE.len();
                blocks.push(RawBlock {
                    body: &text[body_offset..at],
                    body_offset,
                });
                open = None;
            }
            (_, None) => {
                return Err(CorpusError::UnbalancedDelimiter {
                    offset: at,
                    detail: "[END_CLAUSE] without a matching [INIT_CLAUSE]".into(),
                })
            }
        }
        pos = at + marker.len();
    }
    if let Some(start) = open {
        return Err(CorpusError::UnbalancedDelimiter {
            offset: start,
            detail: "[INIT_CLAUSE] never closed".into(),
        });
    }
    Ok(blocks)
}

fn split_label_tags(
    body: &str,
    body_offset: usize,
    block: usize,
) -> Result<(String, LabelSet), CorpusError> {
    let mut text = String::with_capacity(body.len());
    let mut labels = LabelSet::new();
    let mut pos = 0;
    while let Some((at, marker)) = next_marker(body, pos, &[INIT_CLASSE, END_CLASSE]) {
        if marker == END_CLASSE {
            return Err(CorpusError::UnbalancedDelimiter {
                offset: body_offset + at,
                detail: "[END_CLASSE] without a matching [INIT_CLASSE]".into(),
            });
        }
        text.push_str(&body[pos..at]);
        let payload_start = at + INIT_CLASSE.len();
        let close = match next_marker(body, payload_start, &[INIT_CLASSE, END_CLASSE]) {
            Some((close, END_CLASSE)) => close,
            _ => {
                return Err(CorpusError::UnbalancedDelimiter {
                    offset: body_offset + at,
                    detail: "[INIT_CLASSE] never closed".into(),
                })
            }
        };
        for token in body[payload_start..close].split(',') {
            let token = token.trim();
            let label = token
                .parse::<u8>()
                .ok()
                .and_then(ClauseLabel::new)
                .ok_or_else(|| CorpusError::InvalidLabel {
                    token: token.to_string(),
                    block,
                })?;
            labels.insert(label);
        }
        pos = close + END_CLASSE.len();
    }
    text.push_str(&body[pos..]);
    Ok((text, labels))
}

fn strip_class_tags(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut pos = 0;
    while let Some((at, _)) = next_marker(body, pos, &[INIT_CLASSE]) {
        out.push_str(&body[pos..at]);
        match body[at..].find(END_CLASSE) {
            Some(end) => pos = at + end + END_CLASSE.len(),
            None => {
                pos = body.len();
                break;
            }
        }
    }
    out.push_str(&body[pos..]);
    out.replace(END_CLASSE, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const GOVERNING_LAW_BLOCK: &str = "[INIT_CLAUSE]
20. Governing Law. All questions concerning the construction, validity
and interpretation of this Agreement will be governed by and construed
in accordance with the domestic laws of the State of Delaware, without
giving effect to any choice of law or conflict of law provision or rule
(whether of the State of Delaware or any other jurisdiction) that would
cause the application of the laws of any jurisdiction other than the
State of Delaware. It is the intent of the parties that the provisions
of this Agreement shall be interpreted to be consistent with provisions
of Section 409A of the Internal Revenue Code.
[INIT_CLASSE]13[END_CLASSE]
[END_CLAUSE]
";

    fn ids(clause: &Clause) -> Vec<u8> {
        clause.labels.iter().map(|l| l.id()).collect()
    }

    #[test]
    fn governing_law_block() {
        let doc = parse_annotated_document(GOVERNING_LAW_BLOCK, "nda").unwrap();
        assert_eq!(doc.clauses.len(), 1);
        let clause = &doc.clauses[0];
        assert_eq!(ids(clause), vec![13]);
        assert!(clause.text().starts_with("20. Governing Law."));
        assert!(clause.text().ends_with("Internal Revenue Code."));
        // interior line breaks survive
        assert!(clause.text().contains("validity\nand interpretation"));
    }

    #[test]
    fn empty_input_has_no_clauses() {
        let doc = parse_annotated_document("", "empty").unwrap();
        assert!(doc.clauses.is_empty());
        assert_eq!(serialize_document(&doc), "");
    }

    #[test]
    fn multi_label_payloads_round_trip() {
        let text = "[INIT_CLAUSE]a[INIT_CLASSE]1[END_CLASSE][END_CLAUSE]\n\
                    [INIT_CLAUSE]b\n[INIT_CLASSE]5,10[END_CLASSE]\n[END_CLAUSE]\n\
                    [INIT_CLAUSE] c [INIT_CLASSE]14[END_CLASSE][END_CLAUSE]";
        let doc = parse_annotated_document(text, "three").unwrap();
        let sets: Vec<Vec<u8>> = doc.clauses.iter().map(ids).collect();
        assert_eq!(sets, vec![vec![1], vec![5, 10], vec![14]]);
        let again = parse_annotated_document(&serialize_document(&doc), "three").unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn consecutive_class_tags_merge() {
        let text = "[INIT_CLAUSE]x\n[INIT_CLASSE]5[END_CLASSE][INIT_CLASSE]10, 5[END_CLASSE]\n[END_CLAUSE]";
        let doc = parse_annotated_document(text, "d").unwrap();
        assert_eq!(ids(&doc.clauses[0]), vec![5, 10]);
    }

    #[test]
    fn serialized_form_carries_label_tag() {
        let doc = Document::from_texts("d", &[("Governing law clause.", &[13][..])]).unwrap();
        assert!(serialize_document(&doc).contains("[INIT_CLASSE]13[END_CLASSE]"));
    }

    #[test]
    fn unbalanced_delimiters_report_offsets() {
        let err = parse_annotated_document("xx[INIT_CLAUSE]abc", "d").unwrap_err();
        assert!(matches!(
            err,
            CorpusError::UnbalancedDelimiter { offset: 2, .. }
        ));

        let err =
            parse_annotated_document("[INIT_CLAUSE]a[INIT_CLAUSE]b[END_CLAUSE]", "d").unwrap_err();
        assert!(matches!(
            err,
            CorpusError::UnbalancedDelimiter { offset: 14, .. }
        ));

        let err = parse_annotated_document("abc[END_CLAUSE]", "d").unwrap_err();
        assert!(matches!(
            err,
            CorpusError::UnbalancedDelimiter { offset: 3, .. }
        ));

        let err =
            parse_annotated_document("[INIT_CLAUSE]a[INIT_CLASSE]3[END_CLAUSE]", "d").unwrap_err();
        assert!(matches!(err, CorpusError::UnbalancedDelimiter { .. }));
    }

    #[test]
    fn invalid_labels_name_the_token() {
        for (payload, token) in [
            ("15", "15"),
            ("0", "0"),
            ("x", "x"),
            ("3,,4", ""),
            ("-1", "-1"),
        ] {
            let text = format!("[INIT_CLAUSE]a[INIT_CLASSE]{payload}[END_CLASSE][END_CLAUSE]");
            match parse_annotated_document(&text, "d") {
                Err(CorpusError::InvalidLabel { token: t, block: 0 }) => assert_eq!(t, token),
                other => panic!("unexpected {other:?} for {payload}"),
            }
        }
    }

    #[test]
    fn empty_clause_text_names_block() {
        let text =
            "[INIT_CLAUSE]a[END_CLAUSE][INIT_CLAUSE] \n [INIT_CLASSE]2[END_CLASSE][END_CLAUSE]";
        let err = parse_annotated_document(text, "d").unwrap_err();
        assert!(matches!(err, CorpusError::EmptyClauseText { block: 1 }));
    }

    #[test]
    fn unlabeled_block_is_allowed() {
        let doc = parse_annotated_document("[INIT_CLAUSE]plain[END_CLAUSE]", "d").unwrap();
        assert!(doc.clauses[0].labels.is_empty());
        assert_eq!(
            serialize_document(&doc),
            "[INIT_CLAUSE]\nplain\n[END_CLAUSE]\n"
        );
    }

    #[test]
    fn clause_content_joins_with_newlines() {
        let doc =
            Document::from_texts("d", &[("one", &[1][..]), ("two\nlines", &[2][..])]).unwrap();
        assert_eq!(doc.clause_content(), "one\ntwo\nlines");
        assert_eq!(doc.source_text(), "one\n\ntwo\nlines");
    }

    #[test]
    fn extraction_discards_chatter() {
        let output = "Sure! Here are the clauses:\n[INIT_CLAUSE]\nFirst.\n[END_CLAUSE]\nnoise\n\
                      [INIT_CLAUSE]Second.[INIT_CLASSE]3[END_CLASSE][END_CLAUSE]\n\
                      Let me know if you need more.[INIT_CLAUSE] truncated";
        assert_eq!(extract_clause_blocks(output), vec!["First.", "Second."]);
        assert!(extract_clause_blocks("no delimiters at all").is_empty());
    }

    #[test]
    fn extraction_restarts_on_nested_open() {
        let output = "[INIT_CLAUSE]lost[INIT_CLAUSE]kept[END_CLAUSE]";
        assert_eq!(extract_clause_blocks(output), vec!["kept"]);
    }
}
