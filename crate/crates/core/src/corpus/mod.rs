//! QA items, corpora and the JSONL corpus format.
//!
//! Every other module consumes [`QaItem`]s produced here. Character offsets
//! (rationale spans, sentence spans, token spans) count Unicode scalar
//! values, not bytes.

mod pack;
mod segment;
mod tokenize;
mod vocab;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pack::{pack_input, Layout, PackedInput, SegmentTag, MIN_PACK_LEN};
pub use segment::segment_sentences;
pub use tokenize::{tokenize, tokenize_words, Token};
pub use vocab::{build_vocab, build_vocab_from, Vocab, CLS_ID, PAD_ID, SEP_ID, UNK_ID};

/// Number of previous turns kept as question context.
pub const HISTORY_WINDOW: usize = 2;

/// Half-open `[start, end)` character range. Serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Coqa,
    Hotpot,
    Synthetic,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coqa" => Ok(SourceFormat::Coqa),
            "hotpot" => Ok(SourceFormat::Hotpot),
            "synthetic" => Ok(SourceFormat::Synthetic),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Span,
    Yes,
    No,
    Unknown,
    Number,
    Option,
}

impl AnswerType {
    pub fn is_yes_no(self) -> bool {
        matches!(self, AnswerType::Yes | AnswerType::No)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::Span => "span",
            AnswerType::Yes => "yes",
            AnswerType::No => "no",
            AnswerType::Unknown => "unknown",
            AnswerType::Number => "number",
            AnswerType::Option => "option",
        }
    }
}

/// Dataset variant a record belongs to.
///
/// For HotpotQA-style corpora there is no truncation step, so `TsR` and
/// `TsRAug` carry the OS-R and OS-R+Aug semantics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "OS")]
    Os,
    #[serde(rename = "TS")]
    Ts,
    #[serde(rename = "TS_R")]
    TsR,
    #[serde(rename = "TS_R_AUG")]
    TsRAug,
    #[serde(rename = "NEG")]
    Neg,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Os, Variant::Ts, Variant::TsR, Variant::TsRAug, Variant::Neg];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Os => "OS",
            Variant::Ts => "TS",
            Variant::TsR => "TS_R",
            Variant::TsRAug => "TS_R_AUG",
            Variant::Neg => "NEG",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Provenance carried by derived records (intervention suites, exports).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub variant: Variant,
    pub provenance: String,
    /// Gold answer of the item this record was derived from.
    pub original_answer: Option<String>,
    pub original_answer_type: Option<AnswerType>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaItem {
    pub id: String,
    pub story: String,
    pub sentences: Vec<Span>,
    /// Previous `(question, gold answer)` turns, oldest first.
    pub history: Vec<(String, String)>,
    pub question: String,
    pub gold_answer: String,
    pub answer_type: AnswerType,
    pub rationale: Span,
    pub origin: Option<Origin>,
}

impl QaItem {
    /// Builds an item and computes its sentence segmentation.
    pub fn new(
        id: impl Into<String>,
        story: impl Into<String>,
        history: Vec<(String, String)>,
        question: impl Into<String>,
        gold_answer: impl Into<String>,
        answer_type: AnswerType,
        rationale: Span,
    ) -> Self {
        let story = story.into();
        let sentences = segment_sentences(&story);
        QaItem {
            id: id.into(),
            story,
            sentences,
            history,
            question: question.into(),
            gold_answer: gold_answer.into(),
            answer_type,
            rationale,
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn story_chars(&self) -> usize {
        self.story.chars().count()
    }

    /// The gold answer the item was derived from, or its own gold.
    pub fn original_answer(&self) -> &str {
        self.origin
            .as_ref()
            .and_then(|o| o.original_answer.as_deref())
            .unwrap_or(&self.gold_answer)
    }

    pub fn variant(&self) -> Variant {
        self.origin.as_ref().map_or(Variant::Os, |o| o.variant)
    }

    /// Checks the per-item invariants that do not depend on the rest of the corpus.
    pub fn check(&self, format: SourceFormat) -> Result<()> {
        let len = self.story_chars();
        if self.rationale.start > self.rationale.end || self.rationale.end > len {
            return Err(Error::Integrity(format!(
                "item {}: rationale [{}, {}) outside story of {len} chars",
                self.id, self.rationale.start, self.rationale.end
            )));
        }
        if self.answer_type == AnswerType::Span && !self.story.contains(&self.gold_answer) {
            return Err(Error::Integrity(format!(
                "item {}: span answer {:?} does not occur in story",
                self.id, self.gold_answer
            )));
        }
        if format == SourceFormat::Hotpot && !self.history.is_empty() {
            return Err(Error::Integrity(format!(
                "item {}: hotpot items carry no conversation history",
                self.id
            )));
        }
        if self.history.len() > HISTORY_WINDOW {
            return Err(Error::Integrity(format!(
                "item {}: history has {} turns, window is {HISTORY_WINDOW}",
                self.id,
                self.history.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub items: Vec<QaItem>,
    pub source_format: SourceFormat,
    pub split: Split,
}

impl Corpus {
    pub fn new(items: Vec<QaItem>, source_format: SourceFormat, split: Split) -> Result<Self> {
        let corpus = Corpus {
            items,
            source_format,
            split,
        };
        corpus.check()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.items.len());
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate item id {}", item.id)));
            }
            item.check(self.source_format)?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for item in &self.items {
            serde_json::to_writer(&mut out, &Record::from(item))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

/// One line of the corpus JSONL format.
///
/// HotpotQA-style records may give `paragraphs` (the two gold paragraphs)
/// instead of `story`; they are joined with a single space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraphs: Option<Vec<String>>,
    #[serde(default)]
    pub history: Vec<(String, String)>,
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub rationale: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_answer_type: Option<AnswerType>,
}

impl From<&QaItem> for Record {
    fn from(item: &QaItem) -> Self {
        let origin = item.origin.as_ref();
        Record {
            id: item.id.clone(),
            story: Some(item.story.clone()),
            paragraphs: None,
            history: item.history.clone(),
            question: item.question.clone(),
            answer: item.gold_answer.clone(),
            answer_type: item.answer_type,
            rationale: item.rationale,
            variant: origin.map(|o| o.variant),
            provenance: origin.map(|o| o.provenance.clone()),
            original_answer: origin.and_then(|o| o.original_answer.clone()),
            original_answer_type: origin.and_then(|o| o.original_answer_type),
        }
    }
}

impl Record {
    fn into_item(self, format: SourceFormat, line: usize) -> Result<QaItem> {
        let story = match (self.story, self.paragraphs) {
            (Some(story), None) => story,
            (None, Some(paragraphs)) if format == SourceFormat::Hotpot => paragraphs.join(" "),
            (None, Some(_)) => {
                return Err(Error::Parse {
                    line,
                    message: "`paragraphs` is only accepted for hotpot corpora".into(),
                })
            }
            (Some(_), Some(_)) => {
                return Err(Error::Parse {
                    line,
                    message: "give either `story` or `paragraphs`, not both".into(),
                })
            }
            (None, None) => {
                return Err(Error::Parse {
                    line,
                    message: "missing `story`".into(),
                })
            }
        };
        let mut history = self.history;
        if format != SourceFormat::Hotpot && history.len() > HISTORY_WINDOW {
            history.drain(..history.len() - HISTORY_WINDOW);
        }
        let mut item = QaItem::new(
            self.id,
            story,
            history,
            self.question,
            self.answer,
            self.answer_type,
            self.rationale,
        );
        if let Some(variant) = self.variant {
            item.origin = Some(Origin {
                variant,
                provenance: self.provenance.unwrap_or_default(),
                original_answer: self.original_answer,
                original_answer_type: self.original_answer_type,
            });
        }
        Ok(item)
    }
}

/// Parses corpus JSONL from a reader. Blank lines are ignored.
pub fn parse_corpus<R: Read>(reader: R, format: SourceFormat) -> Result<Corpus> {
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        items.push(record.into_item(format, line_no)?);
    }
    Corpus::new(items, format, Split::Train)
}

pub fn load_corpus(path: impl AsRef<Path>, format: SourceFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut corpus = parse_corpus(file, format)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.contains("dev") {
        corpus.split = Split::Dev;
    }
    Ok(corpus)
}

/// Slices `text` by a character span, clamping to the text length.
pub fn char_slice(text: &str, span: Span) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let start = indices.nth(span.start).unwrap_or(text.len());
    let end = if span.end > span.start {
        indices.nth(span.end - span.start - 1).unwrap_or(text.len())
    } else {
        start
    };
    &text[start..end]
}

/// Character offset of the first occurrence of `needle` in `haystack`.
pub fn find_chars(haystack: &str, needle: &str) -> Option<Span> {
    let byte = haystack.find(needle)?;
    let start = haystack[..byte].chars().count();
    Some(Span::new(start, start + needle.chars().count()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALAN: &str = "Alan works in an office. He goes to a nearby park after work.";

    fn alan_line() -> String {
        format!(
            r#"{{"id":"alan-1","story":"{ALAN}","history":[],"question":"Where does Alan go after work?","answer":"park","answer_type":"span","rationale":[25,61]}}"#
        )
    }

    #[test]
    fn loads_single_item_with_two_sentences() {
        let corpus = parse_corpus(alan_line().as_bytes(), SourceFormat::Coqa).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.items[0].sentences.len(), 2);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let corpus = parse_corpus("".as_bytes(), SourceFormat::Coqa).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn missing_span_answer_is_integrity_error() {
        let line = alan_line().replace(r#""answer":"park""#, r#""answer":"beach""#);
        let err = parse_corpus(line.as_bytes(), SourceFormat::Coqa).unwrap_err();
        match err {
            Error::Integrity(msg) => assert!(msg.contains("alan-1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let input = format!("{}\n\n{{not json\n", alan_line());
        match parse_corpus(input.as_bytes(), SourceFormat::Coqa).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = format!("{}\n{}\n", alan_line(), alan_line());
        assert!(matches!(
            parse_corpus(input.as_bytes(), SourceFormat::Coqa),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn rationale_out_of_bounds_rejected() {
        let line = alan_line().replace("[25,61]", "[25,500]");
        assert!(matches!(
            parse_corpus(line.as_bytes(), SourceFormat::Coqa),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn hotpot_paragraphs_are_concatenated() {
        let line = r#"{"id":"h1","paragraphs":["Hot Rod is a magazine.","The Memory of Our People is a magazine."],"question":"Are both magazines?","answer":"yes","answer_type":"yes","rationale":[0,23]}"#;
        let corpus = parse_corpus(line.as_bytes(), SourceFormat::Hotpot).unwrap();
        assert_eq!(
            corpus.items[0].story,
            "Hot Rod is a magazine. The Memory of Our People is a magazine."
        );
        assert!(parse_corpus(line.as_bytes(), SourceFormat::Coqa).is_err());
    }

    #[test]
    fn hotpot_rejects_history() {
        let line = r#"{"id":"h1","story":"A b.","history":[["q","a"]],"question":"q?","answer":"yes","answer_type":"yes","rationale":[0,4]}"#;
        assert!(matches!(
            parse_corpus(line.as_bytes(), SourceFormat::Hotpot),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn coqa_history_keeps_last_two_turns() {
        let line = r#"{"id":"c1","story":"A b.","history":[["q1","a1"],["q2","a2"],["q3","a3"]],"question":"q?","answer":"yes","answer_type":"yes","rationale":[0,4]}"#;
        let corpus = parse_corpus(line.as_bytes(), SourceFormat::Coqa).unwrap();
        assert_eq!(
            corpus.items[0].history,
            vec![("q2".to_string(), "a2".to_string()), ("q3".to_string(), "a3".to_string())]
        );
    }

    #[test]
    fn char_slice_counts_scalar_values() {
        let text = "Pérez is fast.";
        assert_eq!(char_slice(text, Span::new(0, 5)), "Pérez");
        assert_eq!(char_slice(text, Span::new(9, 14)), "fast.");
        assert_eq!(char_slice(text, Span::new(3, 3)), "");
        assert_eq!(find_chars(text, "fast"), Some(Span::new(9, 13)));
    }

    #[test]
    fn span_serializes_as_pair() {
        assert_eq!(serde_json::to_string(&Span::new(3, 9)).unwrap(), "[3,9]");
    }
}
