use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerType, Corpus, Origin, QaItem, SourceFormat, Span, Split, Variant};
use crate::error::{Error, Result};

pub const DEFAULT_COLORS: [&str; 13] = [
    "blue", "red", "green", "yellow", "black", "white", "brown", "purple", "orange", "pink", "gray", "golden", "silver",
];

/// Colour pairs instantiated per schema.
pub const PA_PAIRS: usize = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PaSchema {
    pub index: usize,
    pub template: &'static str,
    pub object1: &'static str,
    pub object2: &'static str,
}

pub const PA_SCHEMAS: [PaSchema; 5] = [
    PaSchema {
        index: 1,
        template: "The {col1} car was standing in front of a {col2} house.",
        object1: "car",
        object2: "house",
    },
    PaSchema {
        index: 2,
        template: "They played with a {col1} ball and {col2} bat.",
        object1: "ball",
        object2: "bat",
    },
    PaSchema {
        index: 3,
        template: "The man was wearing a {col1} shirt and a {col2} jacket.",
        object1: "shirt",
        object2: "jacket",
    },
    PaSchema {
        index: 4,
        template: "The house had a {col1} window and a {col2} door.",
        object1: "window",
        object2: "door",
    },
    PaSchema {
        index: 5,
        template: "A {col1} glass was placed on a {col2} table.",
        object1: "glass",
        object2: "table",
    },
];

impl PaSchema {
    pub fn instantiate(&self, col1: &str, col2: &str) -> String {
        self.template.replace("{col1}", col1).replace("{col2}", col2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionForm {
    Original,
    Paraphrase,
    DeterminerSwap,
    NegatedStory,
}

impl QuestionForm {
    pub const ALL: [QuestionForm; 4] = [
        QuestionForm::Original,
        QuestionForm::Paraphrase,
        QuestionForm::DeterminerSwap,
        QuestionForm::NegatedStory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionForm::Original => "original",
            QuestionForm::Paraphrase => "paraphrase",
            QuestionForm::DeterminerSwap => "determiner_swap",
            QuestionForm::NegatedStory => "negated_story",
        }
    }
}

impl fmt::Display for QuestionForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuestionForm::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown question form `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaItem {
    pub id: String,
    pub schema: usize,
    pub story: String,
    pub object: String,
    pub color: String,
    pub gold: AnswerType,
    pub question_form: QuestionForm,
    pub question: String,
}

const PROVENANCE_PREFIX: &str = "question_form=";

impl PaItem {
    pub fn to_qa_item(&self) -> QaItem {
        let rationale = Span::new(0, self.story.chars().count());
        QaItem::new(
            self.id.clone(),
            self.story.clone(),
            Vec::new(),
            self.question.clone(),
            self.gold.as_str(),
            self.gold,
            rationale,
        )
        .with_origin(Origin {
            variant: if self.question_form == QuestionForm::NegatedStory {
                Variant::Neg
            } else {
                Variant::Os
            },
            provenance: format!("{PROVENANCE_PREFIX}{}; schema={}", self.question_form, self.schema),
            original_answer: None,
            original_answer_type: None,
        })
    }

    /// Recovers a PA item from its corpus record.
    pub fn from_qa_item(item: &QaItem) -> Result<PaItem> {
        let provenance = item.origin.as_ref().map_or("", |o| o.provenance.as_str());
        let field = |key: &str| {
            provenance
                .split("; ")
                .find_map(|kv| kv.strip_prefix(key))
                .ok_or_else(|| Error::Format(format!("item {}: provenance lacks `{key}`", item.id)))
        };
        let question_form: QuestionForm = field(PROVENANCE_PREFIX)?.parse()?;
        let schema: usize = field("schema=")?
            .parse()
            .map_err(|_| Error::Format(format!("item {}: bad schema index", item.id)))?;
        let (object, color) = parse_question(&item.question, question_form)?;
        if !item.answer_type.is_yes_no() {
            return Err(Error::Format(format!("item {}: PA golds are yes or no", item.id)));
        }
        Ok(PaItem {
            id: item.id.clone(),
            schema,
            story: item.story.clone(),
            object,
            color,
            gold: item.answer_type,
            question_form,
            question: item.question.clone(),
        })
    }
}

fn pattern_error(q: &str, pattern: &str) -> Error {
    Error::Pattern(format!("{q:?} does not match {pattern:?}"))
}

fn single_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_alphanumeric() || c == '-')
}

fn two_words<'a>(rest: &'a str, q: &str, pattern: &str) -> Result<(&'a str, &'a str)> {
    match rest.split(' ').collect::<Vec<_>>()[..] {
        [a, b] if single_word(a) && single_word(b) => Ok((a, b)),
        _ => Err(pattern_error(q, pattern)),
    }
}

/// `(object, color)` of a question written in the given form.
pub fn parse_question(q: &str, form: QuestionForm) -> Result<(String, String)> {
    let (prefix, pattern, swapped) = match form {
        QuestionForm::Original | QuestionForm::NegatedStory => ("Was the ", "Was the {object} {color}?", false),
        QuestionForm::Paraphrase => ("Was there a ", "Was there a {color} {object}?", true),
        QuestionForm::DeterminerSwap => ("Was the a ", "Was the a {color} {object}?", true),
    };
    let rest = q
        .strip_prefix(prefix)
        .and_then(|r| r.strip_suffix('?'))
        .ok_or_else(|| pattern_error(q, pattern))?;
    let (a, b) = two_words(rest, q, pattern)?;
    if !swapped && a == "a" {
        return Err(pattern_error(q, pattern));
    }
    let (object, color) = if swapped { (b, a) } else { (a, b) };
    Ok((object.to_string(), color.to_string()))
}

pub fn paraphrase_question(q: &str) -> Result<String> {
    let (object, color) = parse_question(q, QuestionForm::Original)?;
    Ok(format!("Was there a {color} {object}?"))
}

pub fn determiner_swap(q: &str) -> Result<String> {
    let (object, color) = parse_question(q, QuestionForm::Paraphrase)?;
    Ok(format!("Was the a {color} {object}?"))
}

fn schema_of(story: &str) -> Result<(PaSchema, String, String)> {
    for schema in PA_SCHEMAS {
        let (head, tail) = schema.template.split_once("{col1}").expect("template has col1");
        let (mid, end) = tail.split_once("{col2}").expect("template has col2");
        let Some(rest) = story.strip_prefix(head).and_then(|r| r.strip_suffix(end)) else {
            continue;
        };
        if let Some((c1, c2)) = rest.split_once(mid) {
            if single_word(c1) && single_word(c2) {
                return Ok((schema, c1.to_string(), c2.to_string()));
            }
        }
    }
    Err(Error::Pattern(format!("{story:?} instantiates no schema")))
}

/// Rewrites `"{color} {object}"` as `"{object} that was not {color}"`.
pub fn negate_pa_story(story: &str, target_object: &str) -> Result<String> {
    let (schema, c1, c2) = schema_of(story)?;
    let color = if target_object == schema.object1 {
        c1
    } else if target_object == schema.object2 {
        c2
    } else {
        return Err(Error::Pattern(format!("{target_object:?} is not an object of {story:?}")));
    };
    let attributed = format!("{color} {target_object}");
    if story.matches(&attributed).count() != 1 {
        return Err(Error::Pattern(format!("{attributed:?} is not unique in {story:?}")));
    }
    Ok(story.replacen(&attributed, &format!("{target_object} that was not {color}"), 1))
}

fn color_pairs(colors: &[&str]) -> Result<Vec<(String, String)>> {
    if let Some(bad) = colors.iter().find(|c| !single_word(c)) {
        return Err(Error::Config(format!("colour {bad:?} is not a single word")));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = colors.iter().find(|c| !seen.insert(**c)) {
        return Err(Error::Config(format!("colour {dup:?} listed twice")));
    }
    let pairs: Vec<(String, String)> = colors
        .iter()
        .flat_map(|a| colors.iter().filter(move |b| *b != a).map(move |b| (a.to_string(), b.to_string())))
        .take(PA_PAIRS)
        .collect();
    if pairs.len() < PA_PAIRS {
        return Err(Error::Config(format!(
            "{} colours give {} ordered pairs, {PA_PAIRS} needed",
            colors.len(),
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// The 520 original questions: per story, both true attributions then both
/// swapped ones.
pub fn generate_pa_items(colors: &[&str]) -> Result<Vec<PaItem>> {
    let pairs = color_pairs(colors)?;
    let mut items = Vec::with_capacity(PA_SCHEMAS.len() * pairs.len() * 4);
    for schema in PA_SCHEMAS {
        for (p, (c1, c2)) in pairs.iter().enumerate() {
            let story = schema.instantiate(c1, c2);
            let questions = [
                (schema.object1, c1, AnswerType::Yes),
                (schema.object2, c2, AnswerType::Yes),
                (schema.object1, c2, AnswerType::No),
                (schema.object2, c1, AnswerType::No),
            ];
            for (q, (object, color, gold)) in questions.into_iter().enumerate() {
                items.push(PaItem {
                    id: format!("pa-s{}-p{:02}-q{}", schema.index, p + 1, q + 1),
                    schema: schema.index,
                    story: story.clone(),
                    object: object.to_string(),
                    color: color.clone(),
                    gold,
                    question_form: QuestionForm::Original,
                    question: format!("Was the {object} {color}?"),
                });
            }
        }
    }
    Ok(items)
}

/// Paraphrase, determiner-swap and negated-story items derived from the
/// originals. Every yes-question yields one negated story in which its
/// attribution is denied.
pub fn pa_variants(originals: &[PaItem]) -> Result<Vec<PaItem>> {
    let mut paraphrases = Vec::new();
    let mut swaps = Vec::new();
    let mut negated = Vec::new();
    for item in originals {
        if item.question_form != QuestionForm::Original {
            return Err(Error::Config(format!("item {} is not an original question", item.id)));
        }
        let paraphrase = paraphrase_question(&item.question)?;
        let swapped = determiner_swap(&paraphrase)?;
        for (form, question, out) in [
            (QuestionForm::Paraphrase, paraphrase, &mut paraphrases),
            (QuestionForm::DeterminerSwap, swapped, &mut swaps),
        ] {
            out.push(PaItem {
                id: format!("{}-{}", item.id, form),
                question_form: form,
                question,
                ..item.clone()
            });
        }
        if item.gold == AnswerType::Yes {
            negated.push(PaItem {
                id: format!("{}-{}", item.id, QuestionForm::NegatedStory),
                story: negate_pa_story(&item.story, &item.object)?,
                gold: AnswerType::No,
                question_form: QuestionForm::NegatedStory,
                ..item.clone()
            });
        }
    }
    paraphrases.extend(swaps);
    paraphrases.extend(negated);
    Ok(paraphrases)
}

/// Corpus of the 520 original questions.
pub fn generate_pa_corpus(colors: &[&str]) -> Result<Corpus> {
    pa_corpus(&generate_pa_items(colors)?)
}

pub fn pa_corpus(items: &[PaItem]) -> Result<Corpus> {
    Corpus::new(
        items.iter().map(PaItem::to_qa_item).collect(),
        SourceFormat::Synthetic,
        Split::Dev,
    )
}
