use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::corpus::{find_chars, parse_corpus, Corpus, Split};
use crate::model::{AnswerPrediction, Predictor};

const WALKTHROUGH_COQA: &str = include_str!("../../tests/fixtures/walkthrough_coqa.jsonl");
const WALKTHROUGH_HOTPOT: &str = include_str!("../../tests/fixtures/walkthrough_hotpot.jsonl");
const NEGATION_COQA: &str = include_str!("../../tests/fixtures/negation_coqa.jsonl");
const NEGATION_HOTPOT: &str = include_str!("../../tests/fixtures/negation_hotpot.jsonl");

fn fixture(text: &str, format: SourceFormat) -> Corpus {
    parse_corpus(text.as_bytes(), format).unwrap()
}

fn item_with_rationale(id: &str, story: &str, answer: &str, answer_type: AnswerType, rationale: &str) -> QaItem {
    let span = find_chars(story, rationale).unwrap();
    QaItem::new(id, story, vec![], "Q?", answer, answer_type, span)
}

fn alan() -> QaItem {
    item_with_rationale(
        "alan",
        "Alan works in an office. He goes to a nearby park after work.",
        "park",
        AnswerType::Span,
        "He goes to a nearby park after work.",
    )
}

#[test]
fn truncation_keeps_story_when_rationale_is_last() {
    let story = "Once upon a time, in a barn near a farm house, there lived a little white kitten named Cotton. \
                 Cotton lived high up [...] farmer's horses slept. But Cotton wasn't alone in her little home above the barn, oh no.";
    let item = item_with_rationale("cotton", story, "no", AnswerType::No, "But Cotton wasn't alone in her little home above the barn, oh no.");
    let ts = truncate_at_rationale(&item).unwrap();
    assert_eq!(ts.story(), story);
    assert_eq!(ts.variant(), Variant::Ts);
    assert_eq!(ts.expected_answer(), "no");
}

#[test]
fn truncation_cuts_after_rationale_sentence() {
    let item = item_with_rationale("abc", "A. B. C.", "B", AnswerType::Span, "B");
    assert_eq!(truncate_at_rationale(&item).unwrap().story(), "A. B.");
}

#[test]
fn doorbell_truncation_ends_at_rationale() {
    let corpus = fixture(WALKTHROUGH_COQA, SourceFormat::Coqa);
    let item = corpus.get("a1a-doorbell").unwrap();
    let ts = truncate_at_rationale(item).unwrap();
    assert!(ts.story().ends_with("In her other hand, she holds a paper carrier bag."));
}

#[test]
fn deletion_reinserts_missing_answer() {
    let item = alan();
    let ts = truncate_at_rationale(&item).unwrap();
    let tsr = delete_rationale(&ts, &item, SourceFormat::Coqa).unwrap();
    assert_eq!(tsr.story(), "Alan works in an office. park.");
    assert_eq!(tsr.expected_answer(), "unknown");
    assert_eq!(tsr.expected_answer_type(), AnswerType::Unknown);
    assert_eq!(tsr.provenance(), PROVENANCE_REINSERTED);
    assert_eq!(tsr.item.original_answer(), "park");
}

#[test]
fn first_sentence_rationale_is_discarded() {
    let item = item_with_rationale("first", "Alan works in an office. He likes it.", "office", AnswerType::Span, "an office");
    let ts = truncate_at_rationale(&item).unwrap();
    let err = delete_rationale(&ts, &item, SourceFormat::Coqa).unwrap_err();
    assert!(matches!(err, Error::Discarded { ref id, .. } if id == "first"));
}

#[test]
fn yes_no_deletion_appends_nothing() {
    let item = item_with_rationale("yn", "Alan works in an office. He walks to the park.", "yes", AnswerType::Yes, "He walks to the park.");
    let ts = truncate_at_rationale(&item).unwrap();
    let tsr = delete_rationale(&ts, &item, SourceFormat::Coqa).unwrap();
    assert_eq!(tsr.story(), "Alan works in an office.");
    assert_eq!(tsr.provenance(), PROVENANCE_NO_SPAN);
}

#[test]
fn walkthrough_deletions_match_reference_text() {
    let corpus = fixture(WALKTHROUGH_COQA, SourceFormat::Coqa);
    let expected = [
        ("a1a-doorbell", "My doorbell rings. On the step, I find the elderly Chinese lady, small and slight, holding the hand of a little boy. paper carrier bag."),
        ("a1b-oclc", "OCLC, currently incorporated as OCLC Online Computer Library Center, Incorporated, is an American nonprofit cooperative organization \"dedicated to the public purposes of furthering access to the world's information and reducing information costs\". 1967."),
        ("a1c-hound", "Chapter XVIII \"The Hound Restored\" On the third day after his arrival at the camp Archie received orders to prepare to start with the hound, with the earl and a large party of men-at-arms, in search of Bruce. A traitor."),
        ("a1d-cj7", "Can you imagine keeping an alien dog as a pet? This is what happens in CJ7 [...] When Ti falls off a building and dies, CJ7 saves his life. Because the dog loses all its power, it becomes a doll. around his neck."),
    ];
    for (id, want) in expected {
        let item = corpus.get(id).unwrap();
        let ts = truncate_at_rationale(item).unwrap();
        assert_eq!(delete_rationale(&ts, item, SourceFormat::Coqa).unwrap().story(), want, "{id}");
    }
}

#[test]
fn hotpot_deletion_keeps_first_sentences_and_appends_bare_answer() {
    let corpus = fixture(WALKTHROUGH_HOTPOT, SourceFormat::Hotpot);
    let suite = build_deletion_suite(&corpus, None).unwrap();
    assert!(suite.records(Variant::Ts).is_empty());
    assert_eq!(suite.records(Variant::TsR).len(), corpus.len());
    assert!(suite.discards.is_empty());
    let carrefour = suite.records(Variant::TsR).iter().find(|r| r.base_item_id() == "a3c-carrefour").unwrap();
    assert!(carrefour.story().ends_with("Saint-Michel-sur-Orge. In June 1991, the group was rebought by its rival, Carrefour, for 5,2 billion francs. 1,462"));
    let collie = suite.records(Variant::TsR).iter().find(|r| r.base_item_id() == "a3b-collie").unwrap();
    assert!(collie.story().starts_with("The breed consisted of both"));
    assert!(collie.story().ends_with("Irish Setters. Scotch Collie"));
}

struct Fixed(&'static str);

impl SentenceGenerator for Fixed {
    fn generate(&self, _answer: &str, _context: &str) -> Result<String> {
        Ok(self.0.to_string())
    }

    fn name(&self) -> &str {
        "fixed"
    }
}

struct Counting {
    calls: AtomicUsize,
    result: fn() -> Result<String>,
}

impl SentenceGenerator for Counting {
    fn generate(&self, _answer: &str, _context: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.result)()
    }

    fn name(&self) -> &str {
        "counting"
    }
}

fn alan_tsr() -> (QaItem, InterventionRecord) {
    let item = alan();
    let ts = truncate_at_rationale(&item).unwrap();
    let tsr = delete_rationale(&ts, &item, SourceFormat::Coqa).unwrap();
    (item, tsr)
}

#[test]
fn stub_augmentation_replaces_fragment() {
    let (item, tsr) = alan_tsr();
    let aug = augment_answer_sentence(&tsr, &item, &TemplateStub).unwrap();
    assert_eq!(
        aug.story(),
        "Alan works in an office. The word park appeared in a sentence unrelated to this story."
    );
    assert!(aug.story().contains(&item.gold_answer));
    assert_eq!(aug.variant(), Variant::TsRAug);
    assert_eq!(aug.expected_answer(), "unknown");
}

#[test]
fn reference_augmentation_sentences_round_trip() {
    let corpus = fixture(WALKTHROUGH_COQA, SourceFormat::Coqa);
    let cases = [
        ("a2b-andrew", "I packed them a lunch for their long road trip.", "Andrew waited for his granddaddy to show up. They were going fishing. I packed them a lunch for their long road trip."),
        ("a2c-spike-lee", "Spike Lee is a highly acclaimed filmmaker known for his innovative and thought-provoking films.", "ATLANTA, Georgia (CNN) -- In 1989, the warnings were dire. Spike Lee is a highly acclaimed filmmaker known for his innovative and thought-provoking films."),
        ("a2d-rudy", "I haven't seen my family in almost a year due to the pandemic.", "Once upon a time there was a cute brown puppy. He was a very happy puppy. His name was Rudy. Rudy had a best friend. His name was Thomas. Thomas had a nice dad named Rick. I haven't seen my family in almost a year due to the pandemic."),
    ];
    for (id, sentence, want) in cases {
        let item = corpus.get(id).unwrap();
        let ts = truncate_at_rationale(item).unwrap();
        let tsr = delete_rationale(&ts, item, SourceFormat::Coqa).unwrap();
        let gen: &'static Fixed = Box::leak(Box::new(Fixed(sentence)));
        assert_eq!(augment_answer_sentence(&tsr, item, gen).unwrap().story(), want, "{id}");
    }
}

#[test]
fn augmentation_gives_up_after_budget() {
    let (item, tsr) = alan_tsr();
    let gen = Counting {
        calls: AtomicUsize::new(0),
        result: || Ok("Nothing relevant here.".to_string()),
    };
    let err = augment_answer_sentence(&tsr, &item, &gen).unwrap_err();
    assert!(matches!(err, Error::Discarded { .. }));
    assert_eq!(gen.calls.load(Ordering::SeqCst), GENERATOR_ATTEMPTS);

    let gen = Counting {
        calls: AtomicUsize::new(0),
        result: || Err(Error::Transport("connection refused".into())),
    };
    let err = augment_answer_sentence(&tsr, &item, &gen).unwrap_err();
    assert!(err.is_retryable());
    assert_eq!(gen.calls.load(Ordering::SeqCst), GENERATOR_ATTEMPTS);
}

#[test]
fn augmentation_passes_through_records_without_fragment() {
    let item = item_with_rationale("yn", "Alan works in an office. He walks to the park.", "yes", AnswerType::Yes, "He walks to the park.");
    let ts = truncate_at_rationale(&item).unwrap();
    let tsr = delete_rationale(&ts, &item, SourceFormat::Coqa).unwrap();
    let aug = augment_answer_sentence(&tsr, &item, &TemplateStub).unwrap();
    assert_eq!(aug.story(), tsr.story());
    assert_eq!(aug.variant(), Variant::TsRAug);
}

/// Serves `responses` in order, one per connection, and returns the bodies it saw.
fn one_shot_server(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_generator_speaks_the_contract_and_retries() {
    let (url, server) = one_shot_server(vec![
        (503, "{}"),
        (200, r#"{"sentence": "We had a picnic in the park."}"#),
    ]);
    let client = GeneratorClient::parse(&format!("http:{url}"), Duration::from_secs(5)).unwrap().unwrap();
    let (item, tsr) = alan_tsr();
    let aug = augment_answer_sentence(&tsr, &item, client.as_generator()).unwrap();
    assert_eq!(aug.story(), "Alan works in an office. We had a picnic in the park.");
    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 2);
    let req: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
    assert_eq!(req["answer"], "park");
    assert_eq!(req["context"], "Alan works in an office.");
}

#[test]
fn generator_spec_parsing() {
    let t = Duration::from_secs(1);
    assert!(GeneratorClient::parse("none", t).unwrap().is_none());
    assert!(matches!(GeneratorClient::parse("stub", t).unwrap(), Some(GeneratorClient::TemplateStub(_))));
    match GeneratorClient::parse("http://localhost:9/x", t).unwrap() {
        Some(GeneratorClient::Http(h)) => assert_eq!(h.endpoint(), "http://localhost:9/x"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(GeneratorClient::parse("gpt", t), Err(Error::Config(_))));
}

#[test]
fn suite_counts_discards() {
    let items = vec![
        alan(),
        item_with_rationale("first", "Alan works in an office. He likes it.", "office", AnswerType::Span, "an office"),
        item_with_rationale("yn", "Alan works in an office. He walks to the park.", "yes", AnswerType::Yes, "He walks to the park."),
    ];
    let corpus = Corpus::new(items, SourceFormat::Coqa, Split::Train).unwrap();
    let suite = build_deletion_suite(&corpus, None).unwrap();
    assert_eq!(suite.records(Variant::Os).len(), 3);
    assert_eq!(suite.records(Variant::Ts).len(), 3);
    assert_eq!(suite.records(Variant::TsR).len(), 2);
    assert_eq!(suite.discard_count(Variant::TsR), 1);
    assert_eq!(suite.discards[0].id, "first");
    assert!(!suite.variants.contains_key(&Variant::TsRAug));

    let empty = Corpus::new(vec![], SourceFormat::Coqa, Split::Train).unwrap();
    let suite = build_deletion_suite(&empty, Some(&TemplateStub)).unwrap();
    assert!(suite.variants.values().all(Vec::is_empty));
}

#[test]
fn suite_save_load_round_trip_is_deterministic() {
    let corpus = fixture(WALKTHROUGH_COQA, SourceFormat::Coqa);
    let suite = build_deletion_suite(&corpus, Some(&TemplateStub)).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    suite.save(a.path()).unwrap();
    build_deletion_suite(&corpus, Some(&TemplateStub)).unwrap().save(b.path()).unwrap();
    for name in ["os.jsonl", "ts.jsonl", "ts_r.jsonl", "ts_r_aug.jsonl", "suite.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let (header, variants) = load_suite(a.path()).unwrap();
    assert_eq!(header, suite.header());
    for (variant, loaded) in variants {
        let want: Vec<QaItem> = suite.records(variant).iter().map(|r| r.item.clone()).collect();
        assert_eq!(loaded.items, want, "{variant}");
    }
}

struct Canned {
    before: &'static str,
    after: &'static str,
    original_story: String,
}

impl Predictor for Canned {
    fn predict(&self, item: &QaItem) -> Result<AnswerPrediction> {
        if item.story.contains("explode") {
            return Err(Error::Capacity("too long".into()));
        }
        let text = if item.story == self.original_story { self.before } else { self.after };
        Ok(AnswerPrediction {
            answer_type: if text == "yes" { AnswerType::Yes } else { AnswerType::No },
            text: text.into(),
            span_tokens: None,
            char_span: None,
            span_score: 0.0,
            class_scores: [0.0; 3],
        })
    }
}

#[test]
fn dallas_edit_is_accepted() {
    let corpus = fixture(NEGATION_COQA, SourceFormat::Coqa);
    let item = corpus.get("neg-dallas").unwrap();
    let edited = item.story.replace(
        "a door was apparently kicked in",
        "a door was open, leaving the possibility that the killers had been invited in",
    );
    let report = validate_negation_edit(item, &edited, "no", None);
    assert!(report.edited_differs);
    assert_eq!(report.answer_flip_declared, ("yes".to_string(), "no".to_string()));
    assert!(report.span_presence_ok);
    assert!(report.model_flip.is_none());
    assert_eq!(report.verdict, Verdict::Accept);

    let model = Canned {
        before: "yes",
        after: "yes",
        original_story: item.story.clone(),
    };
    let report = validate_negation_edit(item, &edited, "no", Some(&model));
    let flip = report.model_flip.unwrap();
    assert_eq!((flip.pred_before.as_str(), flip.pred_after.as_str(), flip.flipped), ("yes", "yes", false));
    assert_eq!(report.verdict, Verdict::Accept);
}

#[test]
fn unchanged_story_or_gold_is_rejected() {
    let corpus = fixture(NEGATION_COQA, SourceFormat::Coqa);
    let item = corpus.get("neg-dallas").unwrap();
    assert_eq!(validate_negation_edit(item, &item.story, "no", None).verdict, Verdict::Reject);
    let edited = item.story.replace("kicked in", "left open");
    assert_eq!(validate_negation_edit(item, &edited, "Yes", None).verdict, Verdict::Reject);
}

#[test]
fn hotpot_edit_is_accepted() {
    let corpus = fixture(NEGATION_HOTPOT, SourceFormat::Hotpot);
    let item = corpus.get("a6c-kronick").unwrap();
    let edited = item
        .story
        .replace("an American film director and producer", "a German television film director and writer");
    let report = validate_negation_edit(item, &edited, "no", None);
    assert_eq!(report.verdict, Verdict::Accept);
    assert!(report.span_presence_ok);
}

#[test]
fn edit_outside_rationale_and_model_failure_are_flagged() {
    let corpus = fixture(NEGATION_COQA, SourceFormat::Coqa);
    let item = corpus.get("neg-dallas").unwrap();
    let edited = item.story.replace("Sunday morning", "Monday evening");
    let report = validate_negation_edit(item, &edited, "no", None);
    assert!(!report.span_presence_ok);
    assert_eq!(report.verdict, Verdict::Accept);

    let model = Canned {
        before: "yes",
        after: "no",
        original_story: item.story.clone(),
    };
    let exploding = item.story.replace("kicked in", "blown open by something set to explode");
    let report = validate_negation_edit(item, &exploding, "no", Some(&model));
    assert!(report.model_flip.as_ref().unwrap().error.is_some());
    assert_eq!(report.verdict, Verdict::Warn);
}

#[test]
fn negated_item_covers_edit() {
    let corpus = fixture(NEGATION_COQA, SourceFormat::Coqa);
    let item = corpus.get("neg-dallas").unwrap();
    let edited = item.story.replace(
        "a door was apparently kicked in",
        "a door was open, leaving the possibility that the killers had been invited in",
    );
    let neg = negated_item(item, &edited, "no").unwrap();
    assert_eq!(neg.variant(), Variant::Neg);
    assert_eq!(neg.answer_type, AnswerType::No);
    assert_eq!(neg.original_answer(), "yes");
    let rationale = crate::corpus::char_slice(&neg.story, neg.rationale);
    assert!(rationale.starts_with("A law enforcement official"));
    assert!(rationale.ends_with("invited in."));
}

#[test]
fn edit_region_examples() {
    assert_eq!(edit_region("abcdef", "abXYef"), (Span::new(2, 4), Span::new(2, 4)));
    assert_eq!(edit_region("aaa", "aaaa"), (Span::new(3, 3), Span::new(3, 4)));
    assert_eq!(edit_region("same", "same"), (Span::new(4, 4), Span::new(4, 4)));
}

fn arb_story() -> impl Strategy<Value = (Vec<String>, usize, usize)> {
    let word = prop::sample::select(vec!["alan", "park", "the", "office", "red", "walks", "Bob", "often"]);
    let sentence = prop::collection::vec(word, 1..6).prop_map(|w| {
        let mut s = w.join(" ");
        s.push('.');
        s
    });
    prop::collection::vec(sentence, 1..8).prop_flat_map(|sentences| {
        let n = sentences.len();
        (Just(sentences), 0..n).prop_flat_map(move |(s, first)| (Just(s), Just(first), first..n))
    })
}

proptest! {
    #[test]
    fn intervention_invariants_hold((sentences, first, last) in arb_story(), span_answer in any::<bool>()) {
        let story = sentences.join(" ");
        let starts: Vec<usize> = sentences.iter().scan(0, |pos, s| {
            let start = *pos;
            *pos += s.chars().count() + 1;
            Some(start)
        }).collect();
        let rationale = Span::new(starts[first], starts[last] + sentences[last].chars().count());
        let (answer, kind) = if span_answer {
            (sentences[last].trim_end_matches('.').split(' ').next_back().unwrap().to_string(), AnswerType::Span)
        } else {
            ("yes".to_string(), AnswerType::Yes)
        };
        let item = QaItem::new("p", story.clone(), vec![], "Q?", answer.clone(), kind, rationale);
        let ts = truncate_at_rationale(&item).unwrap();
        prop_assert!(story.starts_with(ts.story()));
        let last_sentence = ts.item.sentences.last().unwrap();
        prop_assert!(last_sentence.overlaps(&item.rationale));
        match delete_rationale(&ts, &item, SourceFormat::Coqa) {
            Ok(tsr) => {
                prop_assert!(first > 0);
                // every kept sentence comes from outside the rationale
                let kept = &tsr.story()[..tsr.story().len() - if tsr.provenance() == PROVENANCE_REINSERTED { answer.len() + 2 } else { 0 }];
                prop_assert_eq!(kept, &story[..story.chars().take(starts[first]).map(char::len_utf8).sum::<usize>() - 1]);
                if span_answer {
                    prop_assert!(tsr.story().contains(&answer));
                }
            }
            Err(Error::Discarded { .. }) => prop_assert_eq!(first, 0),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}
