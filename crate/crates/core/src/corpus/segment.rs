use super::Span;

/// Words that end in a period without ending a sentence. Compared lowercase,
/// with internal periods kept (`e.g`).
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "prof", "rev", "gen", "capt", "lt", "sgt", "mt",
    "vs", "e.g", "i.e",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

/// Characters absorbed into a sentence after its terminator.
fn is_closer(c: char) -> bool {
    is_terminator(c) || matches!(c, '"' | '\'' | ')' | '\u{201d}' | '\u{2019}')
}

fn ends_with_abbreviation(chars: &[char], sentence_start: usize, dot: usize) -> bool {
    let mut begin = dot;
    while begin > sentence_start && (chars[begin - 1].is_alphabetic() || chars[begin - 1] == '.') {
        begin -= 1;
    }
    if begin == dot {
        return false;
    }
    let word: String = chars[begin..dot].iter().flat_map(|c| c.to_lowercase()).collect();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits text into sentence spans.
///
/// A sentence ends at `.`, `?` or `!` (plus any closing quotes, brackets or
/// further terminators) when followed by whitespace or the end of the text.
/// A lone period after an allowlisted abbreviation does not end a sentence.
/// Trailing text without a terminator forms a final sentence. Spans never
/// include leading or trailing whitespace.
pub fn segment_sentences(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        let Some(s) = start else {
            if !c.is_whitespace() {
                start = Some(i);
            } else {
                i += 1;
            }
            continue;
        };
        if is_terminator(c) {
            let mut j = i + 1;
            while j < n && is_closer(chars[j]) {
                j += 1;
            }
            let boundary = j == n || chars[j].is_whitespace();
            let abbreviation = c == '.' && j == i + 1 && ends_with_abbreviation(&chars, s, i);
            if boundary && !abbreviation {
                spans.push(Span::new(s, j));
                start = None;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    if let Some(s) = start {
        let mut end = n;
        while end > s && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        spans.push(Span::new(s, end));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::char_slice;
    use proptest::prelude::*;

    fn texts(text: &str) -> Vec<&str> {
        segment_sentences(text).into_iter().map(|s| char_slice(text, s)).collect()
    }

    #[test]
    fn two_terminators_two_sentences() {
        assert_eq!(
            texts("Alan works in an office. He goes to a nearby park after work."),
            vec!["Alan works in an office.", "He goes to a nearby park after work."]
        );
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(segment_sentences("Mr. Earl was wifeless, and the farm ladies heedless.").len(), 1);
        assert_eq!(texts("Dr. Who met Mrs. Lin. She smiled."), vec!["Dr. Who met Mrs. Lin.", "She smiled."]);
    }

    #[test]
    fn empty_text_has_no_sentences() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("   \n ").is_empty());
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(
            texts(r#"They asked, "What does it say?" Papa read it."#),
            vec![r#"They asked, "What does it say?""#, "Papa read it."]
        );
    }

    #[test]
    fn decimal_points_and_unterminated_tail() {
        assert_eq!(texts("It cost 1.5 dollars. and then"), vec!["It cost 1.5 dollars.", "and then"]);
    }

    #[test]
    fn single_letters_split() {
        assert_eq!(texts("A. B. C."), vec!["A.", "B.", "C."]);
    }

    proptest! {
        #[test]
        fn spans_reconstruct_text(text in "[a-zA-Z .?!\"'\n]{0,80}") {
            let spans = segment_sentences(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut cursor = 0;
            for span in &spans {
                prop_assert!(span.start >= cursor && span.end > span.start);
                prop_assert!(chars[cursor..span.start].iter().all(|c| c.is_whitespace()));
                cursor = span.end;
            }
            prop_assert!(chars[cursor..].iter().all(|c| c.is_whitespace()));
        }
    }
}
