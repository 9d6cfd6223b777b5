use super::Span;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Span,
}

/// Lowercased word-level tokenization: runs of alphanumerics form one token,
/// every other non-whitespace character is a token on its own.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if word.is_empty() {
                word_start = pos;
            }
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(Token {
                    text: std::mem::take(&mut word),
                    span: Span::new(word_start, pos),
                });
            }
            if !c.is_whitespace() {
                tokens.push(Token {
                    text: c.to_lowercase().collect(),
                    span: Span::new(pos, pos + 1),
                });
            }
        }
        pos += 1;
    }
    if !word.is_empty() {
        tokens.push(Token {
            text: word,
            span: Span::new(word_start, pos),
        });
    }
    tokens
}

pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::char_slice;
    use proptest::prelude::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            tokenize_words("But Cotton wasn't alone, oh no."),
            ["but", "cotton", "wasn", "'", "t", "alone", ",", "oh", "no", "."]
        );
    }

    #[test]
    fn spans_are_character_offsets() {
        let toks = tokenize("Sergio Pérez, 1990");
        assert_eq!(toks[1].span, Span::new(7, 12));
        assert_eq!(toks[1].text, "pérez");
        assert_eq!(toks[3].span, Span::new(14, 18));
    }

    proptest! {
        #[test]
        fn token_spans_retokenize_to_themselves(text in "\\PC{0,60}") {
            for tok in tokenize(&text) {
                let again = tokenize_words(char_slice(&text, tok.span));
                prop_assert_eq!(again, vec![tok.text.clone()]);
            }
        }
    }
}
