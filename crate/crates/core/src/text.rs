//! Quoted-span extraction from captions and the text normalization used
//! everywhere strings are compared.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// A span quoted in a caption. `char_range` holds byte offsets of the quoted
/// content, excluding the quote characters themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotedSpan {
    pub text: String,
    pub char_range: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpanDiagnostic {
    /// An opening quote at `offset` never closed; scanning resumed after it.
    UnclosedQuote { offset: usize },
    /// A quote pair at `offset` enclosed only whitespace.
    EmptyQuote { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QuoteFamily {
    StraightDouble,
    CurlyDouble,
    StraightSingle,
    CurlySingle,
}

impl QuoteFamily {
    fn opening(c: char) -> Option<Self> {
        match c {
            '"' => Some(Self::StraightDouble),
            '\u{201C}' => Some(Self::CurlyDouble),
            '\'' => Some(Self::StraightSingle),
            '\u{2018}' => Some(Self::CurlySingle),
            _ => None,
        }
    }

    fn closes(self, c: char) -> bool {
        matches!(
            (self, c),
            (Self::StraightDouble, '"')
                | (Self::CurlyDouble, '\u{201D}')
                | (Self::StraightSingle, '\'')
                | (Self::CurlySingle, '\u{2019}')
        )
    }
}

/// `'` or `’` with a letter on both sides is an apostrophe, never a quote.
fn is_apostrophe(prev: Option<char>, c: char, next: Option<char>) -> bool {
    matches!(c, '\'' | '\u{2019}') && prev.is_some_and(char::is_alphabetic) && next.is_some_and(char::is_alphabetic)
}

/// Quoted spans in left-to-right order. See [`extract_spans_with_diagnostics`].
pub fn extract_spans(caption: &str) -> Vec<QuotedSpan> {
    extract_spans_with_diagnostics(caption).0
}

/// Scans a caption for quoted spans. A span closes only on the quote family
/// that opened it. Empty quotes are dropped and unclosed quotes are reported,
/// after which scanning restarts right after the offending quote.
pub fn extract_spans_with_diagnostics(caption: &str) -> (Vec<QuotedSpan>, Vec<SpanDiagnostic>) {
    let chars: Vec<(usize, char)> = caption.char_indices().collect();
    let mut spans = Vec::new();
    let mut diags = Vec::new();
    let neighbours = |i: usize| {
        let prev = i.checked_sub(1).map(|p| chars[p].1);
        let next = chars.get(i + 1).map(|&(_, c)| c);
        (prev, next)
    };

    let mut i = 0;
    while i < chars.len() {
        let (open_at, c) = chars[i];
        let (prev, next) = neighbours(i);
        let family = match QuoteFamily::opening(c) {
            Some(f) if !is_apostrophe(prev, c, next) => f,
            _ => {
                i += 1;
                continue;
            }
        };
        let content_start = open_at + c.len_utf8();
        let close = (i + 1..chars.len()).find(|&j| {
            let (p, n) = neighbours(j);
            family.closes(chars[j].1) && !is_apostrophe(p, chars[j].1, n)
        });
        match close {
            Some(j) => {
                let content_end = chars[j].0;
                let text = &caption[content_start..content_end];
                if text.trim().is_empty() {
                    diags.push(SpanDiagnostic::EmptyQuote { offset: open_at });
                } else {
                    spans.push(QuotedSpan { text: text.to_string(), char_range: (content_start, content_end) });
                }
                i = j + 1;
            }
            None => {
                diags.push(SpanDiagnostic::UnclosedQuote { offset: open_at });
                i += 1;
            }
        }
    }
    (spans, diags)
}

fn is_edge_strippable(c: char) -> bool {
    !c.is_alphanumeric() && !is_combining_mark(c)
}

/// Canonical form used for every string comparison: NFC, lowercased,
/// whitespace collapsed, edge punctuation and symbols stripped.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s.nfc().collect::<String>().to_lowercase().nfc().collect();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_matches(is_edge_strippable).to_string()
}

/// Whitespace tokens of the normalized text. Inner punctuation stays attached.
pub fn tokenize_words(s: &str) -> Vec<String> {
    normalize_text(s).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Tokens with their own edge punctuation stripped, for set-overlap
/// comparisons where `"sale,"` and `"sale"` should agree.
pub fn match_tokens(s: &str) -> Vec<String> {
    tokenize_words(s).iter().map(|t| normalize_text(t)).filter(|t| !t.is_empty()).collect()
}

/// True when the normalized text has at least one letter or digit.
pub fn has_alphanumeric(s: &str) -> bool {
    normalize_text(s).chars().any(char::is_alphanumeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(caption: &str) -> Vec<String> {
        extract_spans(caption).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn extracts_flyer_span() {
        let c = "a flyer that says 'Summer Sale, 50% OFF, Aug 12\u{2013}15' in the top-left corner";
        assert_eq!(texts(c), vec!["Summer Sale, 50% OFF, Aug 12\u{2013}15"]);
    }

    #[test]
    fn no_quotes_no_spans() {
        assert!(texts("a plain street with no signage").is_empty());
    }

    #[test]
    fn multiple_double_quotes_in_order() {
        assert_eq!(texts(r#"a sign "OPEN" above a door "EXIT""#), vec!["OPEN", "EXIT"]);
    }

    #[test]
    fn curly_quotes_and_family_matching() {
        assert_eq!(
            texts("a sign that says \u{2018}HELLO WORLD\u{2019} and \u{201C}BYE\u{201D}"),
            vec!["HELLO WORLD", "BYE"]
        );
        // A straight double quote does not close a curly double span.
        assert_eq!(texts("\u{201C}A \" B\u{201D}"), vec!["A \" B"]);
    }

    #[test]
    fn apostrophes_do_not_open_spans() {
        assert_eq!(texts("don't miss the 'BIG SALE' today"), vec!["BIG SALE"]);
        assert_eq!(texts("a sign 'DON'T WALK' at night"), vec!["DON'T WALK"]);
        assert_eq!(texts("it\u{2019}s a \u{2018}TEST\u{2019}"), vec!["TEST"]);
    }

    #[test]
    fn empty_and_unclosed_quotes_are_diagnosed() {
        let (spans, diags) = extract_spans_with_diagnostics(r#"a "" b "OK" c "dangling"#);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].text, "OK");
        assert_eq!(diags, vec![SpanDiagnostic::EmptyQuote { offset: 2 }, SpanDiagnostic::UnclosedQuote { offset: 14 }]);
        // Recovery: a stray opening quote does not swallow later spans.
        let (spans, diags) = extract_spans_with_diagnostics("the kids' toys \"SALE\"");
        assert_eq!(spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(), vec!["SALE"]);
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  Café "), "café");
        assert_eq!(normalize_text("SALE!"), "sale");
        assert_eq!(normalize_text("Summer   Sale"), "summer sale");
        assert_eq!(normalize_text("Cafe\u{301}"), "café");
        assert_eq!(normalize_text("\"50% OFF\""), "50% off");
        assert_eq!(normalize_text("!!!"), "");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize_words("Summer Sale, 50% OFF, Aug 12\u{2013}15").len(), 6);
        assert!(tokenize_words("").is_empty());
        assert_eq!(tokenize_words("OPEN"), vec!["open"]);
        assert_eq!(match_tokens("Summer Sale, 50% OFF"), vec!["summer", "sale", "50", "off"]);
    }

    #[test]
    fn symbol_detection() {
        assert!(has_alphanumeric("a-1"));
        assert!(!has_alphanumeric("--**"));
        assert!(!has_alphanumeric("\u{2605}"));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn spans_round_trip_through_ranges(s in "[a-zA-Z '\"\u{2018}\u{2019}\u{201C}\u{201D},.!]{0,60}") {
            for span in extract_spans(&s) {
                let (a, b) = span.char_range;
                prop_assert!(b > a);
                prop_assert_eq!(&s[a..b], span.text.as_str());
                prop_assert!(!span.text.trim().is_empty());
            }
        }

        #[test]
        fn tokens_rejoin_to_normalized(s in "[a-zA-Z0-9 \t\n]{0,40}") {
            prop_assert_eq!(tokenize_words(&s).join(" "), normalize_text(&s));
        }
    }
}
