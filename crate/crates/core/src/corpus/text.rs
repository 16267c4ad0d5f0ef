//! Rule-based sentence splitting and tokenization.

const ABBREVIATIONS: &[&str] = &["mr", "mrs", "dr", "vs", "etc", "e.g", "i.e"];

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "if", "in", "into",
    "is", "it", "its", "of", "on", "or", "so", "that", "the", "their", "then", "there", "these",
    "this", "to", "was", "were", "with",
];

/// Lowercased alphanumeric runs, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn remove_stopwords(tokens: Vec<String>) -> Vec<String> {
    tokens
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// The word (letters, digits and inner dots) that ends right before `end`.
fn word_before(chars: &[(usize, char)], end: usize) -> String {
    let mut start = end;
    while start > 0 {
        let c = chars[start - 1].1;
        if c.is_alphanumeric() || c == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    chars[start..end]
        .iter()
        .map(|&(_, c)| c)
        .collect::<String>()
        .trim_matches('.')
        .to_lowercase()
}

/// Splits review text into sentences.
///
/// A boundary is a run of `.?!` (plus closing quotes/brackets) followed by
/// whitespace and an uppercase letter, or by the end of the text. A period
/// directly followed by a non-space (decimals, "e.g.") never splits, and a
/// period closing a known abbreviation does not split either.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| if i < n { chars[i].0 } else { text.len() };

    let mut sentences = Vec::new();
    let mut push = |s: &str| {
        let s = s.trim();
        if !s.is_empty() {
            sentences.push(s.to_string());
        }
    };

    let mut start = 0usize;
    let mut i = 0usize;
    while i < n {
        let c = chars[i].1;
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < n && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
            j += 1;
        }
        let mut boundary = false;
        if j == n {
            boundary = true;
        } else if chars[j].1.is_whitespace() {
            let mut k = j;
            while k < n && chars[k].1.is_whitespace() {
                k += 1;
            }
            boundary = k == n || chars[k].1.is_uppercase();
        }
        if boundary && j < n && c == '.' && j == i + 1 {
            let word = word_before(&chars, i);
            if ABBREVIATIONS.contains(&word.as_str()) {
                boundary = false;
            }
        }
        if boundary {
            push(&text[byte_at(start)..byte_at(j)]);
            start = j;
        }
        i = j;
    }
    if start < n {
        push(&text[byte_at(start)..]);
    }
    sentences
}
