use unicode_general_category::{get_general_category, GeneralCategory};

pub fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ClosePunctuation
            | ConnectorPunctuation
            | DashPunctuation
            | FinalPunctuation
            | InitialPunctuation
            | OpenPunctuation
            | OtherPunctuation
    )
}

/// Lowercases, splits on Unicode whitespace, then peels leading and trailing
/// punctuation code points off each chunk as single-character tokens.
/// Word-internal punctuation (`don't`) stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let lead = chars.iter().take_while(|c| is_punctuation(**c)).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars
            .iter()
            .rev()
            .take_while(|c| is_punctuation(**c))
            .count();
        out.extend(chars[..lead].iter().map(|c| c.to_string()));
        out.push(chars[lead..chars.len() - trail].iter().collect());
        out.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    out
}

fn is_closing(tok: &str) -> bool {
    let mut cs = tok.chars();
    match (cs.next(), cs.next()) {
        (Some(c), None) if is_punctuation(c) => !matches!(
            get_general_category(c),
            GeneralCategory::OpenPunctuation | GeneralCategory::InitialPunctuation
        ),
        _ => false,
    }
}

fn is_opening(tok: &str) -> bool {
    let mut cs = tok.chars();
    match (cs.next(), cs.next()) {
        (Some(c), None) => matches!(
            get_general_category(c),
            GeneralCategory::OpenPunctuation | GeneralCategory::InitialPunctuation
        ),
        _ => false,
    }
}

/// Joins tokens with single spaces, attaching closing punctuation to the
/// previous token and opening punctuation to the next.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        if !glue_next && !is_closing(tok) {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = is_opening(tok);
    }
    out
}
