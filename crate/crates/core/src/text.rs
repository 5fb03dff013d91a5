//! Word tokenization shared by the mock embedder and the lexical metrics.

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' | '\u{00AB}' | '\u{00BB}' | '\u{2026}' | '\u{2013}' | '\u{2014}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Lowercased whitespace-separated words with leading and trailing
/// punctuation removed. Interior punctuation is kept (`kWh/m²` stays one
/// word) and words that were pure punctuation are dropped.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let trimmed = raw.trim_matches(is_edge_punctuation);
        if trimmed.is_empty() {
            None
        } else {
            Some(trimmed.to_lowercase())
        }
    })
}
