//! The one tokenizer shared by the TF-IDF baselines, the fusion model
//! vocabulary and BLEU: lowercase, then split on whitespace and at every
//! boundary between alphanumeric runs and punctuation. Each punctuation
//! character becomes its own token.

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}
