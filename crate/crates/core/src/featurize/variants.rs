/// Token budget for the truncated variant (typical tweet length in words).
pub const TRUNCATE_TOKENS: usize = 23;

/// Rule-based text variants, deduplicated in first-occurrence order:
/// original, lowercased, ASCII-punctuation-stripped, whitespace tokens rotated
/// left by a seeded offset in `1..tokens`, and the first 23 tokens.
pub fn generate_variants(text: &str, seed: u64) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let rotated = if tokens.len() >= 2 {
        let offset = 1 + (seed % (tokens.len() as u64 - 1)) as usize;
        let mut t = tokens.clone();
        t.rotate_left(offset);
        t.join(" ")
    } else {
        tokens.join(" ")
    };
    let truncated = tokens[..tokens.len().min(TRUNCATE_TOKENS)].join(" ");
    let candidates = [
        text.to_string(),
        text.to_lowercase(),
        text.chars().filter(|c| !c.is_ascii_punctuation()).collect(),
        rotated,
        truncated,
    ];
    let mut out: Vec<String> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !c.trim().is_empty() && !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        out.push(text.to_string());
    }
    out
}
