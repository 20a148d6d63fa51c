//! Keyword extraction for building search queries from image captions.

/// Source of query keywords for a piece of text. Plug a named-entity
/// tagger in here; [`CapitalizedPhrases`] is the dependency-free fallback.
pub trait KeywordProvider: Send + Sync {
    fn keywords(&self, text: &str) -> Vec<String>;
}

/// Runs of capitalized words, e.g. "New South Wales" or "Obama". A
/// capitalized word at the start of a sentence counts only when the next
/// word is capitalized too, and common function words never do.
#[derive(Debug, Clone, Copy, Default)]
pub struct CapitalizedPhrases {
    /// Keep at most this many phrases (0 = all).
    pub max: usize,
}

const STOPWORDS: [&str; 24] = [
    "A", "An", "The", "In", "On", "At", "Of", "For", "And", "But", "Or", "To", "From", "By", "With", "As", "After",
    "Before", "During", "This", "That", "These", "Those", "It",
];

fn is_cap(w: &str) -> bool {
    w.chars().next().is_some_and(char::is_uppercase)
}

impl KeywordProvider for CapitalizedPhrases {
    fn keywords(&self, text: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |phrase: &mut Vec<&str>| {
            if !phrase.is_empty() {
                let p = phrase.join(" ");
                if !out.contains(&p) {
                    out.push(p);
                }
                phrase.clear();
            }
        };
        for sentence in text.split(['.', '!', '?', ';', ':', '\n']) {
            // a comma or bracket ends a phrase, marked here by ""
            let words: Vec<&str> = sentence
                .split_inclusive([',', '(', ')', '"'])
                .flat_map(|part| part.split_whitespace().chain(std::iter::once("")))
                .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
                .map(|w| w.strip_suffix("'s").unwrap_or(w))
                .collect();
            let first = words.iter().position(|w| !w.is_empty());
            let mut phrase: Vec<&str> = Vec::new();
            for (i, w) in words.iter().enumerate() {
                let starts_sentence = Some(i) == first;
                let next_cap = words.get(i + 1).is_some_and(|n| is_cap(n));
                let counts = is_cap(w)
                    && !STOPWORDS.contains(w)
                    && (!starts_sentence || next_cap)
                    && w.chars().any(char::is_alphabetic);
                if counts {
                    phrase.push(w);
                } else {
                    push(&mut phrase);
                }
            }
            push(&mut phrase);
        }
        if self.max > 0 {
            out.truncate(self.max);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_place_names() {
        let k = CapitalizedPhrases::default();
        assert_eq!(
            k.keywords("Firefighters battle a bushfire near Batemans Bay in New South Wales, Australia."),
            ["Batemans Bay", "New South Wales", "Australia"]
        );
        assert_eq!(k.keywords("Protesters march. The Kremlin's walls"), ["Kremlin"]);
        assert!(k.keywords("no capitals here").is_empty());
        assert_eq!(CapitalizedPhrases { max: 1 }.keywords("in Paris and Rome").len(), 1);
    }
}
