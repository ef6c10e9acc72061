//! Token vocabularies with fixed reserved ids and optional language tags.

use std::collections::HashMap;

use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    /// Optional language tag per token (None for reserved/untagged).
    tags: Vec<Option<String>>,
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new(), tags: Vec::new() };
        for tok in RESERVED {
            v.push_token(tok, None);
        }
        v
    }

    fn push_token(&mut self, token: &str, tag: Option<String>) -> u32 {
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        self.tags.push(tag);
        id
    }

    /// Insert a token if new; returns its id either way.
    pub fn add(&mut self, token: &str) -> u32 {
        self.add_tagged(token, None)
    }

    pub fn add_tagged(&mut self, token: &str, tag: Option<&str>) -> u32 {
        match self.index.get(token) {
            Some(&id) => id,
            None => self.push_token(token, tag.map(str::to_string)),
        }
    }

    /// Build from token sequences, insertion-ordered (deterministic).
    pub fn from_sentences(sentences: &[Vec<String>]) -> Self {
        let mut v = Self::new();
        for sent in sentences {
            for tok in sent {
                v.add(tok);
            }
        }
        v
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tag(&self, id: u32) -> Option<&str> {
        self.tags[id as usize].as_deref()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// All tokens in id order, including the reserved prefix.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuild the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index =
            self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Mark a token with its language: `token<delim>lang`.
pub fn mark_token(token: &str, lang: &str, delim: char) -> String {
    format!("{token}{delim}{lang}")
}

/// Union vocabulary over languages with a language marker appended to
/// every token, so identical surface forms in different languages get
/// distinct ids and no embedding sharing happens on the surface form.
pub fn build_multilingual_vocab(
    corpora: &[(String, Vec<Vec<String>>)],
    delim: char,
) -> Result<Vocabulary> {
    for (lang, sentences) in corpora {
        if lang.contains(delim) {
            return Err(Error::Input(format!(
                "language code `{lang}` contains the marker delimiter `{delim}`"
            )));
        }
        for sent in sentences {
            if let Some(tok) = sent.iter().find(|t| t.contains(delim)) {
                return Err(Error::Input(format!(
                    "token `{tok}` in language `{lang}` contains the marker delimiter `{delim}`"
                )));
            }
        }
    }
    let mut v = Vocabulary::new();
    for (lang, sentences) in corpora {
        for sent in sentences {
            for tok in sent {
                v.add_tagged(&mark_token(tok, lang, delim), Some(lang));
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new();
        assert_eq!(v.id_of("<pad>"), Some(PAD_ID));
        assert_eq!(v.id_of("<bos>"), Some(BOS_ID));
        assert_eq!(v.id_of("<eos>"), Some(EOS_ID));
        assert_eq!(v.id_of("<unk>"), Some(UNK_ID));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn ids_are_bijective_over_tokens() {
        let mut v = Vocabulary::new();
        let a = v.add("alpha");
        let b = v.add("beta");
        assert_ne!(a, b);
        assert_eq!(v.add("alpha"), a);
        assert_eq!(v.token(a), "alpha");
        assert_eq!(v.id_or_unk("gamma"), UNK_ID);
    }

    #[test]
    fn marker_is_appended() {
        let corpora = vec![("es".to_string(), vec![tokenize("la casa")])];
        let v = build_multilingual_vocab(&corpora, '|').unwrap();
        assert!(v.contains("casa|es"));
        assert!(!v.contains("casa"));
        assert_eq!(v.tag(v.id_of("casa|es").unwrap()), Some("es"));
    }

    #[test]
    fn same_surface_in_two_languages_gets_two_ids() {
        let corpora = vec![
            ("es".to_string(), vec![tokenize("a casa")]),
            ("pt".to_string(), vec![tokenize("a casa")]),
        ];
        let v = build_multilingual_vocab(&corpora, '|').unwrap();
        let es = v.id_of("a|es").unwrap();
        let pt = v.id_of("a|pt").unwrap();
        assert_ne!(es, pt);
    }

    #[test]
    fn total_size_is_sum_of_disjoint_vocabs_plus_reserved() {
        let corpora = vec![
            ("es".to_string(), vec![tokenize("uno dos tres uno")]),
            ("fr".to_string(), vec![tokenize("un deux")]),
        ];
        let v = build_multilingual_vocab(&corpora, '|').unwrap();
        assert_eq!(v.len(), 4 + 3 + 2);
    }

    #[test]
    fn delimiter_collision_is_an_error() {
        let corpora = vec![("es".to_string(), vec![tokenize("bad|token")])];
        assert!(matches!(build_multilingual_vocab(&corpora, '|'), Err(Error::Input(_))));
    }
}
