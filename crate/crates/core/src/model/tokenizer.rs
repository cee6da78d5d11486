//! Tokenizer contract and the symbol-level tokenizer used by the toy backend.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::logic::{render_value, ValueStyle};

/// One token with the byte span it covers in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<Token>>;
    fn vocab_size(&self) -> usize;
    fn piece(&self, id: u32) -> Option<&str>;
}

/// Ids of the two answer tokens (leading-space forms).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AnswerTokens {
    pub true_id: u32,
    pub false_id: u32,
    pub true_form: String,
    pub false_form: String,
}

impl AnswerTokens {
    pub fn id_for(&self, value: bool) -> u32 {
        if value {
            self.true_id
        } else {
            self.false_id
        }
    }
}

/// Resolves the leading-space single-token forms of True/False for `style`.
pub fn answer_token_ids(tok: &dyn Tokenizer, style: ValueStyle) -> Result<AnswerTokens> {
    let single = |value: bool| -> Result<(u32, String)> {
        let form = format!(" {}", render_value(value, style));
        let ids = tok.encode(&form)?;
        match ids.as_slice() {
            [t] => Ok((t.id, form)),
            _ => Err(Error::MultiTokenAnswer(form)),
        }
    };
    let (true_id, true_form) = single(true)?;
    let (false_id, false_form) = single(false)?;
    if true_id == false_id {
        return Err(Error::MultiTokenAnswer(format!(
            "{true_form:?} and {false_form:?} share id {true_id}"
        )));
    }
    Ok(AnswerTokens {
        true_id,
        false_id,
        true_form,
        false_form,
    })
}

/// Word/symbol tokenizer with GPT-style leading-space pieces.
///
/// Text is pre-split into an optional single space followed by either a run
/// of ASCII letters or one non-space character. Each chunk maps to one
/// vocabulary piece when present; otherwise it is split greedily by longest
/// matching prefix.
#[derive(Debug, Clone)]
pub struct SymbolTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

/// Pieces with pinned ids; the answer forms sit at 7 and 8.
const PINNED: [&str; 24] = [
    ",", " is", " (", "(", ")", "¬", " ¬", " True", " False", " T", " F", " and", " or", " not",
    "True", "False", "is", "and", "or", "not", ".", " .", "?", " ?",
];

impl SymbolTokenizer {
    /// Vocabulary covering the prompt language over the letters A to Z.
    pub fn corpus_default() -> Self {
        let mut pieces: Vec<String> = PINNED.iter().map(|s| s.to_string()).collect();
        for c in 'A'..='Z' {
            pieces.push(c.to_string());
            pieces.push(format!(" {c}"));
        }
        Self::from_pieces(pieces)
    }

    /// Builds a tokenizer from an explicit piece list; duplicates keep the first id.
    pub fn from_pieces<I, P>(pieces: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: Into<String>,
    {
        let mut out = SymbolTokenizer {
            pieces: Vec::new(),
            index: HashMap::new(),
        };
        for p in pieces {
            let p = p.into();
            if !out.index.contains_key(&p) {
                out.index.insert(p.clone(), out.pieces.len() as u32);
                out.pieces.push(p);
            }
        }
        out
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    fn split_chunk(&self, text: &str, start: usize, out: &mut Vec<Token>) -> Result<()> {
        let chunk = &text[start..];
        if let Some(id) = self.id_of(chunk) {
            out.push(Token {
                id,
                start,
                end: text.len(),
            });
            return Ok(());
        }
        let mut pos = 0;
        while pos < chunk.len() {
            let rest = &chunk[pos..];
            let best = rest
                .char_indices()
                .map(|(i, c)| i + c.len_utf8())
                .rev()
                .find_map(|len| self.id_of(&rest[..len]).map(|id| (len, id)));
            let Some((len, id)) = best else {
                return Err(Error::Tokenization {
                    offset: start + pos,
                    piece: rest.to_string(),
                });
            };
            out.push(Token {
                id,
                start: start + pos,
                end: start + pos + len,
            });
            pos += len;
        }
        Ok(())
    }
}

impl Tokenizer for SymbolTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < text.len() {
            let start = i;
            if bytes[i] == b' ' {
                i += 1;
            }
            if i >= text.len() || bytes[i] == b' ' {
                return Err(Error::Tokenization {
                    offset: start,
                    piece: text[start..i.min(text.len())].to_string(),
                });
            }
            if bytes[i].is_ascii_alphabetic() {
                while i < text.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
            } else {
                let c = text[i..].chars().next().expect("in bounds");
                i += c.len_utf8();
            }
            let mut chunk_tokens = Vec::new();
            self.split_chunk(&text[..i], start, &mut chunk_tokens)?;
            out.extend(chunk_tokens);
        }
        Ok(out)
    }

    fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pieces(tok: &SymbolTokenizer, text: &str) -> Vec<String> {
        tok.encode(text)
            .unwrap()
            .iter()
            .map(|t| tok.piece(t.id).unwrap().to_string())
            .collect()
    }

    #[test]
    fn encodes_prompt_with_spans() {
        let tok = SymbolTokenizer::corpus_default();
        let text = "A is True, B is False, (¬A or ¬B) is";
        assert_eq!(
            pieces(&tok, text),
            [
                "A", " is", " True", ",", " B", " is", " False", ",", " (", "¬", "A", " or", " ¬",
                "B", ")", " is"
            ]
        );
        for t in tok.encode(text).unwrap() {
            assert_eq!(&text[t.start..t.end], tok.piece(t.id).unwrap());
        }
    }

    #[test]
    fn answer_ids_fixture() {
        let tok = SymbolTokenizer::corpus_default();
        let long = answer_token_ids(&tok, ValueStyle::Long).unwrap();
        assert_eq!((long.true_id, long.false_id), (7, 8));
        let short = answer_token_ids(&tok, ValueStyle::Short).unwrap();
        assert_eq!((short.true_id, short.false_id), (tok.id_of(" T").unwrap(), tok.id_of(" F").unwrap()));
    }

    #[test]
    fn split_answer_is_rejected() {
        let tok = SymbolTokenizer::from_pieces([" True", " Fa", "lse", " T", " F"]);
        match answer_token_ids(&tok, ValueStyle::Long) {
            Err(Error::MultiTokenAnswer(form)) => assert_eq!(form, " False"),
            other => panic!("{other:?}"),
        }
        assert!(answer_token_ids(&tok, ValueStyle::Short).is_ok());
    }

    #[test]
    fn unknown_text_fails() {
        let tok = SymbolTokenizer::corpus_default();
        assert!(matches!(tok.encode("A is maybe"), Err(Error::Tokenization { .. })));
        assert!(tok.encode("A  is").is_err());
    }
}
