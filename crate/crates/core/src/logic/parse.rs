//! Recursive-descent parser for the prompt expression grammar.
//!
//! ```text
//! or   := and ("or" and)*
//! and  := not ("and" not)*
//! not  := ("¬" | "not") not | atom
//! atom := "True" | "False" | "T" | "F" | VAR | "(" or ")"
//! ```
//!
//! `∧`/`∨` are accepted as synonyms for `and`/`or`. Binary operators associate
//! to the left.

use super::{Alphabet, Expr};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Not,
    And,
    Or,
    Const(bool),
    Var(char),
}

/// Parses with the default `{A, B, C, D}` alphabet.
pub fn parse_expr(text: &str) -> Result<Expr> {
    Parser::new(Alphabet::default()).parse(text)
}

#[derive(Debug, Clone)]
pub struct Parser {
    alphabet: Alphabet,
}

impl Parser {
    pub fn new(alphabet: Alphabet) -> Self {
        Parser { alphabet }
    }

    pub fn parse(&self, text: &str) -> Result<Expr> {
        if text.trim().is_empty() {
            return Err(Error::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let toks = self.lex(text)?;
        let mut cursor = Cursor {
            toks: &toks,
            pos: 0,
            end: text.len(),
        };
        let e = cursor.or()?;
        match cursor.peek() {
            None => Ok(e),
            Some((off, t)) => Err(Error::Syntax {
                offset: off,
                message: format!("unexpected {t:?} after complete expression"),
            }),
        }
    }

    fn lex(&self, text: &str) -> Result<Vec<(usize, Tok)>> {
        let mut out = Vec::new();
        let mut it = text.char_indices().peekable();
        while let Some(&(off, c)) = it.peek() {
            match c {
                c if c.is_whitespace() => {
                    it.next();
                }
                '(' => {
                    out.push((off, Tok::Open));
                    it.next();
                }
                ')' => {
                    out.push((off, Tok::Close));
                    it.next();
                }
                '¬' => {
                    out.push((off, Tok::Not));
                    it.next();
                }
                '∧' => {
                    out.push((off, Tok::And));
                    it.next();
                }
                '∨' => {
                    out.push((off, Tok::Or));
                    it.next();
                }
                c if c.is_ascii_alphabetic() => {
                    let mut word = String::new();
                    while let Some(&(_, c)) = it.peek() {
                        if !c.is_ascii_alphabetic() {
                            break;
                        }
                        word.push(c);
                        it.next();
                    }
                    out.push((off, self.word(off, &word)?));
                }
                other => {
                    return Err(Error::UnknownToken {
                        offset: off,
                        token: other.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    fn word(&self, off: usize, word: &str) -> Result<Tok> {
        Ok(match word {
            "not" => Tok::Not,
            "and" => Tok::And,
            "or" => Tok::Or,
            "True" | "T" => Tok::Const(true),
            "False" | "F" => Tok::Const(false),
            w if w.len() == 1 && w.as_bytes()[0].is_ascii_uppercase() => {
                let c = w.as_bytes()[0] as char;
                if !self.alphabet.contains(c) {
                    return Err(Error::VariableOutsideAlphabet(c));
                }
                Tok::Var(c)
            }
            _ => {
                return Err(Error::UnknownToken {
                    offset: off,
                    token: word.to_string(),
                })
            }
        })
    }
}

struct Cursor<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    end: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<(usize, &Tok)> {
        self.toks.get(self.pos).map(|(o, t)| (*o, t))
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |(o, _)| o)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek().is_some_and(|(_, x)| x == t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<Expr> {
        let mut lhs = self.and()?;
        while self.eat(&Tok::Or) {
            lhs = Expr::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr> {
        let mut lhs = self.not()?;
        while self.eat(&Tok::And) {
            lhs = Expr::and(lhs, self.not()?);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::not(self.not()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        let Some((_, tok)) = self.peek() else {
            return Err(Error::Syntax {
                offset,
                message: "unexpected end of expression".into(),
            });
        };
        let e = match tok.clone() {
            Tok::Const(b) => {
                self.pos += 1;
                Expr::Const(b)
            }
            Tok::Var(v) => {
                self.pos += 1;
                Expr::Var(v)
            }
            Tok::Open => {
                self.pos += 1;
                let inner = self.or()?;
                if !self.eat(&Tok::Close) {
                    return Err(Error::Syntax {
                        offset: self.offset(),
                        message: "expected ')'".into(),
                    });
                }
                inner
            }
            other => {
                return Err(Error::Syntax {
                    offset,
                    message: format!("expected operand, found {other:?}"),
                })
            }
        };
        Ok(e)
    }
}
