//! Surface rendering of formulas and truth values.

use serde::{Deserialize, Serialize};

use super::Expr;

/// How truth values are spelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueStyle {
    #[default]
    Long,
    Short,
}

/// How negation is spelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegationStyle {
    #[default]
    Glyph,
    Word,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderStyle {
    pub values: ValueStyle,
    pub negation: NegationStyle,
}

impl RenderStyle {
    pub fn with_values(values: ValueStyle) -> Self {
        RenderStyle {
            values,
            ..Default::default()
        }
    }
}

pub fn render_value(v: bool, style: ValueStyle) -> &'static str {
    match (v, style) {
        (true, ValueStyle::Long) => "True",
        (false, ValueStyle::Long) => "False",
        (true, ValueStyle::Short) => "T",
        (false, ValueStyle::Short) => "F",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    Open,
    Close,
    Neg,
    Var,
    Const,
    Op,
}

/// One surface symbol of a rendered formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprPiece {
    pub text: &'static str,
    pub kind: PieceKind,
    /// Whether a single space separates this piece from the previous one.
    pub space_before: bool,
}

const VARS: [&str; 26] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P", "Q", "R", "S",
    "T", "U", "V", "W", "X", "Y", "Z",
];

pub(crate) fn var_text(c: char) -> &'static str {
    VARS[(c as u8 - b'A') as usize]
}

/// Splits `e` into surface pieces.
///
/// Binary operands that are themselves binary are always parenthesized, and a
/// negated compound is parenthesized, so grouping is explicit in the text.
pub fn expr_pieces(e: &Expr, style: RenderStyle, outer_parens: bool) -> Vec<ExprPiece> {
    let mut raw = Vec::new();
    if outer_parens {
        raw.push(("(", PieceKind::Open));
    }
    push_pieces(e, style, &mut raw);
    if outer_parens {
        raw.push((")", PieceKind::Close));
    }
    let mut out: Vec<ExprPiece> = Vec::with_capacity(raw.len());
    for (text, kind) in raw {
        let space_before = match out.last() {
            None => false,
            Some(prev) => {
                let glued = prev.kind == PieceKind::Open
                    || (prev.kind == PieceKind::Neg && style.negation == NegationStyle::Glyph);
                !glued && kind != PieceKind::Close
            }
        };
        out.push(ExprPiece {
            text,
            kind,
            space_before,
        });
    }
    out
}

fn push_pieces(e: &Expr, style: RenderStyle, out: &mut Vec<(&'static str, PieceKind)>) {
    match e {
        Expr::Const(b) => out.push((render_value(*b, style.values), PieceKind::Const)),
        Expr::Var(v) => out.push((var_text(*v), PieceKind::Var)),
        Expr::Not(inner) => {
            let neg = match style.negation {
                NegationStyle::Glyph => "¬",
                NegationStyle::Word => "not",
            };
            out.push((neg, PieceKind::Neg));
            group(inner, !inner.is_atom(), style, out);
        }
        Expr::And(l, r) | Expr::Or(l, r) => {
            group(l, l.is_binary(), style, out);
            let op = if matches!(e, Expr::And(..)) { "and" } else { "or" };
            out.push((op, PieceKind::Op));
            group(r, r.is_binary(), style, out);
        }
    }
}

fn group(e: &Expr, parens: bool, style: RenderStyle, out: &mut Vec<(&'static str, PieceKind)>) {
    if parens {
        out.push(("(", PieceKind::Open));
    }
    push_pieces(e, style, out);
    if parens {
        out.push((")", PieceKind::Close));
    }
}

/// Renders `e` as text; `outer_parens` wraps the whole formula.
pub fn render_expr(e: &Expr, style: RenderStyle, outer_parens: bool) -> String {
    let mut s = String::new();
    for p in expr_pieces(e, style, outer_parens) {
        if p.space_before {
            s.push(' ');
        }
        s.push_str(p.text);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::parse_expr;
    use super::*;

    #[test]
    fn values() {
        assert_eq!(render_value(true, ValueStyle::Long), "True");
        assert_eq!(render_value(false, ValueStyle::Short), "F");
        assert_eq!(render_value(true, ValueStyle::Short), "T");
    }

    #[test]
    fn renders_template_surfaces() {
        let s = RenderStyle::default();
        let cases = [
            ("(¬A or ¬B)", true, "(¬A or ¬B)"),
            ("¬(¬A)", true, "(¬(¬A))"),
            ("(A and B) and C", false, "(A and B) and C"),
            ("A and (B or C)", false, "A and (B or C)"),
            ("¬(A and B)", false, "¬(A and B)"),
        ];
        for (src, outer, want) in cases {
            assert_eq!(render_expr(&parse_expr(src).unwrap(), s, outer), want);
        }
        let short = RenderStyle::with_values(ValueStyle::Short);
        assert_eq!(render_expr(&parse_expr("A and True").unwrap(), short, false), "A and T");
        let word = RenderStyle {
            negation: NegationStyle::Word,
            ..Default::default()
        };
        assert_eq!(render_expr(&parse_expr("¬(A or ¬B)").unwrap(), word, false), "not (A or not B)");
    }
}
