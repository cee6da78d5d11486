//! Propositional formulas: AST, evaluation, enumeration and equivalence.
//!
//! This is the symbolic ground truth every dataset answer is computed from.

mod parse;
pub(crate) mod render;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::{parse_expr, Parser};
pub use render::{render_expr, render_value, ExprPiece, NegationStyle, PieceKind, RenderStyle, ValueStyle};

/// Propositional formula over single-letter variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Const(bool),
    Var(char),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: char) -> Self {
        Expr::Var(name)
    }

    pub fn not(e: Expr) -> Self {
        Expr::Not(Box::new(e))
    }

    pub fn and(l: Expr, r: Expr) -> Self {
        Expr::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Expr, r: Expr) -> Self {
        Expr::Or(Box::new(l), Box::new(r))
    }

    /// Free variables in alphabetical order.
    pub fn free_vars(&self) -> Vec<char> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<char>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Not(e) => e.collect_vars(out),
            Expr::And(l, r) | Expr::Or(l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Expr::And(..) | Expr::Or(..))
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Var(_))
    }

    /// Replaces every occurrence of `name` with `with`.
    pub fn substitute(&self, name: char, with: &Expr) -> Expr {
        match self {
            Expr::Var(v) if *v == name => with.clone(),
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Not(e) => Expr::not(e.substitute(name, with)),
            Expr::And(l, r) => Expr::and(l.substitute(name, with), r.substitute(name, with)),
            Expr::Or(l, r) => Expr::or(l.substitute(name, with), r.substitute(name, with)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Not(e) => 1 + e.depth(),
            Expr::And(l, r) | Expr::Or(l, r) => 1 + l.depth().max(r.depth()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_expr(self, RenderStyle::default(), false))
    }
}

/// Declared set of variable names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet(Vec<char>);

impl Alphabet {
    pub fn new(letters: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut seen = Vec::new();
        for c in letters {
            if !c.is_ascii_uppercase() || c == 'T' || c == 'F' {
                return Err(Error::Config(format!(
                    "variable name {c:?} must be an uppercase letter other than T/F"
                )));
            }
            if seen.contains(&c) {
                return Err(Error::DuplicateVariable(c));
            }
            seen.push(c);
        }
        Ok(Alphabet(seen))
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn letters(&self) -> &[char] {
        &self.0
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet(vec!['A', 'B', 'C', 'D'])
    }
}

/// Truth-value bindings for variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment(BTreeMap<char, bool>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: char, value: bool) -> Self {
        self.0.insert(var, value);
        self
    }

    pub fn set(&mut self, var: char, value: bool) {
        self.0.insert(var, value);
    }

    pub fn get(&self, var: char) -> Option<bool> {
        self.0.get(&var).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, bool)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Compact "A=T,B=F" form used in ids and logs.
    pub fn code(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k}{}", if *v { 'T' } else { 'F' }))
            .collect::<Vec<_>>()
            .join("")
    }
}

impl FromIterator<(char, bool)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (char, bool)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

/// Evaluates `e` under `a` with standard Boolean semantics.
pub fn eval_expr(e: &Expr, a: &Assignment) -> Result<bool> {
    Ok(match e {
        Expr::Const(b) => *b,
        Expr::Var(v) => a.get(*v).ok_or(Error::UnboundVariable(*v))?,
        Expr::Not(x) => !eval_expr(x, a)?,
        Expr::And(l, r) => {
            // Both sides are evaluated so unbound variables surface regardless of short-circuiting.
            let (l, r) = (eval_expr(l, a)?, eval_expr(r, a)?);
            l && r
        }
        Expr::Or(l, r) => {
            let (l, r) = (eval_expr(l, a)?, eval_expr(r, a)?);
            l || r
        }
    })
}

/// All `2^n` assignments to `vars`, True before False, leftmost variable most significant.
pub fn enumerate_assignments(vars: &[char]) -> Result<Vec<Assignment>> {
    if vars.is_empty() {
        return Err(Error::Config("cannot enumerate an empty variable list".into()));
    }
    for (i, v) in vars.iter().enumerate() {
        if vars[..i].contains(v) {
            return Err(Error::DuplicateVariable(*v));
        }
    }
    let n = vars.len();
    Ok((0..1usize << n)
        .map(|row| {
            vars.iter()
                .enumerate()
                // bit set = False, so row 0 is all-True
                .map(|(i, v)| (*v, row >> (n - 1 - i) & 1 == 0))
                .collect()
        })
        .collect())
}

/// Brute-force semantic equivalence over the union of free variables.
pub fn equivalence_check(e1: &Expr, e2: &Expr) -> Result<bool> {
    let mut vars = e1.free_vars();
    vars.extend(e2.free_vars());
    vars.sort_unstable();
    vars.dedup();
    if vars.is_empty() {
        return Ok(eval_expr(e1, &Assignment::new())? == eval_expr(e2, &Assignment::new())?);
    }
    for a in enumerate_assignments(&vars)? {
        if eval_expr(e1, &a)? != eval_expr(e2, &a)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(c: char) -> Expr {
        Expr::var(c)
    }

    #[test]
    fn eval_examples() {
        let a = Assignment::new().with('A', true).with('B', false);
        let demorgan = Expr::or(Expr::not(v('A')), Expr::not(v('B')));
        assert!(eval_expr(&demorgan, &a).unwrap());

        let ident = Expr::and(v('A'), Expr::Const(true));
        assert!(eval_expr(&ident, &Assignment::new().with('A', true)).unwrap());

        let dist = Expr::and(v('A'), Expr::or(v('B'), v('C')));
        let a = Assignment::new().with('A', true).with('B', false).with('C', true);
        assert!(eval_expr(&dist, &a).unwrap());
    }

    #[test]
    fn unbound_variable_is_named() {
        let e = Expr::and(v('A'), v('C'));
        let err = eval_expr(&e, &Assignment::new().with('A', false)).unwrap_err();
        assert!(matches!(err, Error::UnboundVariable('C')));
    }

    #[test]
    fn enumeration_order() {
        let one = enumerate_assignments(&['A']).unwrap();
        assert_eq!(one, vec![Assignment::new().with('A', true), Assignment::new().with('A', false)]);

        let two = enumerate_assignments(&['A', 'B']).unwrap();
        assert_eq!(two.len(), 4);
        assert_eq!(two[0], Assignment::new().with('A', true).with('B', true));
        assert_eq!(two[1], Assignment::new().with('A', true).with('B', false));
        assert_eq!(two[2], Assignment::new().with('A', false).with('B', true));

        assert_eq!(enumerate_assignments(&['A', 'B', 'C']).unwrap().len(), 8);
    }

    #[test]
    fn enumeration_rejects_duplicates() {
        assert!(matches!(
            enumerate_assignments(&['A', 'B', 'A']),
            Err(Error::DuplicateVariable('A'))
        ));
    }

    #[test]
    fn equivalence_examples() {
        let nand = Expr::not(Expr::and(v('A'), v('B')));
        let dm = Expr::or(Expr::not(v('A')), Expr::not(v('B')));
        assert!(equivalence_check(&nand, &dm).unwrap());

        let absorb = Expr::and(v('A'), Expr::or(v('A'), v('B')));
        assert!(equivalence_check(&absorb, &v('A')).unwrap());

        assert!(!equivalence_check(&Expr::and(v('A'), v('B')), &Expr::or(v('A'), v('B'))).unwrap());
    }

    #[test]
    fn substitution_inlines_derived_variable() {
        let q = Expr::and(v('B'), v('C'));
        let inlined = q.substitute('B', &Expr::and(v('A'), Expr::Const(true)));
        assert_eq!(inlined.to_string(), "(A and True) and C");
    }

    #[test]
    fn alphabet_rejects_constant_letters() {
        assert!(Alphabet::new(['A', 'T']).is_err());
        assert!(Alphabet::new(['A', 'B', 'A']).is_err());
        assert_eq!(Alphabet::default().letters(), &['A', 'B', 'C', 'D']);
    }
}
