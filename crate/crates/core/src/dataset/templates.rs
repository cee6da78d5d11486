//! Rule templates for the eleven Boolean-algebra categories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{parse_expr, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCategory {
    Identity,
    Domination,
    Idempotent,
    DoubleNegation,
    ExcludedMiddle,
    Contradiction,
    Commutative,
    Associative,
    Distributive,
    DeMorgan,
    Absorption,
}

impl RuleCategory {
    pub const ALL: [RuleCategory; 11] = [
        RuleCategory::Identity,
        RuleCategory::Domination,
        RuleCategory::Idempotent,
        RuleCategory::DoubleNegation,
        RuleCategory::ExcludedMiddle,
        RuleCategory::Contradiction,
        RuleCategory::Commutative,
        RuleCategory::Associative,
        RuleCategory::Distributive,
        RuleCategory::DeMorgan,
        RuleCategory::Absorption,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            RuleCategory::Identity => "identity",
            RuleCategory::Domination => "domination",
            RuleCategory::Idempotent => "idempotent",
            RuleCategory::DoubleNegation => "double_negation",
            RuleCategory::ExcludedMiddle => "excluded_middle",
            RuleCategory::Contradiction => "contradiction",
            RuleCategory::Commutative => "commutative",
            RuleCategory::Associative => "associative",
            RuleCategory::Distributive => "distributive",
            RuleCategory::DeMorgan => "de_morgan",
            RuleCategory::Absorption => "absorption",
        }
    }

    /// The law as a pair of equivalent formulas.
    pub fn law(self) -> Vec<(Expr, Expr)> {
        let p = |s: &str| parse_expr(s).expect("law literal parses");
        let laws: &[(&str, &str)] = match self {
            RuleCategory::Identity => &[("A and True", "A"), ("A or False", "A")],
            RuleCategory::Domination => &[("A and False", "False"), ("A or True", "True")],
            RuleCategory::Idempotent => &[("A and A", "A"), ("A or A", "A")],
            RuleCategory::DoubleNegation => &[("¬(¬A)", "A")],
            RuleCategory::ExcludedMiddle => &[("A or ¬A", "True")],
            RuleCategory::Contradiction => &[("A and ¬A", "False")],
            RuleCategory::Commutative => &[("A and B", "B and A"), ("A or B", "B or A")],
            RuleCategory::Associative => &[
                ("(A and B) and C", "A and (B and C)"),
                ("(A or B) or C", "A or (B or C)"),
            ],
            RuleCategory::Distributive => &[
                ("A and (B or C)", "(A and B) or (A and C)"),
                ("A or (B and C)", "(A or B) and (A or C)"),
            ],
            RuleCategory::DeMorgan => &[("¬(A and B)", "¬A or ¬B"), ("¬(A or B)", "¬A and ¬B")],
            RuleCategory::Absorption => &[("A and (A or B)", "A"), ("A or (A and B)", "A")],
        };
        laws.iter().map(|(l, r)| (p(l), p(r))).collect()
    }
}

impl fmt::Display for RuleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for RuleCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        RuleCategory::ALL
            .into_iter()
            .find(|r| r.slug() == norm || r.slug().replace('_', "") == norm.replace('_', ""))
            .ok_or_else(|| Error::Config(format!("unknown rule category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    OneHop,
    TwoHop,
}

impl Depth {
    pub const ALL: [Depth; 2] = [Depth::OneHop, Depth::TwoHop];

    pub fn short(self) -> &'static str {
        match self {
            Depth::OneHop => "1h",
            Depth::TwoHop => "2h",
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Depth::OneHop => "one_hop",
            Depth::TwoHop => "two_hop",
        })
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "one_hop" | "onehop" | "1h" | "1" => Ok(Depth::OneHop),
            "two_hop" | "twohop" | "2h" | "2" => Ok(Depth::TwoHop),
            other => Err(Error::Config(format!("unknown depth {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FactKind {
    /// The clause states a truth value that the assignment supplies.
    Free,
    /// The clause defines the variable by an expression over earlier facts.
    Derived(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactSlot {
    pub var: char,
    pub kind: FactKind,
}

/// A parameterized prompt: fact clauses followed by a query expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTemplate {
    pub category: RuleCategory,
    pub depth: Depth,
    /// Index within the category/depth template list; 0 is the canonical form.
    pub variant: usize,
    pub facts: Vec<FactSlot>,
    pub query: Expr,
    /// Wrap the query in an extra pair of parentheses when rendering.
    pub query_parens: bool,
}

impl RuleTemplate {
    pub fn free_vars(&self) -> Vec<char> {
        self.facts
            .iter()
            .filter(|f| f.kind == FactKind::Free)
            .map(|f| f.var)
            .collect()
    }

    pub fn free_fact_indices(&self) -> Vec<usize> {
        self.facts
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FactKind::Free)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks the depth-specific shape constraints.
    pub fn validate(&self) -> Result<()> {
        let derived: Vec<&FactSlot> = self.facts.iter().filter(|f| f.kind != FactKind::Free).collect();
        match self.depth {
            Depth::OneHop if !derived.is_empty() => Err(Error::Config(format!(
                "{} one-hop template {} has derived facts",
                self.category, self.variant
            ))),
            Depth::TwoHop if !derived.iter().any(|f| self.query.free_vars().contains(&f.var)) => {
                Err(Error::Config(format!(
                    "{} two-hop template {} never queries a derived fact",
                    self.category, self.variant
                )))
            }
            _ => Ok(()),
        }
    }
}

/// True when the source text is wrapped in one redundant pair of parentheses.
fn has_outer_parens(src: &str) -> bool {
    let s = src.trim();
    if !s.starts_with('(') || !s.ends_with(')') {
        return false;
    }
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 && i + 1 < s.len() {
                    return false;
                }
            }
            _ => {}
        }
    }
    true
}

fn one_hop_sources(c: RuleCategory) -> &'static [&'static str] {
    match c {
        RuleCategory::Identity => &["A and True", "A or False", "True and A", "False or A"],
        RuleCategory::Domination => &["A and False", "A or True", "False and A", "True or A"],
        RuleCategory::Idempotent => &["A and A", "A or A"],
        RuleCategory::DoubleNegation => &["(¬(¬A))"],
        RuleCategory::ExcludedMiddle => &["A or ¬A"],
        RuleCategory::Contradiction => &["A and ¬A"],
        RuleCategory::Commutative => &["A and B", "B and A", "A or B", "B or A"],
        RuleCategory::Associative => &["(A and B) and C", "A and (B and C)", "(A or B) or C", "A or (B or C)"],
        RuleCategory::Distributive => &[
            "A and (B or C)",
            "(A and B) or (A and C)",
            "A or (B and C)",
            "(A or B) and (A or C)",
        ],
        RuleCategory::DeMorgan => &["(¬A or ¬B)", "¬(A and B)", "(¬A and ¬B)", "¬(A or B)"],
        RuleCategory::Absorption => &["A and (A or B)", "A or (A and B)"],
    }
}

/// `(derived expression, queries)` for the second hop; the derived variable is
/// the letter after the rule's free facts.
fn two_hop_sources(c: RuleCategory) -> &'static [(&'static str, &'static [&'static str])] {
    const ONE_VAR_QUERIES: &[&str] = &["B and C", "B or C"];
    const TWO_VAR_QUERIES: &[&str] = &["C and D", "C or D"];
    match c {
        RuleCategory::Identity => &[
            ("A and True", ONE_VAR_QUERIES),
            ("A or False", ONE_VAR_QUERIES),
            ("True and A", ONE_VAR_QUERIES),
            ("False or A", ONE_VAR_QUERIES),
        ],
        RuleCategory::Domination => &[
            ("A and False", ONE_VAR_QUERIES),
            ("A or True", ONE_VAR_QUERIES),
            ("False and A", ONE_VAR_QUERIES),
            ("True or A", ONE_VAR_QUERIES),
        ],
        RuleCategory::Idempotent => &[("A and A", ONE_VAR_QUERIES), ("A or A", ONE_VAR_QUERIES)],
        RuleCategory::DoubleNegation => &[("¬(¬A)", ONE_VAR_QUERIES)],
        RuleCategory::ExcludedMiddle => &[("A or ¬A", ONE_VAR_QUERIES)],
        RuleCategory::Contradiction => &[("A and ¬A", ONE_VAR_QUERIES)],
        RuleCategory::Commutative => &[
            ("A and B", TWO_VAR_QUERIES),
            ("B and A", TWO_VAR_QUERIES),
            ("A or B", TWO_VAR_QUERIES),
            ("B or A", TWO_VAR_QUERIES),
        ],
        RuleCategory::Associative => &[("A and B", &["C and D", "D and C"]), ("A or B", &["C or D", "D or C"])],
        RuleCategory::Distributive => &[("A or B", &["D and C", "C and D"]), ("A and B", &["D or C", "C or D"])],
        RuleCategory::DeMorgan => &[
            ("¬(A and B)", TWO_VAR_QUERIES),
            ("¬A or ¬B", TWO_VAR_QUERIES),
            ("¬(A or B)", TWO_VAR_QUERIES),
            ("¬A and ¬B", TWO_VAR_QUERIES),
        ],
        RuleCategory::Absorption => &[("A and (A or B)", TWO_VAR_QUERIES), ("A or (A and B)", TWO_VAR_QUERIES)],
    }
}

fn parse_static(src: &str) -> Expr {
    parse_expr(src).unwrap_or_else(|e| panic!("template literal {src:?}: {e}"))
}

/// All templates of one category at one depth, canonical form first.
pub fn templates_for(category: RuleCategory, depth: Depth) -> Vec<RuleTemplate> {
    let free = |v: char| FactSlot {
        var: v,
        kind: FactKind::Free,
    };
    match depth {
        Depth::OneHop => one_hop_sources(category)
            .iter()
            .enumerate()
            .map(|(variant, src)| {
                let query = parse_static(src);
                RuleTemplate {
                    category,
                    depth,
                    variant,
                    facts: query.free_vars().into_iter().map(free).collect(),
                    query,
                    query_parens: has_outer_parens(src),
                }
            })
            .collect(),
        Depth::TwoHop => {
            let mut out = Vec::new();
            for (derived_src, queries) in two_hop_sources(category) {
                let derived = parse_static(derived_src);
                let inputs = derived.free_vars();
                let derived_var = (b'A' + inputs.len() as u8) as char;
                let extra_var = (b'A' + inputs.len() as u8 + 1) as char;
                let mut facts: Vec<FactSlot> = inputs.iter().copied().map(free).collect();
                facts.push(FactSlot {
                    var: derived_var,
                    kind: FactKind::Derived(derived.clone()),
                });
                facts.push(free(extra_var));
                for q in *queries {
                    out.push(RuleTemplate {
                        category,
                        depth,
                        variant: out.len(),
                        facts: facts.clone(),
                        query: parse_static(q),
                        query_parens: has_outer_parens(q),
                    });
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::equivalence_check;

    #[test]
    fn every_template_is_well_formed() {
        for c in RuleCategory::ALL {
            for d in Depth::ALL {
                let ts = templates_for(c, d);
                assert!(!ts.is_empty());
                for t in ts {
                    t.validate().unwrap();
                    let known: Vec<char> = t.facts.iter().map(|f| f.var).collect();
                    assert!(t.query.free_vars().iter().all(|v| known.contains(v)), "{c} {d}");
                    assert!(known.iter().all(|v| "ABCD".contains(*v)));
                }
            }
        }
    }

    #[test]
    fn laws_hold() {
        for c in RuleCategory::ALL {
            for (l, r) in c.law() {
                assert!(equivalence_check(&l, &r).unwrap(), "{c}");
            }
        }
    }

    #[test]
    fn parsing_names() {
        assert_eq!("De Morgan".parse::<RuleCategory>().unwrap(), RuleCategory::DeMorgan);
        assert_eq!("double-negation".parse::<RuleCategory>().unwrap(), RuleCategory::DoubleNegation);
        assert_eq!("excludedmiddle".parse::<RuleCategory>().unwrap(), RuleCategory::ExcludedMiddle);
        assert!("modus ponens".parse::<RuleCategory>().is_err());
        assert_eq!("2h".parse::<Depth>().unwrap(), Depth::TwoHop);
    }

    #[test]
    fn outer_paren_detection() {
        assert!(has_outer_parens("(¬A or ¬B)"));
        assert!(has_outer_parens("(¬(¬A))"));
        assert!(!has_outer_parens("(A and B) or (A and C)"));
        assert!(!has_outer_parens("A and (B or C)"));
    }

    #[test]
    fn one_hop_templates_reject_derived_facts() {
        let mut t = templates_for(RuleCategory::Identity, Depth::OneHop).remove(0);
        t.facts.push(FactSlot {
            var: 'B',
            kind: FactKind::Derived(Expr::var('A')),
        });
        assert!(t.validate().is_err());
    }
}
