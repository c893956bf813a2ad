use std::fmt;

/// Source position (1-based) of a statement or token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// A logical term: a variable or a constant symbol.
///
/// Numeric constants are kept in their literal spelling, so `3` and `3.0`
/// are distinct symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn constant(value: impl Into<String>) -> Self {
        Term::Const(value.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Const(c) => write_constant(f, c, true),
        }
    }
}

/// Writes a constant, quoting it unless it is numeric (or `quote` is false
/// and it is a plain identifier).
pub(crate) fn write_constant(f: &mut fmt::Formatter<'_>, c: &str, quote: bool) -> fmt::Result {
    if is_number(c) || (!quote && is_identifier(c)) {
        f.write_str(c)
    } else {
        f.write_str("\"")?;
        for ch in c.chars() {
            match ch {
                '"' => f.write_str("\\\"")?,
                '\\' => f.write_str("\\\\")?,
                '\n' => f.write_str("\\n")?,
                '\t' => f.write_str("\\t")?,
                _ => write!(f, "{ch}")?,
            }
        }
        f.write_str("\"")
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_') && !matches!(s, "true" | "query")
}

pub(crate) fn is_number(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let mut seen_digit = false;
    let mut seen_dot = false;
    for c in body.chars() {
        match c {
            '0'..='9' => seen_digit = true,
            '.' if !seen_dot => seen_dot = true,
            _ => return false,
        }
    }
    seen_digit && !body.ends_with('.') && !body.starts_with('.')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(Term::as_var)
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{arg}")?;
        }
        f.write_str(")")
    }
}

/// An atom, possibly negated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub atom: Atom,
    pub negated: bool,
}

impl Literal {
    pub fn positive(atom: Atom) -> Self {
        Literal {
            atom,
            negated: false,
        }
    }

    pub fn negative(atom: Atom) -> Self {
        Literal {
            atom,
            negated: true,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        write!(f, "{}", self.atom)
    }
}

/// `Head :- Body.` where the head holds with probability 1 whenever the body does.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicRule {
    pub head: Atom,
    pub body: Vec<Literal>,
    pub location: Location,
}

impl fmt::Display for DeterministicRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} :- ", self.head)?;
        for (i, lit) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{lit}")?;
        }
        f.write_str(".")
    }
}

/// A ground tuple annotated with a probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTuple {
    pub args: Vec<String>,
    pub probability: f64,
    pub location: Location,
}

/// All probabilistic (independent) facts of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticFactBlock {
    pub relation: String,
    pub tuples: Vec<ProbTuple>,
}

/// One probabilistic choice: its tuples are mutually exclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticChoiceBlock {
    pub relation: String,
    pub tuples: Vec<ProbTuple>,
    pub location: Location,
}

fn write_tuple(f: &mut fmt::Formatter<'_>, relation: &str, t: &ProbTuple) -> fmt::Result {
    write!(f, "{}::{}(", format_probability(t.probability), relation)?;
    for (i, a) in t.args.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write_constant(f, a, false)?;
    }
    f.write_str(")")
}

/// Shortest decimal spelling that parses back to the same `f64`.
pub(crate) fn format_probability(p: f64) -> String {
    let s = format!("{p:?}");
    if s.contains('e') {
        // `1e-7` is not a valid literal in the grammar; fall back to a long decimal.
        let mut long = format!("{p:.20}");
        while long.ends_with('0') && !long.ends_with(".0") {
            long.pop();
        }
        long
    } else {
        s
    }
}

impl fmt::Display for ProbabilisticFactBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tuples.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write_tuple(f, &self.relation, t)?;
            f.write_str(".")?;
        }
        Ok(())
    }
}

impl fmt::Display for ProbabilisticChoiceBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tuples.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write_tuple(f, &self.relation, t)?;
        }
        f.write_str(" :- true.")
    }
}

/// Boolean combination of atoms used in query conditions.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula<L = Atom> {
    True,
    Leaf(L),
    Not(Box<Formula<L>>),
    And(Vec<Formula<L>>),
    Or(Vec<Formula<L>>),
}

/// `P[target]` (a SUCC query) or `P[target | condition]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub target: Atom,
    pub condition: Option<Formula>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Succ,
    Conditional,
}

impl Query {
    pub fn succ(target: Atom) -> Self {
        Query {
            target,
            condition: None,
        }
    }

    pub fn conditional(target: Atom, condition: Formula) -> Self {
        Query {
            target,
            condition: Some(condition),
        }
    }

    pub fn kind(&self) -> QueryKind {
        match self.condition {
            None => QueryKind::Succ,
            Some(_) => QueryKind::Conditional,
        }
    }

    /// Variables of the target, in order of first occurrence.
    pub fn free_variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for v in self.target.variables() {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        out
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.target)?;
        if let Some(c) = &self.condition {
            write!(f, " | {c}")?;
        }
        Ok(())
    }
}

impl<L: fmt::Display> Formula<L> {
    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        // precedence: Or = 0, And = 1, Not/leaf = 2
        match self {
            Formula::True => f.write_str("true"),
            Formula::Leaf(l) => write!(f, "{l}"),
            Formula::Not(inner) => {
                f.write_str("!")?;
                inner.fmt_prec(f, 2)
            }
            Formula::And(items) | Formula::Or(items) => {
                let (sep, mine) = match self {
                    Formula::And(_) => (" & ", 1),
                    _ => (" | ", 0),
                };
                if items.is_empty() {
                    return f.write_str(if mine == 1 { "true" } else { "false" });
                }
                let paren = mine < prec;
                if paren {
                    f.write_str("(")?;
                }
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    it.fmt_prec(f, mine + 1)?;
                }
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl<L: fmt::Display> fmt::Display for Formula<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// A parsed program: deterministic rules, independent fact blocks (one per
/// relation) and choice blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub rules: Vec<DeterministicRule>,
    pub facts: Vec<ProbabilisticFactBlock>,
    pub choices: Vec<ProbabilisticChoiceBlock>,
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for block in &self.choices {
            writeln!(f, "{block}")?;
        }
        for block in &self.facts {
            writeln!(f, "{block}")?;
        }
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}
