//! Hand-written lexer and recursive-descent parser for `.npl` programs and queries.
//!
//! Grammar (`%` starts a comment that runs to the end of the line):
//!
//! ```text
//! program   := statement*
//! statement := prob "::" atom (";" prob "::" atom)* [":-" "true"] "."
//!            | atom [":-" body] "."
//! body      := "true" | literal ("," literal)*
//! literal   := ["!" | "\+"] atom
//! atom      := IDENT "(" [arg ("," arg)*] ")"
//! arg       := IDENT | STRING | NUMBER
//!
//! query     := atom ["|" formula] ["."]
//! formula   := conj ("|" conj)*
//! conj      := unary (("&" | ",") unary)*
//! unary     := ("!" | "\+") unary | "(" formula ")" | "true" | atom
//! ```
//!
//! Inside rules and queries a bare identifier argument is a variable; quoted
//! strings and numbers are constants. Inside facts and choices every argument
//! is a constant.

use std::collections::HashMap;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{location}: syntax error: {message}")]
    Syntax { location: Location, message: String },
    #[error("{location}: predicate `{predicate}` used with arity {found}, but arity {expected} elsewhere")]
    ArityMismatch {
        location: Location,
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("{location}: probability {value} is outside [0, 1]")]
    ProbabilityOutOfRange { location: Location, value: f64 },
    #[error("{location}: duplicate tuple {relation}({args}) in probabilistic block")]
    DuplicateTuple {
        location: Location,
        relation: String,
        args: String,
    },
}

impl ParseError {
    pub fn location(&self) -> Location {
        match self {
            ParseError::Syntax { location, .. }
            | ParseError::ArityMismatch { location, .. }
            | ParseError::ProbabilityOutOfRange { location, .. }
            | ParseError::DuplicateTuple { location, .. } => *location,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(String),
    ColonColon,
    Implies,
    LParen,
    RParen,
    Comma,
    Semi,
    Dot,
    Bar,
    Amp,
    Bang,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::ColonColon => "`::`".into(),
            Tok::Implies => "`:-`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Bar => "`|`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(source: &str) -> Result<Vec<(Tok, Location)>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let syntax = |line, column, message: String| ParseError::Syntax {
        location: Location { line, column },
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let loc = Location { line, column: col };
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                out.push((Tok::LParen, loc));
                advance(1, &mut i, &mut col);
            }
            ')' => {
                out.push((Tok::RParen, loc));
                advance(1, &mut i, &mut col);
            }
            ',' => {
                out.push((Tok::Comma, loc));
                advance(1, &mut i, &mut col);
            }
            ';' => {
                out.push((Tok::Semi, loc));
                advance(1, &mut i, &mut col);
            }
            '|' => {
                out.push((Tok::Bar, loc));
                advance(1, &mut i, &mut col);
            }
            '&' => {
                out.push((Tok::Amp, loc));
                advance(1, &mut i, &mut col);
            }
            '!' => {
                out.push((Tok::Bang, loc));
                advance(1, &mut i, &mut col);
            }
            '\\' if chars.get(i + 1) == Some(&'+') => {
                out.push((Tok::Bang, loc));
                advance(2, &mut i, &mut col);
            }
            ':' => match chars.get(i + 1) {
                Some(':') => {
                    out.push((Tok::ColonColon, loc));
                    advance(2, &mut i, &mut col);
                }
                Some('-') => {
                    out.push((Tok::Implies, loc));
                    advance(2, &mut i, &mut col);
                }
                _ => return Err(syntax(line, col, "expected `::` or `:-` after `:`".into())),
            },
            '.' => {
                out.push((Tok::Dot, loc));
                advance(1, &mut i, &mut col);
            }
            '"' | '\'' => {
                let quote = c;
                let mut s = String::new();
                let mut j = i + 1;
                let mut closed = false;
                while j < chars.len() {
                    match chars[j] {
                        '\\' if j + 1 < chars.len() => {
                            s.push(match chars[j + 1] {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                            j += 2;
                        }
                        '\n' => break,
                        ch if ch == quote => {
                            closed = true;
                            j += 1;
                            break;
                        }
                        ch => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                if !closed {
                    return Err(syntax(line, col, "unterminated string literal".into()));
                }
                out.push((Tok::Str(s), loc));
                advance(j - i, &mut i, &mut col);
            }
            c if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                // A dot is part of the number only when a digit follows it;
                // otherwise it terminates the statement.
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                out.push((Tok::Number(chars[i..j].iter().collect()), loc));
                advance(j - i, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                out.push((Tok::Ident(chars[i..j].iter().collect()), loc));
                advance(j - i, &mut i, &mut col);
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
    }
    out.push((Tok::Eof, Location { line, column: col }));
    Ok(out)
}

#[derive(Debug, Clone)]
enum RawArg {
    Ident(String),
    Quoted(String),
    Number(String),
}

#[derive(Debug, Clone)]
struct RawAtom {
    predicate: String,
    args: Vec<RawArg>,
    location: Location,
}

impl RawAtom {
    /// Rule/query reading: bare identifiers are variables.
    fn into_logical(self) -> Atom {
        let args = self
            .args
            .into_iter()
            .map(|a| match a {
                RawArg::Ident(s) => Term::Var(s),
                RawArg::Quoted(s) | RawArg::Number(s) => Term::Const(s),
            })
            .collect();
        Atom::new(self.predicate, args)
    }

    /// Fact reading: every argument is a constant.
    fn into_ground(self) -> Vec<String> {
        self.args
            .into_iter()
            .map(|a| match a {
                RawArg::Ident(s) | RawArg::Quoted(s) | RawArg::Number(s) => s,
            })
            .collect()
    }
}

struct Parser {
    toks: Vec<(Tok, Location)>,
    pos: usize,
}

impl Parser {
    fn new(source: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(source)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.toks.len() - 1);
        &self.toks[idx].0
    }

    fn loc(&self) -> Location {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Location) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            location: self.loc(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<Location, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            self.error(format!(
                "expected {}, found {}",
                tok.describe(),
                self.peek().describe()
            ))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn atom(&mut self) -> Result<RawAtom, ParseError> {
        let location = self.loc();
        let predicate = match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                name
            }
            other => return self.error(format!("expected predicate name, found {}", other.describe())),
        };
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let arg = match self.peek().clone() {
                    Tok::Ident(s) => RawArg::Ident(s),
                    Tok::Str(s) => RawArg::Quoted(s),
                    Tok::Number(s) => RawArg::Number(s),
                    other => {
                        return self.error(format!("expected argument, found {}", other.describe()))
                    }
                };
                self.bump();
                args.push(arg);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(RawAtom {
            predicate,
            args,
            location,
        })
    }

    fn probability(&mut self) -> Result<(f64, Location), ParseError> {
        let location = self.loc();
        match self.peek().clone() {
            Tok::Number(s) => {
                self.bump();
                let value: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    location,
                    message: format!("invalid probability literal `{s}`"),
                })?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(ParseError::ProbabilityOutOfRange { location, value });
                }
                Ok((value, location))
            }
            other => self.error(format!("expected probability, found {}", other.describe())),
        }
    }

    fn is_true_keyword(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == "true") && *self.peek_at(1) != Tok::LParen
    }

    fn statement(&mut self, builder: &mut ProgramBuilder) -> Result<(), ParseError> {
        if matches!(self.peek(), Tok::Number(_)) {
            return self.probabilistic_statement(builder);
        }
        let head = self.atom()?;
        if self.eat(&Tok::Dot) {
            let location = head.location;
            let relation = head.predicate.clone();
            builder.fact(relation, head.into_ground(), 1.0, location)?;
            return Ok(());
        }
        self.expect(Tok::Implies)?;
        if self.is_true_keyword() {
            self.bump();
            self.expect(Tok::Dot)?;
            let location = head.location;
            let relation = head.predicate.clone();
            builder.fact(relation, head.into_ground(), 1.0, location)?;
            return Ok(());
        }
        let mut body = Vec::new();
        loop {
            let negated = self.eat(&Tok::Bang);
            let atom = self.atom()?;
            builder.note_arity(&atom)?;
            body.push(Literal {
                atom: atom.into_logical(),
                negated,
            });
            if self.eat(&Tok::Dot) {
                break;
            }
            if !self.eat(&Tok::Comma) && !self.eat(&Tok::Amp) {
                return self.error(format!(
                    "expected `,` or `.` in rule body, found {}",
                    self.peek().describe()
                ));
            }
        }
        builder.note_arity(&head)?;
        let location = head.location;
        builder.program.rules.push(DeterministicRule {
            head: head.into_logical(),
            body,
            location,
        });
        Ok(())
    }

    fn probabilistic_statement(&mut self, builder: &mut ProgramBuilder) -> Result<(), ParseError> {
        let start = self.loc();
        let mut heads = Vec::new();
        loop {
            let (p, _) = self.probability()?;
            self.expect(Tok::ColonColon)?;
            let atom = self.atom()?;
            heads.push((p, atom));
            if !self.eat(&Tok::Semi) {
                break;
            }
        }
        if self.eat(&Tok::Implies) {
            if !self.is_true_keyword() {
                return self.error(
                    "probabilistic rules must have the body `true`; use a deterministic rule instead",
                );
            }
            self.bump();
        }
        self.expect(Tok::Dot)?;
        if heads.len() == 1 {
            let (p, atom) = heads.pop().expect("one head");
            let location = atom.location;
            let relation = atom.predicate.clone();
            return builder.fact(relation, atom.into_ground(), p, location);
        }
        let relation = heads[0].1.predicate.clone();
        let mut tuples: Vec<ProbTuple> = Vec::with_capacity(heads.len());
        for (p, atom) in heads {
            if atom.predicate != relation {
                return Err(ParseError::Syntax {
                    location: atom.location,
                    message: format!(
                        "all heads of a probabilistic choice must use one relation (`{relation}`), found `{}`",
                        atom.predicate
                    ),
                });
            }
            builder.note_arity(&atom)?;
            let location = atom.location;
            let args = atom.into_ground();
            if tuples.iter().any(|t| t.args == args) {
                return Err(ParseError::DuplicateTuple {
                    location,
                    relation,
                    args: args.join(", "),
                });
            }
            tuples.push(ProbTuple {
                args,
                probability: p,
                location,
            });
        }
        builder.program.choices.push(ProbabilisticChoiceBlock {
            relation,
            tuples,
            location: start,
        });
        Ok(())
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        self.formula_with(&mut |p| Ok(Formula::Leaf(p.atom()?.into_logical())))
    }

    fn formula_with<L>(
        &mut self,
        leaf: &mut dyn FnMut(&mut Parser) -> Result<Formula<L>, ParseError>,
    ) -> Result<Formula<L>, ParseError> {
        let mut items = vec![self.conjunction(leaf)?];
        while self.eat(&Tok::Bar) {
            items.push(self.conjunction(leaf)?);
        }
        Ok(if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Formula::Or(items)
        })
    }

    fn conjunction<L>(
        &mut self,
        leaf: &mut dyn FnMut(&mut Parser) -> Result<Formula<L>, ParseError>,
    ) -> Result<Formula<L>, ParseError> {
        let mut items = vec![self.unary(leaf)?];
        while self.eat(&Tok::Amp) || self.eat(&Tok::Comma) {
            items.push(self.unary(leaf)?);
        }
        Ok(if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Formula::And(items)
        })
    }

    fn unary<L>(
        &mut self,
        leaf: &mut dyn FnMut(&mut Parser) -> Result<Formula<L>, ParseError>,
    ) -> Result<Formula<L>, ParseError> {
        if self.eat(&Tok::Bang) {
            return Ok(Formula::Not(Box::new(self.unary(leaf)?)));
        }
        if self.eat(&Tok::LParen) {
            let inner = self.formula_with(leaf)?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        if self.is_true_keyword() {
            self.bump();
            return Ok(Formula::True);
        }
        leaf(self)
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        self.eat(&Tok::Dot);
        if *self.peek() != Tok::Eof {
            return self.error(format!("unexpected {} after query", self.peek().describe()));
        }
        Ok(())
    }
}

struct ProgramBuilder {
    program: Program,
    arities: HashMap<String, usize>,
    fact_index: HashMap<String, usize>,
}

impl ProgramBuilder {
    fn note_arity(&mut self, atom: &RawAtom) -> Result<(), ParseError> {
        let found = atom.args.len();
        match self.arities.get(&atom.predicate) {
            Some(&expected) if expected != found => Err(ParseError::ArityMismatch {
                location: atom.location,
                predicate: atom.predicate.clone(),
                expected,
                found,
            }),
            Some(_) => Ok(()),
            None => {
                self.arities.insert(atom.predicate.clone(), found);
                Ok(())
            }
        }
    }

    fn fact(
        &mut self,
        relation: String,
        args: Vec<String>,
        probability: f64,
        location: Location,
    ) -> Result<(), ParseError> {
        self.note_arity(&RawAtom {
            predicate: relation.clone(),
            args: args.iter().cloned().map(RawArg::Quoted).collect(),
            location,
        })?;
        let idx = match self.fact_index.get(&relation) {
            Some(&i) => i,
            None => {
                self.program.facts.push(ProbabilisticFactBlock {
                    relation: relation.clone(),
                    tuples: Vec::new(),
                });
                self.fact_index
                    .insert(relation.clone(), self.program.facts.len() - 1);
                self.program.facts.len() - 1
            }
        };
        let block = &mut self.program.facts[idx];
        if block.tuples.iter().any(|t| t.args == args) {
            return Err(ParseError::DuplicateTuple {
                location,
                relation,
                args: args.join(", "),
            });
        }
        block.tuples.push(ProbTuple {
            args,
            probability,
            location,
        });
        Ok(())
    }
}

/// Parses a program in the `.npl` dialect.
pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let mut parser = Parser::new(source)?;
    let mut builder = ProgramBuilder {
        program: Program::default(),
        arities: HashMap::new(),
        fact_index: HashMap::new(),
    };
    while *parser.peek() != Tok::Eof {
        parser.statement(&mut builder)?;
    }
    Ok(builder.program)
}

/// Parses `Target(args) [| condition]`, with an optional trailing `.`.
pub fn parse_query(source: &str) -> Result<Query, ParseError> {
    let mut parser = Parser::new(source)?;
    let target = parser.atom()?.into_logical();
    let condition = if parser.eat(&Tok::Bar) {
        Some(parser.formula()?)
    } else {
        None
    };
    parser.finish()?;
    Ok(Query { target, condition })
}

/// Parses a bare condition formula over atoms (no target).
pub fn parse_formula(source: &str) -> Result<Formula, ParseError> {
    let mut parser = Parser::new(source)?;
    let f = parser.formula()?;
    parser.finish()?;
    Ok(f)
}

/// Parses a Boolean formula whose leaves are term names, e.g.
/// `insula & (speech | !"working memory")`.
pub fn parse_term_formula(source: &str) -> Result<Formula<String>, ParseError> {
    let mut parser = Parser::new(source)?;
    let f = parser.formula_with(&mut |p: &mut Parser| match p.peek().clone() {
        Tok::Ident(s) | Tok::Str(s) | Tok::Number(s) => {
            p.bump();
            Ok(Formula::Leaf(s))
        }
        other => p.error(format!("expected term name, found {}", other.describe())),
    })?;
    parser.finish()?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_deterministic_rule() {
        let p = parse_program("Activation(v) :- SelectedStudy(s), VoxelReported(v, s).").unwrap();
        assert_eq!(p.rules.len(), 1);
        let r = &p.rules[0];
        assert_eq!(r.head, Atom::new("Activation", vec![Term::var("v")]));
        assert_eq!(
            r.body,
            vec![
                Literal::positive(Atom::new("SelectedStudy", vec![Term::var("s")])),
                Literal::positive(Atom::new(
                    "VoxelReported",
                    vec![Term::var("v"), Term::var("s")]
                )),
            ]
        );
        assert_eq!(r.location, Location { line: 1, column: 1 });
    }

    #[test]
    fn parses_choice_block() {
        let p = parse_program("0.5::SelectedStudy(s1); 0.5::SelectedStudy(s2).").unwrap();
        assert!(p.facts.is_empty());
        assert_eq!(p.choices.len(), 1);
        let c = &p.choices[0];
        assert_eq!(c.relation, "SelectedStudy");
        assert_eq!(c.tuples.len(), 2);
        assert!(c.tuples.iter().all(|t| t.probability == 0.5));
        assert_eq!(c.tuples[1].args, vec!["s2".to_string()]);
    }

    #[test]
    fn parses_probabilistic_fact() {
        let p = parse_program("0.9::TermInStudy(insula, s1).").unwrap();
        assert_eq!(p.facts.len(), 1);
        let b = &p.facts[0];
        assert_eq!(b.relation, "TermInStudy");
        assert_eq!(b.tuples.len(), 1);
        assert_eq!(b.tuples[0].probability, 0.9);
        assert_eq!(b.tuples[0].args, vec!["insula", "s1"]);
    }

    #[test]
    fn facts_of_one_relation_share_a_block() {
        let src = "0.1::R(a).\n% comment\nR(b).\n0.3::S(a) :- true.\n0.2::R(c).";
        let p = parse_program(src).unwrap();
        assert_eq!(p.facts.len(), 2);
        assert_eq!(p.facts[0].tuples.len(), 3);
        assert_eq!(p.facts[0].tuples[1].probability, 1.0);
        assert_eq!(p.facts[0].tuples[2].location.line, 5);
    }

    #[test]
    fn probability_out_of_range() {
        let err = parse_program("A(x) :- B(x).\n1.3::R(a).").unwrap_err();
        assert!(matches!(
            err,
            ParseError::ProbabilityOutOfRange { value, location } if value == 1.3 && location.line == 2
        ));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let err = parse_program("R(a, b).\nQ(x) :- R(x).").unwrap_err();
        match err {
            ParseError::ArityMismatch {
                predicate,
                expected,
                found,
                location,
            } => {
                assert_eq!(predicate, "R");
                assert_eq!((expected, found), (2, 1));
                assert_eq!(location, Location { line: 2, column: 9 });
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_program("A(x) :- B(x)\nC(y) :- D(y).").unwrap_err();
        assert_eq!(err.location(), Location { line: 2, column: 1 });
        let err = parse_program("A(x) :- B(x) $").unwrap_err();
        assert_eq!(err.location(), Location { line: 1, column: 14 });
    }

    #[test]
    fn duplicate_fact_rejected() {
        let err = parse_program("0.2::R(a).\n0.3::R(a).").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateTuple { .. }));
    }

    #[test]
    fn probabilistic_rule_with_body_rejected() {
        assert!(parse_program("0.3::A(x) :- B(x).").is_err());
    }

    #[test]
    fn numbers_and_statement_dots() {
        let p = parse_program("1::R(1).\n0.25::R(2.5).").unwrap();
        assert_eq!(p.facts[0].tuples[0].probability, 1.0);
        assert_eq!(p.facts[0].tuples[1].args, vec!["2.5"]);
    }

    #[test]
    fn parses_queries() {
        let q = parse_query("Activation(v) | TermAssociation(\"insula\") & TermAssociation('speech')")
            .unwrap();
        assert_eq!(q.kind(), QueryKind::Conditional);
        assert_eq!(q.free_variables(), vec!["v"]);
        match q.condition.unwrap() {
            Formula::And(items) => assert_eq!(items.len(), 2),
            other => panic!("{other:?}"),
        }
        let q = parse_query("Activation(v).").unwrap();
        assert_eq!(q.kind(), QueryKind::Succ);
        let q = parse_query("A(v) | B(x) | !C(x), D(x)").unwrap();
        assert!(matches!(q.condition, Some(Formula::Or(ref v)) if v.len() == 2));
    }

    #[test]
    fn parses_term_formulas() {
        let f = parse_term_formula("(t1 | t2) & (t3 | \"working memory\")").unwrap();
        assert_eq!(f.to_string(), "(t1 | t2) & (t3 | working memory)");
        let f = parse_term_formula("insula & !speech").unwrap();
        assert!(matches!(f, Formula::And(ref v) if matches!(v[1], Formula::Not(_))));
    }
}
