use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{
    predicate_signature, ActionTerm, Condition, Decision, Literal, Policy, QuantKind, Quantifier, Sort, Target, Term,
    APP_VAR, OWNER_VAR,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax {
        expected: String,
        found: String,
    },
    Sort {
        name: String,
        predicate: String,
        expected: Sort,
    },
    UnboundVariable {
        name: String,
    },
}

/// Error with the byte offset it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Syntax { expected, found } => write!(
                f,
                "syntax error at {}: expected {expected}, found {found}",
                self.position
            ),
            ParseErrorKind::Sort {
                name,
                predicate,
                expected,
            } => write!(
                f,
                "sort error at {}: `{name}` used as a {expected} argument of `{predicate}`",
                self.position
            ),
            ParseErrorKind::UnboundVariable { name } => {
                write!(f, "unbound variable `{name}` at {}", self.position)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Colon,
    And,
    Not,
    Dash,
    Quant(QuantKind),
    Number(String),
    Ident(String),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::And => f.write_str("`&`"),
            Tok::Not => f.write_str("`!`"),
            Tok::Dash => f.write_str("`-`"),
            Tok::Quant(q) => write!(f, "`{}`", q.keyword()),
            Tok::Number(n) => write!(f, "`{n}`"),
            Tok::Ident(i) => write!(f, "`{i}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | '@' | '-')
}

fn lex(input: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        let single = match c {
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            '&' | '∧' => Some(Tok::And),
            '!' | '¬' => Some(Tok::Not),
            '-' => Some(Tok::Dash),
            '∀' => Some(Tok::Quant(QuantKind::Forall)),
            '∃' => Some(Tok::Quant(QuantKind::Exists)),
            '∄' => Some(Tok::Quant(QuantKind::NotExists)),
            _ => None,
        };
        if let Some(tok) = single {
            chars.next();
            out.push((tok, pos));
            continue;
        }
        if c.is_whitespace() {
            chars.next();
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&(_, d)) = chars.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                s.push(d);
                chars.next();
            }
            out.push((Tok::Number(s), pos));
        } else if is_ident_start(c) {
            let mut s = String::new();
            while let Some(&(_, d)) = chars.peek() {
                if !is_ident_continue(d) {
                    break;
                }
                s.push(d);
                chars.next();
            }
            let tok = match s.as_str() {
                "forall" => Tok::Quant(QuantKind::Forall),
                "exists" => Tok::Quant(QuantKind::Exists),
                "notexists" => Tok::Quant(QuantKind::NotExists),
                _ => Tok::Ident(s),
            };
            out.push((tok, pos));
        } else {
            return Err(ParseError {
                position: pos,
                kind: ParseErrorKind::Syntax {
                    expected: "a token".into(),
                    found: format!("`{c}`"),
                },
            });
        }
    }
    out.push((Tok::Eof, input.len()));
    Ok(out)
}

/// Single letter with optional digits: `v`, `y`, `c2`, `A`.
pub(crate) fn is_variable_shaped(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_digit())
}

/// Sort fixed by naming convention: `c`, `c1`, ... are components, capital
/// letters are apps.
fn conventional_sort(name: &str) -> Option<Sort> {
    if !is_variable_shaped(name) {
        return None;
    }
    let first = name.chars().next()?;
    if first == 'c' {
        Some(Sort::Component)
    } else if first.is_ascii_uppercase() {
        Some(Sort::App)
    } else {
        None
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

struct RawLiteral {
    negated: bool,
    predicate: String,
    pred_pos: usize,
    args: [(String, usize); 2],
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.at + offset).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError {
            position: self.pos(),
            kind: ParseErrorKind::Syntax {
                expected: expected.to_string(),
                found: self.peek().to_string(),
            },
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<usize, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            self.error(&tok.to_string())
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.bump().1;
                Ok((s, pos))
            }
            _ => self.error(what),
        }
    }

    /// `{ [!]name, ... }`, non-empty.
    fn name_set(&mut self, what: &str) -> Result<Vec<(String, bool, usize)>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        loop {
            let negated = if *self.peek() == Tok::Not {
                self.bump();
                true
            } else {
                false
            };
            let (name, pos) = self.ident(what)?;
            out.push((name, negated, pos));
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    return Ok(out);
                }
                _ => return self.error("`,` or `}`"),
            }
        }
    }

    fn policy(&mut self) -> Result<Policy, ParseError> {
        self.expect(Tok::LBracket)?;
        let target = match self.peek().clone() {
            Tok::Dash => {
                self.bump();
                Target::Implicit
            }
            Tok::Ident(s) => {
                self.bump();
                if s == OWNER_VAR {
                    Target::Owner
                } else {
                    Target::Named(s)
                }
            }
            _ => return self.error("target (`u`, `-` or a name)"),
        };
        self.expect(Tok::Comma)?;
        let first = self.name_set("action name")?;
        self.expect(Tok::Comma)?;
        let (data, actions) = if *self.peek() == Tok::LBrace {
            if let Some((_, _, pos)) = first.iter().find(|(_, neg, _)| *neg) {
                return Err(ParseError {
                    position: pos.saturating_sub(1),
                    kind: ParseErrorKind::Syntax {
                        expected: "attribute name".into(),
                        found: "`!`".into(),
                    },
                });
            }
            let actions = self.name_set("action name")?;
            self.expect(Tok::Comma)?;
            (Some(first), actions)
        } else {
            (None, first)
        };
        let decision = match self.peek().clone() {
            Tok::Number(n) if n == "0" => Decision::Deny,
            Tok::Number(n) if n == "1" => Decision::Allow,
            _ => return self.error("decision `0` or `1`"),
        };
        self.bump();
        self.expect(Tok::Comma)?;
        self.expect(Tok::LBracket)?;
        let condition = self.condition()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::Eof)?;
        Ok(Policy {
            target,
            data: data.map(|d| d.into_iter().map(|(n, _, _)| n).collect()),
            actions: actions
                .into_iter()
                .map(|(name, negated, _)| ActionTerm { name, negated })
                .collect(),
            decision,
            condition,
        })
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let mut quants: Vec<(QuantKind, String, usize)> = Vec::new();
        if matches!(self.peek(), Tok::Quant(_)) {
            loop {
                let kind = match self.peek() {
                    Tok::Quant(q) => *q,
                    _ => return self.error("quantifier"),
                };
                self.bump();
                let (var, pos) = self.ident("variable")?;
                if !is_variable_shaped(&var) {
                    return Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::Syntax {
                            expected: "variable (a letter, optionally followed by digits)".into(),
                            found: format!("`{var}`"),
                        },
                    });
                }
                if quants.iter().any(|(_, v, _)| *v == var) {
                    return Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::Syntax {
                            expected: "a fresh variable".into(),
                            found: format!("`{var}` quantified twice"),
                        },
                    });
                }
                quants.push((kind, var, pos));
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::Colon => {
                        self.bump();
                        break;
                    }
                    Tok::Quant(_) => {}
                    _ => return self.error("`,` or `:`"),
                }
            }
        }
        let mut raw = vec![self.literal()?];
        while *self.peek() == Tok::And {
            self.bump();
            raw.push(self.literal()?);
        }
        resolve(quants, raw)
    }

    fn literal(&mut self) -> Result<RawLiteral, ParseError> {
        let negated = if *self.peek() == Tok::Not {
            self.bump();
            true
        } else {
            false
        };
        let (predicate, pred_pos) = self.ident("predicate")?;
        self.expect(Tok::LParen)?;
        let a = self.ident("argument")?;
        self.expect(Tok::Comma)?;
        let b = self.ident("argument")?;
        self.expect(Tok::RParen)?;
        Ok(RawLiteral {
            negated,
            predicate,
            pred_pos,
            args: [a, b],
        })
    }
}

/// Classifies identifiers as variables or constants and infers sorts.
fn resolve(quants: Vec<(QuantKind, String, usize)>, raw: Vec<RawLiteral>) -> Result<Condition, ParseError> {
    let quantified: BTreeSet<&str> = quants.iter().map(|(_, v, _)| v.as_str()).collect();
    let mut sorts: BTreeMap<String, Sort> = BTreeMap::new();
    if !quantified.contains(OWNER_VAR) {
        sorts.insert(OWNER_VAR.to_string(), Sort::User);
    }
    if !quantified.contains(APP_VAR) {
        sorts.insert(APP_VAR.to_string(), Sort::App);
    }
    for (_, v, _) in &quants {
        if let Some(s) = conventional_sort(v) {
            sorts.insert(v.clone(), s);
        }
    }
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut literals = Vec::with_capacity(raw.len());
    for lit in raw {
        let sig = predicate_signature(&lit.predicate);
        let mut args = Vec::with_capacity(2);
        for ((name, pos), expected) in lit.args.into_iter().zip(sig) {
            let sort_error = || ParseError {
                position: pos,
                kind: ParseErrorKind::Sort {
                    name: name.clone(),
                    predicate: lit.predicate.clone(),
                    expected,
                },
            };
            let is_var = quantified.contains(name.as_str()) || name == OWNER_VAR || name == APP_VAR;
            if is_var {
                match sorts.get(&name) {
                    Some(s) if *s != expected => return Err(sort_error()),
                    Some(_) => {}
                    None => {
                        sorts.insert(name.clone(), expected);
                    }
                }
                used.insert(name.clone());
                args.push(Term::Var(name));
            } else if is_variable_shaped(&name) {
                return Err(ParseError {
                    position: pos,
                    kind: ParseErrorKind::UnboundVariable { name },
                });
            } else {
                let component_shaped = name.contains('/');
                if component_shaped != (expected == Sort::Component) {
                    return Err(sort_error());
                }
                args.push(Term::Const(name));
            }
        }
        let _ = lit.pred_pos;
        let b = args.pop().expect("two args");
        let a = args.pop().expect("two args");
        literals.push(Literal {
            negated: lit.negated,
            predicate: lit.predicate,
            args: [a, b],
        });
    }
    let mut prefix = Vec::with_capacity(quants.len());
    for (kind, var, pos) in quants {
        if !used.contains(&var) {
            return Err(ParseError {
                position: pos,
                kind: ParseErrorKind::Syntax {
                    expected: "a variable used in the condition".into(),
                    found: format!("unused `{var}`"),
                },
            });
        }
        let sort = sorts[&var];
        prefix.push(Quantifier { kind, var, sort });
    }
    Ok(Condition { prefix, literals })
}

pub fn parse_policy(text: &str) -> Result<Policy, ParseError> {
    let toks = lex(text)?;
    Parser { toks, at: 0 }.policy()
}

/// Parses a bare condition such as `exists v: isfamily(v,u) & installed(v,A)`.
pub fn parse_condition(text: &str) -> Result<Condition, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let c = p.condition()?;
    if *p.peek_at(0) != Tok::Eof {
        return p.error("end of input");
    }
    Ok(c)
}
