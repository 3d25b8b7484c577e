//! Model formulas of the form `[response] ~ rhs`.
//!
//! Supported right-hand sides: `1`, `0`, `.`, identifiers, `+`, `-`,
//! `*` (crossing: `a*b` is `a + b + a:b`), `:` (interaction) and
//! parentheses. `-1` and `+0` remove the intercept. Identifiers that are
//! not plain names can be written in backticks.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    /// Every column except the response.
    Dot,
    /// A main effect (one variable) or an interaction of several.
    Vars(Vec<String>),
}

impl Term {
    fn degree(&self) -> usize {
        match self {
            Term::Dot => 1,
            Term::Vars(v) => v.len(),
        }
    }

    fn key(&self) -> Vec<&str> {
        match self {
            Term::Dot => vec!["."],
            Term::Vars(v) => {
                let mut k: Vec<&str> = v.iter().map(String::as_str).collect();
                k.sort_unstable();
                k
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub response: Option<String>,
    pub intercept: bool,
    pub terms: Vec<Term>,
}

impl Formula {
    pub fn intercept_only() -> Self {
        Formula {
            response: None,
            intercept: true,
            terms: Vec::new(),
        }
    }

    /// Variables referenced on the right-hand side (excluding `.`).
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            if let Term::Vars(v) = t {
                for name in v {
                    if !out.contains(&name.as_str()) {
                        out.push(name);
                    }
                }
            }
        }
        out
    }

    pub fn has_dot(&self) -> bool {
        self.terms.contains(&Term::Dot)
    }
}

fn quote_ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == '.')
        && name != "."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if plain {
        name.to_string()
    } else {
        format!("`{name}`")
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = &self.response {
            write!(f, "{} ", quote_ident(r))?;
        }
        f.write_str("~ ")?;
        let terms: Vec<String> = self
            .terms
            .iter()
            .map(|t| match t {
                Term::Dot => ".".to_string(),
                Term::Vars(v) => v.iter().map(|s| quote_ident(s)).collect::<Vec<_>>().join(":"),
            })
            .collect();
        match (terms.is_empty(), self.intercept) {
            (true, true) => f.write_str("1"),
            (true, false) => f.write_str("0"),
            (false, true) => f.write_str(&terms.join(" + ")),
            (false, false) => write!(f, "{} - 1", terms.join(" + ")),
        }
    }
}

impl FromStr for Formula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Dot,
    Tilde,
    Plus,
    Minus,
    Star,
    Colon,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '~' => {
                out.push((pos, Tok::Tilde));
                i += 1
            }
            '+' => {
                out.push((pos, Tok::Plus));
                i += 1
            }
            '-' => {
                out.push((pos, Tok::Minus));
                i += 1
            }
            '*' => {
                out.push((pos, Tok::Star));
                i += 1
            }
            ':' => {
                out.push((pos, Tok::Colon));
                i += 1
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1
            }
            '`' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j].1 != '`' {
                    j += 1;
                }
                if j == chars.len() {
                    return Err(Error::Formula {
                        position: pos,
                        message: "unterminated backtick".into(),
                    });
                }
                let name: String = chars[start..j].iter().map(|(_, c)| *c).collect();
                out.push((pos, Tok::Ident(name)));
                i = j + 1;
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].1.is_ascii_digit() {
                    j += 1;
                }
                let num: String = chars[i..j].iter().map(|(_, c)| *c).collect();
                out.push((pos, Tok::Number(num)));
                i = j;
            }
            c if c.is_alphabetic() || c == '_' || c == '.' => {
                let mut j = i;
                while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_' || chars[j].1 == '.') {
                    j += 1;
                }
                let name: String = chars[i..j].iter().map(|(_, c)| *c).collect();
                if name == "." {
                    out.push((pos, Tok::Dot));
                } else {
                    out.push((pos, Tok::Ident(name)));
                }
                i = j;
            }
            other => {
                return Err(Error::Formula {
                    position: pos,
                    message: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

/// Result of parsing a sub-expression: a set of terms, or a bare number.
enum Node {
    Terms(Vec<Term>),
    Number(usize, String),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Formula {
            position: self.pos(),
            message: message.into(),
        })
    }

    /// sum := ['-'] product (('+' | '-') product)*
    fn sum(&mut self, top: bool) -> Result<(Vec<Term>, Option<bool>)> {
        let mut terms: Vec<Term> = Vec::new();
        let mut intercept: Option<bool> = None;
        let mut negate = false;
        if self.peek() == Some(&Tok::Minus) {
            negate = true;
            self.at += 1;
        }
        loop {
            let node = self.product()?;
            match node {
                Node::Number(pos, n) => {
                    if !top {
                        return Err(Error::Formula {
                            position: pos,
                            message: "intercept literal inside parentheses".into(),
                        });
                    }
                    match (n.as_str(), negate) {
                        ("1", false) | ("0", true) => intercept = Some(true),
                        ("0", false) | ("1", true) => intercept = Some(false),
                        _ => {
                            return Err(Error::Formula {
                                position: pos,
                                message: format!("unexpected number '{n}'"),
                            })
                        }
                    }
                }
                Node::Terms(ts) => {
                    for t in ts {
                        if negate {
                            let k = t.key();
                            terms.retain(|x| x.key() != k);
                        } else if !terms.iter().any(|x| x.key() == t.key()) {
                            terms.push(t);
                        }
                    }
                }
            }
            match self.peek() {
                Some(Tok::Plus) => {
                    negate = false;
                    self.at += 1;
                }
                Some(Tok::Minus) => {
                    negate = true;
                    self.at += 1;
                }
                _ => break,
            }
        }
        Ok((terms, intercept))
    }

    /// product := inter ('*' inter)*
    fn product(&mut self) -> Result<Node> {
        let first = self.inter()?;
        if self.peek() != Some(&Tok::Star) {
            return Ok(first);
        }
        let mut acc = self.as_terms(first)?;
        while self.peek() == Some(&Tok::Star) {
            self.at += 1;
            let rhs = self.inter()?;
            let rhs = self.as_terms(rhs)?;
            let mut out = acc.clone();
            for t in rhs.iter().cloned() {
                push_unique(&mut out, t);
            }
            for t in cross(&acc, &rhs, self.pos())? {
                push_unique(&mut out, t);
            }
            acc = out;
        }
        Ok(Node::Terms(acc))
    }

    /// inter := factor (':' factor)*
    fn inter(&mut self) -> Result<Node> {
        let first = self.factor()?;
        if self.peek() != Some(&Tok::Colon) {
            return Ok(first);
        }
        let mut acc = self.as_terms(first)?;
        while self.peek() == Some(&Tok::Colon) {
            self.at += 1;
            let rhs = self.factor()?;
            let rhs = self.as_terms(rhs)?;
            acc = cross(&acc, &rhs, self.pos())?;
        }
        Ok(Node::Terms(acc))
    }

    fn factor(&mut self) -> Result<Node> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Ident(name)) => {
                self.at += 1;
                Ok(Node::Terms(vec![Term::Vars(vec![name])]))
            }
            Some(Tok::Dot) => {
                self.at += 1;
                Ok(Node::Terms(vec![Term::Dot]))
            }
            Some(Tok::Number(n)) => {
                self.at += 1;
                Ok(Node::Number(pos, n))
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let (terms, _) = self.sum(false)?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.at += 1;
                Ok(Node::Terms(terms))
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of formula"),
        }
    }

    fn as_terms(&self, node: Node) -> Result<Vec<Term>> {
        match node {
            Node::Terms(t) => Ok(t),
            Node::Number(position, n) => Err(Error::Formula {
                position,
                message: format!("number '{n}' cannot be crossed or interacted"),
            }),
        }
    }
}

fn push_unique(out: &mut Vec<Term>, t: Term) {
    if !out.iter().any(|x| x.key() == t.key()) {
        out.push(t);
    }
}

fn cross(a: &[Term], b: &[Term], pos: usize) -> Result<Vec<Term>> {
    let mut out = Vec::new();
    for ta in a {
        for tb in b {
            match (ta, tb) {
                (Term::Vars(x), Term::Vars(y)) => {
                    let mut v = x.clone();
                    for name in y {
                        if !v.contains(name) {
                            v.push(name.clone());
                        }
                    }
                    push_unique(&mut out, Term::Vars(v));
                }
                _ => {
                    return Err(Error::Formula {
                        position: pos,
                        message: "'.' cannot appear in an interaction".into(),
                    })
                }
            }
        }
    }
    Ok(out)
}

/// Parses a formula.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let toks = tokenize(text)?;
    let tilde = toks
        .iter()
        .position(|(_, t)| *t == Tok::Tilde)
        .ok_or_else(|| Error::Formula {
            position: 0,
            message: "missing '~'".into(),
        })?;
    let response = match &toks[..tilde] {
        [] => None,
        [(_, Tok::Ident(name))] => Some(name.clone()),
        [(p, _), ..] => {
            return Err(Error::Formula {
                position: *p,
                message: "left-hand side must be a single column name".into(),
            })
        }
    };
    if tilde + 1 == toks.len() {
        return Err(Error::Formula {
            position: text.len(),
            message: "empty right-hand side".into(),
        });
    }
    let mut p = Parser {
        toks,
        at: tilde + 1,
        end: text.len(),
    };
    let (mut terms, intercept) = p.sum(true)?;
    if p.at != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    terms.sort_by_key(Term::degree);
    Ok(Formula {
        response,
        intercept: intercept.unwrap_or(true),
        terms,
    })
}
