//! Parser for the textual dialect and TSV fact files.
//!
//! ```text
//! .decl edge(2) input
//! .decl reach(2) output
//! reach(X, Y) :- edge(X, Y).
//! reach(X, Z) :- edge(X, Y), reach(Y, Z).   // comments run to end of line
//! ```
//!
//! Identifiers are ASCII; names starting with an uppercase letter or `_` are
//! variables, everything else is a predicate or functor name. Facts are
//! tab-separated decimal integers, one tuple per line.

use std::fmt;

use crate::error::ParseError;
use crate::ir::{Atom, Declaration, Interner, PredKind, Program, Rule, Term};
use crate::storage::Tuple;

/// 1-based source position attached to every parse diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    Dot,
    Turnstile, // :-
    Bang,
    Eq,
    Neq,
    At,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
    file: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, file: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
            file,
        }
    }

    fn span(&self) -> SourceSpan {
        SourceSpan {
            file: self.file.to_string(),
            line: self.line,
            column: self.col,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn tokens(mut self) -> Result<Vec<(Tok, SourceSpan)>, ParseError> {
        let mut out = Vec::new();
        loop {
            // Skip whitespace and // comments.
            loop {
                match self.peek() {
                    Some(c) if c.is_ascii_whitespace() => {
                        self.bump();
                    }
                    Some(b'/') if self.peek2() == Some(b'/') => {
                        while let Some(c) = self.peek() {
                            if c == b'\n' {
                                break;
                            }
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let span = self.span();
            let c = match self.peek() {
                Some(c) => c,
                None => return Ok(out),
            };
            let tok = match c {
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'.' => {
                    self.bump();
                    Tok::Dot
                }
                b'@' => {
                    self.bump();
                    Tok::At
                }
                b'=' => {
                    self.bump();
                    Tok::Eq
                }
                b':' => {
                    self.bump();
                    if self.peek() == Some(b'-') {
                        self.bump();
                        Tok::Turnstile
                    } else {
                        return Err(ParseError {
                            span,
                            message: "expected `:-`".to_string(),
                        });
                    }
                }
                b'!' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Neq
                    } else {
                        Tok::Bang
                    }
                }
                b'-' | b'0'..=b'9' => {
                    let mut s = String::new();
                    if c == b'-' {
                        s.push('-');
                        self.bump();
                        if !matches!(self.peek(), Some(b'0'..=b'9')) {
                            return Err(ParseError {
                                span,
                                message: "expected digits after `-`".to_string(),
                            });
                        }
                    }
                    while let Some(d @ b'0'..=b'9') = self.peek() {
                        s.push(d as char);
                        self.bump();
                    }
                    let n: i64 = s.parse().map_err(|_| ParseError {
                        span: span.clone(),
                        message: format!("integer literal `{s}` out of range"),
                    })?;
                    Tok::Int(n)
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => {
                    return Err(ParseError {
                        span,
                        message: format!("unexpected character `{}`", other as char),
                    })
                }
            };
            out.push((tok, span));
        }
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
    interner: &'a Interner,
    file: String,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn span(&self) -> SourceSpan {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, s)| s.clone())
            .unwrap_or(SourceSpan {
                file: self.file.clone(),
                line: 1,
                column: 1,
            })
    }

    fn end_span(&self) -> SourceSpan {
        self.toks
            .last()
            .map(|(_, s)| s.clone())
            .unwrap_or(SourceSpan {
                file: self.file.clone(),
                line: 1,
                column: 1,
            })
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            span: if self.pos < self.toks.len() {
                self.span()
            } else {
                self.end_span()
            },
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err(format!("expected {what}")))
            }
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut program = Program::default();
        let mut decl_order = 0usize;
        while self.peek().is_some() {
            if self.peek() == Some(&Tok::Dot) {
                self.declaration(&mut program, &mut decl_order)?;
            } else {
                let rule = self.rule(program.rules.len())?;
                program.rules.push(rule);
            }
        }
        // Second pass: every predicate used must be declared. The validator
        // re-checks arities; here we reject unknown names with a span-free
        // message per rule.
        for rule in &program.rules {
            let mut preds: Vec<&str> = vec![&rule.head_pred];
            for atom in &rule.body {
                if let Atom::Pos { pred, .. } | Atom::Neg { pred, .. } = atom {
                    preds.push(pred);
                }
            }
            for pred in preds {
                if !program.declarations.contains_key(pred) {
                    return Err(ParseError {
                        span: SourceSpan {
                            file: self.file.clone(),
                            line: 1,
                            column: 1,
                        },
                        message: format!("undeclared predicate `{pred}`"),
                    });
                }
            }
        }
        Ok(program)
    }

    fn declaration(
        &mut self,
        program: &mut Program,
        decl_order: &mut usize,
    ) -> Result<(), ParseError> {
        self.expect(Tok::Dot, "`.decl`")?;
        match self.bump() {
            Some(Tok::Ident(kw)) if kw == "decl" => {}
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected `decl` after `.`"));
            }
        }
        let name = match self.bump() {
            Some(Tok::Ident(n)) => n,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected predicate name"));
            }
        };
        self.expect(Tok::LParen, "`(`")?;
        let arity = match self.bump() {
            Some(Tok::Int(n)) if n >= 0 => n as usize,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected arity"));
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        let kind = match self.peek() {
            Some(Tok::Ident(k)) if k == "input" => {
                self.bump();
                PredKind::Input
            }
            Some(Tok::Ident(k)) if k == "output" => {
                self.bump();
                PredKind::Output
            }
            _ => PredKind::Internal,
        };
        if program.declarations.contains_key(&name) {
            return Err(self.err(format!("duplicate declaration of `{name}`")));
        }
        program.declarations.insert(
            name,
            Declaration {
                arity,
                kind,
                order: *decl_order,
            },
        );
        *decl_order += 1;
        Ok(())
    }

    fn rule(&mut self, id: usize) -> Result<Rule, ParseError> {
        let (head_pred, head_args) = self.pred_atom()?;
        let mut body = Vec::new();
        if self.peek() == Some(&Tok::Turnstile) {
            self.bump();
            loop {
                body.push(self.atom()?);
                match self.peek() {
                    Some(Tok::Comma) => {
                        self.bump();
                    }
                    _ => break,
                }
            }
        }
        self.expect(Tok::Dot, "`.` at end of rule")?;
        Ok(Rule {
            id,
            head_pred,
            head_args,
            body,
        })
    }

    fn pred_atom(&mut self) -> Result<(String, Vec<Term>), ParseError> {
        let name = match self.bump() {
            Some(Tok::Ident(n)) => n,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected predicate name"));
            }
        };
        if is_var_name(&name) {
            return Err(self.err(format!("`{name}` looks like a variable, not a predicate")));
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.term()?);
                match self.peek() {
                    Some(Tok::Comma) => {
                        self.bump();
                    }
                    _ => break,
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok((name, args))
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        match self.peek() {
            Some(Tok::Bang) => {
                self.bump();
                let (pred, args) = self.pred_atom()?;
                Ok(Atom::Neg { pred, args })
            }
            Some(Tok::Ident(name)) if !is_var_name(name) => {
                // Predicate atom or a term comparison starting with a name:
                // disambiguate on the token after the ident.
                if matches!(self.toks.get(self.pos + 1).map(|(t, _)| t), Some(Tok::LParen)) {
                    let (pred, args) = self.pred_atom()?;
                    Ok(Atom::Pos { pred, args })
                } else {
                    self.comparison()
                }
            }
            _ => self.comparison(),
        }
    }

    fn comparison(&mut self) -> Result<Atom, ParseError> {
        let lhs = self.term()?;
        match self.bump() {
            Some(Tok::Eq) => Ok(Atom::Eq {
                lhs,
                rhs: self.term()?,
            }),
            Some(Tok::Neq) => Ok(Atom::Neq {
                lhs,
                rhs: self.term()?,
            }),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected `=` or `!=`"))
            }
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.bump() {
            Some(Tok::Int(n)) => Ok(Term::Const(self.interner.intern_int(n))),
            Some(Tok::Ident(name)) => {
                if is_var_name(&name) {
                    Ok(Term::Var(name))
                } else {
                    Err(self.err(format!(
                        "`{name}`: constants are integers; functor calls start with `@`"
                    )))
                }
            }
            Some(Tok::At) => {
                let name = match self.bump() {
                    Some(Tok::Ident(n)) => n,
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        return Err(self.err("expected functor name after `@`"));
                    }
                };
                self.expect(Tok::LParen, "`(`")?;
                let mut args = Vec::new();
                if self.peek() != Some(&Tok::RParen) {
                    loop {
                        args.push(self.term()?);
                        match self.peek() {
                            Some(Tok::Comma) => {
                                self.bump();
                            }
                            _ => break,
                        }
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Term::FunctorCall { name, args })
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected term"))
            }
        }
    }
}

fn is_var_name(name: &str) -> bool {
    name.starts_with(|c: char| c.is_ascii_uppercase() || c == '_')
}

/// Parses a program. Integer constants are interned into `interner`.
pub fn parse_program(
    text: &str,
    file: &str,
    interner: &Interner,
) -> Result<Program, ParseError> {
    let toks = Lexer::new(text, file).tokens()?;
    let mut p = Parser {
        toks,
        pos: 0,
        interner,
        file: file.to_string(),
    };
    p.program()
}

/// Parses a tab-separated fact file for a predicate of the given arity. Each
/// integer field is interned; tuples are returned in file order.
pub fn parse_facts(
    pred: &str,
    arity: usize,
    text: &str,
    interner: &Interner,
) -> Result<Vec<Tuple>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = if line.is_empty() {
            Vec::new()
        } else {
            line.split('\t').collect()
        };
        let span = SourceSpan {
            file: format!("{pred}.facts"),
            line: (lineno + 1) as u32,
            column: 1,
        };
        if fields.len() != arity {
            return Err(ParseError {
                span,
                message: format!(
                    "`{pred}` expects {arity} field(s), got {}",
                    fields.len()
                ),
            });
        }
        let mut tuple = Vec::with_capacity(arity);
        for f in fields {
            let n: i64 = f.trim().parse().map_err(|_| ParseError {
                span: span.clone(),
                message: format!("non-integer field `{f}`"),
            })?;
            tuple.push(interner.intern_int(n));
        }
        out.push(tuple);
    }
    Ok(out)
}

/// Renders a program back to source form. `parse(print(parse(t)))` equals
/// `parse(t)`.
pub fn print_program(program: &Program, interner: &Interner) -> String {
    let mut out = String::new();
    for name in program.decl_order() {
        let d = &program.declarations[name];
        out.push_str(&format!(".decl {}({})", name, d.arity));
        match d.kind {
            PredKind::Input => out.push_str(" input"),
            PredKind::Output => out.push_str(" output"),
            PredKind::Internal => {}
        }
        out.push('\n');
    }
    for rule in &program.rules {
        out.push_str(&print_rule(rule, interner));
        out.push('\n');
    }
    out
}

pub fn print_rule(rule: &Rule, interner: &Interner) -> String {
    let mut s = format!(
        "{}({})",
        rule.head_pred,
        rule.head_args
            .iter()
            .map(|t| print_term(t, interner))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if !rule.body.is_empty() {
        s.push_str(" :- ");
        let atoms: Vec<String> = rule.body.iter().map(|a| print_atom(a, interner)).collect();
        s.push_str(&atoms.join(", "));
    }
    s.push('.');
    s
}

fn print_atom(atom: &Atom, interner: &Interner) -> String {
    match atom {
        Atom::Pos { pred, args } => format!(
            "{}({})",
            pred,
            args.iter()
                .map(|t| print_term(t, interner))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        Atom::Neg { pred, args } => format!(
            "!{}({})",
            pred,
            args.iter()
                .map(|t| print_term(t, interner))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        Atom::Eq { lhs, rhs } => format!(
            "{} = {}",
            print_term(lhs, interner),
            print_term(rhs, interner)
        ),
        Atom::Neq { lhs, rhs } => format!(
            "{} != {}",
            print_term(lhs, interner),
            print_term(rhs, interner)
        ),
    }
}

pub fn print_term(term: &Term, interner: &Interner) -> String {
    match term {
        Term::Var(v) => v.clone(),
        Term::Const(id) => interner.render(*id),
        Term::FunctorCall { name, args } => format!(
            "@{}({})",
            name,
            args.iter()
                .map(|t| print_term(t, interner))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}
