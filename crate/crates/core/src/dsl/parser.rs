//! Recursive-descent parser for composition formulas.
//!
//! ```text
//! expr    := primary (op primary)*
//! op      := ("hm" | "con" | "⊗" | "◇" | "⊖") ("[" number "]")?
//! primary := ident | "(" expr ")" | "post" "(" "y" "=" "[" labels "]" ";" idents ")"
//! ```

use super::ast::Expr;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Hm,
    Con,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Eq,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let t = lx.next()?;
            let done = t.0 == Tok::End;
            out.push(t);
            if done {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
        let start = self.pos;
        let Some(c) = trimmed.chars().next() else {
            return Ok((Tok::End, start));
        };
        self.pos += c.len_utf8();
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '=' => Tok::Eq,
            '⊗' => Tok::Hm,
            '◇' | '⊖' => Tok::Con,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = trimmed
                    .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                    .unwrap_or(trimmed.len());
                self.pos = start + len;
                match &trimmed[..len] {
                    "hm" => Tok::Hm,
                    "con" => Tok::Con,
                    word => Tok::Ident(word.to_string()),
                }
            }
            c if c.is_ascii_digit() || c == '.' => {
                let len = trimmed
                    .find(|ch: char| !(ch.is_ascii_digit() || ch == '.'))
                    .unwrap_or(trimmed.len());
                self.pos = start + len;
                Tok::Number(trimmed[..len].to_string())
            }
            other => {
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        Ok((tok, start))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if t.0 != Tok::End {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { offset: self.offset(), message: message.into() })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.primary()?;
        loop {
            let is_hm = match self.peek() {
                Tok::Hm => true,
                Tok::Con => false,
                _ => return Ok(lhs),
            };
            self.bump();
            let bracket = if *self.peek() == Tok::LBracket {
                self.bump();
                let c = self.parameter()?;
                self.expect(Tok::RBracket, "`]`")?;
                Some(c)
            } else {
                None
            };
            let rhs = self.primary()?;
            lhs = if is_hm { Expr::hm(lhs, rhs, bracket) } else { Expr::con(lhs, rhs, bracket) };
        }
    }

    fn parameter(&mut self) -> Result<f64> {
        let offset = self.offset();
        match self.bump().0 {
            Tok::Number(s) => match s.parse::<f64>() {
                Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
                _ => Err(Error::Syntax {
                    offset,
                    message: format!("operator parameter `{s}` must be a decimal in (0, 1)"),
                }),
            },
            _ => Err(Error::Syntax { offset, message: "expected an operator parameter".into() }),
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "post" => self.post(),
            Tok::Ident(name) => {
                self.bump();
                Ok(Expr::Base(name))
            }
            Tok::End => self.fail("unexpected end of input"),
            _ => self.fail("expected a base name, `(` or `post(...)`"),
        }
    }

    fn post(&mut self) -> Result<Expr> {
        self.bump();
        self.expect(Tok::LParen, "`(` after `post`")?;
        match self.peek() {
            Tok::Ident(y) if y == "y" => {
                self.bump();
            }
            _ => return self.fail("expected `y=`"),
        }
        self.expect(Tok::Eq, "`=`")?;
        self.expect(Tok::LBracket, "`[`")?;
        let mut labels = Vec::new();
        loop {
            let offset = self.offset();
            match self.bump().0 {
                Tok::Number(s) => match s.parse::<usize>() {
                    Ok(v) if v >= 1 => labels.push((v - 1, offset)),
                    _ => {
                        return Err(Error::Syntax {
                            offset,
                            message: format!("label `{s}` must be a positive integer"),
                        })
                    }
                },
                _ => return Err(Error::Syntax { offset, message: "expected a label".into() }),
            }
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBracket => {
                    self.bump();
                    break;
                }
                _ => return self.fail("expected `,` or `]`"),
            }
        }
        self.expect(Tok::Semi, "`;`")?;
        let mut bases = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Ident(n) if n != "post" => {
                    self.bump();
                    bases.push(n);
                }
                _ => return self.fail("expected a base name"),
            }
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RParen => {
                    self.bump();
                    break;
                }
                _ => return self.fail("expected `,` or `)`"),
            }
        }
        if let Some(&(label, offset)) = labels.iter().find(|(l, _)| *l >= bases.len()) {
            return Err(Error::Syntax {
                offset,
                message: format!("label {} but only {} bases listed", label + 1, bases.len()),
            });
        }
        Ok(Expr::Post { observations: labels.into_iter().map(|(l, _)| l).collect(), bases })
    }
}

/// Parses a composition formula.
pub fn parse(text: &str) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::Syntax { offset: 0, message: "empty expression".into() });
    }
    let mut p = Parser { toks: Lexer::tokens(text)?, at: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail("unexpected trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(n: &str) -> Expr {
        Expr::base(n)
    }

    #[test]
    fn spec_examples() {
        assert_eq!(parse("p1 hm p2").unwrap(), Expr::hm(b("p1"), b("p2"), None));
        let e = parse("(p1 hm p2) con[0.95] p3").unwrap();
        assert_eq!(e, Expr::con(Expr::hm(b("p1"), b("p2"), None), b("p3"), Some(0.95)));
        if let Expr::Con { bracket, .. } = e {
            assert!((super::super::ast::alpha_of(bracket) - 0.05).abs() < 1e-15);
        }
        assert_eq!(
            parse("p1 con p2 con p3").unwrap(),
            Expr::con(Expr::con(b("p1"), b("p2"), None), b("p3"), None)
        );
        assert_eq!(
            parse("post(y=[2,2,2]; p1,p2,p3)").unwrap(),
            Expr::post(vec![1, 1, 1], &["p1", "p2", "p3"])
        );
    }

    #[test]
    fn glyph_aliases() {
        assert_eq!(parse("a ⊗ b").unwrap(), parse("a hm b").unwrap());
        assert_eq!(parse("a ◇[0.9] b").unwrap(), parse("a con[0.9] b").unwrap());
        assert_eq!(parse("a ⊖ b").unwrap(), parse("a con b").unwrap());
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let off = |s: &str| match parse(s) {
            Err(Error::Syntax { offset, .. }) => offset,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(off(""), 0);
        assert_eq!(off("p1 hm"), 5);
        assert_eq!(off("p1 hm[1.5] p2"), 6);
        assert_eq!(off("p1 hm[0] p2"), 6);
        assert_eq!(off("(p1 hm p2"), 9);
        assert_eq!(off("p1 $ p2"), 3);
        assert_eq!(off("post(y=[3]; a,b)"), 8);
        assert_eq!(off("post(y=[1]; a) hm[0.5"), 21);
        assert_eq!(off("p1 p2"), 3);
    }
}
