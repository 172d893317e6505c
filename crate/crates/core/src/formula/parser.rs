use std::fmt;

use super::{Atom, Formula, Term};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    /// Byte offset into the input, at most the input length.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at offset {}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Not,
    And,
    Or,
    Arrow,
    DoubleArrow,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Forall,
    In,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(v) => write!(f, "integer `{v}`"),
            Tok::Not => f.write_str("`~`"),
            Tok::And => f.write_str("`&`"),
            Tok::Or => f.write_str("`|`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::DoubleArrow => f.write_str("`<->`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Forall => f.write_str("`forall`"),
            Tok::In => f.write_str("`in`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn err(position: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        position,
        message: message.into(),
    }
}

fn lex(input: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'~' => Tok::Not,
            b'&' => Tok::And,
            b'|' => Tok::Or,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'{' => Tok::LBrace,
            b'}' => Tok::RBrace,
            b',' => Tok::Comma,
            b':' => Tok::Colon,
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 2;
                out.push((Tok::Arrow, start));
                continue;
            }
            b'<' if bytes.get(i + 1) == Some(&b'-') && bytes.get(i + 2) == Some(&b'>') => {
                i += 3;
                out.push((Tok::DoubleArrow, start));
                continue;
            }
            b'-' | b'0'..=b'9' => {
                let neg = c == b'-';
                let mut j = if neg { i + 1 } else { i };
                if j >= bytes.len() || !bytes[j].is_ascii_digit() {
                    return Err(err(start, "unknown token `-`"));
                }
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let v: i64 = input[i..j]
                    .parse()
                    .map_err(|_| err(start, "integer out of range"))?;
                i = j;
                out.push((Tok::Int(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let word = &input[i..j];
                i = j;
                let tok = match word {
                    "forall" => Tok::Forall,
                    "in" => Tok::In,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, start));
                continue;
            }
            _ => {
                let ch = input[i..].chars().next().unwrap_or('?');
                return Err(err(start, format!("unknown token `{ch}`")));
            }
        };
        i += 1;
        out.push((tok, start));
    }
    out.push((Tok::Eof, input.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(err(
                self.offset(),
                format!("expected {want}, found {}", self.peek()),
            ))
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.implication()?;
        while *self.peek() == Tok::DoubleArrow {
            self.bump();
            let rhs = self.implication()?;
            lhs = Formula::iff(lhs, rhs);
        }
        Ok(lhs)
    }

    fn implication(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.disjunction()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.implication()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut args = vec![self.conjunction()?];
        while *self.peek() == Tok::Or {
            self.bump();
            args.push(self.conjunction()?);
        }
        Ok(Formula::or(args))
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut args = vec![self.unary()?];
        while *self.peek() == Tok::And {
            self.bump();
            args.push(self.unary()?);
        }
        Ok(Formula::and(args))
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Not => Ok(Formula::not(self.unary()?)),
            Tok::LParen => {
                let inner = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let mut args = Vec::new();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    args = self.term_list(Tok::RParen)?;
                }
                Ok(Formula::Atom(Atom {
                    predicate: name,
                    args,
                }))
            }
            Tok::Forall => {
                let var_at = self.offset();
                let variable = match self.bump() {
                    Tok::Ident(v) => v,
                    other => {
                        return Err(err(var_at, format!("expected variable, found {other}")))
                    }
                };
                let domain = if *self.peek() == Tok::In {
                    self.bump();
                    self.expect(Tok::LBrace)?;
                    Some(self.term_list(Tok::RBrace)?)
                } else {
                    None
                };
                self.expect(Tok::Colon)?;
                let body = self.formula()?;
                Ok(Formula::forall(&variable, domain, body))
            }
            Tok::Eof => Err(err(at, "expected formula, found end of input")),
            other => Err(err(at, format!("expected formula, found {other}"))),
        }
    }

    /// Comma-separated terms up to and including `close`.
    fn term_list(&mut self, close: Tok) -> Result<Vec<Term>, ParseError> {
        let mut terms = Vec::new();
        loop {
            let at = self.offset();
            match self.bump() {
                Tok::Ident(s) => terms.push(Term::Ident(s)),
                Tok::Int(v) => terms.push(Term::Int(v)),
                other => return Err(err(at, format!("expected term, found {other}"))),
            }
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                self.expect(close)?;
                return Ok(terms);
            }
        }
    }
}

/// Parses formula text. See the module docs for the grammar.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    if toks.len() == 1 {
        return Err(err(0, "empty input"));
    }
    let mut p = Parser { toks, pos: 0 };
    let f = p.formula()?;
    if *p.peek() != Tok::Eof {
        return Err(err(p.offset(), format!("unexpected {}", p.peek())));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(n: &str) -> Formula {
        Formula::prop(n)
    }

    #[test]
    fn nested_implication() {
        let f = parse_formula("A -> (B -> A)").unwrap();
        assert_eq!(f, Formula::implies(a("A"), Formula::implies(a("B"), a("A"))));
    }

    #[test]
    fn law_of_contradiction_shape() {
        let f = parse_formula("~(P & ~P)").unwrap();
        assert_eq!(
            f,
            Formula::not(Formula::And {
                args: vec![a("P"), Formula::not(a("P"))]
            })
        );
    }

    #[test]
    fn dangling_operator() {
        let e = parse_formula("A ->").unwrap_err();
        assert_eq!(e.position, 4);
    }

    #[test]
    fn empty_and_blank_input() {
        assert_eq!(parse_formula("").unwrap_err().position, 0);
        assert_eq!(parse_formula("   ").unwrap_err().message, "empty input");
    }

    #[test]
    fn unbalanced_parentheses() {
        assert_eq!(parse_formula("(A & B").unwrap_err().position, 6);
        assert_eq!(parse_formula("A & B)").unwrap_err().position, 5);
    }

    #[test]
    fn unknown_token() {
        let e = parse_formula("A $ B").unwrap_err();
        assert_eq!(e.position, 2);
        assert!(e.message.contains('$'));
        assert_eq!(parse_formula("A - B").unwrap_err().position, 2);
    }

    #[test]
    fn precedence_ladder() {
        // ~ > & > | > -> > <->
        let f = parse_formula("~A & B | C -> D <-> E").unwrap();
        let expected = Formula::iff(
            Formula::implies(
                Formula::Or {
                    args: vec![
                        Formula::And {
                            args: vec![Formula::not(a("A")), a("B")],
                        },
                        a("C"),
                    ],
                },
                a("D"),
            ),
            a("E"),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn implication_is_right_associative() {
        let f = parse_formula("A -> B -> C").unwrap();
        assert_eq!(f, Formula::implies(a("A"), Formula::implies(a("B"), a("C"))));
    }

    #[test]
    fn iff_is_left_associative() {
        let f = parse_formula("A <-> B <-> C").unwrap();
        assert_eq!(f, Formula::iff(Formula::iff(a("A"), a("B")), a("C")));
    }

    #[test]
    fn nary_stays_flat() {
        let f = parse_formula("A & B & C").unwrap();
        assert_eq!(
            f,
            Formula::And {
                args: vec![a("A"), a("B"), a("C")]
            }
        );
    }

    #[test]
    fn atoms_with_terms() {
        let f = parse_formula("Sum(x1, x2, 7) & Digit(img_3, -1)").unwrap();
        let Formula::And { args } = f else { panic!() };
        assert_eq!(
            args[0],
            Formula::Atom(Atom::new(
                "Sum",
                vec!["x1".into(), "x2".into(), Term::Int(7)]
            ))
        );
        assert_eq!(
            args[1],
            Formula::Atom(Atom::new("Digit", vec!["img_3".into(), Term::Int(-1)]))
        );
    }

    #[test]
    fn forall_with_and_without_domain() {
        let f = parse_formula("forall x in {1, 2}: P(x) & Q").unwrap();
        let Formula::ForAll {
            variable,
            domain,
            body,
        } = f
        else {
            panic!()
        };
        assert_eq!(variable, "x");
        assert_eq!(domain, Some(vec![Term::Int(1), Term::Int(2)]));
        assert!(matches!(*body, Formula::And { .. }));

        let g = parse_formula("forall y: P(y)").unwrap();
        assert!(matches!(g, Formula::ForAll { domain: None, .. }));
    }

    #[test]
    fn keyword_is_not_an_atom() {
        assert!(parse_formula("in").is_err());
        assert!(parse_formula("forall").is_err());
    }

    #[test]
    fn trailing_garbage() {
        let e = parse_formula("A B").unwrap_err();
        assert_eq!(e.position, 2);
    }
}
