use super::{CmpOp, Formula, SafetySpec, Term};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Cmp(CmpOp),
    And,
    Or,
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let single = |tok| Spanned {
            tok,
            line: start_line,
            column: start_col,
        };
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '#' => {
                // comment to end of line
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '&' | '|' | '+' | '-' | '*' | '(' | ')' => {
                out.push(single(match c {
                    '&' => Tok::And,
                    '|' => Tok::Or,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '(' => Tok::LParen,
                    _ => Tok::RParen,
                }));
                i += 1;
                col += 1;
            }
            '<' | '>' | '=' | '!' => {
                let next_eq = chars.get(i + 1) == Some(&'=');
                let op = match (c, next_eq) {
                    ('<', true) => CmpOp::Le,
                    ('<', false) => CmpOp::Lt,
                    ('>', true) => CmpOp::Ge,
                    ('>', false) => CmpOp::Gt,
                    ('=', true) => CmpOp::Eq,
                    ('=', false) => CmpOp::Eq,
                    ('!', true) => CmpOp::Ne,
                    _ => {
                        return Err(Error::Syntax {
                            line,
                            column: col,
                            message: "expected `!=`".into(),
                        })
                    }
                };
                out.push(single(Tok::Cmp(op)));
                let width = if next_eq { 2 } else { 1 };
                i += width;
                col += width;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let begin = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit: String = chars[begin..i].iter().collect();
                let value = lit.parse::<f64>().map_err(|_| Error::Syntax {
                    line,
                    column: col,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push(single(Tok::Num(value)));
                col += i - begin;
            }
            c if c.is_alphabetic() || c == '_' => {
                let begin = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(single(Tok::Ident(chars[begin..i].iter().collect())));
                col += i - begin;
            }
            other => {
                return Err(Error::Syntax {
                    line,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let s = &self.toks[self.pos];
        Err(Error::Syntax {
            line: s.line,
            column: s.column,
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        let mut lhs = self.conjunction()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.conjunction()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let mut lhs = self.atom()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.atom()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Formula> {
        if *self.peek() == Tok::LParen {
            // `(` opens either a nested formula or a parenthesised term of a
            // comparison; try the formula reading first and backtrack.
            let save = self.pos;
            self.bump();
            if let Ok(f) = self.formula() {
                if *self.peek() == Tok::RParen {
                    self.bump();
                    if !matches!(self.peek(), Tok::Cmp(_) | Tok::Plus | Tok::Minus | Tok::Star) {
                        return Ok(f);
                    }
                }
            }
            self.pos = save;
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Formula> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Tok::Cmp(op) => *op,
            other => {
                let msg = format!("expected comparison operator, found {other:?}");
                return self.error(msg);
            }
        };
        self.bump();
        let rhs = self.sum()?;
        if let Tok::Cmp(_) = self.peek() {
            return self.error("chained comparisons are not supported; join them with `&`");
        }
        Ok(Formula::pred(op, lhs, rhs))
    }

    fn sum(&mut self) -> Result<Term> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Term::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Term::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Term> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::Star {
            self.bump();
            lhs = Term::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Term> {
        if *self.peek() == Tok::Minus {
            self.bump();
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Term::Const(-v));
            }
            return Ok(Term::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Term> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Term::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let t = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(t)
            }
            Tok::Ident(name) if name == "abs" => {
                self.bump();
                self.expect(Tok::LParen, "`(` after abs")?;
                let t = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Term::Abs(Box::new(t)))
            }
            Tok::Ident(name) => {
                self.bump();
                variable_index(&name).map(Term::Var).ok_or(Error::UnknownVariable(name))
            }
            other => self.error(format!("expected a term, found {other:?}")),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parse a specification such as `-0.5 < x0 & x0 < 0.5 | x1 >= 2`.
///
/// Comparison binds tighter than `&`, which binds tighter than `|`; both
/// connectives associate to the left. `#` starts a comment.
pub fn parse_spec(text: &str) -> Result<SafetySpec> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    if *p.peek() == Tok::End {
        return p.error("empty specification");
    }
    let root = p.formula()?;
    if *p.peek() != Tok::End {
        return p.error(format!("unexpected trailing {:?}", p.peek()));
    }
    Ok(SafetySpec::new(root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn var(i: usize) -> Term {
        Term::Var(i)
    }

    #[test]
    fn single_predicate() {
        let s = parse_spec("x0 > 0.8").unwrap();
        assert_eq!(*s.root(), Formula::pred(CmpOp::Gt, var(0), Term::Const(0.8)));
    }

    #[test]
    fn pendulum_conjunction_is_left_nested() {
        let s = parse_spec("-0.5 < x0 & x0 < 0.5 & -0.5 < x1 & x1 < 0.5").unwrap();
        let mut preds = 0;
        let mut node = s.root();
        while let Formula::And(l, r) = node {
            assert!(matches!(**r, Formula::Pred { .. }));
            preds += 1;
            node = l;
        }
        assert!(matches!(node, Formula::Pred { op: CmpOp::Lt, lhs: Term::Const(c), .. } if *c == -0.5));
        assert_eq!(preds + 1, 4);
    }

    #[test]
    fn disjunction_of_eq_and_ge() {
        let s = parse_spec("x0 = 1 | x1 >= 2").unwrap();
        assert_eq!(
            *s.root(),
            Formula::or(
                Formula::pred(CmpOp::Eq, var(0), Term::Const(1.0)),
                Formula::pred(CmpOp::Ge, var(1), Term::Const(2.0)),
            )
        );
    }

    #[test]
    fn precedence_and_parentheses() {
        let s = parse_spec("x0 > 0 | x1 > 0 & x2 > 0").unwrap();
        assert!(matches!(s.root(), Formula::Or(_, r) if matches!(**r, Formula::And(..))));
        let s = parse_spec("(x0 > 0 | x1 > 0) & x2 > 0").unwrap();
        assert!(matches!(s.root(), Formula::And(l, _) if matches!(**l, Formula::Or(..))));
        let s = parse_spec("(x0 + x1) * 2 < abs(x2 - 1)").unwrap();
        assert!(matches!(
            s.root(),
            Formula::Pred {
                lhs: Term::Mul(..),
                rhs: Term::Abs(_),
                ..
            }
        ));
    }

    #[test]
    fn errors_carry_position() {
        match parse_spec("x0 > 0 &\n  x1 <") {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_spec("x0 $ 1") {
            Err(Error::Syntax { line: 1, column: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_spec("y > 1"), Err(Error::UnknownVariable(v)) if v == "y"));
        assert!(matches!(parse_spec(""), Err(Error::Syntax { .. })));
        assert!(matches!(parse_spec("x0"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_spec("0 < x0 < 1"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn exponent_literals() {
        let s = parse_spec("x0 < 1e-3 & x1 > 2.5E+2").unwrap();
        assert!(s.holds(&[0.0, 300.0]).unwrap());
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        let leaf = prop_oneof![
            (0usize..4).prop_map(Term::Var),
            (-100i32..100).prop_map(|c| Term::Const(c as f64 / 8.0)),
        ];
        leaf.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|t| Term::Neg(Box::new(t))),
                inner.clone().prop_map(|t| Term::Abs(Box::new(t))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| Term::Mul(Box::new(a), Box::new(b))),
            ]
        })
    }

    fn arb_formula() -> impl Strategy<Value = Formula> {
        let op = prop_oneof![
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
            Just(CmpOp::Le),
            Just(CmpOp::Lt),
            Just(CmpOp::Ge),
            Just(CmpOp::Gt),
        ];
        let pred = (op, arb_term(), arb_term()).prop_map(|(op, l, r)| Formula::pred(op, l, r));
        pred.prop_recursive(3, 8, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Formula::or(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_round_trips(f in arb_formula()) {
            let spec = SafetySpec::new(f);
            let text = spec.to_string();
            let back = parse_spec(&text).unwrap();
            prop_assert_eq!(back.root(), spec.root(), "text: {}", text);
        }
    }
}
