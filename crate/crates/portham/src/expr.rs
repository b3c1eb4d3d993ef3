//! Scalar expressions over the state variables `x1..xn`.
//!
//! The grammar covers numeric literals, `+ - * / ^` with the usual
//! precedence (`^` binds tightest and associates to the right), unary
//! minus, parentheses, and the whitelisted function `norm2(x)`, which
//! evaluates to the squared Euclidean norm of the whole state vector.
//! `x0` is not a variable; indices start at 1.

use std::fmt;

use crate::error::{Error, Result};

/// Binary operators, in increasing binding strength: `+ -` < `* /` < `^`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Number(f64),
    /// Zero-based state index; prints as `x{i+1}`.
    Var(usize),
    /// Squared norm of the whole state vector, written `norm2(x)`.
    Norm2,
    Neg(Box<Expression>),
    Bin(BinOp, Box<Expression>, Box<Expression>),
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Add | BinOp::Sub => PREC_ADD,
        BinOp::Mul | BinOp::Div => PREC_MUL,
        BinOp::Pow => PREC_POW,
    }
}

impl Expression {
    /// Evaluate at a state vector. Division by zero and non-finite results
    /// are reported as errors rather than silently producing NaN.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.eval_inner(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::EvalError {
                reason: format!("non-finite value in `{self}`"),
            })
        }
    }

    fn eval_inner(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            Expression::Number(c) => *c,
            Expression::Var(i) => *x.get(*i).ok_or_else(|| Error::EvalError {
                reason: format!("x{} is out of range for state dimension {}", i + 1, x.len()),
            })?,
            Expression::Norm2 => x.iter().map(|v| v * v).sum(),
            Expression::Neg(e) => -e.eval_inner(x)?,
            Expression::Bin(op, a, b) => {
                let a = a.eval_inner(x)?;
                let b = b.eval_inner(x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::EvalError {
                                reason: format!("division by zero in `{self}`"),
                            });
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
        })
    }

    /// Largest zero-based variable index used, if any variables appear.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expression::Number(_) => None,
            Expression::Var(i) => Some(*i),
            Expression::Norm2 => None,
            Expression::Neg(e) => e.max_var(),
            Expression::Bin(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (a, b) => a.or(b),
            },
        }
    }

    /// Whether evaluation reads the state anywhere in the tree, through
    /// an indexed variable or through `norm2(x)`.
    pub fn depends_on_state(&self) -> bool {
        match self {
            Expression::Number(_) => false,
            Expression::Var(_) | Expression::Norm2 => true,
            Expression::Neg(e) => e.depends_on_state(),
            Expression::Bin(_, a, b) => a.depends_on_state() || b.depends_on_state(),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        match self {
            Expression::Number(c) => write!(f, "{c}"),
            Expression::Var(i) => write!(f, "x{}", i + 1),
            Expression::Norm2 => write!(f, "norm2(x)"),
            Expression::Neg(e) => {
                let paren = PREC_NEG < min;
                if paren {
                    write!(f, "(")?;
                }
                write!(f, "-")?;
                e.fmt_prec(f, PREC_NEG)?;
                if paren {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Expression::Bin(op, a, b) => {
                let p = prec(*op);
                let paren = p < min;
                if paren {
                    write!(f, "(")?;
                }
                match op {
                    BinOp::Pow => {
                        a.fmt_prec(f, PREC_ATOM)?;
                        write!(f, "^")?;
                        b.fmt_prec(f, p)?;
                    }
                    _ => {
                        let sym = match op {
                            BinOp::Add => "+",
                            BinOp::Sub => "-",
                            BinOp::Mul => "*",
                            BinOp::Div => "/",
                            BinOp::Pow => unreachable!(),
                        };
                        a.fmt_prec(f, p)?;
                        write!(f, " {sym} ")?;
                        b.fmt_prec(f, p + 1)?;
                    }
                }
                if paren {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| Error::SyntaxError {
                    position: start,
                    expected: "a numeric literal".into(),
                })?;
                toks.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(Error::SyntaxError {
                    position: i,
                    expected: "a number, a variable, an operator, or parentheses".into(),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expression> {
        let mut lhs = self.term()?;
        while let Some(tok) = self.peek() {
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expression::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression> {
        let mut lhs = self.unary()?;
        while let Some(tok) = self.peek() {
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expression::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            return Ok(Expression::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            // Right-associative; the exponent may carry its own unary minus.
            let exp = self.unary()?;
            return Ok(Expression::Bin(
                BinOp::Pow,
                Box::new(base),
                Box::new(exp),
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression> {
        let position = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expression::Number(v)),
            Some(Tok::Ident(name)) => {
                if name == "norm2" {
                    self.expect(Tok::LParen, "`(` after norm2")?;
                    let arg_pos = self.here();
                    match self.bump() {
                        Some(Tok::Ident(arg)) if arg == "x" => {}
                        _ => {
                            return Err(Error::SyntaxError {
                                position: arg_pos,
                                expected: "the state vector `x` as the argument of norm2".into(),
                            })
                        }
                    }
                    self.expect(Tok::RParen, "`)` closing norm2")?;
                    return Ok(Expression::Norm2);
                }
                if let Some(idx) = var_index(&name) {
                    return Ok(Expression::Var(idx));
                }
                Err(Error::UnknownIdentifier { name, position })
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(Error::SyntaxError {
                position,
                expected: "a number, a variable x1..xn, `norm2(x)`, `-`, or `(`".into(),
            }),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let position = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(Error::SyntaxError {
                position,
                expected: what.into(),
            }),
        }
    }
}

/// `x1..xn` with no leading zeros; anything else is not a variable.
fn var_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    digits.parse::<usize>().ok().map(|i| i - 1)
}

/// Parse an expression string. The printed form of the result re-parses to
/// an identical tree.
pub fn parse_expression(text: &str) -> Result<Expression> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(Error::SyntaxError {
            position: p.here(),
            expected: "end of input or a binary operator".into(),
        });
    }
    Ok(e)
}
