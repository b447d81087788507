//! Line-oriented reader for the model language.

use super::expr::{BinaryOp, Expr, Func};
use super::lexer::{tokenize, Tok, Token};
use super::{DeclLines, InputDecl, Interpolation, ModelSpec, ObsDecl, ParameterDecl, VariableDecl};
use crate::error::{Error, Result};

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, line_len: usize) -> Self {
        Cursor {
            toks,
            pos: 0,
            line,
            line_len,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn column(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.column)
            .unwrap_or(self.line_len + 1)
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|t| t.tok.clone());
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, word: &str) -> Result<()> {
        match self.peek() {
            Some(Tok::Ident(name)) if name == word => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(format!("expected `{word}`"))),
        }
    }

    /// Signed literal, also accepting `inf`.
    fn signed_number(&mut self, what: &str) -> Result<f64> {
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            if self.peek() == Some(&Tok::Plus) {
                self.pos += 1;
            }
            false
        };
        let magnitude = match self.peek() {
            Some(Tok::Number(v)) => *v,
            Some(Tok::Ident(name)) if name == "inf" => f64::INFINITY,
            _ => return Err(self.error(format!("expected {what}"))),
        };
        self.pos += 1;
        Ok(if negative { -magnitude } else { magnitude })
    }

    fn finish(&self) -> Result<()> {
        if self.pos < self.toks.len() {
            Err(self.error("unexpected trailing input"))
        } else {
            Ok(())
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinaryOp::Add,
                Some(Tok::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinaryOp::Mul,
                Some(Tok::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            Ok(Expr::neg(self.unary()?))
        } else {
            self.power()
        }
    }

    // power := primary ('^' unary)?
    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exponent = self.unary()?;
            Ok(Expr::binary(BinaryOp::Pow, base, exponent))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let column = self.column();
        match self.next() {
            Some(Tok::Number(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Symbol(name));
                }
                let func = Func::from_name(&name).ok_or_else(|| Error::Syntax {
                    line: self.line,
                    column,
                    message: format!("unknown function `{name}`"),
                })?;
                self.pos += 1;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                if args.len() != func.arity() {
                    return Err(Error::Syntax {
                        line: self.line,
                        column,
                        message: format!(
                            "`{}` takes {} argument(s), got {}",
                            func.name(),
                            func.arity(),
                            args.len()
                        ),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(Error::Syntax {
                    line: self.line,
                    column,
                    message: "expected an expression".into(),
                })
            }
        }
    }
}

/// Parses a single expression (no surrounding declaration).
pub fn parse_expr(text: &str) -> Result<Expr> {
    let toks = tokenize(text, 1)?;
    let mut cur = Cursor::new(&toks, 1, text.chars().count());
    let e = cur.expr()?;
    cur.finish()?;
    Ok(e)
}

pub fn parse_model(source: &str) -> Result<ModelSpec> {
    let mut name: Option<String> = None;
    let mut variables = Vec::new();
    let mut parameters = Vec::new();
    let mut inputs = Vec::new();
    let mut raw_equations: Vec<(String, Expr, usize)> = Vec::new();
    let mut observations = Vec::new();
    let mut lines = DeclLines::default();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("");
        let toks = tokenize(text, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor::new(&toks, line, text.chars().count());
        let keyword = cur.ident("a declaration keyword")?;
        match keyword.as_str() {
            "model" => {
                if name.is_some() {
                    return Err(Error::Duplicate {
                        name: "model".into(),
                        line,
                    });
                }
                name = Some(cur.ident("model name")?);
            }
            "var" => {
                let var = cur.ident("variable name")?;
                cur.expect(Tok::Equals, "`=`")?;
                let initial_value = cur.signed_number("initial value")?;
                variables.push(VariableDecl {
                    name: var,
                    initial_value,
                });
                lines.variables.push(line);
            }
            "param" => {
                let param = cur.ident("parameter name")?;
                cur.expect(Tok::Tilde, "`~`")?;
                cur.keyword("N")?;
                cur.expect(Tok::LParen, "`(`")?;
                let prior_mean = cur.signed_number("prior mean")?;
                cur.expect(Tok::Comma, "`,`")?;
                let prior_sd = cur.signed_number("prior standard deviation")?;
                cur.expect(Tok::RParen, "`)`")?;
                let (lower_bound, upper_bound) = if cur.peek().is_some() {
                    cur.keyword("in")?;
                    cur.expect(Tok::LParen, "`(`")?;
                    let lo = cur.signed_number("lower bound")?;
                    cur.expect(Tok::Comma, "`,`")?;
                    let hi = cur.signed_number("upper bound")?;
                    cur.expect(Tok::RParen, "`)`")?;
                    (lo, hi)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                };
                parameters.push(ParameterDecl {
                    name: param,
                    prior_mean,
                    prior_sd,
                    lower_bound,
                    upper_bound,
                });
                lines.parameters.push(line);
            }
            "input" => {
                let input = cur.ident("input name")?;
                cur.keyword("from")?;
                let column = cur.ident("column name")?;
                inputs.push(InputDecl {
                    name: input,
                    column,
                    interpolation: Interpolation::Linear,
                });
                lines.inputs.push(line);
            }
            "eq" => {
                let column = cur.column();
                let head = cur.ident("`d<variable>/dt`")?;
                let var = head
                    .strip_prefix('d')
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::Syntax {
                        line,
                        column,
                        message: format!("expected `d<variable>/dt`, found `{head}`"),
                    })?
                    .to_string();
                cur.expect(Tok::Slash, "`/dt`")?;
                cur.keyword("dt")?;
                cur.expect(Tok::Equals, "`=`")?;
                let rhs = cur.expr()?;
                raw_equations.push((var, rhs, line));
            }
            "obs" => {
                let var = cur.ident("observed variable")?;
                cur.keyword("noise")?;
                let noise_sd = cur.signed_number("noise standard deviation")?;
                observations.push(ObsDecl {
                    variable: var,
                    noise_sd,
                });
                lines.observations.push(line);
            }
            other => {
                return Err(Error::Syntax {
                    line,
                    column: toks[0].column,
                    message: format!("unknown declaration `{other}`"),
                })
            }
        }
        cur.finish()?;
    }

    let name = name.ok_or_else(|| Error::Syntax {
        line: 1,
        column: 1,
        message: "missing `model <name>` line".into(),
    })?;

    // equations are stored in variable declaration order
    let mut equations: Vec<Option<Expr>> = vec![None; variables.len()];
    lines.equations = vec![0; variables.len()];
    for (var, rhs, line) in raw_equations {
        let idx = variables
            .iter()
            .position(|v: &VariableDecl| v.name == var)
            .ok_or_else(|| Error::UnresolvedSymbol {
                name: var.clone(),
                line,
            })?;
        if equations[idx].is_some() {
            return Err(Error::Duplicate {
                name: format!("d{var}/dt"),
                line,
            });
        }
        equations[idx] = Some(rhs);
        lines.equations[idx] = line;
    }
    let equations = equations
        .into_iter()
        .zip(&variables)
        .map(|(eq, v)| eq.ok_or_else(|| Error::MissingEquation(v.name.clone())))
        .collect::<Result<Vec<_>>>()?;

    let spec = ModelSpec {
        name,
        variables,
        parameters,
        inputs,
        equations,
        observations,
    };
    spec.check(&lines)?;
    Ok(spec)
}
