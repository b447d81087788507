//! Expression trees for rate equations, plus a flattened slot-indexed form
//! used on the hot path of integration and filtering.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }

    fn apply(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            BinaryOp::Add => lhs + rhs,
            BinaryOp::Sub => lhs - rhs,
            BinaryOp::Mul => lhs * rhs,
            BinaryOp::Div => lhs / rhs,
            BinaryOp::Pow => lhs.powf(rhs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Pow,
    Exp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Pow => "pow",
            Func::Exp => "exp",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            Func::Exp => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "pow" => Some(Func::Pow),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Symbol(String),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn symbol(name: impl Into<String>) -> Expr {
        Expr::Symbol(name.into())
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(inner: Expr) -> Expr {
        Expr::Neg(Box::new(inner))
    }

    /// Every distinct symbol referenced by the tree.
    pub fn symbols(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Symbol(name) => {
                out.insert(name.as_str());
            }
            Expr::Neg(inner) => inner.collect_symbols(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_symbols(out);
                rhs.collect_symbols(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_symbols(out)),
        }
    }

    /// Evaluate under a name-to-value binding.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Symbol(name) => *bindings
                .get(name)
                .ok_or_else(|| Error::UnboundSymbol(name.clone()))?,
            Expr::Neg(inner) => -inner.eval(bindings)?,
            Expr::Binary(op, lhs, rhs) => {
                let l = lhs.eval(bindings)?;
                let r = rhs.eval(bindings)?;
                match op {
                    BinaryOp::Div if r == 0.0 => {
                        return Err(Error::Domain(format!("division by zero in `{self}`")))
                    }
                    BinaryOp::Pow if l == 0.0 && r < 0.0 => {
                        return Err(Error::Domain(format!(
                            "zero raised to a negative power in `{self}`"
                        )))
                    }
                    _ => op.apply(l, r),
                }
            }
            Expr::Call(func, args) => {
                let values = args
                    .iter()
                    .map(|a| a.eval(bindings))
                    .collect::<Result<Vec<_>>>()?;
                match func {
                    Func::Pow => {
                        if values[0] == 0.0 && values[1] < 0.0 {
                            return Err(Error::Domain(format!(
                                "zero raised to a negative power in `{self}`"
                            )));
                        }
                        values[0].powf(values[1])
                    }
                    Func::Exp => values[0].exp(),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Domain(format!("`{self}` evaluated to {value}")))
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinaryOp::Pow, ..) => 4,
            Expr::Const(_) | Expr::Symbol(_) | Expr::Call(..) => 5,
        }
    }
}

/// Evaluate `e` under `bindings`; non-finite results are domain errors.
pub fn eval_expr(e: &Expr, bindings: &HashMap<String, f64>) -> Result<f64> {
    e.eval(bindings)
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

// Prints with the minimum parentheses that re-parse to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Symbol(name) => f.write_str(name),
            Expr::Neg(inner) => {
                f.write_str("-")?;
                write_operand(f, inner, inner.precedence() < 3)
            }
            Expr::Binary(op, lhs, rhs) => {
                let prec = self.precedence();
                let (lp, rp) = match op {
                    // right-associative, and the exponent may itself be negated
                    BinaryOp::Pow => (lhs.precedence() <= prec, rhs.precedence() < 3),
                    _ => (lhs.precedence() < prec, rhs.precedence() <= prec),
                };
                write_operand(f, lhs, lp)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, rhs, rp)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg,
    Bin(BinaryOp),
    Exp,
}

/// Postfix program over a flat slot array. Symbols are resolved to slot
/// indices once, at compile time.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    max_depth: usize,
}

impl CompiledExpr {
    pub fn compile(e: &Expr, resolve: &dyn Fn(&str) -> Option<usize>) -> Result<CompiledExpr> {
        let mut ops = Vec::new();
        emit(e, resolve, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Slot(_) => depth += 1,
                Op::Bin(_) => depth -= 1,
                Op::Neg | Op::Exp => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(CompiledExpr { ops, max_depth })
    }

    /// Evaluates against `slots`. The result may be non-finite; callers
    /// decide how to report that.
    pub fn eval(&self, slots: &[f64]) -> f64 {
        const INLINE: usize = 32;
        if self.max_depth <= INLINE {
            let mut stack = [0.0f64; INLINE];
            self.run(slots, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.max_depth];
            self.run(slots, &mut stack)
        }
    }

    fn run(&self, slots: &[f64], stack: &mut [f64]) -> f64 {
        let mut top = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[top] = c;
                    top += 1;
                }
                Op::Slot(i) => {
                    stack[top] = slots[i];
                    top += 1;
                }
                Op::Neg => stack[top - 1] = -stack[top - 1],
                Op::Exp => stack[top - 1] = stack[top - 1].exp(),
                Op::Bin(b) => {
                    top -= 1;
                    stack[top - 1] = b.apply(stack[top - 1], stack[top]);
                }
            }
        }
        stack[0]
    }
}

fn emit(e: &Expr, resolve: &dyn Fn(&str) -> Option<usize>, ops: &mut Vec<Op>) -> Result<()> {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Symbol(name) => {
            let slot = resolve(name).ok_or_else(|| Error::UnboundSymbol(name.clone()))?;
            ops.push(Op::Slot(slot));
        }
        Expr::Neg(inner) => {
            emit(inner, resolve, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Binary(op, lhs, rhs) => {
            emit(lhs, resolve, ops)?;
            emit(rhs, resolve, ops)?;
            ops.push(Op::Bin(*op));
        }
        Expr::Call(Func::Pow, args) => {
            emit(&args[0], resolve, ops)?;
            emit(&args[1], resolve, ops)?;
            ops.push(Op::Bin(BinaryOp::Pow));
        }
        Expr::Call(Func::Exp, args) => {
            emit(&args[0], resolve, ops)?;
            ops.push(Op::Exp);
        }
    }
    Ok(())
}
