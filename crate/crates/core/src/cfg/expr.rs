use std::ops;

use serde::{Deserialize, Serialize};

/// Integer expression over program parameters and kernel variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(i64),
    Param(usize),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// Truncating division.
    Div(Box<Expr>, Box<Expr>),
    Rem(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pred {
    Cmp(CmpOp, Expr, Expr),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
    Not(Box<Pred>),
}

pub(crate) type EvalResult<T> = std::result::Result<T, &'static str>;

impl Expr {
    pub fn c(value: i64) -> Expr {
        Expr::Const(value)
    }

    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn min(self, other: Expr) -> Expr {
        Expr::Min(Box::new(self), Box::new(other))
    }

    pub fn max(self, other: Expr) -> Expr {
        Expr::Max(Box::new(self), Box::new(other))
    }

    pub(crate) fn eval(&self, params: &[i64], vars: &[i64]) -> EvalResult<i64> {
        let bin = |a: &Expr, b: &Expr| -> EvalResult<(i64, i64)> {
            Ok((a.eval(params, vars)?, b.eval(params, vars)?))
        };
        match self {
            Expr::Const(v) => Ok(*v),
            Expr::Param(i) => Ok(params[*i]),
            Expr::Var(i) => Ok(vars[*i]),
            Expr::Add(a, b) => {
                let (x, y) = bin(a, b)?;
                x.checked_add(y).ok_or("overflow in addition")
            }
            Expr::Sub(a, b) => {
                let (x, y) = bin(a, b)?;
                x.checked_sub(y).ok_or("overflow in subtraction")
            }
            Expr::Mul(a, b) => {
                let (x, y) = bin(a, b)?;
                x.checked_mul(y).ok_or("overflow in multiplication")
            }
            Expr::Div(a, b) => {
                let (x, y) = bin(a, b)?;
                x.checked_div(y).ok_or("division by zero")
            }
            Expr::Rem(a, b) => {
                let (x, y) = bin(a, b)?;
                x.checked_rem(y).ok_or("remainder by zero")
            }
            Expr::Min(a, b) => bin(a, b).map(|(x, y)| x.min(y)),
            Expr::Max(a, b) => bin(a, b).map(|(x, y)| x.max(y)),
        }
    }

    fn children(&self) -> Option<(&Expr, &Expr)> {
        match self {
            Expr::Const(_) | Expr::Param(_) | Expr::Var(_) => None,
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Rem(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => Some((a, b)),
        }
    }

    fn max_index(&self, leaf: &dyn Fn(&Expr) -> Option<usize>) -> Option<usize> {
        match self.children() {
            None => leaf(self),
            Some((a, b)) => a.max_index(leaf).max(b.max_index(leaf)),
        }
    }

    pub(crate) fn max_param(&self) -> Option<usize> {
        self.max_index(&|e| if let Expr::Param(i) = e { Some(*i) } else { None })
    }

    pub(crate) fn max_var(&self) -> Option<usize> {
        self.max_index(&|e| if let Expr::Var(i) = e { Some(*i) } else { None })
    }
}

macro_rules! expr_op {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$variant(Box::new(self), Box::new(rhs))
            }
        }
        impl ops::$trait<i64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: i64) -> Expr {
                Expr::$variant(Box::new(self), Box::new(Expr::Const(rhs)))
            }
        }
    };
}

expr_op!(Add, add, Add);
expr_op!(Sub, sub, Sub);
expr_op!(Mul, mul, Mul);
expr_op!(Div, div, Div);
expr_op!(Rem, rem, Rem);

impl Pred {
    pub fn lt(a: Expr, b: Expr) -> Pred {
        Pred::Cmp(CmpOp::Lt, a, b)
    }
    pub fn le(a: Expr, b: Expr) -> Pred {
        Pred::Cmp(CmpOp::Le, a, b)
    }
    pub fn gt(a: Expr, b: Expr) -> Pred {
        Pred::Cmp(CmpOp::Gt, a, b)
    }
    pub fn ge(a: Expr, b: Expr) -> Pred {
        Pred::Cmp(CmpOp::Ge, a, b)
    }
    pub fn eq(a: Expr, b: Expr) -> Pred {
        Pred::Cmp(CmpOp::Eq, a, b)
    }
    pub fn ne(a: Expr, b: Expr) -> Pred {
        Pred::Cmp(CmpOp::Ne, a, b)
    }

    pub fn and(self, other: Pred) -> Pred {
        Pred::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Pred) -> Pred {
        Pred::Or(Box::new(self), Box::new(other))
    }

    pub fn negate(self) -> Pred {
        Pred::Not(Box::new(self))
    }

    pub(crate) fn eval(&self, params: &[i64], vars: &[i64]) -> EvalResult<bool> {
        match self {
            Pred::Cmp(op, a, b) => {
                let (x, y) = (a.eval(params, vars)?, b.eval(params, vars)?);
                Ok(match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                })
            }
            Pred::And(a, b) => Ok(a.eval(params, vars)? && b.eval(params, vars)?),
            Pred::Or(a, b) => Ok(a.eval(params, vars)? || b.eval(params, vars)?),
            Pred::Not(a) => a.eval(params, vars).map(|v| !v),
        }
    }

    pub(crate) fn collect_exprs<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Pred::Cmp(_, a, b) => {
                out.push(a);
                out.push(b);
            }
            Pred::And(a, b) | Pred::Or(a, b) => {
                a.collect_exprs(out);
                b.collect_exprs(out);
            }
            Pred::Not(a) => a.collect_exprs(out),
        }
    }
}
