use exmex::prelude::*;
use exmex::FlatEx;

use super::CoefficientModel;
use crate::error::{Error, Result};

/// A parsed expression with its variables mapped onto `[t, x1, .., xd]`.
#[derive(Debug, Clone)]
struct CompiledExpr {
    expr: FlatEx<f64>,
    slots: Vec<usize>,
}

impl CompiledExpr {
    fn parse(src: &str, dim: usize) -> Result<Self> {
        let expr = exmex::parse::<f64>(src)
            .map_err(|e| Error::Expression(format!("`{src}`: {e}")))?;
        let slots = expr
            .var_names()
            .iter()
            .map(|name| variable_slot(name, dim))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                Error::Expression(format!(
                    "`{src}`: unknown variable (allowed: t, x1..x{dim})"
                ))
            })?;
        Ok(Self { expr, slots })
    }

    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let mut vars = [0.0f64; 8];
        let mut heap;
        let vals: &mut [f64] = if self.slots.len() <= vars.len() {
            &mut vars[..self.slots.len()]
        } else {
            heap = vec![0.0; self.slots.len()];
            &mut heap
        };
        for (v, &slot) in vals.iter_mut().zip(&self.slots) {
            *v = if slot == 0 { t } else { x[slot - 1] };
        }
        // Variables were validated at parse time, so evaluation cannot fail on arity.
        self.expr.eval(vals).unwrap_or(f64::NAN)
    }
}

fn variable_slot(name: &str, dim: usize) -> Option<usize> {
    if name == "t" {
        return Some(0);
    }
    let k: usize = name.strip_prefix('x')?.parse().ok()?;
    (1..=dim).contains(&k).then_some(k)
}

/// User-supplied coefficient expressions.
#[derive(Debug)]
pub struct ExpressionModel {
    dim: usize,
    a: Vec<CompiledExpr>,
    b: Vec<CompiledExpr>,
    c: CompiledExpr,
    smooth: bool,
}

impl ExpressionModel {
    pub fn new(dim: usize, a: &[Vec<String>], b: &[String], c: &str, smooth: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        if a.len() != dim || a.iter().any(|row| row.len() != dim) {
            return Err(Error::Validation(format!("`a` must be a {dim}x{dim} array")));
        }
        if b.len() != dim {
            return Err(Error::Validation(format!("`b` must have {dim} entries")));
        }
        let a = a
            .iter()
            .flatten()
            .map(|s| CompiledExpr::parse(s, dim))
            .collect::<Result<Vec<_>>>()?;
        let b = b
            .iter()
            .map(|s| CompiledExpr::parse(s, dim))
            .collect::<Result<Vec<_>>>()?;
        let c = CompiledExpr::parse(c, dim)?;
        Ok(Self {
            dim,
            a,
            b,
            c,
            smooth,
        })
    }
}

impl CoefficientModel for ExpressionModel {
    fn name(&self) -> &str {
        "expr"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn diffusion(&self, t: f64, x: &[f64], a: &mut [f64]) {
        for (out, e) in a.iter_mut().zip(&self.a) {
            *out = e.eval(t, x);
        }
    }

    fn drift(&self, t: f64, x: &[f64], b: &mut [f64]) {
        for (out, e) in b.iter_mut().zip(&self.b) {
            *out = e.eval(t, x);
        }
    }

    fn potential(&self, t: f64, x: &[f64]) -> f64 {
        self.c.eval(t, x)
    }

    fn is_smooth(&self) -> bool {
        self.smooth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    #[test]
    fn evaluates_in_declared_variables() {
        let m = ExpressionModel::new(
            2,
            &[vec![s("1 + x2"), s("0")], vec![s("0"), s("2*t")]],
            &[s("x1"), s("x2 - x1")],
            "signum(x1) * 0.5",
            true,
        )
        .unwrap();
        let mut a = [0.0; 4];
        m.diffusion(3.0, &[1.0, 2.0], &mut a);
        assert_eq!(a, [3.0, 0.0, 0.0, 6.0]);
        let mut b = [0.0; 2];
        m.drift(0.0, &[1.0, 2.0], &mut b);
        assert_eq!(b, [1.0, 1.0]);
        assert_eq!(m.potential(0.0, &[-3.0, 0.0]), -0.5);
    }

    #[test]
    fn many_variables_sorted_correctly() {
        // x10 sorts before x2 lexicographically
        let dim = 10;
        let a: Vec<Vec<String>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { s("1") } else { s("0") }).collect())
            .collect();
        let b: Vec<String> = (0..dim).map(|_| s("0")).collect();
        let m = ExpressionModel::new(dim, &a, &b, "x10 - x2 + x1 + t", true).unwrap();
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(m.potential(100.0, &x), 10.0 - 2.0 + 1.0 + 100.0);
    }

    #[test]
    fn rejects_unknown_variables_and_bad_shapes() {
        assert!(matches!(
            ExpressionModel::new(1, &[vec![s("y")]], &[s("0")], "0", true),
            Err(Error::Expression(_))
        ));
        assert!(matches!(
            ExpressionModel::new(1, &[vec![s("x2")]], &[s("0")], "0", true),
            Err(Error::Expression(_))
        ));
        assert!(ExpressionModel::new(2, &[vec![s("1")]], &[s("0")], "0", true).is_err());
        assert!(ExpressionModel::new(1, &[vec![s("1 +")]], &[s("0")], "0", true).is_err());
    }
}
