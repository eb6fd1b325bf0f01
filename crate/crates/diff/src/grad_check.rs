//! Central finite-difference verification of tape gradients.

use crate::array::Array;
use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    pub max_rel_error: f64,
    pub tol_rel: f64,
    /// Some evaluation came within a factor `1/eps` of the float range, so
    /// the difference quotient cannot be trusted.
    pub overflow: bool,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn summary(&self) -> String {
        let worst = self
            .worst()
            .map(|c| {
                format!(
                    " worst input {} idx {}: analytic {:.6e} numeric {:.6e}",
                    c.input, c.index, c.analytic, c.numeric
                )
            })
            .unwrap_or_default();
        format!(
            "{} coords, max rel err {:.3e} (tol {:.1e}){}{}",
            self.coords.len(),
            self.max_rel_error,
            self.tol_rel,
            if self.overflow { ", OVERFLOW" } else { "" },
            worst
        )
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval_scalar<T, F>(program: &F, point: &[Array<T>]) -> Result<T>
where
    T: Scalar,
    F: Fn(&Tape<T>, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|a| tape.constant(a.clone())).collect();
    let out = program(&tape, &vars);
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(DiffError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of a scalar `program` at `point` against
/// central differences with step `eps`, coordinate by coordinate.
pub fn grad_check<T, F>(program: F, point: &[Array<T>], eps: f64, tol_rel: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&Tape<T>, &[Var]) -> Var,
{
    assert!(eps > 0.0, "grad_check: eps must be positive");
    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|a| tape.param(a.clone())).collect();
    let out = program(&tape, &vars);
    let f0 = {
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(DiffError::NotScalar(v.shape().to_vec()));
        }
        v.item().f64()
    };
    let grads = tape.grad(out)?;

    let limit = T::max_value().f64() * eps;
    let risky = |v: f64| !v.is_finite() || v.abs() > limit;
    let mut overflow = risky(f0);
    let mut coords = Vec::new();
    let h = T::lit(eps);
    let mut shifted = point.to_vec();
    for (i, base) in point.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], base.shape());
        for j in 0..base.len() {
            let x = base.data()[j];
            shifted[i].data_mut()[j] = x + h;
            let fp = eval_scalar(&program, &shifted)?.f64();
            shifted[i].data_mut()[j] = x - h;
            let fm = eval_scalar(&program, &shifted)?.f64();
            shifted[i].data_mut()[j] = x;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[j].f64();
            overflow |= risky(fp) || risky(fm) || !numeric.is_finite() || !a.is_finite();
            coords.push(CoordCheck {
                input: i,
                index: j,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = coords.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let passed = !overflow && coords.iter().all(|c| c.rel_error <= tol_rel);
    Ok(GradCheckReport {
        coords,
        max_rel_error,
        tol_rel,
        overflow,
        passed,
    })
}
