use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Compare the reverse-mode gradient of `f` at `x` with central differences
/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// `f` receives a fresh graph and the leaf for `x`, and must return a
/// one-element node.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(t.clone());
        let out = f(&mut g, leaf)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::Numeric("grad_check: function value is not finite".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = f(&mut g, leaf)?;
    let analytic = g.backward(out)?.get_or_zeros(leaf, x);

    let mut worst = (0.0f64, 0usize);
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport { max_rel_error: worst.0, worst_index: worst.1, passed: worst.0 <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let r = grad_check(|g, v| g.sum(v), &x, 1e-5, 1e-10).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn squared_norm_at_tight_tolerance() {
        let x = Tensor::uniform(&[8], 1.0, &mut rng::stream(3, &[]));
        let r = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                g.sum(sq)
            },
            &x,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
