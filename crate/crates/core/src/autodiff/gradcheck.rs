use super::tape::{no_grad, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-6;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = x.detach().into_param();
    let analytic = {
        let tape = Tape::start();
        let y = f(&x)?;
        check_finite(&y, "f(x)")?;
        let grads = tape.backward(&y)?;
        grads
            .wrt(&x)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; x.numel()])
    };

    let base = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let probe = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[i] += delta;
            let y = no_grad(|| f(&Tensor::new(x.shape(), v)?))?;
            check_finite(&y, "f(x ± eps)")?;
            if y.numel() != 1 {
                return Err(Error::NonScalarLoss(y.shape().to_vec()));
            }
            Ok(y.item())
        };
        let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Gradcheck over several parameter tensors at once; `f` receives the full
/// parameter list.
pub fn gradcheck_many<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let params: Vec<Tensor> = params.iter().map(|p| p.detach().into_param()).collect();
    let grads = {
        let tape = Tape::start();
        let y = f(&params)?;
        check_finite(&y, "f(params)")?;
        tape.backward(&y)?
    };
    let mut worst: f64 = 0.0;
    for (k, p) in params.iter().enumerate() {
        let analytic = grads
            .wrt(p)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.to_vec();
        for i in 0..base.len() {
            let probe = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let mut ps: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
                ps[k] = Tensor::new(p.shape(), v)?;
                let y = no_grad(|| f(&ps))?;
                check_finite(&y, "f(params ± eps)")?;
                Ok(y.item())
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn check_finite(y: &Tensor, what: &str) -> Result<()> {
    if y.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{} is not finite during gradcheck",
            what
        )))
    }
}
