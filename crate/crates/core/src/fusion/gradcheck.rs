use crate::error::Result;

use super::model::{FusionModel, Triplet};

/// Largest relative error between `analytic` and central differences of
/// `loss` at `params`; the denominator is `max(1, |analytic|)`.
pub fn fd_gradcheck_fn(
    params: &[f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(crate::error::Error::contract(format!("step h must be > 0, got {h}")));
    }
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let up = loss(&p)?;
        p[i] = params[i] - h;
        let down = loss(&p)?;
        p[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference check of [`FusionModel::loss_and_grad`] over every
/// parameter.
pub fn fd_gradcheck(model: &FusionModel, batch: &[&Triplet], h: f64) -> Result<f64> {
    let analytic = model.loss_and_grad(batch)?.grads.flatten();
    let params = model.flat_params();
    let mut probe = model.clone();
    fd_gradcheck_fn(&params, &analytic, h, |p| {
        probe.set_flat_params(p)?;
        Ok(probe.loss_and_grad_value(batch)?)
    })
}

impl FusionModel {
    fn loss_and_grad_value(&self, batch: &[&Triplet]) -> Result<f64> {
        let mut total = 0.0;
        for t in batch {
            total += super::loss_ic(&self.forward(&t.extreme, &t.dino, &t.event)?, &t.original)?;
        }
        Ok(total / batch.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_toy() {
        // L = sum_i c_i (p_i - t_i)^2, dL/dp_i = 2 c_i (p_i - t_i).
        let c = [1.0, 3.0, 0.5];
        let t = [0.2, -1.0, 4.0];
        let p = [1.0, 2.0, -3.0];
        let g: Vec<f64> = (0..3).map(|i| 2.0 * c[i] * (p[i] - t[i])).collect();
        let err = fd_gradcheck_fn(&p, &g, 1e-4, |q| {
            Ok((0..3).map(|i| c[i] * (q[i] - t[i]).powi(2)).sum())
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(fd_gradcheck_fn(&[1.0], &[0.0], 0.0, |_| Ok(0.0)).unwrap_err().is_contract());
    }
}
