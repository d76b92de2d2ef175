//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use super::vault::ParamVault;
use super::NetError;

/// Outcome of a gradient check: worst relative error and its location.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares analytic gradients to central finite differences.
///
/// `analytic` must run forward + backward and leave gradients in the vault;
/// `loss` must evaluate the same scalar without touching gradients. The
/// relative error per entry is |a - fd| / max(|a| + |fd|, 1e-6).
pub fn grad_check(
    vault: &mut ParamVault,
    step: f64,
    mut loss: impl FnMut(&ParamVault) -> f64,
    mut analytic: impl FnMut(&mut ParamVault) -> Result<f64, NetError>,
) -> Result<GradCheckReport, NetError> {
    vault.zero_grads();
    let base = analytic(vault)?;
    if !base.is_finite() {
        return Err(NetError::NonFinite("gradient-check loss".into()));
    }
    let analytic_grads: Vec<Tensor> = (0..vault.len()).map(|i| vault.grad(i).clone()).collect();

    let mut per_param = Vec::with_capacity(vault.len());
    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();
    for slot in 0..vault.len() {
        let n = vault.value(slot).len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = vault.value(slot).data[i];
            vault.value_mut(slot).data[i] = orig + step;
            let up = loss(vault);
            vault.value_mut(slot).data[i] = orig - step;
            let down = loss(vault);
            vault.value_mut(slot).data[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NetError::NonFinite(format!("fd probe of {}", vault.name(slot))));
            }
            let fd = (up - down) / (2.0 * step);
            let a = analytic_grads[slot].data[i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        per_param.push((vault.name(slot).to_string(), worst));
        if worst > max_rel_err {
            max_rel_err = worst;
            worst_param = vault.name(slot).to_string();
        }
    }
    Ok(GradCheckReport { max_rel_err, worst_param, per_param })
}
