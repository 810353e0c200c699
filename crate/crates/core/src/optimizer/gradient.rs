//! Derivative-free gradient estimators for forward-only backends.

use rand::Rng;

use super::TuneError;

fn finite(v: f64, what: &str) -> Result<f64, TuneError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TuneError::NonFiniteLoss {
            iteration: None,
            detail: format!("{what} evaluated to {v}"),
        })
    }
}

/// Central differences with step `h` per free parameter (12 evaluations).
/// Perturbed points are not projected.
pub fn estimate_gradient_fd<F>(phi: &[f64; 6], h: f64, mut loss: F) -> Result<[f64; 6], TuneError>
where
    F: FnMut(&[f64; 6]) -> Result<f64, TuneError>,
{
    let mut grad = [0.0; 6];
    for i in 0..6 {
        let mut up = *phi;
        let mut dn = *phi;
        up[i] += h;
        dn[i] -= h;
        let lu = finite(loss(&up)?, "forward difference")?;
        let ld = finite(loss(&dn)?, "backward difference")?;
        grad[i] = (lu - ld) / (2.0 * h);
    }
    Ok(grad)
}

/// Draws a Rademacher direction in `{-1, +1}^6`.
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> [f64; 6] {
    std::array::from_fn(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
}

/// Two-evaluation simultaneous-perturbation estimate with step `c`.
pub fn estimate_gradient_spsa<F, R>(
    phi: &[f64; 6],
    c: f64,
    rng: &mut R,
    mut loss: F,
) -> Result<[f64; 6], TuneError>
where
    F: FnMut(&[f64; 6]) -> Result<f64, TuneError>,
    R: Rng + ?Sized,
{
    let delta = rademacher(rng);
    let up: [f64; 6] = std::array::from_fn(|i| phi[i] + c * delta[i]);
    let dn: [f64; 6] = std::array::from_fn(|i| phi[i] - c * delta[i]);
    let diff = (finite(loss(&up)?, "positive perturbation")? - finite(loss(&dn)?, "negative perturbation")?)
        / (2.0 * c);
    // 1 / delta_i == delta_i for Rademacher entries.
    Ok(delta.map(|d| diff * d))
}
