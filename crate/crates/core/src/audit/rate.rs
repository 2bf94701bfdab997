use crate::error::{Error, Result};
use crate::penalty::{PenaltyKind, PenaltySpec};

/// `(Q, Q', q, q')`: max and min of the upper and of the lower growth exponents.
fn exponents(pen: &PenaltySpec) -> Result<(f64, f64, f64, f64)> {
    let e = match &pen.kind {
        PenaltyKind::PNorm { p } if *p > 1.0 => {
            let q = p / (p - 1.0);
            (q, q, q, q)
        }
        PenaltyKind::PNorm { .. } => return Err(Error::InvalidExponents("p = 1 has no finite dual exponent".into())),
        PenaltyKind::Custom(_) => {
            let x = &pen.exponents;
            (x.upper_max(), x.upper_min(), x.lower_max(), x.lower_min())
        }
    };
    if [e.0, e.1, e.2, e.3].iter().any(|v| !(v.is_finite() && *v > 1.0)) {
        return Err(Error::InvalidExponents(format!("{e:?}")));
    }
    Ok(e)
}

/// Shape of the finite-width error bound with the unknown constant set to one:
/// `M(delta, tau, eta) * max(sqrt(n ln N / N), (n ln N)^{Q/2} / N)` where
/// `M = tau^{Q + 2 + (2 - q' + delta)_+} / eta^{max(q, 3)} * max(tau^{Q-2}, eta^{Q'-2})`.
pub fn theorem_rate_budget(tau: f64, eta: f64, pen: &PenaltySpec, n: usize, n_features: usize, delta: f64) -> Result<f64> {
    let (q_up, q_up_min, q_lo, q_lo_min) = exponents(pen)?;
    if !(tau > 0.0 && eta > 0.0 && delta >= 0.0) || n == 0 || n_features < 2 {
        return Err(Error::Config("need tau, eta > 0, delta >= 0, n >= 1 and N >= 2".into()));
    }
    let m = tau.powf(q_up + 2.0 + (2.0 - q_lo_min + delta).max(0.0)) / eta.powf(q_lo.max(3.0))
        * tau.powf(q_up - 2.0).max(eta.powf(q_up_min - 2.0));
    let nl = n as f64 * (n_features as f64).ln();
    let nf = n_features as f64;
    Ok(m * (nl / nf).sqrt().max(nl.powf(q_up / 2.0) / nf))
}
