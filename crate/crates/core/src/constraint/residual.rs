use crate::error::{check_len, CdimError, Result};

/// `y - A xhat`.
pub fn residual_additive(y: &[f64], a_xhat: &[f64]) -> Result<Vec<f64>> {
    check_len("prediction", y.len(), a_xhat.len())?;
    Ok(y.iter().zip(a_xhat).map(|(a, b)| a - b).collect())
}

/// Pearson residuals `s (y - A xhat) / sqrt(s max(A xhat, floor))` for
/// `s y ~ Poisson(s A x)`.
pub fn residual_pearson(y: &[f64], a_xhat: &[f64], scale: f64, floor: f64) -> Result<Vec<f64>> {
    check_len("prediction", y.len(), a_xhat.len())?;
    if !(scale > 0.0 && floor > 0.0) {
        return Err(CdimError::param("Pearson residuals need scale > 0 and floor > 0"));
    }
    Ok(y.iter()
        .zip(a_xhat)
        .map(|(yi, ai)| scale * (yi - ai) / (scale * ai.max(floor)).sqrt())
        .collect())
}

/// Mean and population variance (`1/d` normalisation).
pub fn empirical_moments(r: &[f64]) -> Result<(f64, f64)> {
    if r.len() < 2 {
        return Err(CdimError::param(format!(
            "empirical moments need at least 2 residuals, got {}",
            r.len()
        )));
    }
    let d = r.len() as f64;
    let mean = r.iter().sum::<f64>() / d;
    let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    Ok((mean, var))
}
