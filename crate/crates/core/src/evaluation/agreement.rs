use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n_items: usize,
    pub percent_agreement: f64,
    pub cohen_kappa: f64,
}

/// Percent agreement and Cohen's kappa for two raters' binary judgments of
/// the same items. Kappa is 1 when chance agreement is 1 (both raters gave
/// every item the same single label).
pub fn acceptability_agreement(a: &[bool], b: &[bool]) -> Result<AgreementStats, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = matches / n;
    let a_yes = a.iter().filter(|x| **x).count() as f64 / n;
    let b_yes = b.iter().filter(|x| **x).count() as f64 / n;
    let p_e = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    let kappa = if (1.0 - p_e).abs() < f64::EPSILON {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(AgreementStats {
        n_items: a.len(),
        percent_agreement: p_o,
        cohen_kappa: kappa,
    })
}
