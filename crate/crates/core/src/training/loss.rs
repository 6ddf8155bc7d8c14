use crate::error::{Error, Result};

/// Probabilities are mapped to logits clamped to this magnitude before the loss is taken.
const MAX_LOGIT: f64 = 40.0;

/// `ỹ = y(1 − α) + α/m`.
pub fn smooth_labels(y: &[bool], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("smoothing alpha {alpha} outside [0, 1]")));
    }
    let m = y.len() as f64;
    Ok(y.iter()
        .map(|&yi| if yi { 1.0 - alpha + alpha / m } else { alpha / m })
        .collect())
}

/// Binary cross-entropy summed over labels, from logits.
pub fn bce_with_logits(targets: &[f64], logits: &[f64]) -> Result<f64> {
    if targets.len() != logits.len() {
        return Err(Error::shape(format!(
            "{} targets for {} logits",
            targets.len(),
            logits.len()
        )));
    }
    Ok(targets
        .iter()
        .zip(logits)
        .map(|(&y, &z)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum())
}

/// Binary cross-entropy summed over labels, from probabilities. Exact 0 or 1
/// probabilities give a large finite loss rather than infinity or NaN.
pub fn bce_loss(targets: &[f64], probs: &[f64]) -> Result<f64> {
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| (p.ln() - (-p).ln_1p()).clamp(-MAX_LOGIT, MAX_LOGIT))
        .collect();
    bce_with_logits(targets, &logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn smoothing_examples() {
        let y = [true, false, true];
        assert_eq!(smooth_labels(&y, 0.0).unwrap(), vec![1.0, 0.0, 1.0]);
        let mut y50 = vec![false; 50];
        y50[0] = true;
        let s = smooth_labels(&y50, 0.1).unwrap();
        assert_abs_diff_eq!(s[0], 0.902, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.002, epsilon = 1e-15);
        assert!(smooth_labels(&y, 1.5).is_err());
        assert!(smooth_labels(&y, -0.1).is_err());
    }

    #[test]
    fn bce_examples() {
        let m = 7;
        let targets = vec![1.0, 0.0, 0.3, 1.0, 0.0, 0.5, 0.9];
        assert_abs_diff_eq!(
            bce_loss(&targets, &vec![0.5; m]).unwrap(),
            m as f64 * 2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(bce_loss(&[1.0], &[0.5]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        let extreme = bce_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(extreme.is_finite() && extreme > 70.0);
    }

    #[test]
    fn minimum_is_entropy() {
        let y = [0.902, 0.002, 0.5];
        let entropy: f64 = y.iter().map(|&p: &f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln()).sum();
        assert_abs_diff_eq!(bce_loss(&y, &y).unwrap(), entropy, epsilon = 1e-12);
        for delta in [-0.01, 0.01] {
            let moved: Vec<f64> = y.iter().map(|p| p + delta * p * (1.0 - p)).collect();
            assert!(bce_loss(&y, &moved).unwrap() > entropy);
        }
    }
}
