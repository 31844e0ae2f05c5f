//! Learning-rate schedule helpers. The Adam update itself lives on
//! [`crate::numerics::param::ParamStore`].

use crate::error::{Error, Result};

/// Inverse-sqrt schedule with linear warmup:
/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
///
/// Rises linearly for `warmup` steps, peaks at step == warmup, then decays
/// as step^-0.5. `step` is 1-based.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 || warmup == 0 || d_model == 0 {
        return Err(Error::Invalid(format!(
            "noam_lr: step {step}, d_model {d_model}, warmup {warmup} must all be positive"
        )));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_value() {
        // d_model = 512, warmup = 8000. Independent form: 512^-0.5 = 2^-4.5
        // and 8000^-1.5 = 1 / (8000 * sqrt(8000)); the product is ~6.18e-8.
        let lr = noam_lr(1, 512, 8000).unwrap();
        let reference = 2f64.powf(-4.5) / (8000.0 * 8000f64.sqrt());
        assert!((lr - reference).abs() < 1e-18, "{lr} vs {reference}");
        assert!((lr / 1e-8 - 6.18).abs() < 0.01, "{lr}");
    }

    #[test]
    fn peaks_at_warmup_then_decays() {
        let w = 400;
        let before = noam_lr(w - 1, 64, w).unwrap();
        let peak = noam_lr(w, 64, w).unwrap();
        let after = noam_lr(w + 1, 64, w).unwrap();
        assert!(before < peak);
        assert!(after < peak);
        // monotone rise up to warmup
        let mut prev = 0.0;
        for s in 1..=w {
            let lr = noam_lr(s, 64, w).unwrap();
            assert!(lr > prev);
            prev = lr;
        }
        // monotone decay after
        let mut prev = peak;
        for s in w + 1..w + 200 {
            let lr = noam_lr(s, 64, w).unwrap();
            assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn rejects_zero_arguments() {
        assert!(noam_lr(0, 64, 10).is_err());
        assert!(noam_lr(1, 0, 10).is_err());
        assert!(noam_lr(1, 64, 0).is_err());
    }
}
