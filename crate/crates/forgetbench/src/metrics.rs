//! The three omega summary metrics over per-session accuracy curves.
//!
//! For a stream of T sessions with accuracy curves measured after each
//! session i = 2..T:
//!
//!   omega_base = (1/(T-1)) * sum_i alpha_base_i / alpha_ideal
//!   omega_new  = (1/(T-1)) * sum_i alpha_new_i
//!   omega_all  = (1/(T-1)) * sum_i alpha_all_i / alpha_ideal
//!
//! omega_new is deliberately not normalized by alpha_ideal. None of the
//! metrics are clamped at 1: a model that beats the offline reference
//! produces values above 1 and they are reported as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub t_sessions: usize,
    pub alpha_ideal: f64,
    /// alpha_base_i for i = 2..T (accuracy on the base set after session i).
    pub alpha_base: Vec<f64>,
    /// alpha_new_i for i = 2..T (accuracy on session i right after learning it).
    pub alpha_new: Vec<f64>,
    /// alpha_all_i for i = 2..T (accuracy over everything seen so far).
    pub alpha_all: Vec<f64>,
    pub omega_base: f64,
    pub omega_new: f64,
    pub omega_all: f64,
}

impl MetricsReport {
    pub fn from_curves(
        t_sessions: usize,
        alpha_ideal: f64,
        alpha_base: Vec<f64>,
        alpha_new: Vec<f64>,
        alpha_all: Vec<f64>,
    ) -> Result<Self> {
        let omega_base = omega_base(&alpha_base, alpha_ideal, t_sessions)?;
        let omega_new = omega_new(&alpha_new, t_sessions)?;
        let omega_all = omega_all(&alpha_all, alpha_ideal, t_sessions)?;
        Ok(MetricsReport {
            t_sessions,
            alpha_ideal,
            alpha_base,
            alpha_new,
            alpha_all,
            omega_base,
            omega_new,
            omega_all,
        })
    }
}

fn check_len(values: &[f64], t_sessions: usize, what: &str) -> Result<()> {
    if t_sessions < 2 {
        return Err(Error::Input(format!("T must be >= 2, got {t_sessions}")));
    }
    if values.len() != t_sessions - 1 {
        return Err(Error::Input(format!(
            "{what} has {} entries, expected T-1 = {}",
            values.len(),
            t_sessions - 1
        )));
    }
    Ok(())
}

/// Mean retention of the first session, normalized by the offline reference.
pub fn omega_base(alpha_base: &[f64], alpha_ideal: f64, t_sessions: usize) -> Result<f64> {
    check_len(alpha_base, t_sessions, "alpha_base")?;
    if alpha_ideal <= 0.0 {
        return Err(Error::Input(format!(
            "alpha_ideal must be > 0, got {alpha_ideal}"
        )));
    }
    Ok(alpha_base.iter().map(|a| a / alpha_ideal).sum::<f64>() / (t_sessions - 1) as f64)
}

/// Mean immediate accuracy on each new session; no normalization.
pub fn omega_new(alpha_new: &[f64], t_sessions: usize) -> Result<f64> {
    check_len(alpha_new, t_sessions, "alpha_new")?;
    Ok(alpha_new.iter().sum::<f64>() / (t_sessions - 1) as f64)
}

/// Mean accuracy over everything seen so far, normalized by the reference.
pub fn omega_all(alpha_all: &[f64], alpha_ideal: f64, t_sessions: usize) -> Result<f64> {
    check_len(alpha_all, t_sessions, "alpha_all")?;
    if alpha_ideal <= 0.0 {
        return Err(Error::Input(format!(
            "alpha_ideal must be > 0, got {alpha_ideal}"
        )));
    }
    Ok(alpha_all.iter().map(|a| a / alpha_ideal).sum::<f64>() / (t_sessions - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_retention_is_one() {
        let ideal = 0.83;
        let curve = vec![ideal; 4];
        assert!((omega_base(&curve, ideal, 5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn omega_base_direct_arithmetic() {
        // T = 3, ideal 0.5, curve [0.4, 0.3] -> (0.8 + 0.6) / 2 = 0.7
        let v = omega_base(&[0.4, 0.3], 0.5, 3).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_retention_is_zero() {
        assert_eq!(omega_base(&[0.0, 0.0, 0.0], 0.9, 4).unwrap(), 0.0);
    }

    #[test]
    fn omega_new_is_plain_mean() {
        assert!((omega_new(&[1.0, 1.0], 3).unwrap() - 1.0).abs() < 1e-12);
        assert!((omega_new(&[0.2, 0.4, 0.6], 4).unwrap() - 0.4).abs() < 1e-12);
        // single-session stream (T = 2) equals alpha_new_2
        assert!((omega_new(&[0.31], 2).unwrap() - 0.31).abs() < 1e-12);
    }

    #[test]
    fn omega_all_unclamped_above_one() {
        // values exceeding alpha_ideal push the metric above 1; it stays there
        let v = omega_all(&[0.95, 0.9], 0.9, 3).unwrap();
        assert!(v > 1.0, "omega_all clamped: {v}");
    }

    #[test]
    fn omega_all_constant_at_ideal_is_one_and_zeros_are_zero() {
        assert!((omega_all(&[0.6, 0.6], 0.6, 3).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(omega_all(&[0.0, 0.0], 0.6, 3).unwrap(), 0.0);
    }

    #[test]
    fn bad_lengths_and_bad_ideal_are_input_errors() {
        assert!(omega_base(&[0.1], 0.5, 3).is_err());
        assert!(omega_base(&[0.1, 0.2], 0.0, 3).is_err());
        assert!(omega_new(&[0.1, 0.2, 0.3], 3).is_err());
        assert!(omega_all(&[0.1, 0.2], -1.0, 3).is_err());
    }

    #[test]
    fn omega_base_is_linear_in_the_curve() {
        let curve = [0.5, 0.25, 0.125];
        let base = omega_base(&curve, 0.8, 4).unwrap();
        let scaled: Vec<f64> = curve.iter().map(|a| a * 0.3).collect();
        let scaled_base = omega_base(&scaled, 0.8, 4).unwrap();
        assert!((scaled_base - 0.3 * base).abs() < 1e-12);
    }

    #[test]
    fn report_preserves_ordered_curves() {
        let r = MetricsReport::from_curves(3, 0.5, vec![0.4, 0.3], vec![0.9, 0.8], vec![0.5, 0.45])
            .unwrap();
        assert_eq!(r.alpha_base, vec![0.4, 0.3]);
        assert!((r.omega_base - 0.7).abs() < 1e-12);
        assert!((r.omega_new - 0.85).abs() < 1e-12);
        assert!((r.omega_all - 0.95).abs() < 1e-12);
    }
}
