//! Reward normalization and the diversity/filling weighting schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Checkpoint position up to which the diversity weight is 1.
    pub s_begin: f64,
    /// Checkpoint position from which the diversity weight is 0.
    pub s_end: f64,
    /// Variance center.
    pub v_c: f64,
    /// Variance sensitivity.
    pub v_s: f64,
    /// Measure the filling-reward variance after normalization instead of on
    /// raw scores.
    pub variance_on_normalized: bool,
    /// Bypass the schedule and use this weight everywhere.
    pub fixed_weight: Option<f64>,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_begin < self.s_end) {
            return Err(Error::Config(format!(
                "schedule needs s_begin < s_end, got {} and {}",
                self.s_begin, self.s_end
            )));
        }
        if !(self.v_s >= 0.0) || !self.v_c.is_finite() || !self.v_s.is_finite() {
            return Err(Error::Config("v_s must be a finite non-negative number and v_c finite".into()));
        }
        if let Some(w) = self.fixed_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("fixed weight {w} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Rescales to `[0, 1]`; a constant vector maps to all `0.5`.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Shape("cannot normalize an empty vector".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value {v}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Diversity weight at checkpoint `index`: 1 up to `s_begin`, 0 from
/// `s_end` on, linear in between.
pub fn weight_at(index: usize, total: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if index >= total {
        return Err(Error::Parameter(format!("checkpoint {index} out of {total}")));
    }
    let s = index as f64;
    Ok(if s <= cfg.s_begin {
        1.0
    } else if s >= cfg.s_end {
        0.0
    } else {
        (cfg.s_end - s) / (cfg.s_end - cfg.s_begin)
    })
}

pub fn population_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Undefined(format!("variance of {} value(s)", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shifts `w` down when filling rewards spread widely and up when they are
/// nearly tied: `clamp(w - logistic((var - v_c) * v_s) + 0.5, 0, 1)`.
pub fn variance_adjust(w: f64, fr_values: &[f64], v_c: f64, v_s: f64) -> Result<f64> {
    let var = population_variance(fr_values)?;
    Ok(adjust_for_variance(w, var, v_c, v_s))
}

pub fn adjust_for_variance(w: f64, var: f64, v_c: f64, v_s: f64) -> f64 {
    (w + (0.5 - logistic((var - v_c) * v_s))).clamp(0.0, 1.0)
}

/// `w * div + (1 - w) * fr`, elementwise.
pub fn unified_rewards(norm_fr: &[f64], norm_div: &[f64], w: f64) -> Result<Vec<f64>> {
    if norm_fr.len() != norm_div.len() {
        return Err(Error::Shape(format!(
            "{} filling rewards vs {} diversity rewards",
            norm_fr.len(),
            norm_div.len()
        )));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Parameter(format!("weight {w} outside [0, 1]")));
    }
    Ok(norm_fr.iter().zip(norm_div).map(|(f, d)| w * d + (1.0 - w) * f).collect())
}

/// Everything computed for one population at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub raw_fr: Vec<f64>,
    pub raw_div: Vec<f64>,
    pub norm_fr: Vec<f64>,
    pub norm_div: Vec<f64>,
    pub weight: f64,
    pub fr_variance: f64,
    pub adjusted_weight: f64,
    pub unified: Vec<f64>,
}

impl RewardBundle {
    pub fn compute(raw_fr: Vec<f64>, raw_div: Vec<f64>, index: usize, total: usize, cfg: &ScheduleConfig) -> Result<Self> {
        let norm_fr = minmax_normalize(&raw_fr)?;
        let norm_div = minmax_normalize(&raw_div)?;
        let weight = weight_at(index, total, cfg)?;
        let var_source = if cfg.variance_on_normalized { &norm_fr } else { &raw_fr };
        let (fr_variance, adjusted_weight) = match cfg.fixed_weight {
            Some(w) => (population_variance(var_source).unwrap_or(0.0), w),
            // A single sample has no spread; the schedule alone decides.
            None if raw_fr.len() < 2 => (0.0, weight),
            None => {
                let var = population_variance(var_source)?;
                (var, adjust_for_variance(weight, var, cfg.v_c, cfg.v_s))
            }
        };
        let unified = unified_rewards(&norm_fr, &norm_div, adjusted_weight)?;
        Ok(RewardBundle { raw_fr, raw_div, norm_fr, norm_div, weight, fr_variance, adjusted_weight, unified })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(s_begin: f64, s_end: f64) -> ScheduleConfig {
        ScheduleConfig { s_begin, s_end, v_c: 0.001, v_s: 50.0, variance_on_normalized: false, fixed_weight: None }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[5.0; 3]).unwrap(), vec![0.5; 3]);
        assert!(matches!(minmax_normalize(&[]), Err(Error::Shape(_))));
        assert!(matches!(minmax_normalize(&[1.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn weight_examples() {
        let c = cfg(2.0, 6.0);
        assert_eq!(weight_at(0, 10, &c).unwrap(), 1.0);
        assert_eq!(weight_at(2, 10, &c).unwrap(), 1.0);
        assert_eq!(weight_at(4, 10, &c).unwrap(), 0.5);
        assert_eq!(weight_at(6, 10, &c).unwrap(), 0.0);
        assert_eq!(weight_at(9, 10, &c).unwrap(), 0.0);
        assert!(matches!(weight_at(1, 10, &cfg(3.0, 3.0)), Err(Error::Config(_))));
        assert!(weight_at(10, 10, &c).is_err());
    }

    #[test]
    fn variance_examples() {
        // population variance of [0, 1] is 0.25
        assert_eq!(variance_adjust(0.3, &[0.0, 1.0], 0.25, 10.0).unwrap(), 0.3);
        let far = variance_adjust(0.8, &[0.0, 1e6], 0.0, 1.0).unwrap();
        assert!((far - 0.3).abs() < 1e-12);
        assert_eq!(variance_adjust(0.2, &[0.0, 1e6], 0.0, 1.0).unwrap(), 0.0);
        let tied = variance_adjust(0.3, &[0.4, 0.4], 10.0, 100.0).unwrap();
        assert!((tied - 0.8).abs() < 1e-12);
        assert_eq!(variance_adjust(0.9, &[0.4, 0.4], 10.0, 100.0).unwrap(), 1.0);
        assert!(matches!(variance_adjust(0.5, &[1.0], 0.0, 1.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn unified_examples() {
        let f = [0.0, 1.0];
        let d = [1.0, 0.0];
        assert_eq!(unified_rewards(&f, &d, 1.0).unwrap(), d.to_vec());
        assert_eq!(unified_rewards(&f, &d, 0.0).unwrap(), f.to_vec());
        assert_eq!(unified_rewards(&f, &d, 0.5).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(unified_rewards(&f, &d[..1], 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn bundle_single_sample_and_fixed_weight() {
        let c = cfg(0.5, 1.5);
        let b = RewardBundle::compute(vec![0.3], vec![1.0], 0, 3, &c).unwrap();
        assert_eq!(b.unified, vec![0.5]);
        let fixed = ScheduleConfig { fixed_weight: Some(0.0), ..c };
        let b = RewardBundle::compute(vec![0.1, 0.3, 0.2], vec![1.0, 0.0, 0.5], 0, 3, &fixed).unwrap();
        assert_eq!(b.unified, b.norm_fr);
    }

    proptest! {
        #[test]
        fn normalize_range_and_ranks(xs in prop::collection::vec(-1e3f64..1e3, 2..20)) {
            let out = minmax_normalize(&xs).unwrap();
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(max > min);
            prop_assert_eq!(out.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(out.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if xs[i] < xs[j] {
                        prop_assert!(out[i] < out[j]);
                    }
                }
            }
        }

        #[test]
        fn weight_nonincreasing(b in 0.0f64..5.0, span in 0.1f64..5.0, total in 1usize..20) {
            let c = cfg(b, b + span);
            let ws: Vec<f64> = (0..total).map(|i| weight_at(i, total, &c).unwrap()).collect();
            prop_assert!(ws.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(ws.iter().all(|w| (0.0..=1.0).contains(w)));
        }

        #[test]
        fn adjust_nonincreasing_in_variance(w in 0.0f64..1.0, v1 in 0.0f64..1.0, v2 in 0.0f64..1.0, vc in 0.0f64..0.5, vs in 0.0f64..100.0) {
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            prop_assert!(adjust_for_variance(w, hi, vc, vs) <= adjust_for_variance(w, lo, vc, vs));
        }

        #[test]
        fn unified_bounded(fr in prop::collection::vec(0.0f64..1.0, 3), div in prop::collection::vec(0.0f64..1.0, 3), w in 0.0f64..=1.0) {
            let u = unified_rewards(&fr, &div, w).unwrap();
            prop_assert!(u.iter().all(|x| (0.0..=1.0 + 1e-15).contains(x)));
        }
    }
}
