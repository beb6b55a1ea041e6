use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_MAX: f32 = 80.0;
pub const DEFAULT_SIGMA_MIN: f32 = 0.5;

/// Strictly decreasing noise levels ending in 0; `num_steps = len - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    sigmas: Vec<f32>,
}

impl Schedule {
    pub fn new(sigmas: Vec<f32>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        if !(sigmas[0] > 0.0 && sigmas[0].is_finite()) {
            return Err(Error::InvalidConfig("sigma_max must be positive and finite".into()));
        }
        if *sigmas.last().unwrap() != 0.0 {
            return Err(Error::InvalidConfig("schedule must end at 0".into()));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidConfig("schedule must be strictly decreasing".into()));
        }
        Ok(Schedule { sigmas })
    }

    pub fn sigmas(&self) -> &[f32] {
        &self.sigmas
    }

    pub fn num_steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma_max(&self) -> f32 {
        self.sigmas[0]
    }
}

/// `num_steps` geometrically spaced levels from `sigma_max` down to
/// `sigma_min`, then a terminal 0.
pub fn make_schedule(num_steps: usize, sigma_max: f32, sigma_min: f32) -> Result<Schedule> {
    if num_steps == 0 {
        return Err(Error::InvalidConfig("num_steps must be >= 1".into()));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}"
        )));
    }
    let mut sigmas = Vec::with_capacity(num_steps + 1);
    if num_steps == 1 {
        sigmas.push(sigma_max);
    } else {
        let (lo, hi) = (f64::from(sigma_min).ln(), f64::from(sigma_max).ln());
        let last = (num_steps - 1) as f64;
        for i in 0..num_steps {
            let t = i as f64 / last;
            sigmas.push((hi + t * (lo - hi)).exp() as f32);
        }
        sigmas[0] = sigma_max;
        sigmas[num_steps - 1] = sigma_min;
    }
    sigmas.push(0.0);
    Schedule::new(sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_step() {
        assert_eq!(make_schedule(1, 80.0, 0.5).unwrap().sigmas(), &[80.0, 0.0]);
    }

    #[test]
    fn three_steps_geometric() {
        let s = make_schedule(3, 80.0, 0.5).unwrap();
        let g = (80.0f64 * 0.5).sqrt() as f32;
        assert_eq!(s.sigmas().len(), 4);
        assert_eq!(s.sigmas()[0], 80.0);
        assert!((s.sigmas()[1] - g).abs() <= 1e-5 * g);
        assert_eq!(s.sigmas()[2], 0.5);
        assert_eq!(s.sigmas()[3], 0.0);
        let r1 = s.sigmas()[0] / s.sigmas()[1];
        let r2 = s.sigmas()[1] / s.sigmas()[2];
        assert!((r1 - r2).abs() <= 1e-5 * r1);
    }

    #[test]
    fn hundred_steps() {
        let s = make_schedule(100, 80.0, 0.5).unwrap();
        assert_eq!(s.sigmas().len(), 101);
        assert_eq!(s.num_steps(), 100);
    }

    #[test]
    fn invalid_bounds() {
        assert!(make_schedule(0, 80.0, 0.5).is_err());
        assert!(make_schedule(3, 0.5, 80.0).is_err());
        assert!(make_schedule(3, 1.0, 0.0).is_err());
        assert!(make_schedule(3, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn strictly_decreasing_with_terminal_zero(n in 1usize..300, lo in 1e-3f32..10.0, span in 1.001f32..1e3) {
            let hi = lo * span;
            let s = make_schedule(n, hi, lo).unwrap();
            prop_assert_eq!(s.num_steps(), n);
            prop_assert_eq!(*s.sigmas().last().unwrap(), 0.0);
            prop_assert!(s.sigmas().windows(2).all(|w| w[0] > w[1]));
        }
    }
}
