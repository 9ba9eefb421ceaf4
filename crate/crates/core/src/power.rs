//! Lower bound on the power of the adjusted test.
//!
//! With independent `X_k ~ N(mu_1, sigma_k^2)` in the treated group and
//! `N(mu_0, sigma_k^2)` in the control group, the event that every treated
//! entry exceeds every control entry makes `T(X)` the largest permutation
//! value, so any nontrivial adjusted test rejects on it. Its probability is
//!
//! ```text
//! int_0^1 prod_j Phi((delta - F0^{-1}(t)) / sigma_j) dt,   delta = mu_1 - mu_0,
//! ```
//!
//! where `F0(x) = prod_k Phi(x / sigma_k)` is the distribution function of the
//! largest centered control entry and `j` runs over treated clusters.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{adaptive_quadrature, phi, std_normal_pdf, std_normal_quantile, Tolerance};
use crate::permkit::Design;

/// Endpoint guard for the integral over `t`.
pub const ENDPOINT_GUARD: f64 = 1e-10;

/// Effect size and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpec {
    delta: f64,
    sigmas_treated: Vec<f64>,
    sigmas_control: Vec<f64>,
}

impl PowerSpec {
    /// Validates that `delta` is finite and all standard deviations positive.
    pub fn new(delta: f64, sigmas_treated: Vec<f64>, sigmas_control: Vec<f64>) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::Domain { what: "delta", value: delta });
        }
        if sigmas_treated.is_empty() || sigmas_control.is_empty() {
            return Err(Error::Contract("both groups need at least one standard deviation"));
        }
        for &s in sigmas_treated.iter().chain(&sigmas_control) {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain { what: "standard deviation", value: s });
            }
        }
        Ok(Self { delta, sigmas_treated, sigmas_control })
    }

    /// Effect size.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Treated-group standard deviations.
    pub fn sigmas_treated(&self) -> &[f64] {
        &self.sigmas_treated
    }

    /// Control-group standard deviations.
    pub fn sigmas_control(&self) -> &[f64] {
        &self.sigmas_control
    }

    /// Same standard deviations, different effect size.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(delta, self.sigmas_treated.clone(), self.sigmas_control.clone())
    }
}

/// `F0(x) = prod_k Phi(x / sigma_k)` over control standard deviations.
pub fn f0_cdf(x: f64, spec: &PowerSpec) -> f64 {
    spec.sigmas_control.iter().map(|s| phi(x / s)).product()
}

/// Inverse of [`f0_cdf`], accurate to `|F0(x) - t| <= 1e-10`.
pub fn f0_inverse(t: f64, spec: &PowerSpec) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain { what: "f0_inverse level", value: t });
    }
    let q0 = spec.sigmas_control.len() as f64;
    let smax = spec.sigmas_control.iter().copied().fold(0.0, f64::max);
    // Every root of prod Phi(x/s_k) = t lies between the roots for the
    // smallest and largest s, both of which are multiples of z.
    let z = std_normal_quantile(libm::pow(t, 1.0 / q0))?;
    let mut half = smax * (libm::fabs(z) + 1.0);
    let (mut lo, mut hi) = (-half, half);
    let mut expansions = 0;
    while !(f0_cdf(lo, spec) <= t && f0_cdf(hi, spec) >= t) {
        half *= 2.0;
        lo = -half;
        hi = half;
        expansions += 1;
        if expansions > 64 {
            return Err(Error::Bracket { lo, hi });
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f = f0_cdf(mid, spec) - t;
        if libm::fabs(f) <= 1e-13 {
            return Ok(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Density of `F0`.
pub fn f0_density(x: f64, spec: &PowerSpec) -> f64 {
    let s = &spec.sigmas_control;
    (0..s.len())
        .map(|k| {
            let others: f64 = s.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, sj)| phi(x / sj)).product();
            std_normal_pdf(x / s[k]) / s[k] * others
        })
        .sum()
}

/// Probability that every treated entry exceeds every control entry.
///
/// The integral over `t` in `(g, 1 - g)`, `g = 1e-10`, is evaluated after
/// the substitution `t = F0(x)`, which turns the steep integrand near
/// `t = 0` into a smooth one on `[F0^-1(g), F0^-1(1 - g)]`. The integrand
/// tends to 1 as `t -> 0` and to 0 as `t -> 1`, so the lower end is added
/// back as `g` and the total truncation error stays below `2g`.
pub fn power_lower_bound(spec: &PowerSpec) -> Result<f64> {
    let g = ENDPOINT_GUARD;
    let tol = Tolerance::new(1e-10, 0.0, 200_000)?;
    let lo = f0_inverse(g, spec)?;
    let hi = f0_inverse(1.0 - g, spec)?;
    let body = adaptive_quadrature(
        |x| spec.sigmas_treated.iter().map(|s| phi((spec.delta - x) / s)).product::<f64>() * f0_density(x, spec),
        lo,
        hi,
        tol,
    )?;
    let v = body + g;
    Ok(v.clamp(0.0, 1.0))
}

/// The bound under local alternatives: the same integral with `delta` the
/// drift and `sigmas` the standard deviations at the null, ordered
/// treated-first.
pub fn local_power_bound(delta: f64, sigmas: &[f64], design: &Design) -> Result<f64> {
    if sigmas.len() != design.q() {
        return Err(Error::Shape { expected: design.q(), found: sigmas.len() });
    }
    let (t, c) = sigmas.split_at(design.q1());
    power_lower_bound(&PowerSpec::new(delta, t.to_vec(), c.to_vec())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(delta: f64, t: &[f64], c: &[f64]) -> PowerSpec {
        PowerSpec::new(delta, t.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(PowerSpec::new(0.0, vec![1.0], vec![0.0]).is_err());
        assert!(PowerSpec::new(f64::NAN, vec![1.0], vec![1.0]).is_err());
        assert!(PowerSpec::new(0.0, vec![], vec![1.0]).is_err());
    }

    #[test]
    fn f0_examples() {
        let s = spec(0.0, &[1.0], &[1.0, 1.0, 1.0]);
        assert!((f0_cdf(0.0, &s) - 0.125).abs() < 1e-15);
        assert!(f0_inverse(0.125, &s).unwrap().abs() < 1e-9);
        let s = spec(0.0, &[1.0], &[2.0]);
        assert!(f0_inverse(0.5, &s).unwrap().abs() < 1e-9);
        assert!(f0_inverse(0.0, &s).is_err());
        assert!(f0_inverse(1.0, &s).is_err());
    }

    #[test]
    fn f0_inverse_extreme_ratios() {
        let s = spec(0.0, &[1.0], &[1.0, 100.0, 0.01, 20.0]);
        for &t in &[1e-9, 1e-4, 0.3, 0.9, 1.0 - 1e-9] {
            let x = f0_inverse(t, &s).unwrap();
            assert!((f0_cdf(x, &s) - t).abs() <= 1e-10, "t = {t}");
        }
    }

    #[test]
    fn exchangeable_point() {
        let s = spec(0.0, &[1.0; 4], &[1.0; 4]);
        assert!((power_lower_bound(&s).unwrap() - 1.0 / 70.0).abs() < 1e-6);
    }

    #[test]
    fn one_versus_one_closed_form() {
        let s = spec(2.0, &[1.0], &[1.0]);
        let expect = phi(2.0 / libm::sqrt(2.0));
        assert!((power_lower_bound(&s).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn large_effect() {
        let s = spec(50.0, &[1.0; 4], &[1.0; 4]);
        assert!(power_lower_bound(&s).unwrap() >= 0.9999);
    }

    #[test]
    fn local_matches_global() {
        let d = Design::new(2, 3).unwrap();
        let sig = [1.0, 2.0, 0.5, 1.5, 3.0];
        let a = local_power_bound(0.7, &sig, &d).unwrap();
        let b = power_lower_bound(&spec(0.7, &sig[..2], &sig[2..])).unwrap();
        assert_eq!(a, b);
        assert!(local_power_bound(0.7, &sig[..4], &d).is_err());
    }
}
