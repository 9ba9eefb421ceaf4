//! Special functions and small numerical routines.
//!
//! Only what the inference code needs: the standard normal distribution
//! function and its inverse, the Student-t distribution function and its
//! inverse, adaptive Simpson quadrature and bisection.

use alloc::vec::Vec;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Stopping rule for iterative routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    abs_tol: f64,
    rel_tol: f64,
    max_iter: usize,
}

impl Tolerance {
    /// Builds a tolerance; `abs_tol > 0`, `rel_tol >= 0`, `max_iter >= 1`.
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        if !(abs_tol > 0.0 && abs_tol.is_finite()) {
            return Err(Error::Domain { what: "abs_tol", value: abs_tol });
        }
        if !(rel_tol >= 0.0 && rel_tol.is_finite()) {
            return Err(Error::Domain { what: "rel_tol", value: rel_tol });
        }
        if max_iter == 0 {
            return Err(Error::Domain { what: "max_iter", value: 0.0 });
        }
        Ok(Self { abs_tol, rel_tol, max_iter })
    }

    /// Absolute tolerance.
    pub fn abs_tol(&self) -> f64 {
        self.abs_tol
    }

    /// Relative tolerance.
    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    /// Iteration (or subdivision) budget.
    pub fn max_iter(&self) -> usize {
        self.max_iter
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs_tol: 1e-9, rel_tol: 0.0, max_iter: 100_000 }
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Standard normal distribution function without input checks.
///
/// Infinite arguments map to 0 or 1 and NaN propagates. Computed from the
/// complementary error function so that both tails keep full relative
/// accuracy.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal distribution function Φ(x) for finite `x`.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain { what: "std_normal_cdf", value: x });
    }
    Ok(phi(x))
}

/// Inverse of the standard normal distribution function, `p` in (0, 1).
///
/// Wichura's AS241 rational approximation followed by one Newton step; falls
/// back to bisection if the polished value misses by more than 1e-12.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain { what: "std_normal_quantile", value: p });
    }
    let mut x = as241(p);
    let dens = std_normal_pdf(x);
    if dens > 0.0 {
        let step = (phi(x) - p) / dens;
        if step.is_finite() {
            x -= step;
        }
    }
    if libm::fabs(phi(x) - p) <= 1e-12 {
        return Ok(x);
    }
    let tol = Tolerance::new(1e-15, 0.0, 400)?;
    bisect_root(|z| phi(z) - p, -40.0, 40.0, tol)
}

fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if libm::fabs(q) <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
                + 6.726_577_092_700_87e4)
                * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_854_5e3 * r + 2.872_908_573_572_194_3e4) * r
                + 3.930_789_580_009_271e4)
                * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = libm::sqrt(-libm::log(tail));
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_879e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Regularized incomplete beta function I_x(a, b) for a, b > 0, x in [0, 1].
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain { what: "incomplete beta shape", value: a.min(b) });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain { what: "incomplete beta argument", value: x });
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x)? / b)
    }
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            return Ok(h);
        }
    }
    Err(Error::Numerical { what: "incomplete beta continued fraction", partial: h })
}

/// Student-t distribution function with `df >= 1` degrees of freedom.
pub fn student_t_cdf(x: f64, df: u32) -> Result<f64> {
    if df < 1 {
        return Err(Error::Domain { what: "student_t_cdf df", value: 0.0 });
    }
    if x.is_nan() {
        return Err(Error::Domain { what: "student_t_cdf", value: x });
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let nu = df as f64;
    let x2 = x * x;
    // Two-sided tail mass P(|T| > |x|), computed on whichever side keeps precision.
    let two_tail = if x2 < nu {
        1.0 - regularized_incomplete_beta(0.5, 0.5 * nu, x2 / (nu + x2))?
    } else {
        regularized_incomplete_beta(0.5 * nu, 0.5, nu / (nu + x2))?
    };
    let upper = 0.5 * two_tail;
    Ok(if x > 0.0 { 1.0 - upper } else { upper })
}

fn student_t_pdf(x: f64, nu: f64) -> f64 {
    let ln = libm::lgamma(0.5 * (nu + 1.0))
        - libm::lgamma(0.5 * nu)
        - 0.5 * libm::log(nu * core::f64::consts::PI)
        - 0.5 * (nu + 1.0) * libm::log1p(x * x / nu);
    libm::exp(ln)
}

/// Inverse Student-t distribution function, `p` in (0, 1), `df >= 1`.
pub fn student_t_quantile(p: f64, df: u32) -> Result<f64> {
    if df < 1 {
        return Err(Error::Domain { what: "student_t_quantile df", value: 0.0 });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain { what: "student_t_quantile", value: p });
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let z = std_normal_quantile(p)?;
    let mut lo = z.min(0.0) * 2.0 - 1.0;
    let mut hi = z.max(0.0) * 2.0 + 1.0;
    let mut guard = 0;
    while student_t_cdf(lo, df)? > p {
        lo *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Numerical { what: "student_t_quantile bracket", partial: lo });
        }
    }
    while student_t_cdf(hi, df)? < p {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Numerical { what: "student_t_quantile bracket", partial: hi });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if student_t_cdf(mid, df)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * libm::fabs(mid).max(1.0) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let dens = student_t_pdf(x, df as f64);
    if dens > 0.0 {
        let candidate = x - (student_t_cdf(x, df)? - p) / dens;
        if candidate > lo && candidate < hi {
            x = candidate;
        }
    }
    Ok(x)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Intervals are halved until the Simpson estimates on the two halves agree
/// with the whole to within `15 * local_tol`, where the local tolerance is
/// split evenly between halves. `tol.max_iter()` bounds the number of
/// subdivisions; on exhaustion the partial sum is returned inside the error.
pub fn adaptive_quadrature<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain { what: "quadrature limits", value: if a.is_finite() { b } else { a } });
    }
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    struct Panel {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    }
    let simpson = |a: f64, b: f64, fa: f64, fm: f64, fb: f64| (b - a) / 6.0 * (fa + 4.0 * fm + fb);

    let fa = f(lo);
    let fb = f(hi);
    let fm = f(0.5 * (lo + hi));
    let mut stack: Vec<Panel> = Vec::with_capacity(64);
    stack.push(Panel {
        a: lo,
        b: hi,
        fa,
        fm,
        fb,
        whole: simpson(lo, hi, fa, fm, fb),
        tol: tol.abs_tol(),
        depth: 0,
    });
    let mut total = 0.0;
    let mut splits = 0usize;
    let mut exhausted = false;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let diff = left + right - p.whole;
        let local = p.tol.max(tol.rel_tol() * libm::fabs(left + right));
        // Depth 4 minimum guards against a lucky agreement on the coarse panel.
        if (p.depth >= 4 && libm::fabs(diff) <= 15.0 * local) || p.depth >= 60 || exhausted {
            total += left + right + diff / 15.0;
            continue;
        }
        splits += 1;
        if splits > tol.max_iter() {
            exhausted = true;
            total += left + right + diff / 15.0;
            continue;
        }
        stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right, tol: 0.5 * p.tol, depth: p.depth + 1 });
        stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left, tol: 0.5 * p.tol, depth: p.depth + 1 });
    }
    if exhausted || !total.is_finite() {
        return Err(Error::Numerical { what: "adaptive_quadrature", partial: sign * total });
    }
    Ok(sign * total)
}

/// Bisection for a root of a function with a sign change on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `abs_tol + rel_tol * |mid|`.
pub fn bisect_root<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() || (flo > 0.0) == (fhi > 0.0) {
        return Err(Error::Bracket { lo, hi });
    }
    for _ in 0..tol.max_iter() {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol.abs_tol() + tol.rel_tol() * libm::fabs(mid) || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if hi - lo <= tol.abs_tol() + tol.rel_tol() * libm::fabs(mid) {
        Ok(mid)
    } else {
        Err(Error::Numerical { what: "bisect_root", partial: mid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(0.0, 0.0, 10).is_err());
        assert!(Tolerance::new(1e-9, -1.0, 10).is_err());
        assert!(Tolerance::new(1e-9, 0.0, 0).is_err());
        assert!(Tolerance::new(1e-9, 0.0, 1).is_ok());
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
    }

    #[test]
    fn far_left_tail_is_tiny_but_nonnegative() {
        let v = std_normal_cdf(-37.0).unwrap();
        // phi(37)/37 is about 5.7e-300
        assert!((0.0..=1e-200).contains(&v));
    }

    #[test]
    fn quantile_domain() {
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn student_t_domain() {
        assert!(student_t_cdf(1.0, 0).is_err());
        assert!(student_t_quantile(0.5, 0).is_err());
        assert!(student_t_quantile(1.0, 3).is_err());
        assert_eq!(student_t_cdf(0.0, 5).unwrap(), 0.5);
    }

    #[test]
    fn cauchy_case_closed_form() {
        // df = 1: F(x) = 1/2 + atan(x)/pi
        for &x in &[-7.0, -1.0, 0.3, 2.0, 40.0] {
            let expect = 0.5 + libm::atan(x) / core::f64::consts::PI;
            assert!((student_t_cdf(x, 1).unwrap() - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn quadrature_trivial_integrands() {
        let tol = Tolerance::default();
        assert!((adaptive_quadrature(|_| 1.0, 0.0, 1.0, tol).unwrap() - 1.0).abs() < 1e-12);
        assert!((adaptive_quadrature(|x| x * x, 0.0, 1.0, tol).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((adaptive_quadrature(|x| x, 1.0, 0.0, tol).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrature_reports_partial_on_budget_exhaustion() {
        let tol = Tolerance::new(1e-14, 0.0, 3).unwrap();
        match adaptive_quadrature(|x| libm::sin(50.0 * x), 0.0, 3.0, tol) {
            Err(Error::Numerical { partial, .. }) => assert!(partial.is_finite()),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn bisection_examples() {
        let tol = Tolerance::new(1e-12, 0.0, 200).unwrap();
        assert!((bisect_root(|x| x - 2.0, 0.0, 5.0, tol).unwrap() - 2.0).abs() < 1e-11);
        assert!(bisect_root(|x| phi(x) - 0.5, -3.0, 3.0, tol).unwrap().abs() < 1e-11);
        assert!((bisect_root(|x| x * x * x - 8.0, 0.0, 3.0, tol).unwrap() - 2.0).abs() < 1e-11);
        assert!(matches!(bisect_root(|x| x * x + 1.0, -1.0, 1.0, tol), Err(Error::Bracket { .. })));
    }
}
