//! Standard and bivariate normal distribution functions.
//!
//! The bivariate orthant probability follows Genz's BVNU routine (Drezner and
//! Wesolowsky's method with Gauss-Legendre rules of 6, 12 or 20 points
//! depending on |rho|), accurate to about 1e-15.

use std::f64::consts::{PI, SQRT_2};

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

#[allow(clippy::excessive_precision)]
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];

#[allow(clippy::excessive_precision)]
const GL12: [(f64, f64); 6] = [
    (0.04717533638651177, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];

#[allow(clippy::excessive_precision)]
const GL20: [(f64, f64); 10] = [
    (0.01761400713915212, -0.9931285991850949),
    (0.04060142980038694, -0.9639719272779138),
    (0.06267204833410906, -0.9122344282513259),
    (0.08327674157670475, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.07652652113349733),
];

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile, polished with two Newton steps.
pub fn norm_quantile(p: f64) -> f64 {
    let mut x = Normal::standard().inverse_cdf(p);
    if x.is_finite() {
        for _ in 0..2 {
            x -= (norm_cdf(x) - p) / norm_pdf(x);
        }
    }
    x
}

/// `P(X > h, Y > k)` for standard bivariate normal `(X, Y)` with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let rule: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for &(w, x) in rule {
            let sn = (asr * (1.0 + x) / 2.0).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (1.0 - x) / 2.0).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (4.0 * PI) + norm_cdf(-h) * norm_cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k).powi(2);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * (2.0 * PI).sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(w, x) in rule {
            for sign in [-1.0, 1.0] {
                let xs = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * w
                    * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / (2.0 * PI);
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        let mut out = -bvn;
        if k > h {
            if h < 0.0 {
                out += norm_cdf(k) - norm_cdf(h);
            } else {
                out += norm_cdf(-h) - norm_cdf(-k);
            }
        }
        out
    }
}

/// `P(X <= h, Y <= k)`.
#[inline]
pub fn bvn_lower(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

/// Standard bivariate normal density at `(h, k)`.
#[inline]
pub fn bvn_pdf(h: f64, k: f64, r: f64) -> f64 {
    let one_m = 1.0 - r * r;
    (-(h * h - 2.0 * r * h * k + k * k) / (2.0 * one_m)).exp() / (2.0 * PI * one_m.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Integrates the conditional form
    /// `P(X <= h, Y <= k) = int_{-inf}^{h} phi(x) Phi((k - r x) / sqrt(1 - r^2)) dx`
    /// with composite Simpson on a fine grid.
    fn simpson_oracle(h: f64, k: f64, r: f64) -> f64 {
        let lo = -12.0;
        let n = 200_000;
        let step = (h - lo) / n as f64;
        let s = (1.0 - r * r).sqrt();
        let f = |x: f64| norm_pdf(x) * norm_cdf((k - r * x) / s);
        let mut total = f(lo) + f(h);
        for i in 1..n {
            let x = lo + step * i as f64;
            total += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        total * step / 3.0
    }

    #[test]
    fn matches_quadrature_oracle() {
        for &(h, k, r) in &[
            (0.0, 0.0, 0.0),
            (0.3, -0.4, 0.2),
            (-1.2, 0.7, 0.5),
            (1.1, 1.3, -0.6),
            (0.2, -0.1, 0.95),
            (-0.5, 0.4, -0.97),
            (2.0, -2.0, 0.8),
            (-1.5, -1.7, 0.999),
        ] {
            let got = bvn_lower(h, k, r);
            let want = simpson_oracle(h, k, r);
            assert!((got - want).abs() < 1e-7, "({h},{k},{r}): {got} vs {want}");
        }
    }

    #[test]
    fn closed_forms() {
        // P(X<=0, Y<=0) = 1/4 + asin(r) / (2 pi)
        for r in [-0.99, -0.5, 0.0, 0.3, 0.9, 0.999] {
            let want = 0.25 + f64::asin(r) / (2.0 * PI);
            assert!((bvn_lower(0.0, 0.0, r) - want).abs() < 1e-12, "{r}");
        }
        assert!((bvn_lower(0.7, -0.3, 0.0) - norm_cdf(0.7) * norm_cdf(-0.3)).abs() < 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.01, 0.2, 0.5, 0.77, 0.999] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-12);
        }
    }
}
