//! Self-contained deterministic random source.
//!
//! Published numbers must be bit-reproducible across releases, so the
//! generator and the uniform-to-normal transform are pinned here instead of
//! delegated to an external crate whose stream might change:
//!
//! - uniform stream: xoshiro256++ (Blackman-Vigna), state seeded by SplitMix64;
//! - `(0, 1)` doubles: top 53 bits, `u = (bits >> 11 + 0.5) * 2^-53`;
//! - normals: inverse CDF via Acklam's rational approximation
//!   (relative error below 1.2e-9, ample under Monte Carlo noise).

/// SplitMix64 stream, used to expand a 64-bit seed into generator state.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// xoshiro256++ uniform generator.
#[derive(Clone, Debug)]
pub struct Xoshiro256PlusPlus {
    s: [u64; 4],
}

impl Xoshiro256PlusPlus {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = SplitMix64(seed);
        Self {
            s: [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()],
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform double strictly inside (0, 1): 53-bit mantissa offset by half
    /// an ulp so neither endpoint is reachable.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_open01()
    }

    /// Standard normal draw by inverse CDF.
    pub fn next_standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.next_open01())
    }
}

/// Acklam's inverse normal CDF. Input must lie strictly in (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "inverse_normal_cdf domain is (0,1)");

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standard normal CDF by Simpson quadrature of the density from 0 to x.
    /// Independent oracle for the inverse approximation.
    fn normal_cdf_quadrature(x: f64) -> f64 {
        let n = 20_000usize;
        let (a, b) = (0.0f64, x.abs());
        let h = (b - a) / n as f64;
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = density(a) + density(b);
        for i in 1..n {
            let t = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * density(t);
        }
        let half = acc * h / 3.0;
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    #[test]
    fn inverse_cdf_matches_quadrature_oracle() {
        for &p in &[
            0.001, 0.005, 0.023, 0.0243, 0.1, 0.25, 0.5, 0.6, 0.9, 0.975, 0.995, 0.9999,
        ] {
            let x = inverse_normal_cdf(p);
            let back = normal_cdf_quadrature(x);
            assert!(
                (back - p).abs() < 2e-8,
                "p = {p}, x = {x}, quadrature gives {back}"
            );
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert!((inverse_normal_cdf(0.975) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn inverse_cdf_is_monotone_and_symmetric() {
        let mut last = f64::NEG_INFINITY;
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let x = inverse_normal_cdf(p);
            assert!(x > last);
            last = x;
            let mirrored = inverse_normal_cdf(1.0 - p);
            assert!((x + mirrored).abs() < 1e-9, "p = {p}");
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Xoshiro256PlusPlus::seed_from_u64(42);
        let mut b = Xoshiro256PlusPlus::seed_from_u64(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Xoshiro256PlusPlus::seed_from_u64(43);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn open01_stays_inside_unit_interval() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        for _ in 0..10_000 {
            let u = rng.next_open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_draws_have_unit_moments() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = rng.next_standard_normal();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
