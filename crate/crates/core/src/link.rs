//! Link CDFs for the propensity model.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// A strictly increasing CDF `φ` mapping a linear predictor to `(0, 1)`.
///
/// Both supported links are symmetric (`1 − φ(u) = φ(−u)`), which
/// [`LinkFunction::survival`] uses to avoid cancellation in the upper tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Logistic,
    Probit,
}

impl LinkFunction {
    /// `φ(u)`.
    #[inline]
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
            LinkFunction::Probit => 0.5 * erfc(-u * FRAC_1_SQRT_2),
        }
    }

    /// `1 − φ(u)`, computed without cancellation.
    #[inline]
    pub fn survival(self, u: f64) -> f64 {
        self.cdf(-u)
    }

    /// `φ′(u)`.
    #[inline]
    pub fn density(self, u: f64) -> f64 {
        match self {
            LinkFunction::Logistic => self.cdf(u) * self.cdf(-u),
            LinkFunction::Probit => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
        }
    }

    /// `φ″(u)`, used by the observed information.
    #[inline]
    pub fn density_slope(self, u: f64) -> f64 {
        match self {
            LinkFunction::Logistic => self.density(u) * (self.survival(u) - self.cdf(u)),
            LinkFunction::Probit => -u * self.density(u),
        }
    }

    /// Inverse of `φ`, for starting values and tests.
    pub fn quantile(self, p: f64) -> f64 {
        match self {
            LinkFunction::Logistic => (p / (1.0 - p)).ln(),
            LinkFunction::Probit => {
                // Bisection is enough here: only used off the hot path.
                let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Logistic => "logistic",
            LinkFunction::Probit => "probit",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "logit" => Ok(LinkFunction::Logistic),
            "probit" => Ok(LinkFunction::Probit),
            other => Err(format!("unknown link '{other}' (expected logistic or probit)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINKS: [LinkFunction; 2] = [LinkFunction::Logistic, LinkFunction::Probit];

    #[test]
    fn logistic_is_one_half_at_zero() {
        assert_eq!(LinkFunction::Logistic.cdf(0.0), 0.5);
        assert_eq!(LinkFunction::Probit.cdf(0.0), 0.5);
    }

    #[test]
    fn tails_approach_zero_and_one() {
        for link in LINKS {
            assert!(link.cdf(-40.0) < 1e-15);
            assert!(link.survival(40.0) < 1e-15);
            assert_eq!(link.cdf(40.0), 1.0);
        }
    }

    #[test]
    fn survival_avoids_cancellation() {
        let s = LinkFunction::Logistic.survival(30.0);
        assert!((s - (-30.0_f64).exp() / (1.0 + (-30.0_f64).exp())).abs() < 1e-25);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for link in LINKS {
            for &p in &[0.01, 0.3, 0.5, 0.75, 0.99] {
                assert!((link.cdf(link.quantile(p)) - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("probit".parse::<LinkFunction>().unwrap(), LinkFunction::Probit);
        assert_eq!("Logistic".parse::<LinkFunction>().unwrap(), LinkFunction::Logistic);
        assert!("cloglog".parse::<LinkFunction>().is_err());
    }

    proptest! {
        #[test]
        fn strictly_increasing(a in -30.0f64..30.0, b in -30.0f64..30.0) {
            prop_assume!((a - b).abs() > 1e-3);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for link in LINKS {
                // near 1 the cdf rounds; the survival function carries the upper tail
                prop_assert!(link.cdf(lo) < link.cdf(hi) || link.survival(lo) > link.survival(hi));
                prop_assert!(link.cdf(lo) > 0.0 && link.survival(hi) > 0.0);
            }
        }

        #[test]
        fn density_matches_finite_difference(u in -10.0f64..10.0) {
            let h = 1e-5;
            for link in LINKS {
                // difference the smaller tail so probit keeps its digits at |u| = 10
                let fd = if u > 0.0 {
                    (link.survival(u - h) - link.survival(u + h)) / (2.0 * h)
                } else {
                    (link.cdf(u + h) - link.cdf(u - h)) / (2.0 * h)
                };
                let d = link.density(u);
                prop_assert!((fd - d).abs() <= 1e-6 * d, "{link}: u={u} fd={fd} d={d}");
                let fd2 = (link.density(u + h) - link.density(u - h)) / (2.0 * h);
                let d2 = link.density_slope(u);
                prop_assert!((fd2 - d2).abs() <= 1e-5 * d2.abs() + 1e-10);
            }
        }
    }
}
