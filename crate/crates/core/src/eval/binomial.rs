//! Exact (Clopper-Pearson) binomial confidence intervals.
//!
//! Both bounds are roots of monotone binomial tail equations, found by
//! bisection. Tail probabilities are summed in log space so large `n`
//! stays stable. No incomplete-beta shortcut here; an independent beta
//! oracle lives in the tests and cross-checks the bisection.

use super::EvalError;

/// Absolute tolerance on each bound.
const TOL: f64 = 1e-10;

/// Two-sided exact interval for `k` successes in `n` trials at level
/// `1 - alpha`.
///
/// The lower bound is 0 when `k = 0`, otherwise the `p` solving
/// `P[Bin(n, p) >= k] = alpha/2`; the upper bound is 1 when `k = n`,
/// otherwise the `p` solving `P[Bin(n, p) <= k] = alpha/2`. The
/// interval always contains `k/n`.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<(f64, f64), EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidArgs("n must be at least 1".into()));
    }
    if k > n {
        return Err(EvalError::InvalidArgs(format!("k = {k} exceeds n = {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::InvalidArgs(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }

    let half = alpha / 2.0;
    let point = k as f64 / n as f64;
    let ln_fact = ln_factorials(n);

    let lo = if k == 0 {
        0.0
    } else {
        // P[X >= k] grows from 0 to 1 as p goes 0 to 1.
        bisect(|p| upper_tail(&ln_fact, n, k, p) - half).min(point)
    };
    let hi = if k == n {
        1.0
    } else {
        // P[X <= k] falls from 1 to 0 as p goes 0 to 1.
        bisect(|p| half - lower_tail(&ln_fact, n, k, p)).max(point)
    };
    Ok((lo, hi))
}

/// Root of an increasing function on (0, 1).
fn bisect(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > TOL / 16.0 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut table = Vec::with_capacity(n as usize + 1);
    table.push(0.0);
    for i in 1..=n {
        table.push(table[i as usize - 1] + (i as f64).ln());
    }
    table
}

fn ln_pmf(ln_fact: &[f64], n: u64, i: u64, p: f64) -> f64 {
    let ln_choose =
        ln_fact[n as usize] - ln_fact[i as usize] - ln_fact[(n - i) as usize];
    ln_choose + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()
}

fn tail_sum(ln_fact: &[f64], n: u64, range: impl Iterator<Item = u64>, p: f64) -> f64 {
    let logs: Vec<f64> = range.map(|i| ln_pmf(ln_fact, n, i, p)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let scaled: f64 = logs.iter().map(|&t| (t - max).exp()).sum();
    (max + scaled.ln()).exp()
}

/// P[Bin(n, p) >= k] for p strictly inside (0, 1).
fn upper_tail(ln_fact: &[f64], n: u64, k: u64, p: f64) -> f64 {
    tail_sum(ln_fact, n, k..=n, p)
}

/// P[Bin(n, p) <= k] for p strictly inside (0, 1).
fn lower_tail(ln_fact: &[f64], n: u64, k: u64, p: f64) -> f64 {
    tail_sum(ln_fact, n, 0..=k, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALPHA: f64 = 0.05;

    fn cp(k: u64, n: u64) -> (f64, f64) {
        clopper_pearson(k, n, ALPHA).unwrap()
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(clopper_pearson(0, 0, ALPHA).is_err());
        assert!(clopper_pearson(5, 4, ALPHA).is_err());
        assert!(clopper_pearson(1, 4, 0.0).is_err());
        assert!(clopper_pearson(1, 4, 1.0).is_err());
        assert!(clopper_pearson(1, 4, f64::NAN).is_err());
        assert!(clopper_pearson(1, 4, -0.05).is_err());
    }

    // Reference values computed with 50-digit arithmetic from the
    // beta-quantile characterization, frozen here.
    const FROZEN: &[(u64, u64, f64, f64)] = &[
        (0, 100, 0.0, 0.036216692645176418),
        (2, 4, 0.067585986488542957, 0.93241401351145704),
        (3, 10, 0.066739511177734469, 0.65245285005999729),
        (44, 100, 0.34083602372345826, 0.54281250293668242),
        (50, 100, 0.39832112950330098, 0.60167887049669902),
        (80, 100, 0.70815731091137191, 0.87334444789804412),
        (93, 100, 0.86108027154414266, 0.97139471109256131),
        (97, 100, 0.91482394702571997, 0.99377002846169361),
        (100, 100, 0.96378330735482358, 1.0),
    ];

    #[test]
    fn matches_frozen_reference_values() {
        for &(k, n, lo, hi) in FROZEN {
            let (got_lo, got_hi) = cp(k, n);
            assert!(
                (got_lo - lo).abs() < 1e-9,
                "lo({k}, {n}): got {got_lo}, want {lo}"
            );
            assert!(
                (got_hi - hi).abs() < 1e-9,
                "hi({k}, {n}): got {got_hi}, want {hi}"
            );
        }
    }

    #[test]
    fn degenerate_counts_use_closed_forms() {
        for n in [1u64, 5, 100, 250] {
            let closed = (ALPHA / 2.0).powf(1.0 / n as f64);
            let (lo, hi) = cp(n, n);
            assert!((lo - closed).abs() < 1e-9, "lo({n}, {n})");
            assert_eq!(hi, 1.0);

            let (lo, hi) = cp(0, n);
            assert_eq!(lo, 0.0);
            assert!((hi - (1.0 - closed)).abs() < 1e-9, "hi(0, {n})");
        }
    }

    #[test]
    fn tighter_alpha_gives_wider_intervals() {
        let (lo95, hi95) = cp(44, 100);
        let (lo99, hi99) = clopper_pearson(44, 100, 0.01).unwrap();
        assert!(lo99 < lo95);
        assert!(hi99 > hi95);
    }

    // Independent oracle: the same interval via the regularized
    // incomplete beta function (Lentz's continued fraction), solved for
    // its quantile by bisection.
    mod beta_oracle {
        pub fn ln_gamma(x: f64) -> f64 {
            const COEFFS: [f64; 6] = [
                76.18009172947146,
                -86.50532032941677,
                24.01409824083091,
                -1.231739572450155,
                0.1208650973866179e-2,
                -0.5395239384953e-5,
            ];
            let tmp = x + 5.5;
            let tmp = tmp - (x + 0.5) * tmp.ln();
            let mut y = x;
            let mut ser = 1.000000000190015;
            for c in COEFFS {
                y += 1.0;
                ser += c / y;
            }
            -tmp + (2.5066282746310005 * ser / x).ln()
        }

        fn betacf(a: f64, b: f64, x: f64) -> f64 {
            const TINY: f64 = 1e-30;
            let qab = a + b;
            let qap = a + 1.0;
            let qam = a - 1.0;
            let mut c = 1.0;
            let mut d = 1.0 - qab * x / qap;
            if d.abs() < TINY {
                d = TINY;
            }
            d = 1.0 / d;
            let mut h = d;
            for m in 1..300 {
                let m = m as f64;
                let m2 = 2.0 * m;
                let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
                d = 1.0 + aa * d;
                if d.abs() < TINY {
                    d = TINY;
                }
                c = 1.0 + aa / c;
                if c.abs() < TINY {
                    c = TINY;
                }
                d = 1.0 / d;
                h *= d * c;
                let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
                d = 1.0 + aa * d;
                if d.abs() < TINY {
                    d = TINY;
                }
                c = 1.0 + aa / c;
                if c.abs() < TINY {
                    c = TINY;
                }
                d = 1.0 / d;
                let del = d * c;
                h *= del;
                if (del - 1.0).abs() < 1e-14 {
                    break;
                }
            }
            h
        }

        pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            if x >= 1.0 {
                return 1.0;
            }
            let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
                + a * x.ln()
                + b * (1.0 - x).ln())
            .exp();
            if x < (a + 1.0) / (a + b + 2.0) {
                bt * betacf(a, b, x) / a
            } else {
                1.0 - bt * betacf(b, a, 1.0 - x) / b
            }
        }

        pub fn quantile(a: f64, b: f64, q: f64) -> f64 {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if inc_beta(a, b, mid) < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }

    #[test]
    fn agrees_with_the_incomplete_beta_oracle() {
        let half = ALPHA / 2.0;
        for n in [10u64, 37, 100] {
            for k in 0..=n {
                let (lo, hi) = cp(k, n);
                let want_lo = if k == 0 {
                    0.0
                } else {
                    beta_oracle::quantile(k as f64, (n - k + 1) as f64, half)
                };
                let want_hi = if k == n {
                    1.0
                } else {
                    beta_oracle::quantile((k + 1) as f64, (n - k) as f64, 1.0 - half)
                };
                assert!(
                    (lo - want_lo).abs() < 1e-7,
                    "lo({k}, {n}): bisection {lo}, beta {want_lo}"
                );
                assert!(
                    (hi - want_hi).abs() < 1e-7,
                    "hi({k}, {n}): bisection {hi}, beta {want_hi}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn interval_contains_the_point_estimate(n in 1u64..200, k_seed in 0u64..200) {
            let k = k_seed % (n + 1);
            let (lo, hi) = cp(k, n);
            let point = k as f64 / n as f64;
            prop_assert!(lo <= point + 1e-12);
            prop_assert!(point <= hi + 1e-12);
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!((0.0..=1.0).contains(&hi));
            prop_assert!(lo < hi);
        }

        #[test]
        fn bounds_are_dual_under_reflection(n in 2u64..150, k_seed in 1u64..150) {
            let k = 1 + k_seed % (n - 1);
            prop_assume!(k < n);
            let (lo, _) = cp(k, n);
            let (_, hi) = cp(n - k, n);
            prop_assert!((lo - (1.0 - hi)).abs() < 1e-9, "lo {lo} vs 1-hi {}", 1.0 - hi);
        }
    }
}
