//! Numerical primitives shared by the simulator and its analytic checks:
//! the modified Bessel function of the first kind, the Skellam distribution,
//! left-censored occupancy transitions, and a seeded random source with
//! Poisson sampling.
//!
//! Everything here is deterministic. [`RandomSource`] wraps a counter-based
//! generator so that a run is reproducible bit for bit from its seed on any
//! platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use std::sync::OnceLock;
use thiserror::Error;

/// Largest Bessel order accepted by [`bessel_i`].
pub const MAX_BESSEL_ORDER: i64 = 1000;

/// Largest event rate accepted by [`sample_poisson`].
pub const MAX_POISSON_RATE: f64 = 1e6;

/// Relative tail bound at which the censored-transition summation stops.
const CENSORED_TAIL: f64 = 1e-12;

/// Series/recurrence crossover for the Bessel evaluation. Below this the
/// power series converges in well under 100 terms; above it the downward
/// recurrence, normalized against `e^x`, is both stable and cheap.
const BESSEL_SERIES_CUTOFF: f64 = 30.0;

#[derive(Debug, Error)]
pub enum StochasticError {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The true result exceeds the representable floating-point range.
    #[error("overflow: result exceeds the representable floating-point range")]
    Overflow,
    /// A tail summation failed to meet its bound within the iteration cap.
    #[error("tail summation did not converge")]
    NoConvergence,
}

fn ln_factorial_table() -> &'static [f64; 128] {
    static TABLE: OnceLock<[f64; 128]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0f64; 128];
        let mut acc = 0.0f64;
        for (k, slot) in t.iter_mut().enumerate() {
            if k > 0 {
                acc += (k as f64).ln();
            }
            *slot = acc;
        }
        t
    })
}

/// Natural log of `k!`, exact summation below 128 and a Stirling expansion
/// with three correction terms above it (relative error under 1e-15 there).
fn ln_factorial(k: u64) -> f64 {
    if k < 128 {
        return ln_factorial_table()[k as usize];
    }
    let n = k as f64;
    let n2 = n * n;
    (n + 0.5) * n.ln() - n
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + 1.0 / (12.0 * n)
        - 1.0 / (360.0 * n2 * n)
        + 1.0 / (1260.0 * n2 * n2 * n)
}

/// Probability mass of a Poisson variate: `e^-rate rate^k / k!`.
pub fn poisson_pmf(k: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * rate.ln() - rate - ln_factorial(k)).exp()
}

/// Power-series evaluation of `I_m(x)` for `x` at or below the cutoff.
/// Returns the leading term and the normalized series sum separately so the
/// caller can combine them directly or in log space.
fn bessel_series_parts(order: u32, x: f64) -> (f64, f64) {
    let m = order as f64;
    let half = x / 2.0;
    // Leading term (x/2)^m / m!, built as a running product. Intermediate
    // values stay below e^13 for x <= 30; the product underflows to zero for
    // large orders, which is the correct limit.
    let mut t0 = 1.0f64;
    let mut j = 1.0f64;
    while j <= m {
        t0 *= half / j;
        j += 1.0;
    }
    let q = half * half;
    let mut rel = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 1.0f64;
    loop {
        rel *= q / (k * (m + k));
        sum += rel;
        if rel < sum * 1e-17 || k > 700.0 {
            break;
        }
        k += 1.0;
    }
    (t0, sum)
}

/// Ratio `I_order(x) / e^x` by Miller's downward recurrence, normalized with
/// the identity `e^x = I_0(x) + 2 sum_{k>=1} I_k(x)`. Valid for `x > 0`.
fn bessel_miller_ratio(order: u32, x: f64) -> f64 {
    let top = order.max(x.ceil() as u32);
    // Starting above the target order by ~sqrt(40 n) guard terms keeps the
    // relative error of the recurrence below 1e-12.
    let start = top + 11 + (40.0 * top as f64).sqrt().ceil() as u32;
    let mut i_hi = 0.0f64;
    let mut i_cur = 1e-250f64;
    let mut target = 0.0f64;
    let mut total = 0.0f64;
    let mut k = start;
    loop {
        if k == order {
            target = i_cur;
        }
        total += if k == 0 { i_cur } else { 2.0 * i_cur };
        if k == 0 {
            break;
        }
        let i_lo = i_hi + (2.0 * k as f64 / x) * i_cur;
        i_hi = i_cur;
        i_cur = i_lo;
        k -= 1;
        if i_cur > 1e250 {
            i_cur *= 1e-250;
            i_hi *= 1e-250;
            total *= 1e-250;
            target *= 1e-250;
        }
    }
    target / total
}

/// Natural log of `I_order(x)` for `x > 0`; minus infinity when the value
/// underflows every representable magnitude.
fn bessel_i_ln(order: u32, x: f64) -> f64 {
    if x <= BESSEL_SERIES_CUTOFF {
        let m = order as f64;
        let (_, sum) = bessel_series_parts(order, x);
        m * (x / 2.0).ln() - ln_factorial(order as u64) + sum.ln()
    } else {
        x + bessel_miller_ratio(order, x).ln()
    }
}

/// Modified Bessel function of the first kind, `I_n(x)`, for integer order.
///
/// Symmetric in the order (`I_n = I_-n`) and accurate to at least ten
/// significant digits over `|n| <= 1000`, `0 <= x <= 700`. Values that
/// underflow double precision round to zero.
///
/// # Errors
///
/// [`StochasticError::Domain`] when `x` is negative or not finite, or the
/// order exceeds [`MAX_BESSEL_ORDER`]; [`StochasticError::Overflow`] when the
/// result exceeds the double-precision range.
pub fn bessel_i(n: i64, x: f64) -> Result<f64, StochasticError> {
    if !x.is_finite() || x < 0.0 {
        return Err(StochasticError::Domain(format!(
            "bessel argument must be finite and nonnegative, got {x}"
        )));
    }
    if n.unsigned_abs() > MAX_BESSEL_ORDER as u64 {
        return Err(StochasticError::Domain(format!(
            "bessel order {n} exceeds supported bound {MAX_BESSEL_ORDER}"
        )));
    }
    let order = n.unsigned_abs() as u32;
    if x == 0.0 {
        return Ok(if order == 0 { 1.0 } else { 0.0 });
    }
    if x <= BESSEL_SERIES_CUTOFF {
        let (t0, sum) = bessel_series_parts(order, x);
        return Ok(t0 * sum);
    }
    let ratio = bessel_miller_ratio(order, x);
    if x < 700.0 {
        // ratio < 1, so the product stays within range whenever e^x does.
        return Ok(ratio * x.exp());
    }
    let ln_val = x + ratio.ln();
    if ln_val > f64::MAX.ln() {
        return Err(StochasticError::Overflow);
    }
    Ok(ln_val.exp())
}

/// Parameters of a Skellam-distributed occupancy change over a time span:
/// arrivals at rate `lambda_a` and departures at rate `lambda_d`, both per
/// unit time, observed for `t` units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkellamParams {
    pub lambda_a: f64,
    pub lambda_d: f64,
    pub t: f64,
}

impl SkellamParams {
    pub fn new(lambda_a: f64, lambda_d: f64, t: f64) -> Result<Self, StochasticError> {
        let p = Self { lambda_a, lambda_d, t };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), StochasticError> {
        let ok = self.lambda_a.is_finite()
            && self.lambda_d.is_finite()
            && self.t.is_finite()
            && self.lambda_a >= 0.0
            && self.lambda_d >= 0.0
            && self.t > 0.0;
        if ok {
            Ok(())
        } else {
            Err(StochasticError::Domain(format!(
                "skellam parameters require rates >= 0 and t > 0, got \
                 lambda_a={}, lambda_d={}, t={}",
                self.lambda_a, self.lambda_d, self.t
            )))
        }
    }
}

/// Probability that arrivals minus departures over the span equals `n`:
/// the difference of two independent Poisson counts with means
/// `t * lambda_a` and `t * lambda_d`.
pub fn skellam_pmf(n: i64, params: &SkellamParams) -> Result<f64, StochasticError> {
    params.validate()?;
    let ta = params.t * params.lambda_a;
    let td = params.t * params.lambda_d;
    if ta == 0.0 && td == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    if td == 0.0 {
        return Ok(if n >= 0 { poisson_pmf(n as u64, ta) } else { 0.0 });
    }
    if ta == 0.0 {
        return Ok(if n <= 0 { poisson_pmf((-n) as u64, td) } else { 0.0 });
    }
    // Mass this far past the means is below any representable magnitude.
    if n.unsigned_abs() as f64 > 20.0 * (ta + td) + 200.0 {
        return Ok(0.0);
    }
    let order = n.unsigned_abs() as u32;
    let x = 2.0 * (ta * td).sqrt();
    let rate_term = 0.5 * n as f64 * (params.lambda_a.ln() - params.lambda_d.ln());
    let ln_p = if x <= BESSEL_SERIES_CUTOFF {
        -(ta + td) + rate_term + bessel_i_ln(order, x)
    } else {
        // -(ta+td) + x cancels exactly to -(sqrt(ta)-sqrt(td))^2; combining
        // it analytically avoids the loss of precision at large rates.
        let d = ta.sqrt() - td.sqrt();
        -d * d + rate_term + bessel_miller_ratio(order, x).ln()
    };
    Ok(ln_p.exp().clamp(0.0, 1.0))
}

/// Probability that an area holding `m` vehicles ends a span of length
/// `params.t` with `n` vehicles, under the censored birth-death dynamics in
/// which departures attempted at occupancy zero are lost.
///
/// For `n > 0` this is the Skellam mass at `n - m`; for `n = 0` it lumps the
/// probability of every net outflow at or beyond `m`, summed until the
/// remaining tail is below 1e-12.
pub fn censored_transition(
    m: u32,
    n: u32,
    params: &SkellamParams,
) -> Result<f64, StochasticError> {
    params.validate()?;
    if n > 0 {
        return skellam_pmf(n as i64 - m as i64, params);
    }
    let mode = (params.t * (params.lambda_d - params.lambda_a)).max(0.0);
    let mut sum = 0.0f64;
    let mut prev: Option<f64> = None;
    let mut l = m as i64;
    loop {
        let term = skellam_pmf(-l, params)?;
        sum += term;
        // Terms decay monotonically once l passes the mode of the outflow
        // distribution; from there a geometric bound on the remaining tail
        // uses the observed decay ratio of consecutive terms.
        if l as f64 >= mode {
            if term == 0.0 {
                break;
            }
            if let Some(p) = prev {
                if term < p {
                    let r = term / p;
                    if term * r / (1.0 - r) < CENSORED_TAIL {
                        break;
                    }
                }
            }
        }
        prev = Some(term);
        l += 1;
        if l - m as i64 > 10_000_000 {
            return Err(StochasticError::NoConvergence);
        }
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// Seeded random source backing every stochastic draw in a simulation run.
///
/// A run owns exactly one source and consumes it in a fixed documented
/// order (see the simulator), which makes every trajectory reproducible bit
/// for bit from `(scenario, seed)` alone. The generator is ChaCha8, whose
/// output stream is identical on all platforms.
#[derive(Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Seed this source was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw from `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `0..n` for `n > 0`, via fixed-point multiply of the
    /// high generator bits. The modulo bias is below 2^-32 and identical on
    /// every platform.
    pub fn below(&mut self, n: u32) -> u32 {
        debug_assert!(n > 0);
        (((self.next_u64() >> 32) * n as u64) >> 32) as u32
    }

    /// Poisson draw at `rate`, by inversion below rate 10 and transformed
    /// rejection above it. Consumes one uniform per inversion draw and two
    /// per rejection attempt; a zero rate consumes nothing.
    pub(crate) fn poisson_raw(&mut self, rate: f64) -> u64 {
        if rate == 0.0 {
            0
        } else if rate < 10.0 {
            let e = (-rate).exp();
            self.poisson_inversion(rate, e)
        } else {
            self.poisson_ptrs(rate)
        }
    }

    /// Poisson draw with the caller supplying `e^-rate`, so hot loops can
    /// reuse a cached exponential for a fixed rate. Dispatches exactly like
    /// [`RandomSource::poisson_raw`].
    pub(crate) fn poisson_cached(&mut self, rate: f64, exp_neg_rate: f64) -> u64 {
        if rate == 0.0 {
            0
        } else if rate < 10.0 {
            self.poisson_inversion(rate, exp_neg_rate)
        } else {
            self.poisson_ptrs(rate)
        }
    }

    /// Inversion path with the caller supplying `e^-rate`.
    fn poisson_inversion(&mut self, rate: f64, exp_neg_rate: f64) -> u64 {
        let u = self.uniform();
        let mut p = exp_neg_rate;
        let mut f = p;
        let mut k = 0u64;
        // At rates below 10 the mass beyond k = 500 is smaller than any
        // representable uniform gap; the cap only guards rounding stalls.
        while u > f && k < 500 {
            k += 1;
            p *= rate / k as f64;
            f += p;
        }
        k
    }

    /// Transformed-rejection sampler (Hoermann's PTRS) for rates >= 10.
    fn poisson_ptrs(&mut self, rate: f64) -> u64 {
        let slam = rate.sqrt();
        let loglam = rate.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let invalpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            if (v * invalpha / (a / (us * us) + b)).ln()
                <= k * loglam - rate - ln_factorial(k as u64)
            {
                return k as u64;
            }
        }
    }
}

impl std::fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RandomSource").field("seed", &self.seed).finish()
    }
}

/// Poisson draw at `rate` events per span from the given source.
///
/// # Errors
///
/// [`StochasticError::Domain`] when the rate is negative, not finite, or
/// above [`MAX_POISSON_RATE`].
pub fn sample_poisson(rate: f64, rng: &mut RandomSource) -> Result<u64, StochasticError> {
    if !rate.is_finite() || rate < 0.0 || rate > MAX_POISSON_RATE {
        return Err(StochasticError::Domain(format!(
            "poisson rate must lie in [0, {MAX_POISSON_RATE}], got {rate}"
        )));
    }
    Ok(rng.poisson_raw(rate))
}
