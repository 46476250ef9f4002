//! Worker computing-time laws and the expectations of their order statistics.
//!
//! A worker holding `r` times the base load finishes after a random time with
//! mean `η r`, either exponential or Pareto with scale `η r (β-1)/β` and
//! shape `β`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Pareto};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Group-time survival level at which quadrature hands over to the analytic tail.
const TAIL_SURVIVAL: f64 = 1e-9;
const QUAD_TOLERANCE: f64 = 1e-10;
const QUAD_MAX_DEPTH: u32 = 48;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimingModel {
    Exponential { eta: f64 },
    Pareto { eta: f64, shape: f64 },
}

/// `H_k = Σ_{i=1}^{k} 1/i`, with `H_0 = 0`.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

fn check_order(a: usize, b: usize) -> Result<()> {
    if a == 0 || a > b {
        return Err(Error::domain(format!("order statistic needs 1 <= a <= b, got a = {a}, b = {b}")));
    }
    Ok(())
}

/// `E[T_{a:b}] = η r (H_b - H_{b-a})` for exponential times with mean `η r`.
pub fn expected_order_stat_exponential(a: usize, b: usize, eta: f64, r: usize) -> Result<f64> {
    check_order(a, b)?;
    Ok(eta * r as f64 * (harmonic(b) - harmonic(b - a)))
}

/// `E[T_{a:b}]` for Pareto times with scale `η r (β-1)/β` and shape `β`:
/// `scale · Γ(b-a+1-1/β) Γ(b+1) / (Γ(b-a+1) Γ(b+1-1/β))`.
pub fn expected_order_stat_pareto(a: usize, b: usize, eta: f64, r: usize, shape: f64) -> Result<f64> {
    check_order(a, b)?;
    if shape.is_nan() || shape <= 1.0 {
        return Err(Error::domain(format!("Pareto shape must exceed 1, got {shape}")));
    }
    let k = (b - a + 1) as f64;
    if k <= 1.0 / shape {
        return Err(Error::domain(format!("E[T_({a}:{b})] is infinite for shape {shape}")));
    }
    let scale = eta * r as f64 * (shape - 1.0) / shape;
    let inv = 1.0 / shape;
    let log_ratio = ln_gamma(k - inv) + ln_gamma(b as f64 + 1.0) - ln_gamma(k) - ln_gamma(b as f64 + 1.0 - inv);
    Ok(scale * log_ratio.exp())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl TimingModel {
    pub fn exponential(eta: f64) -> Result<Self> {
        let m = TimingModel::Exponential { eta };
        m.validate()?;
        Ok(m)
    }

    pub fn pareto(eta: f64, shape: f64) -> Result<Self> {
        let m = TimingModel::Pareto { eta, shape };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let eta = self.eta();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::config(format!("eta must be positive, got {eta}")));
        }
        if let TimingModel::Pareto { shape, .. } = *self {
            if !(shape.is_finite() && shape > 1.0) {
                return Err(Error::config(format!("Pareto shape must exceed 1, got {shape}")));
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        match *self {
            TimingModel::Exponential { eta } | TimingModel::Pareto { eta, .. } => eta,
        }
    }

    pub fn mean(&self, r: usize) -> f64 {
        self.eta() * r as f64
    }

    /// Minimum of the support; zero for the exponential law.
    pub fn pareto_scale(&self, r: usize) -> f64 {
        match *self {
            TimingModel::Exponential { .. } => 0.0,
            TimingModel::Pareto { eta, shape } => eta * r as f64 * (shape - 1.0) / shape,
        }
    }

    /// `P(T > x)` for a single worker with load `r`.
    pub fn survival(&self, r: usize, x: f64) -> f64 {
        match *self {
            TimingModel::Exponential { .. } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x / self.mean(r)).exp()
                }
            }
            TimingModel::Pareto { shape, .. } => {
                let scale = self.pareto_scale(r);
                if x <= scale {
                    1.0
                } else {
                    (scale / x).powf(shape)
                }
            }
        }
    }

    pub fn cdf(&self, r: usize, x: f64) -> f64 {
        1.0 - self.survival(r, x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, r: usize, rng: &mut R) -> f64 {
        match *self {
            TimingModel::Exponential { .. } => Exp::new(1.0 / self.mean(r)).expect("validated rate").sample(rng),
            TimingModel::Pareto { shape, .. } => Pareto::new(self.pareto_scale(r), shape)
                .expect("validated Pareto parameters")
                .sample(rng),
        }
    }

    /// `count` i.i.d. computing times for workers with load `r`.
    pub fn sample_times<R: Rng + ?Sized>(&self, r: usize, count: usize, rng: &mut R) -> Vec<f64> {
        (0..count).map(|_| self.sample(r, rng)).collect()
    }

    /// `E[T_{a:b}]` in closed form.
    pub fn expected_order_stat(&self, a: usize, b: usize, r: usize) -> Result<f64> {
        match *self {
            TimingModel::Exponential { eta } => expected_order_stat_exponential(a, b, eta, r),
            TimingModel::Pareto { eta, shape } => expected_order_stat_pareto(a, b, eta, r, shape),
        }
    }

    /// Expected maximum of `a` worker times, linearly interpolated for
    /// fractional `a` (`a = 0` contributes zero).
    pub fn expected_max_fractional(&self, a: f64, r: usize) -> Result<f64> {
        interpolate(a, |k| if k == 0 { Ok(0.0) } else { self.expected_order_stat(k, k, r) })
    }

    /// `P(T^G ≤ x)` where `T^G` is the `F`-th smallest of `M_G` worker times:
    /// `Σ_{j=F}^{M_G} C(M_G, j) p^j (1-p)^{M_G-j}` with `p = P(T ≤ x)`.
    pub fn group_time_cdf(&self, r: usize, group_size: usize, wait_for: usize, x: f64) -> f64 {
        let q = self.survival(r, x);
        let p = 1.0 - q;
        (wait_for..=group_size)
            .map(|j| binomial(group_size, j) * p.powi(j as i32) * q.powi((group_size - j) as i32))
            .sum()
    }

    /// `P(T^G > x)`, summed directly so the far tail keeps full precision.
    pub fn group_time_survival(&self, r: usize, group_size: usize, wait_for: usize, x: f64) -> f64 {
        let q = self.survival(r, x);
        let p = 1.0 - q;
        let s: f64 = (0..wait_for)
            .map(|j| binomial(group_size, j) * p.powi(j as i32) * q.powi((group_size - j) as i32))
            .sum();
        s.min(1.0)
    }

    /// `E[max of a i.i.d. group times] = ∫₀^∞ (1 - F^G(x)^a) dx`, by adaptive
    /// Simpson quadrature up to the point where the group survival drops to
    /// 1e-9, plus the leading-order analytic tail beyond it.
    pub fn expected_max_group_time(&self, r: usize, group_size: usize, wait_for: usize, a: usize) -> Result<f64> {
        if a == 0 {
            return Err(Error::domain("need at least one group"));
        }
        if wait_for == 0 || wait_for > group_size {
            return Err(Error::domain(format!("need 1 <= F <= M_G, got F = {wait_for}, M_G = {group_size}")));
        }
        // the group time's tail decays like the k-th power of a single worker's
        let k = group_size - wait_for + 1;
        let integrand = |x: f64| {
            let s = self.group_time_survival(r, group_size, wait_for, x);
            -(a as f64 * (-s).ln_1p()).exp_m1()
        };
        let x_hi = self.group_tail_start(r, group_size, wait_for);
        let lead = a as f64 * binomial(group_size, k);

        let value = match *self {
            TimingModel::Exponential { .. } => {
                let mean = self.mean(r);
                let body = adaptive_simpson(&integrand, 0.0, x_hi, QUAD_TOLERANCE * mean);
                let tail = lead * self.survival(r, x_hi).powi(k as i32) * mean / k as f64;
                body + tail
            }
            TimingModel::Pareto { shape, .. } => {
                let tail_index = k as f64 * shape;
                if tail_index <= 1.0 {
                    return Err(Error::domain(format!(
                        "group time has infinite mean: (M_G - F + 1) * shape = {tail_index} <= 1"
                    )));
                }
                let scale = self.pareto_scale(r);
                let t_hi = (x_hi / scale).ln();
                let log_integrand = |t: f64| {
                    let x = scale * t.exp();
                    integrand(x) * x
                };
                let body = adaptive_simpson(&log_integrand, 0.0, t_hi, QUAD_TOLERANCE * self.mean(r));
                let tail = lead * scale.powf(tail_index) * x_hi.powf(1.0 - tail_index) / (tail_index - 1.0);
                scale + body + tail
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite("expected group time"));
        }
        Ok(value)
    }

    /// [`Self::expected_max_group_time`] linearly interpolated in `a`.
    pub fn expected_max_group_time_fractional(&self, r: usize, group_size: usize, wait_for: usize, a: f64) -> Result<f64> {
        interpolate(a, |k| {
            if k == 0 {
                Ok(0.0)
            } else {
                self.expected_max_group_time(r, group_size, wait_for, k)
            }
        })
    }

    /// Point past which the group-time survival is below [`TAIL_SURVIVAL`],
    /// by doubling then bisection.
    fn group_tail_start(&self, r: usize, group_size: usize, wait_for: usize) -> f64 {
        let surv = |x: f64| self.group_time_survival(r, group_size, wait_for, x);
        let mut lo = self.pareto_scale(r);
        let mut hi = self.mean(r).max(lo * 2.0);
        while surv(hi) > TAIL_SURVIVAL {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if surv(mid) > TAIL_SURVIVAL {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        hi
    }
}

fn interpolate(a: f64, value_at: impl Fn(usize) -> Result<f64>) -> Result<f64> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::domain(format!("order index must be nonnegative, got {a}")));
    }
    let lo = a.floor();
    let frac = a - lo;
    let lo_value = value_at(lo as usize)?;
    if frac == 0.0 {
        return Ok(lo_value);
    }
    let hi_value = value_at(lo as usize + 1)?;
    Ok(lo_value + frac * (hi_value - lo_value))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, QUAD_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // below roundoff the halved tolerance can never be met
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    // the minimum depth keeps a narrow early peak from being skipped
    if depth == 0 || (QUAD_MAX_DEPTH - depth >= 6 && delta.abs() <= 15.0 * tol.max(floor)) {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
