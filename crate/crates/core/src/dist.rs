//! Service-time laws: the parametric families, the exponential mixture
//! `B = p·F + (1 − p)·E_μ`, residual (age-conditioned) laws and Laplace
//! transforms.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaSampler};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma as gamma_fn, gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::quad::Quadrature;

/// Survival level below which a law is treated as exhausted.
pub const TAIL_CUTOFF: f64 = 1e-12;

const HYPEREXP_WEIGHT_TOL: f64 = 1e-12;
const MEAN_REL_TOL: f64 = 1e-9;

/// A nonnegative law that can be evaluated pointwise.
///
/// Implementations must return `cdf(x) = 0` for `x < 0` and be
/// right-continuous and nondecreasing.
pub trait EvaluableCdf: Sync {
    fn cdf(&self, x: f64) -> f64;

    fn survival(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// A point beyond which the survival function is below [`TAIL_CUTOFF`].
    fn support_hint(&self) -> f64;

    fn mean(&self) -> f64;

    /// Points where the CDF jumps or has a kink. Quadratures split there.
    fn atoms(&self) -> Vec<f64> {
        Vec::new()
    }

    /// `Pr{χ ≤ x + y | χ > y}`, with the convention `0/0 = 0` once the
    /// law has no mass beyond `y`.
    fn residual_cdf(&self, age: f64, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let at_age = self.survival(age.max(0.0));
        if at_age <= 0.0 {
            return 0.0;
        }
        let beyond = self.survival(age.max(0.0) + x);
        ((at_age - beyond) / at_age).clamp(0.0, 1.0)
    }

    /// Closed-form `∫ e^{-sx} dG(x)` when the family admits one.
    fn laplace_closed(&self, _s: f64) -> Option<f64> {
        None
    }

    /// `∫ e^{-sx} dG(x) = 1 − s ∫ e^{-sx} Ḡ(x) dx`, integrated numerically.
    fn laplace_quadrature(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Argument(format!(
                "Laplace argument must be positive, got {s}"
            )));
        }
        let upper = self.support_hint();
        let quad = Quadrature::with_abs_tol(1e-13);
        let r = quad.integrate(
            |x| (-s * x).exp() * self.survival(x),
            0.0,
            upper,
            &self.atoms(),
        )?;
        Ok((1.0 - s * r.value).clamp(0.0, 1.0))
    }

    fn laplace_transform(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Argument(format!(
                "Laplace argument must be positive, got {s}"
            )));
        }
        match self.laplace_closed(s) {
            Some(v) => Ok(v),
            None => self.laplace_quadrature(s),
        }
    }
}

impl<T: EvaluableCdf + ?Sized> EvaluableCdf for &T {
    fn cdf(&self, x: f64) -> f64 {
        (**self).cdf(x)
    }
    fn survival(&self, x: f64) -> f64 {
        (**self).survival(x)
    }
    fn support_hint(&self) -> f64 {
        (**self).support_hint()
    }
    fn mean(&self) -> f64 {
        (**self).mean()
    }
    fn atoms(&self) -> Vec<f64> {
        (**self).atoms()
    }
    fn residual_cdf(&self, age: f64, x: f64) -> f64 {
        (**self).residual_cdf(age, x)
    }
    fn laplace_closed(&self, s: f64) -> Option<f64> {
        (**self).laplace_closed(s)
    }
}

/// Parametric service-time family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "family",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum DistSpec {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
    Deterministic { point: f64 },
    Uniform { lo: f64, hi: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be a positive finite number, got {v}"
        )))
    }
}

impl DistSpec {
    pub fn exponential(rate: f64) -> Self {
        DistSpec::Exponential { rate }
    }

    pub fn gamma(shape: f64, rate: f64) -> Self {
        DistSpec::Gamma { shape, rate }
    }

    pub fn weibull(shape: f64, scale: f64) -> Self {
        DistSpec::Weibull { shape, scale }
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Self {
        DistSpec::Hyperexponential { weights, rates }
    }

    pub fn deterministic(point: f64) -> Self {
        DistSpec::Deterministic { point }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        DistSpec::Uniform { lo, hi }
    }

    pub fn family(&self) -> &'static str {
        match self {
            DistSpec::Exponential { .. } => "exponential",
            DistSpec::Gamma { .. } => "gamma",
            DistSpec::Weibull { .. } => "weibull",
            DistSpec::Hyperexponential { .. } => "hyperexponential",
            DistSpec::Deterministic { .. } => "deterministic",
            DistSpec::Uniform { .. } => "uniform",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistSpec::Exponential { rate } => positive("rate", *rate),
            DistSpec::Gamma { shape, rate } => {
                positive("shape", *shape)?;
                positive("rate", *rate)
            }
            DistSpec::Weibull { shape, scale } => {
                positive("shape", *shape)?;
                positive("scale", *scale)
            }
            DistSpec::Hyperexponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(Error::InvalidParameter(format!(
                        "hyperexponential needs matching nonempty weights and rates, got {} and {}",
                        weights.len(),
                        rates.len()
                    )));
                }
                for &r in rates {
                    positive("rate", r)?;
                }
                if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
                    return Err(Error::InvalidParameter(
                        "hyperexponential weights must be nonnegative".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > HYPEREXP_WEIGHT_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "hyperexponential weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            DistSpec::Deterministic { point } => positive("point", *point),
            DistSpec::Uniform { lo, hi } => {
                if !(*lo >= 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidParameter(format!(
                        "uniform needs 0 <= lo < hi, got lo={lo}, hi={hi}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Rescales the law so its mean equals `target_mean`, keeping the shape.
    pub fn normalize_to_mean(&self, target_mean: f64) -> Result<DistSpec> {
        self.validate()?;
        positive("target mean", target_mean)?;
        let factor = target_mean / self.mean();
        Ok(match self {
            DistSpec::Exponential { .. } => DistSpec::Exponential {
                rate: 1.0 / target_mean,
            },
            DistSpec::Gamma { shape, .. } => DistSpec::Gamma {
                shape: *shape,
                rate: shape / target_mean,
            },
            DistSpec::Weibull { shape, .. } => DistSpec::Weibull {
                shape: *shape,
                scale: target_mean / gamma_fn(1.0 + 1.0 / shape),
            },
            DistSpec::Hyperexponential { weights, rates } => DistSpec::Hyperexponential {
                weights: weights.clone(),
                rates: rates.iter().map(|r| r / factor).collect(),
            },
            DistSpec::Deterministic { .. } => DistSpec::Deterministic { point: target_mean },
            DistSpec::Uniform { lo, hi } => DistSpec::Uniform {
                lo: lo * factor,
                hi: hi * factor,
            },
        })
    }

    /// Draws one variate, by inversion where the family allows it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistSpec::Exponential { rate } => exp_variate(rng, *rate),
            DistSpec::Gamma { shape, rate } => GammaSampler::new(*shape, 1.0 / rate)
                .expect("validated gamma parameters")
                .sample(rng),
            DistSpec::Weibull { shape, scale } => {
                let e = -open_unit(rng).ln();
                scale * e.powf(1.0 / shape)
            }
            DistSpec::Hyperexponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                exp_variate(rng, rates[chosen])
            }
            DistSpec::Deterministic { point } => *point,
            DistSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Uniform on (0, 1].
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

fn exp_variate<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -open_unit(rng).ln() / rate
}

/// Smallest `x` found by doubling and bisection with `survival(x) < TAIL_CUTOFF`.
pub(crate) fn tail_point<S: Fn(f64) -> f64>(survival: S, start: f64) -> f64 {
    let mut hi = start.max(1e-6);
    let mut guard = 0;
    while survival(hi) >= TAIL_CUTOFF && guard < 200 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if survival(mid) >= TAIL_CUTOFF {
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

impl EvaluableCdf for DistSpec {
    fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            DistSpec::Exponential { rate } => -(-rate * x).exp_m1(),
            DistSpec::Gamma { shape, rate } => {
                if x == 0.0 {
                    0.0
                } else {
                    gamma_lr(*shape, rate * x)
                }
            }
            DistSpec::Weibull { shape, scale } => -(-(x / scale).powf(*shape)).exp_m1(),
            DistSpec::Deterministic { point } => {
                if x >= *point {
                    1.0
                } else {
                    0.0
                }
            }
            DistSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            DistSpec::Hyperexponential { .. } => 1.0 - self.survival(x),
        }
    }

    fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match self {
            DistSpec::Exponential { rate } => (-rate * x).exp(),
            DistSpec::Gamma { shape, rate } => {
                if x == 0.0 {
                    1.0
                } else {
                    gamma_ur(*shape, rate * x)
                }
            }
            DistSpec::Weibull { shape, scale } => (-(x / scale).powf(*shape)).exp(),
            DistSpec::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * (-r * x).exp())
                .sum::<f64>()
                .clamp(0.0, 1.0),
            DistSpec::Deterministic { .. } | DistSpec::Uniform { .. } => 1.0 - self.cdf(x),
        }
    }

    fn support_hint(&self) -> f64 {
        let log_cut = -TAIL_CUTOFF.ln();
        match self {
            DistSpec::Exponential { rate } => log_cut / rate,
            DistSpec::Weibull { shape, scale } => scale * log_cut.powf(1.0 / shape),
            DistSpec::Hyperexponential { weights, rates } => {
                let k = weights.len() as f64;
                weights
                    .iter()
                    .zip(rates)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, r)| ((w * k).ln() + log_cut).max(0.0) / r)
                    .fold(0.0, f64::max)
            }
            DistSpec::Gamma { .. } => tail_point(|x| self.survival(x), self.mean()),
            DistSpec::Deterministic { point } => *point,
            DistSpec::Uniform { hi, .. } => *hi,
        }
    }

    fn mean(&self) -> f64 {
        match self {
            DistSpec::Exponential { rate } => 1.0 / rate,
            DistSpec::Gamma { shape, rate } => shape / rate,
            DistSpec::Weibull { shape, scale } => scale * gamma_fn(1.0 + 1.0 / shape),
            DistSpec::Hyperexponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
            DistSpec::Deterministic { point } => *point,
            DistSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    fn atoms(&self) -> Vec<f64> {
        match self {
            DistSpec::Deterministic { point } => vec![*point],
            DistSpec::Uniform { lo, hi } => vec![*lo, *hi],
            _ => Vec::new(),
        }
    }

    fn laplace_closed(&self, s: f64) -> Option<f64> {
        match self {
            DistSpec::Exponential { rate } => Some(rate / (rate + s)),
            DistSpec::Gamma { shape, rate } => Some((rate / (rate + s)).powf(*shape)),
            DistSpec::Weibull { .. } => None,
            DistSpec::Hyperexponential { weights, rates } => Some(
                weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| w * r / (r + s))
                    .sum(),
            ),
            DistSpec::Deterministic { point } => Some((-s * point).exp()),
            DistSpec::Uniform { lo, hi } => {
                Some(((-s * lo).exp() - (-s * hi).exp()) / (s * (hi - lo)))
            }
        }
    }
}

/// Whether the residual mixture weight hit the degenerate `p = 1` case,
/// where the exponential component is absent and `r_y = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualWeight {
    pub value: f64,
    pub degenerate: bool,
}

/// Service law `B(x) = p·F(x) + (1 − p)·(1 − e^{−μx})` with `F` of mean `1/μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureService {
    p: f64,
    f: DistSpec,
    mu: f64,
}

impl MixtureService {
    /// Builds the mixture, checking that `f` already has mean `1/mu`.
    pub fn new(p: f64, f: DistSpec, mu: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mixture weight p must lie in (0, 1], got {p}"
            )));
        }
        positive("mu", mu)?;
        f.validate()?;
        let target = 1.0 / mu;
        let rel = (f.mean() - target).abs() / target;
        if rel > MEAN_REL_TOL {
            return Err(Error::InvalidParameter(format!(
                "F has mean {} but the mixture requires 1/mu = {target}",
                f.mean()
            )));
        }
        Ok(Self { p, f, mu })
    }

    /// Builds the mixture after rescaling `f` to mean `1/mu`.
    pub fn normalized(p: f64, f: DistSpec, mu: f64) -> Result<Self> {
        positive("mu", mu)?;
        let f = f.normalize_to_mean(1.0 / mu)?;
        Self::new(p, f, mu)
    }

    /// Pure service law `B = F` (`p = 1`), with `μ = 1/E[F]`.
    pub fn pure(f: DistSpec) -> Result<Self> {
        f.validate()?;
        let mu = 1.0 / f.mean();
        Self::new(1.0, f, mu)
    }

    pub fn exponential(mu: f64) -> Result<Self> {
        Self::new(1.0, DistSpec::exponential(mu), mu)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn f(&self) -> &DistSpec {
        &self.f
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// The reference exponential law `E_μ`.
    pub fn reference_exponential(&self) -> DistSpec {
        DistSpec::exponential(self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.p, self.f.clone(), self.mu).map(|_| ())
    }

    /// Weight `r_y` of `F_y` in `B_y = r_y·F_y + (1 − r_y)·E_μ`.
    pub fn residual_mixture_weight(&self, age: f64) -> ResidualWeight {
        let y = age.max(0.0);
        if self.p >= 1.0 {
            return ResidualWeight {
                value: 1.0,
                degenerate: true,
            };
        }
        let from_f = self.p * self.f.survival(y);
        let from_exp = (1.0 - self.p) * (-self.mu * y).exp();
        let total = from_f + from_exp;
        let value = if total > 0.0 { from_f / total } else { 0.0 };
        ResidualWeight {
            value,
            degenerate: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.p >= 1.0 || rng.random::<f64>() < self.p {
            self.f.sample(rng)
        } else {
            exp_variate(rng, self.mu)
        }
    }
}

impl EvaluableCdf for MixtureService {
    fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        self.p * self.f.cdf(x) + (1.0 - self.p) * -(-self.mu * x).exp_m1()
    }

    fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        self.p * self.f.survival(x) + (1.0 - self.p) * (-self.mu * x).exp()
    }

    fn support_hint(&self) -> f64 {
        let f_hint = self.f.support_hint();
        if self.p >= 1.0 {
            f_hint
        } else {
            f_hint.max(-TAIL_CUTOFF.ln() / self.mu)
        }
    }

    fn mean(&self) -> f64 {
        self.p * self.f.mean() + (1.0 - self.p) / self.mu
    }

    fn atoms(&self) -> Vec<f64> {
        self.f.atoms()
    }

    fn laplace_closed(&self, s: f64) -> Option<f64> {
        let f_hat = self.f.laplace_closed(s)?;
        Some(self.p * f_hat + (1.0 - self.p) * self.mu / (self.mu + s))
    }

    fn laplace_transform(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Argument(format!(
                "Laplace argument must be positive, got {s}"
            )));
        }
        let f_hat = self.f.laplace_transform(s)?;
        Ok(self.p * f_hat + (1.0 - self.p) * self.mu / (self.mu + s))
    }
}

/// The age-conditioned law `G_y(x) = Pr{χ ≤ x + y | χ > y}` as a law in its
/// own right.
#[derive(Debug, Clone, Copy)]
pub struct Residual<'a, D: EvaluableCdf + ?Sized> {
    base: &'a D,
    age: f64,
    base_survival: f64,
}

impl<'a, D: EvaluableCdf + ?Sized> Residual<'a, D> {
    /// Fails when the base law has no mass beyond `age`.
    pub fn new(base: &'a D, age: f64) -> Result<Self> {
        let age = age.max(0.0);
        let base_survival = base.survival(age);
        if base_survival <= 0.0 {
            return Err(Error::Argument(format!(
                "no mass beyond age {age}; the residual law is undefined"
            )));
        }
        Ok(Self {
            base,
            age,
            base_survival,
        })
    }

    pub fn age(&self) -> f64 {
        self.age
    }
}

impl<D: EvaluableCdf + ?Sized> EvaluableCdf for Residual<'_, D> {
    fn cdf(&self, x: f64) -> f64 {
        self.base.residual_cdf(self.age, x)
    }

    fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        (self.base.survival(self.age + x) / self.base_survival).clamp(0.0, 1.0)
    }

    fn support_hint(&self) -> f64 {
        let start = (self.base.support_hint() - self.age).max(self.base.mean());
        tail_point(|x| self.survival(x), start)
    }

    fn mean(&self) -> f64 {
        let quad = Quadrature::with_abs_tol(1e-12);
        quad.integrate(
            |x| self.survival(x),
            0.0,
            self.support_hint(),
            &self.atoms(),
        )
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
    }

    fn atoms(&self) -> Vec<f64> {
        self.base
            .atoms()
            .into_iter()
            .filter(|&a| a > self.age)
            .map(|a| a - self.age)
            .collect()
    }
}
