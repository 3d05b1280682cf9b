//! Bounding laws for the busy-period loss count: mixed-Poisson counts,
//! offspring laws, Galton–Watson generation sizes and the compound sums
//! `Σ_{i=1}^{Z_n} ς_i` built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{DistSpec, EvaluableCdf, MixtureService, Residual};
use crate::error::{Error, Result};
use crate::metrics::{
    self, c_lambda_leq, check_aging_class, erlang_weighted_survival, GridPolicy, OrderVerdict,
    DEFAULT_I_MAX, DEFAULT_ORDER_TOL,
};

/// Tolerance for `Σ mass + tail = 1`.
pub const MASS_BALANCE_TOL: f64 = 1e-12;

/// Probability law on `0..len` plus the mass that was not represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    mass: Vec<f64>,
    tail_mass: f64,
}

impl Pmf {
    pub fn new(mass: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if mass.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::InvalidParameter(
                "pmf entries must be finite and nonnegative".into(),
            ));
        }
        if !(tail_mass >= 0.0 && tail_mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tail mass must be nonnegative, got {tail_mass}"
            )));
        }
        let total: f64 = mass.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > MASS_BALANCE_TOL.max(1e-15 * mass.len() as f64) {
            return Err(Error::InvalidParameter(format!(
                "pmf mass plus tail is {total}, expected 1"
            )));
        }
        Ok(Self { mass, tail_mass })
    }

    pub fn point_mass(at: usize) -> Self {
        let mut mass = vec![0.0; at + 1];
        mass[at] = 1.0;
        Self {
            mass,
            tail_mass: 0.0,
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn get(&self, m: usize) -> f64 {
        self.mass.get(m).copied().unwrap_or(0.0)
    }

    /// Mean of the represented part.
    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(m, p)| m as f64 * p)
            .sum()
    }

    /// `Pr{X ≤ m}` counting only represented mass.
    pub fn cdf(&self, m: usize) -> f64 {
        self.mass.iter().take(m + 1).sum::<f64>().min(1.0)
    }

    /// `Pr{X > m}`; the unrepresented tail counts as lying beyond `m`.
    pub fn survival(&self, m: usize) -> f64 {
        (1.0 - self.cdf(m)).max(0.0)
    }

    pub fn partial_sums(&self) -> Vec<f64> {
        self.mass
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    /// `self ≤_st other`: every partial sum of `self` is at least the
    /// corresponding partial sum of `other`, up to `tol`.
    pub fn stochastically_leq(&self, other: &Pmf, tol: f64) -> bool {
        let n = self.len().max(other.len());
        (0..n).all(|m| self.cdf(m) >= other.cdf(m) - tol)
    }

    pub fn max_abs_diff(&self, other: &Pmf) -> f64 {
        let n = self.len().max(other.len());
        (0..n)
            .map(|m| (self.get(m) - other.get(m)).abs())
            .fold(0.0, f64::max)
    }

    /// Inverse-CDF draw; the tail maps to one past the represented support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, p) in self.mass.iter().enumerate() {
            acc += p;
            if u < acc {
                return m;
            }
        }
        self.mass.len()
    }

    fn trimmed(mut mass: Vec<f64>, tail_mass: f64) -> Self {
        while mass.len() > 1 && mass.last() == Some(&0.0) {
            mass.pop();
        }
        Self { mass, tail_mass }
    }
}

/// Support growth rule for truncated computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationPolicy {
    pub tail_tol: f64,
    pub max_support: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            tail_tol: 1e-12,
            max_support: 10_000,
        }
    }
}

/// Direct convolution truncated to `cap` entries.
fn convolve_capped(a: &[f64], b: &[f64], cap: usize) -> Vec<f64> {
    let len = (a.len() + b.len()).saturating_sub(1).min(cap);
    let mut out = vec![0.0; len];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 || i >= len {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(len - i) {
            out[i + j] += x * y;
        }
    }
    out
}

fn random_sum_capped(count: &Pmf, summand: &Pmf, cap: usize) -> (Vec<f64>, f64) {
    let mut out = vec![0.0; cap];
    let mut tail = count.tail_mass;
    let mut power = vec![1.0];
    for (j, &weight) in count.mass.iter().enumerate() {
        if j > 0 {
            power = convolve_capped(&power, &summand.mass, cap);
        }
        let kept: f64 = power.iter().sum();
        if weight > 0.0 {
            for (o, p) in out.iter_mut().zip(&power) {
                *o += weight * p;
            }
            tail += weight * (1.0 - kept).max(0.0);
        }
    }
    (out, tail)
}

/// Share of the tail budget a single convolution may add; inputs built by
/// this module carry tails far below the budget, so chained sums stay within it.
const STEP_SHARE: f64 = 1.0 / 16.0;

/// Tolerance for the base laws (offspring, mixed-Poisson) feeding the sums.
fn base_tol(policy: &TruncationPolicy) -> f64 {
    policy.tail_tol * 1e-4
}

/// Law of `Σ_{i=1}^{N} X_i` with `N ~ count` and i.i.d. `X_i ~ summand`.
///
/// The support grows by doubling until the mass lost in this step is below
/// a share of `policy.tail_tol`; the result keeps the inherited tails too.
/// Exceeding `policy.max_support` or the total budget is an error.
pub fn random_sum(count: &Pmf, summand: &Pmf, policy: &TruncationPolicy) -> Result<Pmf> {
    let inherited = count.tail_mass + count.mean() * summand.tail_mass;
    if inherited > policy.tail_tol {
        return Err(Error::Truncation {
            tail: inherited,
            tol: policy.tail_tol,
            support: count.len(),
        });
    }
    let step_tol = policy.tail_tol * STEP_SHARE;
    let mut cap = (count.len() + summand.len()).clamp(64, policy.max_support);
    loop {
        let (mass, tail) = random_sum_capped(count, summand, cap);
        if tail - inherited <= step_tol {
            if tail > policy.tail_tol {
                return Err(Error::Truncation {
                    tail,
                    tol: policy.tail_tol,
                    support: cap,
                });
            }
            return Ok(Pmf::trimmed(mass, tail));
        }
        if cap >= policy.max_support {
            return Err(Error::Truncation {
                tail,
                tol: policy.tail_tol,
                support: cap,
            });
        }
        cap = (cap * 2).min(policy.max_support);
    }
}

/// Mixed-Poisson law `m ↦ ∫ e^{−λx}(λx)^m/m! dG(x)` for `m = 0..=n_max`.
///
/// Cumulative probabilities come from the by-parts identity
/// `Pr{θ ≥ k} = E[Ḡ(T_k)]`, `T_k ~ Erlang(k, λ)`, so only the CDF of `G`
/// is evaluated.
pub fn mixed_poisson_pmf<D>(law: &D, lambda: f64, n_max: usize, tail_tol: f64) -> Result<Pmf>
where
    D: EvaluableCdf + ?Sized,
{
    check_rate(lambda)?;
    let mut at_least = Vec::with_capacity(n_max + 2);
    at_least.push(1.0);
    for k in 1..=n_max + 1 {
        at_least.push(erlang_weighted_survival(law, k, lambda)?);
    }
    finish_mixed_poisson(at_least, tail_tol)
}

/// Mixed-Poisson law with the support grown until the tail is below tolerance.
pub fn mixed_poisson_auto<D>(law: &D, lambda: f64, policy: &TruncationPolicy) -> Result<Pmf>
where
    D: EvaluableCdf + ?Sized,
{
    check_rate(lambda)?;
    let mut at_least = vec![1.0];
    loop {
        let k = at_least.len();
        let t = erlang_weighted_survival(law, k, lambda)?;
        at_least.push(t);
        if t <= policy.tail_tol {
            break;
        }
        if k >= policy.max_support {
            return Err(Error::Truncation {
                tail: t,
                tol: policy.tail_tol,
                support: k,
            });
        }
    }
    finish_mixed_poisson(at_least, policy.tail_tol)
}

fn finish_mixed_poisson(mut at_least: Vec<f64>, tail_tol: f64) -> Result<Pmf> {
    // Pr{θ ≥ k} must be nonincreasing; quadrature noise at the 1e-14 level
    // is flattened out.
    for k in 1..at_least.len() {
        if at_least[k] > at_least[k - 1] {
            at_least[k] = at_least[k - 1];
        }
    }
    let tail = *at_least.last().expect("nonempty");
    if tail > tail_tol {
        return Err(Error::Truncation {
            tail,
            tol: tail_tol,
            support: at_least.len() - 1,
        });
    }
    let mass = at_least.windows(2).map(|w| w[0] - w[1]).collect();
    Ok(Pmf::trimmed(mass, tail))
}

fn check_rate(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "arrival rate must be positive, got {lambda}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffspringProvenance {
    ExactGeometric { b_hat: f64 },
    Inflated { b_hat: f64, c_eps: f64 },
}

/// Per-individual progeny law of a Galton–Watson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    pub pmf: Pmf,
    /// `q` when the pgf is `q / (1 − z(1 − q))`.
    pub pgf_closed_form: Option<f64>,
    pub provenance: OffspringProvenance,
    /// Set when the zero class absorbed all mass, so the bound says nothing.
    pub vacuous: bool,
}

impl OffspringLaw {
    pub fn mean(&self) -> f64 {
        self.pmf.mean()
    }

    pub fn pgf(&self, z: f64) -> f64 {
        self.pmf.mass().iter().rev().fold(0.0, |acc, p| acc * z + p)
            + self.pmf.tail_mass() * z.powi(self.pmf.len() as i32)
    }
}

fn check_b_hat(b_hat: f64) -> Result<()> {
    if b_hat > 0.0 && b_hat < 1.0 {
        Ok(())
    } else {
        Err(Error::Degenerate(format!(
            "offspring parameter must lie strictly inside (0, 1), got {b_hat}"
        )))
    }
}

/// Geometric tail `head·(1 − b)^{m−1}·b` for `m ≥ 1` after a zero class.
fn geometric_tail_pmf(zero: f64, b_hat: f64, tail_tol: f64) -> Pmf {
    let mut mass = vec![zero];
    let rest = 1.0 - zero;
    let mut level = rest;
    while level > tail_tol && mass.len() < 1_000_000 {
        mass.push(level * b_hat);
        level *= 1.0 - b_hat;
    }
    Pmf::trimmed(mass, level.max(0.0))
}

/// Geometric progeny `Pr{m} = (1 − b̂)^m·b̂`.
pub fn geometric_offspring(b_hat: f64) -> Result<OffspringLaw> {
    geometric_offspring_with(b_hat, &TruncationPolicy::default())
}

pub fn geometric_offspring_with(b_hat: f64, policy: &TruncationPolicy) -> Result<OffspringLaw> {
    check_b_hat(b_hat)?;
    Ok(OffspringLaw {
        pmf: geometric_tail_pmf(b_hat, b_hat, base_tol(policy)),
        pgf_closed_form: Some(b_hat),
        provenance: OffspringProvenance::ExactGeometric { b_hat },
        vacuous: false,
    })
}

/// Progeny law whose zero class is raised by `c_eps` and whose positive
/// part keeps the geometric shape of the exact law:
/// `Pr{0} = min(1, b̂ + c_eps)`, `Pr{m} = (1 − Pr{0})(1 − b̂)^{m−1} b̂`.
///
/// It is stochastically below `geometric_offspring(b̂)` and equals it when
/// `c_eps = 0`. When `b̂ + c_eps ≥ 1` the law collapses to zero progeny and
/// is flagged vacuous.
pub fn inflated_offspring(b_hat: f64, c_eps: f64) -> Result<OffspringLaw> {
    inflated_offspring_with(b_hat, c_eps, &TruncationPolicy::default())
}

pub fn inflated_offspring_with(
    b_hat: f64,
    c_eps: f64,
    policy: &TruncationPolicy,
) -> Result<OffspringLaw> {
    check_b_hat(b_hat)?;
    if !(c_eps >= 0.0 && c_eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inflation c·ε must be nonnegative, got {c_eps}"
        )));
    }
    let vacuous = b_hat + c_eps >= 1.0;
    let zero = (b_hat + c_eps).min(1.0);
    Ok(OffspringLaw {
        pmf: geometric_tail_pmf(zero, b_hat, base_tol(policy)),
        pgf_closed_form: (c_eps == 0.0).then_some(b_hat),
        provenance: OffspringProvenance::Inflated { b_hat, c_eps },
        vacuous,
    })
}

/// Law of generation `n` of a Galton–Watson process with one ancestor.
pub fn gw_generation_pmf(
    offspring: &OffspringLaw,
    n: usize,
    policy: &TruncationPolicy,
) -> Result<Pmf> {
    let mut z = Pmf::point_mass(1);
    for _ in 0..n {
        z = random_sum(&z, &offspring.pmf, policy)?;
    }
    Ok(z)
}

/// Which theorem family a bound is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Mixture service with a memorylessness deviation on `F`.
    A,
    /// As `A`, with `F` NBU or NWU.
    B,
    /// NBU service with a memorylessness deviation on `B` itself.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub condition: Condition,
    /// Use the sharper `p = 1/2` constants.
    #[serde(default)]
    pub p_special: bool,
    /// Driving deviation; computed from the service law when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub n: usize,
    pub lambda: f64,
    pub service: MixtureService,
    /// Optional mixing law for the summands of the lower bound.
    #[serde(default)]
    pub g: Option<DistSpec>,
}

impl BoundSpec {
    /// Coefficient multiplying ε in the offspring envelope.
    pub fn c_epsilon(&self) -> f64 {
        match (self.condition, self.p_special) {
            (Condition::A, false) => 5.0,
            (Condition::A, true) => 2.0,
            (Condition::B, false) => 3.0,
            (Condition::B, true) => 1.5,
            (Condition::C, _) => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.lambda)?;
        self.service.validate()?;
        if self.p_special && self.condition == Condition::C {
            return Err(Error::InvalidParameter(
                "the p = 1/2 constants apply to conditions A and B only".into(),
            ));
        }
        if self.p_special && !metrics::is_half(self.service.p()) {
            return Err(Error::InvalidParameter(format!(
                "p_special requires p = 1/2, got p = {}",
                self.service.p()
            )));
        }
        if let Some(e) = self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidParameter(format!(
                    "epsilon must lie in [0, 1], got {e}"
                )));
            }
        }
        if let Some(g) = &self.g {
            g.validate()?;
        }
        Ok(())
    }

    /// ε from the spec, or the memorylessness deviation of `F` (conditions
    /// A, B) or of `B` (condition C).
    pub fn resolved_epsilon(&self, grid: &GridPolicy) -> Result<f64> {
        if let Some(e) = self.epsilon {
            return Ok(e);
        }
        let sup = match self.condition {
            Condition::A | Condition::B => metrics::memorylessness_epsilon(self.service.f(), grid)?,
            Condition::C => metrics::memorylessness_epsilon(&self.service, grid)?,
        };
        Ok(sup.value)
    }

    pub fn b_hat(&self) -> Result<f64> {
        self.service.laplace_transform(self.lambda)
    }
}

/// Where the summand law of the lower bound came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SummandSource {
    /// `G = F`, the minimal residual law of an NWU `F`.
    NwuF {
        /// Whether `F ≤_{C_λ} E_μ` also held; informational.
        below_exponential: OrderVerdict,
    },
    /// `B_{y⁰} = B`, the minimal residual law of an NWU service law.
    NwuService,
    /// Caller-supplied `G`, verified on an age grid.
    Supplied { law: DistSpec, ages_checked: usize },
    /// Upper bound: the service law itself.
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPmf {
    pub side: Side,
    pub pmf: Pmf,
    pub generation: Pmf,
    pub summand: Pmf,
    pub offspring: OffspringLaw,
    pub source: SummandSource,
    pub b_hat: f64,
    pub epsilon: f64,
    pub c_epsilon: f64,
    pub vacuous: bool,
}

/// Ages at which a supplied `G` is compared against residual laws.
fn age_grid<D: EvaluableCdf + ?Sized>(law: &D) -> Vec<f64> {
    let hint = law.support_hint();
    let mut ys: Vec<f64> = (0..24).map(|i| hint * i as f64 / 24.0).collect();
    ys.extend((1..=8).map(|i| hint * 1e-3 * 2f64.powi(i)));
    ys.retain(|&y| law.survival(y) > 1e-9);
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    ys
}

fn verify_below_residuals<D>(g: &DistSpec, base: &D, lambda: f64) -> Result<usize>
where
    D: EvaluableCdf + ?Sized,
{
    let ages = age_grid(base);
    for &y in &ages {
        let residual = Residual::new(base, y)?;
        if let OrderVerdict::FailsAt { index, gap } =
            c_lambda_leq(g, &residual, lambda, DEFAULT_I_MAX, DEFAULT_ORDER_TOL)?
        {
            return Err(Error::Precondition(format!(
                "supplied G is not C_λ-below the residual law at age {y}: index {index}, gap {gap:e}"
            )));
        }
    }
    Ok(ages.len())
}

/// Resolves the mixing law of the lower-bound summands.
pub fn resolve_summand_law(
    spec: &BoundSpec,
    grid: &GridPolicy,
) -> Result<(Box<dyn EvaluableCdf + Send>, SummandSource)> {
    let ms = &spec.service;
    let exp = ms.reference_exponential();
    match spec.condition {
        Condition::A | Condition::B => {
            if let Some(g) = &spec.g {
                let ages_checked = verify_below_residuals(g, ms.f(), spec.lambda)?;
                if let OrderVerdict::FailsAt { index, gap } =
                    c_lambda_leq(g, &exp, spec.lambda, DEFAULT_I_MAX, DEFAULT_ORDER_TOL)?
                {
                    return Err(Error::Precondition(format!(
                        "supplied G is not C_λ-below E_μ: index {index}, gap {gap:e}"
                    )));
                }
                return Ok((
                    Box::new(g.clone()),
                    SummandSource::Supplied {
                        law: g.clone(),
                        ages_checked,
                    },
                ));
            }
            let class = check_aging_class(ms.f(), grid)?;
            if class.is_nwu() {
                let below_exponential =
                    c_lambda_leq(ms.f(), &exp, spec.lambda, DEFAULT_I_MAX, DEFAULT_ORDER_TOL)?;
                Ok((
                    Box::new(ms.f().clone()),
                    SummandSource::NwuF { below_exponential },
                ))
            } else {
                Err(Error::Precondition(format!(
                    "no minimal residual law is known for F of class {class:?}; supply G"
                )))
            }
        }
        Condition::C => {
            if let Some(g) = &spec.g {
                let ages_checked = verify_below_residuals(g, ms, spec.lambda)?;
                return Ok((
                    Box::new(g.clone()),
                    SummandSource::Supplied {
                        law: g.clone(),
                        ages_checked,
                    },
                ));
            }
            let class = check_aging_class(ms, grid)?;
            if class.is_nwu() {
                Ok((Box::new(ms.clone()), SummandSource::NwuService))
            } else {
                Err(Error::Precondition(format!(
                    "the service law of class {class:?} has no known minimal residual law; only the upper bound is available"
                )))
            }
        }
    }
}

/// Builds the lower or upper bounding law for `L_n`.
pub fn compound_bound_pmf(
    spec: &BoundSpec,
    side: Side,
    trunc: &TruncationPolicy,
) -> Result<BoundPmf> {
    compound_bound_pmf_with_grid(spec, side, trunc, &GridPolicy::default())
}

pub fn compound_bound_pmf_with_grid(
    spec: &BoundSpec,
    side: Side,
    trunc: &TruncationPolicy,
    grid: &GridPolicy,
) -> Result<BoundPmf> {
    spec.validate()?;
    let ms = &spec.service;
    match spec.condition {
        Condition::B => {
            let class = check_aging_class(ms.f(), grid)?;
            if !class.is_aging() {
                return Err(Error::Precondition(format!(
                    "condition B needs F to be NBU or NWU, found {class:?}"
                )));
            }
        }
        Condition::C => {
            let class = check_aging_class(ms, grid)?;
            if !class.is_nbu() {
                return Err(Error::Precondition(format!(
                    "condition C needs an NBU service law, found {class:?}"
                )));
            }
        }
        Condition::A => {}
    }
    if side == Side::Upper && spec.condition != Condition::C {
        return Err(Error::Precondition(
            "an upper bound is available under condition C only".into(),
        ));
    }

    let epsilon = spec.resolved_epsilon(grid)?;
    let b_hat = spec.b_hat()?;
    let c_epsilon = spec.c_epsilon();

    let base = TruncationPolicy {
        tail_tol: base_tol(trunc),
        ..*trunc
    };
    let (offspring, summand, source) = match side {
        Side::Lower => {
            let (g, source) = resolve_summand_law(spec, grid)?;
            let offspring = inflated_offspring_with(b_hat, c_epsilon * epsilon, trunc)?;
            (
                offspring,
                mixed_poisson_auto(g.as_ref(), spec.lambda, &base)?,
                source,
            )
        }
        Side::Upper => (
            geometric_offspring_with(b_hat, trunc)?,
            mixed_poisson_auto(ms, spec.lambda, &base)?,
            SummandSource::Service,
        ),
    };
    let generation = gw_generation_pmf(&offspring, spec.n, trunc)?;
    let pmf = random_sum(&generation, &summand, trunc)?;
    Ok(BoundPmf {
        side,
        vacuous: offspring.vacuous && spec.n > 0,
        pmf,
        generation,
        summand,
        offspring,
        source,
        b_hat,
        epsilon,
        c_epsilon,
    })
}
