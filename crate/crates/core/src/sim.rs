//! Busy-period simulation of the M/GI/1/n loss system.
//!
//! One server and Poisson arrivals, so the engine just races the next
//! arrival against the current service completion. Each busy period draws
//! from its own ChaCha stream (`stream = index`), which makes the output a
//! function of `(seed, config)` alone, whatever the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::Pmf;
use crate::dist::{DistSpec, EvaluableCdf, MixtureService, Residual};
use crate::error::{Error, Result};
use crate::metrics::{kolmogorov_distance, GridPolicy};

/// Service-time law accepted by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServiceLaw {
    Mixture(MixtureService),
    Plain(DistSpec),
}

impl ServiceLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceLaw::Mixture(m) => m.sample(rng),
            ServiceLaw::Plain(d) => d.sample(rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ServiceLaw::Mixture(m) => m.validate(),
            ServiceLaw::Plain(d) => d.validate(),
        }
    }

    fn inner(&self) -> &dyn EvaluableCdf {
        match self {
            ServiceLaw::Mixture(m) => m,
            ServiceLaw::Plain(d) => d,
        }
    }
}

impl From<MixtureService> for ServiceLaw {
    fn from(m: MixtureService) -> Self {
        ServiceLaw::Mixture(m)
    }
}

impl From<DistSpec> for ServiceLaw {
    fn from(d: DistSpec) -> Self {
        ServiceLaw::Plain(d)
    }
}

impl EvaluableCdf for ServiceLaw {
    fn cdf(&self, x: f64) -> f64 {
        self.inner().cdf(x)
    }
    fn survival(&self, x: f64) -> f64 {
        self.inner().survival(x)
    }
    fn support_hint(&self) -> f64 {
        self.inner().support_hint()
    }
    fn mean(&self) -> f64 {
        self.inner().mean()
    }
    fn atoms(&self) -> Vec<f64> {
        self.inner().atoms()
    }
    fn laplace_closed(&self, s: f64) -> Option<f64> {
        self.inner().laplace_closed(s)
    }
    fn laplace_transform(&self, s: f64) -> Result<f64> {
        self.inner().laplace_transform(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub lambda: f64,
    pub service: ServiceLaw,
    /// Waiting places, not counting the customer in service.
    pub n: usize,
    pub num_busy_periods: usize,
    pub seed: u64,
    #[serde(default)]
    pub trace: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be positive, got {}",
                self.lambda
            )));
        }
        if self.num_busy_periods == 0 {
            return Err(Error::InvalidParameter(
                "at least one busy period is required".into(),
            ));
        }
        self.service.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    ArrivalAdmitted,
    ArrivalLost,
    ServiceStart,
    ServiceEnd,
}

/// One event of a traced busy period. For arrivals, `level` is the number
/// of customers found in the system; for service events it is the number
/// present right after the event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: TraceKind,
    pub time: f64,
    pub level: usize,
    /// Elapsed service of the customer in service, at arrivals.
    pub age_tau: Option<f64>,
    /// Remaining service of the customer in service, at arrivals.
    pub residual_theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusyPeriodSample {
    pub losses: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

/// RNG for busy period `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn interarrival<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / lambda
}

fn simulate_one(cfg: &SimConfig, index: u64) -> BusyPeriodSample {
    let mut rng = substream(cfg.seed, index);
    let mut trace = cfg.trace.then(Vec::new);
    let mut record = |ev: TraceEvent| {
        if let Some(t) = trace.as_mut() {
            t.push(ev);
        }
    };

    let full = cfg.n + 1;
    let mut level = 1usize;
    let mut losses = 0u64;
    let mut service_start = 0.0;
    let mut service_end = cfg.service.sample(&mut rng);
    record(TraceEvent {
        kind: TraceKind::ArrivalAdmitted,
        time: 0.0,
        level: 0,
        age_tau: Some(0.0),
        residual_theta: Some(service_end),
    });
    record(TraceEvent {
        kind: TraceKind::ServiceStart,
        time: 0.0,
        level,
        age_tau: None,
        residual_theta: None,
    });
    let mut next_arrival = interarrival(&mut rng, cfg.lambda);

    loop {
        if next_arrival < service_end {
            let t = next_arrival;
            let kind = if level == full {
                losses += 1;
                TraceKind::ArrivalLost
            } else {
                TraceKind::ArrivalAdmitted
            };
            record(TraceEvent {
                kind,
                time: t,
                level,
                age_tau: Some(t - service_start),
                residual_theta: Some(service_end - t),
            });
            if kind == TraceKind::ArrivalAdmitted {
                level += 1;
            }
            next_arrival = t + interarrival(&mut rng, cfg.lambda);
        } else {
            let t = service_end;
            level -= 1;
            record(TraceEvent {
                kind: TraceKind::ServiceEnd,
                time: t,
                level,
                age_tau: None,
                residual_theta: None,
            });
            if level == 0 {
                break;
            }
            service_start = t;
            service_end = t + cfg.service.sample(&mut rng);
            record(TraceEvent {
                kind: TraceKind::ServiceStart,
                time: t,
                level,
                age_tau: None,
                residual_theta: None,
            });
        }
    }
    BusyPeriodSample { losses, trace }
}

/// Simulates `cfg.num_busy_periods` independent busy periods, in index order.
pub fn run_busy_periods(cfg: &SimConfig) -> Result<Vec<BusyPeriodSample>> {
    cfg.validate()?;
    Ok((0..cfg.num_busy_periods as u64)
        .into_par_iter()
        .map(|i| simulate_one(cfg, i))
        .collect())
}

pub fn losses(samples: &[BusyPeriodSample]) -> Vec<u64> {
    samples.iter().map(|s| s.losses).collect()
}

/// Expected losses per busy period of M/M/1/n, from first-step analysis on
/// the embedded jump chain started with one customer present.
pub fn mm1n_expected_losses(lambda: f64, mu: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rates must be positive, got λ = {lambda}, μ = {mu}"
        )));
    }
    let up = lambda / (lambda + mu);
    let down = 1.0 - up;
    // Unknowns h(1..=n+1):
    //   h(k) − up·h(k+1) − down·h(k−1) = 0   for k ≤ n, h(0) = 0
    //   (1 − up)·h(n+1) − down·h(n) = up      at the full state
    let size = n + 1;
    let mut sub = vec![-down; size];
    let mut diag = vec![1.0; size];
    let mut sup = vec![-up; size];
    let mut rhs = vec![0.0; size];
    sub[0] = 0.0;
    diag[size - 1] = 1.0 - up;
    sup[size - 1] = 0.0;
    rhs[size - 1] = up;

    // Thomas algorithm; the system is diagonally dominant.
    for k in 1..size {
        let w = sub[k] / diag[k - 1];
        diag[k] -= w * sup[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut h = vec![0.0; size];
    h[size - 1] = rhs[size - 1] / diag[size - 1];
    for k in (0..size - 1).rev() {
        h[k] = (rhs[k] - sup[k] * h[k + 1]) / diag[k];
    }
    Ok(h[0])
}

/// Empirical law of the loss counts.
pub fn empirical_distribution(losses: &[u64]) -> Result<Pmf> {
    if losses.is_empty() {
        return Err(Error::Argument("no samples".into()));
    }
    let max = *losses.iter().max().expect("nonempty") as usize;
    let mut counts = vec![0u64; max + 1];
    for &l in losses {
        counts[l as usize] += 1;
    }
    let n = losses.len() as f64;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let total: f64 = mass.iter().sum();
    // Renormalize rounding so the balance check is exact.
    Pmf::new(mass.iter().map(|m| m / total).collect(), 0.0)
}

pub fn sample_mean_and_se(losses: &[u64]) -> (f64, f64) {
    let n = losses.len() as f64;
    let mean = losses.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = losses
        .iter()
        .map(|&l| (l as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub busy_periods: usize,
    pub b_hat: f64,
    pub tv_distance: f64,
    pub threshold: f64,
    /// Typical TV distance produced by sampling noise alone at this N.
    pub sampling_tv: f64,
    pub empirical: Pmf,
    pub verdict: CheckVerdict,
}

pub const KAPPA_TV_THRESHOLD: f64 = 0.01;

/// Arrivals that find exactly one customer, per busy period. Every visit to
/// level 1 starts a fresh service, so with `n ≥ 1` this count is geometric
/// with parameter `B̂(λ)`.
pub fn kappa_first_level_counts(samples: &[BusyPeriodSample]) -> Result<Vec<u64>> {
    samples
        .iter()
        .map(|s| {
            let trace = s
                .trace
                .as_ref()
                .ok_or_else(|| Error::Precondition("trace was not recorded".into()))?;
            Ok(trace
                .iter()
                .filter(|e| e.kind == TraceKind::ArrivalAdmitted && e.level == 1)
                .count() as u64)
        })
        .collect()
}

pub fn kappa_first_level_check(cfg: &SimConfig) -> Result<KappaReport> {
    if cfg.n < 1 {
        return Err(Error::Precondition(
            "the first-level count needs at least one waiting place".into(),
        ));
    }
    if !cfg.trace {
        return Err(Error::Precondition("tracing must be enabled".into()));
    }
    let samples = run_busy_periods(cfg)?;
    let counts = kappa_first_level_counts(&samples)?;
    let b_hat = cfg.service.laplace_transform(cfg.lambda)?;
    kappa_report(&counts, b_hat)
}

pub fn kappa_report(counts: &[u64], b_hat: f64) -> Result<KappaReport> {
    let empirical = empirical_distribution(counts)?;
    let n = counts.len() as f64;
    let mut tv = 0.0;
    let mut sampling = 0.0;
    let mut geometric_cdf = 0.0;
    for m in 0..empirical.len() {
        let p = (1.0 - b_hat).powi(m as i32) * b_hat;
        geometric_cdf += p;
        tv += (empirical.get(m) - p).abs();
        sampling += (p * (1.0 - p) / n).sqrt();
    }
    // Geometric mass beyond the observed support.
    tv += (1.0 - geometric_cdf).max(0.0);
    let mut m = empirical.len();
    loop {
        let p = (1.0 - b_hat).powi(m as i32) * b_hat;
        if p < 1e-12 {
            break;
        }
        sampling += (p * (1.0 - p) / n).sqrt();
        m += 1;
    }
    let tv = 0.5 * tv;
    let sampling = 0.5 * sampling;
    let verdict = if sampling >= KAPPA_TV_THRESHOLD {
        CheckVerdict::Inconclusive
    } else if tv < KAPPA_TV_THRESHOLD {
        CheckVerdict::Pass
    } else {
        CheckVerdict::Fail
    };
    Ok(KappaReport {
        busy_periods: counts.len(),
        b_hat,
        tv_distance: tv,
        threshold: KAPPA_TV_THRESHOLD,
        sampling_tv: sampling,
        empirical,
        verdict,
    })
}

/// `(τ, ϑ)` from the first mid-service arrival of each service, so pairs
/// are independent across services.
pub fn age_residual_pairs(samples: &[BusyPeriodSample]) -> Result<Vec<(f64, f64)>> {
    let mut pairs = Vec::new();
    for s in samples {
        let trace = s
            .trace
            .as_ref()
            .ok_or_else(|| Error::Precondition("trace was not recorded".into()))?;
        let mut taken = true;
        for e in trace {
            match e.kind {
                TraceKind::ServiceStart => taken = false,
                TraceKind::ArrivalAdmitted | TraceKind::ArrivalLost if !taken && e.level >= 1 => {
                    if let (Some(tau), Some(theta)) = (e.age_tau, e.residual_theta) {
                        pairs.push((tau, theta));
                        taken = true;
                    }
                }
                _ => {}
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub count: usize,
    pub kolmogorov: f64,
    pub dkw: f64,
    /// `sup_{y ∈ bin} 𝒦(B_y, B_mid)`.
    pub modulus: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBin {
    pub lo: f64,
    pub hi: f64,
    pub mid: f64,
    /// Absent when no sample fell in the bin.
    pub stats: Option<BinStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualAgeReport {
    pub pairs: usize,
    pub alpha: f64,
    pub bins: Vec<AgeBin>,
    pub all_within: bool,
}

pub const DEFAULT_AGE_BINS: usize = 20;

/// Exact two-sided KS statistic of a sample against a CDF.
fn ks_statistic<D: EvaluableCdf + ?Sized>(sorted: &[f64], law: &D) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            let f_left = law.cdf(x - 1e-12 * x.abs().max(1.0));
            ((i + 1) as f64 / n - f).max(f_left - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Compares realized residual service against `B_y`, binned by age `y`.
///
/// Bins are `bins` equal-width cells on `[0, q99]` of the observed ages.
/// The per-bin band is a Bonferroni DKW half-width plus the variation of
/// `B_y` across the bin.
pub fn residual_age_check(
    samples: &[BusyPeriodSample],
    law: &ServiceLaw,
    bins: usize,
    alpha: f64,
) -> Result<ResidualAgeReport> {
    if bins == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!(
            "need bins ≥ 1 and α in (0, 1), got {bins}, {alpha}"
        )));
    }
    let pairs = age_residual_pairs(samples)?;
    if pairs.is_empty() {
        return Err(Error::Argument("no mid-service arrivals observed".into()));
    }
    let mut ages: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    ages.sort_by(f64::total_cmp);
    let q99 = ages[((ages.len() as f64 * 0.99) as usize).min(ages.len() - 1)];
    let width = q99 / bins as f64;
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &(tau, theta) in &pairs {
        if tau <= q99 && width > 0.0 {
            cells[((tau / width) as usize).min(bins - 1)].push(theta);
        }
    }
    let grid = GridPolicy::default();
    let out: Result<Vec<AgeBin>> = cells
        .into_par_iter()
        .enumerate()
        .map(|(b, mut thetas)| {
            let lo = b as f64 * width;
            let hi = lo + width;
            let mid = 0.5 * (lo + hi);
            if thetas.is_empty() {
                return Ok(AgeBin {
                    lo,
                    hi,
                    mid,
                    stats: None,
                });
            }
            thetas.sort_by(f64::total_cmp);
            let reference = Residual::new(law, mid)?;
            let kolmogorov = ks_statistic(&thetas, &reference);
            let mut modulus: f64 = 0.0;
            for j in 0..=8 {
                let y = lo + width * j as f64 / 8.0;
                if law.survival(y) <= 0.0 {
                    continue;
                }
                let other = Residual::new(law, y)?;
                modulus = modulus.max(kolmogorov_distance(&other, &reference, &grid)?.value);
            }
            let count = thetas.len();
            let dkw = dkw_halfwidth(count, alpha / bins as f64);
            Ok(AgeBin {
                lo,
                hi,
                mid,
                stats: Some(BinStats {
                    count,
                    kolmogorov,
                    dkw,
                    modulus,
                    within_band: kolmogorov <= dkw + modulus,
                }),
            })
        })
        .collect();
    let bins = out?;
    let all_within = bins
        .iter()
        .filter_map(|b| b.stats.as_ref())
        .all(|s| s.within_band);
    Ok(ResidualAgeReport {
        pairs: pairs.len(),
        alpha,
        bins,
        all_within,
    })
}

/// Two-sided DKW half-width `sqrt(ln(2/α) / 2N)`.
pub fn dkw_halfwidth(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}
