//! Empirical checks of stochastic order between simulated loss counts and
//! the analytic bounding laws.
//!
//! A finite sample can only fail to contradict an ordering, so the best
//! verdict is "consistent".

use serde::{Deserialize, Serialize};

use crate::branching::{
    compound_bound_pmf_with_grid, BoundPmf, BoundSpec, Condition, Pmf, Side, TruncationPolicy,
};
use crate::error::{Error, Result};
use crate::metrics::{envelope_ids, envelope_report, EpsReport, GridPolicy};
use crate::sim::{dkw_halfwidth, empirical_distribution, losses, run_busy_periods, SimConfig};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_BUSY_PERIODS: usize = 100_000;
pub const MIN_SAMPLES: usize = 100;
/// Largest bound tail accepted by [`dominance_test`].
pub const BOUND_TAIL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Samples should be stochastically larger than the bound.
    SampleDominatesBound,
    /// The bound should be stochastically larger than the samples.
    BoundDominatesSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub support: usize,
    pub empirical_survival: f64,
    pub bound_survival: f64,
    /// Shortfall of the side that should be larger; positive is against
    /// the claimed order.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceVerdict {
    pub direction: Direction,
    pub alpha: f64,
    pub samples: usize,
    pub band_halfwidth: f64,
    pub violations: Vec<MarginPoint>,
    pub worst: MarginPoint,
    pub verdict: Verdict,
}

/// DKW-band comparison of the empirical survival function of `samples`
/// with the survival function of `bound` over their joint support.
pub fn dominance_test(
    samples: &[u64],
    bound: &Pmf,
    direction: Direction,
    alpha: f64,
) -> Result<DominanceVerdict> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Argument(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!(
            "α must lie in (0, 1), got {alpha}"
        )));
    }
    if bound.tail_mass() > BOUND_TAIL_TOL {
        return Err(Error::Precondition(format!(
            "bound tail {:e} exceeds {BOUND_TAIL_TOL:e}",
            bound.tail_mass()
        )));
    }
    let emp = empirical_distribution(samples)?;
    let band = dkw_halfwidth(samples.len(), alpha);
    let support = emp.len().max(bound.len());
    let mut violations = Vec::new();
    let mut worst: Option<MarginPoint> = None;
    for m in 0..support {
        let es = emp.survival(m);
        let bs = bound.survival(m);
        let margin = match direction {
            Direction::SampleDominatesBound => bs - es,
            Direction::BoundDominatesSample => es - bs,
        };
        let point = MarginPoint {
            support: m,
            empirical_survival: es,
            bound_survival: bs,
            margin,
        };
        if margin > band {
            violations.push(point);
        }
        if worst.is_none_or(|w| margin > w.margin) {
            worst = Some(point);
        }
    }
    let verdict = if band > 0.5 {
        Verdict::Inconclusive
    } else if violations.is_empty() {
        Verdict::Consistent
    } else {
        Verdict::Violated
    };
    Ok(DominanceVerdict {
        direction,
        alpha,
        samples: samples.len(),
        band_halfwidth: band,
        violations,
        worst: worst.expect("support is nonempty"),
        verdict,
    })
}

/// Simulation settings for [`theorem_harness`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSim {
    pub num_busy_periods: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for HarnessSim {
    fn default() -> Self {
        Self {
            num_busy_periods: DEFAULT_BUSY_PERIODS,
            seed: 0,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SideReport {
    Tested {
        bound: Box<BoundPmf>,
        dominance: DominanceVerdict,
    },
    Unavailable {
        reason: String,
    },
}

impl SideReport {
    pub fn verdict(&self) -> Option<Verdict> {
        match self {
            SideReport::Tested { dominance, .. } => Some(dominance.verdict),
            SideReport::Unavailable { .. } => None,
        }
    }

    pub fn vacuous(&self) -> bool {
        matches!(self, SideReport::Tested { bound, .. } if bound.vacuous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub condition: Condition,
    pub p_special: bool,
    pub n: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub c_epsilon: f64,
    pub b_hat: f64,
    pub eps_report: EpsReport,
    /// Envelope ids backing the chosen condition, all satisfied.
    pub envelopes_ok: bool,
    pub busy_periods: usize,
    pub alpha: f64,
    pub seed: u64,
    pub lower: SideReport,
    pub upper: Option<SideReport>,
    /// Only the upper side could be built.
    pub one_sided: bool,
    pub vacuous: bool,
    pub verdict: Verdict,
}

fn condition_envelopes(condition: Condition, p_special: bool) -> &'static [&'static str] {
    use envelope_ids::*;
    match (condition, p_special) {
        (Condition::A, false) => &[MIXTURE_5],
        (Condition::A, true) => &[MIXTURE_5, MIXTURE_HALF_2],
        (Condition::B, false) => &[AGING_MIXTURE_3],
        (Condition::B, true) => &[AGING_MIXTURE_3, AGING_MIXTURE_HALF_1_5],
        (Condition::C, _) => &[NBU_SERVICE_KOLMOGOROV_1],
    }
}

fn side_report(
    spec: &BoundSpec,
    side: Side,
    samples: &[u64],
    alpha: f64,
    trunc: &TruncationPolicy,
    grid: &GridPolicy,
) -> Result<SideReport> {
    let bound = match compound_bound_pmf_with_grid(spec, side, trunc, grid) {
        Ok(b) => b,
        // An unresolvable summand law only removes this side.
        Err(Error::Precondition(reason)) if side == Side::Lower => {
            return Ok(SideReport::Unavailable { reason })
        }
        Err(e) => return Err(e),
    };
    let direction = match side {
        Side::Lower => Direction::SampleDominatesBound,
        Side::Upper => Direction::BoundDominatesSample,
    };
    let dominance = dominance_test(samples, &bound.pmf, direction, alpha)?;
    Ok(SideReport::Tested {
        bound: Box::new(bound),
        dominance,
    })
}

/// Envelope check, bound construction, simulation and dominance tests for
/// one bound specification.
pub fn theorem_harness(
    spec: &BoundSpec,
    sim: &HarnessSim,
    grid: &GridPolicy,
    trunc: &TruncationPolicy,
) -> Result<TheoremReport> {
    spec.validate()?;
    let eps_report = envelope_report(&spec.service, grid)?;
    match spec.condition {
        Condition::B if !eps_report.class_f.is_aging() => {
            return Err(Error::Precondition(format!(
                "condition B needs F to be NBU or NWU; aging check found {:?}",
                eps_report.class_f
            )))
        }
        Condition::C if !eps_report.class_b.is_nbu() => {
            return Err(Error::Precondition(format!(
                "condition C needs an NBU service law; aging check found {:?}",
                eps_report.class_b
            )))
        }
        _ => {}
    }
    let envelopes_ok = condition_envelopes(spec.condition, spec.p_special)
        .iter()
        .all(|id| eps_report.envelope(id).is_none_or(|e| e.satisfied));
    let epsilon = spec.epsilon.unwrap_or(match spec.condition {
        Condition::A | Condition::B => eps_report.epsilon_f,
        Condition::C => eps_report.epsilon_b,
    });
    let resolved = BoundSpec {
        epsilon: Some(epsilon),
        ..spec.clone()
    };
    let cfg = SimConfig {
        lambda: spec.lambda,
        service: spec.service.clone().into(),
        n: spec.n,
        num_busy_periods: sim.num_busy_periods,
        seed: sim.seed,
        trace: false,
    };
    let samples = losses(&run_busy_periods(&cfg)?);

    let (lower, upper) = rayon::join(
        || side_report(&resolved, Side::Lower, &samples, sim.alpha, trunc, grid),
        || {
            (spec.condition == Condition::C)
                .then(|| side_report(&resolved, Side::Upper, &samples, sim.alpha, trunc, grid))
                .transpose()
        },
    );
    let (lower, upper) = (lower?, upper?);

    let verdicts: Vec<Verdict> = std::iter::once(&lower)
        .chain(upper.as_ref())
        .filter_map(SideReport::verdict)
        .collect();
    let verdict = if verdicts.contains(&Verdict::Violated) {
        Verdict::Violated
    } else if verdicts.is_empty() || verdicts.contains(&Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Consistent
    };
    let one_sided = matches!(lower, SideReport::Unavailable { .. }) && upper.is_some();
    let vacuous = lower.vacuous() || upper.as_ref().is_some_and(SideReport::vacuous);
    Ok(TheoremReport {
        condition: spec.condition,
        p_special: spec.p_special,
        n: spec.n,
        lambda: spec.lambda,
        epsilon,
        c_epsilon: spec.c_epsilon(),
        b_hat: spec.b_hat()?,
        eps_report,
        envelopes_ok,
        busy_periods: samples.len(),
        alpha: sim.alpha,
        seed: sim.seed,
        lower,
        upper,
        one_sided,
        vacuous,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::geometric_offspring;
    use crate::sim::substream;

    fn draws(pmf: &Pmf, n: u64, seed: u64) -> Vec<u64> {
        (0..n)
            .map(|i| pmf.sample(&mut substream(seed, i)) as u64)
            .collect()
    }

    #[test]
    fn zero_bound_is_always_dominated() {
        let s: Vec<u64> = (0..200).map(|i| i % 7).collect();
        let v = dominance_test(
            &s,
            &Pmf::point_mass(0),
            Direction::SampleDominatesBound,
            0.01,
        )
        .unwrap();
        assert_eq!(v.verdict, Verdict::Consistent);
        assert!(v.violations.is_empty());
    }

    #[test]
    fn self_dominance_both_ways() {
        let law = geometric_offspring(0.45).unwrap().pmf;
        let s = draws(&law, 100_000, 4);
        for d in [
            Direction::SampleDominatesBound,
            Direction::BoundDominatesSample,
        ] {
            assert_eq!(
                dominance_test(&s, &law, d, 0.01).unwrap().verdict,
                Verdict::Consistent
            );
        }
    }

    #[test]
    fn smaller_samples_violate_lower_bound() {
        let small = geometric_offspring(0.6).unwrap().pmf;
        let bound = geometric_offspring(0.5).unwrap().pmf;
        let s = draws(&small, 100_000, 5);
        let v = dominance_test(&s, &bound, Direction::SampleDominatesBound, 0.01).unwrap();
        assert_eq!(v.verdict, Verdict::Violated);
        // Exact gap at m = 0: 0.5 − 0.4.
        assert!((v.worst.margin - 0.1).abs() < 0.01);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(dominance_test(
            &[0; 99],
            &Pmf::point_mass(0),
            Direction::SampleDominatesBound,
            0.01
        )
        .is_err());
    }

    #[test]
    fn band_matches_dkw() {
        let s = vec![0u64; 1000];
        let v = dominance_test(
            &s,
            &Pmf::point_mass(0),
            Direction::BoundDominatesSample,
            0.05,
        )
        .unwrap();
        assert!((v.band_halfwidth - (40f64.ln() / 2000.0).sqrt()).abs() < 1e-15);
    }
}
