//! Kolmogorov distance, the memorylessness deviation
//! `ε = sup_{x,y} |G_y(x) − G(x)|`, NBU/NWU membership, the `C_λ` order,
//! and the envelope report that ties them together.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{DistSpec, EvaluableCdf, MixtureService};
use crate::error::{Error, Result};
use crate::quad::Quadrature;

/// Slack tolerance used to compare aging-class products.
pub const AGING_TOL: f64 = 1e-12;
/// Values at or below this are treated as exact zeros (exponential laws).
pub const ZERO_EXEMPTION: f64 = 1e-9;
pub const DEFAULT_ORDER_TOL: f64 = 1e-9;
pub const DEFAULT_I_MAX: usize = 20;

/// How sup-type metrics are searched: a coarse grid followed by local
/// refinement around the running maximiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridPolicy {
    /// Upper end of the search range; the law's support hint when absent.
    pub x_max: Option<f64>,
    pub coarse_points: usize,
    pub refine_rounds: usize,
    pub refine_factor: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            x_max: None,
            coarse_points: 256,
            refine_rounds: 3,
            refine_factor: 8,
        }
    }
}

impl GridPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(x) = self.x_max {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "grid x_max must be positive, got {x}"
                )));
            }
        }
        if self.coarse_points < 64 {
            return Err(Error::InvalidParameter(format!(
                "coarse_points must be at least 64, got {}",
                self.coarse_points
            )));
        }
        if self.refine_rounds < 1 {
            return Err(Error::InvalidParameter(
                "refine_rounds must be at least 1".into(),
            ));
        }
        if self.refine_factor < 4 {
            return Err(Error::InvalidParameter(format!(
                "refine_factor must be at least 4, got {}",
                self.refine_factor
            )));
        }
        Ok(())
    }

    fn range_for(&self, hint: f64) -> f64 {
        self.x_max.unwrap_or(hint).max(hint)
    }
}

/// Outcome of a sup search. `history` holds the running maximum after the
/// coarse pass and after each refinement round, so it is nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupResult {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub history: Vec<f64>,
    pub resolution: f64,
}

impl SupResult {
    /// Last two refinement values and their difference.
    pub fn last_refinement(&self) -> (f64, f64, f64) {
        let n = self.history.len();
        let last = self.history[n - 1];
        let prev = if n > 1 { self.history[n - 2] } else { last };
        (prev, last, last - prev)
    }
}

/// Coarse axis on `[0, upper]`: half uniform, half geometric towards the
/// origin, plus probes on both sides of every atom.
fn coarse_axis(upper: f64, points: usize, atoms: &[f64]) -> Vec<f64> {
    let half = points / 2;
    let mut xs = Vec::with_capacity(points + 4 * atoms.len() + 1);
    for i in 0..=half {
        xs.push(upper * i as f64 / half as f64);
    }
    let lo = upper * 1e-6;
    let ratio = (upper / lo).powf(1.0 / (points - half) as f64);
    let mut x = lo;
    for _ in 0..(points - half) {
        xs.push(x);
        x *= ratio;
    }
    for &a in atoms {
        if a >= 0.0 && a <= upper {
            let scale = a.max(1.0);
            xs.push(a);
            xs.push(a - 1e-9 * scale);
            xs.push(a - 1e-12 * scale);
            xs.push(a + 1e-9 * scale);
        }
    }
    xs.retain(|&x| x >= 0.0 && x <= upper);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

fn all_atoms(laws: &[&dyn EvaluableCdf]) -> Vec<f64> {
    laws.iter().flat_map(|l| l.atoms()).collect()
}

/// `sup_x |G(x) − H(x)|` over `[0, x_max]`.
pub fn kolmogorov_distance<G, H>(g: &G, h: &H, grid: &GridPolicy) -> Result<SupResult>
where
    G: EvaluableCdf + ?Sized,
    H: EvaluableCdf + ?Sized,
{
    grid.validate()?;
    let upper = grid.range_for(g.support_hint().max(h.support_hint()));
    let diff = |x: f64| (g.cdf(x) - h.cdf(x)).abs();
    let atoms = all_atoms(&[&g as &dyn EvaluableCdf, &h as &dyn EvaluableCdf]);

    let mut pts: Vec<(f64, f64)> = coarse_axis(upper, grid.coarse_points, &atoms)
        .into_iter()
        .map(|x| (x, diff(x)))
        .collect();
    let best = |pts: &[(f64, f64)]| {
        pts.iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, p)| (i, *p))
            .expect("nonempty grid")
    };

    let (_, (_, first)) = best(&pts);
    let mut history = vec![first];
    let mut resolution = upper / grid.coarse_points as f64;
    for _ in 0..grid.refine_rounds {
        let (k, _) = best(&pts);
        let left = pts[k.saturating_sub(1)].0;
        let right = pts[(k + 1).min(pts.len() - 1)].0;
        let steps = 2 * grid.refine_factor;
        let step = (right - left) / steps as f64;
        if step > 0.0 {
            resolution = step;
            for s in 1..steps {
                let x = left + step * s as f64;
                pts.push((x, diff(x)));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let (_, (_, v)) = best(&pts);
        history.push(v);
    }
    let (_, (x, v)) = best(&pts);
    Ok(SupResult {
        value: v,
        argmax: vec![x],
        history,
        resolution,
    })
}

fn deviation<D: EvaluableCdf + ?Sized>(law: &D, y: f64, sy: f64, x: f64, fx: f64) -> f64 {
    if sy <= 0.0 {
        return 0.0;
    }
    let r = ((sy - law.survival(y + x)) / sy).clamp(0.0, 1.0);
    (r - fx).abs()
}

/// `sup_{x,y ≥ 0} |G_y(x) − G(x)|` by a two-level grid search.
///
/// Ages are restricted to points where the law still has mass; beyond the
/// support end the residual law is undefined.
pub fn memorylessness_epsilon<D>(law: &D, grid: &GridPolicy) -> Result<SupResult>
where
    D: EvaluableCdf + ?Sized,
{
    grid.validate()?;
    let upper = grid.range_for(law.support_hint());
    let atoms = law.atoms();
    let xs = coarse_axis(upper, grid.coarse_points, &atoms);
    let ys: Vec<f64> = xs
        .iter()
        .copied()
        .filter(|&y| law.survival(y) > 0.0)
        .collect();
    let fx: Vec<f64> = xs.iter().map(|&x| law.cdf(x)).collect();

    let rows: Vec<(f64, f64, f64)> = ys
        .par_iter()
        .map(|&y| {
            let sy = law.survival(y);
            xs.iter()
                .zip(&fx)
                .map(|(&x, &f)| (deviation(law, y, sy, x, f), y, x))
                .fold((f64::NEG_INFINITY, y, 0.0), |acc, c| {
                    if c.0 > acc.0 {
                        c
                    } else {
                        acc
                    }
                })
        })
        .collect();
    let (mut best, mut by, mut bx) =
        rows.into_iter()
            .fold((0.0, 0.0, 0.0), |acc, c| if c.0 > acc.0 { c } else { acc });

    let mut history = vec![best];
    let mut hy = upper / grid.coarse_points as f64;
    let mut hx = hy;
    let steps = grid.refine_factor as i64;
    for _ in 0..grid.refine_rounds {
        let cands: Vec<(f64, f64, f64)> = (-steps..=steps)
            .into_par_iter()
            .flat_map_iter(|i| {
                let y = by + hy * i as f64 / steps as f64;
                (-steps..=steps).filter_map(move |j| {
                    let x = bx + hx * j as f64 / steps as f64;
                    (y >= 0.0 && x >= 0.0 && y <= upper && x <= upper).then_some((y, x))
                })
            })
            .map(|(y, x)| (deviation(law, y, law.survival(y), x, law.cdf(x)), y, x))
            .collect();
        for (v, y, x) in cands {
            if v > best {
                best = v;
                by = y;
                bx = x;
            }
        }
        hy /= steps as f64;
        hx /= steps as f64;
        history.push(best);
    }
    Ok(SupResult {
        value: best,
        argmax: vec![by, bx],
        history,
        resolution: hx.max(hy),
    })
}

/// NBU / NWU membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgingClass {
    #[serde(rename = "NBU")]
    Nbu,
    #[serde(rename = "NWU")]
    Nwu,
    #[serde(rename = "both")]
    Both,
    #[serde(rename = "neither")]
    Neither,
}

impl AgingClass {
    pub fn is_aging(self) -> bool {
        !matches!(self, AgingClass::Neither)
    }

    pub fn is_nbu(self) -> bool {
        matches!(self, AgingClass::Nbu | AgingClass::Both)
    }

    pub fn is_nwu(self) -> bool {
        matches!(self, AgingClass::Nwu | AgingClass::Both)
    }
}

/// Checks `Ḡ(x + y) ≤ Ḡ(x)·Ḡ(y)` (NBU) and the reverse (NWU) on the grid.
pub fn check_aging_class<D>(law: &D, grid: &GridPolicy) -> Result<AgingClass>
where
    D: EvaluableCdf + ?Sized,
{
    grid.validate()?;
    let upper = grid.range_for(law.support_hint());
    let xs = coarse_axis(upper, grid.coarse_points, &law.atoms());
    let sx: Vec<f64> = xs.iter().map(|&x| law.survival(x)).collect();
    let (nbu, nwu) = xs
        .par_iter()
        .zip(sx.par_iter())
        .map(|(&y, &sy)| {
            let mut nbu = true;
            let mut nwu = true;
            for (&x, &s) in xs.iter().zip(&sx) {
                let joint = law.survival(x + y);
                let product = s * sy;
                nbu &= joint <= product + AGING_TOL;
                nwu &= joint >= product - AGING_TOL;
            }
            (nbu, nwu)
        })
        .reduce(|| (true, true), |a, b| (a.0 && b.0, a.1 && b.1));
    Ok(match (nbu, nwu) {
        (true, true) => AgingClass::Both,
        (true, false) => AgingClass::Nbu,
        (false, true) => AgingClass::Nwu,
        (false, false) => AgingClass::Neither,
    })
}

fn ln_erlang_pdf(k: usize, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return if k == 1 { rate.ln() } else { f64::NEG_INFINITY };
    }
    let kf = k as f64;
    rate.ln() + (kf - 1.0) * (rate * x).ln() - rate * x - ln_gamma(kf)
}

/// `E[Ḡ(T)]` for `T ~ Erlang(k, rate)`.
///
/// Equals the probability that a mixed-Poisson count with mixing law `G`
/// is at least `k`.
pub(crate) fn erlang_weighted_survival<D>(law: &D, k: usize, rate: f64) -> Result<f64>
where
    D: EvaluableCdf + ?Sized,
{
    let kf = k as f64;
    let erlang_end = (kf + 14.0 * kf.sqrt() + 60.0) / rate;
    let upper = law.support_hint().min(erlang_end);
    let quad = Quadrature::with_abs_tol(1e-14);
    let r = quad.integrate(
        |x| law.survival(x) * ln_erlang_pdf(k, rate, x).exp(),
        0.0,
        upper,
        &law.atoms(),
    )?;
    Ok(r.value.clamp(0.0, 1.0))
}

/// Normalised `C_λ` integrals `λ^{i+1}/i! ∫ e^{−λx} x^i G(x) dx` for
/// `i = 0..=i_max`. Each equals `Pr{θ ≤ i}` for the mixed-Poisson count `θ`
/// driven by `G`.
pub fn c_lambda_integrals<D>(law: &D, lambda: f64, i_max: usize) -> Result<Vec<f64>>
where
    D: EvaluableCdf + ?Sized,
{
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    (0..=i_max)
        .map(|i| erlang_weighted_survival(law, i + 1, lambda).map(|t| 1.0 - t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum OrderVerdict {
    HoldsUpToIMax { i_max: usize },
    FailsAt { index: usize, gap: f64 },
}

impl OrderVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, OrderVerdict::HoldsUpToIMax { .. })
    }
}

/// `X1 ≤_{C_λ} X2` checked for `i = 0..=i_max`: the normalised integral of
/// `X1` must not fall below that of `X2` by more than `tol`.
pub fn c_lambda_leq<A, B>(
    x1: &A,
    x2: &B,
    lambda: f64,
    i_max: usize,
    tol: f64,
) -> Result<OrderVerdict>
where
    A: EvaluableCdf + ?Sized,
    B: EvaluableCdf + ?Sized,
{
    let a = c_lambda_integrals(x1, lambda, i_max)?;
    let b = c_lambda_integrals(x2, lambda, i_max)?;
    for (i, (ia, ib)) in a.iter().zip(&b).enumerate() {
        if *ia < ib - tol {
            return Ok(OrderVerdict::FailsAt {
                index: i,
                gap: ib - ia,
            });
        }
    }
    Ok(OrderVerdict::HoldsUpToIMax { i_max })
}

/// One inequality checked by [`envelope_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub id: String,
    pub bound: f64,
    pub value: f64,
    pub satisfied: bool,
}

impl EnvelopeCheck {
    fn new(id: &str, value: f64, bound: f64) -> Self {
        let exempt = value <= ZERO_EXEMPTION && bound <= ZERO_EXEMPTION;
        Self {
            id: id.to_string(),
            bound,
            value,
            satisfied: exempt || bound - value > 0.0,
        }
    }

    pub fn slack(&self) -> f64 {
        self.bound - self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrail {
    pub metric: String,
    pub previous: f64,
    pub last: f64,
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsReport {
    #[serde(rename = "epsilon_F")]
    pub epsilon_f: f64,
    #[serde(rename = "epsilon_B")]
    pub epsilon_b: f64,
    #[serde(rename = "kolmogorov_F")]
    pub kolmogorov_f: f64,
    #[serde(rename = "kolmogorov_B")]
    pub kolmogorov_b: f64,
    #[serde(rename = "class_F")]
    pub class_f: AgingClass,
    #[serde(rename = "class_B")]
    pub class_b: AgingClass,
    pub envelopes: Vec<EnvelopeCheck>,
    pub refinement: Vec<RefinementTrail>,
}

impl EpsReport {
    pub fn all_satisfied(&self) -> bool {
        self.envelopes.iter().all(|e| e.satisfied)
    }

    /// True when some envelope failed, which points at grid resolution (or
    /// a defect) rather than at the inequality itself.
    pub fn grid_resolution_failure(&self) -> bool {
        !self.all_satisfied()
    }

    pub fn envelope(&self, id: &str) -> Option<&EnvelopeCheck> {
        self.envelopes.iter().find(|e| e.id == id)
    }
}

pub mod envelope_ids {
    pub const MIXTURE_5: &str = "mixture_deviation_5eps";
    pub const MIXTURE_HALF_2: &str = "mixture_deviation_half_2eps";
    pub const KOLMOGOROV_2: &str = "kolmogorov_2eps";
    pub const AGING_KOLMOGOROV_1: &str = "aging_kolmogorov_eps";
    pub const AGING_MIXTURE_3: &str = "aging_mixture_deviation_3eps";
    pub const AGING_MIXTURE_HALF_1_5: &str = "aging_mixture_deviation_half_1.5eps";
    pub const NBU_SERVICE_KOLMOGOROV_1: &str = "nbu_service_kolmogorov_eps";
}

pub(crate) fn is_half(p: f64) -> bool {
    (p - 0.5).abs() < 1e-12
}

/// Computes every deviation for the mixture and checks each envelope that
/// applies to it.
pub fn envelope_report(ms: &MixtureService, grid: &GridPolicy) -> Result<EpsReport> {
    use envelope_ids::*;

    let f: &DistSpec = ms.f();
    let exp = ms.reference_exponential();
    let eps_f = memorylessness_epsilon(f, grid)?;
    let eps_b = memorylessness_epsilon(ms, grid)?;
    let k_f = kolmogorov_distance(f, &exp, grid)?;
    let k_b = kolmogorov_distance(ms, &exp, grid)?;
    let class_f = check_aging_class(f, grid)?;
    let class_b = check_aging_class(ms, grid)?;

    let (ef, eb) = (eps_f.value, eps_b.value);
    let half = is_half(ms.p());
    let mut envelopes = vec![
        EnvelopeCheck::new(MIXTURE_5, eb, 5.0 * ef),
        EnvelopeCheck::new(KOLMOGOROV_2, k_f.value, 2.0 * ef),
    ];
    if half {
        envelopes.push(EnvelopeCheck::new(MIXTURE_HALF_2, eb, 2.0 * ef));
    }
    if class_f.is_aging() {
        envelopes.push(EnvelopeCheck::new(AGING_KOLMOGOROV_1, k_f.value, ef));
        envelopes.push(EnvelopeCheck::new(AGING_MIXTURE_3, eb, 3.0 * ef));
        if half {
            envelopes.push(EnvelopeCheck::new(AGING_MIXTURE_HALF_1_5, eb, 1.5 * ef));
        }
    }
    if class_b.is_nbu() {
        envelopes.push(EnvelopeCheck::new(NBU_SERVICE_KOLMOGOROV_1, k_b.value, eb));
    }

    let trail = |metric: &str, r: &SupResult| {
        let (previous, last, change) = r.last_refinement();
        RefinementTrail {
            metric: metric.to_string(),
            previous,
            last,
            change,
        }
    };
    Ok(EpsReport {
        epsilon_f: ef,
        epsilon_b: eb,
        kolmogorov_f: k_f.value,
        kolmogorov_b: k_b.value,
        class_f,
        class_b,
        envelopes,
        refinement: vec![
            trail("epsilon_F", &eps_f),
            trail("epsilon_B", &eps_b),
            trail("kolmogorov_F", &k_f),
            trail("kolmogorov_B", &k_b),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> DistSpec {
        DistSpec::hyperexponential(vec![0.5, 0.5], vec![2.0, 2.0 / 3.0])
    }

    #[test]
    fn grid_policy_validation() {
        assert!(GridPolicy::default().validate().is_ok());
        let bad = GridPolicy {
            coarse_points: 10,
            ..GridPolicy::default()
        };
        assert!(bad.validate().is_err());
        let bad = GridPolicy {
            refine_factor: 2,
            ..GridPolicy::default()
        };
        assert!(bad.validate().is_err());
        let bad = GridPolicy {
            refine_rounds: 0,
            ..GridPolicy::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kolmogorov_identical_is_zero() {
        let e = DistSpec::exponential(1.0);
        let r = kolmogorov_distance(&e, &e, &GridPolicy::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn kolmogorov_exponential_pair() {
        // Calculus: |e^{-x} − e^{-2x}| peaks at x = ln 2 with value 1/4.
        let r = kolmogorov_distance(
            &DistSpec::exponential(1.0),
            &DistSpec::exponential(2.0),
            &GridPolicy::default(),
        )
        .unwrap();
        assert!((r.value - 0.25).abs() < 1e-9, "{}", r.value);
        assert!((r.argmax[0] - 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn kolmogorov_against_atom_uses_left_limit() {
        let r = kolmogorov_distance(
            &DistSpec::deterministic(1.0),
            &DistSpec::exponential(1.0),
            &GridPolicy::default(),
        )
        .unwrap();
        let expected = 1.0 - (-1.0f64).exp();
        assert!((r.value - expected).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn refinement_history_is_nondecreasing() {
        let r = kolmogorov_distance(
            &DistSpec::gamma(2.0, 2.0),
            &DistSpec::exponential(1.0),
            &GridPolicy::default(),
        )
        .unwrap();
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
        let e = memorylessness_epsilon(&DistSpec::gamma(2.0, 2.0), &GridPolicy::default()).unwrap();
        assert!(e.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(e.history.len(), 4);
    }

    #[test]
    fn epsilon_of_exponential_vanishes() {
        for rate in [0.3, 1.0, 5.0] {
            let e = memorylessness_epsilon(&DistSpec::exponential(rate), &GridPolicy::default())
                .unwrap();
            assert!(e.value < 1e-9, "rate {rate}: {}", e.value);
        }
    }

    #[test]
    fn epsilon_of_deterministic_is_near_one() {
        let e =
            memorylessness_epsilon(&DistSpec::deterministic(1.0), &GridPolicy::default()).unwrap();
        assert!(e.value > 0.99);
    }

    #[test]
    fn aging_classes() {
        let g = GridPolicy::default();
        assert_eq!(
            check_aging_class(&DistSpec::exponential(1.0), &g).unwrap(),
            AgingClass::Both
        );
        assert_eq!(
            check_aging_class(&DistSpec::gamma(2.0, 2.0), &g).unwrap(),
            AgingClass::Nbu
        );
        assert_eq!(check_aging_class(&hyper(), &g).unwrap(), AgingClass::Nwu);
        assert_eq!(
            check_aging_class(&DistSpec::deterministic(1.0), &g).unwrap(),
            AgingClass::Nbu
        );
    }

    #[test]
    fn c_lambda_examples() {
        let e1 = DistSpec::exponential(1.0);
        let e2 = DistSpec::exponential(2.0);
        assert!(c_lambda_leq(&e1, &e1, 1.0, 20, DEFAULT_ORDER_TOL)
            .unwrap()
            .holds());
        assert_eq!(
            c_lambda_leq(&e2, &e1, 1.0, 20, DEFAULT_ORDER_TOL).unwrap(),
            OrderVerdict::HoldsUpToIMax { i_max: 20 }
        );
        match c_lambda_leq(&e1, &e2, 1.0, 20, DEFAULT_ORDER_TOL).unwrap() {
            OrderVerdict::FailsAt { index, gap } => {
                assert_eq!(index, 0);
                // 1 − 1/3 − (1 − 1/2)
                assert!((gap - (2.0 / 3.0 - 0.5)).abs() < 1e-9);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn c_lambda_integrals_match_closed_form() {
        for (rate, lambda) in [(2.0, 1.0), (1.0, 0.8), (0.5, 3.0)] {
            let got = c_lambda_integrals(&DistSpec::exponential(rate), lambda, 20).unwrap();
            for (i, v) in got.iter().enumerate() {
                let oracle = 1.0 - (lambda / (lambda + rate)).powi(i as i32 + 1);
                assert!(
                    (v - oracle).abs() < 1e-9,
                    "rate {rate} i {i}: {v} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn envelope_report_pure_exponential_is_all_zero() {
        let ms = MixtureService::exponential(1.0).unwrap();
        let r = envelope_report(&ms, &GridPolicy::default()).unwrap();
        assert!(r.epsilon_f < 1e-9 && r.epsilon_b < 1e-9);
        assert!(r.kolmogorov_f < 1e-9 && r.kolmogorov_b < 1e-9);
        assert_eq!(r.class_f, AgingClass::Both);
        assert!(r.all_satisfied(), "{r:?}");
    }

    #[test]
    fn envelope_report_nwu_pure_case() {
        let ms = MixtureService::new(1.0, hyper(), 1.0).unwrap();
        let r = envelope_report(&ms, &GridPolicy::default()).unwrap();
        assert_eq!(r.class_f, AgingClass::Nwu);
        let aging = r.envelope(envelope_ids::AGING_KOLMOGOROV_1).unwrap();
        assert!(aging.satisfied && aging.slack() > 0.0);
    }
}
