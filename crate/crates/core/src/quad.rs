//! Adaptive Gauss–Kronrod (7/15) quadrature with global interval bisection.
//!
//! Integrands here are CDFs, survival functions and Erlang-weighted
//! survivals. They are bounded but may jump at atoms, so callers pass the
//! known discontinuities as breakpoints and the integration range is split
//! there before any adaptive work happens.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 0.0,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Segment {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (k, (&node, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * node;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += wk * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    Segment {
        lo,
        hi,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

impl Quadrature {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over `[lo, hi]`, splitting first at every breakpoint
    /// strictly inside the range.
    pub fn integrate<F: Fn(f64) -> f64>(
        &self,
        f: F,
        lo: f64,
        hi: f64,
        breakpoints: &[f64],
    ) -> Result<QuadResult> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Argument(format!(
                "integration limits must be finite, got [{lo}, {hi}]"
            )));
        }
        if hi <= lo {
            return Ok(QuadResult {
                value: 0.0,
                error: 0.0,
                intervals: 0,
            });
        }

        let mut cuts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&b| b > lo && b < hi)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut heap = BinaryHeap::new();
        let mut left = lo;
        for right in cuts.into_iter().chain(std::iter::once(hi)) {
            heap.push(kronrod15(&f, left, right));
            left = right;
        }

        loop {
            let (value, error) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
            let target = self.abs_tol.max(self.rel_tol * value.abs());
            if error <= target {
                return Ok(QuadResult {
                    value,
                    error,
                    intervals: heap.len(),
                });
            }
            let worst = heap.pop().expect("at least one segment");
            let mid = 0.5 * (worst.lo + worst.hi);
            if heap.len() + 2 > self.max_intervals || mid <= worst.lo || mid >= worst.hi {
                heap.push(worst);
                return Err(Error::Quadrature {
                    lo,
                    hi,
                    achieved: error,
                    requested: target,
                });
            }
            heap.push(kronrod15(&f, worst.lo, mid));
            heap.push(kronrod15(&f, mid, worst.hi));
        }
    }
}
