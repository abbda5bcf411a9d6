//! Small statistical utilities: compensated summation and a chi-square
//! goodness-of-fit test used to validate samplers against exact
//! distributions.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Neumaier-compensated running sum. Keeps long accumulations (regret
/// prefix sums, time averages, joint-strategy averages) accurate to a few
/// ulps of the total magnitude rather than drifting with the step count.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `value` with Neumaier's correction (handles terms larger than
    /// the running sum, unlike plain Kahan).
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    /// The compensated total.
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Copy)]
pub struct GofTest {
    /// The chi-square statistic over the (pooled) bins.
    pub statistic: f64,
    /// Degrees of freedom: pooled bin count minus one.
    pub degrees_of_freedom: usize,
    /// Upper-tail probability of the statistic.
    pub p_value: f64,
}

impl GofTest {
    /// Whether the test passes at significance level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Chi-square goodness-of-fit of observed counts against expected
/// probabilities. Bins with expected count below five are pooled into a
/// single residual bin (the usual validity heuristic for the chi-square
/// approximation). `probabilities` must sum to one.
///
/// Returns `None` when fewer than two effective bins remain.
pub fn chi_square_gof(observed: &[u64], probabilities: &[f64]) -> Option<GofTest> {
    assert_eq!(
        observed.len(),
        probabilities.len(),
        "observed and expected bin counts must align"
    );
    let n: u64 = observed.iter().sum();
    let total = n as f64;

    let mut statistic = 0.0;
    let mut bins = 0usize;
    let mut pooled_observed = 0.0;
    let mut pooled_expected = 0.0;
    for (&obs, &p) in observed.iter().zip(probabilities) {
        let expected = p * total;
        if expected < 5.0 {
            pooled_observed += obs as f64;
            pooled_expected += expected;
        } else {
            let diff = obs as f64 - expected;
            statistic += diff * diff / expected;
            bins += 1;
        }
    }
    if pooled_expected > 0.0 {
        let diff = pooled_observed - pooled_expected;
        statistic += diff * diff / pooled_expected;
        bins += 1;
    }
    if bins < 2 {
        return None;
    }
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    let p_value = 1.0 - dist.cdf(statistic);
    Some(GofTest {
        statistic,
        degrees_of_freedom: dof,
        p_value,
    })
}

/// Two-sample chi-square homogeneity test on categorical counts: tests
/// whether two sets of counts were drawn from the same distribution.
/// Categories whose pooled expected count is below five are merged into a
/// residual category. Returns `None` when fewer than two categories remain.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Option<GofTest> {
    assert_eq!(a.len(), b.len(), "category counts must align");
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    if na == 0 || nb == 0 {
        return None;
    }

    let mut statistic = 0.0;
    let mut bins = 0usize;
    let mut pooled = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // (obs_a, exp_a, obs_b, exp_b)
    for (&oa, &ob) in a.iter().zip(b) {
        let row = (oa + ob) as f64;
        let ea = row * na as f64 / total;
        let eb = row * nb as f64 / total;
        if ea < 5.0 || eb < 5.0 {
            pooled.0 += oa as f64;
            pooled.1 += ea;
            pooled.2 += ob as f64;
            pooled.3 += eb;
        } else {
            statistic += (oa as f64 - ea).powi(2) / ea + (ob as f64 - eb).powi(2) / eb;
            bins += 1;
        }
    }
    if pooled.1 > 0.0 && pooled.3 > 0.0 {
        statistic +=
            (pooled.0 - pooled.1).powi(2) / pooled.1 + (pooled.2 - pooled.3).powi(2) / pooled.3;
        bins += 1;
    }
    if bins < 2 {
        return None;
    }
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    let p_value = 1.0 - dist.cdf(statistic);
    Some(GofTest {
        statistic,
        degrees_of_freedom: dof,
        p_value,
    })
}
