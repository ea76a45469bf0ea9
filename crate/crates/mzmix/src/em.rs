//! Expectation–maximization for heteroscedastic Gaussian mixtures fitted to
//! binned signals, with divergence guards, exact dynamic-programming
//! initialization, and model-order selection by a penalized fit index.
//!
//! The signal counts y_n act as point weights in the recursions:
//!
//! p(k|n) = alpha_k f_k(x_n) / sum_j alpha_j f_j(x_n)
//! alpha_k = sum_n p(k|n) y_n / sum_n y_n
//! mu_k    = sum_n p(k|n) y_n x_n / sum_n p(k|n) y_n
//! sigma_k^2 = sum_n p(k|n) y_n (x_n - mu_k)^2 / sum_n p(k|n) y_n
//!
//! The heteroscedastic likelihood is unbounded, so after each M-step the
//! standard deviations are floored at a mass-proportional minimum, and
//! components whose mixing proportion falls below `alpha_min` are removed
//! (at most one per iteration, smallest first).

use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::model::{gaussian_pdf, scale_over, GaussianComponent, MixtureModel, FWHH_PER_SIGMA, SQRT_2PI};
use crate::partition::Segment;

/// Settings of the EM kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Components below this mixing proportion are removed.
    pub alpha_min: f64,
    /// Multiplier of the mass-proportional sigma floor.
    pub sigma_min_cv_mult: f64,
    pub max_iters: usize,
    /// Relative tolerance on successive values of the weighted
    /// log-likelihood analog.
    pub rel_tol: f64,
    /// Average FWHH / position ratio measured by the peak detector.
    pub avg_cv: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            alpha_min: 1e-3,
            sigma_min_cv_mult: 0.5,
            max_iters: 500,
            rel_tol: 1e-6,
            avg_cv: 0.002,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 0.0 && self.alpha_min < 0.1) {
            return Err(Error::Config(format!(
                "alpha_min must lie in (0, 0.1), got {}",
                self.alpha_min
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if self.sigma_min_cv_mult < 0.0 || self.avg_cv < 0.0 {
            return Err(Error::Config("sigma floor parameters must be >= 0".into()));
        }
        Ok(())
    }

    /// Sigma floor at mean `mu`. The detector's avg_cv is an FWHH-over-
    /// position ratio, so it is converted to a sigma-flavoured coefficient
    /// of variation before scaling by the mean.
    pub fn sigma_min(&self, mu: f64) -> f64 {
        self.sigma_min_cv_mult * mu * self.avg_cv / FWHH_PER_SIGMA
    }
}

/// Conditional probabilities p(k|n) of bin n belonging to component k.
/// Stored densely, one row per component.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    values: Vec<f64>,
    k: usize,
    n: usize,
}

impl Responsibilities {
    pub fn get(&self, component: usize, point: usize) -> f64 {
        self.values[component * self.n + point]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column_sum(&self, point: usize) -> f64 {
        (0..self.k).map(|c| self.get(c, point)).sum()
    }
}

/// E-step: responsibilities and the per-point log mixture density,
/// evaluated in log space so distant points cannot underflow to an
/// all-zero column.
pub fn e_step(components: &[GaussianComponent], xs: &[f64]) -> (Responsibilities, Vec<f64>) {
    let k = components.len();
    let n = xs.len();
    let mut values = vec![0.0; k * n];
    let mut log_density = vec![0.0; n];
    let pre: Vec<(f64, f64, f64)> = components
        .iter()
        .map(|c| (c.alpha.ln() - (c.sigma * SQRT_2PI).ln(), c.mu, c.sigma))
        .collect();
    let mut logs = vec![0.0; k];
    for j in 0..n {
        let x = xs[j];
        let mut max = f64::NEG_INFINITY;
        for (c, &(log_norm, mu, sigma)) in pre.iter().enumerate() {
            let z = (x - mu) / sigma;
            let a = log_norm - 0.5 * z * z;
            logs[c] = a;
            if a > max {
                max = a;
            }
        }
        let sum_exp: f64 = logs.iter().map(|a| (a - max).exp()).sum();
        let lse = max + sum_exp.ln();
        log_density[j] = lse;
        for c in 0..k {
            values[c * n + j] = (logs[c] - lse).exp();
        }
    }
    (
        Responsibilities { values, k, n },
        log_density,
    )
}

/// Result of fitting one segment.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    /// Penalized fit index delta + K * epsilon once produced by
    /// [`select_model`]; plain delta for a direct [`em_fit`].
    pub penalty: f64,
    /// Scaled absolute error: sum |y - y_hat| / sum y.
    pub delta: f64,
    pub iters: usize,
    /// Components dropped by the mixing-proportion guard.
    pub k_removed: usize,
}

/// Fit a mixture to a segment, starting from `init`.
pub fn em_fit(segment: &Segment, init: &[GaussianComponent], config: &EmConfig) -> Result<FitResult> {
    em_fit_arrays(segment.mz(), segment.intensity(), init, config)
}

/// [`em_fit`] on raw grid arrays. Also used with unit weights when the
/// noise-component filter fits the two-class weight mixture.
pub fn em_fit_arrays(
    xs: &[f64],
    ys: &[f64],
    init: &[GaussianComponent],
    config: &EmConfig,
) -> Result<FitResult> {
    config.validate()?;
    if init.is_empty() {
        return Err(Error::Config("empty initialization".into()));
    }
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Data("segment arrays empty or mismatched".into()));
    }
    let y_total: f64 = ys.iter().sum();
    if !(y_total > 0.0) {
        return Err(Error::Degenerate("segment has no signal mass".into()));
    }
    let span = xs[xs.len() - 1] - xs[0];
    let abs_floor = (span * 1e-9).max(f64::MIN_POSITIVE);

    let mut comps = init.to_vec();
    let alpha_sum: f64 = comps.iter().map(|c| c.alpha).sum();
    for c in &mut comps {
        c.alpha /= alpha_sum;
    }

    let mut prev_q: Option<f64> = None;
    let mut iters = 0;
    let mut k_removed = 0;

    for iter in 1..=config.max_iters {
        iters = iter;
        let (resp, log_density) = e_step(&comps, xs);
        let q: f64 = ys
            .iter()
            .zip(&log_density)
            .filter(|(&y, _)| y > 0.0)
            .map(|(&y, &ld)| y * ld)
            .sum();
        if !q.is_finite() {
            return Err(Error::Numerical(format!(
                "weighted log-likelihood became {q} at iteration {iter}"
            )));
        }
        if let Some(pq) = prev_q {
            if (q - pq).abs() <= config.rel_tol * pq.abs().max(1e-300) {
                break;
            }
        }
        prev_q = Some(q);

        m_step(&mut comps, &resp, xs, ys, y_total, config, abs_floor);

        if remove_smallest_offender(&mut comps, config.alpha_min) {
            k_removed += 1;
            prev_q = None;
            if comps.is_empty() {
                return Err(Error::Degenerate("all components removed".into()));
            }
        }
    }

    for c in &comps {
        if !(c.alpha.is_finite() && c.mu.is_finite() && c.sigma.is_finite()) {
            return Err(Error::Numerical("non-finite component parameters".into()));
        }
    }

    let scale = scale_over(xs, ys, &comps)?;
    let delta = scaled_abs_error(xs, ys, &comps, scale, y_total);
    let model = MixtureModel::new(comps, scale, y_total)?;
    Ok(FitResult {
        model,
        penalty: delta,
        delta,
        iters,
        k_removed,
    })
}

/// Weighted M-step with the sigma floor applied per component.
fn m_step(
    comps: &mut [GaussianComponent],
    resp: &Responsibilities,
    xs: &[f64],
    ys: &[f64],
    y_total: f64,
    config: &EmConfig,
    abs_floor: f64,
) {
    let n = xs.len();
    for (c, comp) in comps.iter_mut().enumerate() {
        let mut mass = 0.0;
        let mut mean_acc = 0.0;
        for j in 0..n {
            let w = resp.get(c, j) * ys[j];
            mass += w;
            mean_acc += w * xs[j];
        }
        if mass > 0.0 {
            let mu = mean_acc / mass;
            let mut var_acc = 0.0;
            for j in 0..n {
                let w = resp.get(c, j) * ys[j];
                var_acc += w * (xs[j] - mu) * (xs[j] - mu);
            }
            let sigma = (var_acc / mass).sqrt();
            comp.mu = mu;
            comp.sigma = sigma.max(config.sigma_min(mu)).max(abs_floor);
        }
        // mass == 0: keep the previous location, the component is about to
        // fall under the alpha_min guard.
        comp.alpha = mass / y_total;
    }
    let total: f64 = comps.iter().map(|c| c.alpha).sum();
    if total > 0.0 {
        for c in comps.iter_mut() {
            c.alpha /= total;
        }
    }
}

/// Remove the smallest component below `alpha_min`, if any, and rescale
/// the remaining mixing proportions. At most one removal per call.
fn remove_smallest_offender(comps: &mut Vec<GaussianComponent>, alpha_min: f64) -> bool {
    let mut smallest: Option<usize> = None;
    for (i, c) in comps.iter().enumerate() {
        if c.alpha < alpha_min && smallest.is_none_or(|s| c.alpha < comps[s].alpha) {
            smallest = Some(i);
        }
    }
    let Some(i) = smallest else {
        return false;
    };
    comps.remove(i);
    let total: f64 = comps.iter().map(|c| c.alpha).sum();
    if total > 0.0 {
        for c in comps.iter_mut() {
            c.alpha /= total;
        }
    }
    true
}

/// Delta: scaled sum of absolute differences between the signal and the
/// rendered model.
fn scaled_abs_error(
    xs: &[f64],
    ys: &[f64],
    comps: &[GaussianComponent],
    scale: f64,
    y_total: f64,
) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let rendered: f64 = scale * comps.iter().map(|c| c.alpha * gaussian_pdf(x, c.mu, c.sigma)).sum::<f64>();
        acc += (y - rendered).abs();
    }
    acc / y_total
}

/// Prefix sums of y, y*x and y*x^2 used for O(1) block statistics.
#[derive(Debug, Clone)]
pub struct DpPrefix {
    p0: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl DpPrefix {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        let mut p0 = Vec::with_capacity(n + 1);
        let mut p1 = Vec::with_capacity(n + 1);
        let mut p2 = Vec::with_capacity(n + 1);
        p0.push(0.0);
        p1.push(0.0);
        p2.push(0.0);
        for j in 0..n {
            p0.push(p0[j] + ys[j]);
            p1.push(p1[j] + ys[j] * xs[j]);
            p2.push(p2[j] + ys[j] * xs[j] * xs[j]);
        }
        DpPrefix { p0, p1, p2 }
    }

    /// Intensity-weighted scatter of m/z over the inclusive block [i, j]:
    /// sum y (x - mean)^2, computed as Sxx - Sx^2 / W. Blocks with no mass
    /// are infeasible.
    pub fn block_cost(&self, i: usize, j: usize) -> f64 {
        let w = self.p0[j + 1] - self.p0[i];
        if w <= 0.0 {
            return f64::INFINITY;
        }
        let sx = self.p1[j + 1] - self.p1[i];
        let sxx = self.p2[j + 1] - self.p2[i];
        (sxx - sx * sx / w).max(0.0)
    }

    fn block_mass(&self, i: usize, j: usize) -> f64 {
        self.p0[j + 1] - self.p0[i]
    }

    fn block_mean(&self, i: usize, j: usize) -> f64 {
        (self.p1[j + 1] - self.p1[i]) / (self.p0[j + 1] - self.p0[i])
    }
}

/// Exact dynamic program over contiguous block partitions, built once up
/// to `k_max` blocks so every smaller order can be read back.
#[derive(Debug, Clone)]
pub struct DpTable {
    prefix: DpPrefix,
    /// cost[l - 1][j]: best cost of covering [0, j] with l blocks.
    cost: Vec<Vec<f64>>,
    /// back[l - 1][j]: start index of the last block in that optimum.
    back: Vec<Vec<usize>>,
    n: usize,
}

impl DpTable {
    pub fn build(xs: &[f64], ys: &[f64], k_max: usize) -> Result<Self> {
        let n = xs.len();
        let positives = ys.iter().filter(|&&y| y > 0.0).count();
        if k_max == 0 {
            return Err(Error::Config("k_max must be >= 1".into()));
        }
        if k_max > positives {
            return Err(Error::Degenerate(format!(
                "cannot place {k_max} components on {positives} points with signal"
            )));
        }
        let prefix = DpPrefix::new(xs, ys);
        let mut cost = vec![vec![f64::INFINITY; n]; k_max];
        let mut back = vec![vec![0usize; n]; k_max];
        for (j, c) in cost[0].iter_mut().enumerate() {
            *c = prefix.block_cost(0, j);
        }
        for l in 1..k_max {
            for j in l..n {
                let mut best = f64::INFINITY;
                let mut best_i = l;
                // Last block starts at i; earlier blocks cover [0, i-1].
                for i in l..=j {
                    let prev = cost[l - 1][i - 1];
                    if !prev.is_finite() {
                        continue;
                    }
                    let total = prev + prefix.block_cost(i, j);
                    if total < best {
                        best = total;
                        best_i = i;
                    }
                }
                cost[l][j] = best;
                back[l][j] = best_i;
            }
        }
        Ok(DpTable { prefix, cost, back, n })
    }

    /// Optimal cost of partitioning everything into `k` blocks.
    pub fn total_cost(&self, k: usize) -> Result<f64> {
        let c = *self
            .cost
            .get(k - 1)
            .and_then(|row| row.last())
            .ok_or_else(|| Error::Config(format!("k = {k} beyond table")))?;
        if !c.is_finite() {
            return Err(Error::Degenerate(format!("no feasible {k}-block partition")));
        }
        Ok(c)
    }

    /// Start indices of the `k` blocks (the first is always 0).
    pub fn boundaries(&self, k: usize) -> Result<Vec<usize>> {
        self.total_cost(k)?;
        let mut starts = vec![0usize; k];
        let mut j = self.n - 1;
        for l in (1..k).rev() {
            let i = self.back[l][j];
            starts[l] = i;
            j = i - 1;
        }
        starts
            .windows(2)
            .all(|w| w[0] < w[1])
            .then_some(starts.clone())
            .ok_or_else(|| Error::Numerical("backtracked boundaries not increasing".into()))?;
        Ok(starts)
    }

    /// Moment-matched initial components, one per block, with mixing
    /// proportions by block mass and sigmas floored per config.
    pub fn components(&self, k: usize, config: &EmConfig, abs_floor: f64) -> Result<Vec<GaussianComponent>> {
        let starts = self.boundaries(k)?;
        let total = self.prefix.block_mass(0, self.n - 1);
        let mut comps = Vec::with_capacity(k);
        for (b, &start) in starts.iter().enumerate() {
            let end = if b + 1 < k { starts[b + 1] - 1 } else { self.n - 1 };
            let mass = self.prefix.block_mass(start, end);
            let mu = self.prefix.block_mean(start, end);
            let sigma_raw = (self.prefix.block_cost(start, end) / mass).sqrt();
            comps.push(GaussianComponent::new(
                mass / total,
                mu,
                sigma_raw.max(config.sigma_min(mu)).max(abs_floor),
            ));
        }
        Ok(comps)
    }
}

/// Initial components for a `k`-component fit of a segment: the exact
/// optimal partition of the grid into `k` contiguous blocks minimizing the
/// intensity-weighted within-block scatter of m/z.
pub fn dp_initialize(segment: &Segment, k: usize, config: &EmConfig) -> Result<Vec<GaussianComponent>> {
    dp_initialize_arrays(segment.mz(), segment.intensity(), k, config)
}

pub fn dp_initialize_arrays(
    xs: &[f64],
    ys: &[f64],
    k: usize,
    config: &EmConfig,
) -> Result<Vec<GaussianComponent>> {
    let table = DpTable::build(xs, ys, k)?;
    let span = xs[xs.len() - 1] - xs[0];
    table.components(k, config, (span * 1e-9).max(f64::MIN_POSITIVE))
}

/// Default cap on the number of components tried for a segment, derived
/// from how many expected peak widths fit into it.
pub fn default_k_cap(width_da: f64, center_mz: f64, avg_cv: f64) -> usize {
    if !(avg_cv > 0.0) || !(center_mz > 0.0) {
        return 1;
    }
    let cap = 2.0 * width_da / (avg_cv * center_mz) + 2.0;
    cap.floor().clamp(1.0, 1e6) as usize
}

/// Fit every order in `k_range` (bounded by the number of points carrying
/// signal) and keep the fit minimizing the penalty index
/// I_p = delta + K * epsilon; ties go to the smaller K.
pub fn select_model(
    segment: &Segment,
    k_range: RangeInclusive<usize>,
    epsilon: f64,
    config: &EmConfig,
) -> Result<FitResult> {
    select_model_arrays(segment.mz(), segment.intensity(), k_range, epsilon, config)
}

pub fn select_model_arrays(
    xs: &[f64],
    ys: &[f64],
    k_range: RangeInclusive<usize>,
    epsilon: f64,
    config: &EmConfig,
) -> Result<FitResult> {
    let k_lo = *k_range.start();
    if k_lo == 0 {
        return Err(Error::Config("k range must start at 1".into()));
    }
    let positives = ys.iter().filter(|&&y| y > 0.0).count();
    let k_hi = (*k_range.end()).min(positives);
    if k_hi < k_lo {
        return Err(Error::Degenerate(format!(
            "segment has {positives} points with signal, needs at least {k_lo}"
        )));
    }
    let table = DpTable::build(xs, ys, k_hi)?;
    let span = xs[xs.len() - 1] - xs[0];
    let abs_floor = (span * 1e-9).max(f64::MIN_POSITIVE);

    let mut best: Option<FitResult> = None;
    let mut last_err: Option<Error> = None;
    for k in k_lo..=k_hi {
        let init = match table.components(k, config, abs_floor) {
            Ok(init) => init,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match em_fit_arrays(xs, ys, &init, config) {
            Ok(mut fit) => {
                fit.penalty = fit.delta + fit.model.k() as f64 * epsilon;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        fit.penalty < b.penalty
                            || (fit.penalty == b.penalty && fit.model.k() < b.model.k())
                    }
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Degenerate("no model order could be fitted".into()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::SegmentKind;
    use crate::spectrum::Spectrum;

    fn segment_from(mz: Vec<f64>, ys: Vec<f64>) -> Segment {
        let s = Spectrum::new(mz, ys).unwrap();
        Segment::from_spectrum(&s, 0, s.len() - 1, SegmentKind::Plain, None).unwrap()
    }

    fn render(xs: &[f64], comps: &[(f64, f64, f64)], scale: f64) -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                scale
                    * comps
                        .iter()
                        .map(|&(a, mu, s)| a * gaussian_pdf(x, mu, s))
                        .sum::<f64>()
            })
            .collect()
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize + 1;
        (0..n).map(|i| lo + step * i as f64).collect()
    }

    /// Test config with the sigma floor well below the sigmas in play.
    fn loose_config() -> EmConfig {
        EmConfig {
            avg_cv: 1e-4,
            ..EmConfig::default()
        }
    }

    // Brute-force partition enumeration: same block-cost definition, an
    // independent search over all boundary placements, summing block costs
    // left to right exactly like the DP recurrence does.
    fn brute_force_cost(prefix: &DpPrefix, n: usize, k: usize) -> f64 {
        fn recurse(prefix: &DpPrefix, start: usize, n: usize, blocks_left: usize, acc: f64) -> f64 {
            if blocks_left == 1 {
                return acc + prefix.block_cost(start, n - 1);
            }
            let mut best = f64::INFINITY;
            // Last index of the current block leaves room for the rest.
            for end in start..=n - blocks_left {
                let total = recurse(
                    prefix,
                    end + 1,
                    n,
                    blocks_left - 1,
                    acc + prefix.block_cost(start, end),
                );
                if total < best {
                    best = total;
                }
            }
            best
        }
        recurse(prefix, 0, n, k, 0.0)
    }

    #[test]
    fn dp_single_block_matches_weighted_moments() {
        let xs = grid(10.0, 20.0, 0.5);
        let ys: Vec<f64> = xs.iter().map(|&x| gaussian_pdf(x, 15.0, 1.2)).collect();
        let comps = dp_initialize_arrays(&xs, &ys, 1, &loose_config()).unwrap();
        assert_eq!(comps.len(), 1);
        let w: f64 = ys.iter().sum();
        let mean: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / w;
        let var: f64 = xs.iter().zip(&ys).map(|(x, y)| y * (x - mean).powi(2)).sum::<f64>() / w;
        assert!((comps[0].alpha - 1.0).abs() < 1e-12);
        assert!((comps[0].mu - mean).abs() < 1e-9);
        assert!((comps[0].sigma - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn dp_two_blocks_split_in_the_valley() {
        let xs = grid(0.0, 40.0, 0.5);
        let ys = render(&xs, &[(0.5, 10.0, 1.5), (0.5, 30.0, 1.5)], 100.0);
        let table = DpTable::build(&xs, &ys, 2).unwrap();
        let starts = table.boundaries(2).unwrap();
        let boundary_x = xs[starts[1]];
        assert!(
            (10.0..=30.0).contains(&boundary_x),
            "boundary at {boundary_x}"
        );
        // Exhaustive single-boundary oracle.
        let prefix = DpPrefix::new(&xs, &ys);
        let mut best = f64::INFINITY;
        for i in 1..xs.len() {
            let c = prefix.block_cost(0, i - 1) + prefix.block_cost(i, xs.len() - 1);
            if c < best {
                best = c;
            }
        }
        assert_eq!(table.total_cost(2).unwrap(), best);
    }

    #[test]
    fn dp_three_blocks_match_exhaustive_pairs() {
        let xs = grid(0.0, 24.5, 0.5); // 50 points
        let ys = render(
            &xs,
            &[(0.3, 4.0, 1.0), (0.4, 12.0, 1.5), (0.3, 20.0, 1.0)],
            50.0,
        );
        let table = DpTable::build(&xs, &ys, 3).unwrap();
        let prefix = DpPrefix::new(&xs, &ys);
        assert_eq!(
            table.total_cost(3).unwrap(),
            brute_force_cost(&prefix, xs.len(), 3)
        );
    }

    #[test]
    fn dp_rejects_k_beyond_signal_support() {
        let xs = grid(0.0, 5.0, 1.0);
        let ys = vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0];
        assert!(dp_initialize_arrays(&xs, &ys, 3, &loose_config()).is_err());
        assert!(dp_initialize_arrays(&xs, &ys, 2, &loose_config()).is_ok());
    }

    #[test]
    fn block_cost_matches_direct_summation() {
        let xs = grid(3.0, 9.0, 0.25);
        let ys: Vec<f64> = xs.iter().map(|&x| (x * 7.3).sin().abs() + 0.1).collect();
        let prefix = DpPrefix::new(&xs, &ys);
        for &(i, j) in &[(0usize, 5usize), (3, 20), (10, xs.len() - 1)] {
            let w: f64 = ys[i..=j].iter().sum();
            let mean: f64 = xs[i..=j]
                .iter()
                .zip(&ys[i..=j])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / w;
            let direct: f64 = xs[i..=j]
                .iter()
                .zip(&ys[i..=j])
                .map(|(x, y)| y * (x - mean).powi(2))
                .sum();
            let fast = prefix.block_cost(i, j);
            assert!(
                (fast - direct).abs() <= 1e-9 * direct.abs().max(1.0),
                "block [{i},{j}]: {fast} vs {direct}"
            );
        }
    }

    #[test]
    fn em_recovers_single_gaussian() {
        let xs = grid(2970.0, 3030.0, 0.8);
        let true_scale = 1.0e4;
        let ys = render(&xs, &[(1.0, 3000.0, 3.0)], true_scale);
        let seg = segment_from(xs, ys);
        let config = loose_config();
        let init = dp_initialize(&seg, 1, &config).unwrap();
        let fit = em_fit(&seg, &init, &config).unwrap();
        let c = fit.model.components()[0];
        assert!((c.mu - 3000.0).abs() / 3000.0 < 1e-4, "mu {}", c.mu);
        assert!((c.sigma - 3.0).abs() / 3.0 < 0.01, "sigma {}", c.sigma);
        let s = fit.model.scale();
        assert!((s - true_scale).abs() / true_scale < 0.01, "scale {s}");
        assert!(fit.delta < 0.01, "delta {}", fit.delta);
    }

    #[test]
    fn tiny_component_is_removed() {
        let xs = grid(2970.0, 3030.0, 0.8);
        let ys = render(&xs, &[(1.0, 3000.0, 3.0)], 1.0e4);
        let seg = segment_from(xs, ys);
        let config = loose_config();
        let mut init = dp_initialize(&seg, 1, &config).unwrap();
        init[0].alpha = 1.0 - 1e-4;
        init.push(GaussianComponent::new(1e-4, 3015.0, 3.0));
        let fit = em_fit(&seg, &init, &config).unwrap();
        assert_eq!(fit.model.k(), 1);
        assert_eq!(fit.k_removed, 1);
    }

    #[test]
    fn sigma_is_pinned_at_the_floor() {
        // True sigmas far below the floor: the fit must sit exactly on it.
        let config = EmConfig {
            avg_cv: 0.01,
            ..EmConfig::default()
        };
        let xs = grid(950.0, 1250.0, 0.5);
        let true_sigma = 0.1 * config.sigma_min(1000.0);
        let ys = render(
            &xs,
            &[(0.5, 1000.0, true_sigma), (0.5, 1200.0, true_sigma)],
            1.0e4,
        );
        let seg = segment_from(xs, ys);
        let init = dp_initialize(&seg, 2, &config).unwrap();
        let fit = em_fit(&seg, &init, &config).unwrap();
        for c in fit.model.components() {
            assert_eq!(c.sigma, config.sigma_min(c.mu), "sigma not pinned");
        }
    }

    #[test]
    fn responsibilities_columns_sum_to_one() {
        let comps = vec![
            GaussianComponent::new(0.2, 5.0, 1.0),
            GaussianComponent::new(0.5, 9.0, 2.0),
            GaussianComponent::new(0.3, 14.0, 0.7),
        ];
        let xs = grid(0.0, 20.0, 0.1);
        let (resp, _) = e_step(&comps, &xs);
        for j in 0..xs.len() {
            assert!((resp.column_sum(j) - 1.0).abs() < 1e-12, "column {j}");
        }
    }

    #[test]
    fn likelihood_is_monotone_between_removals() {
        // Run EM manually and track the weighted log-likelihood analog.
        let xs = grid(0.0, 60.0, 0.4);
        let ys = render(&xs, &[(0.6, 20.0, 2.0), (0.4, 42.0, 3.0)], 5.0e3);
        let config = loose_config();
        let mut comps =
            dp_initialize_arrays(&xs, &ys, 2, &config).unwrap();
        // Perturb the init so EM has real work to do.
        comps[0].mu -= 3.0;
        comps[1].sigma *= 2.0;
        let y_total: f64 = ys.iter().sum();
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..60 {
            let (resp, log_density) = e_step(&comps, &xs);
            let q: f64 = ys
                .iter()
                .zip(&log_density)
                .filter(|(&y, _)| y > 0.0)
                .map(|(&y, &ld)| y * ld)
                .sum();
            assert!(
                q >= prev - 1e-9 * prev.abs(),
                "likelihood decreased: {prev} -> {q}"
            );
            prev = q;
            m_step(&mut comps, &resp, &xs, &ys, y_total, &config, 1e-12);
        }
    }

    #[test]
    fn alpha_sum_and_floor_invariants_hold_after_fit() {
        let xs = grid(0.0, 80.0, 0.5);
        let ys = render(
            &xs,
            &[(0.5, 20.0, 2.0), (0.3, 45.0, 2.5), (0.2, 65.0, 1.5)],
            2.0e3,
        );
        let seg = segment_from(xs, ys);
        let config = EmConfig {
            avg_cv: 0.002,
            ..EmConfig::default()
        };
        let init = dp_initialize(&seg, 3, &config).unwrap();
        let fit = em_fit(&seg, &init, &config).unwrap();
        let alpha_sum: f64 = fit.model.components().iter().map(|c| c.alpha).sum();
        assert!((alpha_sum - 1.0).abs() < 1e-9);
        for c in fit.model.components() {
            assert!(c.sigma >= config.sigma_min(c.mu));
        }
    }

    #[test]
    fn em_is_deterministic() {
        let xs = grid(0.0, 50.0, 0.5);
        let ys = render(&xs, &[(0.5, 15.0, 2.0), (0.5, 35.0, 2.0)], 1.0e3);
        let seg = segment_from(xs, ys);
        let config = loose_config();
        let init = dp_initialize(&seg, 2, &config).unwrap();
        let a = em_fit(&seg, &init, &config).unwrap();
        let b = em_fit(&seg, &init, &config).unwrap();
        assert_eq!(a.iters, b.iters);
        for (ca, cb) in a.model.components().iter().zip(b.model.components()) {
            assert!((ca.alpha - cb.alpha).abs() < 1e-12);
            assert!((ca.mu - cb.mu).abs() < 1e-12);
            assert!((ca.sigma - cb.sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn select_model_prefers_true_order() {
        let config = loose_config();
        // One Gaussian: K = 1 wins.
        let xs = grid(2960.0, 3040.0, 0.8);
        let ys = render(&xs, &[(1.0, 3000.0, 3.0)], 1.0e4);
        let fit = select_model(&segment_from(xs, ys), 1..=5, 0.002, &config).unwrap();
        assert_eq!(fit.model.k(), 1);

        // Three well-separated Gaussians: K = 3 wins.
        let xs = grid(0.0, 120.0, 0.4);
        let ys = render(
            &xs,
            &[(0.35, 20.0, 2.0), (0.3, 60.0, 2.0), (0.35, 100.0, 2.0)],
            1.0e4,
        );
        let fit = select_model(&segment_from(xs, ys), 1..=6, 0.002, &config).unwrap();
        assert_eq!(fit.model.k(), 3);
    }

    #[test]
    fn huge_penalty_forces_minimum_order() {
        let config = loose_config();
        let xs = grid(0.0, 120.0, 0.4);
        let ys = render(
            &xs,
            &[(0.35, 20.0, 2.0), (0.3, 60.0, 2.0), (0.35, 100.0, 2.0)],
            1.0e4,
        );
        let fit = select_model(&segment_from(xs, ys), 1..=6, 10.0, &config).unwrap();
        assert_eq!(fit.model.k(), 1);
    }

    #[test]
    fn select_model_penalty_field_is_consistent() {
        let config = loose_config();
        let xs = grid(0.0, 40.0, 0.4);
        let ys = render(&xs, &[(1.0, 20.0, 2.0)], 1.0e3);
        let eps = 0.002;
        let fit = select_model(&segment_from(xs, ys), 1..=3, eps, &config).unwrap();
        assert_eq!(fit.penalty, fit.delta + fit.model.k() as f64 * eps);
    }

    #[test]
    fn default_k_cap_formula() {
        // 2 * width / (avg_cv * center) + 2, floored.
        assert_eq!(default_k_cap(120.0, 5000.0, 0.002), 26);
        assert_eq!(default_k_cap(0.0, 5000.0, 0.002), 2);
        assert_eq!(default_k_cap(100.0, 5000.0, 0.0), 1);
    }
}
