//! Mutual and self-intersection local times of embedded walks, their small
//! value probabilities, and the strategy bounds used to explain them.
//!
//! For `m` walks with local-time fields `L̂_j` on level `n` the discrete
//! functional is `X̂ = 2⁻ⁿ Σ_x Π_j L̂_j(x)^{q_j}`.

use std::fmt;

use rand::RngCore;

use crate::brownian_paths::{
    hit_before, simulate_conditioned_path, simulate_conditioned_segment, simulate_exit_walk,
    simulate_fixed_time_walk, walk_between, EmbeddedWalk, LocalTimeField, StopRule,
};
use crate::error::{invalid, Error, Result};
use crate::gw_tails::{FitKind, Method, TailEstimate, TailPoint};
use crate::stats::{
    ks_statistic, par_items, wilson_interval, BernoulliEstimate, RngStream, DEFAULT_CONFIDENCE,
};

/// Quantiles of a pilot sample used as the default `ε` grid.
pub const PILOT_QUANTILES: [f64; 6] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05];

/// Points at or below this empirical quantile of `X̂` are not trusted.
pub const DISCRETIZATION_FLOOR_QUANTILE: f64 = 0.0005;

/// Stretched fits for a single walk need this many successes per point.
pub const MIN_STRETCHED_SUCCESSES: u64 = 30;

/// When the walks of a functional stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkStop {
    ExitUnitInterval,
    FixedTime(f64),
}

impl fmt::Display for WalkStop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WalkStop::ExitUnitInterval => f.write_str("exit_unit_interval"),
            WalkStop::FixedTime(t) => write!(f, "fixed_time({t})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionFunctional {
    q: Vec<f64>,
    stop: WalkStop,
}

impl IntersectionFunctional {
    pub fn new(q: Vec<f64>, stop: WalkStop) -> Result<Self> {
        if q.is_empty() {
            return invalid("need at least one walk");
        }
        if let Some(bad) = q.iter().find(|&&x| !(x >= 1.0 && x.is_finite())) {
            return invalid(format!("exponent {bad} must be at least 1"));
        }
        if let WalkStop::FixedTime(t) = stop {
            if !(t > 0.0 && t.is_finite()) {
                return invalid(format!("horizon {t} must be positive"));
            }
        }
        Ok(Self { q, stop })
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn q_exponents(&self) -> &[f64] {
        &self.q
    }

    pub fn q_total(&self) -> f64 {
        self.q.iter().sum()
    }

    pub fn stop(&self) -> WalkStop {
        self.stop
    }

    /// `2/(1+q)` for several walks, `1/q` (stretched) for one.
    pub fn exponent_target(&self) -> f64 {
        if self.m() == 1 {
            1.0 / self.q[0]
        } else {
            2.0 / (1.0 + self.q_total())
        }
    }

    /// Expected slope of the fit of [`Self::fit_kind`].
    pub fn target_slope(&self) -> f64 {
        if self.m() == 1 {
            -self.exponent_target()
        } else {
            self.exponent_target()
        }
    }

    pub fn fit_kind(&self) -> FitKind {
        if self.m() == 1 {
            FitKind::StretchedExponential
        } else {
            FitKind::PowerLaw
        }
    }

    /// Exponents joined by `;`, e.g. `1;1`.
    pub fn q_list(&self) -> String {
        self.q
            .iter()
            .map(|q| q.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Extra CSV columns for a [`TailEstimate`] of this functional.
    pub fn csv_columns(&self, level: u32) -> Vec<(&'static str, String)> {
        vec![
            ("m", self.m().to_string()),
            ("q_list", self.q_list()),
            ("stop_rule", self.stop.to_string()),
            ("level", level.to_string()),
        ]
    }
}

/// Walks `j ∈ M` start at `+ε` and run to `+1`, the others start at `−ε`
/// and run to `−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StartConfiguration {
    plus: Vec<bool>,
    eps_site: i64,
}

impl StartConfiguration {
    /// `plus_walks` lists the (0-based) members of `M`; it must be a proper,
    /// nonempty subset of `0..m`.
    pub fn new(m: usize, plus_walks: &[usize], eps_site: i64) -> Result<Self> {
        let mut plus = vec![false; m];
        for &j in plus_walks {
            if j >= m {
                return invalid(format!("walk {j} out of range for m = {m}"));
            }
            plus[j] = true;
        }
        let ell = plus.iter().filter(|&&p| p).count();
        if ell == 0 || ell == m {
            return invalid(format!(
                "orientation set must be a proper nonempty subset of {m} walks"
            ));
        }
        if eps_site < 0 {
            return invalid("start offset must be nonnegative");
        }
        Ok(Self { plus, eps_site })
    }

    pub fn m(&self) -> usize {
        self.plus.len()
    }

    /// `ℓ = |M|`.
    pub fn ell(&self) -> usize {
        self.plus.iter().filter(|&&p| p).count()
    }

    pub fn is_plus(&self, j: usize) -> bool {
        self.plus[j]
    }

    pub fn eps_site(&self) -> i64 {
        self.eps_site
    }

    pub fn start_sites(&self) -> Vec<i64> {
        self.plus
            .iter()
            .map(|&p| if p { self.eps_site } else { -self.eps_site })
            .collect()
    }
}

#[inline]
fn powq(v: f64, q: f64) -> f64 {
    if q == 1.0 {
        v
    } else if q == 2.0 {
        v * v
    } else if q.fract() == 0.0 && q <= 64.0 {
        v.powi(q as i32)
    } else {
        v.powf(q)
    }
}

/// `2^{−n(1+Σq)} Σ_x Π_j v_j(x)^{q_j}` for dense counts starting at the
/// given sites.
fn counts_ilt(level: u32, parts: &[(i64, &[u32])], q: &[f64]) -> f64 {
    let lo = parts.iter().map(|p| p.0).max().unwrap();
    let hi = parts.iter().map(|p| p.0 + p.1.len() as i64).min().unwrap();
    let mut sum = 0.0;
    for x in lo..hi {
        let mut prod = 1.0;
        for ((origin, counts), &qj) in parts.iter().zip(q) {
            let v = counts[(x - origin) as usize];
            if v == 0 {
                prod = 0.0;
                break;
            }
            prod *= powq(v as f64, qj);
        }
        sum += prod;
    }
    let q_total: f64 = q.iter().sum();
    sum * 2f64.powf(-(level as f64) * (1.0 + q_total))
}

/// `2⁻ⁿ Σ_x Π_j L̂_j(x)^{q_j}`; zero when the supports do not all meet.
pub fn mutual_ilt(fields: &[LocalTimeField], q: &[f64]) -> Result<f64> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("no fields".into()))?;
    if fields.len() != q.len() {
        return invalid(format!("{} fields but {} exponents", fields.len(), q.len()));
    }
    if let Some(f) = fields.iter().find(|f| f.level() != first.level()) {
        return Err(Error::LevelMismatch(first.level(), f.level()));
    }
    let lo = fields.iter().map(|f| f.origin()).max().unwrap();
    let hi = fields
        .iter()
        .map(|f| f.origin() + f.values().len() as i64)
        .min()
        .unwrap();
    let sum: f64 = (lo..hi)
        .map(|x| {
            fields
                .iter()
                .zip(q)
                .map(|(f, &qj)| powq(f.at(x), qj))
                .product::<f64>()
        })
        .sum();
    Ok(sum * first.spacing())
}

/// [`mutual_ilt`] evaluated straight from visit counts.
pub fn mutual_ilt_walks(walks: &[&EmbeddedWalk], q: &[f64]) -> Result<f64> {
    let first = walks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no walks".into()))?;
    if walks.len() != q.len() {
        return invalid(format!("{} walks but {} exponents", walks.len(), q.len()));
    }
    if let Some(w) = walks.iter().find(|w| w.level() != first.level()) {
        return Err(Error::LevelMismatch(first.level(), w.level()));
    }
    let parts: Vec<(i64, &[u32])> = walks
        .iter()
        .map(|w| (w.origin(), w.visit_counts()))
        .collect();
    Ok(counts_ilt(first.level(), &parts, q))
}

/// `∫ L̂^q` of one walk.
pub fn self_ilt(walk: &EmbeddedWalk, q: f64) -> f64 {
    counts_ilt(walk.level(), &[(walk.origin(), walk.visit_counts())], &[q])
}

/// Splits a path at the given time indices into walks over `[c_k, c_{k+1})`,
/// the last one keeping the final site, so the segment visit counts add up
/// to those of the whole path.
pub fn split_at_times(level: u32, path: &[i64], cuts: &[usize]) -> Result<Vec<EmbeddedWalk>> {
    if cuts.first() != Some(&0)
        || cuts.windows(2).any(|w| w[0] >= w[1])
        || cuts.last() >= Some(&path.len())
    {
        return invalid("cuts must start at 0 and increase within the path");
    }
    let mut segments = Vec::with_capacity(cuts.len());
    for (k, &c) in cuts.iter().enumerate() {
        let end = cuts.get(k + 1).copied().unwrap_or(path.len());
        segments.push(EmbeddedWalk::from_path(
            level,
            &path[c..end],
            StopRule::Path,
        )?);
    }
    Ok(segments)
}

/// Splits a path at the given time indices into closed walks over
/// `[c_k, c_{k+1}]`, sharing their junction sites.
pub fn split_closed(level: u32, path: &[i64], cuts: &[usize]) -> Result<Vec<EmbeddedWalk>> {
    if cuts.first() != Some(&0)
        || cuts.windows(2).any(|w| w[0] >= w[1])
        || cuts.last() >= Some(&path.len())
    {
        return invalid("cuts must start at 0 and increase within the path");
    }
    let mut ends: Vec<usize> = cuts[1..].to_vec();
    ends.push(path.len() - 1);
    cuts.iter()
        .zip(ends)
        .filter(|(&c, e)| c < *e)
        .map(|(&c, e)| EmbeddedWalk::from_path(level, &path[c..=e], StopRule::Path))
        .collect()
}

/// Draws the `m` walks of one sample and returns `X̂`. With `eta_log2 = e`
/// the walks exit `(−2ᵉ, 2ᵉ)` (or run for `4ᵉ T`), still measured on level
/// `n`, and the result is divided by `2^{e(1+q)}`.
fn draw_functional<R: RngCore + ?Sized>(
    f: &IntersectionFunctional,
    level: u32,
    eta_log2: u32,
    rng: &mut R,
) -> Result<f64> {
    let mut walks = Vec::with_capacity(f.m());
    for _ in 0..f.m() {
        walks.push(match f.stop {
            WalkStop::ExitUnitInterval => simulate_exit_walk(level + eta_log2, 0, rng)?,
            WalkStop::FixedTime(t) => {
                simulate_fixed_time_walk(level, 0, t * 4f64.powi(eta_log2 as i32), rng)?
            }
        });
    }
    let parts: Vec<(i64, &[u32])> = walks
        .iter()
        .map(|w| (w.origin(), w.visit_counts()))
        .collect();
    let x = counts_ilt(level, &parts, &f.q);
    Ok(x * 2f64.powf(-(eta_log2 as f64) * (1.0 + f.q_total())))
}

/// `samples` independent draws of `X̂` on level `n`, in draw order.
pub fn sample_functional(
    f: &IntersectionFunctional,
    level: u32,
    samples: u64,
    stream: RngStream,
) -> Result<Vec<f64>> {
    par_items(stream, samples, |_, rng| draw_functional(f, level, 0, rng))
        .into_iter()
        .collect()
}

/// Value below which a fraction `p` of the sorted sample lies.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let i = ((p * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[i]
}

/// Tail points `P{X̂ < ε}` from a sorted sample, skipping `ε` at or below
/// the discretization floor and, for one walk, points with too few successes.
pub fn tail_points(
    f: &IntersectionFunctional,
    sorted: &[f64],
    epsilons: &[f64],
) -> Result<Vec<TailPoint>> {
    if sorted.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let floor = empirical_quantile(sorted, DISCRETIZATION_FLOOR_QUANTILE);
    let mut points = Vec::new();
    for &eps in epsilons {
        if eps <= floor {
            log::info!("epsilon {eps} at or below the discretization floor {floor}, dropped");
            continue;
        }
        let below = sorted.partition_point(|&x| x < eps) as u64;
        if f.m() == 1 && below < MIN_STRETCHED_SUCCESSES {
            log::info!("epsilon {eps} has {below} successes, dropped");
            continue;
        }
        let est = wilson_interval(below, sorted.len() as u64, DEFAULT_CONFIDENCE)?;
        points.push(TailPoint::from_estimate(eps, est, Method::Mc));
    }
    Ok(points)
}

/// Monte Carlo small value probabilities of `X̂` and their fit.
///
/// Without an explicit grid, `ε` is read off [`PILOT_QUANTILES`] of a pilot
/// sample of `budget / 10` draws on a separate stream.
pub fn estimate_tail(
    f: &IntersectionFunctional,
    level: u32,
    epsilons: Option<&[f64]>,
    budget: u64,
    stream: RngStream,
) -> Result<TailEstimate> {
    if budget < 10 {
        return invalid("budget must be at least 10");
    }
    let grid = match epsilons {
        Some(e) => e.to_vec(),
        None => {
            let mut pilot = sample_functional(f, level, budget / 10, stream.child(0))?;
            pilot.sort_by(f64::total_cmp);
            let mut grid: Vec<f64> = PILOT_QUANTILES
                .iter()
                .map(|&p| empirical_quantile(&pilot, p))
                .collect();
            grid.dedup();
            grid
        }
    };
    let mut sample = sample_functional(f, level, budget, stream.child(1))?;
    sample.sort_by(f64::total_cmp);
    let points = tail_points(f, &sample, &grid)?;
    TailEstimate::fit_points(points, Vec::new(), f.fit_kind(), f.target_slope())
}

/// Monte Carlo probability that the ranges of the walks, each run until it
/// hits `±1` on its own side, have empty common intersection.
pub fn disjointness_probe(
    config: &StartConfiguration,
    level: u32,
    budget: u64,
    stream: RngStream,
) -> Result<BernoulliEstimate> {
    if level > 30 {
        return invalid(format!("level {level} too fine"));
    }
    let unit = 1i64 << level;
    let k = config.eps_site();
    if !(1..unit).contains(&k) {
        return invalid(format!("start offset {k} must lie in 1..{unit}"));
    }
    if budget == 0 {
        return invalid("budget must be positive");
    }
    let hits = par_items(stream, budget, |_, rng| -> Result<bool> {
        // Ranges are intervals [min_j, 1] for j ∈ M and [−1, max_j] otherwise,
        // so they miss each other iff max_M min_j > min_{∉M} max_j. A walk
        // that crosses to the far side of its start's mirror image cannot
        // help and is stopped there. Walks in M are simulated mirrored.
        let mut best_min = -k;
        let mut best_max = k;
        for j in 0..config.m() {
            let (crossed, max) = hit_before(-k, -unit, k, rng)?;
            if crossed {
                continue;
            }
            if config.is_plus(j) {
                best_min = best_min.max(-max);
            } else {
                best_max = best_max.min(max);
            }
        }
        Ok(best_min > best_max)
    });
    let mut successes = 0;
    for h in hits {
        successes += h? as u64;
    }
    wilson_interval(successes, budget, DEFAULT_CONFIDENCE)
}

/// Two-sample KS distance between `X̂` for exit from `(−1, 1)` and `X̂` for
/// exit from `(−η, η)` divided by `η^{1+q}` (for fixed-time functionals the
/// horizon is multiplied by `η²` instead), both on level `n`.
pub fn scaling_check(
    f: &IntersectionFunctional,
    eta: u64,
    level: u32,
    budget: u64,
    stream: RngStream,
) -> Result<f64> {
    if !eta.is_power_of_two() {
        return invalid(format!("eta = {eta} must be a power of 2"));
    }
    if budget == 0 {
        return invalid("budget must be positive");
    }
    let e = eta.trailing_zeros();
    let draw = |s: RngStream, e: u32| -> Result<Vec<f64>> {
        let mut v: Vec<f64> = par_items(s, budget, |_, rng| draw_functional(f, level, e, rng))
            .into_iter()
            .collect::<Result<_>>()?;
        v.sort_by(f64::total_cmp);
        Ok(v)
    };
    let a = draw(stream.child(0), 0)?;
    let b = draw(stream.child(if e == 0 { 0 } else { 1 }), e)?;
    ks_statistic(&a, &b)
}

/// `P{N(n) = 2ⁿ}`: the walk from 0 goes straight to `±1`.
pub fn minimal_exit_log_probability(level: u32) -> f64 {
    std::f64::consts::LN_2 - 2f64.powi(level as i32) * std::f64::consts::LN_2
}

/// Monte Carlo frequency of `{N(n) = 2ⁿ}` over exit walks from 0.
pub fn minimal_exit_estimate(
    level: u32,
    runs: u64,
    stream: RngStream,
) -> Result<BernoulliEstimate> {
    if runs == 0 {
        return invalid("runs must be positive");
    }
    let minimal = 1u64 << level;
    let hits: Result<Vec<bool>> = par_items(stream, runs, |_, rng| {
        Ok(simulate_exit_walk(level, 0, rng)?.n_steps() == minimal)
    })
    .into_iter()
    .collect();
    wilson_interval(
        hits?.into_iter().filter(|&h| h).count() as u64,
        runs,
        DEFAULT_CONFIDENCE,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqEstimate {
    /// `1 / mean`.
    pub c: f64,
    /// Mean of `∫ L̂^q` over exit walks of `(−1, 1)` from 0.
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Estimates the constant `C(q)` making `C(q) ∫ L^q(x, σ) dx` mean one for
/// Brownian motion from 0 stopped on leaving `(−1, 1)`. A coarse step of size
/// `2⁻ⁿ` has functional `2^{−n(1+q)}` times this one.
pub fn estimate_cq(q: f64, level: u32, budget: u64, stream: RngStream) -> Result<CqEstimate> {
    let f = IntersectionFunctional::new(vec![q], WalkStop::ExitUnitInterval)?;
    if budget < 2 {
        return invalid("budget must be at least 2");
    }
    let v = sample_functional(&f, level, budget, stream)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(CqEstimate {
        c: 1.0 / mean,
        mean,
        stderr: (var / n).sqrt(),
        samples: budget,
    })
}

/// Lower bound for `P{∫ L^q(x, σ) dx < ε}` from the event that the walk on
/// level `n` goes straight to `±1` and its segments behave typically.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBound {
    pub n: u32,
    pub q: f64,
    /// `2^{q − nq} / C(q)`.
    pub epsilon: f64,
    /// `2ⁿ log(1/2)`.
    pub log_event: f64,
    /// Probability, given the event, that the `2ⁿ` rescaled segment
    /// functionals `Y_j` satisfy `Σ Y_j ≤ 2 · 2ⁿ`.
    pub lln: BernoulliEstimate,
    /// Probability, given the event, that the whole path has `X̂ < ε`.
    pub direct: BernoulliEstimate,
    pub log_probability: f64,
}

/// Path of `2ⁿ` conditioned coarse steps upward on level `n + refine`.
pub fn monotone_strategy_path<R: RngCore + ?Sized>(
    n: u32,
    refine: u32,
    rng: &mut R,
) -> Result<Vec<i64>> {
    let k = 1i64 << refine;
    let mut path = vec![0];
    for j in 0..(1i64 << n) {
        let seg = simulate_conditioned_path(j * k, (j + 1) * k, (j - 1) * k, rng)?;
        path.extend_from_slice(&seg[1..]);
    }
    Ok(path)
}

/// Evaluates the strategy bound by simulating `budget` paths of `2ⁿ`
/// conditioned steps on the fine level `n + refine`, with `c_q` estimated at
/// level `refine`.
pub fn self_ilt_strategy_bound(
    q: f64,
    n: u32,
    refine: u32,
    c_q: f64,
    budget: u64,
    stream: RngStream,
) -> Result<StrategyBound> {
    if !(q >= 1.0) || n == 0 || !(c_q > 0.0) || budget == 0 {
        return invalid("need q ≥ 1, n ≥ 1, C(q) > 0 and a positive budget");
    }
    let fine = n + refine;
    if fine > 30 || n > 20 {
        return invalid(format!("level {fine} too fine"));
    }
    let epsilon = 2f64.powf(q - n as f64 * q) / c_q;
    let segments = 1u64 << n;
    let k = 1i64 << refine;
    let scale = c_q * 2f64.powf(n as f64 * (1.0 + q));
    let outcomes = par_items(stream, budget, |_, rng| -> Result<(bool, bool)> {
        let mut total = vec![0u32; (segments as i64 * k + 1) as usize];
        let mut y_sum = 0.0;
        for j in 0..segments as i64 {
            let seg = simulate_conditioned_segment(fine, j * k, (j + 1) * k, (j - 1) * k, rng)?;
            y_sum += scale * self_ilt(&seg, q);
            // Whole-path counts: the junction site is shared with the next segment.
            for (i, &v) in seg.visit_counts().iter().enumerate() {
                let site = seg.origin() + i as i64;
                if site >= 0 {
                    total[site as usize] += v;
                }
            }
            if j + 1 < segments as i64 {
                total[((j + 1) * k) as usize] -= 1;
            }
        }
        let x = counts_ilt(fine, &[(0, &total)], &[q]);
        Ok((y_sum <= 2.0 * segments as f64, x < epsilon))
    });
    let (mut lln, mut direct) = (0u64, 0u64);
    for o in outcomes {
        let (a, b) = o?;
        lln += a as u64;
        direct += b as u64;
    }
    let lln = wilson_interval(lln, budget, DEFAULT_CONFIDENCE)?;
    let direct = wilson_interval(direct, budget, DEFAULT_CONFIDENCE)?;
    let log_event = segments as f64 * 0.5f64.ln();
    Ok(StrategyBound {
        n,
        q,
        epsilon,
        log_event,
        log_probability: log_event + lln.p_hat.ln(),
        lln,
        direct,
    })
}

/// Probability `δ` of the first phase of the exit-rule lower bound at unit
/// scale: each walk from 0 leaves `(−1, 1)` on its own side (`+1` for
/// members of `M`) without going past `∓½`, and `X̂ < 1` at those times.
pub fn two_phase_delta(
    f: &IntersectionFunctional,
    plus: &[bool],
    level: u32,
    budget: u64,
    stream: RngStream,
) -> Result<BernoulliEstimate> {
    if plus.len() != f.m() {
        return invalid(format!("{} orientations for {} walks", plus.len(), f.m()));
    }
    if !(1..=30).contains(&level) || budget == 0 {
        return invalid("need level in 1..=30 and a positive budget");
    }
    let r = 1i64 << level;
    let hits = par_items(stream, budget, |_, rng| -> Result<bool> {
        let mut fields = Vec::with_capacity(plus.len());
        for &p in plus {
            let (down, up) = if p { (-r / 2, r) } else { (-r, r / 2) };
            let (went_up, visits, _) = walk_between(0, down, up, rng)?;
            if went_up != p {
                return Ok(false);
            }
            fields.push((down, visits));
        }
        let parts: Vec<(i64, &[u32])> = fields.iter().map(|(o, v)| (*o, v.as_slice())).collect();
        Ok(counts_ilt(level, &parts, &f.q) < 1.0)
    });
    let mut successes = 0;
    for h in hits {
        successes += h? as u64;
    }
    wilson_interval(successes, budget, DEFAULT_CONFIDENCE)
}

/// `δ (1/2)^m ε^{2/(1+q)}`.
pub fn two_phase_lower_bound(delta: f64, m: usize, q_total: f64, eps: f64) -> f64 {
    delta * 0.5f64.powi(m as i32) * eps.powf(2.0 / (1.0 + q_total))
}

/// `δ ((1+ρ)/2)^{m−2} (ρ/2 / (1 − ρ/2))²` with `ρ = ε^{1/(1+q)}`: the
/// probability of both phases when walks 1 and 2 are the separated pair.
pub fn two_phase_strategy_probability(delta: f64, m: usize, q_total: f64, eps: f64) -> f64 {
    let rho = eps.powf(1.0 / (1.0 + q_total));
    let sep = 0.5 * rho / (1.0 - 0.5 * rho);
    delta * ((1.0 + rho) / 2.0).powi(m as i32 - 2) * sep * sep
}

/// Tail points of a sample at a scaled `ε` grid, used with the two-phase
/// bound: one point per `ε`, with [`Method::BoundLower`] entries alongside.
pub fn two_phase_points(
    f: &IntersectionFunctional,
    sorted: &[f64],
    delta: f64,
    epsilons: &[f64],
) -> Result<(Vec<TailPoint>, Vec<TailPoint>)> {
    let points = tail_points(f, sorted, epsilons)?;
    let bounds = points
        .iter()
        .map(|p| {
            TailPoint::exact(
                p.epsilon,
                two_phase_lower_bound(delta, f.m(), f.q_total(), p.epsilon),
                Method::BoundLower,
            )
        })
        .collect();
    Ok((points, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian_paths::{coarse_crossing_indices, local_time_field, simulate_exit_path};

    fn walk(level: u32, path: &[i64]) -> EmbeddedWalk {
        EmbeddedWalk::from_path(level, path, StopRule::Path).unwrap()
    }

    #[test]
    fn functional_targets() {
        let f = IntersectionFunctional::new(vec![1.0, 1.0], WalkStop::ExitUnitInterval).unwrap();
        assert!((f.exponent_target() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.fit_kind(), FitKind::PowerLaw);
        let f = IntersectionFunctional::new(vec![2.0, 1.0], WalkStop::FixedTime(1.0)).unwrap();
        assert_eq!(f.exponent_target(), 0.5);
        assert_eq!(f.q_list(), "2;1");
        let f = IntersectionFunctional::new(vec![2.0], WalkStop::ExitUnitInterval).unwrap();
        assert_eq!(f.target_slope(), -0.5);
        assert!(IntersectionFunctional::new(vec![0.5, 1.0], WalkStop::ExitUnitInterval).is_err());
        assert!(IntersectionFunctional::new(vec![], WalkStop::ExitUnitInterval).is_err());
        assert!(IntersectionFunctional::new(vec![1.0], WalkStop::FixedTime(0.0)).is_err());
    }

    #[test]
    fn start_configuration_rules() {
        assert!(StartConfiguration::new(2, &[], 1).is_err());
        assert!(StartConfiguration::new(2, &[0, 1], 1).is_err());
        assert!(StartConfiguration::new(2, &[2], 1).is_err());
        let c = StartConfiguration::new(3, &[1], 4).unwrap();
        assert_eq!(c.ell(), 1);
        assert_eq!(c.start_sites(), vec![-4, 4, -4]);
    }

    #[test]
    fn mutual_ilt_examples() {
        let a = walk(1, &[0, 1, 2]);
        let fa = local_time_field(&a);
        let x = mutual_ilt(&[fa.clone(), fa.clone()], &[1.0, 1.0]).unwrap();
        assert!((x - 0.375).abs() < 1e-15);
        assert!((mutual_ilt_walks(&[&a, &a], &[1.0, 1.0]).unwrap() - 0.375).abs() < 1e-15);
        let b = walk(1, &[-1, -2]);
        assert_eq!(mutual_ilt_walks(&[&a, &b], &[1.0, 1.0]).unwrap(), 0.0);
        let c = walk(2, &[0, 1]);
        assert!(matches!(
            mutual_ilt_walks(&[&a, &c], &[1.0, 1.0]),
            Err(Error::LevelMismatch(1, 2))
        ));
        assert!(matches!(
            mutual_ilt(&[fa, local_time_field(&c)], &[1.0, 1.0]),
            Err(Error::LevelMismatch(1, 2))
        ));
    }

    #[test]
    fn q_one_is_duration() {
        let mut rng = RngStream::new(5, 0).rng();
        for level in 1..7 {
            let w = simulate_exit_walk(level, 0, &mut rng).unwrap();
            let expected = (w.n_steps() + 1) as f64 * 4f64.powi(-(level as i32));
            assert_eq!(self_ilt(&w, 1.0), expected);
            let f = local_time_field(&w);
            assert!((mutual_ilt(&[f], &[1.0]).unwrap() - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn segment_inequalities() {
        let mut rng = RngStream::new(6, 0).rng();
        for _ in 0..50 {
            let path = simulate_exit_path(5, 0, &mut rng).unwrap();
            let whole = walk(5, &path);
            let cuts: Vec<usize> = (0..path.len()).step_by(37).collect();
            let parts = split_at_times(5, &path, &cuts).unwrap();
            let total: u64 = parts.iter().map(|p| p.total_visits()).sum();
            assert_eq!(total, whole.total_visits());
            for q in [1.0, 1.5, 2.0, 3.0] {
                let sum: f64 = parts.iter().map(|p| self_ilt(p, q)).sum();
                assert!(self_ilt(&whole, q) >= sum * (1.0 - 1e-12));
            }
        }
        for _ in 0..20 {
            let path = monotone_strategy_path(3, 3, &mut rng).unwrap();
            assert_eq!(*path.last().unwrap(), 64);
            let cuts = coarse_crossing_indices(&path, 3);
            assert_eq!(cuts.len(), 9);
            let whole = walk(6, &path);
            let parts = split_closed(6, &path, &cuts).unwrap();
            assert_eq!(parts.len(), 8);
            for q in [1.0, 2.0, 2.5] {
                let sum: f64 = parts.iter().map(|p| self_ilt(p, q)).sum();
                assert!(self_ilt(&whole, q) <= 2f64.powf(q - 1.0) * sum * (1.0 + 1e-12));
            }
        }
    }

    /// Exact disjointness probability for two walks from `±k` on `{−M..M}`.
    fn exact_disjoint_pair(k: i64, m: i64) -> f64 {
        // P{min of the walk from k before hitting m ≥ j} = (k − j + 1)/(m − j + 1).
        let p_min_ge = |j: i64| {
            if j > k {
                0.0
            } else {
                (k - j + 1) as f64 / (m - j + 1) as f64
            }
        };
        // max of the walk from −k has the mirrored law.
        let p_max_eq = |b: i64| p_min_ge(-b) - p_min_ge(-b + 1);
        (-m..=k).map(|b| p_max_eq(b) * p_min_ge(b + 1)).sum()
    }

    #[test]
    fn disjointness_matches_exact_pair() {
        let config = StartConfiguration::new(2, &[0], 4).unwrap();
        let est = disjointness_probe(&config, 5, 200_000, RngStream::new(8, 0)).unwrap();
        let exact = exact_disjoint_pair(4, 32);
        assert!(est.covers(exact), "{est:?} vs {exact}");
        let eps: f64 = 4.0 / 32.0;
        assert!(exact >= eps * eps && exact <= 4.0 * eps * eps / (1.0 + eps).powi(2));
    }

    #[test]
    fn scaling_with_unit_eta_is_zero() {
        let f = IntersectionFunctional::new(vec![1.0, 1.0], WalkStop::ExitUnitInterval).unwrap();
        assert_eq!(
            scaling_check(&f, 1, 4, 200, RngStream::new(1, 1)).unwrap(),
            0.0
        );
        assert!(scaling_check(&f, 3, 4, 200, RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn minimal_exit_probability() {
        assert!((minimal_exit_log_probability(2) - 0.125f64.ln()).abs() < 1e-14);
        assert!((minimal_exit_log_probability(1) - 0.5f64.ln()).abs() < 1e-14);
        let est = minimal_exit_estimate(2, 40_000, RngStream::new(3, 3)).unwrap();
        assert!(est.covers(0.125), "{est:?}");
    }

    #[test]
    fn cq_for_q_one() {
        let est = estimate_cq(1.0, 5, 20_000, RngStream::new(2, 2)).unwrap();
        // E[(N + 1) 4⁻ⁿ] = 1 + 4⁻ⁿ exactly.
        let exact = 1.0 + 4f64.powi(-5);
        assert!((est.mean - exact).abs() < 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn strategy_bound_shape() {
        let b = self_ilt_strategy_bound(1.0, 1, 3, 1.0, 200, RngStream::new(4, 4)).unwrap();
        assert!((b.log_event - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!(b.direct.successes >= b.lln.successes);
        assert!((b.epsilon - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_phase_formulas() {
        let b = two_phase_lower_bound(0.2, 2, 2.0, 1e-3);
        assert!((b - 0.2 * 0.25 * 1e-2).abs() < 1e-15);
        for eps in [1e-1, 1e-2, 1e-4] {
            assert!(
                two_phase_strategy_probability(0.2, 2, 2.0, eps)
                    >= two_phase_lower_bound(0.2, 2, 2.0, eps)
            );
        }
    }
}
