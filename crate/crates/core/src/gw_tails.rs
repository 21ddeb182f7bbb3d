//! Small-value bounds for the martingale limit and the exponent experiments
//! built on them.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::galton_watson::{
    density_fixed_point, sample_w, sample_w_conditioned_minimal, sample_w_conditioned_single_line,
    tail_from_density, DensityGrid, GridSpec,
};
use crate::offspring::{derive_params, BranchingParams, OffspringDistribution, Regime};
use crate::stats::{
    fit_power_law, fit_stretched_exponent, par_chunks, wilson_interval, BernoulliEstimate,
    RegressionFit, RngStream, DEFAULT_CONFIDENCE,
};

/// Smallest density-derived probability trusted in fits.
pub const DENSITY_FLOOR: f64 = 1e-12;

const BRACKET_TOLERANCE: f64 = 1e-12;

/// How a tail point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mc,
    Density,
    ConditionedMc,
    BoundLower,
    BoundUpper,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Density => "density",
            Method::ConditionedMc => "conditioned_mc",
            Method::BoundLower => "bound_lower",
            Method::BoundUpper => "bound_upper",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "mc" => Method::Mc,
            "density" => Method::Density,
            "conditioned_mc" => Method::ConditionedMc,
            "bound_lower" => Method::BoundLower,
            "bound_upper" => Method::BoundUpper,
            other => return invalid(format!("unknown method '{other}'")),
        })
    }
}

/// Regression used for the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    /// `log P` against `log ε`.
    PowerLaw,
    /// `log(−log P)` against `log ε`.
    StretchedExponential,
}

/// One `(ε, P{X < ε})` observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TailPoint {
    pub epsilon: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
    /// Present for Monte Carlo points.
    pub estimate: Option<BernoulliEstimate>,
}

impl TailPoint {
    pub fn exact(epsilon: f64, p: f64, method: Method) -> Self {
        Self {
            epsilon,
            p_hat: p,
            ci_low: p,
            ci_high: p,
            method,
            estimate: None,
        }
    }

    pub fn from_estimate(epsilon: f64, est: BernoulliEstimate, method: Method) -> Self {
        Self {
            epsilon,
            p_hat: est.p_hat,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            method,
            estimate: Some(est),
        }
    }
}

/// Measured tail points with their exponent fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    /// Measured points, `ε` strictly decreasing.
    pub points: Vec<TailPoint>,
    /// Analytic bound curves evaluated on the same `ε`.
    pub bounds: Vec<TailPoint>,
    pub fit: RegressionFit,
    pub fit_kind: FitKind,
    pub target_exponent: f64,
}

impl TailEstimate {
    /// Fits `points` (sorted here) and drops the ones the regression cannot
    /// use: zero probabilities always, and `P ≥ 1/e` for stretched fits.
    pub fn fit_points(
        mut points: Vec<TailPoint>,
        bounds: Vec<TailPoint>,
        fit_kind: FitKind,
        target_exponent: f64,
    ) -> Result<Self> {
        points.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        points.dedup_by(|a, b| a.epsilon == b.epsilon);
        let usable: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| usable_for_fit(p.p_hat, fit_kind))
            .map(|p| (p.epsilon, p.p_hat))
            .collect();
        let dropped = points.len() - usable.len();
        if dropped > 0 {
            log::info!("{dropped} tail point(s) excluded from the fit");
        }
        if usable.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "{} usable tail point(s), need 3",
                usable.len()
            )));
        }
        let fit = match fit_kind {
            FitKind::PowerLaw => fit_power_law(&usable)?,
            FitKind::StretchedExponential => fit_stretched_exponent(&usable)?,
        };
        Ok(Self {
            points,
            bounds,
            fit,
            fit_kind,
            target_exponent,
        })
    }

    pub fn slope(&self) -> f64 {
        self.fit.slope
    }

    /// CSV with columns `epsilon,p_hat,ci_low,ci_high,method`, then any
    /// `extra` columns (same value on every row), then a footer header and row
    /// `slope,slope_stderr,target_exponent`.
    pub fn write_csv<W: Write>(&self, mut out: W, extra: &[(&str, String)]) -> io::Result<()> {
        write!(out, "epsilon,p_hat,ci_low,ci_high,method")?;
        for (name, _) in extra {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for p in self.points.iter().chain(&self.bounds) {
            write!(
                out,
                "{:e},{:e},{:e},{:e},{}",
                p.epsilon, p.p_hat, p.ci_low, p.ci_high, p.method
            )?;
            for (_, value) in extra {
                write!(out, ",{value}")?;
            }
            writeln!(out)?;
        }
        writeln!(out, "slope,slope_stderr,target_exponent")?;
        writeln!(
            out,
            "{:e},{:e},{:e}",
            self.fit.slope, self.fit.slope_stderr, self.target_exponent
        )
    }
}

fn usable_for_fit(p: f64, kind: FitKind) -> bool {
    match kind {
        FitKind::PowerLaw => p > 0.0 && p < 1.0,
        FitKind::StretchedExponential => p > 0.0 && p < (-1.0f64).exp(),
    }
}

/// Smallest `n ≥ 1` with `base^{−n} ≤ ε`, i.e. `base^{−n} ≤ ε < base^{−n+1}`.
/// Values within a relative `1e-12` of a power of `base` snap to it.
fn bracket(epsilon: f64, base: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon {epsilon} not in (0, 1)"));
    }
    let x = -epsilon.ln() / base.ln();
    let nearest = x.round();
    let n = if nearest >= 1.0 && (x - nearest).abs() <= BRACKET_TOLERANCE * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    Ok(n.max(1.0) as u32)
}

/// Lower bound `c · p₁ⁿ` on `P{W < ε}`, where `μ^{−n} ≤ ε < μ^{−n+1}` and
/// `c = P{W < 1}`.
pub fn schroeder_lower_bound(params: &BranchingParams, c_w1: f64, epsilon: f64) -> Result<f64> {
    params.require(Regime::Schroeder)?;
    if !(c_w1 > 0.0 && c_w1 < 1.0) {
        return invalid(format!("P{{W < 1}} = {c_w1} not in (0, 1)"));
    }
    let n = bracket(epsilon, params.mu)?;
    Ok(c_w1 * params.p1.powi(n as i32))
}

/// Minimal-growth strategy in the Böttcher regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoettcherStrategyBound {
    /// `(ν/μ)ⁿ ≤ ε < (ν/μ)^{n−1}`.
    pub n: u32,
    /// `log P{Z_{n+1} = ν^{n+1}} = (ν^{n+1} − 1)/(ν − 1) · log p_ν`.
    pub log_strategy_probability: f64,
    /// `C = (−log p_ν) ν²/(ν − 1)`.
    pub constant: f64,
    /// `C ε^{−β/(1−β)}`, an asymptotic upper bound on `−log P{W < ε}`.
    pub neg_log_upper: f64,
}

pub fn boettcher_strategy_bound(
    params: &BranchingParams,
    epsilon: f64,
) -> Result<BoettcherStrategyBound> {
    params.require(Regime::Boettcher)?;
    let nu = params.nu as f64;
    let n = bracket(epsilon, params.mu / nu)?;
    let individuals = (nu.powi(n as i32 + 1) - 1.0) / (nu - 1.0);
    let neg_log_p = -params.p_nu.ln();
    let constant = neg_log_p * nu * nu / (nu - 1.0);
    Ok(BoettcherStrategyBound {
        n,
        log_strategy_probability: -individuals * neg_log_p,
        constant,
        neg_log_upper: constant * epsilon.powf(-params.beta_ratio.unwrap()),
    })
}

/// `φ(τ) = E exp(τ(ν/μ − W))` under the grid law.
pub fn chebyshev_phi(params: &BranchingParams, density: &DensityGrid, tau: f64) -> f64 {
    let shift = params.nu as f64 / params.mu;
    density.expectation(|w| (tau * (shift - w)).exp())
}

/// `τ` grid used by default: 64 log-spaced values on `[1e-3, 50]`.
pub fn default_tau_grid() -> Vec<f64> {
    let (lo, hi): (f64, f64) = (1e-3, 50.0);
    (0..64)
        .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / 63.0).exp())
        .collect()
}

/// Result of the exponential Chebyshev search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyshevBound {
    pub tau_star: f64,
    pub phi_min: f64,
    /// `c = −ν^{−2} log φ(τ*)`, so `−log P{W < ε} ≥ c ε^{−β/(1−β)}`.
    pub c: f64,
}

impl ChebyshevBound {
    pub fn neg_log_lower(&self, params: &BranchingParams, epsilon: f64) -> f64 {
        self.c * epsilon.powf(-params.beta_ratio.unwrap_or(f64::NAN))
    }
}

pub fn boettcher_chebyshev_upper(
    params: &BranchingParams,
    density: &DensityGrid,
    tau_grid: &[f64],
) -> Result<ChebyshevBound> {
    params.require(Regime::Boettcher)?;
    if tau_grid.is_empty() || tau_grid.iter().any(|t| !(*t > 0.0)) {
        return invalid("tau grid must be nonempty and positive");
    }
    let (tau_star, phi_min) = tau_grid
        .iter()
        .map(|&t| (t, chebyshev_phi(params, density, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if !(phi_min < 1.0) {
        return Err(Error::NoFeasibleTau { min_phi: phi_min });
    }
    let nu = params.nu as f64;
    Ok(ChebyshevBound {
        tau_star,
        phi_min,
        c: -phi_min.ln() / (nu * nu),
    })
}

/// `β(i) = P{W < μ^{−i}} / p₁` for `i = 0..=n_max`.
pub fn beta_sequence(
    density: &DensityGrid,
    params: &BranchingParams,
    n_max: usize,
) -> Result<Vec<f64>> {
    params.require(Regime::Schroeder)?;
    (0..=n_max)
        .map(|i| Ok(tail_from_density(density, params.mu.powi(-(i as i32)))? / params.p1))
        .collect()
}

/// Running products `ã(n) = Π_{i<n} (1 + β(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ATilde {
    /// `ã(0), ..., ã(len)`, with `ã(0) = 1`.
    pub values: Vec<f64>,
    pub sup: f64,
}

pub fn a_tilde_recursion(betas: &[f64]) -> Result<ATilde> {
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0)) {
        return invalid(format!("negative or NaN beta {b}"));
    }
    let mut values = Vec::with_capacity(betas.len() + 1);
    values.push(1.0);
    for b in betas {
        let next = values.last().unwrap() * (1.0 + b);
        values.push(next);
    }
    let sup = values.iter().copied().fold(f64::MIN, f64::max);
    Ok(ATilde { values, sup })
}

/// `ε` values `base^{−n}` for `n` in `range`.
pub fn power_grid(base: f64, range: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    range.map(|n| base.powi(-n)).collect()
}

/// Default grid: `μ^{−n}, n = 2..12` (Schröder) or `(ν/μ)ⁿ, n = 1..8` (Böttcher).
pub fn default_epsilon_grid(params: &BranchingParams) -> Vec<f64> {
    match params.regime {
        Regime::Schroeder => power_grid(params.mu, 2..=12),
        Regime::Boettcher => power_grid(params.mu / params.nu as f64, 1..=8),
    }
}

/// Aligned grid points inside `[lo, hi]`.
pub fn aligned_grid(params: &BranchingParams, lo: f64, hi: f64) -> Vec<f64> {
    let base = match params.regime {
        Regime::Schroeder => params.mu,
        Regime::Boettcher => params.mu / params.nu as f64,
    };
    let tol = 1.0 + BRACKET_TOLERANCE;
    (1..)
        .map(|n| base.powi(-n))
        .take_while(|&e| e >= lo / tol)
        .filter(|&e| e <= hi * tol)
        .collect()
}

/// Settings for [`experiment_theorem1`].
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Config {
    pub method: Method,
    /// Defaults to [`default_epsilon_grid`].
    pub epsilons: Option<Vec<f64>>,
    /// Monte Carlo draws per point set.
    pub samples: u64,
    /// Generation depth for `W_n` draws.
    pub depth: usize,
    /// Free generations after the conditioned ones in `conditioned_mc`.
    pub extra_depth: usize,
    pub iterations: usize,
    pub grid: GridSpec,
    pub stream: RngStream,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            method: Method::Density,
            epsilons: None,
            samples: 100_000,
            depth: 25,
            extra_depth: 12,
            iterations: 60,
            grid: GridSpec::default(),
            stream: RngStream::new(0, 0),
        }
    }
}

const MC_CHUNK: u64 = 4096;

/// Draws `samples` values of `draw` in parallel and counts, per threshold,
/// how many fall strictly below it.
fn count_below<F>(stream: RngStream, samples: u64, thresholds: &[f64], draw: F) -> Result<Vec<u64>>
where
    F: Fn(&mut crate::stats::StreamRng) -> Result<f64> + Sync,
{
    let chunks = par_chunks(stream, samples, MC_CHUNK, |len, rng| -> Result<Vec<u64>> {
        let mut counts = vec![0u64; thresholds.len()];
        for _ in 0..len {
            let w = draw(rng)?;
            for (c, &t) in counts.iter_mut().zip(thresholds) {
                if w < t {
                    *c += 1;
                }
            }
        }
        Ok(counts)
    });
    let mut total = vec![0u64; thresholds.len()];
    for chunk in chunks {
        for (t, c) in total.iter_mut().zip(chunk?) {
            *t += c;
        }
    }
    Ok(total)
}

/// Tail points of `W` on an `ε` grid by the chosen method, with the exponent
/// fit for the regime (power law or stretched exponential) and the analytic
/// bound curves attached.
pub fn experiment_theorem1(
    dist: &OffspringDistribution,
    config: &Theorem1Config,
) -> Result<TailEstimate> {
    let params = derive_params(dist)?;
    let epsilons = config
        .epsilons
        .clone()
        .unwrap_or_else(|| default_epsilon_grid(&params));
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return invalid(format!("epsilon {e} not in (0, 1)"));
    }
    let fit_kind = match params.regime {
        Regime::Schroeder => FitKind::PowerLaw,
        Regime::Boettcher => FitKind::StretchedExponential,
    };
    let target = params.target_slope();
    let mut bounds = Vec::new();

    let points = match config.method {
        Method::Density => {
            let grid = density_fixed_point(dist, &config.grid, config.iterations)?;
            let mut points = Vec::new();
            for &e in &epsilons {
                let p = tail_from_density(&grid, e)?;
                if params.regime == Regime::Boettcher && p <= DENSITY_FLOOR {
                    log::info!("epsilon {e}: density tail {p:e} below the floor, skipped");
                    continue;
                }
                points.push(TailPoint::exact(e, p, Method::Density));
            }
            bounds = density_bounds(&params, &grid, &epsilons)?;
            points
        }
        Method::Mc => {
            let mut thresholds = epsilons.clone();
            thresholds.push(1.0);
            let counts = count_below(config.stream, config.samples, &thresholds, |rng| {
                sample_w(dist, config.depth, rng)
            })?;
            let mut points = Vec::new();
            for (&e, &c) in epsilons.iter().zip(&counts) {
                let est = wilson_interval(c, config.samples, DEFAULT_CONFIDENCE)?;
                points.push(TailPoint::from_estimate(e, est, Method::Mc));
            }
            let below_one = counts[epsilons.len()] as f64 / config.samples as f64;
            for &e in &epsilons {
                match params.regime {
                    Regime::Schroeder if below_one > 0.0 && below_one < 1.0 => {
                        bounds.push(TailPoint::exact(
                            e,
                            schroeder_lower_bound(&params, below_one, e)?,
                            Method::BoundLower,
                        ))
                    }
                    Regime::Boettcher => bounds.push(TailPoint::exact(
                        e,
                        boettcher_strategy_bound(&params, e)?
                            .log_strategy_probability
                            .exp(),
                        Method::BoundLower,
                    )),
                    _ => {}
                }
            }
            points
        }
        Method::ConditionedMc => {
            // P{W < ε} ≥ P{W < ε | strategy} · P{strategy}.
            let mut points = Vec::new();
            for (idx, &e) in epsilons.iter().enumerate() {
                let stream = config.stream.child(idx as u64);
                let (k, log_strategy) = match params.regime {
                    Regime::Schroeder => {
                        let n = bracket(e, params.mu)? as usize;
                        (n, n as f64 * params.p1.ln())
                    }
                    Regime::Boettcher => {
                        let b = boettcher_strategy_bound(&params, e)?;
                        (b.n as usize + 1, b.log_strategy_probability)
                    }
                };
                let total = k + config.extra_depth;
                let counts =
                    count_below(stream, config.samples, &[e], |rng| match params.regime {
                        Regime::Schroeder => sample_w_conditioned_single_line(dist, k, total, rng),
                        Regime::Boettcher => sample_w_conditioned_minimal(dist, k, total, rng),
                    })?;
                let est = wilson_interval(counts[0], config.samples, DEFAULT_CONFIDENCE)?;
                let scale = log_strategy.exp();
                points.push(TailPoint {
                    epsilon: e,
                    p_hat: est.p_hat * scale,
                    ci_low: est.ci_low * scale,
                    ci_high: est.ci_high * scale,
                    method: Method::ConditionedMc,
                    estimate: Some(est),
                });
            }
            points
        }
        Method::BoundLower | Method::BoundUpper => {
            return invalid("bound curves are attached to experiments, not a measurement method")
        }
    };
    TailEstimate::fit_points(points, bounds, fit_kind, target)
}

/// Bound curves read from a converged density: Schröder lower `c p₁ⁿ` and
/// upper `ã(n) p₁ⁿ`; Böttcher strategy lower and Chebyshev upper.
fn density_bounds(
    params: &BranchingParams,
    grid: &DensityGrid,
    epsilons: &[f64],
) -> Result<Vec<TailPoint>> {
    let mut bounds = Vec::new();
    match params.regime {
        Regime::Schroeder => {
            let c = tail_from_density(grid, 1.0)?;
            let n_max = (-(grid.x_min().ln()) / params.mu.ln()).floor() as usize;
            let a_tilde = a_tilde_recursion(&beta_sequence(grid, params, n_max)?)?;
            for &e in epsilons {
                bounds.push(TailPoint::exact(
                    e,
                    schroeder_lower_bound(params, c, e)?,
                    Method::BoundLower,
                ));
                // μ^{−n−1} ≤ ε < μ^{−n}.
                let n = bracket(e, params.mu)? as usize - 1;
                if let Some(a) = a_tilde.values.get(n) {
                    bounds.push(TailPoint::exact(
                        e,
                        (a * params.p1.powi(n as i32)).min(1.0),
                        Method::BoundUpper,
                    ));
                }
            }
        }
        Regime::Boettcher => {
            let cheb = boettcher_chebyshev_upper(params, grid, &default_tau_grid()).ok();
            for &e in epsilons {
                let strategy = boettcher_strategy_bound(params, e)?;
                bounds.push(TailPoint::exact(
                    e,
                    strategy.log_strategy_probability.exp(),
                    Method::BoundLower,
                ));
                if let Some(cheb) = cheb {
                    bounds.push(TailPoint::exact(
                        e,
                        (-cheb.neg_log_lower(params, e)).exp(),
                        Method::BoundUpper,
                    ));
                }
            }
        }
    }
    Ok(bounds)
}
