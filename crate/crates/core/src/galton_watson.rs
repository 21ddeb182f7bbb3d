//! Galton-Watson generation sizes, Monte Carlo draws of the martingale limit
//! `W = lim Z_n / μⁿ`, and a grid solver for the fixed point
//! `W = μ⁻¹ Σ_{i ≤ N} W_i`.

use std::io::{self, Write};

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::offspring::{derive_params, OffspringDistribution, Regime, GEOMETRIC_TAIL_MASS};

/// Default cap on any generation size in [`simulate_generations`].
pub const DEFAULT_GENERATION_CAP: u64 = 1_000_000_000;
/// Cap used by [`sample_w`]. Aggregated sampling keeps the cost flat in
/// `Z_n`, so the only limit is exact integer representation in `f64`.
pub const SAMPLE_W_CAP: u64 = 1 << 53;

/// Generation sizes `Z_0, ..., Z_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationTrace {
    pub sizes: Vec<u64>,
}

impl GenerationTrace {
    pub fn depth(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn last(&self) -> u64 {
        *self.sizes.last().unwrap()
    }
}

fn require_no_death(dist: &OffspringDistribution) -> Result<()> {
    if dist.prob(0) > 0.0 {
        return Err(Error::DegenerateDistribution(format!(
            "p0 = {} > 0; prune finite subtrees first",
            dist.prob(0)
        )));
    }
    Ok(())
}

/// Exact simulation of `n` generations from a single ancestor.
pub fn simulate_generations<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    n: usize,
    rng: &mut R,
) -> Result<GenerationTrace> {
    simulate_generations_capped(dist, n, DEFAULT_GENERATION_CAP, rng)
}

/// As [`simulate_generations`], failing once any `Z_k` exceeds `cap`.
pub fn simulate_generations_capped<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    n: usize,
    cap: u64,
    rng: &mut R,
) -> Result<GenerationTrace> {
    require_no_death(dist)?;
    let mut sizes = Vec::with_capacity(n + 1);
    sizes.push(1u64);
    evolve(dist, &mut sizes, n, cap, rng)?;
    Ok(GenerationTrace { sizes })
}

fn evolve<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    sizes: &mut Vec<u64>,
    n: usize,
    cap: u64,
    rng: &mut R,
) -> Result<()> {
    while sizes.len() <= n {
        let z = dist.sample_sum(*sizes.last().unwrap(), rng)?;
        if z > cap {
            return Err(Error::ResourceLimit(format!(
                "generation {} has {z} individuals, above the cap {cap}",
                sizes.len()
            )));
        }
        sizes.push(z);
    }
    Ok(())
}

/// One draw of `W_n = Z_n / μⁿ`.
pub fn sample_w<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    depth: usize,
    rng: &mut R,
) -> Result<f64> {
    let trace = simulate_generations_capped(dist, depth, SAMPLE_W_CAP, rng)?;
    Ok(trace.last() as f64 / dist.mean().powi(depth as i32))
}

/// Draw of `W_n` given that every individual of the first `condition_depth`
/// generations has exactly `ν` children (`Z_j = ν^j` for `j ≤ k`).
pub fn sample_w_conditioned_minimal<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    condition_depth: usize,
    total_depth: usize,
    rng: &mut R,
) -> Result<f64> {
    let params = derive_params(dist)?;
    params.require(Regime::Boettcher)?;
    conditioned_draw(dist, params.nu, condition_depth, total_depth, rng)
}

/// Draw of `W_n` given a single line of descent up to generation
/// `condition_depth` (`Z_j = 1` for `j ≤ k`).
pub fn sample_w_conditioned_single_line<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    condition_depth: usize,
    total_depth: usize,
    rng: &mut R,
) -> Result<f64> {
    let params = derive_params(dist)?;
    params.require(Regime::Schroeder)?;
    conditioned_draw(dist, 1, condition_depth, total_depth, rng)
}

fn conditioned_draw<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    branching: u64,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if k > n {
        return invalid(format!("condition depth {k} exceeds total depth {n}"));
    }
    let z_k = branching
        .checked_pow(k as u32)
        .filter(|&z| z <= SAMPLE_W_CAP)
        .ok_or_else(|| {
            Error::ResourceLimit(format!("{branching}^{k} exceeds the generation cap"))
        })?;
    let mut sizes = vec![z_k];
    evolve(dist, &mut sizes, n - k, SAMPLE_W_CAP, rng)?;
    Ok(*sizes.last().unwrap() as f64 / dist.mean().powi(n as i32))
}

/// Log-probability of the minimal-growth event `Z_j = ν^j, j ≤ k`:
/// `(ν^k − 1)/(ν − 1) · log p_ν` (every individual of generations `0..k` has `ν` children).
pub fn minimal_growth_log_probability(dist: &OffspringDistribution, k: usize) -> Result<f64> {
    let params = derive_params(dist)?;
    let nu = params.nu as f64;
    let individuals = if params.nu == 1 {
        k as f64
    } else {
        (nu.powi(k as i32) - 1.0) / (nu - 1.0)
    };
    Ok(individuals * params.p_nu.ln())
}

/// Geometry of the density grid.
///
/// Bins are log-uniform. The solver snaps the spacing so that `μ` is an
/// integer number of bins and `1` is a bin center, which makes the `1/μ`
/// rescaling an index shift. The snapped grid covers at least `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    /// Nominal bin count before snapping.
    pub bins: usize,
    /// Upper bound on pair operations (bins × near-field width × convolutions).
    pub max_work: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: 1e-8,
            x_max: 50.0,
            bins: 8192,
            max_work: 1e12,
        }
    }
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, bins: usize) -> Self {
        Self {
            x_min,
            x_max,
            bins,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.x_min > 0.0 && self.x_min < 1.0 && self.x_max > 2.0 && self.x_max.is_finite()) {
            return invalid(format!(
                "grid range [{}, {}] must satisfy 0 < x_min < 1 < 2 < x_max",
                self.x_min, self.x_max
            ));
        }
        if self.bins < 16 {
            return invalid(format!("need at least 16 bins, got {}", self.bins));
        }
        Ok(())
    }
}

/// Snapped log-uniform geometry. Center of bin `i` is `r^{i − one}`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Geometry {
    log_r: f64,
    /// Index of the bin centered at 1.
    one: usize,
    /// Bins in the reported grid.
    bins: usize,
    /// Index shift corresponding to a factor `μ`.
    mu_shift: usize,
}

impl Geometry {
    fn new(spec: &GridSpec, mu: f64) -> Self {
        let span = (spec.x_max / spec.x_min).ln();
        let nominal = span / spec.bins as f64;
        let mu_shift = ((mu.ln() / nominal).round() as usize).max(1);
        let log_r = mu.ln() / mu_shift as f64;
        let one = ((-spec.x_min.ln()) / log_r - 0.5).ceil().max(0.0) as usize;
        let bins = one + ((spec.x_max.ln() / log_r) + 0.5).ceil() as usize;
        Self {
            log_r,
            one,
            bins,
            mu_shift,
        }
    }

    fn center(&self, i: usize) -> f64 {
        ((i as f64 - self.one as f64) * self.log_r).exp()
    }

    fn edge(&self, i: usize) -> f64 {
        ((i as f64 - self.one as f64 - 0.5) * self.log_r).exp()
    }

    /// Working length: room for partial sums up to `μ · x_max`.
    fn work_len(&self) -> usize {
        self.bins + self.mu_shift + 1
    }
}

/// A law on the grid: an atom at 0 plus atoms at the bin centers.
#[derive(Debug, Clone, PartialEq)]
struct GridLaw {
    under: f64,
    v: Vec<f64>,
}

impl GridLaw {
    fn mass(&self) -> f64 {
        self.under + self.v.iter().sum::<f64>()
    }

    fn mean(&self, geom: &Geometry) -> f64 {
        self.v
            .iter()
            .enumerate()
            .map(|(i, m)| m * geom.center(i))
            .sum()
    }
}

/// Pair-deposit rule for the sum `c_j (1 + r^{−Δ})`: bins `j + k` and
/// `j + k + 1` with weights `1 − w` and `w`, preserving the mean.
#[derive(Debug, Clone, Copy)]
struct Deposit {
    k: usize,
    w: f64,
}

struct Convolver {
    geom: Geometry,
    r: f64,
    near: Vec<Deposit>,
    /// `r^{−j}`, for the far-field sums.
    inv_pow: Vec<f64>,
}

impl Convolver {
    fn new(geom: Geometry) -> Self {
        let r = geom.log_r.exp();
        let mut near = Vec::new();
        for delta in 0.. {
            let t = 1.0 + (-(delta as f64) * geom.log_r).exp();
            let mut k = (t.ln() / geom.log_r).floor().max(0.0) as usize;
            let mut w = (t * (-(k as f64) * geom.log_r).exp() - 1.0) / (r - 1.0);
            if w > 1.0 - 1e-12 {
                k += 1;
                w = (t * (-(k as f64) * geom.log_r).exp() - 1.0) / (r - 1.0);
            }
            let w = w.clamp(0.0, 1.0);
            let w = if w < 1e-12 { 0.0 } else { w };
            if k == 0 {
                break;
            }
            near.push(Deposit { k, w });
        }
        let n = geom.work_len();
        let inv_pow = (0..n).map(|i| (-(i as f64) * geom.log_r).exp()).collect();
        Self {
            geom,
            r,
            near,
            inv_pow,
        }
    }

    /// Largest `Δ` handled by the direct near-field loops.
    fn near_width(&self) -> usize {
        self.near.len()
    }

    /// Law of `X + Y` for independent `X ~ a`, `Y ~ b`. Mass landing beyond
    /// the working grid is returned separately.
    fn convolve(&self, a: &GridLaw, b: &GridLaw) -> (GridLaw, f64) {
        let len = a.v.len();
        let k_max = self.near.first().map_or(0, |d| d.k);
        let out_len = len + k_max + 2;
        let mut lo = vec![0.0; out_len];
        let mut hi = vec![0.0; out_len];

        for (delta, dep) in self.near.iter().enumerate() {
            if delta >= len {
                break;
            }
            let n = len - delta;
            let one_minus = 1.0 - dep.w;
            let w = dep.w;
            let base = delta + dep.k;
            let lo_t = &mut lo[base..base + n];
            let hi_t = &mut hi[base..base + n];
            let a_lo = &a.v[..n];
            let b_lo = &b.v[..n];
            let a_hi = &a.v[delta..];
            let b_hi = &b.v[delta..];
            if delta == 0 {
                for idx in 0..n {
                    let s = a_hi[idx] * b_hi[idx];
                    lo_t[idx] += one_minus * s;
                    hi_t[idx] += w * s;
                }
            } else {
                for idx in 0..n {
                    let s = a_lo[idx] * b_hi[idx] + a_hi[idx] * b_lo[idx];
                    lo_t[idx] += one_minus * s;
                    hi_t[idx] += w * s;
                }
            }
        }

        // Far field: r^{−Δ} < r − 1 keeps the sum inside bin j or j + 1
        // with weight w = r^{−Δ}/(r − 1) on j + 1, so prefix sums suffice.
        let d = self.near_width();
        let scale = 1.0 / (self.r - 1.0);
        let (mut pa, mut pb, mut pac, mut pbc) = (0.0, 0.0, 0.0, 0.0);
        for j in d..len {
            let i = j - d;
            pa += a.v[i];
            pb += b.v[i];
            let ri = 1.0 / self.inv_pow[i];
            pac += a.v[i] * ri;
            pbc += b.v[i] * ri;
            let s = b.v[j] * pa + a.v[j] * pb;
            let ws = (b.v[j] * pac + a.v[j] * pbc) * scale * self.inv_pow[j];
            let ws = ws.min(s);
            lo[j] += s - ws;
            hi[j] += ws;
        }

        let mut v = vec![0.0; len];
        let mut overflow = 0.0;
        for x in 0..out_len {
            let m = lo[x] + if x > 0 { hi[x - 1] } else { 0.0 };
            if x < len {
                v[x] = m;
            } else {
                overflow += m;
            }
        }
        overflow += hi[out_len - 1];
        for j in 0..len {
            v[j] += a.under * b.v[j] + a.v[j] * b.under;
        }
        (
            GridLaw {
                under: a.under * b.under,
                v,
            },
            overflow,
        )
    }

    /// Multiplies every atom by `factor`, splitting each between the two
    /// neighbouring centers so the mean scales exactly. Atoms pushed below the
    /// grid join the atom at 0; atoms above `out_len` bins are dropped.
    fn scale_axis(&self, law: &GridLaw, factor: f64, out_len: usize) -> (GridLaw, f64) {
        let shift = -factor.ln() / self.geom.log_r;
        let mut whole = shift.floor();
        let mut frac = shift - whole;
        if frac < 1e-9 {
            frac = 0.0;
        } else if frac > 1.0 - 1e-9 {
            frac = 0.0;
            whole += 1.0;
        }
        // Downward shift by `whole` bins, then `frac` of a bin.
        let down_weight = if frac == 0.0 {
            0.0
        } else {
            (1.0 - (-frac * self.geom.log_r).exp()) / (1.0 - 1.0 / self.r)
        };
        let whole = whole as i64;
        let mut v = vec![0.0; out_len];
        let mut under = law.under;
        let mut overflow = 0.0;
        let mut put = |idx: i64, m: f64, v: &mut Vec<f64>| {
            if idx < 0 {
                under += m;
            } else if (idx as usize) < out_len {
                v[idx as usize] += m;
            } else {
                overflow += m;
            }
        };
        for (i, &m) in law.v.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let target = i as i64 - whole;
            put(target, m * (1.0 - down_weight), &mut v);
            if down_weight > 0.0 {
                put(target - 1, m * down_weight, &mut v);
            }
        }
        (GridLaw { under, v }, overflow)
    }
}

/// Discretized law of the martingale limit `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    geom: Geometry,
    masses: Vec<f64>,
    underflow: f64,
    mean: f64,
    overflow: f64,
    last_tv: f64,
    iterations: usize,
}

/// Total-variation threshold for the convergence flag.
pub const TV_TOLERANCE: f64 = 1e-6;

impl DensityGrid {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// Bin boundaries, `bins() + 1` strictly increasing values.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins()).map(|i| self.geom.edge(i)).collect()
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.geom.edge(i)
    }

    /// Location of the atom carrying bin `i`'s mass.
    pub fn center(&self, i: usize) -> f64 {
        self.geom.center(i)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Mass below the first edge, treated as an atom at 0.
    pub fn underflow(&self) -> f64 {
        self.underflow
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Mass dropped above the grid over all iterations (before renormalizing).
    pub fn overflow(&self) -> f64 {
        self.overflow
    }

    /// Total-variation distance between the last two iterates.
    pub fn last_tv(&self) -> f64 {
        self.last_tv
    }

    pub fn converged(&self) -> bool {
        self.last_tv <= TV_TOLERANCE
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn x_min(&self) -> f64 {
        self.geom.edge(0)
    }

    pub fn x_max(&self) -> f64 {
        self.geom.edge(self.bins())
    }

    /// Ratio between consecutive edges.
    pub fn ratio(&self) -> f64 {
        self.geom.log_r.exp()
    }

    pub fn total_mass(&self) -> f64 {
        self.underflow + self.masses.iter().sum::<f64>()
    }

    /// `E g(W)` under the atomic representation.
    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.underflow * g(0.0)
            + self
                .masses
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(|(i, m)| m * g(self.center(i)))
                .sum::<f64>()
    }

    fn law(&self, len: usize) -> GridLaw {
        let mut v = self.masses.clone();
        v.resize(len, 0.0);
        GridLaw {
            under: self.underflow,
            v,
        }
    }

    /// One further smoothing step under `dist`.
    pub fn smoothing_step(&self, dist: &OffspringDistribution) -> Result<DensityGrid> {
        let (mixture, conv) = Solver::new(dist, self.geom)?;
        let mut law = self.law(self.geom.work_len());
        let overflow = mixture.step(&conv, &mut law)?;
        Ok(DensityGrid::from_law(
            self.geom,
            &law,
            self.overflow + overflow,
            self.iterations + 1,
            tv_distance(&self.law(self.geom.work_len()), &law),
        ))
    }

    fn from_law(
        geom: Geometry,
        law: &GridLaw,
        overflow: f64,
        iterations: usize,
        last_tv: f64,
    ) -> Self {
        let masses = law.v[..geom.bins].to_vec();
        let mean = law.mean(&geom);
        Self {
            geom,
            masses,
            underflow: law.under,
            mean,
            overflow,
            last_tv,
            iterations,
        }
    }

    /// CSV with columns `bin_low,bin_high,mass`; the first row is the
    /// atom below the grid.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_low,bin_high,mass")?;
        writeln!(out, "0,{:e},{:e}", self.x_min(), self.underflow)?;
        for (i, m) in self.masses.iter().enumerate() {
            writeln!(out, "{:e},{:e},{:e}", self.edge(i), self.edge(i + 1), m)?;
        }
        Ok(())
    }
}

fn tv_distance(a: &GridLaw, b: &GridLaw) -> f64 {
    0.5 * ((a.under - b.under).abs()
        + a.v
            .iter()
            .zip(&b.v)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>())
}

struct Solver {
    /// `p_0, ..., p_K` with `p_0 = 0`.
    probs: Vec<f64>,
    /// Block length for Paterson-Stockmeyer evaluation of `Σ p_k F^{*k}`.
    block: usize,
}

impl Solver {
    fn new(dist: &OffspringDistribution, geom: Geometry) -> Result<(Self, Convolver)> {
        require_no_death(dist)?;
        let probs = dist.effective_pmf(GEOMETRIC_TAIL_MASS);
        let k = probs.len() - 1;
        let block = (1..=k + 1)
            .min_by_key(|&s| Self::convolutions(k, s))
            .unwrap_or(1);
        Ok((Self { probs, block }, Convolver::new(geom)))
    }

    /// Convolutions needed for degree `k` with block length `s`: the powers
    /// `F^{*2..s}` and then one per Horner step in `F^{*s}`.
    fn convolutions(k: usize, s: usize) -> usize {
        if s > k {
            k.saturating_sub(1)
        } else {
            (s - 1) + k / s
        }
    }

    fn degree(&self) -> usize {
        self.probs.len() - 1
    }

    fn work_per_step(&self, conv: &Convolver) -> f64 {
        let len = conv.geom.work_len() as f64;
        Self::convolutions(self.degree(), self.block) as f64
            * len
            * (conv.near_width() as f64 + 2.0)
    }

    /// `Σ_t p_{offset + t} F^{*t}` over `t < powers.len()`, with `F^{*0}` the atom at 0.
    fn block_sum(&self, powers: &[GridLaw], offset: usize) -> GridLaw {
        let len = powers[1].v.len();
        let mut out = GridLaw {
            under: self.probs.get(offset).copied().unwrap_or(0.0),
            v: vec![0.0; len],
        };
        for (t, power) in powers.iter().enumerate().skip(1) {
            let p = self.probs.get(offset + t).copied().unwrap_or(0.0);
            if p == 0.0 {
                continue;
            }
            out.under += p * power.under;
            for (x, y) in out.v.iter_mut().zip(&power.v) {
                *x += p * y;
            }
        }
        out
    }

    /// Replaces `law` with the law of `μ⁻¹ Σ_{i ≤ N} W_i`, rescaled to mean 1
    /// and renormalized. Returns the mass lost above the grid.
    fn step(&self, conv: &Convolver, law: &mut GridLaw) -> Result<f64> {
        let len = law.v.len();
        let k = self.degree();
        let s = self.block.min(k);
        // powers[t] = F^{*t} for t ≤ s; powers[0] is unused by block_sum.
        let mut powers = vec![
            GridLaw {
                under: 1.0,
                v: vec![0.0; len],
            },
            law.clone(),
        ];
        for _ in 2..=s {
            let (next, _) = conv.convolve(powers.last().unwrap(), law);
            powers.push(next);
        }
        let acc = if self.block > k {
            self.block_sum(&powers, 0)
        } else {
            let top = powers.pop().unwrap();
            let blocks = k / s;
            let mut acc = self.block_sum(&powers, blocks * s);
            for b in (0..blocks).rev() {
                let (mut next, _) = conv.convolve(&acc, &top);
                let low = self.block_sum(&powers, b * s);
                next.under += low.under;
                for (x, y) in next.v.iter_mut().zip(&low.v) {
                    *x += y;
                }
                acc = next;
            }
            acc
        };
        let mean = acc.mean(&conv.geom);
        if !(mean > 0.0) {
            return Err(Error::NoConvergence { iterations: 0 });
        }
        let (mut scaled, _) = conv.scale_axis(&acc, 1.0 / mean, len);
        // Keep only the reported range; the extension holds partial sums.
        for m in scaled.v[conv.geom.bins..].iter_mut() {
            *m = 0.0;
        }
        let mass = scaled.mass();
        let overflow = (self.probs.iter().sum::<f64>() - mass).max(0.0);
        scaled.under /= mass;
        scaled.v.iter_mut().for_each(|m| *m /= mass);
        *law = scaled;
        Ok(overflow)
    }
}

/// Iterates the smoothing transform `iterations` times from a point mass at 1,
/// so iterate `k` is the grid law of `W_k`.
///
/// The convergence flag on the result is set when the last step moved the law
/// by more than [`TV_TOLERANCE`] in total variation; it is informational.
pub fn density_fixed_point(
    dist: &OffspringDistribution,
    spec: &GridSpec,
    iterations: usize,
) -> Result<DensityGrid> {
    spec.validate()?;
    require_no_death(dist)?;
    let mu = dist.mean();
    if mu <= 1.0 {
        return Err(Error::DegenerateDistribution(format!(
            "mean {mu} is not supercritical"
        )));
    }
    let geom = Geometry::new(spec, mu);
    let (solver, conv) = Solver::new(dist, geom)?;
    let work = solver.work_per_step(&conv) * iterations as f64;
    if work > spec.max_work {
        return Err(Error::ResourceLimit(format!(
            "density solve needs about {work:.3e} pair operations, budget {:.3e}",
            spec.max_work
        )));
    }
    log::debug!(
        "density grid: {} bins, ratio {:.6}, near field {}, K = {}",
        geom.bins,
        conv.r,
        conv.near_width(),
        solver.degree()
    );
    let mut law = GridLaw {
        under: 0.0,
        v: vec![0.0; geom.work_len()],
    };
    law.v[geom.one] = 1.0;
    let mut overflow = 0.0;
    let mut tv = 0.0;
    for _ in 0..iterations {
        let prev = law.clone();
        overflow += solver.step(&conv, &mut law)?;
        tv = tv_distance(&prev, &law);
    }
    let grid = DensityGrid::from_law(geom, &law, overflow, iterations, tv);
    if !grid.converged() {
        log::warn!("density iteration not converged: last TV step {tv:.3e}");
    }
    Ok(grid)
}

/// `P{W < ε}` read off the grid, interpolating linearly inside the bin
/// containing `ε`.
pub fn tail_from_density(grid: &DensityGrid, epsilon: f64) -> Result<f64> {
    let (low, high) = (grid.x_min(), grid.x_max());
    if !(epsilon >= low && epsilon <= high) {
        return Err(Error::OutOfRange {
            value: epsilon,
            low,
            high,
        });
    }
    let pos = (epsilon.ln() / grid.geom.log_r + grid.geom.one as f64 + 0.5).floor();
    let bin = (pos.max(0.0) as usize).min(grid.bins() - 1);
    let (e0, e1) = (grid.edge(bin), grid.edge(bin + 1));
    let inside = ((epsilon - e0) / (e1 - e0)).clamp(0.0, 1.0);
    let below: f64 = grid.masses[..bin].iter().sum();
    Ok((grid.underflow + below + inside * grid.masses[bin]).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RngStream;

    fn pmf(s: &str) -> OffspringDistribution {
        s.parse().unwrap()
    }

    #[test]
    fn deterministic_binary_tree() {
        let mut rng = RngStream::new(1, 0).rng();
        let t = simulate_generations(&pmf("pmf: 2:1"), 3, &mut rng).unwrap();
        assert_eq!(t.sizes, vec![1, 2, 4, 8]);
        assert_eq!(sample_w(&pmf("pmf: 2:1"), 20, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn one_generation_chi_square() {
        let d = pmf("pmf: 1:0.5, 2:0.5");
        let mut rng = RngStream::new(2, 0).rng();
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| simulate_generations(&d, 1, &mut rng).unwrap().sizes[1] == 1)
            .count() as f64;
        let e = n as f64 / 2.0;
        let chi2 = (ones - e).powi(2) / e + (n as f64 - ones - e).powi(2) / e;
        // 99.9% quantile of chi-square with one degree of freedom.
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn minimal_growth_bound_holds() {
        let d = pmf("pmf: 2:0.5, 3:0.5");
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..200 {
            let t = simulate_generations(&d, 12, &mut rng).unwrap();
            for (k, &z) in t.sizes.iter().enumerate() {
                assert!(z >= 1 << k);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut rng = RngStream::new(4, 0).rng();
        let r = simulate_generations_capped(&pmf("pmf: 2:1"), 10, 500, &mut rng);
        assert!(matches!(r, Err(Error::ResourceLimit(_))));
        assert!(simulate_generations(&pmf("pmf: 0:0.1, 2:0.9"), 3, &mut rng).is_err());
    }

    #[test]
    fn conditioned_minimal() {
        let d = pmf("pmf: 2:0.5, 3:0.5");
        let mut rng = RngStream::new(5, 0).rng();
        let w = sample_w_conditioned_minimal(&d, 6, 6, &mut rng).unwrap();
        assert!((w - 0.8f64.powi(6)).abs() < 1e-15);
        let lp = minimal_growth_log_probability(&d, 3).unwrap();
        assert!((lp.exp() - 0.0078125).abs() < 1e-15);
        assert!(matches!(
            sample_w_conditioned_minimal(&pmf("pmf: 1:0.5, 2:0.5"), 2, 4, &mut rng),
            Err(Error::InvalidRegime { .. })
        ));
        let w =
            sample_w_conditioned_single_line(&pmf("pmf: 1:0.5, 2:0.5"), 4, 4, &mut rng).unwrap();
        assert!((w - 1.5f64.powi(-4)).abs() < 1e-15);
    }

    #[test]
    fn point_mass_fixed_point() {
        let grid =
            density_fixed_point(&pmf("pmf: 2:1"), &GridSpec::new(1e-4, 10.0, 512), 10).unwrap();
        let containing = (0..grid.bins())
            .find(|&i| grid.edge(i) <= 1.0 && 1.0 < grid.edge(i + 1))
            .unwrap();
        assert!((grid.masses()[containing] - 1.0).abs() < 1e-9);
        assert_eq!(tail_from_density(&grid, 0.5).unwrap(), 0.0);
        assert!((tail_from_density(&grid, grid.x_max()).unwrap() - 1.0).abs() < 1e-9);
        assert!((grid.mean() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exponential_fixed_point_coarse() {
        let g = OffspringDistribution::geometric(0.5).unwrap();
        let grid = density_fixed_point(&g, &GridSpec::new(1e-6, 40.0, 2048), 40).unwrap();
        assert!((grid.total_mass() - 1.0).abs() < 1e-9);
        assert!((grid.mean() - 1.0).abs() < 1e-6);
        for eps in [0.1, 0.5, 1.0, 2.0] {
            let p = tail_from_density(&grid, eps).unwrap();
            assert!((p - (1.0 - (-eps).exp())).abs() < 3e-3, "eps {eps}: {p}");
        }
        assert!(matches!(
            tail_from_density(&grid, 1e-9),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn budget_is_enforced() {
        let g = OffspringDistribution::geometric(0.5).unwrap();
        let spec = GridSpec {
            max_work: 1e6,
            ..GridSpec::default()
        };
        assert!(matches!(
            density_fixed_point(&g, &spec, 60),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let grid = density_fixed_point(&pmf("pmf: 2:1"), &GridSpec::new(1e-2, 4.0, 64), 2).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_low,bin_high,mass\n"));
        assert_eq!(text.lines().count(), grid.bins() + 2);
    }
}
