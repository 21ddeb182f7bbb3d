//! Embedded random walks on the dyadic grid `2⁻ⁿ ℤ` and their discrete
//! local-time fields.
//!
//! Site `k` at level `n` is the point `k · 2⁻ⁿ`. A walk records how often it
//! stands on each site (the start counts once), and the local time at `x` is
//! approximated by `2⁻ⁿ · visits(x)`, so that the expected profile of a walk
//! from 0 stopped on leaving `(−1, 1)` is the Green function `1 − |x|`.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, RngCore};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::stats::{par_items, wilson_interval, BernoulliEstimate, RngStream, DEFAULT_CONFIDENCE};

/// Step budget for a single walk.
pub const MAX_WALK_STEPS: u64 = 1_000_000_000;

/// Side through which a walk left its interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> i64 {
        match self {
            Side::Plus => 1,
            Side::Minus => -1,
        }
    }
}

/// Rule that ended a walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// First visit to `±1`.
    ExitUnitInterval,
    /// A fixed number of steps, `⌊T · 4ⁿ⌋` for horizon `T`.
    FixedSteps(u64),
    /// First visit to a target site, under an h-transform conditioning.
    ConditionedHit,
    /// Arbitrary path supplied by the caller.
    Path,
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::ExitUnitInterval => f.write_str("exit_unit_interval"),
            StopRule::FixedSteps(n) => write!(f, "fixed_steps({n})"),
            StopRule::ConditionedHit => f.write_str("conditioned_hit"),
            StopRule::Path => f.write_str("path"),
        }
    }
}

/// A nearest-neighbour walk on level `n` with its per-site visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedWalk {
    level: u32,
    start_site: i64,
    final_site: i64,
    /// Site whose count is `visits[0]`.
    origin: i64,
    visits: Vec<u32>,
    n_steps: u64,
    exit_side: Option<Side>,
    stop_rule: StopRule,
}

impl EmbeddedWalk {
    /// Builds the walk from a site sequence. Consecutive sites must differ by 1.
    pub fn from_path(level: u32, path: &[i64], stop_rule: StopRule) -> Result<Self> {
        let (&start, &last) = match (path.first(), path.last()) {
            (Some(a), Some(b)) => (a, b),
            _ => return invalid("empty path"),
        };
        if let Some(w) = path.windows(2).find(|w| (w[1] - w[0]).abs() != 1) {
            return invalid(format!("path jumps from {} to {}", w[0], w[1]));
        }
        let lo = *path.iter().min().unwrap();
        let hi = *path.iter().max().unwrap();
        let mut visits = vec![0u32; (hi - lo + 1) as usize];
        for &s in path {
            visits[(s - lo) as usize] += 1;
        }
        let m = 1i64 << level;
        let exit_side = match stop_rule {
            StopRule::ExitUnitInterval if last == m => Some(Side::Plus),
            StopRule::ExitUnitInterval if last == -m => Some(Side::Minus),
            _ => None,
        };
        Ok(Self {
            level,
            start_site: start,
            final_site: last,
            origin: lo,
            visits,
            n_steps: path.len() as u64 - 1,
            exit_side,
            stop_rule,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn start_site(&self) -> i64 {
        self.start_site
    }

    pub fn final_site(&self) -> i64 {
        self.final_site
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn exit_side(&self) -> Option<Side> {
        self.exit_side
    }

    pub fn stop_rule(&self) -> StopRule {
        self.stop_rule
    }

    /// Elapsed Brownian time approximated by the walk, `n_steps · 4⁻ⁿ`.
    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * 4f64.powi(-(self.level as i32))
    }

    pub fn visits_at(&self, site: i64) -> u32 {
        usize::try_from(site - self.origin)
            .ok()
            .and_then(|i| self.visits.get(i))
            .copied()
            .unwrap_or(0)
    }

    /// First site of [`Self::visit_counts`].
    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Dense counts starting at [`Self::origin`]; may include unvisited sites.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().map(|&v| v as u64).sum()
    }

    /// Smallest and largest visited sites.
    pub fn range(&self) -> (i64, i64) {
        let first = self.visits.iter().position(|&v| v > 0).unwrap_or(0);
        let last = self.visits.iter().rposition(|&v| v > 0).unwrap_or(0);
        (self.origin + first as i64, self.origin + last as i64)
    }
}

#[derive(Clone, Copy)]
struct StepTable {
    disp: [i8; 256],
    lo: [i8; 256],
    hi: [i8; 256],
    /// Arrivals at offsets `lo .. lo + 8` from the block's start.
    counts: [[u32; 8]; 256],
}

/// Eight steps per byte, bit `k` set meaning step `k` goes up.
const fn build_table() -> StepTable {
    let mut t = StepTable {
        disp: [0; 256],
        lo: [0; 256],
        hi: [0; 256],
        counts: [[0; 8]; 256],
    };
    let mut b = 0;
    while b < 256 {
        let mut positions = [0i32; 8];
        let mut pos = 0i32;
        let mut k = 0;
        while k < 8 {
            pos += if (b >> k) & 1 == 1 { 1 } else { -1 };
            positions[k] = pos;
            k += 1;
        }
        let mut lo = positions[0];
        let mut hi = positions[0];
        k = 1;
        while k < 8 {
            if positions[k] < lo {
                lo = positions[k];
            }
            if positions[k] > hi {
                hi = positions[k];
            }
            k += 1;
        }
        k = 0;
        while k < 8 {
            t.counts[b][(positions[k] - lo) as usize] += 1;
            k += 1;
        }
        t.disp[b] = pos as i8;
        t.lo[b] = lo as i8;
        t.hi[b] = hi as i8;
        b += 1;
    }
    t
}

static TABLE: StepTable = build_table();

/// Buffered fair bits.
#[derive(Default)]
struct Bits {
    word: u64,
    left: u32,
}

impl Bits {
    #[inline]
    fn byte<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.left < 8 {
            self.word = rng.next_u64();
            self.left = 64;
        }
        let b = (self.word & 0xff) as usize;
        self.word >>= 8;
        self.left -= 8;
        b
    }

    #[inline]
    fn bit<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.left == 0 {
            self.word = rng.next_u64();
            self.left = 64;
        }
        let b = self.word & 1 == 1;
        self.word >>= 1;
        self.left -= 1;
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    Down,
    Up,
    Steps,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    x: i64,
    steps: u64,
    max: i64,
    stop: Stop,
}

/// Simple random walk from `x` (strictly between `down` and `up`) until it
/// stands on `down` or `up` or has made `max_steps` steps. With `VISITS`,
/// arrivals are added to `visits[site + offset]`, which must cover
/// `[down, up]`; the starting site is not counted.
#[inline]
fn run_walk<R: RngCore + ?Sized, const VISITS: bool>(
    mut x: i64,
    down: i64,
    up: i64,
    max_steps: u64,
    visits: &mut [u32],
    offset: i64,
    bits: &mut Bits,
    rng: &mut R,
) -> Run {
    let mut steps = 0u64;
    let mut max = x;
    loop {
        if x == down || x == up {
            let stop = if x == down { Stop::Down } else { Stop::Up };
            return Run {
                x,
                steps,
                max,
                stop,
            };
        }
        if steps >= max_steps {
            return Run {
                x,
                steps,
                max,
                stop: Stop::Steps,
            };
        }
        if x - 8 > down && x + 8 < up && steps + 8 <= max_steps {
            let b = bits.byte(rng);
            if VISITS {
                let base = (x + TABLE.lo[b] as i64 + offset) as usize;
                let window = &mut visits[base..base + 8];
                for (v, c) in window.iter_mut().zip(&TABLE.counts[b]) {
                    *v += c;
                }
            }
            max = max.max(x + TABLE.hi[b] as i64);
            x += TABLE.disp[b] as i64;
            steps += 8;
        } else {
            x += if bits.bit(rng) { 1 } else { -1 };
            steps += 1;
            if VISITS {
                visits[(x + offset) as usize] += 1;
            }
            max = max.max(x);
        }
    }
}

fn unit(level: u32) -> Result<i64> {
    if level > 30 {
        return invalid(format!("level {level} too fine (max 30)"));
    }
    Ok(1i64 << level)
}

/// Walk on level `n` from `start_site` until it first stands on `±2ⁿ`.
pub fn simulate_exit_walk<R: RngCore + ?Sized>(
    level: u32,
    start_site: i64,
    rng: &mut R,
) -> Result<EmbeddedWalk> {
    let m = unit(level)?;
    if start_site.abs() >= m {
        return invalid(format!("start site {start_site} not inside (−{m}, {m})"));
    }
    let mut visits = vec![0u32; (2 * m + 1) as usize];
    visits[(start_site + m) as usize] = 1;
    let run = run_walk::<R, true>(
        start_site,
        -m,
        m,
        MAX_WALK_STEPS,
        &mut visits,
        m,
        &mut Bits::default(),
        rng,
    );
    if run.stop == Stop::Steps {
        return Err(Error::ResourceLimit(format!(
            "walk exceeded {MAX_WALK_STEPS} steps"
        )));
    }
    Ok(EmbeddedWalk {
        level,
        start_site,
        final_site: run.x,
        origin: -m,
        visits,
        n_steps: run.steps,
        exit_side: Some(if run.stop == Stop::Up {
            Side::Plus
        } else {
            Side::Minus
        }),
        stop_rule: StopRule::ExitUnitInterval,
    })
}

/// Number of steps for horizon `T` at level `n`: `⌊T · 4ⁿ⌋`.
pub fn fixed_time_steps(level: u32, horizon: f64) -> Result<u64> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return invalid(format!("horizon {horizon} must be a nonnegative number"));
    }
    let steps = (horizon * 4f64.powi(level as i32)).floor();
    if steps > MAX_WALK_STEPS as f64 {
        return Err(Error::ResourceLimit(format!(
            "{steps} steps exceed {MAX_WALK_STEPS}"
        )));
    }
    Ok(steps as u64)
}

/// Walk on level `n` from `start_site` for exactly `⌊T · 4ⁿ⌋` steps.
pub fn simulate_fixed_time_walk<R: RngCore + ?Sized>(
    level: u32,
    start_site: i64,
    horizon: f64,
    rng: &mut R,
) -> Result<EmbeddedWalk> {
    unit(level)?;
    let total = fixed_time_steps(level, horizon)?;
    // Window [origin, origin + len); grows when the walk reaches an edge.
    let mut half = 16 + 4 * ((total as f64).sqrt().ceil() as i64);
    let mut origin = start_site - half;
    let mut visits = vec![0u32; (2 * half + 1) as usize];
    visits[half as usize] = 1;
    let mut bits = Bits::default();
    let mut x = start_site;
    let mut done = 0u64;
    while done < total {
        let down = origin;
        let up = origin + visits.len() as i64 - 1;
        if x == down || x == up {
            let grown = 2 * half;
            let mut wider = vec![0u32; (2 * grown + 1) as usize];
            let new_origin = start_site - grown;
            let shift = (origin - new_origin) as usize;
            wider[shift..shift + visits.len()].copy_from_slice(&visits);
            visits = wider;
            origin = new_origin;
            half = grown;
            continue;
        }
        let run = run_walk::<R, true>(
            x,
            down,
            up,
            total - done,
            &mut visits,
            -origin,
            &mut bits,
            rng,
        );
        x = run.x;
        done += run.steps;
    }
    Ok(EmbeddedWalk {
        level,
        start_site,
        final_site: x,
        origin,
        visits,
        n_steps: total,
        exit_side: None,
        stop_rule: StopRule::FixedSteps(total),
    })
}

/// Site sequence of a walk from `start_site` until it first stands on `±2ⁿ`.
pub fn simulate_exit_path<R: Rng + ?Sized>(
    level: u32,
    start_site: i64,
    rng: &mut R,
) -> Result<Vec<i64>> {
    let m = unit(level)?;
    if start_site.abs() >= m {
        return invalid(format!("start site {start_site} not inside (−{m}, {m})"));
    }
    let mut path = vec![start_site];
    let mut x = start_site;
    let mut bits = Bits::default();
    while x.abs() < m {
        if path.len() as u64 > MAX_WALK_STEPS {
            return Err(Error::ResourceLimit(format!(
                "walk exceeded {MAX_WALK_STEPS} steps"
            )));
        }
        x += if bits.bit(rng) { 1 } else { -1 };
        path.push(x);
    }
    Ok(path)
}

/// Site sequence of `steps` steps from `start_site`.
pub fn simulate_fixed_path<R: Rng + ?Sized>(
    start_site: i64,
    steps: u64,
    rng: &mut R,
) -> Result<Vec<i64>> {
    if steps > MAX_WALK_STEPS {
        return Err(Error::ResourceLimit(format!(
            "{steps} steps exceed {MAX_WALK_STEPS}"
        )));
    }
    let mut bits = Bits::default();
    let mut x = start_site;
    let mut path = Vec::with_capacity(steps as usize + 1);
    path.push(x);
    for _ in 0..steps {
        x += if bits.bit(rng) { 1 } else { -1 };
        path.push(x);
    }
    Ok(path)
}

/// Level-`n` embedded walk of a level-`(n+1)` path: successive distinct
/// even sites, halved. The fine path must start on an even site.
pub fn coarsen_path(fine: &[i64]) -> Result<Vec<i64>> {
    match fine.first() {
        Some(s) if s % 2 == 0 => {}
        Some(s) => return invalid(format!("fine path starts on odd site {s}")),
        None => return invalid("empty path"),
    }
    let mut coarse: Vec<i64> = Vec::new();
    for &s in fine {
        if s % 2 == 0 && coarse.last() != Some(&(s / 2)) {
            coarse.push(s / 2);
        }
    }
    Ok(coarse)
}

/// Indices where a level-`(n+r)` path first reaches a new site of the
/// coarser grid `2^r ℤ` (its coarse crossing times), including index 0.
pub fn coarse_crossing_indices(fine: &[i64], refine: u32) -> Vec<usize> {
    let step = 1i64 << refine;
    let mut idx = vec![0];
    let mut last = fine[0];
    for (i, &s) in fine.iter().enumerate().skip(1) {
        if s.rem_euclid(step) == 0 && s != last {
            idx.push(i);
            last = s;
        }
    }
    idx
}

/// Discrete local time `L̂(x) = 2⁻ⁿ · visits(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    level: u32,
    origin: i64,
    values: Vec<f64>,
}

impl LocalTimeField {
    pub fn new(level: u32, origin: i64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0)) {
            return invalid("local time must be nonnegative");
        }
        Ok(Self {
            level,
            origin,
            values,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn spacing(&self) -> f64 {
        2f64.powi(-(self.level as i32))
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, site: i64) -> f64 {
        usize::try_from(site - self.origin)
            .ok()
            .and_then(|i| self.values.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// `Σ_x L̂(x) · 2⁻ⁿ`.
    pub fn occupation(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }

    /// CSV with columns `site,x,L_hat`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "site,x,L_hat")?;
        let h = self.spacing();
        for (i, v) in self.values.iter().enumerate() {
            let site = self.origin + i as i64;
            writeln!(out, "{site},{},{v}", site as f64 * h)?;
        }
        Ok(())
    }
}

pub fn local_time_field(walk: &EmbeddedWalk) -> LocalTimeField {
    let h = 2f64.powi(-(walk.level as i32));
    LocalTimeField {
        level: walk.level,
        origin: walk.origin,
        values: walk.visits.iter().map(|&v| v as f64 * h).collect(),
    }
}

/// Mean local-time profile over `runs` exit walks from 0, site by site on
/// `−2ⁿ..=2ⁿ`.
pub fn green_profile(level: u32, runs: u64, stream: RngStream) -> Result<LocalTimeField> {
    let m = unit(level)?;
    if runs == 0 {
        return invalid("need at least one run");
    }
    const BATCH: u64 = 256;
    let batches = runs.div_ceil(BATCH);
    let sums = par_items(stream, batches, |b, rng| -> Result<Vec<u64>> {
        let len = BATCH.min(runs - b * BATCH);
        let mut acc = vec![0u64; (2 * m + 1) as usize];
        for _ in 0..len {
            let walk = simulate_exit_walk(level, 0, rng)?;
            for (a, &v) in acc.iter_mut().zip(&walk.visits) {
                *a += v as u64;
            }
        }
        Ok(acc)
    });
    let mut total = vec![0u64; (2 * m + 1) as usize];
    for s in sums {
        for (t, v) in total.iter_mut().zip(s?) {
            *t += v;
        }
    }
    let h = 2f64.powi(-(level as i32));
    LocalTimeField::new(
        level,
        -m,
        total.iter().map(|&t| t as f64 * h / runs as f64).collect(),
    )
}

fn check_conditioned(from_site: i64, up_target: i64, down_barrier: i64) -> Result<()> {
    if !(down_barrier < from_site && from_site < up_target) {
        return invalid(format!(
            "need barrier {down_barrier} < start {from_site} < target {up_target}"
        ));
    }
    Ok(())
}

/// Steps of the h-transformed walk, handing each arrival site to `visit`.
fn conditioned_steps<R: Rng + ?Sized>(
    from_site: i64,
    up_target: i64,
    down_barrier: i64,
    rng: &mut R,
    mut visit: impl FnMut(i64),
) -> Result<u64> {
    let mut x = from_site;
    let mut steps = 0u64;
    while x < up_target {
        if steps >= MAX_WALK_STEPS {
            return Err(Error::ResourceLimit(format!(
                "walk exceeded {MAX_WALK_STEPS} steps"
            )));
        }
        let h = (x - down_barrier) as u64;
        // Up with probability (h + 1) / (2h).
        x += if rng.random_range(0..2 * h) < h + 1 {
            1
        } else {
            -1
        };
        visit(x);
        steps += 1;
    }
    Ok(steps)
}

/// Walk from `from_site` conditioned to reach `up_target` before
/// `down_barrier`, by the h-transform with `h(x) = x − down_barrier`: from
/// `x` it steps up with probability `h(x+1) / (2 h(x))`.
pub fn simulate_conditioned_segment<R: Rng + ?Sized>(
    level_fine: u32,
    from_site: i64,
    up_target: i64,
    down_barrier: i64,
    rng: &mut R,
) -> Result<EmbeddedWalk> {
    unit(level_fine)?;
    check_conditioned(from_site, up_target, down_barrier)?;
    let origin = down_barrier + 1;
    let mut visits = vec![0u32; (up_target - origin + 1) as usize];
    visits[(from_site - origin) as usize] = 1;
    let steps = conditioned_steps(from_site, up_target, down_barrier, rng, |x| {
        visits[(x - origin) as usize] += 1
    })?;
    Ok(EmbeddedWalk {
        level: level_fine,
        start_site: from_site,
        final_site: up_target,
        origin,
        visits,
        n_steps: steps,
        exit_side: None,
        stop_rule: StopRule::ConditionedHit,
    })
}

/// Site sequence of the walk of [`simulate_conditioned_segment`].
pub fn simulate_conditioned_path<R: Rng + ?Sized>(
    from_site: i64,
    up_target: i64,
    down_barrier: i64,
    rng: &mut R,
) -> Result<Vec<i64>> {
    check_conditioned(from_site, up_target, down_barrier)?;
    let mut path = vec![from_site];
    conditioned_steps(from_site, up_target, down_barrier, rng, |x| path.push(x))?;
    Ok(path)
}

/// `P{hit up before down}` from `from`, `(from − down)/(up − down)`.
pub fn gamblers_ruin(from: f64, up: f64, down: f64) -> Result<f64> {
    if !(down < from && from < up) {
        return invalid(format!("need down {down} < from {from} < up {up}"));
    }
    Ok((from - down) / (up - down))
}

/// Walk from `start` until it stands on `down` or `up`; returns whether `up`
/// came first and the largest site seen.
pub(crate) fn hit_before<R: RngCore + ?Sized>(
    start: i64,
    down: i64,
    up: i64,
    rng: &mut R,
) -> Result<(bool, i64)> {
    let run = run_walk::<R, false>(
        start,
        down,
        up,
        MAX_WALK_STEPS,
        &mut [],
        0,
        &mut Bits::default(),
        rng,
    );
    if run.stop == Stop::Steps {
        return Err(Error::ResourceLimit(format!(
            "walk exceeded {MAX_WALK_STEPS} steps"
        )));
    }
    Ok((run.stop == Stop::Up, run.max))
}

/// Walk from `start` until it stands on `down` or `up`, counting visits on
/// `[down, up]` (index 0 is `down`). Returns whether `up` came first.
pub(crate) fn walk_between<R: RngCore + ?Sized>(
    start: i64,
    down: i64,
    up: i64,
    rng: &mut R,
) -> Result<(bool, Vec<u32>, u64)> {
    let mut visits = vec![0u32; (up - down + 1) as usize];
    visits[(start - down) as usize] = 1;
    let run = run_walk::<R, true>(
        start,
        down,
        up,
        MAX_WALK_STEPS,
        &mut visits,
        -down,
        &mut Bits::default(),
        rng,
    );
    if run.stop == Stop::Steps {
        return Err(Error::ResourceLimit(format!(
            "walk exceeded {MAX_WALK_STEPS} steps"
        )));
    }
    Ok((run.stop == Stop::Up, visits, run.steps))
}

/// Which exit time of the `m` walks the probe looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitTimeSide {
    /// `P{min_j σ_j ≤ a x²}`.
    Min,
    /// `P{max_j σ_j ≥ a x²}`.
    Max,
}

/// Reflection-principle bound `m · 4 P{Z > 1/(2√a)}` (capped at 1) for
/// `P{min_j σ_j(x) ≤ a x²}` when every walk starts within `x/2` of the centre.
pub fn reflection_exit_bound(a: f64, m_walks: usize) -> f64 {
    let z = Normal::standard();
    (m_walks as f64 * 4.0 * z.sf(0.5 / a.sqrt())).min(1.0)
}

/// Monte Carlo estimate of `P{min_j σ_j(x) ≤ a x²}` or `P{max_j σ_j(x) ≥ a x²}`
/// for `m_walks` independent walks from 0 on level `n`, where `σ_j(x)` is the
/// exit time of `(−x, x)` and one step lasts `4⁻ⁿ`.
///
/// Run `i` uses the child stream `i` whatever `a` is, so estimates for
/// different `a` share their paths and are monotone in `a`.
pub fn exit_time_tail_probe(
    level: u32,
    x_scale: f64,
    a: f64,
    n_runs: u64,
    side: ExitTimeSide,
    m_walks: usize,
    stream: RngStream,
) -> Result<BernoulliEstimate> {
    let unit = unit(level)?;
    if !(x_scale > 0.0 && a > 0.0) || m_walks == 0 || n_runs == 0 {
        return invalid("x_scale, a, m_walks and n_runs must be positive");
    }
    let half_width = x_scale * unit as f64;
    if half_width.fract() != 0.0 || half_width < 1.0 {
        return invalid(format!(
            "x = {x_scale} is not a positive multiple of the grid spacing"
        ));
    }
    let w = half_width as i64;
    // σ ≤ a x² in steps: n_steps ≤ a x² 4ⁿ.
    let threshold = (a * x_scale * x_scale * 4f64.powi(level as i32)).floor();
    let threshold = threshold.min(MAX_WALK_STEPS as f64) as u64;
    let hits = par_items(stream, n_runs, |_, rng| -> Result<bool> {
        let mut bits = Bits::default();
        match side {
            ExitTimeSide::Min => {
                for _ in 0..m_walks {
                    let run = run_walk::<_, false>(0, -w, w, threshold, &mut [], 0, &mut bits, rng);
                    if run.stop != Stop::Steps {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            ExitTimeSide::Max => {
                for _ in 0..m_walks {
                    let run = run_walk::<_, false>(0, -w, w, threshold, &mut [], 0, &mut bits, rng);
                    if run.stop == Stop::Steps {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    });
    let mut successes = 0;
    for h in hits {
        successes += h? as u64;
    }
    wilson_interval(successes, n_runs, DEFAULT_CONFIDENCE)
}
