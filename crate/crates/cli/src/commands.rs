use std::collections::BTreeMap;
use std::str::FromStr;

use branchtail::brownian_paths::{
    exit_time_tail_probe, green_profile, reflection_exit_bound, ExitTimeSide,
};
use branchtail::galton_watson::{density_fixed_point, tail_from_density, GridSpec};
use branchtail::gw_tails::{experiment_theorem1, Method, TailEstimate, TailPoint, Theorem1Config};
use branchtail::intersection_tails::{
    disjointness_probe, estimate_cq, estimate_tail, scaling_check, self_ilt_strategy_bound,
    IntersectionFunctional, StartConfiguration, WalkStop,
};
use branchtail::offspring::{
    derive_params, extinction_probability, prune, OffspringDistribution, GEOMETRIC_TAIL_MASS,
};
use branchtail::stats::{ks_two_sample_threshold, RngStream};

use crate::{CliError, Command, ExperimentConfig, Outcome};

/// Two-sample KS coefficient at the 99% level.
const KS_C99: f64 = 1.63;

/// Typed access to the subcommand-specific settings.
struct Settings<'a> {
    map: &'a BTreeMap<String, String>,
}

impl<'a> Settings<'a> {
    fn new(
        command: Command,
        config: &'a ExperimentConfig,
        allowed: &[&str],
    ) -> Result<Self, CliError> {
        if let Some(k) = config
            .settings
            .keys()
            .find(|k| !allowed.contains(&k.as_str()))
        {
            return Err(CliError::Config(format!(
                "key `{k}` does not apply to {}",
                command.name()
            )));
        }
        Ok(Self {
            map: &config.settings,
        })
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("cannot parse `{key}` = `{v}`"))),
        }
    }

    fn str(&self, key: &str, default: &'a str) -> &'a str {
        self.map.get(key).map(String::as_str).unwrap_or(default)
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(|c| c == ',' || c == ';')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| CliError::Config(format!("cannot parse `{s}` in `{key}`")))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }
}

fn distribution(config: &ExperimentConfig) -> Result<OffspringDistribution, CliError> {
    let spec = config
        .distribution
        .as_deref()
        .ok_or_else(|| CliError::Config("an offspring law is required (--dist)".into()))?;
    Ok(spec.parse()?)
}

fn stream(config: &ExperimentConfig) -> RngStream {
    RngStream::new(config.seed, 0)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn tail_summary(est: &TailEstimate, tolerance: f64) -> String {
    let ok = (est.slope() - est.target_exponent).abs() <= tolerance;
    format!(
        "slope {:.4} ± {:.4}, target {:.4}, tolerance {tolerance}: {}",
        est.slope(),
        est.fit.slope_stderr,
        est.target_exponent,
        verdict(ok)
    )
}

fn tail_csv(est: &TailEstimate, extra: &[(&str, String)]) -> Result<String, CliError> {
    let mut buf = Vec::new();
    est.write_csv(&mut buf, extra)?;
    String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))
}

fn functional(s: &Settings, default_q: &str) -> Result<IntersectionFunctional, CliError> {
    let q = s
        .list::<f64>("q")?
        .unwrap_or_else(|| default_q.split(',').map(|x| x.parse().unwrap()).collect());
    let stop = match s.str("stop", "exit") {
        "exit" => WalkStop::ExitUnitInterval,
        "fixed" => WalkStop::FixedTime(s.parse("horizon", 1.0)?),
        other => {
            return Err(CliError::Config(format!(
                "`stop` must be exit or fixed, got `{other}`"
            )))
        }
    };
    Ok(IntersectionFunctional::new(q, stop)?)
}

pub fn dispatch(command: Command, config: &ExperimentConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Params => params(config),
        Command::Prune => prune_cmd(config),
        Command::GwDensity => gw_density(config),
        Command::GwTail => gw_tail(config),
        Command::BmGreen => bm_green(config),
        Command::IltTail => ilt_tail(config),
        Command::SiltTail => silt_tail(config),
        Command::Disjoint => disjoint(config),
        Command::ScalingCheck => scaling(config),
        Command::ExitTails => exit_tails(config),
    }
}

fn params(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    Settings::new(Command::Params, config, &[])?;
    let dist = distribution(config)?;
    let extinction = extinction_probability(&dist)?;
    let pruned = if dist.prob(0) > 0.0 {
        prune(&dist)?
    } else {
        dist.clone()
    };
    let p = derive_params(&pruned)?;
    let mut rows = vec![
        ("mu", p.mu.to_string()),
        ("p1", p.p1.to_string()),
        ("nu", p.nu.to_string()),
        ("p_nu", p.p_nu.to_string()),
        ("regime", p.regime.name().to_string()),
        ("extinction", extinction.to_string()),
        ("pruned", (dist.prob(0) > 0.0).to_string()),
    ];
    let mut summary = format!("μ={} regime={}", p.mu, p.regime.name());
    if let Some(tau) = p.tau {
        rows.push(("tau", tau.to_string()));
        summary += &format!(" τ={tau:.5}");
    }
    if let (Some(beta), Some(ratio)) = (p.beta, p.beta_ratio) {
        rows.push(("beta", beta.to_string()));
        rows.push(("beta_ratio", ratio.to_string()));
        summary += &format!(" β={beta:.5} β/(1−β)={ratio:.5}");
    }
    if dist.prob(0) > 0.0 {
        summary = format!("extinction probability {extinction}; pruned law {pruned}\n{summary}");
    }
    let mut csv = String::from("key,value\n");
    for (k, v) in rows {
        csv += &format!("{k},{v}\n");
    }
    Ok(Outcome { csv, summary })
}

fn prune_cmd(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    Settings::new(Command::Prune, config, &[])?;
    let dist = distribution(config)?;
    let pruned = prune(&dist)?;
    let mut csv = String::from("k,p\n");
    for (k, p) in pruned.effective_pmf(GEOMETRIC_TAIL_MASS).iter().enumerate() {
        csv += &format!("{k},{p}\n");
    }
    Ok(Outcome {
        csv,
        summary: format!("pruned law: {pruned} (mean {})", pruned.mean()),
    })
}

fn grid_spec(s: &Settings) -> Result<GridSpec, CliError> {
    let d = GridSpec::default();
    Ok(GridSpec::new(
        s.parse("x_min", d.x_min)?,
        s.parse("x_max", d.x_max)?,
        s.parse("bins", d.bins)?,
    ))
}

fn gw_density(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(
        Command::GwDensity,
        config,
        &["bins", "x_min", "x_max", "iterations"],
    )?;
    let dist = distribution(config)?;
    let grid = density_fixed_point(&dist, &grid_spec(&s)?, s.parse("iterations", 60)?)?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    let summary = format!(
        "{} iterations, converged {}, last TV {:e}, mean {}, P{{W < 0.5}} = {}, P{{W < 1}} = {}",
        grid.iterations(),
        grid.converged(),
        grid.last_tv(),
        grid.mean(),
        tail_from_density(&grid, 0.5)?,
        tail_from_density(&grid, 1.0)?
    );
    Ok(Outcome {
        csv: String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))?,
        summary,
    })
}

fn gw_tail(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(
        Command::GwTail,
        config,
        &[
            "method",
            "epsilons",
            "depth",
            "extra_depth",
            "iterations",
            "bins",
            "x_min",
            "x_max",
            "tolerance",
        ],
    )?;
    let dist = distribution(config)?;
    let d = Theorem1Config::default();
    let method: Method = s.str("method", "density").parse()?;
    let cfg = Theorem1Config {
        method,
        epsilons: s.list("epsilons")?,
        samples: config.budget.unwrap_or(d.samples),
        depth: s.parse("depth", d.depth)?,
        extra_depth: s.parse("extra_depth", d.extra_depth)?,
        iterations: s.parse("iterations", d.iterations)?,
        grid: grid_spec(&s)?,
        stream: stream(config),
    };
    let est = experiment_theorem1(&dist, &cfg)?;
    let summary = tail_summary(&est, s.parse("tolerance", 0.15)?);
    Ok(Outcome {
        csv: tail_csv(&est, &[("distribution", format!("\"{dist}\""))])?,
        summary,
    })
}

fn bm_green(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(Command::BmGreen, config, &["tolerance"])?;
    let level = config.level.unwrap_or(7);
    let runs = config.budget.unwrap_or(20_000);
    let field = green_profile(level, runs, stream(config))?;
    let mut buf = Vec::new();
    field.write_csv(&mut buf)?;
    let h = field.spacing();
    let sup = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = (field.origin() + i as i64) as f64 * h;
            (v - (1.0 - x.abs())).abs()
        })
        .fold(0.0, f64::max);
    let tolerance = s.parse("tolerance", 0.02)?;
    Ok(Outcome {
        csv: String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))?,
        summary: format!(
            "level {level}, {runs} walks: sup |mean L̂ − (1 − |x|)| = {sup:.5}, tolerance {tolerance}: {}",
            verdict(sup < tolerance)
        ),
    })
}

fn ilt_tail(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(
        Command::IltTail,
        config,
        &["q", "stop", "horizon", "epsilons", "tolerance"],
    )?;
    let f = functional(&s, "1,1")?;
    if f.m() < 2 {
        return Err(CliError::Config(
            "ilt-tail needs at least two exponents; use silt-tail".into(),
        ));
    }
    let level = config.level.unwrap_or(9);
    let eps = s.list::<f64>("epsilons")?;
    let est = estimate_tail(
        &f,
        level,
        eps.as_deref(),
        config.budget.unwrap_or(100_000),
        stream(config),
    )?;
    let summary = tail_summary(&est, s.parse("tolerance", 0.12)?);
    Ok(Outcome {
        csv: tail_csv(&est, &f.csv_columns(level))?,
        summary,
    })
}

fn silt_tail(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(
        Command::SiltTail,
        config,
        &[
            "q",
            "epsilons",
            "tolerance",
            "refine",
            "strategy_n_max",
            "strategy_budget",
        ],
    )?;
    let f = functional(&s, "2")?;
    if f.m() != 1 {
        return Err(CliError::Config("silt-tail takes a single exponent".into()));
    }
    let q = f.q_exponents()[0];
    let level = config.level.unwrap_or(8);
    let root = stream(config);
    let eps = s.list::<f64>("epsilons")?;
    let mut est = estimate_tail(
        &f,
        level,
        eps.as_deref(),
        config.budget.unwrap_or(100_000),
        root.child(0),
    )?;
    let n_max: u32 = s.parse("strategy_n_max", 4)?;
    let refine: u32 = s.parse("refine", 5)?;
    let strategy_budget: u64 = s.parse("strategy_budget", 2000)?;
    let mut summary = tail_summary(&est, s.parse("tolerance", 0.2)?);
    if n_max > 0 {
        let cq = estimate_cq(q, refine, strategy_budget.max(2), root.child(1))?;
        summary += &format!(
            "\nC({q}) ≈ {:.4} ± {:.4} at level {refine}",
            cq.c,
            cq.c * cq.stderr / cq.mean
        );
        for n in 1..=n_max {
            let b = self_ilt_strategy_bound(
                q,
                n,
                refine,
                cq.c,
                strategy_budget,
                root.child(1 + n as u64),
            )?;
            est.bounds.push(TailPoint::exact(
                b.epsilon,
                b.log_probability.exp(),
                Method::BoundLower,
            ));
            summary += &format!(
                "\nn = {n}: ε = {:.4e}, log P ≥ {:.4} (event {:.4}, typical segments {:.4})",
                b.epsilon, b.log_probability, b.log_event, b.lln.p_hat
            );
        }
    }
    Ok(Outcome {
        csv: tail_csv(&est, &f.csv_columns(level))?,
        summary,
    })
}

fn disjoint(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(Command::Disjoint, config, &["m", "plus", "eps"])?;
    let m: usize = s.parse("m", 2)?;
    let plus: Vec<usize> = s.list("plus")?.unwrap_or_else(|| vec![0]);
    let eps: Vec<f64> = s
        .list("eps")?
        .unwrap_or_else(|| vec![0.125, 0.0625, 0.03125]);
    let level = config.level.unwrap_or(8);
    let budget = config.budget.unwrap_or(100_000);
    let unit = 2f64.powi(level as i32);
    let mut csv = String::from("epsilon,p_hat,ci_low,ci_high,ratio_to_asymptote,lower,upper\n");
    let mut summary = Vec::new();
    for (i, &e) in eps.iter().enumerate() {
        let site = e * unit;
        if site.fract() != 0.0 {
            return Err(CliError::Config(format!(
                "ε = {e} is not on the level-{level} grid"
            )));
        }
        let start = StartConfiguration::new(m, &plus, site as i64)?;
        let ell = start.ell() as f64;
        let pairs = ell * (m as f64 - ell);
        let est = disjointness_probe(&start, level, budget, stream(config).child(i as u64))?;
        let ratio = est.p_hat / (2.0 * pairs * e * e);
        let (lo, hi) = (e * e, 4.0 * pairs * e * e / (1.0 + e).powi(2));
        csv += &format!(
            "{e:e},{:e},{:e},{:e},{ratio},{lo:e},{hi:e}\n",
            est.p_hat, est.ci_low, est.ci_high
        );
        summary.push(format!(
            "ε = {e}: P = {:.4e} [{:.4e}, {:.4e}], P/(2ℓ(m−ℓ)ε²) = {ratio:.3}, within [ε², 4ℓ(m−ℓ)ε²/(1+ε)²]: {}",
            est.p_hat,
            est.ci_low,
            est.ci_high,
            verdict(est.ci_high >= lo && est.ci_low <= hi)
        ));
    }
    Ok(Outcome {
        csv,
        summary: summary.join("\n"),
    })
}

fn scaling(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(
        Command::ScalingCheck,
        config,
        &["q", "stop", "horizon", "eta"],
    )?;
    let f = functional(&s, "1,1")?;
    let eta: u64 = s.parse("eta", 2)?;
    let level = config.level.unwrap_or(9);
    let n = config.budget.unwrap_or(20_000);
    let ks = scaling_check(&f, eta, level, n, stream(config))?;
    let threshold = ks_two_sample_threshold(KS_C99, n as usize, n as usize);
    Ok(Outcome {
        csv: format!("eta,ks,threshold,samples\n{eta},{ks},{threshold},{n}\n"),
        summary: format!(
            "η = {eta}, q = {}: KS = {ks:.5}, 99% threshold {threshold:.5}: {}",
            f.q_list(),
            verdict(ks < threshold)
        ),
    })
}

fn exit_tails(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = Settings::new(Command::ExitTails, config, &["x", "side", "m_walks", "a"])?;
    let x: f64 = s.parse("x", 1.0)?;
    let m: usize = s.parse("m_walks", 1)?;
    let side = match s.str("side", "min") {
        "min" => ExitTimeSide::Min,
        "max" => ExitTimeSide::Max,
        other => {
            return Err(CliError::Config(format!(
                "`side` must be min or max, got `{other}`"
            )))
        }
    };
    let a_values: Vec<f64> = s
        .list("a")?
        .unwrap_or_else(|| vec![0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0]);
    let level = config.level.unwrap_or(7);
    let runs = config.budget.unwrap_or(10_000);
    let side_name = s.str("side", "min");
    let mut csv = String::from("a,side,m_walks,p_hat,ci_low,ci_high,reflection_bound\n");
    let mut summary =
        format!("{side_name} exit time of {m} walk(s), x = {x}, level {level}, {runs} runs");
    for &a in &a_values {
        let est = exit_time_tail_probe(level, x, a, runs, side, m, stream(config))?;
        let bound = match side {
            ExitTimeSide::Min => reflection_exit_bound(a, m).to_string(),
            ExitTimeSide::Max => String::new(),
        };
        csv += &format!(
            "{a},{side_name},{m},{:e},{:e},{:e},{bound}\n",
            est.p_hat, est.ci_low, est.ci_high
        );
        summary += &format!("\na = {a}: P = {:.4e}", est.p_hat);
    }
    Ok(Outcome { csv, summary })
}
