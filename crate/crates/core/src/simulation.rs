//! Synthetic market generation, estimator noise, outcome metrics, and the
//! experiment runner.
//!
//! A generated market runs two years of monthly arrivals with a shortage of
//! homes. The matchmaker's placement value for a child is a non-disruption
//! probability near 0.7; homes value young children most, with a quadratic age
//! penalty and a match-specific taste shock, and refuse high-needs children
//! unless surveyed as willing. Estimator error enters as additive noise on the
//! observed home table, either a systematic underestimate (bias) or zero-mean
//! spread (variance), calibrated so empirical RMSE converges to the chosen
//! error level.

use rand::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{run_mechanism, MechanismError, MechanismKind, MechanismSpec};
use crate::model::{
    Action, Child, ChildId, Environment, History, Home, HomeId, ModelError, PreferenceTable, Time,
    UNACCEPTABLE,
};
use crate::strategic::HomeBehavior;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub horizon: Time,
    /// Inclusive bounds on integer-uniform child arrivals per month.
    pub children_per_month: (u32, u32),
    pub homes_per_month: (u32, u32),
    pub age_mean: f64,
    pub age_sd: f64,
    pub p_child_high_needs: f64,
    pub p_home_accepts_high_needs: f64,
    /// Non-disruption noise: the placement value is `1 - eps`, clamped to
    /// [0, 1].
    pub eps_mean: f64,
    pub eps_sd: f64,
    /// Top of the home utility scale.
    pub v_bar: f64,
    /// Match-specific taste shock on home utilities.
    pub delta_sd: f64,
    pub wait_cost_child: f64,
    pub wait_cost_home: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            horizon: 24,
            children_per_month: (15, 20),
            homes_per_month: (12, 15),
            age_mean: 8.0,
            age_sd: 4.0,
            p_child_high_needs: 1.0 / 3.0,
            p_home_accepts_high_needs: 1.0 / 5.0,
            eps_mean: 0.3,
            eps_sd: 0.1,
            v_bar: 100.0,
            delta_sd: 10.0,
            wait_cost_child: 14000.0 / 12.0,
            wait_cost_home: 4.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.horizon < 1 {
            return Err(SimError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.children_per_month.0 > self.children_per_month.1
            || self.homes_per_month.0 > self.homes_per_month.1
        {
            return Err(SimError::InvalidConfig("arrival bounds out of order".into()));
        }
        if !prob(self.p_child_high_needs) || !prob(self.p_home_accepts_high_needs) {
            return Err(SimError::InvalidConfig("probabilities must sit in [0,1]".into()));
        }
        if self.age_sd <= 0.0 || self.eps_sd <= 0.0 || self.delta_sd <= 0.0 {
            return Err(SimError::InvalidConfig("standard deviations must be positive".into()));
        }
        if self.v_bar <= 0.0 || self.wait_cost_child <= 0.0 || self.wait_cost_home <= 0.0 {
            return Err(SimError::InvalidConfig("scales and costs must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> GeneratorConfig {
        let mut out = self.clone();
        out.seed = seed;
        out
    }
}

/// Home value of a child before the taste shock: top of the scale at age zero,
/// zero at age eighteen, quadratic in between.
pub fn age_quadratic_value(v_bar: f64, age: f64) -> f64 {
    v_bar - v_bar * (age / 18.0) * (age / 18.0)
}

/// Draw a full market from the config, deterministically in the seed.
pub fn generate_environment(cfg: &GeneratorConfig) -> Result<Environment, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let age_dist = Normal::new(cfg.age_mean, cfg.age_sd).expect("validated sd");
    let eps_dist = Normal::new(cfg.eps_mean, cfg.eps_sd).expect("validated sd");
    let delta_dist = Normal::new(0.0, cfg.delta_sd).expect("validated sd");

    let mut child_counts = Vec::with_capacity(cfg.horizon as usize);
    let mut home_counts = Vec::with_capacity(cfg.horizon as usize);
    for _ in 1..=cfg.horizon {
        child_counts.push(rng.random_range(cfg.children_per_month.0..=cfg.children_per_month.1));
        home_counts.push(rng.random_range(cfg.homes_per_month.0..=cfg.homes_per_month.1));
    }

    let mut children = Vec::new();
    for (month, &count) in child_counts.iter().enumerate() {
        for _ in 0..count {
            let age = age_dist.sample(&mut rng).clamp(0.0, 18.0);
            let high_needs = rng.random_bool(cfg.p_child_high_needs);
            children.push(Child {
                id: ChildId(children.len() as u32),
                arrival: month as Time + 1,
                age,
                high_needs,
            });
        }
    }
    let mut homes = Vec::new();
    for (month, &count) in home_counts.iter().enumerate() {
        for _ in 0..count {
            homes.push(Home {
                id: HomeId(homes.len() as u32),
                arrival: month as Time + 1,
                accepts_high_needs: rng.random_bool(cfg.p_home_accepts_high_needs),
            });
        }
    }

    let child_utility: Vec<Vec<f64>> = children
        .iter()
        .map(|_| {
            homes
                .iter()
                .map(|_| (1.0 - eps_dist.sample(&mut rng)).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let home_true: Vec<Vec<f64>> = homes
        .iter()
        .map(|h| {
            children
                .iter()
                .map(|c| {
                    if c.high_needs && !h.accepts_high_needs {
                        UNACCEPTABLE
                    } else {
                        age_quadratic_value(cfg.v_bar, c.age) + delta_dist.sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect();

    let prefs = PreferenceTable::new(
        child_utility,
        home_true.clone(),
        home_true,
        cfg.wait_cost_child,
        cfg.wait_cost_home,
    )?;
    Ok(Environment::new(cfg.horizon, children, homes, prefs)?)
}

/// Estimator error regimes, with `k` a fraction of the utility scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    None,
    /// Systematic underestimation with a small spread: the error mean is
    /// `-k * v_bar`.
    Bias { k: f64 },
    /// Zero-mean error with spread `k * v_bar`.
    Variance { k: f64 },
}

impl NoiseSpec {
    pub fn k(&self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Bias { k } | NoiseSpec::Variance { k } => *k,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseSpec::None => "none".to_string(),
            NoiseSpec::Bias { k } => format!("bias-{:02}", (k * 100.0).round() as u32),
            NoiseSpec::Variance { k } => format!("variance-{:02}", (k * 100.0).round() as u32),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Bias { .. } => "bias",
            NoiseSpec::Variance { .. } => "variance",
        }
    }
}

/// Add estimator error to a true home table. Unacceptable pairs carry no noise
/// and keep the exact sentinel, so an estimate can never flip a pair's
/// reported acceptability encoding; acceptable pairs keep their drawn error
/// (nudged off the sentinel value) so the error distribution stays calibrated.
pub fn apply_noise(
    true_rows: &[Vec<f64>],
    spec: NoiseSpec,
    v_bar: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let dist = match spec {
        NoiseSpec::None => None,
        NoiseSpec::Bias { k } if k == 0.0 => None,
        NoiseSpec::Variance { k } if k == 0.0 => None,
        NoiseSpec::Bias { k } => Some(Normal::new(-k * v_bar, v_bar / 100.0).expect("finite sd")),
        NoiseSpec::Variance { k } => Some(Normal::new(0.0, k * v_bar).expect("finite sd")),
    };
    let Some(dist) = dist else {
        return true_rows.to_vec();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    true_rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if v < 0.0 {
                        v
                    } else {
                        let noisy = v + dist.sample(&mut rng);
                        if noisy == UNACCEPTABLE {
                            UNACCEPTABLE + 1e-9
                        } else {
                            noisy
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Root mean squared deviation over all pairs of two same-shape tables.
pub fn empirical_rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len(), "tables must share an index set");
        for (&va, &vb) in ra.iter().zip(rb) {
            sum += (va - vb) * (va - vb);
            n += 1;
        }
    }
    assert_eq!(a.len(), b.len(), "tables must share an index set");
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NoiseCalibration {
    pub pairs: usize,
    pub rmse: f64,
    pub mean_error: f64,
}

/// Measure a noise spec's empirical error on a synthetic sample of acceptable
/// pair values drawn from the generator's marginal.
pub fn calibrate_noise(
    spec: NoiseSpec,
    cfg: &GeneratorConfig,
    pairs: usize,
    seed: u64,
) -> NoiseCalibration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age_dist = Normal::new(cfg.age_mean, cfg.age_sd).expect("valid sd");
    let delta_dist = Normal::new(0.0, cfg.delta_sd).expect("valid sd");
    let mut values = Vec::with_capacity(pairs);
    while values.len() < pairs {
        let age: f64 = age_dist.sample(&mut rng);
        let v = age_quadratic_value(cfg.v_bar, age.clamp(0.0, 18.0)) + delta_dist.sample(&mut rng);
        if v >= 0.0 {
            values.push(v);
        }
    }
    let truth = vec![values];
    let observed = apply_noise(&truth, spec, cfg.v_bar, seed.wrapping_add(1));
    let rmse = empirical_rmse(&truth, &observed);
    let mean_error = truth[0]
        .iter()
        .zip(&observed[0])
        .map(|(t, o)| o - t)
        .sum::<f64>()
        / pairs as f64;
    NoiseCalibration {
        pairs,
        rmse,
        mean_error,
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct MonthMetrics {
    pub month: Time,
    pub placements: f64,
    pub cumulative_placements: f64,
    pub waiting_cost: f64,
    pub envy_share: f64,
    pub waste: f64,
    pub teen_placed_pct: f64,
    pub high_needs_placed_pct: f64,
    pub non_disruption_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub months: Vec<MonthMetrics>,
    /// Aggregates below average the first `report_months` months.
    pub report_months: u32,
    pub avg_placements_per_month: f64,
    pub avg_waiting_cost: f64,
    pub avg_envy_share: f64,
    pub avg_waste: f64,
    pub avg_teen_placed_pct: f64,
    pub avg_high_needs_placed_pct: f64,
    pub avg_non_disruption_rate: f64,
}

const TEEN_AGE: f64 = 13.0;

/// Per-month outcome series and first-year aggregates for one run.
///
/// Envy counts a home at its acceptance period when some child matched that
/// period would trade up to it by true utilities; the share divides cumulative
/// envious homes by cumulative accepted homes. Waste counts active homes left
/// without an offer. Placement rates for teens and high-needs children divide
/// cumulative placements by cumulative arrivals of the class.
pub fn compute_metrics(history: &History, env: &Environment, report_months: u32) -> MetricsReport {
    let is_teen = |c: ChildId| env.children[c.0 as usize].age >= TEEN_AGE;
    let is_high_needs = |c: ChildId| env.children[c.0 as usize].high_needs;

    let mut months = Vec::with_capacity(history.periods.len());
    let mut cumulative_placed = 0usize;
    let mut cumulative_envy = 0usize;
    let mut teen_arrived = 0usize;
    let mut teen_placed = 0usize;
    let mut hn_arrived = 0usize;
    let mut hn_placed = 0usize;
    let mut placed_value_sum = 0.0;

    for record in &history.periods {
        let t = record.t;
        teen_arrived += env.children_arriving(t).iter().filter(|&&c| is_teen(c)).count();
        hn_arrived += env
            .children_arriving(t)
            .iter()
            .filter(|&&c| is_high_needs(c))
            .count();

        let mut placed_this_month = 0usize;
        for (&h, &action) in &record.decisions {
            if action != Action::Accept {
                continue;
            }
            let c = record
                .matching
                .child_of(h)
                .expect("decisions exist only on offers");
            placed_this_month += 1;
            placed_value_sum += env.prefs.child_utility(c, h);
            if is_teen(c) {
                teen_placed += 1;
            }
            if is_high_needs(c) {
                hn_placed += 1;
            }
            let own_value = env
                .prefs
                .home_utility(crate::model::UtilityTable::True, h, c);
            let envies = record.matching.pairs().any(|(other_child, other_home)| {
                other_home != h
                    && env
                        .prefs
                        .home_utility(crate::model::UtilityTable::True, h, other_child)
                        > own_value
                    && env.prefs.child_utility(other_child, h)
                        > env.prefs.child_utility(other_child, other_home)
            });
            if envies {
                cumulative_envy += 1;
            }
        }
        cumulative_placed += placed_this_month;

        let accepted_homes = record.accepted_homes.len();
        let envy_share = if accepted_homes > 0 {
            cumulative_envy as f64 / accepted_homes as f64
        } else {
            0.0
        };
        let waste = record
            .active_homes
            .iter()
            .filter(|&&h| record.matching.child_of(h).is_none())
            .count();
        let waiting = record
            .active_children
            .iter()
            .filter(|c| !record.accepted_children.contains(c))
            .count();
        months.push(MonthMetrics {
            month: t,
            placements: placed_this_month as f64,
            cumulative_placements: cumulative_placed as f64,
            waiting_cost: waiting as f64 * env.prefs.wait_cost_child,
            envy_share,
            waste: waste as f64,
            teen_placed_pct: ratio(teen_placed, teen_arrived),
            high_needs_placed_pct: ratio(hn_placed, hn_arrived),
            non_disruption_rate: if cumulative_placed > 0 {
                placed_value_sum / cumulative_placed as f64
            } else {
                0.0
            },
        });
    }

    aggregate(months, report_months)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn aggregate(months: Vec<MonthMetrics>, report_months: u32) -> MetricsReport {
    let window = months
        .iter()
        .filter(|m| m.month <= report_months)
        .collect::<Vec<_>>();
    let over = |f: fn(&MonthMetrics) -> f64| -> f64 {
        if window.is_empty() {
            0.0
        } else {
            window.iter().map(|m| f(m)).sum::<f64>() / window.len() as f64
        }
    };
    MetricsReport {
        report_months,
        avg_placements_per_month: over(|m| m.placements),
        avg_waiting_cost: over(|m| m.waiting_cost),
        avg_envy_share: over(|m| m.envy_share),
        avg_waste: over(|m| m.waste),
        avg_teen_placed_pct: over(|m| m.teen_placed_pct),
        avg_high_needs_placed_pct: over(|m| m.high_needs_placed_pct),
        avg_non_disruption_rate: over(|m| m.non_disruption_rate),
        months,
    }
}

/// Element-wise mean of same-shape reports (replication averaging).
pub fn average_reports(reports: &[MetricsReport]) -> MetricsReport {
    assert!(!reports.is_empty(), "nothing to average");
    let n = reports.len() as f64;
    let len = reports[0].months.len();
    assert!(
        reports.iter().all(|r| r.months.len() == len),
        "reports must cover the same horizon"
    );
    let months: Vec<MonthMetrics> = (0..len)
        .map(|i| {
            let avg = |f: fn(&MonthMetrics) -> f64| -> f64 {
                reports.iter().map(|r| f(&r.months[i])).sum::<f64>() / n
            };
            MonthMetrics {
                month: reports[0].months[i].month,
                placements: avg(|m| m.placements),
                cumulative_placements: avg(|m| m.cumulative_placements),
                waiting_cost: avg(|m| m.waiting_cost),
                envy_share: avg(|m| m.envy_share),
                waste: avg(|m| m.waste),
                teen_placed_pct: avg(|m| m.teen_placed_pct),
                high_needs_placed_pct: avg(|m| m.high_needs_placed_pct),
                non_disruption_rate: avg(|m| m.non_disruption_rate),
            }
        })
        .collect();
    aggregate(months, reports[0].report_months)
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

fn default_report_months() -> u32 {
    12
}

fn default_mechanisms() -> Vec<MechanismKind> {
    vec![
        MechanismKind::SeqDaHome,
        MechanismKind::Hpda,
        MechanismKind::Crda,
        MechanismKind::Heda,
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub generator: GeneratorConfig,
    pub noise_grid: Vec<NoiseSpec>,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<MechanismKind>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_report_months")]
    pub report_months: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub noise: NoiseSpec,
    pub mechanism: MechanismKind,
    pub averaged: MetricsReport,
    pub per_seed: Vec<MetricsReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Run every mechanism in every noise cell on the same replicated markets.
///
/// For each (cell, seed), the environment is generated from the seed, one
/// noise draw builds the observed table, and every mechanism runs on that
/// identical market under best-response lookahead. Metrics average over seeds
/// within each cell. Cells and seeds run in parallel; output order is fixed by
/// the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, SimError> {
    use rayon::prelude::*;

    if cfg.seeds.is_empty() {
        return Err(SimError::InvalidConfig("at least one seed required".into()));
    }
    if cfg.noise_grid.is_empty() {
        return Err(SimError::InvalidConfig("empty noise grid".into()));
    }
    if cfg.mechanisms.is_empty() {
        return Err(SimError::InvalidConfig("no mechanisms selected".into()));
    }
    cfg.generator.validate()?;

    let units: Vec<(usize, usize)> = (0..cfg.noise_grid.len())
        .flat_map(|ni| (0..cfg.seeds.len()).map(move |si| (ni, si)))
        .collect();

    // reports[noise][mechanism][seed]
    let runs: Result<Vec<((usize, usize), Vec<MetricsReport>)>, SimError> = units
        .par_iter()
        .map(|&(ni, si)| {
            let noise = cfg.noise_grid[ni];
            let seed = cfg.seeds[si];
            let env = generate_environment(&cfg.generator.with_seed(seed))?;
            let noise_seed = splitmix64(seed ^ splitmix64(ni as u64 + 1));
            let observed = apply_noise(env.prefs.true_rows(), noise, cfg.generator.v_bar, noise_seed);
            let market = env.with_observed(observed)?;
            let mut reports = Vec::with_capacity(cfg.mechanisms.len());
            for &kind in &cfg.mechanisms {
                let spec = MechanismSpec::for_environment(kind, &market)?;
                let mut rule = HomeBehavior::BestResponseLookahead;
                let history = run_mechanism(&market, &spec, &mut rule);
                reports.push(compute_metrics(&history, &market, cfg.report_months));
            }
            Ok(((ni, si), reports))
        })
        .collect();
    let mut runs = runs?;
    runs.sort_by_key(|&((ni, si), _)| (ni, si));

    let mut cells = Vec::new();
    for (ni, &noise) in cfg.noise_grid.iter().enumerate() {
        for (mi, &mechanism) in cfg.mechanisms.iter().enumerate() {
            let per_seed: Vec<MetricsReport> = runs
                .iter()
                .filter(|((n, _), _)| *n == ni)
                .map(|(_, reports)| reports[mi].clone())
                .collect();
            let averaged = average_reports(&per_seed);
            cells.push(CellResult {
                noise,
                mechanism,
                averaged,
                per_seed,
            });
        }
    }
    Ok(ExperimentResult { cells })
}

#[derive(Error, Debug)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
