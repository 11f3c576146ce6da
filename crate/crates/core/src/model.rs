//! Market primitives and evolution.
//!
//! The model is a deterministic world: a finite horizon of monthly periods,
//! arrival streams for children and homes, and cardinal utility tables with
//! additive waiting costs. All operations are pure functions of their inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Month index, 1-based. Period `1` is the first month of the horizon.
pub type Time = u32;

/// Sentinel utility marking a counterpart as unacceptable. Any negative
/// utility is treated as unacceptable; `-1` is the canonical encoding.
pub const UNACCEPTABLE: f64 = -1.0;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChildId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HomeId(pub u32);

impl std::fmt::Display for ChildId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl std::fmt::Display for HomeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Child {
    pub id: ChildId,
    pub arrival: Time,
    pub age: f64,
    pub high_needs: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Home {
    pub id: HomeId,
    pub arrival: Time,
    pub accepts_high_needs: bool,
}

/// Which home-side utility table a computation reads.
///
/// `True` is the home's own valuation; `Observed` is the matchmaker's estimate
/// (equal to the true table when there is no estimator error and the home
/// reports truthfully). Mechanisms only ever see the observed table.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UtilityTable {
    True,
    Observed,
}

/// Dense utility tables covering every (child, home) pair, plus the common
/// per-month waiting costs.
#[derive(Clone, Debug)]
pub struct PreferenceTable {
    /// `[child][home]` — the matchmaker's utility for placing the child,
    /// known exactly.
    child_utility: Vec<Vec<f64>>,
    /// `[home][child]` — the home's true valuation.
    home_true_utility: Vec<Vec<f64>>,
    /// `[home][child]` — the matchmaker's (possibly noisy, report-filtered)
    /// estimate of the home's valuation.
    home_observed_utility: Vec<Vec<f64>>,
    pub wait_cost_child: f64,
    pub wait_cost_home: f64,
}

impl PreferenceTable {
    pub fn new(
        child_utility: Vec<Vec<f64>>,
        home_true_utility: Vec<Vec<f64>>,
        home_observed_utility: Vec<Vec<f64>>,
        wait_cost_child: f64,
        wait_cost_home: f64,
    ) -> Result<Self, ModelError> {
        if wait_cost_child <= 0.0 || wait_cost_home <= 0.0 {
            return Err(ModelError::InvalidEnvironment(
                "waiting costs must be positive".into(),
            ));
        }
        let n_children = child_utility.len();
        let n_homes = home_true_utility.len();
        let rectangular = child_utility.iter().all(|row| row.len() == n_homes)
            && home_true_utility.iter().all(|row| row.len() == n_children)
            && home_observed_utility.len() == n_homes
            && home_observed_utility.iter().all(|row| row.len() == n_children);
        if !rectangular {
            return Err(ModelError::InvalidEnvironment(
                "utility tables must cover every (child, home) pair".into(),
            ));
        }
        Ok(Self {
            child_utility,
            home_true_utility,
            home_observed_utility,
            wait_cost_child,
            wait_cost_home,
        })
    }

    pub fn n_children(&self) -> usize {
        self.child_utility.len()
    }

    pub fn n_homes(&self) -> usize {
        self.home_true_utility.len()
    }

    /// Matchmaker's utility for placing `c` with `h` (static, undiscounted).
    #[inline]
    pub fn child_utility(&self, c: ChildId, h: HomeId) -> f64 {
        self.child_utility[c.0 as usize][h.0 as usize]
    }

    /// Home `h`'s utility for child `c` from the selected table (static).
    #[inline]
    pub fn home_utility(&self, table: UtilityTable, h: HomeId, c: ChildId) -> f64 {
        match table {
            UtilityTable::True => self.home_true_utility[h.0 as usize][c.0 as usize],
            UtilityTable::Observed => self.home_observed_utility[h.0 as usize][c.0 as usize],
        }
    }

    pub fn observed_rows(&self) -> &[Vec<f64>] {
        &self.home_observed_utility
    }

    pub fn true_rows(&self) -> &[Vec<f64>] {
        &self.home_true_utility
    }

    /// Replace the observed home table (noise injection, report filtering).
    pub fn set_observed(&mut self, rows: Vec<Vec<f64>>) -> Result<(), ModelError> {
        if rows.len() != self.n_homes() || rows.iter().any(|r| r.len() != self.n_children()) {
            return Err(ModelError::InvalidEnvironment(
                "observed table shape mismatch".into(),
            ));
        }
        self.home_observed_utility = rows;
        Ok(())
    }
}

/// The full deterministic world: horizon, arrival streams, and preferences.
#[derive(Clone, Debug)]
pub struct Environment {
    pub horizon: Time,
    pub children: Vec<Child>,
    pub homes: Vec<Home>,
    pub prefs: PreferenceTable,
    child_arrivals: Vec<Vec<ChildId>>,
    home_arrivals: Vec<Vec<HomeId>>,
}

impl Environment {
    pub fn new(
        horizon: Time,
        children: Vec<Child>,
        homes: Vec<Home>,
        prefs: PreferenceTable,
    ) -> Result<Self, ModelError> {
        if horizon < 1 {
            return Err(ModelError::InvalidEnvironment("horizon must be >= 1".into()));
        }
        if prefs.n_children() != children.len() || prefs.n_homes() != homes.len() {
            return Err(ModelError::InvalidEnvironment(
                "preference tables must cover every agent".into(),
            ));
        }
        for (i, c) in children.iter().enumerate() {
            if c.id.0 as usize != i {
                return Err(ModelError::InvalidEnvironment(format!(
                    "child ids must be dense and ordered; found {} at index {i}",
                    c.id
                )));
            }
            if c.arrival < 1 || c.arrival > horizon {
                return Err(ModelError::InvalidEnvironment(format!(
                    "{} arrives at {} outside [1, {horizon}]",
                    c.id, c.arrival
                )));
            }
            if !(0.0..=18.0).contains(&c.age) {
                return Err(ModelError::InvalidEnvironment(format!(
                    "{} has age {} outside [0, 18]",
                    c.id, c.age
                )));
            }
        }
        for (i, h) in homes.iter().enumerate() {
            if h.id.0 as usize != i {
                return Err(ModelError::InvalidEnvironment(format!(
                    "home ids must be dense and ordered; found {} at index {i}",
                    h.id
                )));
            }
            if h.arrival < 1 || h.arrival > horizon {
                return Err(ModelError::InvalidEnvironment(format!(
                    "{} arrives at {} outside [1, {horizon}]",
                    h.id, h.arrival
                )));
            }
        }
        let mut child_arrivals = vec![Vec::new(); horizon as usize];
        for c in &children {
            child_arrivals[(c.arrival - 1) as usize].push(c.id);
        }
        let mut home_arrivals = vec![Vec::new(); horizon as usize];
        for h in &homes {
            home_arrivals[(h.arrival - 1) as usize].push(h.id);
        }
        Ok(Self {
            horizon,
            children,
            homes,
            prefs,
            child_arrivals,
            home_arrivals,
        })
    }

    pub fn child(&self, id: ChildId) -> Result<&Child, ModelError> {
        self.children
            .get(id.0 as usize)
            .ok_or(ModelError::UnknownChild(id))
    }

    pub fn home(&self, id: HomeId) -> Result<&Home, ModelError> {
        self.homes
            .get(id.0 as usize)
            .ok_or(ModelError::UnknownHome(id))
    }

    pub fn children_arriving(&self, t: Time) -> &[ChildId] {
        &self.child_arrivals[(t - 1) as usize]
    }

    pub fn homes_arriving(&self, t: Time) -> &[HomeId] {
        &self.home_arrivals[(t - 1) as usize]
    }

    /// A copy of the environment with a different observed home table.
    pub fn with_observed(&self, rows: Vec<Vec<f64>>) -> Result<Environment, ModelError> {
        let mut env = self.clone();
        env.prefs.set_observed(rows)?;
        Ok(env)
    }
}

/// Home `h`'s utility for child `c` evaluated at time `t`, discounted by the
/// waiting `h` has accrued since its own arrival.
pub fn discounted_home_utility(
    env: &Environment,
    h: HomeId,
    c: ChildId,
    t: Time,
    table: UtilityTable,
) -> Result<f64, ModelError> {
    let home = env.home(h)?;
    env.child(c)?;
    if t < home.arrival {
        return Err(ModelError::BeforeArrival {
            t,
            arrival: home.arrival,
        });
    }
    let waited = (t - home.arrival) as f64;
    Ok(env.prefs.home_utility(table, h, c) - waited * env.prefs.wait_cost_home)
}

/// Matchmaker-side utility for placing `c` with `h` at time `t`, discounted by
/// the child's accrued waiting.
pub fn discounted_child_utility(
    env: &Environment,
    c: ChildId,
    h: HomeId,
    t: Time,
) -> Result<f64, ModelError> {
    let child = env.child(c)?;
    env.home(h)?;
    if t < child.arrival {
        return Err(ModelError::BeforeArrival {
            t,
            arrival: child.arrival,
        });
    }
    let waited = (t - child.arrival) as f64;
    Ok(env.prefs.child_utility(c, h) - waited * env.prefs.wait_cost_child)
}

/// A one-period partial one-to-one assignment: the period's placement offers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Matching {
    by_child: BTreeMap<ChildId, HomeId>,
    by_home: BTreeMap<HomeId, ChildId>,
}

impl Matching {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, c: ChildId, h: HomeId) -> Result<(), ModelError> {
        if self.by_child.contains_key(&c) || self.by_home.contains_key(&h) {
            return Err(ModelError::InadmissibleMatching(format!(
                "{c} or {h} already has an incident edge"
            )));
        }
        self.by_child.insert(c, h);
        self.by_home.insert(h, c);
        Ok(())
    }

    pub fn home_of(&self, c: ChildId) -> Option<HomeId> {
        self.by_child.get(&c).copied()
    }

    pub fn child_of(&self, h: HomeId) -> Option<ChildId> {
        self.by_home.get(&h).copied()
    }

    /// Edges in child-id order.
    pub fn pairs(&self) -> impl Iterator<Item = (ChildId, HomeId)> + '_ {
        self.by_child.iter().map(|(&c, &h)| (c, h))
    }

    pub fn offered_homes(&self) -> impl Iterator<Item = HomeId> + '_ {
        self.by_home.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_child.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_child.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Accept,
    Decline,
}

/// Per-home accept/decline decisions indexed by period.
///
/// A realized profile carries entries exactly where a home received an offer.
/// Profiles also serve as scripted plans during replay; a missing entry is
/// read as `Accept`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActionProfile {
    actions: BTreeMap<(HomeId, Time), Action>,
}

impl ActionProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, h: HomeId, t: Time, a: Action) {
        self.actions.insert((h, t), a);
    }

    pub fn get(&self, h: HomeId, t: Time) -> Option<Action> {
        self.actions.get(&(h, t)).copied()
    }

    /// Scripted-plan read: missing entries default to `Accept`.
    pub fn action_or_accept(&self, h: HomeId, t: Time) -> Action {
        self.get(h, t).unwrap_or(Action::Accept)
    }

    pub fn entries(&self) -> impl Iterator<Item = (HomeId, Time, Action)> + '_ {
        self.actions.iter().map(|(&(h, t), &a)| (h, t, a))
    }
}

/// The deviation plan where `h` declines every offer before `accept_at` and
/// accepts at `accept_at`; all other entries are unchanged.
pub fn counterfactual_profile(
    base: &ActionProfile,
    h: HomeId,
    accept_at: Time,
    horizon: Time,
) -> ActionProfile {
    let mut out = base.clone();
    for t in 1..accept_at.min(horizon + 1) {
        out.set(h, t, Action::Decline);
    }
    if accept_at <= horizon {
        out.set(h, accept_at, Action::Accept);
    }
    out
}

/// Active and exited agents at the start of a period.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarketState {
    pub t: Time,
    pub active_children: BTreeSet<ChildId>,
    pub active_homes: BTreeSet<HomeId>,
    pub accepted_children: BTreeSet<ChildId>,
    pub accepted_homes: BTreeSet<HomeId>,
}

impl MarketState {
    pub fn initial(env: &Environment) -> Self {
        MarketState {
            t: 1,
            active_children: env.children_arriving(1).iter().copied().collect(),
            active_homes: env.homes_arriving(1).iter().copied().collect(),
            accepted_children: BTreeSet::new(),
            accepted_homes: BTreeSet::new(),
        }
    }
}

/// Apply a period's offers and decisions: accepted pairs exit, everyone else
/// (plus the next period's arrivals) stays active.
pub fn advance(
    env: &Environment,
    state: &MarketState,
    matching: &Matching,
    decisions: &BTreeMap<HomeId, Action>,
) -> Result<MarketState, ModelError> {
    for (c, h) in matching.pairs() {
        if !state.active_children.contains(&c) || !state.active_homes.contains(&h) {
            return Err(ModelError::InadmissibleMatching(format!(
                "offer ({c}, {h}) touches an inactive agent at t={}",
                state.t
            )));
        }
    }
    for h in decisions.keys() {
        if matching.child_of(*h).is_none() {
            return Err(ModelError::DecisionWithoutOffer(*h));
        }
    }
    for h in matching.offered_homes() {
        if !decisions.contains_key(&h) {
            return Err(ModelError::MissingDecision(h));
        }
    }

    let mut accepted_children = state.accepted_children.clone();
    let mut accepted_homes = state.accepted_homes.clone();
    for (c, h) in matching.pairs() {
        if decisions[&h] == Action::Accept {
            accepted_children.insert(c);
            accepted_homes.insert(h);
        }
    }

    let next = state.t + 1;
    let mut active_children = state.active_children.clone();
    let mut active_homes = state.active_homes.clone();
    if next <= env.horizon {
        active_children.extend(env.children_arriving(next).iter().copied());
        active_homes.extend(env.homes_arriving(next).iter().copied());
    }
    active_children.retain(|c| !accepted_children.contains(c));
    active_homes.retain(|h| !accepted_homes.contains(h));

    Ok(MarketState {
        t: next,
        active_children,
        active_homes,
        accepted_children,
        accepted_homes,
    })
}

/// Everything that happened in one period.
#[derive(Clone, Debug)]
pub struct PeriodRecord {
    pub t: Time,
    pub active_children: BTreeSet<ChildId>,
    pub active_homes: BTreeSet<HomeId>,
    pub matching: Matching,
    pub decisions: BTreeMap<HomeId, Action>,
    /// Cumulative accepted sets after this period's decisions.
    pub accepted_children: BTreeSet<ChildId>,
    pub accepted_homes: BTreeSet<HomeId>,
}

/// Complete record of a mechanism run.
#[derive(Clone, Debug, Default)]
pub struct History {
    pub periods: Vec<PeriodRecord>,
}

impl History {
    pub fn record(&self, t: Time) -> Option<&PeriodRecord> {
        self.periods.get((t - 1) as usize)
    }

    /// Most recent period strictly before `before` in which `h` held an offer,
    /// together with the offered child.
    pub fn most_recent_offer(&self, h: HomeId, before: Time) -> Option<(Time, ChildId)> {
        self.periods
            .iter()
            .rev()
            .skip_while(|r| r.t >= before)
            .find_map(|r| r.matching.child_of(h).map(|c| (r.t, c)))
    }

    /// The period and child of `h`'s accepted placement, if any.
    pub fn acceptance(&self, h: HomeId) -> Option<(Time, ChildId)> {
        self.periods.iter().find_map(|r| {
            r.matching
                .child_of(h)
                .filter(|_| r.decisions.get(&h) == Some(&Action::Accept))
                .map(|c| (r.t, c))
        })
    }

    /// The period and home of `c`'s accepted placement, if any.
    pub fn child_acceptance(&self, c: ChildId) -> Option<(Time, HomeId)> {
        self.periods.iter().find_map(|r| {
            r.matching
                .home_of(c)
                .filter(|h| r.decisions.get(h) == Some(&Action::Accept))
                .map(|h| (r.t, h))
        })
    }

    /// The decisions that actually occurred, as a profile.
    pub fn realized_action_profile(&self) -> ActionProfile {
        let mut profile = ActionProfile::new();
        for r in &self.periods {
            for (&h, &a) in &r.decisions {
                profile.set(h, r.t, a);
            }
        }
        profile
    }

    /// A home's realized utility: true match utility minus waiting accrued at
    /// acceptance time. A never-matched home pays waiting through the horizon
    /// on a zero-utility self match.
    pub fn realized_home_payoff(&self, env: &Environment, h: HomeId) -> Result<f64, ModelError> {
        let home = env.home(h)?;
        match self.acceptance(h) {
            Some((t, c)) => {
                let waited = (t - home.arrival) as f64;
                Ok(env.prefs.home_utility(UtilityTable::True, h, c)
                    - waited * env.prefs.wait_cost_home)
            }
            None => {
                let waited = (env.horizon.saturating_sub(home.arrival)) as f64;
                Ok(-waited * env.prefs.wait_cost_home)
            }
        }
    }
}

/// Aggregate waiting cost paid on behalf of children: each active child that
/// has not exited by the end of a period costs one month of waiting.
pub fn total_child_waiting_cost(history: &History, env: &Environment) -> f64 {
    let mut total = 0.0;
    for r in &history.periods {
        let waiting = r
            .active_children
            .iter()
            .filter(|c| !r.accepted_children.contains(c))
            .count();
        total += waiting as f64 * env.prefs.wait_cost_child;
    }
    total
}

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("unknown child {0}")]
    UnknownChild(ChildId),
    #[error("unknown home {0}")]
    UnknownHome(HomeId),
    #[error("time {t} precedes arrival {arrival}")]
    BeforeArrival { t: Time, arrival: Time },
    #[error("inadmissible matching: {0}")]
    InadmissibleMatching(String),
    #[error("decision supplied for {0} which holds no offer")]
    DecisionWithoutOffer(HomeId),
    #[error("offered home {0} has no decision")]
    MissingDecision(HomeId),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
}

// ---------------------------------------------------------------------------
// Serialized environment documents
// ---------------------------------------------------------------------------

/// JSON document form of an [`Environment`]. Fixture files use this schema:
/// agent ids must be the dense indices `0..n` in order, and the utility lists
/// must cover every pair exactly once. `home_observed_utility` may be omitted,
/// in which case the observed table equals the true table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvironmentDoc {
    pub horizon: Time,
    pub wait_cost_child: f64,
    pub wait_cost_home: f64,
    pub children: Vec<Child>,
    pub homes: Vec<Home>,
    pub child_utility: Vec<ChildUtilityEntry>,
    pub home_true_utility: Vec<HomeUtilityEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_observed_utility: Option<Vec<HomeUtilityEntry>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChildUtilityEntry {
    pub child: ChildId,
    pub home: HomeId,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomeUtilityEntry {
    pub home: HomeId,
    pub child: ChildId,
    pub value: f64,
}

impl EnvironmentDoc {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text)
            .map_err(|e| ModelError::InvalidEnvironment(format!("bad document: {e}")))
    }

    pub fn into_environment(self) -> Result<Environment, ModelError> {
        let n_children = self.children.len();
        let n_homes = self.homes.len();
        let mut child_utility = vec![vec![f64::NAN; n_homes]; n_children];
        for e in &self.child_utility {
            let (ci, hi) = (e.child.0 as usize, e.home.0 as usize);
            if ci >= n_children || hi >= n_homes {
                return Err(ModelError::InvalidEnvironment(format!(
                    "child_utility entry ({}, {}) out of range",
                    e.child, e.home
                )));
            }
            child_utility[ci][hi] = e.value;
        }
        let mut true_util = vec![vec![f64::NAN; n_children]; n_homes];
        for e in &self.home_true_utility {
            let (hi, ci) = (e.home.0 as usize, e.child.0 as usize);
            if ci >= n_children || hi >= n_homes {
                return Err(ModelError::InvalidEnvironment(format!(
                    "home_true_utility entry ({}, {}) out of range",
                    e.home, e.child
                )));
            }
            true_util[hi][ci] = e.value;
        }
        let observed = match &self.home_observed_utility {
            None => true_util.clone(),
            Some(entries) => {
                let mut obs = vec![vec![f64::NAN; n_children]; n_homes];
                for e in entries {
                    let (hi, ci) = (e.home.0 as usize, e.child.0 as usize);
                    if ci >= n_children || hi >= n_homes {
                        return Err(ModelError::InvalidEnvironment(format!(
                            "home_observed_utility entry ({}, {}) out of range",
                            e.home, e.child
                        )));
                    }
                    obs[hi][ci] = e.value;
                }
                obs
            }
        };
        let complete = child_utility.iter().flatten().all(|v| v.is_finite())
            && true_util.iter().flatten().all(|v| v.is_finite())
            && observed.iter().flatten().all(|v| v.is_finite());
        if !complete {
            return Err(ModelError::InvalidEnvironment(
                "utility lists must cover every (child, home) pair".into(),
            ));
        }
        let prefs = PreferenceTable::new(
            child_utility,
            true_util,
            observed,
            self.wait_cost_child,
            self.wait_cost_home,
        )?;
        Environment::new(self.horizon, self.children, self.homes, prefs)
    }
}
