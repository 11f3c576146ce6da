//! Acceptability reports and home decision rules.
//!
//! Homes declare which children they would consider; the matchmaker observes a
//! home's true utility only for declared-acceptable children. During
//! simulation a home decides on each offer by best-response lookahead with
//! deterministic foresight: it compares the offer against the best future
//! placement it could collect by waiting, assuming every other home accepts
//! its placements.

use crate::mechanisms::{mechanism_step, DecisionRule, MechanismSpec, StepContext};
use crate::model::{
    advance, Action, ActionProfile, ChildId, Environment, History, HomeId, MarketState,
    PeriodRecord, Time, UtilityTable, UNACCEPTABLE,
};

/// Per-pair acceptability declarations, defined on every (home, child) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    accepts: Vec<Vec<bool>>,
}

impl Report {
    pub fn new(accepts: Vec<Vec<bool>>) -> Self {
        Self { accepts }
    }

    pub fn accepts(&self, h: HomeId, c: ChildId) -> bool {
        self.accepts[h.0 as usize][c.0 as usize]
    }

    /// Flip one home's row to the given per-child declarations.
    pub fn with_home_row(&self, h: HomeId, row: Vec<bool>) -> Report {
        let mut out = self.clone();
        out.accepts[h.0 as usize] = row;
        out
    }
}

/// The report that declares exactly the nonnegative-true-utility children
/// acceptable.
pub fn truthful_report(true_rows: &[Vec<f64>]) -> Report {
    Report::new(
        true_rows
            .iter()
            .map(|row| row.iter().map(|&v| v >= 0.0).collect())
            .collect(),
    )
}

/// What the matchmaker sees: the true utility where the home declared the
/// child acceptable, the unacceptable sentinel otherwise.
pub fn observed_from_report(true_rows: &[Vec<f64>], report: &Report) -> Vec<Vec<f64>> {
    true_rows
        .iter()
        .enumerate()
        .map(|(hi, row)| {
            row.iter()
                .enumerate()
                .map(|(ci, &v)| {
                    if report.accepts(HomeId(hi as u32), ChildId(ci as u32)) {
                        v
                    } else {
                        UNACCEPTABLE
                    }
                })
                .collect()
        })
        .collect()
}

/// How homes respond to offers during a run.
#[derive(Clone, Debug)]
pub enum HomeBehavior {
    AlwaysAccept,
    /// Follow a scripted profile; periods without an entry read as accept.
    Scripted(ActionProfile),
    /// Accept exactly when no later placement (reachable by declining while
    /// everyone else accepts) beats the current offer in true discounted
    /// utility. Ties accept.
    BestResponseLookahead,
}

impl DecisionRule for HomeBehavior {
    fn decide(
        &mut self,
        env: &Environment,
        spec: &MechanismSpec,
        t: Time,
        home: HomeId,
        offer: ChildId,
        history: &History,
    ) -> Action {
        match self {
            HomeBehavior::AlwaysAccept => Action::Accept,
            HomeBehavior::Scripted(profile) => profile.action_or_accept(home, t),
            HomeBehavior::BestResponseLookahead => {
                best_response_decision(env, spec, home, t, offer, history)
            }
        }
    }
}

/// The offers `h` would receive after `from_t` if it declined everything while
/// every other home accepted. One forward pass serves every candidate
/// acceptance time: the offer a home holds in a period does not depend on
/// whether it plans to accept it.
fn forward_offers_declining(
    env: &Environment,
    spec: &MechanismSpec,
    h: HomeId,
    from_t: Time,
    prefix: &History,
) -> Vec<(Time, ChildId)> {
    let mut state = resume_state(env, prefix);
    debug_assert_eq!(state.t, from_t);
    let mut history = prefix.clone();
    let mut offers = Vec::new();
    for t in from_t..=env.horizon {
        let matching = {
            let ctx = StepContext {
                env,
                t,
                active_children: &state.active_children,
                active_homes: &state.active_homes,
                history: &history,
            };
            mechanism_step(spec, &ctx)
        };
        if t > from_t {
            if let Some(c) = matching.child_of(h) {
                offers.push((t, c));
            }
        }
        let decisions = matching
            .offered_homes()
            .map(|offered| {
                let a = if offered == h {
                    Action::Decline
                } else {
                    Action::Accept
                };
                (offered, a)
            })
            .collect();
        let next = advance(env, &state, &matching, &decisions)
            .expect("forward replay offers are admissible");
        history.periods.push(PeriodRecord {
            t,
            active_children: state.active_children.clone(),
            active_homes: state.active_homes.clone(),
            matching,
            decisions,
            accepted_children: next.accepted_children.clone(),
            accepted_homes: next.accepted_homes.clone(),
        });
        state = next;
    }
    offers
}

/// Market state at the period following the last recorded one.
fn resume_state(env: &Environment, history: &History) -> MarketState {
    match history.periods.last() {
        None => MarketState::initial(env),
        Some(last) => {
            let next = last.t + 1;
            let mut active_children = last.active_children.clone();
            let mut active_homes = last.active_homes.clone();
            if next <= env.horizon {
                active_children.extend(env.children_arriving(next).iter().copied());
                active_homes.extend(env.homes_arriving(next).iter().copied());
            }
            active_children.retain(|c| !last.accepted_children.contains(c));
            active_homes.retain(|h| !last.accepted_homes.contains(h));
            MarketState {
                t: next,
                active_children,
                active_homes,
                accepted_children: last.accepted_children.clone(),
                accepted_homes: last.accepted_homes.clone(),
            }
        }
    }
}

/// Decide an offer by lookahead. Uses the home's true utilities: the decision
/// belongs to the home, not the matchmaker. A home never accepts a child it
/// truly finds unacceptable, and never matching (waiting through the horizon)
/// is always among the candidates.
pub fn best_response_decision(
    env: &Environment,
    spec: &MechanismSpec,
    h: HomeId,
    t: Time,
    offer: ChildId,
    history: &History,
) -> Action {
    let arrival = env.homes[h.0 as usize].arrival;
    let wait = env.prefs.wait_cost_home;
    let true_value = env.prefs.home_utility(UtilityTable::True, h, offer);
    if true_value < 0.0 {
        return Action::Decline;
    }
    let offer_payoff = true_value - (t - arrival) as f64 * wait;

    let never_payoff = -((env.horizon.saturating_sub(arrival)) as f64) * wait;
    let mut best_future = never_payoff;
    for (when, child) in forward_offers_declining(env, spec, h, t, history) {
        let v = env.prefs.home_utility(UtilityTable::True, h, child);
        if v < 0.0 {
            continue;
        }
        let payoff = v - (when - arrival) as f64 * wait;
        if payoff > best_future {
            best_future = payoff;
        }
    }

    if offer_payoff >= best_future {
        Action::Accept
    } else {
        Action::Decline
    }
}
