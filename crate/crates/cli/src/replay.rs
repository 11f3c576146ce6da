//! Fixture replays with per-period transcripts.
//!
//! Each bundled fixture carries a canonical scenario: the staggered two-by-two
//! market runs under best-response play and reports what a home gains by
//! delaying; the single-home market runs the decline-first script and reports
//! the gap to accepting immediately; the misreport market compares truthful
//! play against the best acceptability misreport.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, Result};

use placement_core::fixtures::Fixture;
use placement_core::mechanisms::{run_mechanism, MechanismKind, MechanismSpec};
use placement_core::model::{Action, ActionProfile, Environment, History, HomeId, Time};
use placement_core::properties::{check_patience_free, check_strategy_proof};
use placement_core::strategic::HomeBehavior;

#[derive(Clone, Debug)]
pub struct ReplayOutcome {
    pub fixture: Fixture,
    pub mechanism: MechanismKind,
    pub history: History,
    pub payoffs: BTreeMap<HomeId, f64>,
    /// Best gain any home could realize by delaying past one of its offers
    /// (the staggered-market scenario).
    pub patience_gain: Option<f64>,
    /// Payoff the scripted home would have had from accepting its first offer
    /// (the decline-first scenario).
    pub accept_first_payoff: Option<f64>,
    /// Best gain available from an acceptability misreport (the misreport
    /// scenario).
    pub misreport_gain: Option<f64>,
    pub transcript: String,
}

pub fn replay_fixture(fixture: Fixture, mechanism: MechanismKind) -> Result<ReplayOutcome> {
    let env = fixture.environment();
    let spec = MechanismSpec::for_environment(mechanism, &env)
        .map_err(|e| anyhow!("cannot configure {}: {e}", mechanism.name()))?;
    match fixture {
        Fixture::E1 => best_response_scenario(fixture, &env, &spec),
        Fixture::E2 => decline_first_scenario(fixture, &env, &spec),
        Fixture::E3 => misreport_scenario(fixture, &env, &spec),
    }
}

fn payoffs(env: &Environment, history: &History) -> BTreeMap<HomeId, f64> {
    env.homes
        .iter()
        .map(|h| {
            let p = history
                .realized_home_payoff(env, h.id)
                .expect("home belongs to the environment");
            (h.id, p)
        })
        .collect()
}

fn render_period(out: &mut String, env: &Environment, history: &History, t: Time) {
    let record = history.record(t).expect("period inside the horizon");
    if record.matching.is_empty() {
        let idle = record.active_homes.len();
        writeln!(out, "t={t} offers: (none) [{idle} active home(s) idle]").unwrap();
        return;
    }
    let mut line = format!("t={t} offers:");
    for (c, h) in record.matching.pairs() {
        let decision = match record.decisions[&h] {
            Action::Accept => "accepts",
            Action::Decline => "declines",
        };
        write!(line, " {h} <- {c} ({h} {decision})").unwrap();
    }
    writeln!(out, "{line}").unwrap();
    let _ = env;
}

fn render_run(out: &mut String, env: &Environment, history: &History) {
    for t in 1..=env.horizon {
        render_period(out, env, history, t);
    }
    for (c, (t, h)) in env
        .children
        .iter()
        .filter_map(|c| history.child_acceptance(c.id).map(|(t, h)| (c.id, (t, h))))
        .map(|(c, th)| (c, th))
    {
        writeln!(out, "placed: {c} -> {h} at t={t}").unwrap();
    }
    for h in &env.homes {
        let p = history.realized_home_payoff(env, h.id).unwrap();
        writeln!(out, "payoff {}: {p}", h.id).unwrap();
    }
}

/// Every home plays best-response lookahead; afterwards the patience checker
/// reports the largest gain any home could still realize by delaying.
fn best_response_scenario(
    fixture: Fixture,
    env: &Environment,
    spec: &MechanismSpec,
) -> Result<ReplayOutcome> {
    let mut rule = HomeBehavior::BestResponseLookahead;
    let history = run_mechanism(env, spec, &mut rule);
    let mut transcript = header(fixture, spec.kind, env);
    writeln!(transcript, "== run: best-response homes ==").unwrap();
    render_run(&mut transcript, env, &history);

    let realized = history.realized_action_profile();
    let violations = check_patience_free(env, spec, &realized);
    let gain = violations.iter().map(|v| v.magnitude).fold(0.0, f64::max);
    writeln!(transcript, "== analysis ==").unwrap();
    if violations.is_empty() {
        writeln!(transcript, "patience: no delay improves on any offer").unwrap();
    } else {
        writeln!(
            transcript,
            "patience: delaying an offer gains up to {gain} (mechanism rewards waiting)"
        )
        .unwrap();
    }
    Ok(ReplayOutcome {
        fixture,
        mechanism: spec.kind,
        payoffs: payoffs(env, &history),
        history,
        patience_gain: Some(gain),
        accept_first_payoff: None,
        misreport_gain: None,
        transcript,
    })
}

/// The (single) first-arriving home declines its first offer and complies
/// afterwards; the transcript compares its payoff against accepting first.
fn decline_first_scenario(
    fixture: Fixture,
    env: &Environment,
    spec: &MechanismSpec,
) -> Result<ReplayOutcome> {
    let subject = env
        .homes
        .iter()
        .min_by_key(|h| (h.arrival, h.id))
        .ok_or_else(|| anyhow!("fixture has no homes"))?
        .id;

    // find the subject's first offer under compliance, then script a decline
    let mut accept_all = HomeBehavior::AlwaysAccept;
    let compliant = run_mechanism(env, spec, &mut accept_all);
    let first_offer = compliant
        .periods
        .iter()
        .find_map(|r| r.matching.child_of(subject).map(|_| r.t));
    let mut profile = ActionProfile::new();
    if let Some(t) = first_offer {
        profile.set(subject, t, Action::Decline);
    }
    let mut scripted = HomeBehavior::Scripted(profile);
    let history = run_mechanism(env, spec, &mut scripted);

    let accept_first_payoff = compliant.realized_home_payoff(env, subject)?;
    let mut transcript = header(fixture, spec.kind, env);
    writeln!(
        transcript,
        "== run: {subject} declines its first offer, then complies =="
    )
    .unwrap();
    render_run(&mut transcript, env, &history);
    writeln!(transcript, "== analysis ==").unwrap();
    let delayed = history.realized_home_payoff(env, subject)?;
    writeln!(
        transcript,
        "accept-first payoff {subject}: {accept_first_payoff}"
    )
    .unwrap();
    let diff = delayed - accept_first_payoff;
    if diff == 0.0 {
        writeln!(transcript, "delaying leaves {subject} indifferent").unwrap();
    } else if diff > 0.0 {
        writeln!(transcript, "delaying gains {diff} (mechanism rewards waiting)").unwrap();
    } else {
        writeln!(transcript, "delaying costs {}", -diff).unwrap();
    }
    Ok(ReplayOutcome {
        fixture,
        mechanism: spec.kind,
        payoffs: payoffs(env, &history),
        history,
        patience_gain: None,
        accept_first_payoff: Some(accept_first_payoff),
        misreport_gain: None,
        transcript,
    })
}

/// Truthful compliant play versus the best acceptability misreport for the
/// first-arriving home.
fn misreport_scenario(
    fixture: Fixture,
    env: &Environment,
    spec: &MechanismSpec,
) -> Result<ReplayOutcome> {
    let subject = env
        .homes
        .iter()
        .min_by_key(|h| (h.arrival, h.id))
        .ok_or_else(|| anyhow!("fixture has no homes"))?
        .id;
    let mut accept_all = HomeBehavior::AlwaysAccept;
    let history = run_mechanism(env, spec, &mut accept_all);

    let mut transcript = header(fixture, spec.kind, env);
    writeln!(transcript, "== run: truthful reports, compliant homes ==").unwrap();
    render_run(&mut transcript, env, &history);

    let violations = check_strategy_proof(env, spec, subject)
        .map_err(|e| anyhow!("misreport sweep failed: {e}"))?;
    let gain = violations.iter().map(|v| v.magnitude).fold(0.0, f64::max);
    writeln!(transcript, "== analysis ==").unwrap();
    if violations.is_empty() {
        writeln!(
            transcript,
            "reports: no acceptability misreport or delay improves on truth-telling"
        )
        .unwrap();
    } else {
        let best = violations
            .iter()
            .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
            .expect("nonempty");
        let hidden: Vec<String> = best.children.iter().map(|c| c.to_string()).collect();
        writeln!(
            transcript,
            "reports: declaring [{}] unacceptable gains {gain} for {subject}",
            hidden.join(", ")
        )
        .unwrap();
    }
    Ok(ReplayOutcome {
        fixture,
        mechanism: spec.kind,
        payoffs: payoffs(env, &history),
        history,
        patience_gain: None,
        accept_first_payoff: None,
        misreport_gain: Some(gain),
        transcript,
    })
}

fn header(fixture: Fixture, kind: MechanismKind, env: &Environment) -> String {
    format!(
        "fixture {} (horizon {}, children {}, homes {})\nmechanism {}\n",
        fixture.name(),
        env.horizon,
        env.children.len(),
        env.homes.len(),
        kind.name()
    )
}
