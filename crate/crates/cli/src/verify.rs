//! The `verify` subcommand: named fixture checks (`theorems`) and the
//! randomized property sweep (`sweep`). Both produce a serializable report
//! and an overall pass flag for the process exit code.

use serde::Serialize;

use placement_core::fixtures::Fixture;
use placement_core::mechanisms::MechanismKind;
use placement_core::properties::{
    run_strategy_sweep, run_theorem_sweep, NamedCheck, StrategySweepOutcome, SweepBounds,
    TheoremSweepOutcome,
};

use crate::replay::replay_fixture;

#[derive(Serialize)]
pub struct TheoremSuiteReport {
    pub checks: Vec<NamedCheck>,
    pub passed: bool,
}

/// Fixture-level checks: the library's hand-verified properties plus the three
/// canonical replays with their exact payoffs and gains.
pub fn theorem_suite() -> anyhow::Result<TheoremSuiteReport> {
    let mut checks = placement_core::properties::theorem_fixture_checks();

    let e1 = replay_fixture(Fixture::E1, MechanismKind::SeqDaHome)?;
    checks.push(NamedCheck {
        name: "replay-e1-seqda-patience-gain".into(),
        passed: e1.patience_gain == Some(0.5),
        detail: format!("gain {:?}", e1.patience_gain),
    });
    let e2 = replay_fixture(Fixture::E2, MechanismKind::Hpda)?;
    let offers: Vec<u32> = e2
        .history
        .periods
        .iter()
        .filter(|r| !r.matching.is_empty())
        .map(|r| r.t)
        .collect();
    checks.push(NamedCheck {
        name: "replay-e2-hpda-offer-periods".into(),
        passed: offers == vec![1, 3],
        detail: format!("offers at {offers:?}"),
    });
    checks.push(NamedCheck {
        name: "replay-e2-hpda-indifference".into(),
        passed: e2.accept_first_payoff == Some(1.0)
            && e2.payoffs.values().next().copied() == Some(1.0),
        detail: format!(
            "accept-first {:?}, realized {:?}",
            e2.accept_first_payoff, e2.payoffs
        ),
    });
    let e3 = replay_fixture(Fixture::E3, MechanismKind::Hpda)?;
    checks.push(NamedCheck {
        name: "replay-e3-hpda-misreport-gain".into(),
        passed: e3.misreport_gain == Some(0.5),
        detail: format!("gain {:?}", e3.misreport_gain),
    });

    let passed = checks.iter().all(|c| c.passed);
    Ok(TheoremSuiteReport { checks, passed })
}

#[derive(Serialize)]
pub struct SweepSuiteReport {
    pub theorem_sweep: TheoremSweepOutcome,
    pub strategy_sweep: StrategySweepOutcome,
    pub passed: bool,
}

/// Randomized sweep: `budget` small environments through the exhaustive
/// action-plan checks plus the strategy-proofness enumeration (at half the
/// budget, bounded instances).
pub fn sweep_suite(seed: u64, budget: usize) -> SweepSuiteReport {
    let theorem_sweep = run_theorem_sweep(seed, budget, &SweepBounds::default());
    let strategy_sweep = run_strategy_sweep(seed.wrapping_add(0x5EED), budget.div_ceil(2));
    let clean = |c: &placement_core::properties::PropertyCounts| {
        c.envy_both_matched == 0
            && c.envy_unmatched_child == 0
            && c.envy_unmatched_home == 0
            && c.individual_rationality == 0
            && c.patience == 0
            && c.weak_waste == 0
            && c.dominance == 0
    };
    let passed = clean(&theorem_sweep.hpda)
        && clean(&theorem_sweep.crda)
        && clean(&theorem_sweep.heda)
        && theorem_sweep.seqda_strict_waste == 0
        && theorem_sweep.seqda_patience_found >= 1
        && strategy_sweep.heda_violations == 0;
    SweepSuiteReport {
        theorem_sweep,
        strategy_sweep,
        passed,
    }
}
