//! One-period deferred acceptance over constructed preferences, plus a
//! brute-force stable-matching oracle for verification.
//!
//! The kernel is side-agnostic: callers decide which side proposes by how they
//! populate [`ConstructedPreferences`]. Negative utility means unacceptable.
//! Ties are broken by the counterpart's external id, compared lexicographically
//! after utility, so every agent holds a strict preference order.

use thiserror::Error;

/// Largest side length `enumerate_stable` will accept.
pub const ENUMERATION_LIMIT: usize = 7;

/// Cardinal preferences for one period, proposer side first.
///
/// Utilities are dense matrices over the period's participants; `ids` carry the
/// participants' external identifiers for deterministic tie-breaking.
#[derive(Clone, Debug)]
pub struct ConstructedPreferences {
    proposer_utility: Vec<Vec<f64>>,
    receiver_utility: Vec<Vec<f64>>,
    proposer_ids: Vec<u32>,
    receiver_ids: Vec<u32>,
}

impl ConstructedPreferences {
    pub fn new(
        proposer_utility: Vec<Vec<f64>>,
        receiver_utility: Vec<Vec<f64>>,
        proposer_ids: Vec<u32>,
        receiver_ids: Vec<u32>,
    ) -> Self {
        assert_eq!(proposer_utility.len(), proposer_ids.len());
        assert_eq!(receiver_utility.len(), receiver_ids.len());
        for row in &proposer_utility {
            assert_eq!(row.len(), receiver_ids.len());
        }
        for row in &receiver_utility {
            assert_eq!(row.len(), proposer_ids.len());
        }
        Self {
            proposer_utility,
            receiver_utility,
            proposer_ids,
            receiver_ids,
        }
    }

    pub fn n_proposers(&self) -> usize {
        self.proposer_ids.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receiver_ids.len()
    }

    pub fn proposer_ids(&self) -> &[u32] {
        &self.proposer_ids
    }

    pub fn receiver_ids(&self) -> &[u32] {
        &self.receiver_ids
    }

    #[inline]
    pub fn proposer_utility(&self, p: usize, r: usize) -> f64 {
        self.proposer_utility[p][r]
    }

    #[inline]
    pub fn receiver_utility(&self, r: usize, p: usize) -> f64 {
        self.receiver_utility[r][p]
    }

    #[inline]
    fn acceptable_pair(&self, p: usize, r: usize) -> bool {
        self.proposer_utility[p][r] >= 0.0 && self.receiver_utility[r][p] >= 0.0
    }

    /// Tie-broken key: higher utility wins, then higher counterpart id.
    #[inline]
    fn proposer_key(&self, p: usize, r: usize) -> (f64, u32) {
        (self.proposer_utility[p][r], self.receiver_ids[r])
    }

    #[inline]
    fn receiver_key(&self, r: usize, p: usize) -> (f64, u32) {
        (self.receiver_utility[r][p], self.proposer_ids[p])
    }

    fn proposer_prefers(&self, p: usize, a: usize, b: usize) -> bool {
        key_gt(self.proposer_key(p, a), self.proposer_key(p, b))
    }

    fn receiver_prefers(&self, r: usize, a: usize, b: usize) -> bool {
        key_gt(self.receiver_key(r, a), self.receiver_key(r, b))
    }
}

#[inline]
fn key_gt(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

/// An assignment over constructed preferences: `assignment[p]` is the receiver
/// index held by proposer `p`, if any.
pub type Assignment = Vec<Option<usize>>;

/// Round-based deferred acceptance: every unheld proposer proposes to its best
/// acceptable receiver not yet tried, receivers hold their best acceptable
/// proposal, until no proposals are made. Returns the proposer-optimal stable
/// assignment with respect to the tie-broken preferences.
pub fn run_da(prefs: &ConstructedPreferences) -> Assignment {
    let np = prefs.n_proposers();
    let nr = prefs.n_receivers();

    // Per-proposer candidate lists: acceptable receivers in descending
    // tie-broken preference order.
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(np);
    for p in 0..np {
        let mut list: Vec<usize> = (0..nr)
            .filter(|&r| prefs.proposer_utility(p, r) >= 0.0)
            .collect();
        list.sort_unstable_by(|&a, &b| {
            let (ua, ia) = prefs.proposer_key(p, a);
            let (ub, ib) = prefs.proposer_key(p, b);
            ub.total_cmp(&ua).then(ib.cmp(&ia))
        });
        candidates.push(list);
    }

    let mut next_choice = vec![0usize; np];
    let mut held_by: Vec<Option<usize>> = vec![None; nr];
    let mut holds: Vec<Option<usize>> = vec![None; np];

    loop {
        let mut proposals: Vec<(usize, usize)> = Vec::new();
        for p in 0..np {
            if holds[p].is_some() {
                continue;
            }
            while next_choice[p] < candidates[p].len() {
                let r = candidates[p][next_choice[p]];
                next_choice[p] += 1;
                if prefs.receiver_utility(r, p) >= 0.0 {
                    proposals.push((p, r));
                    break;
                }
                // receiver finds p unacceptable; the proposal would always be
                // rejected, move on
            }
        }
        if proposals.is_empty() {
            break;
        }
        for (p, r) in proposals {
            match held_by[r] {
                None => {
                    held_by[r] = Some(p);
                    holds[p] = Some(r);
                }
                Some(current) => {
                    if prefs.receiver_prefers(r, p, current) {
                        holds[current] = None;
                        held_by[r] = Some(p);
                        holds[p] = Some(r);
                    }
                }
            }
        }
    }

    holds
}

/// A mutually-improving pair witnessing instability.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockingPair {
    pub proposer: usize,
    pub receiver: usize,
}

/// Why an assignment fails to be stable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityViolation {
    /// A matched pair where some side has negative utility.
    NotIndividuallyRational { proposer: usize, receiver: usize },
    Blocking(BlockingPair),
}

/// Check individual rationality and the absence of blocking pairs. Unmatched
/// agents value their position at zero, so a blocking partner must be strictly
/// better than staying unmatched.
pub fn is_stable(assignment: &Assignment, prefs: &ConstructedPreferences) -> Result<(), StabilityViolation> {
    let np = prefs.n_proposers();
    let nr = prefs.n_receivers();
    assert_eq!(assignment.len(), np);

    let mut receiver_match: Vec<Option<usize>> = vec![None; nr];
    for (p, r) in assignment.iter().enumerate() {
        if let Some(r) = *r {
            receiver_match[r] = Some(p);
        }
    }

    for (p, r) in assignment.iter().enumerate() {
        if let Some(r) = *r {
            if prefs.proposer_utility(p, r) < 0.0 || prefs.receiver_utility(r, p) < 0.0 {
                return Err(StabilityViolation::NotIndividuallyRational {
                    proposer: p,
                    receiver: r,
                });
            }
        }
    }

    for p in 0..np {
        for r in 0..nr {
            if !prefs.acceptable_pair(p, r) || assignment[p] == Some(r) {
                continue;
            }
            let p_improves = match assignment[p] {
                Some(current) => prefs.proposer_prefers(p, r, current),
                None => prefs.proposer_utility(p, r) > 0.0,
            };
            if !p_improves {
                continue;
            }
            let r_improves = match receiver_match[r] {
                Some(current) => prefs.receiver_prefers(r, p, current),
                None => prefs.receiver_utility(r, p) > 0.0,
            };
            if r_improves {
                return Err(StabilityViolation::Blocking(BlockingPair {
                    proposer: p,
                    receiver: r,
                }));
            }
        }
    }
    Ok(())
}

#[derive(Error, Debug)]
pub enum EnumerationError {
    #[error("instance {proposers}x{receivers} exceeds the {ENUMERATION_LIMIT}x{ENUMERATION_LIMIT} enumeration guard")]
    TooLarge { proposers: usize, receivers: usize },
}

/// Every stable assignment, found by exhausting partial injections from
/// proposers to receivers and filtering with [`is_stable`]. Guarded to small
/// instances; this is a verification oracle, not a production path.
pub fn enumerate_stable(
    prefs: &ConstructedPreferences,
) -> Result<Vec<Assignment>, EnumerationError> {
    let np = prefs.n_proposers();
    let nr = prefs.n_receivers();
    if np > ENUMERATION_LIMIT || nr > ENUMERATION_LIMIT {
        return Err(EnumerationError::TooLarge {
            proposers: np,
            receivers: nr,
        });
    }

    let mut out = Vec::new();
    let mut used = vec![false; nr];
    let mut current: Assignment = vec![None; np];
    fn recurse(
        p: usize,
        prefs: &ConstructedPreferences,
        used: &mut Vec<bool>,
        current: &mut Assignment,
        out: &mut Vec<Assignment>,
    ) {
        if p == prefs.n_proposers() {
            if is_stable(current, prefs).is_ok() {
                out.push(current.clone());
            }
            return;
        }
        current[p] = None;
        recurse(p + 1, prefs, used, current, out);
        for r in 0..prefs.n_receivers() {
            // unacceptable pairs can never appear in a stable assignment
            if used[r] || !prefs.acceptable_pair(p, r) {
                continue;
            }
            used[r] = true;
            current[p] = Some(r);
            recurse(p + 1, prefs, used, current, out);
            current[p] = None;
            used[r] = false;
        }
    }
    recurse(0, prefs, &mut used, &mut current, &mut out);
    Ok(out)
}

/// True when every proposer weakly prefers `candidate` to `other` under the
/// tie-broken order (unmatched valued at zero with the lowest tie rank).
pub fn proposer_weakly_prefers(
    prefs: &ConstructedPreferences,
    candidate: &Assignment,
    other: &Assignment,
) -> bool {
    (0..prefs.n_proposers()).all(|p| {
        let key = |r: Option<usize>| match r {
            Some(r) => (prefs.proposer_utility(p, r), prefs.receiver_ids[r] as i64),
            None => (0.0, i64::MIN),
        };
        let (uc, ic) = key(candidate[p]);
        let (uo, io) = key(other[p]);
        uc > uo || (uc == uo && ic >= io)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// E1's four agents at t=2: both homes and both children present.
    fn crossing_prefs() -> ConstructedPreferences {
        // proposers = homes (h0, h1), receivers = children (c0, c1)
        ConstructedPreferences::new(
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            vec![vec![1.0, 1.5], vec![1.5, 1.0]],
            vec![0, 1],
            vec![0, 1],
        )
    }

    #[test]
    fn home_proposing_picks_home_optimal() {
        let prefs = crossing_prefs();
        let m = run_da(&prefs);
        // h0 gets its favorite c1, h1 gets its favorite c0
        assert_eq!(m, vec![Some(1), Some(0)]);
    }

    #[test]
    fn single_mutually_acceptable_pair_matches() {
        let prefs = ConstructedPreferences::new(vec![vec![0.5]], vec![vec![0.25]], vec![7], vec![3]);
        assert_eq!(run_da(&prefs), vec![Some(0)]);
    }

    #[test]
    fn unacceptable_on_either_side_never_matches() {
        let prefs =
            ConstructedPreferences::new(vec![vec![-1.0]], vec![vec![1.0]], vec![0], vec![0]);
        assert_eq!(run_da(&prefs), vec![None]);
        let prefs =
            ConstructedPreferences::new(vec![vec![1.0]], vec![vec![-1.0]], vec![0], vec![0]);
        assert_eq!(run_da(&prefs), vec![None]);
    }

    #[test]
    fn empty_sides_yield_empty_matching() {
        let prefs = ConstructedPreferences::new(vec![], vec![], vec![], vec![]);
        assert_eq!(run_da(&prefs), Vec::<Option<usize>>::new());
    }

    #[test]
    fn enumeration_finds_the_unique_crossed_matching() {
        // Each home's favorite child reciprocates, so the crossed matching is
        // the only stable one; pairing everyone with their same-period
        // counterpart is blocked by (h0, c1).
        let prefs = crossing_prefs();
        let all = enumerate_stable(&prefs).unwrap();
        assert_eq!(all, vec![vec![Some(1), Some(0)]]);
    }

    #[test]
    fn enumeration_of_empty_market_is_the_empty_matching() {
        let prefs = ConstructedPreferences::new(vec![], vec![], vec![], vec![]);
        let all = enumerate_stable(&prefs).unwrap();
        assert_eq!(all, vec![Vec::<Option<usize>>::new()]);
    }

    #[test]
    fn enumeration_guard_refuses_large_instances() {
        let n = ENUMERATION_LIMIT + 1;
        let prefs = ConstructedPreferences::new(
            vec![vec![1.0; n]; n],
            vec![vec![1.0; n]; n],
            (0..n as u32).collect(),
            (0..n as u32).collect(),
        );
        assert!(enumerate_stable(&prefs).is_err());
    }

    #[test]
    fn uncrossed_matching_is_blocked_by_the_mutual_favorites() {
        let prefs = crossing_prefs();
        match is_stable(&vec![Some(0), Some(1)], &prefs) {
            Err(StabilityViolation::Blocking(b)) => {
                assert_eq!((b.proposer, b.receiver), (0, 1));
            }
            other => panic!("expected the (h0, c1) block, got {other:?}"),
        }
    }

    #[test]
    fn swapped_pairs_produce_a_blocking_witness() {
        // Align preferences so exactly one stable matching exists, then swap.
        let prefs = ConstructedPreferences::new(
            vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            vec![0, 1],
            vec![0, 1],
        );
        let good = run_da(&prefs);
        assert_eq!(good, vec![Some(0), Some(1)]);
        let swapped = vec![Some(1), Some(0)];
        match is_stable(&swapped, &prefs) {
            Err(StabilityViolation::Blocking(b)) => {
                assert_eq!((b.proposer, b.receiver), (0, 0));
            }
            other => panic!("expected a blocking pair, got {other:?}"),
        }
    }

    #[test]
    fn da_output_is_stable() {
        let prefs = crossing_prefs();
        let m = run_da(&prefs);
        assert!(is_stable(&m, &prefs).is_ok());
    }
}
