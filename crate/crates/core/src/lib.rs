//! Dynamic two-sided placement matching.
//!
//! Children and homes arrive to a market over a finite horizon of monthly
//! periods. Each period a placement mechanism proposes a one-to-one matching,
//! homes accept or decline, and accepted pairs leave the market while everyone
//! else pays a waiting cost. This crate houses:
//!
//! - [`model`]: market primitives, time-discounted utilities, and the
//!   period-to-period market evolution under offers and decisions.
//! - [`da`]: a one-period deferred-acceptance kernel (either side may propose)
//!   plus a brute-force stable-matching oracle used for verification.
//! - [`mechanisms`]: the placement mechanisms — sequential deferred acceptance,
//!   home-penalized DA, child-rotating DA, and home-endowed DA.
//! - [`strategic`]: acceptability reports and home decision rules, including
//!   best-response lookahead with deterministic foresight.
//! - [`properties`]: executable checkers for fairness and incentive properties
//!   (justified envy, individual rationality, patience, wastefulness,
//!   strategy-proofness).
//! - [`simulation`]: synthetic market generation, estimator noise, metrics,
//!   and the experiment runner.

pub mod da;
pub mod fixtures;
pub mod mechanisms;
pub mod model;
pub mod properties;
pub mod simulation;
pub mod strategic;
