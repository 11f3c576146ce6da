//! Canonical replay fixtures.
//!
//! The three environments ship as JSON documents under `fixtures/` so the
//! files double as schema documentation for [`crate::model::EnvironmentDoc`].

use crate::model::{
    Child, ChildUtilityEntry, Environment, EnvironmentDoc, Home, HomeUtilityEntry, ModelError,
};

pub const E1_JSON: &str = include_str!("../fixtures/e1.json");
pub const E2_JSON: &str = include_str!("../fixtures/e2.json");
pub const E3_JSON: &str = include_str!("../fixtures/e3.json");

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Fixture {
    E1,
    E2,
    E3,
}

impl Fixture {
    pub fn parse(name: &str) -> Option<Fixture> {
        match name.to_ascii_lowercase().as_str() {
            "e1" => Some(Fixture::E1),
            "e2" => Some(Fixture::E2),
            "e3" => Some(Fixture::E3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fixture::E1 => "E1",
            Fixture::E2 => "E2",
            Fixture::E3 => "E3",
        }
    }

    pub fn json(self) -> &'static str {
        match self {
            Fixture::E1 => E1_JSON,
            Fixture::E2 => E2_JSON,
            Fixture::E3 => E3_JSON,
        }
    }

    pub fn environment(self) -> Environment {
        load(self.json())
    }
}

fn load(text: &str) -> Environment {
    EnvironmentDoc::from_json(text)
        .and_then(EnvironmentDoc::into_environment)
        .expect("bundled fixture must parse")
}

/// Two staggered cohorts with crossing preferences: each home's favorite child
/// arrives opposite it, so waiting one period pays off under a mechanism that
/// never withholds offers. Horizon 2.
pub fn e1() -> Environment {
    Fixture::E1.environment()
}

/// One home, two children arriving in consecutive months, horizon 3. The
/// second child is worth more to the home than the first, which tempts the
/// home to decline the first offer.
pub fn e2() -> Environment {
    Fixture::E2.environment()
}

/// One home, two children, horizon 2, with a tighter child waiting cost. A
/// home that declares its first-month child unacceptable can wait for the
/// better second-month child without ever declining an offer.
pub fn e3() -> Environment {
    Fixture::E3.environment()
}

/// Export an in-memory environment into the document schema.
pub fn doc_from_environment(env: &Environment) -> EnvironmentDoc {
    let children: Vec<Child> = env.children.clone();
    let homes: Vec<Home> = env.homes.clone();
    let mut child_utility = Vec::new();
    for c in &children {
        for h in &homes {
            child_utility.push(ChildUtilityEntry {
                child: c.id,
                home: h.id,
                value: env.prefs.child_utility(c.id, h.id),
            });
        }
    }
    let mut home_true = Vec::new();
    let mut home_observed = Vec::new();
    for h in &homes {
        for c in &children {
            home_true.push(HomeUtilityEntry {
                home: h.id,
                child: c.id,
                value: env
                    .prefs
                    .home_utility(crate::model::UtilityTable::True, h.id, c.id),
            });
            home_observed.push(HomeUtilityEntry {
                home: h.id,
                child: c.id,
                value: env
                    .prefs
                    .home_utility(crate::model::UtilityTable::Observed, h.id, c.id),
            });
        }
    }
    EnvironmentDoc {
        horizon: env.horizon,
        wait_cost_child: env.prefs.wait_cost_child,
        wait_cost_home: env.prefs.wait_cost_home,
        children,
        homes,
        child_utility,
        home_true_utility: home_true,
        home_observed_utility: Some(home_observed),
    }
}

/// Parse and validate an environment document from JSON text.
pub fn environment_from_json(text: &str) -> Result<Environment, ModelError> {
    EnvironmentDoc::from_json(text)?.into_environment()
}
