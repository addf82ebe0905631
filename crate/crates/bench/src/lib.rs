//! Scenario builders shared by the benchmarks.

use std::collections::BTreeSet;

use vogrid_core::registry::{Grant, GrantKind, GroupId, VoRegistry};
use vogrid_core::schedule::TimeSchedule;
use vogrid_core::subject::SubjectName;

pub const BENCH_NOW: i64 = 1_054_425_600;

pub fn subject(name: &str) -> SubjectName {
    SubjectName::from_pairs([("O", "bench"), ("CN", name)]).unwrap()
}

/// A layered DAG: `width` groups per layer, each with up to three parents
/// in the previous layer, members spread across the bottom layer.
pub fn layered_registry(layers: usize, width: usize, users: usize) -> VoRegistry {
    let owner = subject("owner");
    let mut registry = VoRegistry::new("bench", owner.clone()).unwrap();
    let mut previous = vec![registry.root()];
    let mut counter = 0u64;
    for _ in 0..layers {
        let mut current: Vec<GroupId> = Vec::with_capacity(width);
        for w in 0..width {
            let mut parents = BTreeSet::new();
            parents.insert(previous[w % previous.len()]);
            parents.insert(previous[(w + 1) % previous.len()]);
            parents.insert(previous[(w * 7 + 3) % previous.len()]);
            counter += 1;
            let id = registry
                .create_group(&owner, &parents, &format!("g{counter}"), false, BENCH_NOW)
                .unwrap();
            current.push(id);
        }
        previous = current;
    }
    for u in 0..users {
        let scope = previous[u % previous.len()];
        registry
            .grant(
                &owner,
                Grant {
                    user: subject(&format!("user{u}")),
                    scope,
                    kind: GrantKind::Membership,
                    schedule: TimeSchedule::Always,
                },
                BENCH_NOW,
            )
            .unwrap();
        registry
            .grant(
                &owner,
                Grant {
                    user: subject(&format!("user{u}")),
                    scope,
                    kind: GrantKind::Role("analyst".into()),
                    schedule: TimeSchedule::Always,
                },
                BENCH_NOW,
            )
            .unwrap();
    }
    registry
}
