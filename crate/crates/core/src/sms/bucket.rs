use std::fmt;

use crate::faas::DeploymentId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BucketState {
    Current,
    Active,
    Degraded,
    Retired,
}

impl BucketState {
    /// State of a bucket `age` intervals behind the current one.
    pub fn for_age(age: u64, degrade_after: u64, retire_after: u64) -> BucketState {
        if age == 0 {
            BucketState::Current
        } else if age >= retire_after {
            BucketState::Retired
        } else if age >= degrade_after {
            BucketState::Degraded
        } else {
            BucketState::Active
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BucketState::Current => "current",
            BucketState::Active => "active",
            BucketState::Degraded => "degraded",
            BucketState::Retired => "retired",
        }
    }
}

impl fmt::Display for BucketState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FgId(pub u64);

impl fmt::Display for FgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fg{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgStatus {
    Open,
    Sealed,
}

/// O deployments that together hold one stripe per object; slot `i` holds
/// chunk `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionGroup {
    pub id: FgId,
    pub members: Vec<DeploymentId>,
    pub status: FgStatus,
    pub bucket: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IBucket {
    pub index: u64,
    pub state: BucketState,
    /// Oldest first.
    pub fgs: Vec<FgId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RotationReport {
    pub index: u64,
    pub carried: Vec<FgId>,
    pub degraded: Vec<u64>,
    pub retired: Vec<u64>,
    pub removed_functions: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ages_map_to_states() {
        let states: Vec<_> = (0..5).map(|a| BucketState::for_age(a, 2, 3)).collect();
        assert_eq!(
            states,
            [
                BucketState::Current,
                BucketState::Active,
                BucketState::Degraded,
                BucketState::Retired,
                BucketState::Retired
            ]
        );
    }

    #[test]
    fn state_never_moves_backward_with_age() {
        for m in 1..6 {
            for n in m + 1..8 {
                let mut prev = BucketState::Current;
                for age in 0..12 {
                    let s = BucketState::for_age(age, m, n);
                    assert!(s >= prev);
                    prev = s;
                }
            }
        }
    }
}
