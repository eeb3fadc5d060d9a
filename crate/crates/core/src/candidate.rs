use std::fmt;

use serde::{Deserialize, Serialize};

/// Subset of {2D, 3D} a stage proposes to retain for a patch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateSet {
    pub has2d: bool,
    pub has3d: bool,
}

impl CandidateSet {
    pub const EMPTY: Self = Self::new(false, false);
    pub const ONLY_2D: Self = Self::new(true, false);
    pub const ONLY_3D: Self = Self::new(false, true);
    pub const BOTH: Self = Self::new(true, true);

    pub const fn new(has2d: bool, has3d: bool) -> Self {
        Self { has2d, has3d }
    }

    pub fn is_empty(self) -> bool {
        !self.has2d && !self.has3d
    }

    pub fn intersect(self, other: Self) -> Self {
        Self::new(self.has2d && other.has2d, self.has3d && other.has3d)
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        (!self.has2d || other.has2d) && (!self.has3d || other.has3d)
    }

    pub fn len(self) -> usize {
        self.has2d as usize + self.has3d as usize
    }
}

impl fmt::Display for CandidateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.has2d, self.has3d) {
            (false, false) => f.write_str("{}"),
            (true, false) => f.write_str("{2D}"),
            (false, true) => f.write_str("{3D}"),
            (true, true) => f.write_str("{2D,3D}"),
        }
    }
}
