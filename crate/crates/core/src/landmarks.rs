//! The 68-point facial landmark layout: facial-feature partition and
//! left/right mirror correspondence.
//!
//! Index ranges: jaw 0–16, eyebrows 17–26, nose 27–35, eyes 36–47,
//! mouth 48–67.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::Error;

pub const NUM_LANDMARKS: usize = 68;

/// A landmark position in crop pixel coordinates (pixel `(i, j)` covers
/// `[j, j+1) × [i, i+1)`).
pub type Point = [f32; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Eyebrows,
    Eyes,
    Nose,
    Mouth,
    Jaw,
}

impl Feature {
    /// Top-to-bottom order used for ensembles and reports.
    pub const ALL: [Feature; 5] = [Feature::Eyebrows, Feature::Eyes, Feature::Nose, Feature::Mouth, Feature::Jaw];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Eyebrows => "eyebrows",
            Feature::Eyes => "eyes",
            Feature::Nose => "nose",
            Feature::Mouth => "mouth",
            Feature::Jaw => "jaw",
        }
    }

    pub fn indices(self) -> Range<usize> {
        match self {
            Feature::Jaw => 0..17,
            Feature::Eyebrows => 17..27,
            Feature::Nose => 27..36,
            Feature::Eyes => 36..48,
            Feature::Mouth => 48..68,
        }
    }

    /// Regression outputs: two coordinates per point.
    pub fn outputs(self) -> usize {
        2 * self.indices().len()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

pub fn partition_indices(feature: &str) -> Result<Vec<usize>, Error> {
    Ok(feature.parse::<Feature>()?.indices().collect())
}

/// Index map from each landmark to its mirror image under a horizontal
/// flip. An involution; midline points map to themselves.
pub fn symmetry_permutation() -> [usize; NUM_LANDMARKS] {
    let mut map = [0usize; NUM_LANDMARKS];
    for (i, m) in map.iter_mut().enumerate() {
        *m = i;
    }
    let mut pair = |a: usize, b: usize| {
        map[a] = b;
        map[b] = a;
    };
    for i in 0..8 {
        pair(i, 16 - i);
    }
    for i in 0..5 {
        pair(17 + i, 26 - i);
    }
    pair(31, 35);
    pair(32, 34);
    // eye contours: outer corner, upper lid, inner corner, lower lid
    for (a, b) in [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)] {
        pair(a, b);
    }
    for (a, b) in [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58), (60, 64), (61, 63), (65, 67)] {
        pair(a, b);
    }
    map
}
