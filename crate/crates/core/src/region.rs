//! Spinal region vocabulary shared across the crate.

use serde::{Deserialize, Serialize};

/// The three spinal regions the scan traverses, caudo-cranial order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionClass {
    Sacrum,
    Lumbar,
    Thoracic,
}

impl RegionClass {
    pub const ALL: [RegionClass; 3] = [RegionClass::Sacrum, RegionClass::Lumbar, RegionClass::Thoracic];

    pub fn index(self) -> usize {
        match self {
            RegionClass::Sacrum => 0,
            RegionClass::Lumbar => 1,
            RegionClass::Thoracic => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionClass::Sacrum => "Sacrum",
            RegionClass::Lumbar => "Lumbar",
            RegionClass::Thoracic => "Thoracic",
        }
    }
}

impl std::fmt::Display for RegionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per spinal region (setpoints, gains, depths).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerRegion<T> {
    pub sacrum: T,
    pub lumbar: T,
    pub thoracic: T,
}

impl<T: Copy> PerRegion<T> {
    pub fn get(&self, region: RegionClass) -> T {
        match region {
            RegionClass::Sacrum => self.sacrum,
            RegionClass::Lumbar => self.lumbar,
            RegionClass::Thoracic => self.thoracic,
        }
    }

    pub fn values(&self) -> [T; 3] {
        [self.sacrum, self.lumbar, self.thoracic]
    }
}
