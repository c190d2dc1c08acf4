use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(i: usize) -> Self {
                $name(i as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

dense_id!(
    /// Load sensor (one per instrumented floor column).
    SensorId,
    "s"
);
dense_id!(
    /// Wireless sensor node.
    NodeId,
    "n"
);
dense_id!(
    /// Floor tile, row-major with `x` varying fastest.
    TileId,
    "t"
);
dense_id!(
    /// Passive infrared motion sensor.
    PirId,
    "p"
);
dense_id!(
    /// Wall-mounted media board (LEDs + speaker).
    ActuatorId,
    "a"
);
