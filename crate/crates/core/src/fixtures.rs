//! Network fixtures shipped with the crate.

use crate::grid::BusNetwork;

/// JSON of the 33-bus radial feeder (branch data of Baran and Wu, 12.66 kV,
/// 1000 kVA base).
pub const IEEE33_JSON: &str = include_str!("../fixtures/ieee33.json");

/// JSON of a small two-feeder network: slack `1`, feeder A `1-2-3`, feeder
/// B `1-4-5`. Feeder A is heavily loaded.
pub const TWO_FEEDER_5BUS_JSON: &str = include_str!("../fixtures/two_feeder_5bus.json");

pub fn ieee33() -> BusNetwork {
    BusNetwork::from_json(IEEE33_JSON).expect("shipped fixture is valid")
}

pub fn two_feeder_5bus() -> BusNetwork {
    BusNetwork::from_json(TWO_FEEDER_5BUS_JSON).expect("shipped fixture is valid")
}

/// Feeder-end buses of the 33-bus network used as the four converter
/// terminals (the ends of the tie-lines 18-33, 22-12 and 25-29).
pub const IEEE33_PCC: [&str; 4] = ["33", "18", "22", "25"];

/// Converter terminals on the 5-bus network, heaviest feeder first.
pub const FIVE_BUS_PCC: [&str; 4] = ["3", "5", "2", "4"];
