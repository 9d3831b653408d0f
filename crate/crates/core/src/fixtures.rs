//! Bundled example maps.

use crate::certify::Partition;
use crate::expr::MapExpr;

pub const LOGISTIC_JSON: &str = include_str!("../../../maps/logistic.json");
pub const F78_JSON: &str = include_str!("../../../maps/f78.json");
pub const G17_JSON: &str = include_str!("../../../maps/g17.json");
pub const QUARTIC_JSON: &str = include_str!("../../../maps/quartic.json");
pub const NEURO_JSON: &str = include_str!("../../../maps/neuro.json");

/// Parameter of the bundled neuro map: the m = 3 Misiurewicz parameter of
/// the lingering family with d = 0.8.
pub const NEURO_DELTA: f64 = 2.5790181148502604;

pub const G17_PARTITION: [f64; 10] = [-1.0, -0.95, -0.7, -0.47, -0.18, 0.18, 0.47, 0.7, 0.95, 1.0];

fn load(text: &str) -> MapExpr {
    MapExpr::from_json(text).expect("bundled map file is valid")
}

pub fn logistic() -> MapExpr {
    load(LOGISTIC_JSON)
}

/// x ↦ a x (1 − x) on [0, 1].
pub fn logistic_family(a: f64) -> MapExpr {
    let params = [("a".to_string(), a)].into_iter().collect();
    MapExpr::parse("a*x*(1-x)", (0.0, 1.0), &params).expect("valid expression")
}

pub fn f78() -> MapExpr {
    load(F78_JSON)
}

pub fn g17() -> MapExpr {
    load(G17_JSON)
}

pub fn g17_partition() -> Partition {
    Partition::new(G17_PARTITION.to_vec()).expect("valid partition")
}

pub fn quartic() -> MapExpr {
    load(QUARTIC_JSON)
}

/// Lingering neuro family at [`NEURO_DELTA`].
pub fn neuro() -> MapExpr {
    load(NEURO_JSON)
}

/// Bundled map by short name.
pub fn by_name(name: &str) -> Option<MapExpr> {
    match name {
        "logistic" => Some(logistic()),
        "f78" => Some(f78()),
        "g17" => Some(g17()),
        "quartic" => Some(quartic()),
        "neuro" => Some(neuro()),
        _ => None,
    }
}
