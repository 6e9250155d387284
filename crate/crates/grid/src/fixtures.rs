//! Case files bundled with the crate.

pub const CASE2: &str = include_str!("../fixtures/case2.m");
pub const AREA_A: &str = include_str!("../fixtures/area_a.m");
pub const AREA_B: &str = include_str!("../fixtures/area_b.m");
pub const FEEDER4: &str = include_str!("../fixtures/feeder4.m");
pub const FEEDER3: &str = include_str!("../fixtures/feeder3.m");
pub const TRANS2: &str = include_str!("../fixtures/trans2.m");

pub const ALL: [(&str, &str); 6] = [
    ("case2", CASE2),
    ("area_a", AREA_A),
    ("area_b", AREA_B),
    ("feeder4", FEEDER4),
    ("feeder3", FEEDER3),
    ("trans2", TRANS2),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
