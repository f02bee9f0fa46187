//! File formats: rig calibration, match lists, trajectories, scale files,
//! diagnostics and simulation scenarios.

pub mod kv;
mod matches;
mod rig;
mod scenario;
mod trajectory;

pub use matches::{load_matches, write_matches, MATCHES_HEADER};
pub use rig::{extrinsic_from_row_major, load_rig, read_table, write_rig, write_table};
pub use scenario::{load_scenario, parse_scenario, Scenario};
pub use trajectory::{read_reals, read_trajectory, write_json_lines, write_reals, write_trajectory};
