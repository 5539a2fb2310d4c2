pub mod tape;
pub mod params;
pub mod adam;
pub mod check;

pub use adam::{adam_step, AdamConfig};
pub use check::{finite_difference_check, FdCheck, FdCoords};
pub use params::{ParamStore, Shape};
pub use tape::{NodeId, ParamGrads, Tape};
