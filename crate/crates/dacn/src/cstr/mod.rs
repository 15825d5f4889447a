//! Closed-loop CSTR benchmark generator: plant dynamics, PI control, fault
//! injection, and labeled dataset emission.

pub mod control;
pub mod fault;
pub mod plant;
pub mod sim;

pub use control::ControllerState;
pub use fault::{default_faults, FaultMechanism, FaultSpec, CHANNEL_NAMES};
pub use plant::{derivatives, rk4_step, steady_state, OperatingPoint, PlantParams, PlantState};
pub use sim::{
    default_modes, derive_seed, generate_dataset, generate_series, simulate, write_series_csv,
    DatasetManifest, ManifestEntry, ModeSpec, RawSeries, SimConfig,
};
