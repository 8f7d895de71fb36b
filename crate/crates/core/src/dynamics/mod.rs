//! λ integration over multi-site model environments.

mod charge;
mod integrator;
mod latent;
mod replica;
mod system;
mod trajectory;

pub use charge::{ChargeLedger, BUFFER_CHARGE_PROT};
pub use integrator::{bussi_factor, Bussi, draw_velocities, thermostat_step, vv_step};
pub use latent::{advance_latent_chain, emit_features, LatentState};
pub use replica::{run_replica, well_offsets, BarrierBlock, BarrierTarget, ReplicaOutput, DIVERGENCE_LIMIT, EQUILIBRATION_BARRIER};
pub use system::{EnvironmentModel, LambdaSite, LambdaSystem, LatentChain};
pub use trajectory::LambdaTrajectory;
