//! Finite-horizon mean-field MDPs: exact dynamics, planning and Nash-equilibrium
//! computation, MLE confidence-set learners for mean-field control and games,
//! and a model-based eluder-dimension toolkit.

pub mod density;
pub mod classes;
pub mod dynamics;
pub mod eluder;
pub mod error;
pub mod learner;
pub mod lipschitz;
pub mod model;
pub mod planning;
pub mod policy;
pub mod seeding;

pub use density::{gaussian_hellinger, hellinger_distance, tv_distance, Density, DensityFlow};
pub use error::{MfError, Result};
pub use model::{MeanFieldModel, RewardFamily, TransitionFamily};
pub use policy::Policy;
