//! Attractive one-dimensional particle systems driven by a Harris graphical
//! construction, an exact entropy-solution solver for scalar conservation
//! laws, and the experiments connecting the two.

pub mod error;
pub mod flux_id;
pub mod graphical;
pub mod harness;
pub mod lattice;
pub mod models;
pub mod scl;

pub use error::{Error, Result};
pub use lattice::{Boundary, Configuration, Environment, PiecewiseConstantProfile};
pub use models::{Family, Model, ModelSpec};
pub use scl::{FluxFunction, RiemannFan};
