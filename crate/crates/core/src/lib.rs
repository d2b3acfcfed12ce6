//! Numerical laboratory for magnetic geodesic flows on surfaces.
//!
//! A magnetic system `(g, f)` on a surface moves unit-speed curves whose
//! geodesic curvature equals `f`. The modules integrate that flow, detect and
//! classify closed orbits, search for waists of the free-period action
//! functional and evaluate closed-form diagnostics.

pub mod curves;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod orbits;
pub mod variational;
mod ode;
mod quad;

pub use error::{Error, Result};
pub use geometry::{MagneticSurface, Point, Profile, ScalarField, SurfaceKind, SurfaceParams, SurfaceSpec, UnitTangentState};
