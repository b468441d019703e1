//! Model partially hyperbolic horseshoes with a sharp splitting in the stable
//! direction: symbolic coding, perturbation families, stable dimension, Gibbs
//! measures, projection transversality, renormalization and recurrent sets.

pub mod model;
pub mod symbolic;
pub mod intervals;
pub mod pieces;
pub mod dimension;
pub mod thermo;
pub mod stacking;
pub mod marstrand;
pub mod geometry;
