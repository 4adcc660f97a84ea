//! Kinetic simulation and verification library for the Vlasov-Poisson-Boltzmann
//! system in bounded convex domains with Cercignani-Lampis wall scattering.

pub mod characteristics;
pub mod collision;
pub mod field;
pub mod geometry;
pub mod quadrature;
pub mod scattering;
pub mod simulator;

/// Positions and velocities. In 2D mode the third component is zero.
pub type Vec3 = nalgebra::Vector3<f64>;
