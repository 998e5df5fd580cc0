pub mod continuation;
pub mod embedding;
pub mod knots;
pub mod ode;
pub mod optim;
pub mod oracle;
pub mod plant;
pub mod rng;
pub mod spline;
