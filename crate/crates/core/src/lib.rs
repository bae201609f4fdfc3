pub mod bootstrap;
pub mod env;
pub mod error;
pub mod estimator;
pub mod features;
pub mod forest;
pub mod gibbs;
pub mod lasso;
pub mod linalg;
pub mod linear;
pub mod par;
pub mod policy;
pub mod propensity;
pub mod rng;
