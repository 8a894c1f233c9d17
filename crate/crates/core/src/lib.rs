pub mod chainmap;
pub mod error;
pub mod freefermion;
pub mod linalg;
pub mod liouville;
pub mod negf;
pub mod preb;
pub mod quadrature;
pub mod spectral;
pub mod system;
pub mod tebd;

pub use error::{Error, Result};
