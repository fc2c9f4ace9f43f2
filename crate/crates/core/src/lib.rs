pub mod error;
pub mod model;
pub mod sde;
pub mod ufg;
pub mod signature;
pub mod grid;
pub mod semigroup;
pub mod filtering;
pub mod chaos;
pub mod robust;
pub mod gradient;
pub mod config;
pub mod experiments;
pub mod runner;
