//! Online allocation of divisible items under p-mean welfare.

pub mod adversary;
pub mod allocation;
pub mod allocators;
pub mod certificates;
pub mod error;
pub mod instance;
pub mod offline;
pub mod welfare;

pub use allocation::{utilities_of, Allocation, ItemShares};
pub use error::{Error, Result};
pub use instance::{validate_instance, Instance, Item, ValidationReport};
pub use welfare::{p_mean_welfare, PMeanParam, UtilityVector};
