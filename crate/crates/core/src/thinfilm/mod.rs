//! Thin-film experiments: quartet certification, the nonlocality
//! obstruction for `alpha <= 1`, localization rates and the recovery
//! construction for `alpha > 1`.

mod localization;
mod nonlocality;
mod quartet;
mod recovery;

pub use localization::*;
pub use nonlocality::*;
pub use quartet::*;
pub use recovery::*;
