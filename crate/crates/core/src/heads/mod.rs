mod boxes;
mod detect;
mod loss;

pub use boxes::*;
pub use detect::*;
pub use loss::*;
