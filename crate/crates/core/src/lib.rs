pub mod binding;
pub mod checker;
pub mod frontend;
pub mod loss;
pub mod lowering;
pub mod model;
pub mod par;
pub mod query;
pub mod rational;
pub mod verifier;
pub mod vnnlib;
