pub mod apol;
pub mod codec;
pub mod crypto;
pub mod grid;
pub mod ledger;
pub mod market;
pub mod simnet;
