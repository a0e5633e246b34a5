pub mod diag;
pub mod eval;
pub mod export;
pub mod gen;
pub mod train;
