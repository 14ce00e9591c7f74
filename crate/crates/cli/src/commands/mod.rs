pub mod export;
pub mod filter;
pub mod generate;
pub mod selftest;
pub mod train;
