pub mod baselines;
pub mod cli;
pub mod diagnostics;
pub mod dth;
pub mod life_table;
pub mod month;
pub mod panel;
pub mod resampling;
pub mod sim;
