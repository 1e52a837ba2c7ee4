pub mod corpus;
pub mod features;
pub mod labeling;
pub mod models;
pub mod selection;
pub mod backtest;
pub mod cli;
