pub mod active_loop;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod eval;
pub mod frame_select;
pub mod image;
pub mod optical_flow;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod sensor_sim;
pub mod uncertainty;
