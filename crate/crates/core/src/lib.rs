pub mod backbone;
pub mod cli;
pub mod data;
pub mod flow;
pub mod model;
pub mod nn;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod util;
