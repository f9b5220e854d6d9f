pub mod cache;
pub mod evaluation;
pub mod example_gen;
pub mod features;
pub mod forest;
pub mod matrix;
pub mod pipeline;
pub mod plot;
pub mod road_network;
pub mod seed;
pub mod synth;
pub mod time;
pub mod weather;
