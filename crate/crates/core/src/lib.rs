pub mod cli;
pub mod ctc;
pub mod detector;
pub mod lab;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod recognizer;
pub mod review;
