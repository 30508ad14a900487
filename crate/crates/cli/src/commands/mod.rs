pub mod extract;
pub mod interpret;
pub mod synth;
pub mod train;
