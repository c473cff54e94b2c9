pub mod eval;
pub mod flowdump;
pub mod gradcheck;
pub mod propagate;
pub mod synth;
pub mod train;
