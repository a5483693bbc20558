//! GAN-based intrusion detection for in-vehicle CAN traffic.
//!
//! The pipeline: CAN logs ([`can`]) are cut into windows of consecutive
//! arbitration ids and one-hot encoded into binary images ([`encoder`]). A
//! supervised discriminator learns known attacks; a generator and a second
//! discriminator are trained adversarially on normal images only ([`gan`]).
//! At run time the two discriminators form a cascade ([`detector`]).
//! [`synth`] produces synthetic traffic and attacks, [`eval`] the metrics.

pub mod can;
pub mod config;
pub mod encoder;
pub mod nn;
pub mod synth;
pub mod detector;
pub mod eval;
pub mod gan;
