#![allow(dead_code)]

pub mod gradients;
pub mod kl;
pub mod oracles;
