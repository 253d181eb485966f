#![no_std]

extern crate alloc;

pub mod linalg;
pub mod sdp;
pub mod model;
pub mod lmi;
pub mod dde;
pub mod verify;
