pub mod carleman_scan;
pub mod forward;
pub mod kappa;
pub mod reconstruct;
pub mod verify;
