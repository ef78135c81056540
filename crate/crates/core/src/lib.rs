pub mod auditor;
pub mod base_ot;
pub mod catalog;
pub mod group;
pub mod harness;
pub mod net;
pub mod symcrypto;
pub mod util;
pub mod weights;
pub mod store;
pub mod wire;
pub mod wot;
