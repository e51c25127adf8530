//! Per-component seed derivation.
//!
//! Every random stream in a run is derived from one base seed: the component
//! seed is the first eight bytes (little endian) of
//! `SHA-256(component_name ‖ 0x00 ‖ base_seed as little-endian u64)`.

use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(component.as_bytes());
    h.update([0u8]);
    h.update(base.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
