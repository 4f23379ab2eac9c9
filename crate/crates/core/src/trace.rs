//! Branch-decision hashing for finite-difference kink detection.
//!
//! Every non-smooth choice made during a forward pass (clips, floors,
//! min/max selectors) pushes a bit; two passes with equal hashes evaluated
//! the same smooth piece of the objective, so central differences between
//! them are valid.

/// Rolling FNV-style hash of branch decisions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BranchTrace(u64);

impl BranchTrace {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn push(&mut self, bit: bool) {
        self.mix(bit as u64 + 1);
    }

    pub fn push_i8(&mut self, v: i8) {
        self.mix(v as u8 as u64 + 7);
    }

    pub fn mix(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}
