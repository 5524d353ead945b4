use std::collections::BTreeMap;

use super::graph::Var;
use super::Arr;
use crate::bytes::{ByteError, Reader, Writer};

const MAGIC: &str = "MAGPARM1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad or missing header (expected {0})")]
    BadMagic(&'static str),
    #[error("checkpoint data truncated")]
    Truncated,
    #[error("invalid utf-8 in checkpoint")]
    Utf8,
    #[error("checkpoint does not match this model: {0}")]
    Mismatch(String),
}

impl From<ByteError> for CheckpointError {
    fn from(e: ByteError) -> CheckpointError {
        match e {
            ByteError::Truncated { .. } | ByteError::LengthOverflow => CheckpointError::Truncated,
            ByteError::Utf8 => CheckpointError::Utf8,
            ByteError::BadMagic { expected } => CheckpointError::BadMagic(expected),
        }
    }
}

/// Registry of uniquely named trainable leaves. Networks register their
/// parameters here under slash-separated paths ("actor0/l1/w"), and the
/// optimizer and checkpointing work off the sorted name order.
#[derive(Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Var>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    /// Creates and registers a trainable leaf.
    pub fn param(&mut self, name: &str, value: Arr) -> Var {
        let var = Var::param(value);
        self.register(name, var.clone());
        var
    }

    pub fn register(&mut self, name: &str, var: Var) {
        assert!(var.is_leaf() && var.is_trainable(), "{name}: not a trainable leaf");
        let prior = self.entries.insert(name.to_string(), var);
        assert!(prior.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.entries.get(name).cloned()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    pub fn zero_grads(&self) {
        for var in self.entries.values() {
            var.zero_grad();
        }
    }

    /// Moves every entry of `other` in under `prefix/`.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet) {
        for (name, var) in other.entries {
            let prior = self.entries.insert(format!("{prefix}/{name}"), var);
            assert!(prior.is_none(), "duplicate parameter name under {prefix}");
        }
    }

    /// Versioned snapshot: sorted names, shapes, raw little-endian f64s.
    /// Byte output is a pure function of contents, so equal parameters
    /// serialize identically.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC);
        w.u32(self.entries.len() as u32);
        for (name, var) in &self.entries {
            w.str(name);
            w.arr(&var.value());
        }
        w.finish()
    }

    /// Loads a snapshot into the existing registry. Names and shapes must
    /// match exactly; values are overwritten in place so live graphs keep
    /// their leaf bindings.
    pub fn apply_bytes(&self, bytes: &[u8]) -> Result<(), CheckpointError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let count = r.u32()? as usize;
        if count != self.entries.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{count} stored parameters, model has {}",
                self.entries.len()
            )));
        }
        let mut staged: Vec<Arr> = Vec::with_capacity(count);
        for (name, var) in self.entries.iter() {
            let stored_name = r.str()?;
            if &stored_name != name {
                return Err(CheckpointError::Mismatch(format!(
                    "expected parameter {name}, found {stored_name}"
                )));
            }
            let value = r.arr()?;
            if value.shape() != var.shape().as_slice() {
                return Err(CheckpointError::Mismatch(format!(
                    "{name}: stored shape {:?}, model shape {:?}",
                    value.shape(),
                    var.shape()
                )));
            }
            staged.push(value);
        }
        r.expect_end()?;
        // All validated: now commit, so a bad checkpoint never half-loads.
        for ((_, var), value) in self.entries.iter().zip(staged) {
            var.set_value(value);
        }
        Ok(())
    }
}
