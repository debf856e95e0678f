//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CEPN" | version: u16 | classes: u16
//! | parameters: f64 * N            (groups in ParamGroup::ALL order)
//! | rho: f64 | epsilon: f64
//! | squared-gradient accumulators: f64 * N
//! | squared-update accumulators: f64 * N
//! | metadata length: u32 | metadata: UTF-8
//! ```

use super::adadelta::OptimizerState;
use super::params::{NetworkParams, ParamGroup};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CEPN";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    pub meta: String,
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(params: &NetworkParams, optimizer: &OptimizerState, meta: &str) -> Result<Vec<u8>> {
    if !params.same_shape(optimizer.sq_grad()) {
        return Err(Error::shape("optimizer state does not match the network's class count"));
    }
    let classes = u16::try_from(params.classes()).map_err(|_| Error::invalid("too many classes"))?;
    let meta_len = u32::try_from(meta.len()).map_err(|_| Error::invalid("metadata too large"))?;
    let mut out = Vec::with_capacity(16 + 3 * 8 * params.num_values() + meta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&classes.to_le_bytes());
    for t in params.tensors() {
        put_f64s(&mut out, t);
    }
    put_f64s(&mut out, &[optimizer.rho, optimizer.epsilon]);
    for acc in [optimizer.sq_grad(), optimizer.sq_update()] {
        for t in acc.tensors() {
            put_f64s(&mut out, t);
        }
    }
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated payload at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn tensors(&mut self, classes: usize) -> Result<NetworkParams> {
        let tensors = ParamGroup::ALL
            .iter()
            .map(|g| self.f64s(g.len(classes)))
            .collect::<Result<Vec<_>>>()?;
        NetworkParams::from_tensors(classes, tensors)
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let classes = r.u16()? as usize;
    if classes < 2 {
        return Err(Error::Checkpoint(format!("invalid class count {classes}")));
    }
    let params = r.tensors(classes)?;
    let hyper = r.f64s(2)?;
    let sq_grad = r.tensors(classes)?;
    let sq_update = r.tensors(classes)?;
    let optimizer = OptimizerState::from_parts(hyper[0], hyper[1], sq_grad, sq_update)?;
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?
        .to_string();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        params,
        optimizer,
        meta,
    })
}

/// Loads a checkpoint and requires its output layer to have `classes` units.
pub fn load_checkpoint_for(bytes: &[u8], classes: usize) -> Result<Checkpoint> {
    let ck = load_checkpoint(bytes)?;
    if ck.params.classes() != classes {
        return Err(Error::Checkpoint(format!(
            "checkpoint has a {}-class output layer, expected {classes}",
            ck.params.classes()
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(classes: usize) -> (NetworkParams, OptimizerState) {
        let p = NetworkParams::init(classes, 3).unwrap();
        let mut opt = OptimizerState::new(classes).unwrap();
        let mut q = p.clone();
        opt.step(&mut q, &p).unwrap();
        (q, opt)
    }

    #[test]
    fn round_trip_is_exact() {
        let (p, opt) = sample(3);
        let bytes = save_checkpoint(&p, &opt, "{\"source\":\"CE\"}").unwrap();
        let ck = load_checkpoint(&bytes).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.optimizer, opt);
        assert_eq!(ck.meta, "{\"source\":\"CE\"}");
        assert_eq!(save_checkpoint(&ck.params, &ck.optimizer, &ck.meta).unwrap(), bytes);
    }

    #[test]
    fn corrupted_and_truncated_rejected() {
        let (p, opt) = sample(3);
        let bytes = save_checkpoint(&p, &opt, "m").unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(load_checkpoint(&bad).is_err());
        assert!(load_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(load_checkpoint(&bytes[..100]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(load_checkpoint(&long).is_err());
    }

    #[test]
    fn class_count_contract() {
        let (p, opt) = sample(10);
        let bytes = save_checkpoint(&p, &opt, "").unwrap();
        assert_eq!(load_checkpoint_for(&bytes, 10).unwrap().params.classes(), 10);
        assert!(load_checkpoint_for(&bytes, 3).is_err());
    }
}
