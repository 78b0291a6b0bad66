use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Network, ParamId};

/// SHA-256 over the name, shape and little-endian bytes of each selected
/// parameter, in ascending id order.
pub fn param_digest(net: &Network, selector: &[ParamId]) -> Result<String> {
    if selector.is_empty() {
        return Err(Error::Contract("digest of an empty parameter selection".into()));
    }
    let mut ids = selector.to_vec();
    ids.sort();
    ids.dedup();
    let mut h = Sha256::new();
    for id in ids {
        let p = net.param(id);
        h.update((p.name.len() as u64).to_le_bytes());
        h.update(p.name.as_bytes());
        h.update((p.shape.len() as u64).to_le_bytes());
        for &s in &p.shape {
            h.update((s as u64).to_le_bytes());
        }
        for x in &p.data {
            h.update(x.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Every parameter carrying the frozen flag.
pub fn frozen_selector(net: &Network) -> Vec<ParamId> {
    (0..net.params().len())
        .map(ParamId)
        .filter(|&id| net.param(id).frozen)
        .collect()
}

pub fn all_params(net: &Network) -> Vec<ParamId> {
    (0..net.params().len()).map(ParamId).collect()
}
