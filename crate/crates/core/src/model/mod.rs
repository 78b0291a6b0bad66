//! Dense base transformer, modality-routed conversion, and decoding.

mod backward;
mod config;
mod generate;
mod moe;
mod network;
mod ops;
mod params;

pub use config::ModelConfig;
pub use generate::{generate, GenerateOptions, Sampling};
pub use moe::{convert_to_moe, init_base, BaseModel, MoeModel};
pub use ops::{gelu, log_sum_exp};
pub use network::{Arch, Block, KvCache, LayerTrace, Network, Routing, Trace};
pub use params::{ExpertPair, Grads, Param, ParamId, Role, Table};

use crate::error::Result;
use crate::linalg::Mat;

/// Applies one routed component to a batch of rows. `Norm` components are
/// root-mean-square normalizations; `Linear` components are bias-free maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Norm,
    Linear,
}

pub fn moe_apply(
    net: &Network,
    pair: ExpertPair,
    kind: ComponentKind,
    x: &Mat,
    mask: &[crate::seqfmt::Modality],
) -> Result<Mat> {
    let routing = Routing::new(mask);
    match kind {
        ComponentKind::Norm => Ok(net.routed_norm(pair, x, &routing)?.0),
        ComponentKind::Linear => net.routed_linear(pair, x, &routing),
    }
}
