//! Layer descriptions, parameter storage, the forward interpreter shared by
//! all networks, and checkpoint persistence.

mod checkpoint;
mod forward;
mod layer;
mod store;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use forward::{activation, forward, Bound, BoundOutcome, Mode};
pub use layer::{Activation, LayerKind, LayerSpec, Network};
pub use store::{
    init_params, init_params_with_std, BatchStat, NetworkKind, ParameterStore, BN_EPS,
    BN_MOMENTUM, INIT_STD,
};

use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Channel-wise concatenation of decoder and encoder features.
pub fn concat_skip(g: &mut Graph, decoder: Var, encoder: Var) -> Result<Var> {
    g.concat_channels(decoder, encoder)
}

/// `mean(log p)`, or `mean(log(1 - p))` when `complement` is set, with `p`
/// clamped into `[PROB_EPS, 1 - PROB_EPS]` first.
pub fn mean_log_prob(g: &mut Graph, p: Var, complement: bool) -> Result<Var> {
    use crate::tensor::PROB_EPS;
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let p = if complement {
        let neg = g.scale(p, -1.0)?;
        g.add_scalar(neg, 1.0)?
    } else {
        p
    };
    let l = g.log(p)?;
    g.mean(l, None)
}
