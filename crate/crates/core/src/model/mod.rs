//! Segmentor and critic networks.

pub mod checkpoint;
mod critic;
mod layers;
mod network;
mod segmentor;
pub mod spec;

pub use critic::CriticNetwork;
pub use layers::{Batch, Layer, NormLayer};
pub use network::{Backward, Network, Trace};
pub use segmentor::SegmentorNetwork;
pub use spec::{LayerKind, LayerSpec};

/// Learnable scalars of any network.
pub fn param_count<T: crate::Scalar>(network: &Network<T>) -> usize {
    network.param_count()
}

/// Input extents must survive four 2x poolings.
pub fn check_resolution(h: usize, w: usize) -> crate::Result<()> {
    let m = 1usize << spec::DEPTH;
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return Err(crate::ScanError::shape(format!("input {h}x{w} must be a positive multiple of {m}")));
    }
    Ok(())
}
