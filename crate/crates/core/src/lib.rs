//! Cross-mutual-information maps.
//!
//! Mutual information between a reference and a floating label image at
//! every integer displacement, computed from frequency-domain correlations
//! of level sets, and a global rigid alignment built on top of it.

pub mod align;
pub mod bench;
pub mod cmif;
pub mod domain;
pub mod error;
pub mod eval;
pub mod grid;
pub mod mapio;
pub mod oracle;
pub mod quantize;
pub mod synth;
pub mod transform;
pub mod xcorr;

pub use align::{
    align, align_prepared, corner_error, gated_argmax, global_align, make_angle_grid, refine,
    warp_nn, zero_pad, AlignmentConfig, AlignmentInputs, AlignmentReport, AlignmentResult, Stage,
};
pub use cmif::{
    cmif_map, count_families, entropy_maps, gated_peak, joint_count_maps, marginal_count_maps,
    overlap_map, swmi_map, CmifMap, CountFamilies, EntropyMaps, GatedPeak, ReferenceCache,
};
pub use domain::{CountMap, Displacement, DisplacementDomain};
pub use error::{Error, Result};
pub use grid::{make_circular_mask, Grid, GridShape, IntensityImage, LabelImage, Mask, WeightMask};
pub use oracle::{direct_cmif_map, scalar_mi};
pub use quantize::{fit_kmeans, quantize, KMeansModel, KMeansParams};
pub use transform::RigidTransform;
