//! Scan preprocessing and the stochastic distortion suite used to build the
//! two views of every training slice.

mod augment;
mod load;
mod preprocess;

pub use augment::{
    apply_transform, bias_field, bias_field_value, black_patches, black_patches_at, elastic,
    elastic_displacement, elastic_with_grid, intensity_shift, negative, rotate, sample_elastic_grid, sample_transform,
    TransformKind, TransformParams, TransformVector, BIAS_COEFFS, ELASTIC_GRID, ENABLE_PROB,
    PATCH_SIZE,
};
pub use load::{load_split, LoadedScan};
pub use preprocess::{central_slice, clip_outliers, preprocess, quantile, zscore, PreprocConfig};
