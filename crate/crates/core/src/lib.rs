//! Volume handling and CBCT simulation for the multi-task segmentation
//! workbench: grids and label masks, the raw+JSON file format, synthetic
//! phantoms, cone-beam forward projection, FDK reconstruction and patch
//! tiling.

pub mod error;
pub mod fdk;
pub mod io;
pub mod patching;
pub mod phantom;
pub mod projector;
pub mod volume;

pub use error::{CoreError, Result};
pub use fdk::{fdk_reconstruct, nrmse};
pub use io::{load_labels, load_scalar, load_volume, save_labels, save_volume, AnyVolume, VolumeMeta};
pub use patching::PatchSpec;
pub use phantom::make_phantom;
pub use projector::{simulate_projections, ConeBeamGeometry, ProjectionSet};
pub use volume::{downsample2, downsample2_labels, normalize_intensity, Grid, LabelVolume, Volume3};
