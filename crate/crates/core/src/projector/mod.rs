//! Cone-beam DRR projection, a procedural thoracic phantom and an FPD image
//! simulator.

mod drr;
mod fpd;
mod phantom;
mod volume;

pub use drr::{
    normalize_ray_sums, project_drr, ray_box, ray_sum, ProjectionGeometry, MAX_ROLL_DEG,
};
pub use fpd::{
    gaussian_blur, gaussian_kernel, overlay_offsets, simulate_fpd, FpdSimSpec, MAX_SHIFT_MM,
};
pub use phantom::{make_phantom, Ellipsoid, PhantomSpec, RibSpec, Sphere};
pub use volume::{
    hu_to_attenuation, AttenuationVolume, CtVolume, VolumeGrid, HU_AIR, HU_MAX, HU_MIN,
};

/// Default attenuation of water per millimetre.
pub const MU_WATER: f64 = 0.02;
