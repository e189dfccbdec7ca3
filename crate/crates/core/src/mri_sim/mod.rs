//! Synthetic MR-like data: unitary FFT, the coil forward model with k-space
//! noise, phantoms, and dataset manifests.

pub mod dataset;
pub mod fft;
pub mod forward;
pub mod phantom;

pub use dataset::{
    ingest_dir, item_id, simulate_dataset, split_items, Candidate, DatasetManifest,
    ManifestItem, PhantomSpec, SourceKind, Split, MANIFEST_FILE,
};
pub use fft::{fft2, high_frequency_fraction, ifft2, KSpace};
pub use forward::{simulate_measurement, synthetic_coils, CoilMap};
pub use phantom::{make_phantom, PhantomKind};
