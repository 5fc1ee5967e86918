//! Heightfield scenes, sonar frame rendering and basic-motion datasets.

pub mod dataset;
pub mod render;
pub mod terrain;

pub use dataset::{
    gen_dataset, generate_triplet, DatasetManifest, DatasetSpec, FrameRecord, MotionRange,
    MotionTag, Placement, SourceRecord, SourceRole, SourceSample, Split, TripletRecord,
    TripletSample, MANIFEST_FILE,
};
pub use render::{render, RenderOptions, Rendered};
pub use terrain::{gen_terrain, Terrain, TerrainParams};
