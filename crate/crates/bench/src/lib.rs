//! Shared fixtures for the benchmarks.

use fls_core::simulator::{gen_terrain, generate_triplet, DatasetSpec, MotionTag, TerrainParams, TripletSample};

/// One rendered roll triplet over a fixed terrain.
pub fn roll_triplet() -> TripletSample {
    let terrain = gen_terrain(&TerrainParams::with_seed(11)).expect("terrain parameters are valid");
    let spec = DatasetSpec::new(MotionTag::Wx, 1, 3);
    generate_triplet(&terrain, &spec, 0).expect("triplet renders")
}
