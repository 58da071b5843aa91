//! Shared fixtures for the criterion benches.

use evfusion::evalbench::{build_corpus, LoadedSample, StubSource, StubSourceConfig};
use evfusion::fusion::Triplet;
use evfusion::illumination::ImageTensor;
use evfusion::synth::{generate, SynthConfig};

/// A small synthetic corpus loaded in memory.
pub fn samples(n: usize) -> Vec<LoadedSample> {
    let cfg = SynthConfig {
        n,
        ..SynthConfig::default()
    };
    generate(&cfg)
        .expect("synthetic corpus")
        .into_iter()
        .map(|s| LoadedSample {
            id: s.id,
            image: s.image,
            events: s.events,
            qa: s.qa,
        })
        .collect()
}

pub fn stub_source() -> StubSource {
    StubSource::new(&StubSourceConfig::default()).expect("stub encoders")
}

/// Training triplets for `n` samples at the given ratios.
pub fn triplets(n: usize, ratios: &[f64]) -> Vec<Triplet> {
    build_corpus(&stub_source(), &samples(n), ratios).expect("corpus")
}

pub fn frame() -> ImageTensor {
    samples(1).remove(0).image
}
