#![allow(dead_code)]

use evfusion::evalbench::LoadedSample;
use evfusion::fusion::{FusionDims, Triplet};
use evfusion::synth::{generate, SynthConfig};
use evfusion::{Rng, Tensor};

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Tensor::new(vec![rows, cols], v).unwrap()
}

pub fn random_triplet(rng: &mut Rng, dims: FusionDims, n: usize, n_dino: usize) -> Triplet {
    Triplet {
        extreme: random_tensor(rng, n, dims.d, 0.5),
        dino: random_tensor(rng, n_dino, dims.d_dino, 0.5),
        event: random_tensor(rng, n, dims.d, 0.5),
        original: random_tensor(rng, n, dims.d, 0.5),
    }
}

pub fn random_corpus(seed: u64, dims: FusionDims, len: usize) -> Vec<Triplet> {
    let mut rng = Rng::new(seed);
    (0..len).map(|_| random_triplet(&mut rng, dims, 4, 4)).collect()
}

pub fn synth_samples(n: usize) -> Vec<LoadedSample> {
    generate(&SynthConfig { n, ..SynthConfig::default() })
        .unwrap()
        .into_iter()
        .map(|s| LoadedSample {
            id: s.id,
            image: s.image,
            events: s.events,
            qa: s.qa,
        })
        .collect()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
