//! Shared inputs for the benchmarks: a synthetic corpus, a partition over
//! it and a batch of client updates.

use guifl_core::fl::EpisodeIndex;
use guifl_core::local_train::gen_synthetic;
use guifl_core::{
    partition, Axis, ClientUpdate, Episode, ParamVector, PartitionManifest, PartitionSpec, Scheme, SynthSpec,
    ToyModel,
};

pub const FEATURE_DIM: usize = 64;

pub struct Fixture {
    pub episodes: Vec<Episode>,
    pub manifest: PartitionManifest,
}

impl Fixture {
    /// Three platforms with `per_value` episodes each, split IID over
    /// `clients` clients.
    pub fn new(per_value: usize, clients: usize) -> Self {
        let episodes = gen_synthetic(&SynthSpec {
            num_values: 3,
            episodes_per_value: per_value,
            feature_dim: FEATURE_DIM,
            label_noise: 0.05,
            separation: 4.0,
            seed: 1,
            axis: Axis::Platform,
        })
        .expect("valid synthetic spec");
        let manifest = partition(&episodes, &PartitionSpec::new(Axis::Platform, Scheme::Iid, clients, 1))
            .expect("enough episodes");
        Fixture { episodes, manifest }
    }

    pub fn index(&self) -> EpisodeIndex<'_> {
        EpisodeIndex::new(&self.episodes)
    }
}

/// `n` updates of toy-model size with deterministic contents.
pub fn updates(n: usize) -> Vec<ClientUpdate> {
    let dim = ToyModel::param_count(FEATURE_DIM);
    (0..n)
        .map(|c| {
            let delta: Vec<f64> = (0..dim).map(|i| ((i * 31 + c * 17) % 97) as f64 / 97.0 - 0.5).collect();
            ClientUpdate {
                client_id: c as u32,
                delta: ParamVector::from_vec(delta).expect("finite"),
                num_samples: 10 + c,
                control_delta: None,
            }
        })
        .collect()
}
