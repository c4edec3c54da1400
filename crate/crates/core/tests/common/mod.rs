#![allow(dead_code)]

use guifl_core::episodes::{Os, NA};
use guifl_core::local_train::gen_synthetic;
use guifl_core::{Axis, Episode, Platform, Source, SourceTag, Step, SynthSpec, UnifiedAction};

pub fn synth(num_values: usize, episodes_per_value: usize, seed: u64) -> Vec<Episode> {
    gen_synthetic(&SynthSpec {
        num_values,
        episodes_per_value,
        feature_dim: 16,
        label_noise: 0.05,
        separation: 4.0,
        seed,
        axis: Axis::Platform,
    })
    .unwrap()
}

pub fn tag(source: Source, platform: Platform) -> SourceTag {
    SourceTag { source, platform, os: Os::Na, device: NA.into(), app_category: NA.into() }
}

pub fn episode(id: &str, tag: SourceTag, actions: Vec<UnifiedAction>) -> Episode {
    Episode {
        episode_id: id.into(),
        instruction: format!("task {id}"),
        tag,
        steps: actions
            .into_iter()
            .enumerate()
            .map(|(index, action)| Step {
                index,
                image_ref: format!("img/{id}/{index}.png"),
                screen_w: 1000,
                screen_h: 2000,
                action,
            })
            .collect(),
    }
}

/// Relabels episode `i` with device `dev{weights-bucket}` so device shares
/// follow `weights` (integers, cycled over the corpus).
pub fn assign_devices(eps: &mut [Episode], weights: &[usize]) {
    let cycle: Vec<usize> = weights.iter().enumerate().flat_map(|(d, &w)| std::iter::repeat_n(d, w)).collect();
    for (i, e) in eps.iter_mut().enumerate() {
        e.tag.device = format!("dev{}", cycle[i % cycle.len()]);
    }
}
