mod common;

use std::collections::BTreeSet;

use common::{assign_devices, synth};
use guifl_core::partition::{compose_full, mean_chi_squared, partition_stats, FullVariant, PartitionError};
use guifl_core::{partition, Axis, Episode, PartitionSpec, Scheme};
use proptest::prelude::*;

fn device_corpus(n_per: usize, weights: &[usize], seed: u64) -> Vec<Episode> {
    let mut eps = synth(1, n_per, seed);
    assign_devices(&mut eps, weights);
    eps
}

fn scheme_strategy() -> impl Strategy<Value = Scheme> {
    prop::sample::select(vec![Scheme::Iid, Scheme::NonUniform, Scheme::Partial, Scheme::Skew])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shards_are_disjoint_covering_and_reproducible(
        n in 40usize..200,
        values in 2usize..6,
        clients in 6usize..16,
        scheme in scheme_strategy(),
        seed in 0u64..1000,
    ) {
        // A two-value PARTIAL mask leaves each client a single value, so
        // shard sizes follow the value totals there.
        let weights: Vec<usize> = if scheme == Scheme::Partial { vec![1; values] } else { (1..=values).collect() };
        let eps = device_corpus(n, &weights, seed);
        let spec = PartitionSpec::new(Axis::Device, scheme, clients, seed);
        let m = partition(&eps, &spec).unwrap();
        prop_assert_eq!(m.num_clients(), clients);
        prop_assert!(m.validate(&eps).is_ok());
        let sizes: Vec<usize> = m.shards.values().map(Vec::len).collect();
        if scheme != Scheme::Skew && !(scheme == Scheme::Partial && values == 2) {
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "unbalanced {:?}", sizes);
        }
        prop_assert_eq!(&partition(&eps, &spec).unwrap(), &m);
    }

    #[test]
    fn skew_shards_are_pure(n in 30usize..150, values in 2usize..5, extra in 0usize..6, seed in 0u64..1000) {
        let eps = device_corpus(n, &vec![1; values], seed);
        let m = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Skew, values + extra, seed)).unwrap();
        for row in m.stats.values() {
            prop_assert!(row.values().filter(|&&c| c > 0).count() <= 1);
        }
    }

    #[test]
    fn partial_clients_miss_values(n in 60usize..200, seed in 0u64..1000) {
        let eps = device_corpus(n, &[1, 1, 1, 1], seed);
        let mut spec = PartitionSpec::new(Axis::Device, Scheme::Partial, 8, seed);
        spec.excluded_per_client = 2;
        let m = partition(&eps, &spec).unwrap();
        for row in m.stats.values() {
            prop_assert!(row.values().filter(|&&c| c == 0).count() >= 2);
        }
        for v in ["dev0", "dev1", "dev2", "dev3"] {
            prop_assert!(m.stats.values().any(|r| r[v] > 0));
        }
    }

    #[test]
    fn iid_shards_track_the_corpus_mix(n in 50usize..300, clients in 2usize..10, seed in 0u64..1000) {
        let eps = device_corpus(n, &[5, 3, 2], seed);
        let m = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Iid, clients, seed)).unwrap();
        let total = eps.len() as f64;
        let global: Vec<f64> = ["dev0", "dev1", "dev2"]
            .iter()
            .map(|v| eps.iter().filter(|e| e.tag.device == *v).count() as f64 / total)
            .collect();
        for row in m.stats.values() {
            let size: usize = row.values().sum();
            for (i, v) in ["dev0", "dev1", "dev2"].iter().enumerate() {
                let expect = global[i] * size as f64;
                prop_assert!((row[*v] as f64 - expect).abs() <= 1.0 + 1e-9, "{} vs {}", row[*v], expect);
            }
        }
    }
}

#[test]
fn chi_squared_orders_the_schemes() {
    let eps = device_corpus(2500, &[6, 5, 4, 3, 2], 3);
    let chi = |scheme| {
        let mut spec = PartitionSpec::new(Axis::Device, scheme, 10, 9);
        spec.excluded_per_client = 2;
        mean_chi_squared(&partition(&eps, &spec).unwrap().stats)
    };
    let (iid, nu, partial, skew) = (chi(Scheme::Iid), chi(Scheme::NonUniform), chi(Scheme::Partial), chi(Scheme::Skew));
    assert!(iid < 1e-3, "{iid}");
    assert!(iid <= nu && nu <= partial && partial <= skew, "{iid} {nu} {partial} {skew}");
}

#[test]
fn undefined_axis_values_are_refused() {
    let eps = synth(2, 10, 1);
    let err = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::Iid, 2, 0)).unwrap_err();
    assert!(matches!(err, PartitionError::UndefinedAxisValue { axis: Axis::Device, .. }));
    let err = partition(&eps[..1], &PartitionSpec::new(Axis::Platform, Scheme::Iid, 2, 0)).unwrap_err();
    assert_eq!(err, PartitionError::TooFewEpisodes { have: 1, clients: 2 });
}

#[test]
fn full_variants_cover_three_platforms() {
    let eps = synth(3, 60, 4);
    for variant in FullVariant::ALL {
        let m = compose_full(&eps, variant, 9, 2).unwrap();
        assert_eq!(m.variant, Some(variant));
        assert_eq!(m.num_clients(), 9);
        m.validate(&eps).unwrap();
    }
    let skew = compose_full(&eps, FullVariant::PlatformSkew, 9, 2).unwrap();
    for ids in skew.shards.values() {
        let platforms: BTreeSet<_> =
            ids.iter().map(|id| eps.iter().find(|e| &e.episode_id == id).unwrap().tag.platform).collect();
        assert_eq!(platforms.len(), 1);
    }
    assert!(matches!(compose_full(&eps, FullVariant::FullIid, 10, 0), Err(PartitionError::InfeasibleSpec(_))));
}

#[test]
fn stats_rows_sum_to_one_per_client() {
    let eps = device_corpus(120, &[2, 1], 5);
    let m = partition(&eps, &PartitionSpec::new(Axis::Device, Scheme::NonUniform, 4, 5)).unwrap();
    let rows = partition_stats(&m);
    assert_eq!(rows.len(), 8);
    for c in 0..4 {
        let s: f64 = rows.iter().filter(|r| r.client_id == c).map(|r| r.proportion.unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
