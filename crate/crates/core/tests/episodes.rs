mod common;

use std::collections::HashSet;
use std::io::Write;

use common::{episode, synth, tag};
use guifl_core::episodes::{
    carve_test_sets, clean, load_episodes, sample_test_set, write_episodes, AssumePresent, EpisodeError, KnownImages,
    RejectReason,
};
use guifl_core::{ActionKind, Platform, Source, UnifiedAction};
use proptest::prelude::*;

fn click(x: i64) -> UnifiedAction {
    UnifiedAction::at(ActionKind::Click, x, 10)
}

#[test]
fn write_then_load_is_identity() {
    let eps = synth(3, 7, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_episodes(&path, &eps).unwrap();
    let loaded = load_episodes(&path).unwrap();
    assert_eq!(loaded.episodes, eps);
    assert!(loaded.rejections.is_empty());
    let loaded_dir = load_episodes(dir.path()).unwrap();
    assert_eq!(loaded_dir.episodes, eps);
}

#[test]
fn three_good_lines_and_bad_ones() {
    let good: Vec<_> = (0..3)
        .map(|i| episode(&format!("e{i}"), tag(Source::Ac, Platform::Mobile), vec![click(i)]))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixed.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for e in &good {
        writeln!(f, "{}", serde_json::to_string(e).unwrap()).unwrap();
    }
    writeln!(f, "{{not json").unwrap();
    writeln!(f).unwrap();
    writeln!(f, "{}", serde_json::to_string(&good[0]).unwrap()).unwrap();
    let web_ac = episode("w", tag(Source::Ac, Platform::Web), vec![click(1)]);
    writeln!(f, "{}", serde_json::to_string(&web_ac).unwrap()).unwrap();
    drop(f);

    let out = load_episodes(&path).unwrap();
    assert_eq!(out.episodes, good);
    let reasons: Vec<_> = out.rejections.iter().map(|r| (r.line, r.reason)).collect();
    assert_eq!(
        reasons,
        vec![
            (Some(4), RejectReason::Malformed),
            (Some(6), RejectReason::DuplicateId),
            (Some(7), RejectReason::PlatformMismatch)
        ]
    );
}

#[test]
fn empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.jsonl");
    std::fs::write(&path, "{}\n").unwrap();
    assert!(matches!(load_episodes(&path), Err(EpisodeError::EmptyCorpus(_))));
}

#[test]
fn cleaning_reasons_and_idempotence() {
    let t = tag(Source::Ac, Platform::Mobile);
    let repeated = episode("rep", t.clone(), vec![click(1), click(1), click(2), click(2), click(2)]);
    let out_of_range = episode("oor", t.clone(), vec![click(1001)]);
    let missing_text = episode("txt", t.clone(), vec![UnifiedAction::bare(ActionKind::Type)]);
    let lost = episode("lost", t.clone(), vec![click(3)]);
    let mut gap = episode("gap", t.clone(), vec![click(1), click(2)]);
    gap.steps[1].index = 5;
    let known: HashSet<String> = [&repeated, &out_of_range, &missing_text, &gap]
        .iter()
        .flat_map(|e| e.steps.iter().map(|s| s.image_ref.clone()))
        .collect();
    let images = KnownImages(known);
    let out = clean(vec![repeated, out_of_range, missing_text, lost, gap], &images);

    assert_eq!(out.kept.len(), 1);
    let kept = &out.kept[0];
    assert_eq!(kept.steps.iter().map(|s| s.action.clone()).collect::<Vec<_>>(), vec![click(1), click(2)]);
    assert_eq!(kept.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(out.collapsed.len(), 3);
    let rejected: Vec<_> = out.rejected.iter().map(|r| (r.episode_id.clone().unwrap(), r.reason)).collect();
    assert_eq!(
        rejected,
        vec![
            ("oor".to_string(), RejectReason::ParameterOutOfRange),
            ("txt".to_string(), RejectReason::MalformedParameters),
            ("lost".to_string(), RejectReason::MissingImage),
            ("gap".to_string(), RejectReason::IndexGap),
        ]
    );

    let again = clean(out.kept.clone(), &AssumePresent);
    assert_eq!(again.kept, out.kept);
    assert!(again.rejected.is_empty() && again.collapsed.is_empty());
}

#[test]
fn reason_codes_are_snake_case() {
    let all = [
        (RejectReason::Malformed, "malformed"),
        (RejectReason::EmptyInstruction, "empty_instruction"),
        (RejectReason::NoSteps, "no_steps"),
        (RejectReason::IndexGap, "index_gap"),
        (RejectReason::BadScreenSize, "bad_screen_size"),
        (RejectReason::TerminalNotLast, "terminal_not_last"),
        (RejectReason::PlatformMismatch, "platform_mismatch"),
        (RejectReason::DuplicateId, "duplicate_id"),
        (RejectReason::MissingImage, "missing_image"),
        (RejectReason::ParameterOutOfRange, "parameter_out_of_range"),
        (RejectReason::MalformedParameters, "malformed_parameters"),
        (RejectReason::EmptyAfterCleaning, "empty_after_cleaning"),
        (RejectReason::RedundantStep, "redundant_step"),
    ];
    for (r, code) in all {
        assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{code}\""));
        assert_eq!(serde_json::from_str::<RejectReason>(&format!("\"{code}\"")).unwrap(), r);
    }
}

#[test]
fn mixed_sources_refuse_a_single_test_set() {
    let eps = vec![
        episode("a", tag(Source::Ac, Platform::Mobile), vec![click(1)]),
        episode("b", tag(Source::M2w, Platform::Web), vec![click(1)]),
    ];
    assert!(matches!(sample_test_set(eps.clone(), 1, 0), Err(EpisodeError::MixedSources(_))));
    let (test, train) = carve_test_sets(eps, |e| e.tag.source.name(), 1, 0).unwrap();
    assert_eq!((test.len(), train.len()), (2, 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn test_split_partitions_exactly(total in 1usize..60, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let eps = synth(1, total, seed % 1000);
        let n = (frac * total as f64).floor() as usize;
        let (test, train) = sample_test_set(eps.clone(), n, seed).unwrap();
        prop_assert_eq!(test.len(), n);
        prop_assert_eq!(train.len(), total - n);
        let mut ids: Vec<_> = test.iter().chain(&train).map(|e| e.episode_id.clone()).collect();
        ids.sort();
        let mut all: Vec<_> = eps.iter().map(|e| e.episode_id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
        let (test2, _) = sample_test_set(eps.clone(), n, seed).unwrap();
        prop_assert_eq!(test, test2);
        let too_many = sample_test_set(eps, total + 1, seed);
        let insufficient = matches!(too_many, Err(EpisodeError::InsufficientEpisodes { .. }));
        prop_assert!(insufficient);
    }
}
