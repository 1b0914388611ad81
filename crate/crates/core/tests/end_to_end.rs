use std::fs;
use std::path::Path;

use stopline_core::config::Deployment;
use stopline_core::eval::evaluate;
use stopline_core::framelist::{ingest_list, list_base_dir};
use stopline_core::pipeline::{run, RunOptions};
use stopline_core::redetect::{rescore_many, ThresholdOverride};
use stopline_core::store::RecordStore;
use stopline_core::synthgen::{gen_dataset, DatasetSpec, DatasetSummary, Mix};

fn generate(dir: &Path, n: usize, sigma: f64, seed: u64) -> DatasetSummary {
    let mix: Mix = "0.4,0.3,0.3".parse().unwrap();
    gen_dataset(&DatasetSpec::new(n, mix, sigma, seed), dir).unwrap()
}

fn detect(data: &DatasetSummary, work: &Path) -> RecordStore {
    let deployment = Deployment::load(&data.config_path).unwrap();
    let ingested = ingest_list(&data.list_path).unwrap();
    assert!(ingested.warnings.is_empty());
    let mut store = RecordStore::open(&work.join("store.jsonl")).unwrap();
    let options = RunOptions {
        checkpoint_dir: Some(work.join("ckpt")),
        frames_base: list_base_dir(&data.list_path),
        ..Default::default()
    };
    let out = run(&deployment, &ingested.frames, &mut store, &options).unwrap();
    assert!(out.stats.is_conserved());
    assert_eq!(out.stats.errors, 0);
    assert_eq!(out.stats.frames_seen as usize, data.labels.len());
    store
}

#[test]
fn noise_free_dataset_has_no_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&tmp.path().join("data"), 60, 0.0, 7);
    let store = detect(&data, tmp.path());
    let report = evaluate(&data.labels, store.records()).unwrap();
    assert_eq!(report.false_negatives + report.false_positives, 0, "{}", report.to_table());
    assert_eq!(report.true_positives as usize, data.counts[0]);
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(&tmp.path().join("a"), 40, 6.0, 99);
    let b = generate(&tmp.path().join("b"), 40, 6.0, 99);
    for (la, lb) in a.labels.iter().zip(&b.labels) {
        assert_eq!(la, lb);
        assert_eq!(
            fs::read(a.out_dir.join(&la.path)).unwrap(),
            fs::read(b.out_dir.join(&lb.path)).unwrap()
        );
    }
    fs::create_dir_all(tmp.path().join("wa")).unwrap();
    fs::create_dir_all(tmp.path().join("wb")).unwrap();
    detect(&a, &tmp.path().join("wa"));
    detect(&a, &tmp.path().join("wb"));
    assert_eq!(
        fs::read(tmp.path().join("wa/store.jsonl")).unwrap(),
        fs::read(tmp.path().join("wb/store.jsonl")).unwrap()
    );
}

#[test]
fn redetect_reproduces_and_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&tmp.path().join("data"), 40, 4.0, 3);
    let store = detect(&data, tmp.path());
    let deployment = Deployment::load(&data.config_path).unwrap();
    let frames = ingest_list(&data.list_path).unwrap().frames;
    let base = list_base_dir(&data.list_path);
    let ckpt = tmp.path().join("ckpt");

    // the first five frames are not seeds here (seeds come from config) so
    // every frame has a snapshot before it
    let same = rescore_many(&deployment, &ckpt, &base, &frames, &ThresholdOverride::default());
    for r in &same {
        assert!(r.error.is_none(), "{:?}", r.error);
        let stored = store.records().iter().find(|v| v.frame.path == r.frame.path);
        assert_eq!(r.violated, stored.is_some(), "{}", r.frame_id);
        if let Some(v) = stored {
            assert_eq!(v.per_line_longest_run, r.per_line_longest_run);
            assert_eq!(Some(v.mean_diff), r.mean_diff);
        }
    }

    let mut previous = usize::MAX;
    for l_th in [0.0, 50.0, 140.0, 300.0, 700.0] {
        let o = ThresholdOverride { l_th: Some(l_th), ..Default::default() };
        let flagged = rescore_many(&deployment, &ckpt, &base, &frames, &o).iter().filter(|r| r.violated).count();
        assert!(flagged <= previous, "l_th {l_th}: {flagged} > {previous}");
        previous = flagged;
    }
    assert_eq!(previous, 0);
}
