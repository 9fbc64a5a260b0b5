use std::path::Path;

use blendsync::manifest::{ingest, write_manifest, Label, Split};
use blendsync::pipeline::run_pipeline;
use blendsync::pseudo_forgery::PairConfig;
use blendsync::selftest::{selftest_config, write_corpus, CorpusSpec};
use blendsync::Error;

fn tiny_corpus(dir: &Path) -> std::path::PathBuf {
    let spec = CorpusSpec { frames_per_video: 2, train_videos: 6, eval_real: 3, eval_fakes_per_group: 3, ..CorpusSpec::small(5) };
    write_corpus(dir, &spec, &PairConfig::default()).unwrap()
}

fn quick_config() -> blendsync::config::RunConfig {
    let mut cfg = selftest_config(5);
    cfg.visual.steps = 3;
    cfg.avsync.train.steps = 3;
    cfg
}

#[test]
fn rerun_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = ingest(&tiny_corpus(&tmp.path().join("data"))).unwrap();
    let cfg = quick_config();
    let a = run_pipeline::<f64>(&cfg, &manifest, &tmp.path().join("a")).unwrap();
    let b = run_pipeline::<f64>(&cfg, &manifest, &tmp.path().join("b")).unwrap();
    assert_eq!(a.report, b.report);
    let read = |p: &Path| std::fs::read(p).unwrap();
    for (x, y) in [(&a.report_csv, &b.report_csv), (&a.fused, &b.fused), (&a.scores, &b.scores), (&a.calibration, &b.calibration)] {
        assert_eq!(read(x), read(y), "{}", x.display());
    }
    assert!(String::from_utf8(read(&a.report_csv)).unwrap().starts_with(&format!("# config_hash: {}\n", cfg.hash())));
}

#[test]
fn train_fake_record_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tiny_corpus(tmp.path());
    let mut m = ingest(&path).unwrap();
    let victim = m.records.iter_mut().find(|r| r.split == Split::Train).unwrap();
    victim.label = Label::Fake;
    victim.manipulation = "faceswap".into();
    let id = victim.video_id.clone();
    write_manifest(&path, &m.records).unwrap();
    match ingest(&path) {
        Err(Error::Manifest(problems)) => assert!(problems.iter().any(|p| p.contains(&id)), "{problems:?}"),
        other => panic!("expected a manifest error, got {other:?}"),
    }
}

#[test]
fn bad_fseq_magic_reports_offset_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tiny_corpus(tmp.path());
    let m = ingest(&path).unwrap();
    let fseq = m.resolve(&m.records[0].audio_features);
    let mut bytes = std::fs::read(&fseq).unwrap();
    bytes[..4].copy_from_slice(b"FSQX");
    std::fs::write(&fseq, bytes).unwrap();
    match ingest(&path) {
        Err(Error::Manifest(problems)) => {
            let hit = problems.iter().find(|p| p.contains(&m.records[0].video_id)).expect("record named");
            assert!(hit.contains("at byte 0"), "{hit}");
        }
        other => panic!("expected a manifest error, got {other:?}"),
    }
}

#[test]
fn empty_eval_split_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = ingest(&tiny_corpus(&tmp.path().join("data"))).unwrap();
    m.records.retain(|r| r.split == Split::Train);
    let out = tmp.path().join("out");
    match run_pipeline::<f64>(&quick_config(), &m, &out) {
        Err(Error::Manifest(problems)) => assert!(problems.iter().any(|p| p.contains("eval split is empty"))),
        other => panic!("expected a manifest error, got {other:?}"),
    }
    assert!(!out.join("checkpoints").exists());
}
