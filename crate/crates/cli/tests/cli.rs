use std::path::Path;
use std::process::{Command, Output};

use blendsync::formats::{write_scores, ScoreRow};
use blendsync::fusion::{Branch, CalibrationParams};
use blendsync::pseudo_forgery::PairConfig;
use blendsync::selftest::{selftest_config, write_corpus, CorpusSpec};

fn blendsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blendsync"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn corpus(dir: &Path) -> String {
    let spec = CorpusSpec { frames_per_video: 2, train_videos: 6, eval_real: 3, eval_fakes_per_group: 3, ..CorpusSpec::small(9) };
    write_corpus(dir, &spec, &PairConfig::default()).unwrap().display().to_string()
}

#[test]
fn ingest_check_reports_counts_and_format_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(tmp.path());
    let ok = blendsync(&["ingest-check", "--manifest", &manifest]);
    assert!(ok.status.success(), "{}", text(&ok.stderr));
    assert!(text(&ok.stdout).contains("train: 6 real"), "{}", text(&ok.stdout));

    let fseq = std::fs::read_dir(tmp.path().join("features"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "fseq"))
        .expect("corpus has FSEQ files");
    let mut bytes = std::fs::read(&fseq).unwrap();
    bytes[0] = b'X';
    std::fs::write(&fseq, bytes).unwrap();
    let bad = blendsync(&["ingest-check", "--manifest", &manifest]);
    assert!(!bad.status.success());
    assert!(text(&bad.stderr).contains("at byte 0"), "{}", text(&bad.stderr));
}

fn score_file(path: &Path, hash: &str, branch: Branch) {
    let rows = vec![
        ScoreRow { video_id: "a".into(), branch, raw_score: 0.2 },
        ScoreRow { video_id: "b".into(), branch, raw_score: 0.7 },
    ];
    write_scores(path, hash, &rows).unwrap();
}

#[test]
fn fuse_rejects_mixed_config_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let (fb, av) = (tmp.path().join("fb.csv"), tmp.path().join("av.csv"));
    score_file(&fb, "00000000000000aa", Branch::Fb);
    score_file(&av, "00000000000000bb", Branch::Av);
    let calib = tmp.path().join("calibration.txt");
    std::fs::write(&calib, CalibrationParams::new(0.0, 1.0, 1e-3).unwrap().to_text("00000000000000aa")).unwrap();
    let out = tmp.path().join("out").display().to_string();
    let o = blendsync(&[
        "fuse",
        "--out",
        &out,
        "--calibration",
        &calib.display().to_string(),
        "--scores",
        &fb.display().to_string(),
        &av.display().to_string(),
    ]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("config hash mismatch"), "{}", text(&o.stderr));
}

#[test]
fn run_then_report_from_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(&tmp.path().join("data"));
    let mut cfg = selftest_config(9);
    cfg.visual.steps = 2;
    cfg.avsync.train.steps = 2;
    let cfg_path = tmp.path().join("run.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).unwrap();
    let out = tmp.path().join("out");
    let common = ["--config", cfg_path.to_str().unwrap(), "--manifest", &manifest, "--out", out.to_str().unwrap()];

    let run = blendsync(&[&["run"], &common[..]].concat());
    assert!(run.status.success(), "{}", text(&run.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_hash: {}\n", cfg.hash())));

    let report = blendsync(&[&["report"], &common[..]].concat());
    assert!(report.status.success(), "{}", text(&report.stderr));
    let shown = text(&report.stdout);
    for needle in ["Fused", "rtvc", "wav2lip", "faceswap"] {
        assert!(shown.contains(needle), "{needle} missing from\n{shown}");
    }
}

#[test]
fn adapt_runs_the_template_per_video() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = tmp.path().join("inputs.txt");
    std::fs::write(&inputs, "v1,/data/one.mp4\n# skipped\nv2,/data/two.mp4\n").unwrap();
    let out = tmp.path().join("out");
    let o = blendsync(&[
        "adapt",
        "--out",
        out.to_str().unwrap(),
        "--inputs",
        inputs.to_str().unwrap(),
        "--command",
        "echo {video_id} {input} > {out_dir}/seen.txt",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("v1/seen.txt")).unwrap(), "v1 /data/one.mp4\n");
    assert_eq!(std::fs::read_to_string(out.join("v2/seen.txt")).unwrap(), "v2 /data/two.mp4\n");
}
