use std::path::Path;
use std::process::{Command, Output};

use featcodec::feature::{read_stream, read_stream_json};
use featcodec::local::project_stream;

fn featcodec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featcodec"))
        .current_dir(dir)
        .env_remove("FEATCODEC_CODEBOOK_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = featcodec(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--descriptor-length", "128", "--min-features", "10", "--max-features", "20"];

fn synth(dir: &Path, out: &str, seed: &str) {
    let mut args = vec!["synth", "--seed", seed, "--frames", "10", "--out", out];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a.bfs", "7");
    synth(dir.path(), "b.bfs", "7");
    synth(dir.path(), "c.bfs", "8");
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.bfs"), read("b.bfs"));
    assert_ne!(read("a.bfs"), read("c.bfs"));
}

#[test]
fn encode_decode_returns_projected_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "train.bfs", "1");
    synth(d, "test.bfs", "2");
    ok(d, &["train-local", "--train", "train.bfs", "--k", "32", "--out", "cb.bfcb"]);
    for mode in ["intra", "inter", "auto"] {
        let report = ok(d, &["encode", "--stream", "test.bfs", "--codebook", "cb.bfcb", "--k", "32", "--mode", mode, "--out", "t.bfe"]);
        assert!(report.contains("bits/feature"), "{report}");
        ok(d, &["decode", "--input", "t.bfe", "--codebook", "cb.bfcb", "--out", "t.json"]);
        let input = read_stream(d.join("test.bfs")).unwrap();
        let order: Vec<usize> = (0..128).collect();
        assert_eq!(read_stream_json(d.join("t.json")).unwrap(), project_stream(&input, &order, 32).unwrap());
    }
}

#[test]
fn codebook_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "s.bfs", "3");
    let books = d.join("books");
    std::fs::create_dir(&books).unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_featcodec"))
            .current_dir(d)
            .env("FEATCODEC_CODEBOOK_DIR", &books)
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["train-local", "--train", "s.bfs", "--k", "16"]);
    assert!(books.join("local-k16.bfcb").exists());
    run(&["encode", "--stream", "s.bfs", "--k", "16", "--out", "s.bfe"]);
    run(&["decode", "--input", "s.bfe", "--k", "16", "--out", "back.bfs"]);
}

#[test]
fn sweep_over_three_k_values_gives_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["sweep", "--grid", "k=8,64,512", "--frames", "6", "--out", "sweep.csv"]);
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("experiment,mode,k,delta,gop"), "{}", lines[0]);
    assert_eq!(lines.len() - 1, 3, "{text}");
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.ini"),
        "[global]\njobs = 2\n\n[synth]\nseed = 7\nframes = 4\ndescriptor-length = 64\nmin-features = 5\nmax-features = 5\n",
    )
    .unwrap();
    ok(d, &["synth", "--config", "run.ini", "--out", "from_file.bfs"]);
    ok(d, &["synth", "--seed", "7", "--frames", "4", "--descriptor-length", "64", "--min-features", "5", "--max-features", "5", "--out", "explicit.bfs"]);
    ok(d, &["--config", "run.ini", "synth", "--frames", "2", "--out", "override.bfs"]);
    assert_eq!(std::fs::read(d.join("from_file.bfs")).unwrap(), std::fs::read(d.join("explicit.bfs")).unwrap());
    assert_eq!(read_stream(d.join("override.bfs")).unwrap().frames.len(), 2);

    std::fs::write(d.join("bad.ini"), "[synth]\nno-such-flag = 1\n").unwrap();
    let out = featcodec(d, &["synth", "--config", "bad.ini", "--out", "x.bfs"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn errors_are_single_classified_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let usage = featcodec(d, &["encode", "--stream", "s.bfs", "--k", "8", "--out", "x"]);
    assert_eq!(usage.status.code(), Some(2));
    let data = featcodec(d, &["decode", "--input", "missing.bfe", "--codebook", "missing.bfcb", "--out", "x.bfs"]);
    assert_eq!(data.status.code(), Some(1));
    for out in [usage, data] {
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error["), "{err}");
    }
    std::fs::write(d.join("junk.bfe"), b"not a bitstream").unwrap();
    synth(d, "s.bfs", "1");
    ok(d, &["train-local", "--train", "s.bfs", "--k", "8", "--out", "cb.bfcb"]);
    let corrupt = featcodec(d, &["decode", "--input", "junk.bfe", "--codebook", "cb.bfcb", "--out", "x.bfs"]);
    assert_eq!(corrupt.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&corrupt.stderr).starts_with("error[format_error]"));
}

#[test]
fn bovw_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "s.bfs", "4");
    ok(d, &["dict-learn", "--train", "s.bfs", "--words", "16", "--out", "d.bfdc"]);
    ok(d, &["train-bovw", "--dict", "d.bfdc", "--train", "s.bfs", "--delta", "0.1", "--out", "b.bfcb"]);
    let report = ok(d, &["bovw-encode", "--stream", "s.bfs", "--dict", "d.bfdc", "--codebook", "b.bfcb", "--mode", "inter", "--out", "g.bge"]);
    assert!(report.contains("bytes/query"), "{report}");
    ok(d, &["bovw-decode", "--input", "g.bge", "--codebook", "b.bfcb", "--out", "g.csv"]);
    let csv = std::fs::read_to_string(d.join("g.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let mismatch = featcodec(d, &["bovw-encode", "--stream", "s.bfs", "--dict", "d.bfdc", "--codebook", "b.bfcb", "--delta", "0.2", "--out", "g.bge"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn evaluation_commands_report_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "planar", "--frames", "6", "--seed", "2", "--out", "p.bfs", "--truth", "t.csv"]);
    let h = ok(d, &["eval-homography", "--stream", "p.bfs", "--truth", "t.csv", "--errors", "e.csv"]);
    assert!(h.starts_with("precision"), "{h}");
    assert_eq!(std::fs::read_to_string(d.join("e.csv")).unwrap().lines().count(), 6);
    let missing = featcodec(d, &["synth", "--kind", "planar", "--out", "p.bfs"]);
    assert_eq!(missing.status.code(), Some(2));

    let r = ok(d, &[
        "eval-retrieval", "--images", "40", "--clusters", "4", "--words", "32", "--query-frames", "3",
        "--delta", "0.05", "--per-query", "q.csv", "--relevance-out", "rel.json",
    ]);
    assert!(r.starts_with("MAP") && r.contains("bytes/query"), "{r}");
    assert!(featcodec::eval::read_relevance(d.join("rel.json")).unwrap().len() >= 4);
}
