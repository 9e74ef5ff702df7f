use std::fs;
use std::path::{Path, PathBuf};

use attrsym::numgrad::Checkpoint;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("attrsym").chain(args.iter().copied());
    let code = attrsym::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--out", p(dir), "--per-pair", "8"];
    args.extend_from_slice(extra);
    let (code, _, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    dir.join("manifest.json")
}

fn trained(root: &Path) -> (PathBuf, PathBuf) {
    let ds = synth(&root.join("ds"), &[]);
    let run = root.join("run");
    let (code, out, err) = cli(&["train", "--dataset", p(&ds), "--epochs", "2", "--out", p(&run)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("trained 2 epochs"), "{out}");
    (ds, run.join("last.ckpt"))
}

#[test]
fn synth_output_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &["--multi-label", "0.3", "--correlate", "0,1,0.5,0.7"]);
    synth(&b, &["--multi-label", "0.3", "--correlate", "0,1,0.5,0.7"]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, ckpt) = trained(tmp.path());
    let (code, out, err) = cli(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&ds), "--json"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["split"], "test");
    assert!(v["obj_top1"].as_f64().unwrap() >= 0.0);

    let dir = tmp.path().join("eval");
    let (code, _, err) = cli(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&ds), "--out", p(&dir)]);
    assert_eq!(code, 0, "{err}");
    assert!(dir.join("eval.json").exists());
}

#[test]
fn eval_rejects_checkpoint_from_other_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(tmp.path());
    let other = synth(&tmp.path().join("other"), &["--attrs", "7"]);
    let (code, _, err) = cli(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&other)]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn infer_with_twin_networks_is_undecided() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(tmp.path());
    // copy the coupling network over the decoupling one so both move f equally
    let mut ck = Checkpoint::<f64>::load(&ckpt).unwrap();
    let con: Vec<_> = ck.entries.iter().filter(|e| e.name.starts_with("con.")).cloned().collect();
    for e in ck.entries.iter_mut().filter(|e| e.name.starts_with("decon.")) {
        let twin = con.iter().find(|c| c.name == e.name["de".len()..]).unwrap();
        e.value = twin.value.clone();
    }
    let twin = tmp.path().join("twin.ckpt");
    ck.save(&twin).unwrap();

    let feats = tmp.path().join("f.txt");
    let row: Vec<String> = (0..32).map(|i| format!("{}", (i as f64 * 0.37).sin())).collect();
    fs::write(&feats, row.join(" ") + "\n").unwrap();
    let (code, out, err) = cli(&["infer", "--checkpoint", p(&twin), "--features", p(&feats)]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<&str> = out.lines().skip(2).take(6).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let cols: Vec<&str> = r.split_whitespace().collect();
        assert_eq!(&cols[1..], &["0.000000", "0.500000", "yes"], "{r}");
    }
}

#[test]
fn batched_infer_matches_single_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, ckpt) = trained(tmp.path());
    let rows: Vec<String> = (0..3)
        .map(|k| (0..32).map(|i| format!("{}", ((i * (k + 2)) as f64 * 0.11).cos())).collect::<Vec<_>>().join(" "))
        .collect();
    let all = tmp.path().join("all.txt");
    fs::write(&all, rows.join("\n")).unwrap();
    let (code, batched, err) = cli(&["infer", "--checkpoint", p(&ckpt), "--dataset", p(&ds), "--features", p(&all)]);
    assert_eq!(code, 0, "{err}");
    let blocks: Vec<&str> = batched.split("\n\n").filter(|b| !b.is_empty()).collect();
    assert_eq!(blocks.len(), 3);
    for (k, row) in rows.iter().enumerate() {
        let one = tmp.path().join(format!("{k}.txt"));
        fs::write(&one, row).unwrap();
        let (code, single, _) = cli(&["infer", "--checkpoint", p(&ckpt), "--dataset", p(&ds), "--features", p(&one)]);
        assert_eq!(code, 0);
        let body = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert_eq!(body(blocks[k]), body(single.trim_end()));
    }
}

#[test]
fn retrieve_lists_top_k() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, ckpt) = trained(tmp.path());
    let base = ["retrieve", "--checkpoint", p(&ckpt), "--dataset", p(&ds)];
    let edit = ["--remove", "attr0", "--add", "1", "--top-k", "3"];
    let (code, out, err) = cli(&[&base[..], &["--record", "o0_a0_0"], &edit[..]].concat());
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 4, "{out}");

    let (code, _, _) = cli(&[&base[..], &["--record", "missing"], &edit[..]].concat());
    assert_eq!(code, 1);
}

#[test]
fn config_file_then_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(&tmp.path().join("ds"), &[]);
    let cfg = tmp.path().join("c.txt");
    fs::write(&cfg, "epochs = 5\nbatch_size = 16\n").unwrap();
    let run = tmp.path().join("run");
    let (code, out, err) =
        cli(&["train", "--dataset", p(&ds), "--config", p(&cfg), "--set", "epochs=1", "--out", p(&run)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("trained 1 epochs"), "{out}");
    let written = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(written.contains("batch_size = 16"), "{written}");

    let (code, _, _) = cli(&["train", "--dataset", p(&ds), "--config", p(&cfg), "--preset", "apy"]);
    assert_eq!(code, 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["synth", "--no-such-flag"]).0, 1);
    assert_eq!(cli(&["frobnicate"]).0, 1);
    assert_eq!(cli(&["train", "--epochs", "3"]).0, 1);
    assert_eq!(cli(&["--help"]).0, 0);
}

#[test]
fn missing_dataset_exits_two() {
    let (code, _, err) = cli(&["train", "--dataset", "/nonexistent/manifest.json"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn gradcheck_passes() {
    let (code, out, err) = cli(&["gradcheck", "--seeds", "1", "--mode", "single"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().skip(1).all(|l| l.ends_with("yes")), "{out}");
}
