use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn svit(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_svit"));
    cmd.args(args).current_dir(dir).env_remove("SVIT_THREADS");
    if let Some(t) = threads {
        cmd.env("SVIT_THREADS", t);
    }
    cmd.output().expect("svit runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bad_arguments_exit_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "").unwrap();
    for args in [
        vec!["eval", "--config", "c.cfg", "--out", "e"],
        vec!["frobnicate"],
        vec!["train", "--config", "c.cfg"],
        vec!["eval", "--config", "c.cfg", "--out", "e", "--checkpoint", "m.svck", "--views", "3"],
    ] {
        let o = svit(dir.path(), &args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).to_lowercase().contains("usage"), "{args:?}");
    }
    let o = svit(dir.path(), &["gen-data", "--out", "d"], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SVIT_THREADS"));
}

#[test]
fn runtime_failures_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "").unwrap();
    fs::write(dir.path().join("bad.cfg"), "colour = red\n").unwrap();
    fs::write(dir.path().join("junk.svck"), "not a checkpoint").unwrap();
    for args in [
        vec!["eval", "--config", "c.cfg", "--out", "e", "--checkpoint", "missing.svck"],
        vec!["eval", "--config", "c.cfg", "--out", "e", "--checkpoint", "junk.svck"],
        vec!["train", "--config", "bad.cfg", "--out", "t"],
        vec!["inspect-haog", "nowhere.jsonl"],
    ] {
        let o = svit(dir.path(), &args, None);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn gen_data_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "num_images = 5\nnum_clips = 2\n").unwrap();
    let o = svit(dir.path(), &["gen-data", "--config", "c.cfg", "--seed", "9", "--out", "d"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("d/clips/clip_0001.svt").exists());
    let o = svit(dir.path(), &["inspect-haog", "d"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("5 valid records"), "{out}");
    assert!(out.contains("left hand"), "{out}");

    let ann = dir.path().join("d/images/annotations.jsonl");
    let mut text = fs::read_to_string(&ann).unwrap();
    text.push_str("{\"image\":\"x.svt\",\"boxes\":[null,null,null,null],\"exists\":[1,0,0,0],\"contact\":[0,0]}\n");
    fs::write(&ann, text).unwrap();
    let o = svit(dir.path(), &["inspect-haog", "d"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_on_a_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "gradcheck_samples = 40\n").unwrap();
    let o = svit(dir.path(), &["gradcheck", "--config", "c.cfg", "--seed", "2"], Some("2"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("over 40 coordinates"));
}
