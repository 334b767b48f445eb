#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmpyramid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mmpyramid")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "mmpyramid {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, fs::read(&path).expect("read file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// A small synthetic dataset in `<dir>/data/{train,test}`.
pub fn generate(dir: &Path, task: &str, seed: u64) {
    let seed = seed.to_string();
    run_ok(
        dir,
        &[
            "generate", "--task", task, "--seed", &seed, "--num-videos", "12", "--test-videos", "4",
            "--segments", "8", "--dim", "6", "--classes", "3", "--out", "data",
        ],
    );
}

/// A fast config reading `data/` and writing `run/`.
pub fn write_config(dir: &Path, task: &str, epochs: usize) -> PathBuf {
    let path = dir.join(format!("{task}.cfg"));
    let text = format!(
        "task={task}\n\
         data.train_dir=data/train\n\
         data.test_dir=data/test\n\
         output.dir=run\n\
         model.feature_dim=8\n\
         model.num_units=2\n\
         model.window_sizes=1,2\n\
         model.num_heads=2\n\
         model.ffn_dim=16\n\
         train.epochs={epochs}\n\
         train.batch_size=4\n"
    );
    fs::write(&path, text).expect("write config");
    path
}
