use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::Outcome;

const BIN: &str = env!("CARGO_BIN_EXE_patchbatch");

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Runs every command into `dir`; returns the files to compare.
fn all_commands(dir: &Path, manifest_replay: bool) -> Result<Vec<PathBuf>, String> {
    let d = |s: &str| dir.join(s).to_str().unwrap().to_string();
    run(&["gen-pair", "--width", "48", "--height", "40", "--dx", "3", "--dy", "-2", "--seed", "5", "--out-prefix", &d("p_")])?;
    let train_out = d("model.pbnet");
    let common_train = [
        "--img1", &d("p_img1.pgm"), "--img2", &d("p_img2.pgm"), "--gt", &d("p_gt.pbfl"),
        "--epochs", "3", "--pairs", "512", "--batch", "128", "--seed", "11",
    ];
    if manifest_replay {
        // Reproduce train from the first run's manifest, redirecting only the output.
        let m = dir.parent().unwrap().join("a/model.pbnet.manifest.txt");
        let m = m.to_str().unwrap();
        run(&["train", "--config", m, "--img1", &d("p_img1.pgm"), "--img2", &d("p_img2.pgm"), "--gt", &d("p_gt.pbfl"), "--out", &train_out])?;
    } else {
        let mut args = vec!["train"];
        args.extend(common_train);
        args.extend(["--out", &train_out]);
        run(&args)?;
    }
    run(&[
        "flow", "--model", &train_out, "--img1", &d("p_img1.pgm"), "--img2", &d("p_img2.pgm"), "--gt", &d("p_gt.pbfl"),
        "--radius", "8", "--cc-area", "16", "--seed", "3", "--out-prefix", &d("f_"),
    ])?;
    run(&[
        "synth", "--nc-list", "4,6", "--tau-list", "3", "--reps", "2", "--epochs", "2", "--dim", "16", "--n-train", "400",
        "--n-test", "400", "--hidden", "16", "--depth", "2", "--out-dim", "8", "--batch", "64", "--margins", "1,3",
        "--tune-epochs", "1", "--seed", "7", "--out-dir", &d("synth"),
    ])?;
    Ok([
        "p_img1.pgm", "p_img2.pgm", "p_gt.pbfl", "model.pbnet", "model.pbnet.loss.csv", "f_sparse.pbfl", "f_dense.pbfl",
        "f_costs.csv", "f_metrics.csv", "synth/rows.csv", "synth/summary.csv", "synth/auc.svg",
    ]
    .iter()
    .map(PathBuf::from)
    .collect())
}

pub fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, replay) in [("a", false), ("b", false), ("c", true)] {
        let dir = root.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        match all_commands(&dir, replay) {
            Ok(files) => outputs.push((dir, files)),
            Err(e) => return Outcome::new(false, e),
        }
    }
    let (base, files) = &outputs[0];
    let mut differing = Vec::new();
    for (dir, _) in &outputs[1..] {
        for f in files {
            let (x, y) = (fs::read(base.join(f)), fs::read(dir.join(f)));
            match (x, y) {
                (Ok(x), Ok(y)) if x == y => {}
                _ => differing.push(format!("{}/{}", dir.file_name().unwrap().to_string_lossy(), f.display())),
            }
        }
    }
    let manifests = ["p_manifest.txt", "model.pbnet.manifest.txt", "f_manifest.txt", "synth/manifest.txt"]
        .iter()
        .all(|m| base.join(m).is_file());
    Outcome::new(
        differing.is_empty() && manifests,
        format!(
            "gen-pair/train/flow/synth run twice plus train replayed from its manifest: {} files compared, differing {:?}; manifests written: {manifests}",
            files.len() * 2,
            differing
        ),
    )
}
