use std::path::{Path, PathBuf};
use std::process::Command;

use sclmkb::harness::load_csi;

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn sclmkb(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sclmkb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &std::process::Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn sweep_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sclmkb(&["sweep", "--config", cfg, "--seed", "11"], out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = std::fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(String::from_utf8(ma.clone()).unwrap().lines().count(), 4);

    let c = dir.path().join("c");
    sclmkb(&["sweep", "--config", cfg, "--seed", "12"], &c);
    assert_ne!(ma, std::fs::read(c.join("metrics.jsonl")).unwrap());
}

#[test]
fn csv_and_jsonl_carry_the_same_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let o = sclmkb(&["eval", "--config", cfg, "--format", "csv"], dir.path());
    assert_eq!(code(&o), 0);
    let o = sclmkb(&["eval", "--config", cfg], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let jsonl = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(csv.lines().count(), jsonl.lines().count() + 1);
    assert!(csv.starts_with("variant,seed,snr_db"));
}

#[test]
fn ablate_writes_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    let o = sclmkb(&["ablate", "--config", smoke().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let plot = std::fs::read_to_string(dir.path().join("plot_data.csv")).unwrap();
    assert_eq!(
        plot.lines().next().unwrap(),
        "snr_db,feedback_bits,map_full,map_no_sdg,map_no_cdg,map_baseline"
    );
}

#[test]
fn training_commands_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&sclmkb(&["gen-csi", "--config", cfg], dir.path())), 0);
    let trace = load_csi(&dir.path().join("user0.csif")).unwrap();
    assert_eq!((trace.len(), trace.dims()), (48, Some((2, 2))));
    assert_eq!(code(&sclmkb(&["train-cdg", "--config", cfg], dir.path())), 0);
    assert!(dir.path().join("cdg.ckpt").exists());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("cdg_losses.jsonl")).unwrap().lines().count(),
        2
    );
    assert_eq!(code(&sclmkb(&["train-cdfc", "--config", cfg], dir.path())), 0);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("losses.jsonl")).unwrap().lines().count(),
        3
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[channel]\nn_rx = 4\n").unwrap();
    assert_eq!(code(&sclmkb(&["sweep", "--config", bad.to_str().unwrap()], dir.path())), 2);
    assert_eq!(code(&sclmkb(&["sweep", "--config", "/no/such/file.toml"], dir.path())), 2);
    let smoke = smoke();
    assert_eq!(
        code(&sclmkb(&["sweep", "--config", smoke.to_str().unwrap(), "--format", "xml"], dir.path())),
        2
    );

    let broken = dir.path().join("broken.csif");
    std::fs::write(&broken, b"CSIF\x01\x00").unwrap();
    let cfg = dir.path().join("file.toml");
    let text = std::fs::read_to_string(&smoke)
        .unwrap()
        .replace("[channel]\n", &format!("[channel]\ncsi_file = {:?}\n", broken.to_str().unwrap()));
    std::fs::write(&cfg, text).unwrap();
    let o = sclmkb(&["sweep", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at byte 6"), "{}", String::from_utf8_lossy(&o.stderr));
}
