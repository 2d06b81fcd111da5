use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tclif::data::{encode_idx, IdxArray};

fn tclif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tclif"))
        .args(args)
        .env_remove("TCLIF_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn write_split(dir: &Path, prefix: &str, n: usize) {
    // Class c lights up row c of a 28×28 image.
    let mut images = vec![0u8; n * 784];
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    for (i, &c) in labels.iter().enumerate() {
        let row = usize::from(c) * 2;
        images[i * 784 + row * 28..i * 784 + row * 28 + 28].fill(255);
    }
    let img = IdxArray { dims: vec![n, 28, 28], data: images };
    let lab = IdxArray { dims: vec![n], data: labels };
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_idx(&img)).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_idx(&lab)).unwrap();
}

fn synthetic_mnist() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    fs::create_dir(&mnist).unwrap();
    write_split(&mnist, "train", 20);
    write_split(&mnist, "t10k", 10);
    dir
}

fn train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--out",
        out,
        "--override",
        "epochs=1",
        "--override",
        "arch=[28,16,10]",
        "--override",
        "frame_size=28",
        "--override",
        "batch_size=5",
        "--override",
        "record_wallclock=false",
        "--override",
        data,
    ]
}

#[test]
fn help_lists_the_subcommands() {
    let out = tclif(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["train", "eval", "gradcheck", "memprofile"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let out = tclif(&["train", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--override", "--out", "--seed", "--update-per-step", "--no-reset"] {
        assert!(text.contains(flag), "{flag} missing from train help");
    }
}

#[test]
fn train_writes_reproducible_metrics_and_a_checkpoint() {
    let data = synthetic_mnist();
    let data_kv = format!("data_dir={}", data.path().display());
    let runs = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = runs.path().join(name);
        let out = tclif(&train_args(&data_kv, out_dir.to_str().unwrap()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "{csv}");
        assert!(csv.starts_with("epoch,train_loss,train_acc,test_acc,wallclock_s,peak_stored_reals\n"));
        assert!(out_dir.join("config.json").exists());
        csvs.push(csv);
    }
    assert_eq!(csvs[0], csvs[1]);

    let model = runs.path().join("a/model.tclf");
    let out = tclif(&["eval", "--checkpoint", model.to_str().unwrap(), "--override", &data_kv]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let acc: f64 = text.trim().strip_prefix("test_acc ").unwrap().parse().unwrap();
    let last = csvs[0].lines().nth(1).unwrap().split(',').nth(3).unwrap().parse::<f64>().unwrap();
    assert_eq!(acc, last);
}

#[test]
fn missing_data_exits_with_input_error() {
    let runs = tempfile::tempdir().unwrap();
    let out = tclif(&["train", "--out", runs.path().to_str().unwrap(), "--override", "data_dir=/nonexistent/tclif"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = tclif(&["train", "--out", runs.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_with_input_error() {
    let out = tclif(&["train", "--override", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = tclif(&["gradcheck", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{text}");
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let out = tclif(&["gradcheck", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn memprofile_writes_one_row_per_length_and_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let out = tclif(&["memprofile", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("memory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("T,algo,stored_reals,peak_bytes"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 10);
    let bptt: Vec<u64> = rows.iter().filter(|r| r[1] == "bptt").map(|r| r[2].parse().unwrap()).collect();
    let eprop: Vec<u64> = rows.iter().filter(|r| r[1] == "eprop").map(|r| r[2].parse().unwrap()).collect();
    assert!(bptt.windows(2).all(|w| w[1] > w[0]));
    assert!(eprop.windows(2).all(|w| w[1] == w[0]));
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
}
