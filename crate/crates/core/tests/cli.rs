use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "d = 8\nm = 8\nc1 = 8\nedge = 16\nfeat = 16\nhidden = 32\nlatent = 8\nbatch_size = 8\nepochs = 1\n";

fn zonecast(args: &[&str], data: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zonecast"));
    c.args(args).env_remove("ZONECAST_DATA");
    if let Some(d) = data {
        c.env("ZONECAST_DATA", d);
    }
    c.output().expect("run zonecast")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&zonecast(&["gen", "--count", "10", "--seed", "7", "--out", a.to_str().unwrap()], None));
    ok(&zonecast(&["gen", "--count", "10", "--seed", "7"], Some(&b)));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let o = zonecast(&["train", "--no-such-flag"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = zonecast(&["config", "--set", "bogus=1"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = zonecast(&["eval", "--baseline", "const-vel"], None);
    assert_eq!(o.status.code(), Some(2), "missing dataset directory is a config error");
    let o = zonecast(&["eval", "--checkpoint", "/nonexistent.ck", "--data", "/tmp"], None);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(zonecast(&["--help"], None).status.code(), Some(0));
}

#[test]
fn config_echo_is_a_valid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let echo = ok(&zonecast(&["config", "--set", "epochs=7"], None));
    assert!(echo.contains("epochs = 7\n"));
    assert!(echo.contains("lr = 0.001\n"));
    let path = tmp.path().join("run.cfg");
    fs::write(&path, &echo).unwrap();
    assert_eq!(ok(&zonecast(&["config", "--config", path.to_str().unwrap()], None)), echo);
}

#[test]
fn train_eval_predict_plot_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(&zonecast(&["gen", "--count", "12", "--seed", "3", "--config", cfg], Some(&data)));

    let base = ok(&zonecast(&["eval", "--baseline", "const-vel", "--config", cfg, "--split", "all"], Some(&data)));
    assert!(base.contains("penetration rate"));

    let ck = tmp.path().join("m.ck");
    let log = tmp.path().join("train.log");
    ok(&zonecast(
        &["train", "--config", cfg, "--ablate", "no_penalty", "--out", ck.to_str().unwrap(), "--log", log.to_str().unwrap()],
        Some(&data),
    ));
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("# tau = 20\n"));
    assert!(log_text.contains("# no_penalty = true\n"));
    assert!(log_text.lines().any(|l| l.starts_with("step 1 recon ")));

    let record = tmp.path().join("report.txt");
    let args = ["eval", "--checkpoint", ck.to_str().unwrap(), "--split", "all", "--record", record.to_str().unwrap()];
    let first = ok(&zonecast(&args, Some(&data)));
    let rec = fs::read_to_string(&record).unwrap();
    assert!(rec.contains("penetration_rate = "));
    assert!(rec.contains("ade_4s = "));
    assert_eq!(ok(&zonecast(&args, Some(&data))), first);

    let multi = ok(&zonecast(
        &["eval", "--checkpoint", ck.to_str().unwrap(), "--split", "all", "--protocol", "multi", "--samples", "3"],
        Some(&data),
    ));
    assert!(multi.contains("S=3"));

    let img = tmp.path().join("pred.ppm");
    let pred = ok(&zonecast(
        &["predict", "--checkpoint", ck.to_str().unwrap(), "--samples", "2", "--out", img.to_str().unwrap()],
        Some(&data),
    ));
    assert!(pred.lines().any(|l| l.contains(" sample 1 ")));
    assert!(fs::read(&img).unwrap().starts_with(b"P6\n160 160\n255\n"));

    let plot = tmp.path().join("map.ppm");
    let tensor = tmp.path().join("raster.zt");
    ok(&zonecast(
        &["plot", "--config", cfg, "--what", "map", "--out", plot.to_str().unwrap(), "--tensor", tensor.to_str().unwrap()],
        Some(&data),
    ));
    let t = zonecast::raster::read_tensor(&tensor).unwrap();
    assert_eq!((t.tau, t.h, t.w, t.channels), (20, 160, 160, 3));
    let o = zonecast(&["plot", "--config", cfg, "--what", "nothing", "--out", plot.to_str().unwrap()], Some(&data));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mismatched_manifest_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&zonecast(&["gen", "--count", "2", "--set", "delta=30"], Some(&data)));
    let o = zonecast(&["eval", "--baseline", "const-vel"], Some(&data));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
}
