use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn tfdoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfdoa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tfdoa(args);
    assert!(
        out.status.success(),
        "tfdoa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn rir_writes_wav_and_decay_curve() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("room");
    let stdout = ok(&[
        "rir",
        "--rt60",
        "0.3",
        "--order",
        "6",
        "--mode",
        "nearest",
        "--src",
        "6.5,3.5,1.75",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(stdout.contains("absorption 0.497206"));
    let wav = hound::WavReader::open(dir.path().join("room.wav")).unwrap();
    assert_eq!(wav.spec().sample_rate, 16_000);
    assert_eq!(wav.spec().channels, 1);
    let csv = lines(&dir.path().join("room_schroeder.csv"));
    assert_eq!(csv[0], "time_s,decay_db");
    assert_eq!(csv[1], "0.000000,0.000000");
}

#[test]
fn estimate_and_spectrum_write_grid_csvs() {
    let dir = tempdir().unwrap();
    let single = dir.path().join("proposed.csv");
    let scenario = dir.path().join("scenario.json");
    let stdout = ok(&[
        "estimate",
        "--frames",
        "5",
        "--out",
        single.to_str().unwrap(),
        "--scenario-out",
        scenario.to_str().unwrap(),
        "--wav-dir",
        dir.path().join("wav").to_str().unwrap(),
    ]);
    for m in 1..=9 {
        let wav = hound::WavReader::open(dir.path().join(format!("wav/mic{m}.wav"))).unwrap();
        assert_eq!(wav.len() as usize, 5 * 512 + 512);
    }
    assert!(stdout.starts_with("proposed (hadamard): theta_hat "));
    let csv = lines(&single);
    assert_eq!(csv[0], "theta_deg,value,normalized_value");
    assert_eq!(csv.len(), 721);
    assert!(csv[1].starts_with("0.000000,"));
    assert!(csv[720].starts_with("359.500000,"));
    assert!(std::fs::read_to_string(&scenario)
        .unwrap()
        .contains("\"speaker\""));

    let prefix = dir.path().join("fig.csv");
    let stdout = ok(&[
        "spectrum",
        "--frames",
        "5",
        "--sir-db",
        "-6",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert_eq!(stdout.lines().count(), 4);
    for m in ["music", "principal", "srp", "proposed"] {
        let csv = lines(&dir.path().join(format!("fig_{m}.csv")));
        assert_eq!(csv.len(), 721);
        let peak = csv[1..]
            .iter()
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .fold(f64::MIN, f64::max);
        assert_eq!(peak, 1.0);
    }
}

#[test]
fn eval_and_sweep_write_reports() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"method":"srp","postproc":"hadamard","mask_source":"oracle","rt60":0.3,"snr_db":null,
            "sir_db":0,"K":1,"T_frames":5,"trials":2,"base_seed":3,"grid_resolution":1}"#,
    )
    .unwrap();
    let report = dir.path().join("report.csv");
    let summary = dir.path().join("summary.json");
    ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--workers",
        "1",
        "--out",
        report.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    let csv = lines(&report);
    assert_eq!(
        csv[0],
        "method,postproc,rt60_s,snr_db,sir_db,K,T,trials,accuracy,mae_deg,seed"
    );
    assert!(csv[1].starts_with("srp,hadamard,0.300000,inf,0.000000,1,5,2,"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(parsed[0]["trials"].as_array().unwrap().len(), 2);

    let sweep = dir.path().join("sweep.json");
    std::fs::write(
        &sweep,
        format!(
            r#"{{"base": {}, "axes": {{"sir_db": [-6, 6]}}, "best_postproc_per_method": false}}"#,
            std::fs::read_to_string(&cfg).unwrap()
        ),
    )
    .unwrap();
    let stdout = ok(&[
        "sweep",
        "--config",
        sweep.to_str().unwrap(),
        "--trials",
        "1",
        "--workers",
        "1",
    ]);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",-6.000000,1,5,1,"));
    assert!(rows[2].contains(",6.000000,1,5,1,"));
}

#[test]
fn invalid_input_fails_cleanly() {
    for args in [
        vec!["eval", "--postproc", "bogus"],
        vec!["eval", "--trials", "0"],
        vec!["sweep"],
        vec!["spectrum"],
        vec!["rir", "--out", "x", "--src", "1,2"],
        vec!["rir", "--out", "x", "--src", "20,1,1"],
        vec!["eval", "--config", "/nonexistent/config.json"],
    ] {
        let out = tfdoa(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
