//! End-to-end tests of the `rirkit` binary: exit codes, JSON schemas, and
//! file outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rirkit::acoustics::exponential_rir;
use rirkit::blob;
use rirkit::signal::{AudioBuffer, WORKING_SAMPLE_RATE};
use rirkit::wav::{read_wav, write_wav_f32};

fn rirkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rirkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Asserts the JSON text carries exactly these keys in this order.
fn assert_keys_in_order(json: &str, keys: &[&str]) {
    let mut last = 0;
    for key in keys {
        let needle = format!("\"{key}\":");
        let at = json[last..]
            .find(&needle)
            .unwrap_or_else(|| panic!("key {key} missing or out of order in {json}"));
        last += at + needle.len();
    }
    let value: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(value.as_object().unwrap().len(), keys.len(), "{json}");
}

fn write_exponential(path: &Path, alpha: f64, len: usize) {
    let rir = exponential_rir(alpha, WORKING_SAMPLE_RATE, len).unwrap();
    write_wav_f32(path, &rir.to_audio()).unwrap();
}

#[test]
fn analyze_reports_metrics_and_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let rir_path = dir.path().join("rir.wav");
    write_exponential(&rir_path, 13.8155, 24_000);

    let out = rirkit(&["analyze", rir_path.to_str().unwrap()]);
    assert!(out.status.success());
    let json = stdout_str(&out);
    assert_keys_in_order(&json, &["t60", "edt", "drr", "drr_unbounded"]);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    let t60 = value["t60"].as_f64().unwrap();
    assert!((t60 - 0.5).abs() / 0.5 < 0.02, "t60 {t60}");

    let out = rirkit(&[
        "analyze",
        rir_path.to_str().unwrap(),
        "--gt",
        rir_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let json = stdout_str(&out);
    assert_keys_in_order(
        &json,
        &["t60_error", "drr_error", "edt_error", "emse", "lmse"],
    );
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["t60_error", "drr_error", "edt_error", "emse", "lmse"] {
        assert_eq!(value[key].as_f64().unwrap(), 0.0, "{key}");
    }
}

#[test]
fn analyze_missing_file_exits_3_with_single_error_line() {
    let out = rirkit(&["analyze", "/nonexistent/rir.wav"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: "));
}

#[test]
fn unknown_flag_exits_2() {
    let out = rirkit(&["analyze", "x.wav", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reverb_with_delta_preserves_input() {
    let dir = tempfile::tempdir().unwrap();
    let clean_path = dir.path().join("clean.wav");
    let rir_path = dir.path().join("delta.wav");
    let out_path = dir.path().join("out.wav");

    let clean: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.013).sin() * 0.5).collect();
    write_wav_f32(
        &clean_path,
        &AudioBuffer::new(clean.clone(), WORKING_SAMPLE_RATE).unwrap(),
    )
    .unwrap();
    let mut delta = vec![0.0; 10];
    delta[0] = 1.0;
    write_wav_f32(
        &rir_path,
        &AudioBuffer::new(delta, WORKING_SAMPLE_RATE).unwrap(),
    )
    .unwrap();

    let out = rirkit(&[
        "reverb",
        clean_path.to_str().unwrap(),
        rir_path.to_str().unwrap(),
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let written = read_wav(&out_path).unwrap();
    assert_eq!(written.len(), 500 + 10 - 1);
    for (a, b) in written.samples().iter().zip(&clean) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn losses_on_identical_inputs_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    let speech_path = dir.path().join("speech.wav");
    let clean_path = dir.path().join("clean.wav");
    let rir_path = dir.path().join("rir.wav");
    let samples: Vec<f64> = (0..1200).map(|i| ((i as f64) * 0.02).sin() * 0.3).collect();
    write_wav_f32(
        &speech_path,
        &AudioBuffer::new(samples.clone(), WORKING_SAMPLE_RATE).unwrap(),
    )
    .unwrap();
    write_wav_f32(
        &clean_path,
        &AudioBuffer::new(samples.iter().map(|s| s * 0.7).collect(), WORKING_SAMPLE_RATE)
            .unwrap(),
    )
    .unwrap();
    write_exponential(&rir_path, 20.0, 800);

    let scores_path = dir.path().join("scores.json");
    fs::write(
        &scores_path,
        r#"{"scores_reverberant": [2.0], "scores_clean": [0.5]}"#,
    )
    .unwrap();

    let speech = speech_path.to_str().unwrap();
    let clean = clean_path.to_str().unwrap();
    let rir = rir_path.to_str().unwrap();
    let out = rirkit(&[
        "losses",
        "--estimated-reverberant",
        speech,
        "--reverberant",
        speech,
        "--estimated-clean",
        clean,
        "--clean",
        clean,
        "--estimated-rir",
        rir,
        "--rir",
        rir,
        "--scores",
        scores_path.to_str().unwrap(),
        "--windows",
        "64,256",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = stdout_str(&out);
    assert_keys_in_order(
        &json,
        &[
            "mel",
            "stft_mag",
            "stft_phase",
            "rir_mse",
            "metric",
            "adversarial",
            "generator",
        ],
    );
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["mel", "stft_mag", "stft_phase", "rir_mse", "metric"] {
        assert_eq!(value[key].as_f64().unwrap(), 0.0, "{key}");
    }
    assert_eq!(value["adversarial"].as_f64().unwrap(), 0.5);
    assert_eq!(value["generator"].as_f64().unwrap(), 0.5);
}

#[test]
fn rvq_train_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let vectors_path = dir.path().join("vectors.f32");
    let codec_path = dir.path().join("codec.rvq");
    let codes_path = dir.path().join("codes.rkqc");
    let recon_path = dir.path().join("recon.f32");
    let log_path = dir.path().join("loss.log");

    // 32 distinct vectors, dim 6.
    let dim = 6;
    let data: Vec<f32> = (0..32 * dim)
        .map(|i| ((i * 2654435761usize) % 1000) as f32 / 500.0 - 1.0)
        .collect();
    blob::write_f32_matrix(&vectors_path, 32, dim, &data).unwrap();

    let out = rirkit(&[
        "rvq",
        "train",
        "--vectors",
        vectors_path.to_str().unwrap(),
        "--layers",
        "1",
        "--codebook-size",
        "64",
        "--steps",
        "800",
        "--seed",
        "7",
        "--output",
        codec_path.to_str().unwrap(),
        "--loss-log",
        log_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert!(summary["final_vq_loss"].as_f64().unwrap() < 1e-4);
    let log = fs::read_to_string(&log_path).unwrap();
    assert_eq!(log.lines().count(), 800);

    let out = rirkit(&[
        "rvq",
        "encode",
        "--codec",
        codec_path.to_str().unwrap(),
        "--vectors",
        vectors_path.to_str().unwrap(),
        "--output",
        codes_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let out = rirkit(&[
        "rvq",
        "decode",
        "--codec",
        codec_path.to_str().unwrap(),
        "--codes",
        codes_path.to_str().unwrap(),
        "--output",
        recon_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (rows, cols, recon) = blob::read_f32_matrix(&recon_path).unwrap();
    assert_eq!((rows, cols), (32, dim));
    let mse: f64 = recon
        .iter()
        .zip(&data)
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / recon.len() as f64;
    assert!(mse < 1e-4, "round-trip MSE {mse}");
}

#[test]
fn rvq_bitrate_prints_the_worked_value() {
    let out = rirkit(&[
        "rvq",
        "bitrate",
        "--layers",
        "64",
        "--codebook-size",
        "8192",
        "--fps",
        "66.667",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_str(&out).trim(), "55467");
}

#[test]
fn geomat_build_writes_png_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let seg_path = dir.path().join("seg.pgm");
    let labels_path = dir.path().join("labels.json");
    let depth_path = dir.path().join("depth.f32");
    let db_path = dir.path().join("materials.json");
    let out_path = dir.path().join("geomat.png");

    rirkit::geomat::write_pgm16(&seg_path, &[0, 0, 1, 1, 0, 1], 3, 2).unwrap();
    fs::write(&labels_path, r#"{"0": "carpet", "1": "glass window"}"#).unwrap();
    blob::write_f32_matrix(&depth_path, 2, 3, &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
    fs::write(
        &db_path,
        r#"[
            {"material_name": "default", "ac125": 0.1, "ac500": 0.1, "ac2000": 0.1, "ac8000": 0.1},
            {"material_name": "carpet", "ac125": 0.1, "ac500": 0.3, "ac2000": 0.5, "ac8000": 0.7},
            {"material_name": "glass window", "ac125": 0.05, "ac500": 0.04, "ac2000": 0.03, "ac8000": 0.02}
        ]"#,
    )
    .unwrap();

    let out = rirkit(&[
        "geomat",
        "build",
        "--segmentation",
        seg_path.to_str().unwrap(),
        "--labels",
        labels_path.to_str().unwrap(),
        "--depth",
        depth_path.to_str().unwrap(),
        "--materials",
        db_path.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_keys_in_order(&stdout_str(&out), &["width", "height", "depth_scale"]);
    assert!(out_path.exists());
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_path.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["width"].as_u64().unwrap(), 3);
    assert!((sidecar["depth_scale"].as_f64().unwrap() - 3.0 / 255.0).abs() < 1e-12);
}

fn build_store(dir: &Path) -> (String, String) {
    let entries_path = dir.join("entries.json");
    let store_dir = dir.join("store");
    for (id, fill) in [("alpha", 0.25f64), ("beta", -0.5)] {
        let emb: Vec<f32> = if id == "alpha" {
            vec![1.0, 0.0, 0.0]
        } else {
            vec![0.0, 1.0, 0.0]
        };
        blob::write_f32_matrix(dir.join(format!("{id}.f32")), 1, 3, &emb).unwrap();
        let rir: Vec<f64> = (0..5000).map(|i| fill / (1.0 + i as f64 * 0.001)).collect();
        write_wav_f32(
            dir.join(format!("{id}.wav")),
            &AudioBuffer::new(rir, WORKING_SAMPLE_RATE).unwrap(),
        )
        .unwrap();
    }
    fs::write(
        &entries_path,
        r#"[
            {"id": "alpha", "embedding": "alpha.f32", "rir": "alpha.wav"},
            {"id": "beta", "embedding": "beta.f32", "rir": "beta.wav"}
        ]"#,
    )
    .unwrap();
    let out = rirkit(&[
        "store",
        "build",
        "--entries",
        entries_path.to_str().unwrap(),
        "--output",
        store_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (
        store_dir.to_str().unwrap().to_string(),
        entries_path.to_str().unwrap().to_string(),
    )
}

#[test]
fn store_build_query_splice_flow() {
    let dir = tempfile::tempdir().unwrap();
    let (store_dir, _) = build_store(dir.path());

    let query_path = dir.path().join("query.f32");
    blob::write_f32_matrix(&query_path, 1, 3, &[1.0, 0.0, 0.0]).unwrap();
    let out = rirkit(&[
        "store",
        "query",
        "--store",
        &store_dir,
        "--embedding",
        query_path.to_str().unwrap(),
        "-k",
        "2",
    ]);
    assert!(out.status.success());
    let hits: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(hits[0]["id"].as_str().unwrap(), "alpha");
    assert!((hits[0]["similarity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(hits[1]["id"].as_str().unwrap(), "beta");

    let est_path = dir.path().join("est.wav");
    let est: Vec<f64> = vec![0.125; 4500];
    write_wav_f32(
        &est_path,
        &AudioBuffer::new(est.clone(), WORKING_SAMPLE_RATE).unwrap(),
    )
    .unwrap();
    let spliced_path = dir.path().join("spliced.wav");
    let out = rirkit(&[
        "store",
        "splice",
        "--store",
        &store_dir,
        "--embedding",
        query_path.to_str().unwrap(),
        "--estimate",
        est_path.to_str().unwrap(),
        "--output",
        spliced_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(value["retrieved_id"].as_str().unwrap(), "alpha");
    let spliced = read_wav(&spliced_path).unwrap();
    assert_eq!(spliced.len(), 4500);
    // Outside [2000, 4000) the estimate is untouched.
    assert!(spliced.samples()[..2000].iter().all(|&s| (s - 0.125).abs() < 1e-7));
    assert!(spliced.samples()[4000..].iter().all(|&s| (s - 0.125).abs() < 1e-7));
    // Inside the window the retrieved RIR shows up.
    assert!((spliced.samples()[2000] - 0.25 / 3.0).abs() < 1e-6);

    let out = rirkit(&[
        "store",
        "query",
        "--store",
        dir.path().join("missing").to_str().unwrap(),
        "--embedding",
        query_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn store_build_rejects_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    blob::write_f32_matrix(dir.path().join("a.f32"), 1, 2, &[1.0, 0.0]).unwrap();
    write_wav_f32(
        dir.path().join("a.wav"),
        &AudioBuffer::new(vec![0.5; 100], WORKING_SAMPLE_RATE).unwrap(),
    )
    .unwrap();
    let entries_path = dir.path().join("entries.json");
    fs::write(
        &entries_path,
        r#"[
            {"id": "a", "embedding": "a.f32", "rir": "a.wav"},
            {"id": "a", "embedding": "a.f32", "rir": "a.wav"}
        ]"#,
    )
    .unwrap();
    let out = rirkit(&[
        "store",
        "build",
        "--entries",
        entries_path.to_str().unwrap(),
        "--output",
        dir.path().join("store").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate id"));
}

#[test]
fn simulate_writes_an_analyzable_rir() {
    let dir = tempfile::tempdir().unwrap();
    let room_path = dir.path().join("room.json");
    let rir_path = dir.path().join("rir.wav");
    fs::write(
        &room_path,
        r#"{
            "dims": [5.0, 4.0, 3.0],
            "wall_absorption": 0.2,
            "source": [1.2, 1.1, 1.0],
            "listener": [3.4, 2.8, 1.7],
            "max_order": 50,
            "rir_len": 12000
        }"#,
    )
    .unwrap();
    let out = rirkit(&[
        "simulate",
        "--room",
        room_path.to_str().unwrap(),
        "--output",
        rir_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_keys_in_order(&stdout_str(&out), &["samples", "duration_seconds"]);

    let out = rirkit(&["analyze", rir_path.to_str().unwrap()]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    // Sabine for this room is 0.514 s.
    let t60 = value["t60"].as_f64().unwrap();
    assert!((t60 - 0.514).abs() / 0.514 < 0.3, "t60 {t60}");
}
