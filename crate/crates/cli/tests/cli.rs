//! End-to-end runs of the `specfit` binary: happy paths, output formats and
//! the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specfit_core::{synth, write_wav};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specfit"))
}

struct Fixture {
    dir: PathBuf,
}

impl Fixture {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("specfit-cli-{}-{}", std::process::id(), name));
        std::fs::create_dir_all(&dir).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn wav(&self, name: &str, seed: u64, len: usize) -> PathBuf {
        let path = self.path(name);
        write_wav(&synth::harmonic_voice(seed, len, 16000), &path, true).unwrap();
        path
    }

    fn noise_wav(&self, name: &str, seed: u64, len: usize) -> PathBuf {
        let path = self.path(name);
        write_wav(&synth::white_noise(seed, len, 16000, 0.4), &path, true).unwrap();
        path
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.dir).ok();
    }
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_mix(clean: &Path, noise: &Path, snr: f64, out: &Path) -> Output {
    bin()
        .args([
            "mix",
            clean.to_str().unwrap(),
            noise.to_str().unwrap(),
            "--snr",
            &snr.to_string(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "7",
        ])
        .output()
        .unwrap()
}

#[test]
fn mix_reports_achieved_snr_and_writes_outputs() {
    let fix = Fixture::new("mix");
    let clean = fix.wav("clean.wav", 1, 9000);
    let noise = fix.noise_wav("noise.wav", 2, 18000);
    let out = fix.path("noisy.wav");

    let result = run_mix(&clean, &noise, 0.0, &out);
    assert!(result.status.success(), "{result:?}");
    let text = stdout(&result);
    assert!(
        text.contains("achieved_snr_db=0.000000") || text.contains("achieved_snr_db=-0.000000"),
        "unexpected: {text}"
    );
    assert!(out.exists());
    assert!(fix.path("noisy.noise.wav").exists());
}

#[test]
fn missing_input_exits_2() {
    let fix = Fixture::new("missing");
    let noise = fix.noise_wav("noise.wav", 3, 18000);
    let result = bin()
        .args([
            "mix",
            fix.path("absent.wav").to_str().unwrap(),
            noise.to_str().unwrap(),
            "--snr",
            "0",
            "--out",
            fix.path("out.wav").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn zero_energy_clean_exits_3() {
    let fix = Fixture::new("zero");
    let silent = fix.path("silent.wav");
    write_wav(
        &specfit_core::Waveform::new(vec![0.0; 9000], 16000).unwrap(),
        &silent,
        true,
    )
    .unwrap();
    let noise = fix.noise_wav("noise.wav", 4, 18000);
    let result = bin()
        .args([
            "mix",
            silent.to_str().unwrap(),
            noise.to_str().unwrap(),
            "--snr",
            "0",
            "--out",
            fix.path("out.wav").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn score_identical_files_is_clamped_and_perfect() {
    let fix = Fixture::new("score");
    let clean = fix.wav("clean.wav", 5, 9000);
    let result = bin()
        .args(["score", clean.to_str().unwrap(), clean.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(result.status.success());
    let text = stdout(&result);
    assert!(text.contains("si_sdr=60.000000"), "{text}");
    assert!(text.contains("pesq=4.500000"), "{text}");

    let json = bin()
        .args([
            "score",
            clean.to_str().unwrap(),
            clean.to_str().unwrap(),
            "--json",
        ])
        .output()
        .unwrap();
    let value: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(value["si_sdr"], 60.0);
    assert_eq!(value["pesq"], 4.5);
}

#[test]
fn score_length_mismatch_exits_4() {
    let fix = Fixture::new("mismatch");
    let a = fix.wav("a.wav", 6, 9000);
    let b = fix.wav("b.wav", 7, 8000);
    let result = bin()
        .args(["score", a.to_str().unwrap(), b.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(4));
}

#[test]
fn oracle_improves_the_mixture_and_dumps_the_mask() {
    let fix = Fixture::new("oracle");
    let clean = fix.wav("clean.wav", 8, 9000);
    let noise = fix.noise_wav("noise.wav", 9, 18000);
    let noisy = fix.path("noisy.wav");
    let mix = bin()
        .args([
            "mix",
            clean.to_str().unwrap(),
            noise.to_str().unwrap(),
            "--snr",
            "0",
            "--out",
            noisy.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(mix.status.success());

    let denoised = fix.path("denoised.wav");
    let mask_dump = fix.path("mask.grid");
    let result = bin()
        .args([
            "oracle",
            clean.to_str().unwrap(),
            fix.path("noisy.noise.wav").to_str().unwrap(),
            "--mask",
            "psm",
            "--out",
            denoised.to_str().unwrap(),
            "--dump-mask",
            mask_dump.to_str().unwrap(),
            "--json",
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "{result:?}");
    let value: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    let si_in = value["si_sdr_in"].as_f64().unwrap();
    let si_out = value["si_sdr_out"].as_f64().unwrap();
    assert!(
        si_out >= si_in,
        "oracle did not improve: {si_in} -> {si_out}"
    );
    assert!(denoised.exists());

    let grid = specfit_core::grid::read_real_grid(&mask_dump).unwrap();
    assert!(grid.dim().0 > 0 && grid.dim().1 == 257);
}

#[test]
fn oracle_unknown_mask_exits_5() {
    let fix = Fixture::new("badmask");
    let clean = fix.wav("clean.wav", 10, 9000);
    let noise = fix.noise_wav("noise.wav", 11, 9000);
    let result = bin()
        .args([
            "oracle",
            clean.to_str().unwrap(),
            noise.to_str().unwrap(),
            "--mask",
            "foo",
            "--out",
            fix.path("out.wav").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(5));
}

#[test]
fn fit_writes_one_row_per_step_plus_initial() {
    let fix = Fixture::new("fit");
    let clean = fix.wav("clean.wav", 12, 6000);
    let noise = fix.noise_wav("noise.wav", 13, 12000);
    let noisy = fix.path("noisy.wav");
    assert!(bin()
        .args([
            "mix",
            clean.to_str().unwrap(),
            noise.to_str().unwrap(),
            "--snr",
            "0",
            "--out",
            noisy.to_str().unwrap(),
        ])
        .output()
        .unwrap()
        .status
        .success());

    let csv = fix.path("traj.csv");
    let result = bin()
        .args([
            "fit",
            clean.to_str().unwrap(),
            fix.path("noisy.noise.wav").to_str().unwrap(),
            "--loss",
            "sdr-pesq",
            "--steps",
            "5",
            "--lr",
            "0.5",
            "--out-csv",
            csv.to_str().unwrap(),
            "--out-wav",
            fix.path("denoised.wav").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "{result:?}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "step,loss,si_sdr,pesq");
    assert_eq!(rows.len(), 1 + 6, "expected header + 6 rows, got {text}");
    assert!(fix.path("denoised.wav").exists());
}

#[test]
fn fit_unknown_loss_exits_5() {
    let fix = Fixture::new("badloss");
    let clean = fix.wav("clean.wav", 14, 6000);
    let noise = fix.noise_wav("noise.wav", 15, 6000);
    let result = bin()
        .args([
            "fit",
            clean.to_str().unwrap(),
            noise.to_str().unwrap(),
            "--loss",
            "nope",
            "--out-csv",
            fix.path("traj.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(5));
}

fn write_manifest(fix: &Fixture, rows: &[String]) -> PathBuf {
    let path = fix.path("manifest.csv");
    let mut text = String::from("id,clean,noisy,noise,snr_db,method,seed\n");
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn eval_reports_every_valid_row() {
    let fix = Fixture::new("eval");
    fix.wav("c1.wav", 16, 6000);
    fix.wav("c2.wav", 17, 6000);
    fix.noise_wav("n.wav", 18, 12000);
    let manifest = write_manifest(
        &fix,
        &[
            "u1,c1.wav,,n.wav,0,psm,1".to_string(),
            "u2,c2.wav,,n.wav,5,none,2".to_string(),
            "u3,c1.wav,,n.wav,10,iam,3".to_string(),
        ],
    );
    let out = fix.path("report");
    let result = bin()
        .args([
            "eval",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(fix.path("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("id,si_sdr_in,si_sdr_out,pesq_in,pesq_out,loss_kind,config_digest"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fix.path("report.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
}

#[test]
fn eval_partial_failure_keeps_good_rows_and_exits_1() {
    let fix = Fixture::new("evalbad");
    fix.wav("c1.wav", 19, 6000);
    fix.noise_wav("n.wav", 20, 12000);
    let manifest = write_manifest(
        &fix,
        &[
            "u1,c1.wav,,n.wav,0,psm,1".to_string(),
            "u2,missing.wav,,n.wav,0,psm,1".to_string(),
            "u3,c1.wav,,n.wav,bad_snr,psm,1".to_string(),
        ],
    );
    let out = fix.path("report");
    let result = bin()
        .args([
            "eval",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    let csv = std::fs::read_to_string(fix.path("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "one good row survives: {csv}");
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("line 3") || stderr.contains("line 4"),
        "{stderr}"
    );
}

#[test]
fn eval_empty_manifest_is_fine() {
    let fix = Fixture::new("evalempty");
    let manifest = write_manifest(&fix, &[]);
    let result = bin()
        .args([
            "eval",
            manifest.to_str().unwrap(),
            "--out",
            fix.path("report").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0));
    let csv = std::fs::read_to_string(fix.path("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn config_override_changes_the_digest() {
    let fix = Fixture::new("config");
    let clean = fix.wav("clean.wav", 21, 6000);
    fix.noise_wav("n.wav", 22, 12000);
    let manifest = write_manifest(&fix, &["u1,clean.wav,,n.wav,0,none,1".to_string()]);
    let _ = clean;

    let config = fix.path("override.toml");
    std::fs::write(&config, "[pesq]\nsym_weight = 0.2\n").unwrap();

    let run = |cfg: Option<&Path>| -> String {
        let out = fix.path("report");
        let mut cmd = bin();
        cmd.args([
            "eval",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        if let Some(cfg) = cfg {
            cmd.args(["--config", cfg.to_str().unwrap()]);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(fix.path("report.csv")).unwrap()
    };

    let base = run(None);
    let overridden = run(Some(&config));
    let digest = |csv: &str| {
        csv.lines()
            .nth(1)
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .to_string()
    };
    assert_ne!(digest(&base), digest(&overridden));
}

#[test]
fn score_of_zero_db_mixture_is_near_zero_db() {
    let fix = Fixture::new("scoremix");
    let clean = fix.wav("clean.wav", 23, 9000);
    let noise = fix.noise_wav("noise.wav", 24, 18000);
    let noisy = fix.path("noisy.wav");
    assert!(run_mix(&clean, &noise, 0.0, &noisy).status.success());

    let result = bin()
        .args([
            "score",
            clean.to_str().unwrap(),
            noisy.to_str().unwrap(),
            "--json",
        ])
        .output()
        .unwrap();
    assert!(result.status.success());
    let value: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    let sdr = value["si_sdr"].as_f64().unwrap();
    assert!(sdr.abs() < 1.5, "expected roughly 0 dB, got {sdr}");
}

#[test]
fn narrowband_files_use_the_8k_table() {
    let fix = Fixture::new("nb");
    let clean = fix.path("clean8k.wav");
    write_wav(&synth::harmonic_voice(25, 4800, 8000), &clean, true).unwrap();
    let result = bin()
        .args(["score", clean.to_str().unwrap(), clean.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(result.status.success(), "{result:?}");
    let text = stdout(&result);
    assert!(text.contains("si_sdr=60.000000"), "{text}");
    assert!(text.contains("pesq=4.500000"), "{text}");
}

#[test]
fn fit_accepts_numeric_mask_init() {
    let fix = Fixture::new("fitinit");
    let clean = fix.wav("clean.wav", 26, 6000);
    let noise = fix.noise_wav("noise.wav", 27, 12000);
    let noisy = fix.path("noisy.wav");
    assert!(run_mix(&clean, &noise, 0.0, &noisy).status.success());
    let result = bin()
        .args([
            "fit",
            clean.to_str().unwrap(),
            fix.path("noisy.noise.wav").to_str().unwrap(),
            "--loss",
            "sdr",
            "--steps",
            "2",
            "--init",
            "0.5",
            "--out-csv",
            fix.path("traj.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "{result:?}");

    let bad = bin()
        .args([
            "fit",
            clean.to_str().unwrap(),
            fix.path("noisy.noise.wav").to_str().unwrap(),
            "--loss",
            "sdr",
            "--init",
            "whatever",
            "--out-csv",
            fix.path("traj2.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(5));
}

#[test]
fn eval_parallel_output_matches_serial() {
    let fix = Fixture::new("evaljobs");
    fix.wav("c1.wav", 28, 6000);
    fix.wav("c2.wav", 29, 6000);
    fix.noise_wav("n.wav", 30, 12000);
    let manifest = write_manifest(
        &fix,
        &[
            "u1,c1.wav,,n.wav,0,psm,1".to_string(),
            "u2,c2.wav,,n.wav,5,iam,2".to_string(),
            "u3,c1.wav,,n.wav,10,none,3".to_string(),
            "u4,c2.wav,,n.wav,-5,irm,4".to_string(),
        ],
    );
    let run = |jobs: &str, out: &str| -> String {
        let result = bin()
            .args([
                "eval",
                manifest.to_str().unwrap(),
                "--out",
                fix.path(out).to_str().unwrap(),
                "--jobs",
                jobs,
            ])
            .output()
            .unwrap();
        assert!(result.status.success(), "{result:?}");
        std::fs::read_to_string(fix.path(&format!("{out}.csv"))).unwrap()
    };
    assert_eq!(run("1", "serial"), run("4", "parallel"));
}
