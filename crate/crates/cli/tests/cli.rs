use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stegolab::corpus::synthetic_cover;
use stegolab::imageio::{read_pgm, write_pgm};
use stegolab::lsb_stego::{embed, KeySet, LsbMethod};
use stegolab::{GrayImage, KeyedPrng};
use tempfile::TempDir;

const K1: &str = "0123456789abcdef";
const K2: &str = "fedcba9876543210";
const K3: &str = "00000000deadbeef";

fn stegolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stegolab"))
        .args(args)
        .env_remove("STEGOLAB_THREADS")
        .output()
        .expect("spawn stegolab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn image(&self, name: &str, img: &GrayImage) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, write_pgm(img)).unwrap();
        p
    }

    fn bytes(&self, name: &str, data: &[u8]) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, data).unwrap();
        p
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_slice(&std::fs::read(self.path(name)).unwrap()).unwrap()
    }
}

fn keys_for(method: &str) -> Vec<&'static str> {
    match method {
        "lsbplus-improved" => vec!["--key1", K1, "--key2", K2, "--key3", K3],
        _ => vec!["--key1", K1, "--key3", K3],
    }
}

#[test]
fn lsb_family_round_trips_match_the_library() {
    let f = Fixture::new();
    let cover = synthetic_cover(64, 64, 11);
    let cover_path = f.image("cover.pgm", &cover);
    let msg = KeyedPrng::new(1).bytes(150);
    let msg_path = f.bytes("msg.bin", &msg);
    let keys = KeySet {
        key1: 0x0123456789abcdef,
        key2: 0xfedcba9876543210,
        key3: 0xdeadbeef,
    };
    for (name, method) in [
        ("lsb", LsbMethod::Lsb),
        ("lsbplus", LsbMethod::LsbPlus),
        ("lsbplus-improved", LsbMethod::Improved),
    ] {
        let stego = f.path(&format!("{name}.pgm"));
        let mut args = vec!["embed", "--method", name, "-i", s(&cover_path), "-m", s(&msg_path), "-o", s(&stego)];
        let report = f.path(&format!("{name}.json"));
        args.extend(["--report", s(&report)]);
        args.extend(keys_for(name));
        let out = stegolab(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

        let (lib_stego, lib_report) = embed(&cover, &msg, method, &keys).unwrap();
        assert_eq!(std::fs::read(&stego).unwrap(), write_pgm(&lib_stego), "{name}");
        let r = f.json(&format!("{name}.json"));
        assert_eq!(r["method"], name);
        assert_eq!(r["capacity_bits"], lib_report.capacity_bits);
        assert_eq!(r["used_bits"], 32 + 8 * msg.len());
        assert_eq!(r["intentional_count"], lib_report.intentional_count);

        let recovered = f.path(&format!("{name}.out"));
        let mut args = vec!["extract", "--method", name, "-i", s(&stego), "-o", s(&recovered)];
        args.extend(keys_for(name));
        let out = stegolab(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(std::fs::read(&recovered).unwrap(), msg, "{name}");
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(r["message_bits"], 8 * msg.len());
    }
}

#[test]
fn sparse_reports_paper_capacity_and_oracle_mode_is_exact() {
    let f = Fixture::new();
    let cover = f.image("cover.pgm", &synthetic_cover(256, 256, 3));
    let msg = KeyedPrng::new(2).bytes(384);
    let msg_path = f.bytes("msg.bin", &msg);
    let (stego, key, code_path) = (f.path("s.pgm"), f.path("d.key"), f.path("c.code"));
    let out = stegolab(&[
        "embed", "--method", "sparse", "-i", s(&cover), "-m", s(&msg_path), "-o", s(&stego),
        "--key-out", s(&key), "--code-out", s(&code_path), "--seed", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["capacity_bits"], 31744);
    assert_eq!(r["capacity_bound"], 32768);
    assert!(r["nnz"].as_u64().unwrap() <= 31744);
    assert!(std::fs::read(&key).unwrap().starts_with(b"SDICT1"));

    let recovered = f.path("m.out");
    let out = stegolab(&[
        "extract", "--method", "sparse", "-i", s(&stego), "-o", s(&recovered), "--key", s(&key),
        "--oracle-code", s(&code_path), "--reference", s(&msg_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["ber"], 0.0);
    assert_eq!(r["oracle"], true);
    assert_eq!(std::fs::read(&recovered).unwrap(), msg);

    // Blind mode re-estimates the code; the header is unreliable, so either
    // a message or a corrupt-stream exit is acceptable, never anything else.
    let out = stegolab(&[
        "extract", "--method", "sparse", "-i", s(&stego), "-o", s(&recovered), "--key", s(&key),
    ]);
    assert!(matches!(code(&out), 0 | 3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ica_qim_round_trip() {
    let f = Fixture::new();
    let cover = f.image("cover.pgm", &synthetic_cover(256, 256, 8));
    let msg = b"watermark payload".to_vec();
    let msg_path = f.bytes("msg.bin", &msg);
    let (stego, key) = (f.path("s.pgm"), f.path("b.key"));
    let out = stegolab(&[
        "embed", "--method", "ica-qim", "-i", s(&cover), "-m", s(&msg_path), "-o", s(&stego), "--key-out", s(&key),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["capacity_bits"], 256);
    assert!(r["psnr_db"].as_f64().unwrap() >= 40.0);
    assert!(std::fs::read(&key).unwrap().starts_with(b"ICAKEY1"));

    let recovered = f.path("m.out");
    let out = stegolab(&[
        "extract", "--method", "ica-qim", "-i", s(&stego), "-o", s(&recovered), "--key", s(&key),
        "--reference", s(&msg_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&recovered).unwrap(), msg);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["ber"], 0.0);
}

#[test]
fn usage_errors_exit_64() {
    let f = Fixture::new();
    let cover = f.image("c.pgm", &synthetic_cover(32, 32, 1));
    let msg = f.bytes("m.bin", b"hi");
    let o = f.path("o.pgm");
    let base = ["embed", "-i", s(&cover), "-m", s(&msg), "-o", s(&o)];
    let cases: Vec<Vec<&str>> = vec![
        [&base[..], &["--method", "lsbplus-improved", "--key1", K1, "--key3", K3]].concat(),
        [&base[..], &["--method", "lsb", "--key1", "12345", "--key3", K3]].concat(),
        [&base[..], &["--method", "nope"]].concat(),
        [&base[..], &["--method", "sparse"]].concat(),
        [&base[..], &["--method", "sparse", "--key-out", "k", "--sparsity", "32"]].concat(),
        vec!["embed"],
        vec![],
    ];
    for args in cases {
        assert_eq!(code(&stegolab(&args)), 64, "{args:?}");
    }
    assert_eq!(code(&stegolab(&["--help"])), 0);
    assert_eq!(code(&stegolab(&["--version"])), 0);
}

#[test]
fn capacity_exceeded_exits_2_with_report() {
    let f = Fixture::new();
    let cover = f.image("c.pgm", &synthetic_cover(16, 16, 1));
    let msg = f.bytes("m.bin", &[7u8; 100]);
    let report = f.path("r.json");
    for method in ["lsb", "lsbplus", "lsbplus-improved"] {
        let mut args = vec!["embed", "--method", method, "-i", s(&cover), "-m", s(&msg), "-o", "unused.pgm"];
        args.extend(["--report", s(&report)]);
        args.extend(keys_for(method));
        assert_eq!(code(&stegolab(&args)), 2, "{method}");
        let r = f.json("r.json");
        assert_eq!(r["error"], "capacity_exceeded");
        assert_eq!(r["method"], method);
        assert_eq!(r["required_bits"], 32 + 800);
        assert!(r["capacity_bits"].as_u64().unwrap() < 832);
    }
}

#[test]
fn wrong_keys_exit_3_and_bad_input_exits_1() {
    let f = Fixture::new();
    let cover = f.image("c.pgm", &synthetic_cover(64, 64, 2));
    let msg = f.bytes("m.bin", b"secret");
    let stego = f.path("s.pgm");
    let mut args = vec!["embed", "--method", "lsbplus-improved", "-i", s(&cover), "-m", s(&msg), "-o", s(&stego)];
    args.extend(keys_for("lsbplus-improved"));
    assert_eq!(code(&stegolab(&args)), 0);

    let out = f.path("o.bin");
    let wrong = stegolab(&[
        "extract", "--method", "lsbplus-improved", "-i", s(&stego), "-o", s(&out), "--key1", K1, "--key2", K2,
        "--key3", "1111111111111111",
    ]);
    assert_eq!(code(&wrong), 3, "{}", String::from_utf8_lossy(&wrong.stderr));

    let bytes = std::fs::read(&stego).unwrap();
    let truncated = f.bytes("t.pgm", &bytes[..bytes.len() / 2]);
    let mut args = vec!["extract", "--method", "lsbplus-improved", "-i", s(&truncated), "-o", s(&out)];
    args.extend(keys_for("lsbplus-improved"));
    assert_eq!(code(&stegolab(&args)), 1);
    let missing = f.path("missing.pgm");
    args[4] = s(&missing);
    assert_eq!(code(&stegolab(&args)), 1);
}

#[test]
fn analyze_reports_histograms_chi_square_and_cooccurrence() {
    let f = Fixture::new();
    let img = synthetic_cover(48, 40, 6);
    let cover = f.image("c.pgm", &img);
    let msg_bytes = KeyedPrng::new(3).bytes(100);
    let msg = f.bytes("m.bin", &msg_bytes);
    let improved = f.path("imp.pgm");
    let mut args = vec!["embed", "--method", "lsbplus-improved", "-i", s(&cover), "-m", s(&msg), "-o", s(&improved)];
    args.extend(keys_for("lsbplus-improved"));
    assert_eq!(code(&stegolab(&args)), 0);
    let full = f.bytes("full.bin", &KeyedPrng::new(4).bytes((img.len() - 32) / 8));
    let lsb = f.path("lsb.pgm");
    let mut args = vec!["embed", "--method", "lsb", "-i", s(&cover), "-m", s(&full), "-o", s(&lsb)];
    args.extend(keys_for("lsb"));
    assert_eq!(code(&stegolab(&args)), 0);

    let csv = f.path("co.csv");
    let out = stegolab(&[
        "analyze", s(&improved), s(&lsb), "--reference", s(&cover), "--cooccurrence", "1,0", "--cooccurrence-out",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let imp = &r["images"][0];
    assert_eq!(imp["versus_reference"]["histogram_identical"], true);
    assert_eq!(imp["versus_reference"]["chi2_identical"], true);
    assert_eq!(imp["versus_reference"]["hist_change_delta"], 0);
    let plain = &r["images"][1];
    assert!(plain["chi_square"]["p_value"].as_f64().unwrap() > 0.95);

    for i in 0..2 {
        let text = std::fs::read_to_string(f.path(&format!("co-{i}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 256);
        let total: u64 = lines
            .iter()
            .flat_map(|l| l.split(','))
            .map(|v| v.parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, (48 - 1) * 40);
    }
}

#[test]
fn thread_cap_comes_from_the_environment() {
    let f = Fixture::new();
    let cover = f.image("c.pgm", &synthetic_cover(32, 32, 1));
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_stegolab"))
            .args(["analyze", s(&cover)])
            .env("STEGOLAB_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("2")), 0);
    assert_eq!(code(&run("0")), 64);
    assert_eq!(code(&run("many")), 64);
}

#[test]
fn bench_is_deterministic_and_writes_the_scatter() {
    let f = Fixture::new();
    let out = f.path("bench");
    let run = || {
        let o = stegolab(&["bench", "woa", "--quick", "--seed", "9", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("criterion 11"));
        (
            std::fs::read(out.join("results.json")).unwrap(),
            std::fs::read(out.join("woa_scatter.csv")).unwrap(),
            std::fs::read(out.join("woa_trials.json")).unwrap(),
        )
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    let scatter = String::from_utf8(first.1).unwrap();
    assert!(scatter.starts_with("method,trial,estimate,c1,c2\n"));
    // 4 quick trials × 2 methods × 2 estimates.
    assert_eq!(scatter.lines().count(), 1 + 16);
    let results: Value = serde_json::from_slice(&first.0).unwrap();
    assert_eq!(results["suite"], "woa");
    assert_eq!(results["criteria"][0]["id"], 11);
}

#[test]
fn bench_reads_a_pgm_corpus() {
    let f = Fixture::new();
    let corpus = f.path("corpus");
    std::fs::create_dir(&corpus).unwrap();
    for i in 0..3 {
        std::fs::write(corpus.join(format!("{i}.pgm")), write_pgm(&synthetic_cover(80, 70, i))).unwrap();
    }
    std::fs::write(corpus.join("notes.txt"), "ignored").unwrap();
    let out = f.path("bench");
    let o = stegolab(&["bench", "chi-square", "--quick", "--corpus", s(&corpus), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results: Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["corpus"], "3 files");
    assert_eq!(results["criteria"][0]["measured"]["images"], 3);
    // Sanity: the file stayed readable.
    assert!(read_pgm(&std::fs::read(corpus.join("0.pgm")).unwrap()).is_ok());
}
