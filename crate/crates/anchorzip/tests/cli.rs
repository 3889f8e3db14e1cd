use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anchorzip::formats::{load_cloud, Format};
use anchorzip_core::codec::rate_report;

const PROFILE: &str = "\
[prune]
tau = 0.2

[model]
embed = 4
hidden = 8

[fit]
iterations = 3
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anchorzip"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn anchorzip")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work { dir: tempfile::tempdir().expect("tempdir") };
        fs::write(w.path("profile.toml"), PROFILE).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn generate(&self, name: &str, count: usize, model: &str) {
        let out = run(&["generate", "--output", &self.s(name), "--count", &count.to_string(), "--model", model, "--channels", "6", "--offsets", "2", "--seed", "5"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }

    fn encode(&self, input: &str, output: &str, extra: &[&str]) -> Output {
        let (i, o, p) = (self.s(input), self.s(output), self.s("profile.toml"));
        let mut args = vec!["encode", "--input", &i, "--output", &o, "--profile", &p, "--seed", "3"];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest", "--seed", "11"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{stdout}");
}

#[test]
fn generate_encode_decode_stats() {
    let w = Work::new();
    w.generate("scene.lgac", 400, "smooth");
    let out = w.encode("scene.lgac", "scene.lghc", &["--report", &w.s("rate.json")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&read(&w.path("rate.json"))).unwrap();
    assert_eq!(json["anchors"], 400);
    assert_eq!(json["total_bytes"].as_u64().unwrap() as usize, read(&w.path("scene.lghc")).len());

    let out = run(&["decode", "--input", &w.s("scene.lghc"), "--output", &w.s("back.csv")]);
    assert_eq!(code(&out), 0);
    let back = load_cloud(&w.path("back.csv"), Format::from_path(&w.path("back.csv"))).unwrap();
    let original = load_cloud(&w.path("scene.lgac"), Format::Native).unwrap();
    assert_eq!(back.len(), original.len());
    assert_eq!(back.channel_count(), 6);

    let out = run(&["stats", "--input", &w.s("scene.lghc")]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("anchors=400"), "{stdout}");
    let report = rate_report(&read(&w.path("scene.lghc"))).unwrap();
    assert!(stdout.contains(&format!("total_bytes={}", report.total_bytes)));
}

#[test]
fn thread_count_does_not_change_bytes() {
    let w = Work::new();
    w.generate("scene.lgac", 600, "clustered");
    for (threads, name) in [("1", "a.lghc"), ("2", "b.lghc"), ("1", "c.lghc")] {
        let out = w.encode("scene.lgac", name, &["--threads", threads]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = read(&w.path("a.lghc"));
    assert_eq!(a, read(&w.path("b.lghc")));
    assert_eq!(a, read(&w.path("c.lghc")));
}

#[test]
fn prune_needs_a_threshold() {
    let w = Work::new();
    w.generate("scene.lgac", 200, "iid");
    let out = run(&["prune", "--input", &w.s("scene.lgac"), "--output", &w.s("p.lgac")]);
    assert_eq!(code(&out), 2);
    let out = run(&["prune", "--input", &w.s("scene.lgac"), "--output", &w.s("p.lgac"), "--tau", "0.3", "--report", &w.s("p.tsv")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pruned = load_cloud(&w.path("p.lgac"), Format::Native).unwrap();
    assert!(pruned.len() < 200 && !pruned.is_empty());
    let tsv = fs::read_to_string(w.path("p.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 201);
    let out = w.encode("scene.lgac", "p.lghc", &["--prune"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_then_encode_with_model() {
    let w = Work::new();
    w.generate("scene.lgac", 300, "smooth");
    let (i, m, p, r) = (w.s("scene.lgac"), w.s("m.lgcm"), w.s("profile.toml"), w.s("trace.tsv"));
    let out = run(&["fit", "--input", &i, "--output", &m, "--profile", &p, "--seed", "3", "--report", &r]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(w.path("trace.tsv")).unwrap().lines().count(), 5);
    let out = w.encode("scene.lgac", "with_model.lghc", &["--model", &m]);
    assert_eq!(code(&out), 0);
    let out = w.encode("scene.lgac", "fitted.lghc", &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(read(&w.path("with_model.lghc")), read(&w.path("fitted.lghc")));
}

#[test]
fn exit_codes() {
    let w = Work::new();
    // Unknown flag and malformed input: invalid input.
    assert_eq!(code(&run(&["encode", "--bogus"])), 2);
    fs::write(w.path("bad.csv"), "x,y,z\n1,2\n").unwrap();
    let out = w.encode("bad.csv", "bad.lghc", &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    fs::write(w.path("bad.toml"), "[fit]\nbogus = 1\n").unwrap();
    w.generate("scene.lgac", 50, "iid");
    let out = run(&["encode", "--input", &w.s("scene.lgac"), "--output", &w.s("x.lghc"), "--profile", &w.s("bad.toml")]);
    assert_eq!(code(&out), 2);

    // Corrupt stream.
    assert_eq!(code(&w.encode("scene.lgac", "ok.lghc", &[])), 0);
    let mut bytes = read(&w.path("ok.lghc"));
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(w.path("broken.lghc"), &bytes).unwrap();
    assert_eq!(code(&run(&["decode", "--input", &w.s("broken.lghc"), "--output", &w.s("y.csv")])), 3);
    bytes.truncate(10);
    fs::write(w.path("short.lghc"), &bytes).unwrap();
    assert_eq!(code(&run(&["stats", "--input", &w.s("short.lghc")])), 3);

    // Missing file.
    assert_eq!(code(&run(&["decode", "--input", &w.s("missing.lghc"), "--output", &w.s("z.csv")])), 1);
}
