use std::fs;

use compattn::cli::{dispatch, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use compattn::layers::io::load_weights;
use compattn::layers::Mode;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = dispatch(
        std::iter::once("compattn").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn flops_report_has_headline_ratio_and_breakdown() {
    let (code, out, _) = run(&[
        "flops", "--t", "256", "--v", "4900", "--hidden", "4096", "--layers", "32",
    ]);
    assert_eq!(code, EXIT_OK);
    let ratio: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("ratio composite/baseline: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((ratio - 0.7009).abs() <= 5e-4, "{ratio}");
    for item in ["attention", "ffn", "aligner", "total"] {
        assert!(out.contains(item), "missing {item}");
    }
}

#[test]
fn flops_rejects_empty_text() {
    let (code, out, err) = run(&["flops", "--t", "0", "--v", "4", "--hidden", "8", "--layers", "1"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(out.is_empty());
    assert!(err.contains("T=0"), "{err}");
}

#[test]
fn flops_sweep_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let (code, _, _) = run(&[
        "flops",
        "--t",
        "256",
        "--v",
        "0",
        "--hidden",
        "4096",
        "--layers",
        "32",
        "--sweep",
        "v=0,576,4900",
        "--csv",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "T,V,h,d,baseline_flops,ee_flops,ratio");
    assert_eq!(lines.len(), 4);
    assert!(
        lines[3].starts_with("256,4900,4096,32,") && lines[3].ends_with(",0.700850"),
        "{}",
        lines[3]
    );
}

#[test]
fn flops_instrumented_reports_delta() {
    let (code, out, _) = run(&[
        "flops",
        "--t",
        "5",
        "--v",
        "3",
        "--hidden",
        "8",
        "--layers",
        "2",
        "--instrument",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("(2*T + 2*V)*d*h^2, residual 0"), "{out}");
}

#[test]
fn verify_passes_and_is_deterministic() {
    let a = run(&["verify", "--seed", "7", "--trials", "20"]);
    assert_eq!(a.0, EXIT_OK, "{}", a.1);
    assert!(a.1.starts_with("verify seed=7 trials=20\n"));
    assert!(a.1.contains("failures: 0"));
    assert_eq!(a, run(&["verify", "--seed", "7", "--trials", "20"]));
}

#[test]
fn gradcheck_passes_and_flags_bad_eps() {
    let (code, out, _) = run(&["gradcheck", "--seeds", "4"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.starts_with("gradcheck seed=0 seeds=4"));
    assert_eq!(run(&["gradcheck", "--eps", "0"]).0, EXIT_USAGE);
    // A step this coarse cannot meet the tolerance.
    assert_eq!(run(&["gradcheck", "--seeds", "2", "--eps", "0.5"]).0, EXIT_FAILURE);
}

#[test]
fn bench_small_run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    let (code, out, _) = run(&[
        "bench",
        "--v",
        "16",
        "--t",
        "4",
        "--hidden",
        "16",
        "--layers",
        "1",
        "--heads",
        "2",
        "--gen",
        "2,4",
        "--repeats",
        "3",
        "--csv",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    let csv = fs::read_to_string(&path).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "mode,V,T,gen,prefill_s,decode_s_total,tok_per_s"
    );
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(
        run(&[
            "bench",
            "--v",
            "4",
            "--t",
            "2",
            "--hidden",
            "8",
            "--layers",
            "1",
            "--repeats",
            "2"
        ])
        .0,
        EXIT_USAGE
    );
}

#[test]
fn generate_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("model.bin");
    let f = dir.path().join("features.bin");
    let (w, f) = (w.to_str().unwrap(), f.to_str().unwrap());
    let first = run(&[
        "generate",
        "--prompt-ids",
        "1,5,2",
        "--max-new",
        "6",
        "--seed",
        "3",
        "--save-weights",
        w,
        "--save-features",
        f,
    ]);
    assert_eq!(first.0, EXIT_OK, "{}", first.2);
    assert_eq!(load_weights(w).unwrap().mode(), Mode::Composite);
    let again = run(&[
        "generate",
        "--weights",
        w,
        "--features",
        f,
        "--prompt-ids",
        "1,5,2",
        "--max-new",
        "6",
        "--seed",
        "3",
    ]);
    assert_eq!(first.1, again.1);
    let ids = first.1.lines().find_map(|l| l.strip_prefix("ids: ")).unwrap();
    assert_eq!(ids.split(',').count(), 6);

    let baseline = run(&[
        "generate",
        "--weights",
        w,
        "--features",
        f,
        "--prompt-ids",
        "1,5,2",
        "--max-new",
        "2",
        "--mode",
        "baseline",
    ]);
    assert!(baseline.1.contains("mode=baseline"));
}

#[test]
fn generate_rejects_bad_inputs() {
    assert_eq!(
        run(&["generate", "--prompt-ids", "999", "--max-new", "2"]).0,
        EXIT_USAGE
    );
    assert_eq!(run(&["generate", "--prompt-ids", "1", "--max-new", "0"]).0, EXIT_USAGE);
    let (code, _, err) = run(&[
        "generate",
        "--weights",
        "/nonexistent/w.bin",
        "--prompt-ids",
        "1",
        "--max-new",
        "1",
    ]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(err.contains("error"));
}

#[test]
fn config_file_fills_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(
        &cfg,
        "# headline config\nt = 256\nv = 4900\nhidden = 4096\nlayers = 32\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let (code, out, _) = run(&["--config", cfg, "flops"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("config: T=256 V=4900 h=4096 d=32"));
    let (_, out, _) = run(&["flops", "--config", cfg, "--v", "0"]);
    assert!(out.contains("config: T=256 V=0 h=4096 d=32"), "{out}");
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "trials = 5\nbogus = 1\n").unwrap();
    let (code, _, err) = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("unknown key 'bogus'"), "{err}");
    fs::write(&cfg, "no equals sign\n").unwrap();
    assert_eq!(run(&["verify", "--config", cfg.to_str().unwrap()]).0, EXIT_USAGE);
}
