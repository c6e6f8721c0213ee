use std::path::Path;
use std::process::{Command, Output};

fn vbchan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbchan"))
        .args(args)
        .current_dir(dir)
        .env_remove("VBCHAN_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_dataset(dir: &Path) {
    let out = vbchan(
        &[
            "simulate",
            "--out",
            "d.json",
            "--dims",
            "4,3,3",
            "--users",
            "2",
            "--paths",
            "2",
            "--pilot-len",
            "6",
            "--seed",
            "4",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn simulate_then_estimate_each_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let json: String = std::fs::read_to_string(dir.path().join("d.json")).unwrap();
    assert!(json.contains("\"observations\""));
    for (algo, label) in [("ls", "ls"), ("bcd", "bcd-genie"), ("vi", "vi")] {
        let csv = format!("{algo}.csv");
        let out = vbchan(
            &[
                "estimate",
                "--algo",
                algo,
                "--in",
                "d.json",
                "--out",
                &csv,
                "--max-iters",
                "50",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{algo}: {}", stderr(&out));
        let text = std::fs::read_to_string(dir.path().join(&csv)).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "trial,algo,snr_db,pilot_len,rank_bound,mse,iters,seconds,path_counts,converged,seed"
        );
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').nth(1), Some(label));
    }
    let out = vbchan(
        &[
            "estimate",
            "--algo",
            "bcd",
            "--rank-bound",
            "3",
            "--in",
            "d.json",
            "--out",
            "b.csv",
            "--max-iters",
            "20",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(std::fs::read_to_string(dir.path().join("b.csv"))
        .unwrap()
        .contains(",bcd-bound,"));
}

#[test]
fn sweep_writes_row_count_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "dims = [3, 3, 3]\nusers = 2\npaths = 1\ntrials = 5\nsnr_db = [10.0]\nalgorithms = [\"ls\"]\noutput = \"from_config.csv\"\n",
    )
    .unwrap();
    let out = vbchan(
        &[
            "sweep",
            "--config",
            "c.toml",
            "--trials",
            "2",
            "--snr",
            "0,10,20",
            "--algos",
            "ls,bcd-genie",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("from_config.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);

    let out = vbchan(
        &[
            "sweep",
            "--config",
            "c.toml",
            "--out",
            "flag.csv",
            "--sequential",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("flag.csv"))
            .unwrap()
            .lines()
            .count(),
        6
    );
}

#[test]
fn thread_env_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "dims = [3, 3, 3]\nusers = 2\npaths = 1\ntrials = 3\nalgorithms = [\"ls\"]\n",
    )
    .unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_vbchan"))
            .args(["sweep", "--config", "c.toml", "--out", "t.csv"])
            .current_dir(dir.path())
            .env("VBCHAN_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("2").status.success());
    let bad = run("zero");
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("VBCHAN_THREADS"));
}

#[test]
fn bench_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = vbchan(
        &["bench", "--trials", "1", "--rank-bounds", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().next().unwrap().contains("median_s"));
    assert!(stdout.contains("bcd-bound"));
    assert!(stdout.contains("vi"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &[
            "estimate",
            "--algo",
            "vi",
            "--in",
            "missing.json",
            "--out",
            "x.csv",
        ],
        &[
            "estimate", "--algo", "svd", "--in", "d.json", "--out", "x.csv",
        ],
        &["sweep", "--config", "missing.toml", "--out", "x.csv"],
        &["simulate", "--out", "d.json", "--wavelength", "-1"],
    ];
    for args in cases {
        let out = vbchan(args, dir.path());
        assert!(!out.status.success(), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
    std::fs::write(dir.path().join("bad.json"), "{\"format\": 1}").unwrap();
    let out = vbchan(
        &[
            "estimate", "--algo", "ls", "--in", "bad.json", "--out", "x.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.json"));
}
