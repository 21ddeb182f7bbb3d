use branchtail_cli::{
    config_hash, parse_config, run_with, Command, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_OK,
};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["branchtail".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(&argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn params_prints_exponent_and_footer() {
    let (code, out, err) = run(&["params", "--dist", "pmf: 1:0.5, 2:0.5"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("key,value\n"));
    let tau: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("tau,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((tau - 2f64.ln() / 1.5f64.ln()).abs() < 1e-12);
    assert!(out
        .lines()
        .last()
        .unwrap()
        .starts_with("# seed=0, config_hash="));
    assert!(err.contains("schroeder") || err.contains("τ="));
}

#[test]
fn point_mass_exits_degenerate() {
    let (code, _, err) = run(&["params", "--dist", "pmf: 2:1.0"]);
    assert_eq!(code, EXIT_DEGENERATE, "{err}");
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "seed = 3\n# comment\nbogus = 1\n").unwrap();
    let (code, _, err) = run(&["params", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn parse_config_collects_every_problem() {
    let e = parse_config("seed = x\nnot a pair\nlevel = 6\nthreads = 0\n").unwrap_err();
    let lines: Vec<usize> = e.problems.iter().map(|p| p.0).collect();
    assert_eq!(lines, vec![1, 2, 4]);

    let c =
        parse_config("seed = 9 # trailing\n\nq = 2,1\ndistribution = geometric: 0.5\n").unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.settings["q"], "2,1");
    assert_eq!(c.distribution.as_deref(), Some("geometric: 0.5"));
}

#[test]
fn setting_for_another_subcommand_is_refused() {
    let (code, _, err) = run(&["params", "--dist", "geometric: 0.5", "--set", "q=2"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("q"), "{err}");
}

#[test]
fn zero_threads_is_a_config_error() {
    let (code, _, _) = run(&["params", "--dist", "geometric: 0.5", "--threads", "0"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn hash_ignores_threads_and_destination() {
    let mut a = parse_config("seed = 1\nlevel = 5\n").unwrap();
    let h = config_hash(Command::BmGreen, &a);
    a.threads = 8;
    a.out = Some("x.csv".into());
    assert_eq!(config_hash(Command::BmGreen, &a), h);
    a.seed = 2;
    assert_ne!(config_hash(Command::BmGreen, &a), h);
    assert_ne!(
        config_hash(
            Command::IltTail,
            &parse_config("seed = 1\nlevel = 5\n").unwrap()
        ),
        h
    );
}

#[test]
fn output_is_independent_of_thread_count() {
    let base = [
        "bm-green", "--level", "4", "--budget", "2000", "--seed", "11",
    ];
    let (c1, one, _) = run(&[&base[..], &["--threads", "1"]].concat());
    let (c2, three, _) = run(&[&base[..], &["--threads", "3"]].concat());
    assert_eq!((c1, c2), (EXIT_OK, EXIT_OK));
    assert_eq!(one, three);
}

#[test]
fn out_flag_writes_csv_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("green.csv");
    let (code, out, _) = run(&[
        "bm-green",
        "--level",
        "3",
        "--budget",
        "500",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.contains("config_hash="));
    assert!(!out.contains("config_hash="));
    assert!(!out.is_empty());
}
