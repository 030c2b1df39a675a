use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "mesh,k,epsilon,sigma,N,l2_err,l2_rate,superclose_err,superclose_rate,energy_err,energy_rate";

fn layerdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerdg")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn cells(line: &str) -> Vec<String> {
    line.split(',').map(str::to_string).collect()
}

fn significant_digits(s: &str) -> usize {
    let mant = s.split(['e', 'E']).next().unwrap();
    mant.chars()
        .filter(|c| c.is_ascii_digit())
        .collect::<String>()
        .trim_start_matches('0')
        .len()
}

#[test]
fn study_csv_matches_bakhvalov_rows() {
    let o = layerdg(&[
        "study",
        "--mesh",
        "bakhvalov",
        "--degree",
        "1",
        "--epsilon",
        "1e-8",
        "--N",
        "16,32",
        "--out",
        "-",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    let first = cells(lines[1]);
    assert_eq!(&first[..5], ["bakhvalov", "1", "1e-8", "3", "16"]);
    // rates are empty, not 0, on the first row
    assert_eq!(first[6], "");
    assert_eq!(first[8], "");
    assert_eq!(first[10], "");
    let second = cells(lines[2]);
    for c in [5, 6, 7, 8, 9, 10] {
        assert!(significant_digits(&second[c]) <= 6, "{}", second[c]);
    }
    let val = |row: &[String], c: usize| row[c].parse::<f64>().unwrap();
    // published B-mesh values
    assert!((val(&first, 5) / 8.2628e-3 - 1.0).abs() < 0.02);
    assert!((val(&second, 5) / 2.1582e-3 - 1.0).abs() < 0.02);
    assert!((val(&second, 6) - 1.9368).abs() < 0.05);
}

#[test]
fn study_markdown_and_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.md");
    let o = layerdg(&[
        "study",
        "--mesh",
        "shishkin",
        "--degree",
        "1",
        "--epsilon",
        "1e-4",
        "--N",
        "8,16",
        "--format",
        "md",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let md = std::fs::read_to_string(&out).unwrap();
    assert!(md.contains("| N |"));
    assert!(md.contains("rS"));
    assert_eq!(
        md.lines()
            .filter(|l| l.starts_with("| 8 ") || l.starts_with("| 16 "))
            .count(),
        2
    );
}

#[test]
fn study_rates_flag_overrides_auto() {
    let o = layerdg(&[
        "study",
        "--mesh",
        "shishkin",
        "--degree",
        "1",
        "--epsilon",
        "1e-4",
        "--N",
        "8,16",
        "--rates",
        "r2",
        "--out",
        "-",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(cells).collect();
    let e: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    let r: f64 = rows[1][6].parse().unwrap();
    assert!((r - (e[0] / e[1]).log2()).abs() < 1e-4);
}

#[test]
fn sequential_study_is_reproducible() {
    let args = [
        "study",
        "--mesh",
        "bs",
        "--degree",
        "2",
        "--epsilon",
        "1e-6",
        "--N",
        "8,16",
        "--jobs",
        "1",
        "--out",
        "-",
    ];
    assert_eq!(stdout(&layerdg(&args)), stdout(&layerdg(&args)));
    let mut par = args.to_vec();
    par[10] = "2";
    let p = stdout(&layerdg(&par));
    let ns: Vec<String> = p.lines().skip(1).map(|l| cells(l)[4].clone()).collect();
    assert_eq!(ns, ["8", "16"]);
}

#[test]
fn robust_has_one_row_per_epsilon_and_no_rates() {
    let o = layerdg(&[
        "robust",
        "--mesh",
        "shishkin",
        "--degree",
        "1",
        "--N",
        "8",
        "--epsilon",
        "1e-3,1e-5,1e-7",
        "--out",
        "-",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(cells).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[4], "8");
        assert!(r[6].is_empty() && r[8].is_empty() && r[10].is_empty());
    }
    let eps: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(eps, [1e-3, 1e-5, 1e-7]);
}

#[test]
fn solve_writes_row_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let (out, mesh, mat) = (p("row.csv"), p("mesh.txt"), p("a.mtx"));
    let o = layerdg(&[
        "solve",
        "--mesh",
        "bs",
        "--N",
        "8",
        "--degree",
        "1",
        "--epsilon",
        "1e-3",
        "--lambda1",
        "0.5",
        "--quad",
        "6",
        "--dump-mesh",
        &mesh,
        "--dump-matrix",
        &mat,
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap(), HEADER);
    let m = std::fs::read_to_string(&mesh).unwrap();
    let blocks: Vec<&str> = m.split("\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].lines().count(), 9);
    let a = std::fs::read_to_string(&mat).unwrap();
    let mut lines = a.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("%%MatrixMarket matrix coordinate real general"));
    let dims: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(dims[0], 3 * 4 * 64);
    assert_eq!(dims[0], dims[1]);
    assert_eq!(lines.count(), dims[2]);
}

#[test]
fn monolithic_and_condensed_agree() {
    let run = |s: &str| {
        let o = layerdg(&[
            "solve",
            "--mesh",
            "shishkin",
            "--N",
            "8",
            "--degree",
            "2",
            "--epsilon",
            "1e-5",
            "--solver",
            s,
            "--out",
            "-",
        ]);
        assert!(o.status.success());
        stdout(&o)
    };
    assert_eq!(run("monolithic"), run("condensed"));
}

fn code(args: &[&str]) -> i32 {
    layerdg(args).status.code().unwrap()
}

#[test]
fn invalid_configurations_exit_2() {
    let base = ["study", "--degree", "1", "--out", "-"];
    let with = |extra: &[&'static str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(extra);
        v
    };
    assert_eq!(code(&with(&["--mesh", "uniform", "--epsilon", "1e-3", "--N", "8"])), 2);
    assert_eq!(code(&with(&["--mesh", "bs", "--epsilon", "1e-3", "--N", "8,24"])), 2);
    assert_eq!(code(&with(&["--mesh", "bs", "--epsilon", "1e-12", "--N", "8"])), 2);
    assert_eq!(code(&with(&["--mesh", "bs", "--epsilon", "1e-3", "--N", "7"])), 2);
    assert_eq!(
        code(&with(&[
            "--mesh",
            "bs",
            "--epsilon",
            "1e-3",
            "--N",
            "8",
            "--solver",
            "cg"
        ])),
        2
    );
    assert_eq!(
        code(&with(&[
            "--mesh",
            "bs",
            "--epsilon",
            "1e-3",
            "--N",
            "8",
            "--lambda1",
            "-1"
        ])),
        2
    );
    assert_eq!(
        code(&with(&["--mesh", "bs", "--epsilon", "1e-3", "--N", "8", "--jobs", "0"])),
        2
    );
    assert_eq!(
        code(&[
            "solve",
            "--mesh",
            "bs",
            "--degree",
            "0",
            "--N",
            "8",
            "--epsilon",
            "1e-3",
            "--out",
            "-"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "robust",
            "--mesh",
            "bs",
            "--degree",
            "1",
            "--N",
            "8",
            "--epsilon",
            "2",
            "--out",
            "-"
        ]),
        2
    );
}

#[test]
fn failed_row_exits_3_and_keeps_other_rows() {
    let o = layerdg(&[
        "robust",
        "--mesh",
        "bakhvalov",
        "--degree",
        "1",
        "--N",
        "8",
        "--epsilon",
        "1e-4,1e-300",
        "--allow-tiny-epsilon",
        "--out",
        "-",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let text = stdout(&o);
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(cells).collect();
    assert_eq!(rows.len(), 2);
    assert!(!rows[0][5].is_empty());
    assert!(rows[1][5].is_empty());
}

#[test]
fn unwritable_output_is_reported() {
    let o = layerdg(&[
        "study",
        "--mesh",
        "bs",
        "--degree",
        "1",
        "--epsilon",
        "1e-3",
        "--N",
        "8",
        "--out",
        Path::new("/nonexistent/dir/t.csv").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/dir/t.csv"));
}
