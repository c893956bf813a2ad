use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn probcbma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probcbma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_fixture(dir: &Path) {
    fs::write(
        dir.join("features.tsv"),
        "study_id\tterm\ttfidf\n\
         s1\tinsula\t0.3\ns1\tspeech\t0.12\ns2\tinsula\t0.05\ns2\tspeech\t0.4\n\
         s3\tinsula\t0.2\ns4\tspeech\t0.09\ns4\tinsula\t0.11\ns5\tinsula\t0.5\n\
         s5\tspeech\t0.5\ns6\tspeech\t0.2\n",
    )
    .unwrap();
    fs::write(
        dir.join("activations.tsv"),
        "study_id\tvoxel_id\ns1\tv1\ns2\tv1\ns3\tv2\ns4\tv1\ns5\tv2\ns5\tv3\ns6\tv3\n",
    )
    .unwrap();
}

fn parse_tsv(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.rsplit_once('\t').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

const QUERY: &str = "Activation(v) | insula & speech";

#[test]
fn query_writes_per_voxel_table() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let d = dir.path().to_str().unwrap();
    let o = probcbma(&["query", "--dataset", d, "--mode", "hard", "--tau", "0.1", QUERY]);
    assert!(o.status.success(), "{}", stderr(&o));
    // matching studies: s1 and s5, which report v1 and {v2, v3}
    let rows = parse_tsv(&stdout(&o));
    assert_eq!(
        rows,
        vec![("v1".into(), 0.5), ("v2".into(), 0.5), ("v3".into(), 0.5)]
    );
    assert!(stdout(&o).starts_with("v\tp\n"));
}

#[test]
fn engines_agree_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let d = dir.path().to_str().unwrap();
    for q in [QUERY, "Activation(v) | insula | speech", "Activation(v) | insula & !speech"] {
        let run = |engine: &str| {
            let o = probcbma(&["query", "--dataset", d, "--mode", "soft", "--alpha", "300", "--engine", engine, q]);
            assert!(o.status.success(), "{engine}: {}", stderr(&o));
            parse_tsv(&stdout(&o))
        };
        let (oracle, lifted, est) = (run("oracle"), run("lifted"), run("estimator"));
        for other in [&lifted, &est] {
            assert_eq!(oracle.len(), other.len());
            for ((k1, p1), (k2, p2)) in oracle.iter().zip(other.iter()) {
                assert_eq!(k1, k2);
                assert!((p1 - p2).abs() < 1e-9, "{q}: {p1} vs {p2}");
            }
        }
    }
}

#[test]
fn output_is_deterministic_and_written_to_file() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = dir.path().join("out.tsv");
    let o = probcbma(&["query", "--dataset", d, "--out", out.to_str().unwrap(), QUERY]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let again = probcbma(&["query", "--dataset", d, QUERY]);
    assert_eq!(fs::read(&out).unwrap(), again.stdout);
}

#[test]
fn forward_map_output() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let d = dir.path().to_str().unwrap();
    let map = dir.path().join("map.tsv");
    let o = probcbma(&["query", "--dataset", d, "--map", map.to_str().unwrap(), QUERY]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(map).unwrap();
    assert!(text.starts_with("v\tp\tG\tp_value\tsignificant\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn explain_shows_one_exclusive_sum_per_plan() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = probcbma(&["explain", "--dataset", dir.path().to_str().unwrap(), QUERY]);
    assert!(o.status.success());
    let text = stdout(&o);
    let (numerator, denominator) = text.split_once("denominator:").unwrap();
    assert_eq!(numerator.matches("ExclusiveSum").count(), 1, "{text}");
    assert_eq!(denominator.matches("ExclusiveSum").count(), 1, "{text}");
}

#[test]
fn program_queries_and_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("h0.pl");
    fs::write(
        &prog,
        "0.5::R(a).\n0.5::S(a, b).\n0.5::T(b).\nQ() :- R(x), S(x, y).\nQ() :- S(x, y), T(y).\n",
    )
    .unwrap();
    let p = prog.to_str().unwrap();
    let o = probcbma(&["query", "--program", p, "--engine", "lifted", "Q()"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = probcbma(&["query", "--program", p, "--engine", "oracle", "Q()"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "p\n0.375\n");
    let o = probcbma(&["query", "--program", p, "Q()"]);
    assert_eq!(o.status.code(), Some(2), "estimator needs a dataset");
}

#[test]
fn user_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pl");
    fs::write(&bad, "0.5::R(a).\nR(a.\n").unwrap();
    let o = probcbma(&["query", "--program", bad.to_str().unwrap(), "--engine", "lifted", "R(x)"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.pl:2:"), "{}", stderr(&o));

    write_fixture(dir.path());
    let d = dir.path().to_str().unwrap();
    let o = probcbma(&["query", "--dataset", d, "Activation(v) | insula & motor"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("motor"));
    let o = probcbma(&["query", "--dataset", d, "--tau", "-1", QUERY]);
    assert_eq!(o.status.code(), Some(2));
    let o = probcbma(&["query", "--dataset", "/nonexistent", QUERY]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    fs::write(&cfg, "n_studies = 300\nn_voxels = 40\n").unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = probcbma(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        ["features.tsv", "activations.tsv", "truth.tsv"].map(|f| fs::read(out.join(f)).unwrap())
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
    let truth = String::from_utf8(a[2].clone()).unwrap();
    assert_eq!(truth.lines().filter(|l| l.ends_with("\t1")).count(), 2);
}

#[test]
fn benchmarks_write_tables_and_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    fs::write(
        &cfg,
        "[generator]\nn_studies = 400\nn_voxels = 40\n\n[bench]\nsample_sizes = [100, 400]\nrepeats = 2\nn_query_terms = 3\n",
    )
    .unwrap();
    let out = dir.path().join("f1");
    let o = probcbma(&["bench-f1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(out.join("f1.tsv")).unwrap();
    // 3 pairs x 2 sizes x 2 repeats x 2 modes
    assert_eq!(tsv.lines().count(), 1 + 24);
    let json = fs::read_to_string(out.join("f1_summary.json")).unwrap();
    assert!(json.contains("\"median\""));

    let sim = dir.path().join("sim");
    let o = probcbma(&["simulate", "--out", sim.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "generator tables are not valid generator files");
    let gen = dir.path().join("gen.toml");
    fs::write(&gen, "n_studies = 400\nn_voxels = 40\n").unwrap();
    let o = probcbma(&["simulate", "--out", sim.to_str().unwrap(), "--config", gen.to_str().unwrap()]);
    assert!(o.status.success());
    let ccfg = dir.path().join("cons.toml");
    fs::write(&ccfg, "[bench]\nsample_sizes = [100]\nsubsamples = 3\nn_query_terms = 2\n").unwrap();
    let out = dir.path().join("cons");
    let o = probcbma(&[
        "bench-consistency",
        "--dataset",
        sim.to_str().unwrap(),
        "--config",
        ccfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(out.join("consistency.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 2);
    assert!(out.join("consistency_summary.json").exists());
}
