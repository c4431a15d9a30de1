//! End-to-end tests of the command-line driver: the five-phase workflow,
//! merge semantics, the pareto filter, and error exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hydro-rom"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn hydro-rom");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn five_phase_pipeline_reproductive() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().to_string();

    // Phase 1: reference solve with snapshot and solution output.
    let out = run_ok(&[
        "fom",
        "--refine", "1",
        "--tf", "0.8",
        "--atwood", "0.333333333333",
        "--write-snapshots", &p("train.lsnap"),
        "--write-solution", &p("fom.lsnap"),
        "--report", &p("fom.csv"),
    ]);
    assert!(out.contains("steps"));
    assert!(Path::new(&p("train.lsnap")).exists());

    // Phase 2: merge (single input passes through).
    run_ok(&[
        "merge",
        "--inputs", &p("train.lsnap"),
        "--output", &p("merged.lsnap"),
        "--nsample", "20",
        "--ef", "0.9999",
        "--indicator", "distance",
    ]);
    assert!(Path::new(&p("merged.lsnap")).exists());
    assert!(Path::new(&p("merged.partition.txt")).exists());

    // Phase 3: offline construction.
    let out = run_ok(&[
        "offline",
        "--refine", "1",
        "--snapshots", &p("merged.lsnap"),
        "--nsample", "20",
        "--ef", "0.9999",
        "--indicator", "distance",
        "--sfac-v", "2",
        "--sfac-e", "2",
        "--outdir", &p("roms"),
    ]);
    assert!(out.contains("windows"));
    assert!(Path::new(&p("roms")).join("meta.txt").exists());
    assert!(Path::new(&p("roms")).join("partition.txt").exists());
    assert!(Path::new(&p("roms")).join("win_00000.lrb").exists());

    // Phase 4: online simulation.
    run_ok(&[
        "online",
        "--bases", &p("roms"),
        "--atwood", "0.333333333333",
        "--tf", "0.8",
        "--write-solution", &p("rom.lsnap"),
        "--trace", &p("trace.csv"),
        "--report", &p("rom.csv"),
    ]);
    let trace = std::fs::read_to_string(p("trace.csv")).unwrap();
    assert!(trace.starts_with("t,dt,window,indicator"));

    // Phase 5: error evaluation.
    let out = run_ok(&[
        "restore",
        "--rom-solution", &p("rom.lsnap"),
        "--fom-solution", &p("fom.lsnap"),
        "--rom-report", &p("rom.csv"),
        "--fom-report", &p("fom.csv"),
        "--output", &p("final.csv"),
    ]);
    assert!(out.contains("eps_v"));
    let rows = hydro_rom::metrics::read_reports(Path::new(&p("final.csv"))).unwrap();
    assert_eq!(rows.len(), 1);
    let eps_v = rows[0].eps_v.unwrap();
    assert!(eps_v < 5e-2, "reproductive pipeline eps_v = {eps_v}");
    assert!(rows[0].speedup.unwrap() > 0.0);

    // The restore row round-trips through the pareto tool.
    run_ok(&["pareto", "--input", &p("final.csv"), "--output", &p("front.csv")]);
    let front = hydro_rom::metrics::read_reports(Path::new(&p("front.csv"))).unwrap();
    assert_eq!(front.len(), 1);
    assert_eq!(front[0], rows[0]);
}

#[test]
fn merge_of_two_single_parameter_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().to_string();
    for (name, atwood) in [("a.lsnap", "0.333333333333"), ("b.lsnap", "0.30")] {
        run_ok(&[
            "fom",
            "--refine", "0",
            "--tf", "0.3",
            "--atwood", atwood,
            "--write-snapshots", &p(name),
        ]);
    }
    let out = run_ok(&[
        "merge",
        "--inputs", &p("a.lsnap"), &p("b.lsnap"),
        "--output", &p("ab.lsnap"),
    ]);
    assert!(out.contains("2 parameters"));
    let merged = hydro_rom::snapshots::SnapshotSet::load(Path::new(&p("ab.lsnap"))).unwrap();
    assert_eq!(merged.n_parameters(), 2);
    let a = hydro_rom::snapshots::SnapshotSet::load(Path::new(&p("a.lsnap"))).unwrap();
    let b = hydro_rom::snapshots::SnapshotSet::load(Path::new(&p("b.lsnap"))).unwrap();
    assert_eq!(merged.total_columns(), a.total_columns() + b.total_columns());
}

#[test]
fn online_without_offline_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "online",
            "--bases",
            &dir.path().join("missing").to_string_lossy(),
            "--atwood",
            "0.33",
            "--tf",
            "1.0",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing window bases"), "stderr: {stderr}");
}

#[test]
fn bad_flags_and_configs_exit_nonzero() {
    let out = bin().args(["fom", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());

    // Refinement out of range is a user error (exit 1).
    let out = bin()
        .args(["fom", "--refine", "9", "--tf", "0.1", "--atwood", "0.33"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Atwood number outside (0, 1) is a user error.
    let out = bin()
        .args(["fom", "--refine", "1", "--tf", "0.1", "--atwood", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn restore_rejects_mismatched_discretizations() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().to_string();
    run_ok(&[
        "fom", "--refine", "0", "--tf", "0.2", "--atwood", "0.33",
        "--write-solution", &p("f0.lsnap"), "--report", &p("r0.csv"),
    ]);
    run_ok(&[
        "fom", "--refine", "1", "--tf", "0.2", "--atwood", "0.33",
        "--write-solution", &p("f1.lsnap"), "--report", &p("r1.csv"),
    ]);
    let out = bin()
        .args([
            "restore",
            "--rom-solution", &p("f0.lsnap"),
            "--fom-solution", &p("f1.lsnap"),
            "--rom-report", &p("r0.csv"),
            "--fom-report", &p("r1.csv"),
            "--output", &p("x.csv"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
