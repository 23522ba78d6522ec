use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seqdesign_core::data::{build_backbone, write_dataset, BackboneStructure, Chain, Vocabulary};

const TINY: &[&str] = &[
    "gen_data.n_train=6",
    "gen_data.n_val=2",
    "gen_data.n_test=3",
    "gen_data.length_range=[12, 16]",
    "model.graph.k=6",
    "model.encoder.d_model=8",
    "model.encoder.n_layers=1",
    "model.lm.d_model=8",
    "model.lm.n_layers=1",
    "model.lm.n_heads=2",
    "model.adapter.n_heads=2",
    "pretrain.steps=3",
    "pretrain.batch_residues=50",
    "pretrain.warmup=2",
    "train.max_steps=3",
    "train.batch_residues=50",
    "train.warmup=2",
];

fn seqdesign(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_seqdesign"));
    cmd.current_dir(dir).env("RUST_LOG", "warn");
    for o in TINY {
        cmd.args(["--set", o]);
    }
    cmd.args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn pipeline(dir: &Path, extra: &[&str]) {
    for cmd in ["gen-data", "pretrain-lm", "train", "design"] {
        let mut args = vec![cmd];
        args.extend_from_slice(extra);
        ok(seqdesign(dir, &args));
    }
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn version_names_checkpoint_format() {
    let out = ok(seqdesign(Path::new("."), &["--version"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains(env!("CARGO_PKG_VERSION")) && text.contains("checkpoint format 1"),
        "{text}"
    );
}

#[test]
fn invalid_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqdesign(dir.path(), &["--set", "train.learning_rat=3", "train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    fs::write(dir.path().join("bad.toml"), "[decoding]\nbogus = 1\n").unwrap();
    let out = seqdesign(dir.path(), &["-c", "bad.toml", "design"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn usage_and_missing_inputs_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        seqdesign(dir.path(), &["frobnicate"]).status.code(),
        Some(2)
    );
    // No dataset yet.
    assert_eq!(
        seqdesign(dir.path(), &["train", "--set", "paths.lm=\"\""])
            .status
            .code(),
        Some(5)
    );
    ok(seqdesign(dir.path(), &["gen-data"]));
    // Dataset present, no language model checkpoint.
    assert_eq!(seqdesign(dir.path(), &["train"]).status.code(), Some(4));
    assert_eq!(seqdesign(dir.path(), &["design"]).status.code(), Some(4));
}

#[test]
fn three_residue_fixture_gives_one_record() {
    let dir = tempfile::tempdir().unwrap();
    ok(seqdesign(dir.path(), &["gen-data"]));
    ok(seqdesign(dir.path(), &["pretrain-lm"]));
    ok(seqdesign(dir.path(), &["train"]));
    let fixture = BackboneStructure {
        id: "tri".into(),
        chains: vec![Chain {
            id: "A".into(),
            residues: build_backbone(&[(-60.0, -45.0); 3]),
        }],
        native: Some(Vocabulary::tokenize("ACD").0),
    };
    write_dataset(dir.path().join("tri.jsonl"), &[fixture]).unwrap();
    let out = ok(seqdesign(
        dir.path(),
        &[
            "design",
            "--input",
            "tri.jsonl",
            "--output",
            "-",
            "--init",
            "full-mask",
            "--T",
            "1",
            "--strategy",
            "argmax",
        ],
    ));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    let rec: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(rec["id"], "tri");
    assert_eq!(rec["sequence"].as_str().unwrap().len(), 3);
    assert_eq!(rec["logprobs"].as_array().unwrap().len(), 3);
    assert_eq!(rec["steps_used"], 1);
}

#[test]
fn pipeline_is_bitwise_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), &["--set", "seed=11"]);
    pipeline(b.path(), &["--set", "seed=11", "--set", "threads=1"]);
    let ta = tree_bytes(a.path());
    assert!(ta.iter().any(|(n, _)| n.ends_with("tensors.bin")));
    assert!(ta.iter().any(|(n, _)| n.ends_with("designs.jsonl")));
    assert_eq!(ta, tree_bytes(b.path()));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    ok(seqdesign(
        a.path(),
        &[
            "gen-data",
            "--set",
            "seed=4",
            "--dump-config",
            "resolved.toml",
        ],
    ));
    let resolved = fs::read_to_string(a.path().join("resolved.toml")).unwrap();
    let b = tempfile::tempdir().unwrap();
    fs::write(b.path().join("c.toml"), &resolved).unwrap();
    // Only the file, no overrides.
    let out = Command::new(env!("CARGO_BIN_EXE_seqdesign"))
        .current_dir(b.path())
        .args(["-c", "c.toml", "gen-data"])
        .output()
        .unwrap();
    ok(out);
    let strip = |v: Vec<(String, Vec<u8>)>| {
        v.into_iter()
            .filter(|(n, _)| !n.ends_with(".toml"))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(tree_bytes(a.path())), strip(tree_bytes(b.path())));
}

#[test]
fn eval_and_sweep_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen-data", "pretrain-lm", "train"] {
        ok(seqdesign(dir.path(), &[cmd]));
    }
    let out = ok(seqdesign(dir.path(), &["eval"]));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(
        table.contains("median recovery") && table.contains("perplexity"),
        "{table}"
    );
    let report: serde_json::Value = serde_json::from_str(
        fs::read_to_string(dir.path().join("run/report.jsonl"))
            .unwrap()
            .trim(),
    )
    .unwrap();
    assert!(report["perplexity"].as_f64().unwrap() >= 1.0);
    ok(seqdesign(
        dir.path(),
        &[
            "sweep",
            "--set",
            "sweep.n_samples=3",
            "--set",
            "sweep.taus=[0.5, 1.0]",
        ],
    ));
    let rows = fs::read_to_string(dir.path().join("run/sweep.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2);
}

#[test]
fn overrides_before_and_after_the_subcommand_combine() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_seqdesign"))
        .current_dir(dir.path())
        .args([
            "--set",
            "gen_data.n_train=4",
            "gen-data",
            "--set",
            "gen_data.n_val=1",
            "--set",
            "gen_data.n_test=1",
        ])
        .output()
        .unwrap();
    ok(out);
    let lines = |f: &str| {
        fs::read_to_string(dir.path().join("run").join(f))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(
        (
            lines("train.jsonl"),
            lines("val.jsonl"),
            lines("test.jsonl")
        ),
        (4, 1, 1)
    );
}

#[test]
fn gradcheck_command_passes_on_a_tiny_stack() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(seqdesign(
        dir.path(),
        &["gradcheck", "--set", "model.adapter.zero_init_output=false"],
    ));
    let text = String::from_utf8(out.stdout).unwrap();
    for g in ["adapter", "encoder", "lm", "proposal"] {
        assert!(text.contains(g), "{text}");
    }
    let out = seqdesign(dir.path(), &["gradcheck", "--set", "precision=\"f32\""]);
    assert_eq!(out.status.code(), Some(3));
}
