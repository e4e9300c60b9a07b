//! End-to-end tests of the `kvpack` binary: workflows, wire-format files on
//! disk, exit codes, and byte-deterministic output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kvpack"));
    cmd.env_remove("KVPACK_SEED");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawning kvpack")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

#[test]
fn build_inspect_query_pipeline() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "facts.txt",
        "the vault code is 4417\nthe vault is in room 9\n",
    );

    let built = run(dir.path(), &["build", "--facts", "facts.txt", "--out", "p.kvpk", "--no-timing"]);
    assert_code(&built, 0);
    let built_out = stdout(&built);
    assert!(built_out.contains("fingerprint:"), "{built_out}");
    assert!(built_out.contains("facts: 2"), "{built_out}");

    let inspected = run(dir.path(), &["inspect", "p.kvpk"]);
    assert_code(&inspected, 0);
    let text = stdout(&inspected);
    assert!(text.contains("kind            pack"), "{text}");
    assert!(text.contains("dialect         chatml"), "{text}");
    assert!(text.contains("facts           2"), "{text}");

    let queried = run(
        dir.path(),
        &["query", "--pack", "p.kvpk", "--question", "what is the code?", "--max-new", "8", "--no-timing"],
    );
    assert_code(&queried, 0);
    let q = stdout(&queried);
    assert!(q.contains("answer:"), "{q}");
    assert!(q.contains("kv prompt"), "{q}");
    assert!(q.contains("degeneracy:"), "{q}");
}

#[test]
fn kv_cost_independent_of_fact_count() {
    let dir = TempDir::new().unwrap();
    let one: String = "fact zero mentions the copper relay\n".to_string();
    let fifty: String = (0..50)
        .map(|i| format!("fact {i} mentions relay number {i}\n"))
        .collect();
    write(dir.path(), "one.txt", &one);
    write(dir.path(), "fifty.txt", &fifty);

    let kv_of = |facts: &str, pack: &str| -> (usize, usize) {
        assert_code(
            &run(dir.path(), &["build", "--facts", facts, "--out", pack, "--no-timing"]),
            0,
        );
        let out = run(
            dir.path(),
            &[
                "query", "--pack", pack, "--question", "which relay?", "--max-new", "4",
                "--no-timing", "--format", "records",
            ],
        );
        assert_code(&out, 0);
        let rec = stdout(&out);
        let field = |name: &str| -> usize {
            rec.lines()
                .find(|l| l.starts_with("kvpack-record"))
                .and_then(|l| {
                    l.split_whitespace()
                        .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
                })
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(|| panic!("missing {name} in {rec}"))
        };
        (field("kv"), field("rag"))
    };

    let (kv_one, rag_one) = kv_of("one.txt", "one.kvpk");
    let (kv_fifty, rag_fifty) = kv_of("fifty.txt", "fifty.kvpk");
    assert_eq!(kv_one, kv_fifty, "question cost must not depend on pack size");
    assert!(rag_fifty > rag_one);
}

#[test]
fn raw_build_differs_from_templated() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "facts.txt", "alpha beta gamma\n");
    let t = run(dir.path(), &["build", "--facts", "facts.txt", "--out", "t.kvpk", "--no-timing"]);
    let r = run(
        dir.path(),
        &["build", "--facts", "facts.txt", "--raw", "--out", "r.kvpk", "--no-timing"],
    );
    assert_code(&t, 0);
    assert_code(&r, 0);
    let len = |s: &str| -> usize {
        s.lines()
            .find(|l| l.starts_with("cache length:"))
            .and_then(|l| l.split_whitespace().nth(2))
            .and_then(|v| v.parse().ok())
            .unwrap()
    };
    assert_ne!(len(&stdout(&t)), len(&stdout(&r)));
}

#[test]
fn sequential_compose_writes_the_joint_pack() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "a.txt", "first fact about anchors\n");
    write(dir.path(), "b.txt", "second fact about breezes\n");
    write(
        dir.path(),
        "ab.txt",
        "first fact about anchors\nsecond fact about breezes\n",
    );
    assert_code(
        &run(dir.path(), &["build", "--facts", "a.txt", "--out", "a.kvpk", "--no-timing"]),
        0,
    );
    assert_code(
        &run(
            dir.path(),
            &["compose", "--sequential", "--pack", "a.kvpk", "--facts", "b.txt", "--out", "ab.kvpk"],
        ),
        0,
    );
    assert_code(
        &run(dir.path(), &["build", "--facts", "ab.txt", "--out", "joint.kvpk", "--no-timing"]),
        0,
    );
    let composed = std::fs::read(dir.path().join("ab.kvpk")).unwrap();
    let joint = std::fs::read(dir.path().join("joint.kvpk")).unwrap();
    assert_eq!(composed, joint, "composed pack file must equal the joint build");
}

#[test]
fn naive_compose_warns_and_differs() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "a.txt", "first fact about anchors\n");
    write(dir.path(), "b.txt", "second fact about breezes\n");
    for (facts, pack) in [("a.txt", "a.kvpk"), ("b.txt", "b.kvpk")] {
        assert_code(
            &run(dir.path(), &["build", "--facts", facts, "--out", pack, "--no-timing"]),
            0,
        );
    }
    let out = run(
        dir.path(),
        &["compose", "--naive", "--pack", "a.kvpk", "--pack-b", "b.kvpk", "--out", "n.kvpk"],
    );
    assert_code(&out, 0);
    assert!(stderr(&out).contains("naive composition breaks rotary positions"));

    assert_code(
        &run(
            dir.path(),
            &["compose", "--sequential", "--pack", "a.kvpk", "--facts", "b.txt", "--out", "s.kvpk"],
        ),
        0,
    );
    let naive = std::fs::read(dir.path().join("n.kvpk")).unwrap();
    let seq = std::fs::read(dir.path().join("s.kvpk")).unwrap();
    assert_ne!(naive, seq);
}

#[test]
fn steer_workflow_and_alpha_zero_identity() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "facts.txt", "the signal tower is north\n");
    write(dir.path(), "good.txt", "careful checked work\n");
    write(dir.path(), "bad.txt", "rushed sloppy work\n");
    assert_code(
        &run(dir.path(), &["build", "--facts", "facts.txt", "--out", "p.kvpk", "--no-timing"]),
        0,
    );
    assert_code(
        &run(
            dir.path(),
            &["steer", "build-delta", "--good", "good.txt", "--bad", "bad.txt", "--out", "d.kvsd"],
        ),
        0,
    );

    let inspected = run(dir.path(), &["inspect", "d.kvsd"]);
    assert_code(&inspected, 0);
    assert!(stdout(&inspected).contains("kind            delta"));

    // Applying at alpha 0 must reproduce the pack file byte for byte.
    assert_code(
        &run(
            dir.path(),
            &[
                "steer", "apply", "--pack", "p.kvpk", "--delta", "d.kvsd", "--alpha", "0",
                "--layers", "all", "--out", "zero.kvpk",
            ],
        ),
        0,
    );
    let original = std::fs::read(dir.path().join("p.kvpk")).unwrap();
    let zeroed = std::fs::read(dir.path().join("zero.kvpk")).unwrap();
    assert_eq!(original, zeroed);

    let cos = run(
        dir.path(),
        &["steer", "cosine", "--delta", "d.kvsd", "--delta-b", "d.kvsd"],
    );
    assert_code(&cos, 0);
    assert!(stdout(&cos).contains("cosine: 1.000000"), "{}", stdout(&cos));

    // Query with the delta reports the channel.
    let q = run(
        dir.path(),
        &[
            "query", "--pack", "p.kvpk", "--question", "where is the tower?", "--max-new", "6",
            "--delta", "d.kvsd", "--alpha", "0.5", "--layers", "mid", "--no-timing",
        ],
    );
    assert_code(&q, 0);
    assert!(stdout(&q).contains("steering: alpha=0.5 layers=mid channel=values"));
}

#[test]
fn route_builds_banks_and_answers() {
    let dir = TempDir::new().unwrap();
    let facts: String = (0..100)
        .map(|i| {
            let t = i / 20;
            format!("topic{t} theme{t} subject{t} area{t} detail{i}\n")
        })
        .collect();
    write(dir.path(), "facts.txt", &facts);

    let out = run(
        dir.path(),
        &[
            "route", "--build", "facts.txt", "--save-index", "i.kvbi",
            "--question", "topic2 theme2 subject2 area2 detail45", "--max-new", "6", "--no-timing",
        ],
    );
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("banks: 5"), "{text}");
    assert!(text.contains("fact 45:"), "{text}");
    assert!(text.contains("answer:"), "{text}");

    // Routed answer equals the manual two-step pipeline over the top fact.
    write(dir.path(), "top.txt", "topic2 theme2 subject2 area2 detail45\n");
    assert_code(
        &run(dir.path(), &["build", "--facts", "top.txt", "--out", "top.kvpk", "--no-timing"]),
        0,
    );
    let manual = run(
        dir.path(),
        &[
            "query", "--pack", "top.kvpk", "--question", "topic2 theme2 subject2 area2 detail45",
            "--max-new", "6", "--no-timing",
        ],
    );
    assert_code(&manual, 0);
    let routed_answer = text.lines().find(|l| l.starts_with("answer:")).unwrap();
    let manual_answer = stdout(&manual);
    let manual_answer = manual_answer.lines().find(|l| l.starts_with("answer:")).unwrap();
    assert_eq!(routed_answer, manual_answer);

    let inspected = run(dir.path(), &["inspect", "i.kvbi"]);
    assert_code(&inspected, 0);
    assert!(stdout(&inspected).contains("banks           5"));
}

#[test]
fn verify_equivalence_clean_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "cases.tsv",
        "the key is under the mat|the door is blue\twhere is the key?\n\
         the code is 7\twhat is the code?\t7\n",
    );
    let out = run(
        dir.path(),
        &["verify", "--mode", "equivalence", "--cases", "cases.tsv", "--max-new", "12"],
    );
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("divergences: 0/2"), "{text}");
}

#[test]
fn verify_lint_flags_the_preamble_dialect() {
    let dir = TempDir::new().unwrap();
    let clean = run(dir.path(), &["verify", "--mode", "lint"]);
    assert_code(&clean, 0);
    assert!(stdout(&clean).contains("no findings"));

    let dirty = run(dir.path(), &["--template", "header", "verify", "--mode", "lint"]);
    assert_code(&dirty, 1);
    assert!(stdout(&dirty).contains("<|begin_of_text|>"), "{}", stdout(&dirty));
}

#[test]
fn verify_tokens_reports_percentages() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "tokens.txt", "35 739\n31 188\n");
    let out = run(dir.path(), &["verify", "--mode", "tokens", "--cases", "tokens.txt"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("(95%)"), "{text}");
    assert!(text.contains("(84%)"), "{text}");
}

#[test]
fn report_tokens_table() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &[
            "report-tokens", "--question-tokens", "35", "--fact-tokens", "141,123,139,150,151",
        ],
    );
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("704 (95%)"), "{text}");

    let records = run(
        dir.path(),
        &[
            "--format", "records", "report-tokens", "--question-tokens", "35",
            "--fact-tokens", "141,123,139,150,151",
        ],
    );
    assert_code(&records, 0);
    assert!(stdout(&records).contains("kvpack-record event=token-cost step=5 kv=35 rag=739 savings=704 pct=95"));
}

#[test]
fn deterministic_stdout_without_timing() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "facts.txt", "a fact about determinism\n");
    assert_code(
        &run(dir.path(), &["build", "--facts", "facts.txt", "--out", "p.kvpk", "--no-timing"]),
        0,
    );
    let args = [
        "query", "--pack", "p.kvpk", "--question", "what?", "--max-new", "10", "--no-timing",
    ];
    let a = run(dir.path(), &args);
    let b = run(dir.path(), &args);
    assert_code(&a, 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_env_changes_the_model() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "facts.txt", "a fact\n");
    assert_code(
        &run(dir.path(), &["build", "--facts", "facts.txt", "--out", "p.kvpk", "--no-timing"]),
        0,
    );
    // A different seed is a different model: the pack must be rejected.
    let out = bin()
        .current_dir(dir.path())
        .env("KVPACK_SEED", "4242")
        .args(["query", "--pack", "p.kvpk", "--question", "q", "--no-timing"])
        .output()
        .unwrap();
    assert_code(&out, 2);
    assert!(stderr(&out).contains("fingerprint"), "{}", stderr(&out));
}

#[test]
fn config_file_and_usage_errors() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "good.cfg", "n_layers = 4\nseed = 99\ntemplate = header\n");
    write(dir.path(), "facts.txt", "a fact\n");
    assert_code(
        &run(
            dir.path(),
            &["--config", "good.cfg", "build", "--facts", "facts.txt", "--out", "p.kvpk", "--no-timing"],
        ),
        0,
    );

    write(dir.path(), "bad.cfg", "nonsense = 12\n");
    let bad = run(
        dir.path(),
        &["--config", "bad.cfg", "build", "--facts", "facts.txt", "--out", "q.kvpk"],
    );
    assert_code(&bad, 2);

    write(dir.path(), "broken.cfg", "d_model = 63\n");
    let broken = run(
        dir.path(),
        &["--config", "broken.cfg", "build", "--facts", "facts.txt", "--out", "q.kvpk"],
    );
    assert_code(&broken, 2);
}

#[test]
fn io_and_format_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let missing = run(dir.path(), &["build", "--facts", "nope.txt", "--out", "p.kvpk"]);
    assert_code(&missing, 3);

    write(dir.path(), "garbage.bin", "this is not a kvpack file");
    let garbage = run(dir.path(), &["inspect", "garbage.bin"]);
    assert_code(&garbage, 3);

    write(dir.path(), "facts.txt", "a fact\n");
    assert_code(
        &run(dir.path(), &["build", "--facts", "facts.txt", "--out", "p.kvpk", "--no-timing"]),
        0,
    );
    let bytes = std::fs::read(dir.path().join("p.kvpk")).unwrap();
    std::fs::write(dir.path().join("cut.kvpk"), &bytes[..bytes.len() - 1]).unwrap();
    let cut = run(dir.path(), &["query", "--pack", "cut.kvpk", "--question", "q"]);
    assert_code(&cut, 3);
    assert!(stderr(&cut).contains("truncated"), "{}", stderr(&cut));
}

#[test]
fn custom_template_file_registers() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "my.tmpl",
        "dialect = mine\nspecial = <<S>>\neot = <<S>>\nsystem_header = sys:\nsystem_footer = <<S>>\nuser_header = usr:\nuser_footer = <<S>>\nassistant_header = bot:\n",
    );
    write(dir.path(), "facts.txt", "a fact\n");
    // A seventh special token needs one more vocab slot.
    write(dir.path(), "vocab.cfg", "vocab_size = 263\n");
    let out = run(
        dir.path(),
        &[
            "--config", "vocab.cfg", "--template-file", "my.tmpl", "--template", "mine",
            "build", "--facts", "facts.txt", "--out", "m.kvpk", "--no-timing",
        ],
    );
    assert_code(&out, 0);
    let inspected = run(dir.path(), &["inspect", "m.kvpk"]);
    assert!(stdout(&inspected).contains("dialect         mine"));
}

#[test]
fn empty_facts_file_warns() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "empty.txt", "\n\n");
    let out = run(dir.path(), &["build", "--facts", "empty.txt", "--out", "e.kvpk", "--no-timing"]);
    assert_code(&out, 0);
    assert!(stderr(&out).contains("frame-only pack"));
    assert!(stdout(&out).contains("facts: 0"));
}
