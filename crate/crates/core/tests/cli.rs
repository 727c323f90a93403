//! The `tgnet` binary end to end, exit statuses included.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tgnet::ingest::write_ndjson;
use tgnet::pipeline::Manifest;
use tgnet::synth;

const KEY_VAR: &str = "TGNET_CLI_TEST_KEY";

fn tgnet(args: &[&str], key: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tgnet"));
    cmd.args(args).env_remove(KEY_VAR);
    if let Some(k) = key {
        cmd.env(KEY_VAR, k);
    }
    cmd.output().expect("binary runs")
}

fn fixture(dir: &Path) -> String {
    let path = dir.join("export.ndjson");
    write_ndjson(&synth::mixed_messages(400, 180, 9), &path).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn pipeline_succeeds_and_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("out");
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        format!(
            r#"{{"inputs":[{{"path":{input:?},"format":"ndjson"}}],"anonymization_key_env":"{KEY_VAR}","community":{{"seed":3}}}}"#
        ),
    )
    .unwrap();
    let o = tgnet(
        &[
            "pipeline",
            "--config",
            config.to_str().unwrap(),
            "--community-seed",
            "5",
            "--output-dir",
            out.to_str().unwrap(),
            "--expansion-threshold",
            "10",
        ],
        Some("cli-key"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.community.unwrap().seed, 5);
    assert_eq!(m.filter.unwrap().records_forwarded, 180);
    for f in [
        "graph.gexf",
        "graph.dot",
        "key_users.csv",
        "key_users.json",
        "expansion_plan.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn subcommands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let common = ["--input", input.as_str(), "--key-env", KEY_VAR];
    let run = |sub: &str, extra: &[&str]| {
        let mut args = vec![sub];
        args.extend(common);
        args.extend(extra);
        let o = tgnet(&args, Some("k"));
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    let ingest = run("ingest", &["--output", &p("canon.ndjson")]);
    let report: serde_json::Value = serde_json::from_slice(&ingest.stdout).unwrap();
    assert_eq!(report["records_read"], 400);
    assert_eq!(fs::read_to_string(p("canon.ndjson")).unwrap().lines().count(), 400);

    let expand = run("expand", &["--threshold", "1"]);
    let plan: serde_json::Value = serde_json::from_slice(&expand.stdout).unwrap();
    assert!(!plan["candidates"].as_array().unwrap().is_empty());

    run("analyze", &["--output", &p("analysis.json")]);
    let analysis: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("analysis.json")).unwrap()).unwrap();
    assert!(analysis["nodes"].as_array().unwrap().len() > 5);

    run(
        "classify",
        &[
            "--output",
            &p("roles.json"),
            "--report-format",
            "json",
            "--role-min-frequency",
            "1",
        ],
    );
    run("layout", &["--output", &p("layout.json"), "--max-iterations", "20"]);
    run(
        "export",
        &["--gexf", &p("g.gexf"), "--dot", &p("g.dot"), "--report", &p("r.csv")],
    );
    for f in ["roles.json", "layout.json", "g.gexf", "g.dot", "r.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn exit_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("out").to_string_lossy().into_owned();
    let base = [
        "pipeline",
        "--input",
        input.as_str(),
        "--key-env",
        KEY_VAR,
        "--output-dir",
        out.as_str(),
    ];

    // Key variable unset: configuration error.
    assert_eq!(tgnet(&base, None).status.code(), Some(2));
    // Empty key.
    assert_eq!(tgnet(&base, Some("")).status.code(), Some(2));
    // Unknown input format.
    let mut args = base.to_vec();
    args.extend(["--format", "xml"]);
    assert_eq!(tgnet(&args, Some("k")).status.code(), Some(2));
    // Bad resolution.
    let mut args = base.to_vec();
    args.extend(["--resolution", "-1"]);
    assert_eq!(tgnet(&args, Some("k")).status.code(), Some(2));
    // Missing input file: fatal, and only a failed manifest remains.
    let missing = dir.path().join("nope.ndjson").to_string_lossy().into_owned();
    let o = tgnet(
        &[
            "pipeline",
            "--input",
            &missing,
            "--key-env",
            KEY_VAR,
            "--output-dir",
            &out,
        ],
        Some("k"),
    );
    assert_eq!(o.status.code(), Some(1));
    let m: Manifest = serde_json::from_slice(&fs::read(Path::new(&out).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.status, "failed");
    // Unknown flag: clap reports a usage error with status 2.
    assert_eq!(tgnet(&["pipeline", "--no-such-flag"], Some("k")).status.code(), Some(2));
    // Success.
    assert_eq!(tgnet(&base, Some("k")).status.code(), Some(0));
}
