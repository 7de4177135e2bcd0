use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn datoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datoc"))
        .args(args)
        .current_dir(root())
        .env_remove("DATOC_LOG")
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    datoc(args).status.code().expect("exited normally")
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut a = vec!["--json"];
    a.extend_from_slice(args);
    let o = datoc(&a);
    let v = serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{args:?}: {e}\n{}", String::from_utf8_lossy(&o.stdout)));
    (o.status.code().unwrap(), v)
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).expect("schema compiles")
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value, what: &str) {
    let errs: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errs.is_empty(), "{what}: {errs:#?}");
}

const CLEAN: &[&str] = &[
    "gemm",
    "producer_consumer",
    "fig7c",
    "ffn",
    "ffn_up",
    "ffn_down",
    "attention",
];

#[test]
fn check_exit_codes() {
    assert_eq!(code(&["check", "corpus/gemm.dato"]), 0);
    let o = datoc(&["check", "corpus/deadlock.dato"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("DEADLOCK"));
    let (c, v) = json(&["check", "corpus/leak.dato"]);
    assert_eq!(c, 2);
    assert_eq!(v["error"]["code"], "TOKEN_LEAK");
    assert_eq!(code(&["check", "corpus/missing.dato"]), 64);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&["map", "corpus/gemm.dato", "--budget", "0"]), 64);
    assert_eq!(code(&["map", "corpus/gemm.dato", "--tiles", "4by4"]), 64);
    assert_eq!(code(&["frobnicate"]), 64);
    assert_eq!(code(&[]), 64);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn parse_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.dato");
    std::fs::write(&bad, "task t[1](A: i8[4]) { A = ; }").unwrap();
    let (c, v) = json(&["check", bad.to_str().unwrap()]);
    assert_eq!(c, 1);
    assert_valid(&schema("check"), &v, "parse failure");
    assert!(v["diagnostics"][0]["span"].is_object());
}

#[test]
fn gemm_maps_port_legal_on_4x4() {
    let (c, v) = json(&["map", "corpus/gemm.dato", "--tiles", "4x4"]);
    assert_eq!(c, 0);
    let cands = v["candidates"].as_array().unwrap();
    assert!(!cands.is_empty());
    assert!(cands.iter().all(|c| c["port_legal"] == true));
    assert_eq!(v["budget"], 16);
}

#[test]
fn budget_one_fuses_everything() {
    let (c, v) = json(&["map", "corpus/fig7c.dato", "--budget", "1"]);
    assert_eq!(c, 0);
    assert_eq!(v["vmg"]["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(v["placement"].as_array().unwrap().len(), 1);
}

#[test]
fn simulation_verdicts() {
    let o = datoc(&["sim", "corpus/gemm.dato", "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));

    let (c, v) = json(&["sim", "corpus/producer_consumer.dato"]);
    assert_eq!(c, 0);
    assert_eq!(v["status"], "PASS");

    let (c, v) = json(&["sim", "corpus/deadlock.dato", "--unsafe-skip-check"]);
    assert_eq!(c, 5);
    assert_eq!(v["error"]["code"], "SIM_DEADLOCK");
    assert_eq!(code(&["sim", "corpus/deadlock.dato"]), 2);
}

#[test]
fn producer_consumer_adds_one() {
    use datoc::sim::{lcg_inputs, TensorValue};
    use std::collections::BTreeMap;

    let p =
        datoc::parser::parse_program(&std::fs::read_to_string(root().join("corpus/producer_consumer.dato")).unwrap())
            .unwrap();
    let buffers = datoc::vmg::build_lowered(&p).unwrap().buffers;
    let inputs = lcg_inputs(&buffers, 9);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("in.dati");
    std::fs::write(&file, datoc_cli::container::encode(&inputs)).unwrap();

    let (c, v) = json(&[
        "sim",
        "corpus/producer_consumer.dato",
        "--inputs",
        file.to_str().unwrap(),
    ]);
    assert_eq!(c, 0);
    assert_eq!(v["seed"], Value::Null);
    let (_, by_seed) = json(&["sim", "corpus/producer_consumer.dato", "--seed", "9"]);
    assert_eq!(v["inputs_digest"], by_seed["inputs_digest"]);

    // B = A + 1, wrapped to i8.
    let a = inputs["A"].ints();
    let expect: Vec<i64> = a.iter().map(|&x| ((x + 1) as i8) as i64).collect();
    let b = TensorValue::from_ints(inputs["B"].elem, inputs["B"].shape.clone(), expect);
    let mut out = inputs.clone();
    out.insert("B".into(), b);
    let digests: BTreeMap<String, String> = out
        .iter()
        .map(|(k, t)| {
            (
                k.clone(),
                datoc_cli::container::digest(&BTreeMap::from([(k.clone(), t.clone())])),
            )
        })
        .collect();
    assert_eq!(v["outputs"]["B"], digests["B"]);
}

#[test]
fn corpus_reports_match_schemas() {
    let (check, map, sim) = (schema("check"), schema("map"), schema("sim"));
    for name in CLEAN {
        let f = format!("corpus/{name}.dato");
        let (c, v) = json(&["check", &f]);
        assert_eq!(c, 0, "{name}");
        assert_valid(&check, &v, name);
        let (c, v) = json(&["map", &f]);
        assert_eq!(c, 0, "{name}");
        assert_valid(&map, &v, name);
        let (c, v) = json(&["sim", &f, "--seed", "1"]);
        assert_eq!(c, 0, "{name}");
        assert_valid(&sim, &v, name);
    }
    for name in ["deadlock", "leak"] {
        let f = format!("corpus/{name}.dato");
        for (cmd, s) in [("check", &check), ("map", &map), ("sim", &sim)] {
            let (c, v) = json(&[cmd, &f]);
            assert_eq!(c, 2);
            assert_valid(s, &v, name);
        }
    }
    let (_, v) = json(&["sim", "corpus/deadlock.dato", "--unsafe-skip-check"]);
    assert_valid(&sim, &v, "runtime deadlock");
    // The two tasks exchange data both ways, so they cannot share a node.
    let dir = tempfile::tempdir().unwrap();
    let pp = dir.path().join("pingpong.dato");
    std::fs::write(
        &pp,
        "stream s1: stream<i32[4]>;\nstream s2: stream<i32[4]>;\n\
         task a[1](X: i32[4]) { s1.put(X); X = s2.get(); }\n\
         task b[1]() { s2.put(s1.get() + 1); }\n",
    )
    .unwrap();
    let (_, v) = json(&["map", pp.to_str().unwrap(), "--budget", "1"]);
    assert_valid(&map, &v, "infeasible");
    assert_eq!(v["exit_code"], 3);

    let (_, mut v) = json(&["sim", "corpus/fig7c.dato"]);
    v["status"] = "MAYBE".into();
    assert!(!sim.is_valid(&v));
    v["status"] = "PASS".into();
    v.as_object_mut().unwrap().remove("cycles");
    assert!(!sim.is_valid(&v));
}

fn dots(dir: &Path, file: &str) -> (String, String) {
    let o = datoc(&["map", file, "--dot", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    (
        std::fs::read_to_string(dir.join("initial.dot")).unwrap(),
        std::fs::read_to_string(dir.join("selected.dot")).unwrap(),
    )
}

#[test]
fn dot_output_is_stable_and_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("DATOC_BLESS").is_some();
    for name in ["gemm", "producer_consumer", "fig7c"] {
        let f = format!("corpus/{name}.dato");
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = dots(a.path(), &f);
        let second = dots(b.path(), &f);
        assert_eq!(first, second, "{name}: two runs differ");
        let printed = datoc(&["dot", &f]);
        assert_eq!(String::from_utf8(printed.stdout).unwrap(), first.0);
        for (suffix, text) in [("initial", &first.0), ("selected", &first.1)] {
            let path = golden.join(format!("{name}.{suffix}.dot"));
            if bless {
                std::fs::create_dir_all(&golden).unwrap();
                std::fs::write(&path, text).unwrap();
            }
            let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
            assert_eq!(&want, text, "{} drifted", path.display());
        }
    }
}

#[test]
fn manifest_replay_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (out_a, out_b) = (a.path().to_str().unwrap(), b.path().to_str().unwrap());
    assert_eq!(
        code(&[
            "report",
            "corpus/ffn.dato",
            "--seed",
            "5",
            "--tiles",
            "4x4",
            "--out",
            out_a
        ]),
        0
    );
    let manifest = a.path().join("manifest.json");
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_valid(&schema("manifest"), &m, "manifest");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
    assert_valid(&schema("report"), &r, "report");
    assert_valid(&schema("check"), &r["check"], "report.check");
    assert_valid(&schema("map"), &r["map"], "report.map");
    assert_valid(&schema("sim"), &r["sim"], "report.sim");

    assert_eq!(
        code(&["report", "--replay", manifest.to_str().unwrap(), "--out", out_b]),
        0
    );
    let x = std::fs::read(a.path().join("report.json")).unwrap();
    let y = std::fs::read(b.path().join("report.json")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn tampered_manifest_is_detected() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(
        code(&["report", "corpus/fig7c.dato", "--out", a.path().to_str().unwrap()]),
        0
    );
    let path = a.path().join("manifest.json");
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["seed"] = 77.into();
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let (c, v) = json(&[
        "report",
        "--replay",
        path.to_str().unwrap(),
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert_eq!(c, 4);
    assert_eq!(v["error"]["code"], "REPLAY_MISMATCH");
}
