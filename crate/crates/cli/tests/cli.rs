use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bqnn_core::fixture::toy;
use bqnn_core::model_ir::{serialize_model, BlobData, DType, Graph, Layout, Op, TensorBlob, TensorDesc};
use tempfile::TempDir;

fn bqnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bqnn")).args(args).output().unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = bqnn(args);
    assert!(o.status.success(), "bqnn {args:?}: {}", stderr(&o));
    stdout(&o)
}

/// toy fixture with `conv2` narrowed to 12 output maps.
fn od12_model(dir: &Path) -> PathBuf {
    let (mut nodes, mut blobs) = toy(1).into_parts();
    let conv = nodes.iter_mut().find(|n| n.id == "conv2").unwrap();
    let Op::Conv2d { filters, .. } = &mut conv.op else {
        unreachable!()
    };
    *filters = 12;
    let blob = nodes.iter().find(|n| n.id == "bw2").unwrap().weights.unwrap();
    let d = blobs[blob].desc;
    let desc = TensorDesc::new(d.height, d.width, d.depth, DType::F32, Layout::HeightInnermost);
    blobs[blob] = TensorBlob::new(desc, 12, BlobData::F32(vec![0.5; desc.elements() * 12])).unwrap();
    let p = dir.join("od12.bqn");
    std::fs::write(&p, serialize_model(&Graph::new(nodes, blobs).unwrap())).unwrap();
    p
}

#[test]
fn gen_fixture_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (path(&dir, "a.bqn"), path(&dir, "b.bqn"), path(&dir, "c.bqn"));
    ok(&["gen-fixture", "--arch", "toy", "--seed", "42", "--out", &a]);
    ok(&["gen-fixture", "--arch", "toy", "--seed", "42", "--out", &b]);
    ok(&["gen-fixture", "--arch", "toy", "--seed", "43", "--out", &c]);
    let (a, b, c) = (
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        std::fs::read(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a, c);
    let (ga, gc) = (
        bqnn_core::model_ir::parse_model(&a).unwrap(),
        bqnn_core::model_ir::parse_model(&c).unwrap(),
    );
    assert_eq!(ga.topo_order(), gc.topo_order());
    assert_ne!(ga.blobs(), gc.blobs());
}

#[test]
fn darknet_fixture_shape() {
    let dir = tempfile::tempdir().unwrap();
    let m = path(&dir, "d.bqn");
    ok(&["gen-fixture", "--arch", "darknet19_320", "--seed", "1", "--out", &m]);
    let g = bqnn_core::model_ir::parse_model(&std::fs::read(&m).unwrap()).unwrap();
    assert_eq!(g.conv_nodes().count(), 19);
    assert_eq!(g.input_shape(), bqnn_core::model_ir::Shape::new(320, 320, 3));
    let out = ok(&["compile", "--model", &m, "--out", &path(&dir, "d.low")]);
    assert!(out.contains("ratio 25.9"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bqnn(&["compile", "--model", &path(&dir, "nope.bqn"), "--out", &path(&dir, "x")]);
    assert_eq!(missing.status.code(), Some(1));

    let od12 = od12_model(dir.path());
    let o = bqnn(&["compile", "--model", od12.to_str().unwrap(), "--out", &path(&dir, "x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("node `conv2`") && stderr(&o).contains("multiple of 8"),
        "{}",
        stderr(&o)
    );

    let garbage = path(&dir, "garbage.bqn");
    std::fs::write(&garbage, b"XXXX\x01\x00").unwrap();
    let o = bqnn(&["compile", "--model", &garbage, "--out", &path(&dir, "x")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));

    let m = path(&dir, "t.bqn");
    let low = path(&dir, "t.low");
    ok(&["gen-fixture", "--arch", "toy", "--out", &m]);
    ok(&["compile", "--model", &m, "--out", &low]);
    let again = bqnn(&["compile", "--model", &low, "--out", &path(&dir, "y")]);
    assert_eq!(again.status.code(), Some(3));

    let bad_arch = bqnn(&["gen-fixture", "--arch", "resnet", "--out", &m]);
    assert_ne!(bad_arch.status.code(), Some(0));
    assert!(stderr(&bad_arch).contains("resnet"));
}

#[test]
fn validate_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let od12 = od12_model(dir.path());
    let o = bqnn(&["validate", "--model", od12.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v
        .as_array()
        .unwrap()
        .iter()
        .any(|d| d["node"] == "conv2" && d["rule"] == "output_maps_multiple_of8"));
    let m = path(&dir, "t.bqn");
    ok(&["gen-fixture", "--arch", "toy", "--out", &m]);
    assert!(ok(&["validate", "--model", &m]).starts_with("ok"));
}

#[test]
fn run_bench_report_and_emit() {
    let dir = tempfile::tempdir().unwrap();
    let (m, low) = (path(&dir, "t.bqn"), path(&dir, "t.low"));
    ok(&["gen-fixture", "--arch", "toy", "--seed", "3", "--out", &m]);
    let size: serde_json::Value =
        serde_json::from_str(&ok(&["compile", "--model", &m, "--out", &low, "--format", "json"])).unwrap();
    assert!(size["ratio"].as_f64().unwrap() > 1.0);

    // the raw image and output files round-trip through the engine
    let img = bqnn_core::fixture::random_image(bqnn_core::model_ir::Shape::new(16, 16, 3), 11);
    let img_path = path(&dir, "img.f32");
    std::fs::write(
        &img_path,
        img.as_f32()
            .unwrap()
            .iter()
            .flat_map(|x| x.to_le_bytes())
            .collect::<Vec<u8>>(),
    )
    .unwrap();
    let (o1, o2) = (path(&dir, "o1.f32"), path(&dir, "o2.f32"));
    ok(&[
        "run",
        "--model",
        &low,
        "--input",
        &img_path,
        "--out",
        &o1,
        "--threads",
        "1",
    ]);
    ok(&["run", "--model", &m, "--seed", "11", "--out", &o2, "--threads", "3"]);
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    let lg = bqnn_core::transform::parse_lowered(&std::fs::read(&low).unwrap()).unwrap();
    let want = bqnn_core::engine::run_network(&lg, &img, 1).unwrap();
    assert_eq!(std::fs::read(&o1).unwrap().len(), want.as_f32().unwrap().len() * 4);
    let short = bqnn(&["run", "--model", &low, "--input", &m]);
    assert_eq!(short.status.code(), Some(1));

    let bench: serde_json::Value = serde_json::from_str(&ok(&[
        "bench",
        "--model",
        &low,
        "--repeats",
        "3",
        "--format",
        "json",
        "--threads",
        "1",
    ]))
    .unwrap();
    let ops = bench["ops"].as_array().unwrap();
    assert_eq!(ops.len(), 5);
    assert!(ops
        .iter()
        .all(|o| o["median_ms"].as_f64().unwrap() > 0.0 && o["samples_ms"].as_array().unwrap().len() == 3));
    assert!(ok(&["bench", "--model", &low, "--compare", "--repeats", "1"]).contains("speedup"));

    let report: serde_json::Value = serde_json::from_str(&ok(&[
        "accel-report",
        "--model",
        &low,
        "--format",
        "json",
        "--ordering",
        "depth",
    ]))
    .unwrap();
    assert!(report.get("width_innermost").is_none());
    assert!(
        report["layers"][0]["depth_innermost"]["mem_transactions"]
            .as_u64()
            .unwrap()
            > 0
    );
    let csv = ok(&[
        "accel-report",
        "--model",
        &low,
        "--format",
        "csv",
        "--ordering",
        "width",
    ]);
    assert!(csv.lines().skip(1).all(|l| l.contains(",width,")));
    let tiny = bqnn(&["accel-report", "--model", &low, "--pe-budget", "64"]);
    assert_eq!(tiny.status.code(), Some(3));

    let c = path(&dir, "t.c");
    ok(&["emit-c", "--model", &low, "--out", &c]);
    let src = std::fs::read_to_string(&c).unwrap();
    assert!(src.contains("int bqnn_infer(const float *image, float *out)"));
}
