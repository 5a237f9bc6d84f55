use std::fs;

use drcal::run::{theta_columns, theta_flat, trajectory_csv, verify_manifest, RunDir, RunManifest, MANIFEST};
use drcal_core::{IterationRecord, LossBreakdown, Matrix, NetworkCase};
use serde_json::json;

#[test]
fn manifest_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input.csv");
    fs::write(&input, "x1,y1\n1,2\n").unwrap();
    let out = dir.path().join("run");
    let mut run = RunDir::create(&out).unwrap();
    run.input_file(&input).unwrap();
    run.input_case("case5", &NetworkCase::five_bus()).unwrap();
    run.write("a.csv", b"1\n").unwrap();
    run.write("sub/b.json", b"{}").unwrap();
    let m = run.finish(vec!["drcal".into(), "test".into()], json!({"k": 1}), 9).unwrap();
    assert_eq!(m.seed, 9);
    assert!(m.inputs.contains_key("builtin:case5"));
    assert_eq!(m.outputs.len(), 2);

    let text = fs::read_to_string(out.join(MANIFEST)).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back.outputs, m.outputs);
    assert!(verify_manifest(&out).unwrap().is_empty());

    fs::write(out.join("a.csv"), b"2\n").unwrap();
    assert_eq!(verify_manifest(&out).unwrap(), vec!["a.csv".to_string()]);
    fs::write(&input, "x1,y1\n1,3\n").unwrap();
    fs::remove_file(out.join("sub/b.json")).unwrap();
    assert_eq!(verify_manifest(&out).unwrap().len(), 3);
}

#[test]
fn trajectory_layout() {
    let theta = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
    assert_eq!(theta_columns(2, 2), ["theta_w1_x1", "theta_w1_x2", "theta_w2_x1", "theta_w2_x2"]);
    assert_eq!(theta_flat(&theta), vec![1.0, 2.0, 3.0, 4.0]);
    let rec = IterationRecord {
        iter: 0,
        theta,
        epsilon: vec![0.5, 0.25],
        loss: LossBreakdown { mse: 1.0, task1: 2.0, task2: 3.0, total: 6.0 },
        d_loss_d_eps: vec![0.0, 0.0],
    };
    let csv = String::from_utf8(trajectory_csv(&[rec], 2, 2)).unwrap();
    assert_eq!(
        csv,
        "iter,mse,task1,task2,total,eps_1,eps_2,theta_w1_x1,theta_w1_x2,theta_w2_x1,theta_w2_x2\n\
         0,1.0,2.0,3.0,6.0,0.5,0.25,1.0,2.0,3.0,4.0\n"
    );
}
