use std::fs;

use serde_json::Map;

use hqsdp::generators::gen_random_psd;
use hqsdp::hppca::{HppcaModel, HppcaModelFile};
use hqsdp::io::{load_instance, read_json, save_instance, write_json, CandidateFile};
use hqsdp::stiefel::random_point;
use hqsdp::Error;

#[test]
fn instance_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    let c = gen_random_psd(6, 3, 2, 11).unwrap();
    save_instance(&path, &c, Map::new()).unwrap();
    let back = load_instance(&path).unwrap();
    assert_eq!(back.d, 6);
    assert_eq!(back.k, 3);
    assert_eq!(back.scale, c.scale);
    for (a, b) in c.mats.iter().zip(&back.mats) {
        assert_eq!(a.as_matrix(), b.as_matrix());
    }
}

#[test]
fn asymmetric_instance_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"d": 2, "k": 1, "mats": [[1.0, 0.5, 0.4, 1.0]]}"#).unwrap();
    assert!(matches!(load_instance(&path), Err(Error::NotSymmetric(_))));
}

#[test]
fn candidate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cand.json");
    let u = random_point(7, 3, 5);
    write_json(&path, &CandidateFile::from_point(&u)).unwrap();
    let back = read_json::<CandidateFile>(&path)
        .unwrap()
        .to_point(1e-10)
        .unwrap();
    assert!((u.as_matrix() - back.as_matrix()).norm() == 0.0);
}

#[test]
fn model_round_trip_keeps_subspace() {
    let m = HppcaModel::with_lambda_grid(8, 3, vec![1.0, 4.0], vec![10, 40], 3).unwrap();
    let text = serde_json::to_string(&m.to_file()).unwrap();
    let back =
        HppcaModel::from_file(&serde_json::from_str::<HppcaModelFile>(&text).unwrap()).unwrap();
    assert_eq!(back.lambdas, m.lambdas);
    assert_eq!(back.group_sizes, m.group_sizes);
    assert!((back.u_true.as_matrix() - m.u_true.as_matrix()).norm() < 1e-15);
}
