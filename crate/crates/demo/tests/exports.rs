use vlaforge_demo::{fast_roundtrip, predict_chunk, profile_table};

#[test]
fn fast_roundtrip_stays_inside_the_bound() {
    let rows = "0.1, -0.2\n0.3, 0.25\n0.5, 0.6\n0.7, 0.9";
    let v: serde_json::Value = serde_json::from_str(&fast_roundtrip(rows, 0.05, 64).unwrap()).unwrap();
    assert!(v["max_error"].as_f64().unwrap() <= v["bound"].as_f64().unwrap());
    assert_eq!(v["decoded"].as_array().unwrap().len(), 4);
    assert_eq!(v["symbols"], 8);
}

#[test]
fn bad_input_is_reported_not_panicked() {
    assert!(fast_roundtrip("0.1, x", 0.05, 64).unwrap_err().contains("`x`"));
    assert!(fast_roundtrip("2.0", 0.05, 64).is_err());
    assert!(fast_roundtrip("0.1, 0.2\n0.3", 0.05, 64).is_err());
    assert!(profile_table("gpus\n1").is_err());
    assert!(predict_chunk("nope", "go", 0).is_err());
}

#[test]
fn profile_table_renders_rows() {
    let csv = "gpus,per_gpu_batch,global_batch,time_per_100k\n1,16,16,19:34:00\n2,16,32,24:37:00\n";
    let t = profile_table(csv).unwrap();
    assert_eq!(t.lines().count(), 4, "{t}");
    assert!(t.contains("100.0%"), "{t}");
}

#[test]
fn every_head_predicts_a_chunk() {
    for head in ["fast", "oft", "pi", "groot"] {
        let v: serde_json::Value = serde_json::from_str(&predict_chunk(head, "reach the goal", 3).unwrap()).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 3));
    }
}
