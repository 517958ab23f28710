use std::path::Path;

use trivid::accel::{builtin_model, layer_gops, load_layer_table, model_gops, LayerSpec, BUILTIN_MODELS};

fn models_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

#[test]
fn shipped_tables_match_generators() {
    for name in BUILTIN_MODELS {
        let shipped = load_layer_table(models_dir().join(format!("{name}.json"))).unwrap();
        assert_eq!(shipped, builtin_model(name).unwrap(), "{name}");
    }
}

#[test]
fn resnet50_reference_gops() {
    let g = model_gops(&builtin_model("resnet50_224").unwrap());
    assert!((g - 7.7).abs() < 0.1, "{g}");
}

#[test]
fn two_hd_convs_exceed_full_224_model() {
    let full = model_gops(&builtin_model("resnet50_224").unwrap());
    let hd = builtin_model("resnet50_hd").unwrap();
    let mut conv3: Vec<f64> = hd
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv(c) if c.k == 3))
        .map(layer_gops)
        .collect();
    conv3.sort_by(|a, b| b.total_cmp(a));
    assert!(conv3[0] + conv3[1] > full, "{} + {} vs {full}", conv3[0], conv3[1]);
}

#[test]
fn tables_reject_bad_layers() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    std::fs::write(
        &p,
        r#"[{"kind": "conv", "name": "x", "c_in": 0, "c_out": 4, "k": 3, "h": 8, "w": 8}]"#,
    )
    .unwrap();
    assert!(load_layer_table(&p).is_err());
}
