mod common;

use mvop_core::io::*;
use mvop_core::nested::{NestedStack, StackEntry};
use mvop_core::MvopError;

#[test]
fn dataset_round_trip_with_missing_cells() {
    let data = common::simulate(&common::three_item_truth(), common::design(30, 1), 2);
    let masked = data.with_rows_masked(&[1], &(0..30).map(|i| i % 4 == 0).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_dataset(&masked, &path).unwrap();
    assert!(schema_path_for(&path).exists());
    let back = read_dataset(&path, None).unwrap();
    assert_eq!(back, masked);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("y1,y2,y3,x_(intercept),x_x1\n"));
    assert!(text.lines().nth(1).unwrap().starts_with("4,,") || text.lines().nth(1).unwrap().contains(",,"));
}

#[test]
fn intercept_is_prepended_and_levels_come_from_schema() {
    let csv = "a,b,x_age\n1,2,0.5\n2,,1.5\n3,1,-1\n";
    let schema = Schema {
        items: vec![
            ItemSchema {
                name: "a".into(),
                levels: 4,
            },
            ItemSchema {
                name: "b".into(),
                levels: 2,
            },
        ],
    };
    let d = parse_dataset(csv.as_bytes(), Some(&schema)).unwrap();
    assert_eq!(d.covariate_names(), ["intercept", "age"]);
    assert_eq!(d.levels(), [4, 2]);
    assert_eq!(d.covariates()[(1, 0)], 1.0);
    assert_eq!(d.covariates()[(2, 1)], -1.0);
    assert!(d.is_missing(1, 1));
    let inferred = parse_dataset(csv.as_bytes(), None).unwrap();
    assert_eq!(inferred.levels(), [3, 2]);
}

#[test]
fn bad_fields_name_row_and_column() {
    match parse_dataset("a,x_z\n1,0\nq,1\n".as_bytes(), None) {
        Err(MvopError::Validation(m)) => assert!(m.contains("row 3") && m.contains("item a"), "{m}"),
        other => panic!("{other:?}"),
    }
    match parse_dataset("a,x_z\n1,0\n2,nope\n".as_bytes(), None) {
        Err(MvopError::Validation(m)) => assert!(m.contains("covariate z"), "{m}"),
        other => panic!("{other:?}"),
    }
    let schema = Schema {
        items: vec![ItemSchema {
            name: "a".into(),
            levels: 2,
        }],
    };
    assert!(parse_dataset("a\n1\n3\n".as_bytes(), Some(&schema)).is_err());
}

#[test]
fn params_json_round_trip_is_exact() {
    let p = common::three_item_truth();
    let items: Vec<String> = vec!["y1".into(), "y2".into(), "y3".into()];
    let covs: Vec<String> = vec!["(intercept)".into(), "x1".into()];
    let text = params_to_json(&p, &items, &covs).unwrap();
    let (q, i2, c2) = params_from_json(&text).unwrap();
    assert_eq!(q, p);
    assert_eq!((i2, c2), (items, covs));
    assert_eq!(
        params_to_json(
            &q,
            &["y1".into(), "y2".into(), "y3".into()],
            &["(intercept)".into(), "x1".into()]
        )
        .unwrap(),
        text
    );
}

fn toy_stack() -> NestedStack<mvop_core::OrdinalDataset> {
    let truth = common::three_item_truth();
    let entries = (0..4)
        .map(|i| StackEntry {
            k: i / 2,
            l: i % 2,
            seed: i as u64,
            data: common::simulate(&truth, common::design(10, 3), i as u64),
        })
        .collect();
    NestedStack { k: 2, l: 2, entries }
}

#[test]
fn stack_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let stack = toy_stack();
    let manifest = write_stack(dir.path(), &stack, 42, "da", "abc").unwrap();
    assert_eq!(manifest.entries.len(), 4);
    assert_eq!(manifest.entries[3].file, "k001_l001.csv");
    let (back, m2) = read_stack(dir.path()).unwrap();
    assert_eq!(back, stack);
    assert_eq!(m2, manifest);
    let f = dir.path().join("k000_l001.csv");
    let mut text = std::fs::read_to_string(&f).unwrap();
    text.push_str("1,1,1,1,0\n");
    std::fs::write(&f, text).unwrap();
    match read_stack(dir.path()) {
        Err(MvopError::Validation(m)) => assert!(m.contains("digest mismatch"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn manifest_shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = write_stack(dir.path(), &toy_stack(), 1, "da", "x").unwrap();
    manifest.k = 3;
    std::fs::write(dir.path().join(MANIFEST), serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(read_stack(dir.path()), Err(MvopError::Validation(_))));
}

#[test]
fn digests_are_sha256() {
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}
