use factoformer::data::{
    enumerate_splits, extract_sample, load_cube, load_labels, save_cube, save_labels, HsiCube, LabelField, Pixel,
    SplitFile, SplitSpec,
};
use factoformer::Error;
use std::collections::BTreeMap;

fn ramp(h: usize, w: usize, b: usize) -> HsiCube {
    let data = (0..h * w * b).map(|i| i as f32 * 0.25).collect();
    HsiCube::new("ramp", h, w, b, data).unwrap()
}

#[test]
fn cube_round_trips_in_both_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let cube = ramp(4, 3, 5);
    for name in ["scene.json", "scene.cube"] {
        let path = dir.path().join(name);
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        assert_eq!((back.height(), back.width(), back.bands()), (4, 3, 5));
        assert_eq!(back.data(), cube.data());
        assert_eq!(back.name, "ramp");
    }
    assert!(dir.path().join("scene.raw").exists());
}

#[test]
fn single_voxel_cube() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.cube");
    save_cube(&HsiCube::new("one", 1, 1, 1, vec![0.5]).unwrap(), &path).unwrap();
    let back = load_cube(&path).unwrap();
    assert_eq!(back.data(), &[0.5]);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_cube("/nonexistent/cube.json").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    save_cube(&ramp(2, 2, 2), &path).unwrap();
    let raw = dir.path().join("scene.raw");
    let mut bytes = std::fs::read(&raw).unwrap();
    bytes.pop();
    std::fs::write(&raw, bytes).unwrap();
    assert!(matches!(load_cube(&path).unwrap_err(), Error::PayloadSize { .. }));
}

#[test]
fn oversized_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.cube");
    save_cube(&ramp(2, 2, 2), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.extend_from_slice(&[0, 0, 0, 0]);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_cube(&path).unwrap_err(), Error::PayloadSize { .. }));
}

#[test]
fn non_finite_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    save_cube(&ramp(1, 1, 2), &path).unwrap();
    std::fs::write(dir.path().join("scene.raw"), [0.0f32, f32::NAN].iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>())
        .unwrap();
    assert!(matches!(load_cube(&path).unwrap_err(), Error::NonFiniteData { .. }));
}

#[test]
fn wrong_dtype_is_a_header_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    save_cube(&ramp(1, 1, 1), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"f32\"", "\"f64\"");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_cube(&path).unwrap_err(), Error::Header { .. }));
}

#[test]
fn labels_round_trip_with_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gt.json");
    let labels = LabelField::new(2, 2, vec![0, 1, 2, 1], vec!["corn".into(), "grass".into()]).unwrap();
    save_labels(&labels, &path).unwrap();
    let back = load_labels(&path).unwrap();
    assert_eq!(back.labels(), labels.labels());
    assert_eq!(back.class_names, labels.class_names);
}

#[test]
fn labels_above_class_count_are_rejected() {
    assert!(LabelField::new(1, 2, vec![0, 3], vec!["a".into(), "b".into()]).is_err());
}

fn band(values: &[f32]) -> Vec<f32> {
    let cube = HsiCube::new("b", 1, values.len(), 1, values.to_vec()).unwrap();
    cube.normalize().data().to_vec()
}

#[test]
fn normalize_examples() {
    assert_eq!(band(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
    assert_eq!(band(&[3.0, 3.0]), vec![0.0, 0.0]);
    assert_eq!(band(&[0.0, 1.0]), vec![0.0, 1.0]);
}

#[test]
fn interior_window_has_no_padding() {
    let cube = ramp(20, 20, 3);
    let s = extract_sample(&cube, Pixel::new(10, 9), 7).unwrap();
    assert_eq!(s.patch.dim(), (7, 7, 3));
    for i in 0..7 {
        for j in 0..7 {
            for b in 0..3 {
                assert_eq!(s.patch[[i, j, b]], cube.get(10 - 3 + i, 9 - 3 + j, b));
            }
        }
    }
}

#[test]
fn corner_window_mirrors_the_quadrant() {
    let cube = ramp(4, 4, 1);
    let s = extract_sample(&cube, Pixel::new(0, 0), 3).unwrap();
    // Row/column -1 mirror to 1; the border pixel itself is not duplicated.
    let g = |r, c| cube.get(r, c, 0);
    let expected = [[g(1, 1), g(1, 0), g(1, 1)], [g(0, 1), g(0, 0), g(0, 1)], [g(1, 1), g(1, 0), g(1, 1)]];
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(s.patch[[i, j, 0]], expected[i][j]);
        }
    }
}

#[test]
fn window_errors() {
    let cube = ramp(4, 5, 1);
    assert!(extract_sample(&cube, Pixel::new(1, 1), 4).is_err());
    assert!(extract_sample(&cube, Pixel::new(1, 1), 9).is_err());
    assert!(extract_sample(&cube, Pixel::new(1, 1), 7).is_ok());
    assert!(extract_sample(&cube, Pixel::new(4, 0), 3).is_err());
}

fn toy_labels() -> LabelField {
    LabelField::from_raw(3, 3, vec![1, 0, 2, 2, 1, 0, 0, 1, 2]).unwrap()
}

fn split_file(entries: &[(u16, &[[usize; 2]])]) -> SplitFile {
    let mut train = BTreeMap::new();
    for (c, coords) in entries {
        train.insert(c.to_string(), coords.to_vec());
    }
    SplitFile { train }
}

#[test]
fn splits_partition_the_scene() {
    let labels = toy_labels();
    let file = split_file(&[(1, &[[0, 0]]), (2, &[[1, 0], [2, 2]])]);
    let split = SplitSpec::from_split_file(&labels, Some(&file)).unwrap();
    assert_eq!(split.train.len(), 3);
    assert_eq!(split.test.len(), 3);
    assert_eq!(split.pretrain.len(), 3);
    assert!(split.train.iter().all(|t| !split.test.contains(t)));
    assert!(split.pretrain.iter().all(|p| labels.get(p.row, p.col) == 0));
}

#[test]
fn no_split_file_makes_everything_test() {
    let labels = toy_labels();
    let split = enumerate_splits(&labels, None).unwrap();
    assert!(split.train.is_empty());
    assert_eq!(split.test.len(), 6);
}

#[test]
fn fully_labeled_scene_has_no_pretrain_pixels() {
    let labels = LabelField::from_raw(2, 2, vec![1, 2, 1, 2]).unwrap();
    assert!(enumerate_splits(&labels, None).unwrap().pretrain.is_empty());
}

#[test]
fn split_file_errors() {
    let labels = toy_labels();
    let unlabeled = split_file(&[(1, &[[0, 1]])]);
    assert!(SplitSpec::from_split_file(&labels, Some(&unlabeled)).is_err());
    let duplicate = split_file(&[(1, &[[0, 0], [0, 0]])]);
    assert!(SplitSpec::from_split_file(&labels, Some(&duplicate)).is_err());
    let wrong_class = split_file(&[(2, &[[0, 0]])]);
    assert!(SplitSpec::from_split_file(&labels, Some(&wrong_class)).is_err());
}

#[test]
fn split_file_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    let file = split_file(&[(1, &[[0, 0], [1, 1]])]);
    file.save(&path).unwrap();
    let split = enumerate_splits(&toy_labels(), Some(&path)).unwrap();
    assert_eq!(split.train.len(), 2);
}

#[test]
fn data_fraction_is_stratified() {
    let labels = LabelField::from_raw(1, 20, (0..20).map(|i| (i % 2 + 1) as u16).collect()).unwrap();
    let file = SplitFile::random_per_class(&labels, 10, 1);
    let split = SplitSpec::from_split_file(&labels, Some(&file)).unwrap();
    let sub = split.subsample_train(0.2, 3).unwrap();
    assert_eq!(factoformer::data::per_class_counts(&sub.train, 2), vec![2, 2]);
    assert!(split.subsample_train(0.0, 3).is_err());
}
