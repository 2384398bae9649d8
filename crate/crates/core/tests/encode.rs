use jpsh::data_io::{split, FeatureSet, SplitSpec, SplitStrategy};
use jpsh::encoder::{encode, encode_batch, load_codes, save_codes, unpack_signs, Encoder};
use jpsh::index::HammingIndex;
use jpsh::model_io::{load_model, save_model, Model};
use jpsh::optimizer::{train, Hyperparams, JpshModel};
use jpsh::pipeline::{run_methods, Method};
use jpsh::metrics::EvalOptions;
use jpsh::synthetic::{gaussian_mixture, MixtureSpec};
use jpsh::JpshError;
use nalgebra::DVector;

fn trained(bits: usize) -> (FeatureSet, JpshModel) {
    let fs = gaussian_mixture(&MixtureSpec {
        n: 160,
        dim: 7,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let hyper = Hyperparams {
        anchors: 8,
        k: 3,
        psi: 2,
        bits,
        max_iters: 6,
        seed: 11,
        ..Default::default()
    };
    let (model, _) = train(&fs, &hyper).unwrap();
    (fs, model)
}

/// Scores computed straight from the model matrices.
fn oracle_signs(model: &JpshModel, x: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let xh = DVector::from_iterator(d, x.iter().zip(&model.center_mean).map(|(v, m)| v - m));
    let c = model.anchors.centers();
    let j = (0..model.m())
        .min_by(|&a, &b| (c.column(a) - &xh).norm_squared().total_cmp(&(c.column(b) - &xh).norm_squared()))
        .unwrap();
    let pj = model.p.rows(j * d, d);
    let s = &model.r * pj.transpose() * c.column(j) + &model.v * model.w.transpose() * &xh;
    s.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect()
}

#[test]
fn codes_match_the_matrix_oracle_at_awkward_widths() {
    for bits in [1, 63, 64, 65, 130] {
        let (fs, model) = trained(bits);
        let enc = Encoder::new(&model);
        let batch = enc.encode_batch(&fs).unwrap();
        assert_eq!(batch.len(), fs.n());
        for i in 0..fs.n() {
            let single = enc.encode(fs.sample(i)).unwrap();
            assert_eq!(batch.code(i), single.as_slice());
            assert_eq!(unpack_signs(&single, bits), oracle_signs(&model, fs.sample(i)), "bits {bits} sample {i}");
        }
        assert_eq!(encode(&model, fs.sample(3)).unwrap(), enc.encode(fs.sample(3)).unwrap());
    }
}

#[test]
fn encoding_rejects_wrong_dimension() {
    let (_, model) = trained(8);
    assert!(matches!(encode(&model, &[0.0; 3]), Err(JpshError::Shape(_))));
    let wrong = FeatureSet::from_rows(&[vec![0.0; 5]]).unwrap();
    assert!(matches!(encode_batch(&model, &wrong), Err(JpshError::Shape(_))));
}

#[test]
fn model_file_roundtrip_keeps_codes() {
    let (fs, model) = trained(20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jpshm");
    let wrapped = Model::Jpsh(model.clone());
    save_model(&path, &wrapped).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, wrapped);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    let Model::Jpsh(loaded) = back else { panic!("kind changed") };
    let before = encode_batch(&model, &fs).unwrap();
    let after = encode_batch(&loaded, &fs).unwrap();
    assert_eq!(before, after);

    let codes = dir.path().join("db.codes");
    save_codes(&codes, &before).unwrap();
    assert_eq!(load_codes(&codes).unwrap(), before);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    assert!(Model::read_from(&mut bytes.as_slice()).is_err());
    bytes.truncate(bytes.len() / 2);
    assert!(Model::read_from(&mut bytes.as_slice()).is_err());
}

#[test]
fn training_twice_gives_identical_model_bytes() {
    let (_, a) = trained(12);
    let (_, b) = trained(12);
    assert_eq!(Model::Jpsh(a).to_bytes(), Model::Jpsh(b).to_bytes());
}

#[test]
fn self_query_lands_at_distance_zero() {
    let (fs, model) = trained(16);
    let db = encode_batch(&model, &fs).unwrap();
    let index = HammingIndex::new(db.clone());
    for i in [0, 42, 159] {
        let hits = index.search_radius(db.code(i), 0).unwrap();
        assert!(hits.iter().any(|h| h.position == i));
    }
}

#[test]
fn every_method_runs_end_to_end() {
    let fs = gaussian_mixture(&MixtureSpec {
        n: 240,
        dim: 8,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let (train_set, test_set) = split(
        &fs,
        &SplitSpec {
            test_per_class: 10,
            seed: 2,
            strategy: SplitStrategy::PerClassStratified,
        },
    )
    .unwrap();
    let base = Hyperparams {
        anchors: 8,
        k: 3,
        psi: 2,
        bits: 16,
        max_iters: 5,
        seed: 2,
        ..Default::default()
    };
    let runs = run_methods(&train_set, &test_set, &base, &Method::ALL, &EvalOptions::default()).unwrap();
    assert_eq!(runs.len(), Method::ALL.len());
    for run in &runs {
        assert!((0.0..=1.0).contains(&run.report.map), "{}: {}", run.method, run.report.map);
        assert_eq!(run.report.meta.queries, test_set.n());
        assert_eq!(run.report.meta.bits, 16);
        assert_eq!(run.trace.is_some(), run.method != Method::Lsh);
    }
    let jpsh = runs.iter().find(|r| r.method == Method::Jpsh).unwrap();
    // well separated clusters: far above the 1/4 chance level
    assert!(jpsh.report.map > 0.5, "{}", jpsh.report.map);
}
