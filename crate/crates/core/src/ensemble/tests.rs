use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::base::corrupt_labels;
use super::*;
use crate::classical::ClassicalKind;
use crate::features::SparseMatrix;
use crate::neural::{preset, Lineage, Scale, TrainOptions};

fn pm(rows: usize, classes: usize, data: Vec<f64>) -> ProbMatrix<f64> {
    ProbMatrix::new(rows, classes, data).unwrap()
}

fn random_probs(rows: usize, classes: usize, rng: &mut ChaCha8Rng) -> ProbMatrix<f64> {
    let raw: Vec<f64> = (0..rows * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
    ProbMatrix::from_scores(rows, classes, raw).unwrap()
}

/// Gaussian blobs, one centre per class on the axes of an 8-d space.
fn blobs(n: usize, classes: usize, spread: f64, seed: u64) -> StackData<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let dim = 8;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        for j in 0..dim {
            data.push(if j == y { 2.0 } else { 0.0 } + noise.sample(&mut rng));
        }
        labels.push(y);
    }
    let x = SparseMatrix::from_dense(&data, n, dim).unwrap();
    StackData::new(StackInputs::new(Some(x), None).unwrap(), labels, classes).unwrap()
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[test]
fn meta_features_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ps: Vec<_> = (0..3).map(|_| random_probs(10, 4, &mut rng)).collect();
    let m = meta_features(&ps).unwrap();
    assert_eq!((m.rows(), m.width()), (10, 12));
    for b in 0..3 {
        for i in 0..10 {
            assert_eq!(m.block(i, b), ps[b].row(i));
        }
    }
    let single = meta_features(&ps[..1]).unwrap();
    assert_eq!(single.as_slice(), ps[0].as_slice());

    let a = pm(2, 2, vec![0.9, 0.1, 0.3, 0.7]);
    let b = pm(2, 2, vec![0.2, 0.8, 0.5, 0.5]);
    let m = meta_features(&[a, b]).unwrap();
    assert_eq!(m.as_slice(), &[0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.5, 0.5]);

    let wrong = random_probs(9, 4, &mut rng);
    assert!(meta_features(&[ps[0].clone(), wrong]).is_err());
}

#[test]
fn folds_are_stratified_and_balanced() {
    let labels: Vec<usize> = (0..103).map(|i| i % 3).collect();
    let f = stratified_folds(&labels, 3, 5, 7).unwrap();
    for k in 0..5 {
        let size = f.iter().filter(|&&x| x == k).count();
        assert!((20..=21).contains(&size));
        for c in 0..3 {
            let per = (0..103).filter(|&i| f[i] == k && labels[i] == c).count();
            assert!((6..=8).contains(&per), "fold {k} class {c}: {per}");
        }
    }
    assert!(stratified_folds(&labels[..6], 3, 5, 0).is_err());
}

#[test]
fn corruption_moves_one_class_only() {
    let y: Vec<usize> = (0..400).map(|i| i % 4).collect();
    let z = corrupt_labels(&y, 4, 2, 3);
    for (a, b) in y.iter().zip(&z) {
        if *a == 2 {
            assert_ne!(*b, 2);
        } else {
            assert_eq!(a, b);
        }
    }
}

fn lr_bases(k: usize) -> Vec<BaseSpec> {
    (0..k).map(|i| BaseSpec::classical(format!("lr{i}"), ClassicalKind::Lr)).collect()
}

#[test]
fn every_row_gets_one_out_of_fold_prediction() {
    let data = blobs(10, 2, 0.5, 1);
    let mut spec = StackSpec::new(lr_bases(2), MetaSpec::logistic());
    spec.folds = 2;
    let out = stack_train(&spec, &data, None).unwrap();
    assert!(out.audit.leak_free);
    assert_eq!(out.audit.trainings, vec![3, 3]);
    assert!(out.audit.predictions_per_row.iter().all(|r| r.iter().all(|&k| k == 1)));
    assert_eq!(out.meta_curve.len(), spec.meta.train.epochs);
}

#[test]
fn leaky_mode_is_flagged() {
    let data = blobs(40, 2, 0.5, 1);
    let spec = StackSpec { leaky: true, ..StackSpec::new(lr_bases(2), MetaSpec::logistic()) };
    let out = stack_train(&spec, &data, None).unwrap();
    assert!(!out.audit.leak_free);
    assert_eq!(out.audit.trainings, vec![1, 1]);
}

#[test]
fn spec_validation() {
    let data = blobs(40, 2, 0.5, 1);
    assert!(stack_train(&StackSpec::new(lr_bases(1), MetaSpec::logistic()), &data, None).is_err());
    let mut dup = lr_bases(2);
    dup[1].name = dup[0].name.clone();
    assert!(stack_train(&StackSpec::new(dup, MetaSpec::logistic()), &data, None).is_err());
    let tok = BaseSpec::transformer("t", preset(Lineage::BertLike, Scale::Desk), TrainOptions::default(), Pretraining::None);
    let r = stack_train(&StackSpec::new(vec![lr_bases(1).remove(0), tok], MetaSpec::logistic()), &data, None);
    assert!(matches!(r, Err(Error::Base { index: 1, .. })));
    assert!("mystery".parse::<MetaKind>().is_err());
}

/// An oracle block (true class with probability 0.9) next to a noise block.
fn oracle_and_noise(n: usize, seed: u64) -> (MetaMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let oracle: Vec<f64> = y.iter().flat_map(|&k| (0..c).map(move |j| if j == k { 0.9 } else { 0.05 })).collect();
    let noise = random_probs(n, c, &mut rng);
    (meta_features(&[pm(n, c, oracle), noise]).unwrap(), y)
}

#[test]
fn meta_learns_to_trust_the_oracle() {
    for spec in [MetaSpec::logistic(), MetaSpec::default()] {
        let (m, y) = oracle_and_noise(300, 1);
        let (mv, yv) = oracle_and_noise(200, 2);
        let (meta, curve) = build_meta(&spec, &m, &y, Some((&mv, &yv))).unwrap();
        let acc = accuracy(&meta.predict_proba(&mv).unwrap().predict(), &yv);
        assert!(acc >= 1.0 - 0.02, "{}: {acc}", spec.kind);
        assert!(curve.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.unwrap().is_finite()));
    }
}

#[test]
fn transformer_head_reads_one_token_per_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ps: Vec<_> = (0..3).map(|_| random_probs(20, 4, &mut rng)).collect();
    let m = meta_features(&ps).unwrap();
    let y: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let spec = MetaSpec { train: TrainOptions { epochs: 1, ..MetaSpec::default().train }, ..MetaSpec::default() };
    let (meta, _) = build_meta(&spec, &m, &y, None).unwrap();
    let MetaModel::Transformer(t) = meta else { panic!("expected transformer head") };
    assert_eq!(t.config().max_len, 3);
    assert_eq!(t.config().hidden, 16);
}

#[test]
fn degenerate_one_hot_bases_vote_for_their_class() {
    let n = 60;
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let block: Vec<f64> = y.iter().flat_map(|&k| (0..3).map(move |j| if j == k { 1.0 } else { 0.0 })).collect();
    let m = meta_features(&[pm(n, 3, block.clone()), pm(n, 3, block)]).unwrap();
    for spec in [MetaSpec::logistic(), MetaSpec::default()] {
        let (meta, _) = build_meta(&spec, &m, &y, None).unwrap();
        let p = meta.predict_proba(&m).unwrap();
        assert_eq!(p.predict(), y, "{}", spec.kind);
    }
}

#[test]
fn constant_block_gets_small_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let informative: Vec<f64> = y.iter().flat_map(|&k| (0..3).map(move |j| if j == k { 0.8 } else { 0.1 })).collect();
    let constant: Vec<f64> = (0..n).flat_map(|_| [0.2, 0.5, 0.3]).collect();
    let m = meta_features(&[pm(n, 3, informative), pm(n, 3, constant)]).unwrap();
    let (meta, _) = build_meta(&MetaSpec::logistic(), &m, &y, None).unwrap();
    let MetaModel::Logistic(lr) = meta else { panic!() };
    let crate::classical::Params::Linear { weights, .. } = lr.params() else { panic!() };
    let norm = |cols: std::ops::Range<usize>| -> f64 {
        (0..3).flat_map(|k| cols.clone().map(move |j| k * 6 + j)).map(|i| weights[i] * weights[i]).sum::<f64>().sqrt()
    };
    assert!(norm(3..6) < norm(0..3), "{} vs {}", norm(3..6), norm(0..3));
}

fn complementary_spec() -> StackSpec {
    let bases = (0..3).map(|k| BaseSpec::classical(format!("lr{k}"), ClassicalKind::Lr).with_corruption(k)).collect();
    StackSpec { seed: 5, ..StackSpec::new(bases, MetaSpec::logistic()) }
}

#[test]
fn stack_beats_bases_with_complementary_blind_spots() {
    let train = blobs(400, 4, 0.6, 1);
    let test = blobs(400, 4, 0.6, 2);
    let out = stack_train(&complementary_spec(), &train, None).unwrap();
    let stacked = accuracy(&out.model.predict(&test.inputs).unwrap(), &test.labels);
    let best = out
        .model
        .base_predictions(&test.inputs)
        .unwrap()
        .iter()
        .map(|p| accuracy(&p.predict(), &test.labels))
        .fold(0.0, f64::max);
    assert!(stacked >= best + 0.02, "stack {stacked} vs best base {best}");
}

#[test]
fn logistic_stack_is_invariant_to_base_order() {
    let train = blobs(200, 4, 0.8, 3);
    let test = blobs(50, 4, 0.8, 4);
    let spec = complementary_spec();
    let mut rev = spec.clone();
    rev.bases.reverse();
    let a = stack_train(&spec, &train, None).unwrap().model.predict_proba(&test.inputs).unwrap();
    let b = stack_train(&rev, &train, None).unwrap().model.predict_proba(&test.inputs).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn predictions_are_stochastic_deterministic_and_persist() {
    let train = blobs(120, 3, 0.7, 5);
    let test = blobs(30, 3, 0.7, 6);
    let mut spec = StackSpec::new(
        vec![BaseSpec::classical("lr", ClassicalKind::Lr), BaseSpec::classical("rf", ClassicalKind::Rf)],
        MetaSpec::default(),
    );
    spec.folds = 3;
    if let BaseModelSpec::Classical { train, .. } = &mut spec.bases[1].model {
        train.tree_count = 10;
    }
    let out = stack_train(&spec, &train, Some(&test)).unwrap();
    let p = stack_predict(&out.model, &test.inputs).unwrap();
    for row in p.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(p, stack_predict(&out.model, &test.inputs).unwrap());
    assert_eq!(out.meta_curve.len(), spec.meta.train.epochs);

    let dir = tempfile::tempdir().unwrap();
    out.model.save(dir.path()).unwrap();
    let back: StackedModel<f64> = StackedModel::load(dir.path()).unwrap();
    assert_eq!(back.fold_of, out.model.fold_of);
    assert_eq!(stack_predict(&back, &test.inputs).unwrap(), p);
}

#[test]
fn transformer_bases_stack() {
    use crate::tokenizer::TokenSequence;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let make = |n: usize, rng: &mut ChaCha8Rng| {
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut body: Vec<u32> = (0..7).map(|_| rng.random_range(6..20)).collect();
            if i % 2 == 1 {
                body[rng.random_range(0..7)] = 5;
            }
            seqs.push(TokenSequence::from_ids(&body, 8));
            labels.push(i % 2);
        }
        StackData::new(StackInputs::new(None, Some(seqs)).unwrap(), labels, 2).unwrap()
    };
    let train = make(60, &mut rng);
    let val = make(20, &mut rng);
    let mut cfg = preset(Lineage::BertLike, Scale::Desk).with_vocab(20).with_max_len(8);
    cfg.layers = 1;
    cfg.hidden = 8;
    cfg.heads = 2;
    let opts = TrainOptions { epochs: 2, learning_rate: 1e-3, batch_size: 16, ..Default::default() };
    let masking = crate::pretrain::MaskingSpec::default();
    let bases = vec![
        BaseSpec::transformer("bert", cfg.clone(), opts.clone(), Pretraining::Mlm { masking: masking.clone(), train: opts.clone() }),
        BaseSpec::transformer("electra", cfg.clone(), opts.clone(), Pretraining::Rtd { masking, train: opts.clone(), generator_layers: 1 }),
        BaseSpec::transformer(
            "distil",
            cfg,
            opts.clone(),
            Pretraining::Distill { teacher: 0, spec: crate::pretrain::DistillSpec::default() },
        ),
    ];
    let mut spec = StackSpec::new(bases, MetaSpec { train: TrainOptions { epochs: 3, ..MetaSpec::default().train }, ..MetaSpec::default() });
    spec.folds = 2;
    let out = stack_train(&spec, &train, Some(&val)).unwrap();
    assert_eq!(out.audit.trainings, vec![3, 3, 3]);
    assert!(out.base_curves.iter().all(|c| c.as_ref().is_some_and(|c| c.len() == 2)));
    assert_eq!(out.meta_curve.len(), 3);
    let p = stack_predict(&out.model, &val.inputs).unwrap();
    assert_eq!(p.rows(), 20);

    let dir = tempfile::tempdir().unwrap();
    out.model.save(dir.path()).unwrap();
    let back: StackedModel<f64> = StackedModel::load(dir.path()).unwrap();
    assert_eq!(stack_predict(&back, &val.inputs).unwrap(), p);
}
