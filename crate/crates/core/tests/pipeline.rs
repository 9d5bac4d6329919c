use trafficast::data::{load_csv, prepare, save_csv, ColumnSpec};
use trafficast::metrics::{evaluate, ZeroPolicy};
use trafficast::models::{init_model, ArchKind, ModelSpec};
use trafficast::synth::{make_family, SynthConfig};
use trafficast::train::{train, TrainConfig};
use trafficast::transfer::{load_checkpoint, save_checkpoint, transfer_fit, CheckpointMeta};

#[test]
fn synth_train_checkpoint_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        length: 400,
        ..SynthConfig::default()
    };
    let family = make_family(&cfg, 2, 3).unwrap();
    let src_path = dir.path().join("A.csv");
    save_csv(&family.source, &src_path).unwrap();
    let source = load_csv(&src_path, &ColumnSpec::default()).unwrap();
    assert_eq!(source.values, family.source.values);

    let prep = prepare(&source, 6, 0.7).unwrap();
    let spec = ModelSpec::new(ArchKind::Gru, 6, 4).unwrap();
    let mut model = init_model(spec, 1).unwrap();
    let hist = train(&mut model, &prep.train, &TrainConfig::constant_lr(5, 16, 1e-2, 1)).unwrap();
    assert!(hist.final_loss() < hist.per_epoch_loss[0]);
    let before = evaluate(&model, &prep.test, &prep.scaler, ZeroPolicy::Reject).unwrap();

    let ckpt_path = dir.path().join("GRU.tltp");
    save_checkpoint(&model, prep.scaler, CheckpointMeta::new("A", 5, 0), &ckpt_path).unwrap();
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let after = evaluate(&ckpt.model(), &prep.test, &ckpt.scaler, ZeroPolicy::Reject).unwrap();
    assert_eq!(before.accuracy_percent.to_bits(), after.accuracy_percent.to_bits());

    let target = prepare(&family.targets[0], 6, 0.7).unwrap();
    let (tuned, th) = transfer_fit(&target.train, &ckpt, 12, 2).unwrap();
    assert_eq!(th.per_epoch_loss.len(), 12);
    assert!(tuned.params.iter().all(|p| !p.frozen));
    assert!(evaluate(&tuned, &target.test, &target.scaler, ZeroPolicy::Reject)
        .unwrap()
        .accuracy_percent
        .is_finite());
}
