use loopfm::models::{VmConfig, VmInput, VmModel};
use loopfm::nncore::AdamState;
use loopfm::pipeline::{
    load_dataset, log_and_transfer, predict_vm, run_seed, train_vm, Arm, Dataset, ExperimentConfig, VmContext,
    TEST_CHUNK, VM_TRAIN_CHUNKS,
};
use proptest::prelude::*;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        "seeds = [2]\n[data]\nn_users = 40\nevents_per_user = 48\n[fm]\nepochs = 1\n[ae]\nepochs = 2\n",
    )
    .unwrap()
}

#[test]
fn same_seed_gives_bit_identical_report() {
    let cfg = small();
    let a = run_seed(&cfg, 2).unwrap();
    let b = run_seed(&cfg, 2).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_seed(&cfg, 3).unwrap();
    assert_ne!(a.arms, c.arms);
}

#[test]
fn baseline_arm_is_a_plain_vm() {
    let cfg = small();
    let ds = load_dataset(&cfg, 2).unwrap();
    let train = ds.indices(VM_TRAIN_CHUNKS);
    let soft = vec![f64::NAN; ds.events().len()];
    let ctx = VmContext { soft: &soft, store: None, transfer: &cfg.transfer };
    let (model, params) = train_vm(&ds, Arm::Baseline, &cfg.vm, &ctx, &train, 9).unwrap();

    let plain = VmModel::new(
        ds.schema.clone(),
        VmConfig { d_emb: cfg.vm.d_emb, hidden: cfg.vm.hidden.clone(), branch: None },
    )
    .unwrap();
    let mut p = plain.init(9).unwrap();
    let mut adam = AdamState::new(&p, cfg.vm.lr);
    for chunk in train.chunks(cfg.vm.batch) {
        let inputs: Vec<VmInput> = chunk.iter().map(|&i| VmInput { vm: &ds.events()[i].vm, seq: None }).collect();
        let y: Vec<f64> = chunk.iter().map(|&i| ds.events()[i].label as f64).collect();
        let (_, g) = plain.loss_and_grads(&p, &inputs, &y, &y, 0.0).unwrap();
        adam.step(&mut p, &g).unwrap();
    }
    assert_eq!(params, p);
    assert!(!model.has_branch());
}

#[test]
fn zero_lambda_kd_equals_baseline_and_sequence_arm_needs_store() {
    let mut cfg = small();
    cfg.transfer.lambda = 0.0;
    let ds = load_dataset(&cfg, 2).unwrap();
    let train = ds.indices(VM_TRAIN_CHUNKS);
    let soft = vec![0.5; ds.events().len()];
    let ctx = VmContext { soft: &soft, store: None, transfer: &cfg.transfer };
    let base = train_vm(&ds, Arm::Baseline, &cfg.vm, &ctx, &train, 4).unwrap().1;
    let kd = train_vm(&ds, Arm::Kd, &cfg.vm, &ctx, &train, 4).unwrap().1;
    assert_eq!(base, kd);
    let err = train_vm(&ds, Arm::Loopfm, &cfg.vm, &ctx, &train, 4).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn scramble_extras(ds: &Dataset, salt: u64) -> Dataset {
    let mut log = ds.log.clone();
    let cards = log.schema.extra_cards.clone();
    for (n, e) in log.events.iter_mut().enumerate() {
        for (j, v) in e.extra.iter_mut().enumerate() {
            *v = ((n as u64 * 31 + j as u64 * 7 + salt) % cards[j] as u64) as u32;
        }
    }
    Dataset::new(log, ds.schema.clone()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn vm_arms_never_read_extra_features(salt in 0u64..1000) {
        let cfg = small();
        let ds = load_dataset(&cfg, 2).unwrap();
        let logged = log_and_transfer(&ds, &cfg, 2, None).unwrap();
        let other = scramble_extras(&ds, salt);
        let train = ds.indices(VM_TRAIN_CHUNKS);
        let test = ds.indices(TEST_CHUNK..=TEST_CHUNK);
        let ctx = VmContext { soft: &logged.soft, store: Some(&logged.store), transfer: &cfg.transfer };
        for arm in [Arm::Baseline, Arm::KdLoopfm] {
            let (m1, p1) = train_vm(&ds, arm, &cfg.vm, &ctx, &train, 1).unwrap();
            let (m2, p2) = train_vm(&other, arm, &cfg.vm, &ctx, &train, 1).unwrap();
            prop_assert_eq!(&p1, &p2);
            let a = predict_vm(&ds, &m1, &p1, Some(&logged.store), &cfg.transfer, &test).unwrap();
            let b = predict_vm(&other, &m2, &p2, Some(&logged.store), &cfg.transfer, &test).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
