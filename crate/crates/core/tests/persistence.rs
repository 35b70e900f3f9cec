use std::fs;

use proptest::prelude::*;
use twostage::envs::TaskId;
use twostage::nn::AdamState;
use twostage::persistence::*;
use twostage::policy::PolicySpec;
use twostage::rng::Generator;
use twostage::Error;

fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut gen = Generator::new(seed);
    let params = PolicySpec::default_for(TaskId::PushBox2d).init(&mut gen).unwrap();
    let n = params.len();
    let mut adam = AdamState::new(n, 3e-4);
    adam.m = (0..n).map(|_| gen.normal()).collect();
    adam.v = (0..n).map(|_| gen.uniform()).collect();
    adam.t = 77;
    // Awkward values survive too.
    adam.m[0] = -0.0;
    adam.m[1] = f64::MIN_POSITIVE / 2.0;
    for _ in 0..13 {
        gen.next_u64();
    }
    Checkpoint {
        run_id: format!("run-{seed}"),
        kind: TrainerKind::Bc,
        step: 12_345,
        env_hash: 0xdead_beef_0bad_cafe,
        params,
        adam,
        generator: gen.state(),
        sampler: SamplerState { epoch: 3, cursor: 100 },
        rates: Some((0.35, 0.1 + 0.2)),
    }
}

#[test]
fn roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    for seed in 0..3 {
        let ckpt = random_checkpoint(seed);
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.params.values()), bits(ckpt.params.values()));
        assert_eq!(bits(&back.adam.m), bits(&ckpt.adam.m));
        assert_eq!(back.params.slices(), ckpt.params.slices());
    }
}

#[test]
fn roundtrip_without_rates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let ckpt = Checkpoint { rates: None, kind: TrainerKind::Ppo, ..random_checkpoint(9) };
    save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
}

#[test]
fn restored_generator_continues_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let mut gen = Generator::new(5);
    for _ in 0..7 {
        gen.normal();
    }
    let ckpt = Checkpoint { generator: gen.state(), ..random_checkpoint(1) };
    save_checkpoint(&path, &ckpt).unwrap();
    let mut back = Generator::from_state(load_checkpoint(&path).unwrap().generator);
    for _ in 0..20 {
        assert_eq!(back.next_u64(), gen.next_u64());
    }
}

#[test]
fn every_truncation_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&path, &random_checkpoint(2)).unwrap();
    let full = fs::read(&path).unwrap();
    let cut = dir.path().join("cut.bin");
    for len in [16, 17, 40, full.len() / 2, full.len() - 9, full.len() - 1] {
        fs::write(&cut, &full[..len]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::Integrity(_))), "length {len}");
    }
}

#[test]
fn flipped_byte_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&path, &random_checkpoint(3)).unwrap();
    let mut data = fs::read(&path).unwrap();
    let mid = data.len() / 2;
    data[mid] ^= 0x10;
    fs::write(&path, &data).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));
}

#[test]
fn unknown_version_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&path, &random_checkpoint(4)).unwrap();
    let mut data = fs::read(&path).unwrap();
    data[12..16].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    fs::write(&path, &data).unwrap();
    match load_checkpoint(&path) {
        Err(Error::Version { found, expected }) => {
            assert_eq!(found, CHECKPOINT_VERSION + 1);
            assert_eq!(expected, CHECKPOINT_VERSION);
        }
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn header_is_sixteen_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&path, &random_checkpoint(4)).unwrap();
    let data = fs::read(&path).unwrap();
    assert_eq!(&data[..12], b"TWOSTAGECKPT");
    assert_eq!(u32::from_le_bytes(data[12..16].try_into().unwrap()), CHECKPOINT_VERSION);
}

#[test]
fn missing_checkpoint_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("nope.bin")), Err(Error::NotFound(_))));
}

#[test]
fn save_leaves_no_temporary_file() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&dir.path().join("c.bin"), &random_checkpoint(0)).unwrap();
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("c.bin")]);
}

fn record(step: u64, stage: u8) -> MetricsRecord {
    MetricsRecord { step, train_success: 0.25, test_success: 0.1, stage, wall_clock: 1.7e9 }
}

#[test]
fn append_then_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let r = MetricsRecord { step: 3, train_success: 0.1 + 0.2, test_success: 1.0 / 3.0, stage: 2, wall_clock: 1.5e9 };
    append_metrics(&path, &r).unwrap();
    assert_eq!(read_metrics(&path).unwrap(), vec![r]);
}

#[test]
fn decreasing_step_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    append_metrics(&path, &record(10, 1)).unwrap();
    append_metrics(&path, &record(10, 2)).unwrap();
    assert!(matches!(append_metrics(&path, &record(9, 2)), Err(Error::Ordering { last: 10, step: 9 })));
    assert_eq!(read_metrics(&path).unwrap().len(), 2);
}

#[test]
fn invalid_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    assert!(append_metrics(&path, &MetricsRecord { train_success: 1.5, ..record(0, 1) }).is_err());
    assert!(append_metrics(&path, &record(0, 3)).is_err());
}

#[test]
fn ten_thousand_appends() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    for s in 0..10_000 {
        append_metrics(&path, &record(s, 1)).unwrap();
    }
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 10_000);
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.len(), 10_000);
    assert!(back.iter().enumerate().all(|(i, r)| r.step == i as u64));
}

#[test]
fn torn_last_line_is_ignored_then_replaced() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    append_metrics(&path, &record(1, 1)).unwrap();
    append_metrics(&path, &record(2, 1)).unwrap();
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{\"step\":3,\"train_su");
    fs::write(&path, &text).unwrap();
    assert_eq!(read_metrics(&path).unwrap().len(), 2);
    append_metrics(&path, &record(3, 1)).unwrap();
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn every_line_prefix_is_a_valid_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    for s in 0..5 {
        append_metrics(&path, &record(s, 1)).unwrap();
    }
    let text = fs::read_to_string(&path).unwrap();
    let cut = dir.path().join("cut.jsonl");
    let mut offset = 0;
    for (k, line) in text.split_inclusive('\n').enumerate() {
        offset += line.len();
        fs::write(&cut, &text[..offset]).unwrap();
        assert_eq!(read_metrics(&cut).unwrap().len(), k + 1);
    }
}

#[test]
fn key_ignores_wall_clock() {
    assert_eq!(record(4, 1).key(), MetricsRecord { wall_clock: 0.0, ..record(4, 1) }.key());
    assert_ne!(record(4, 1).key(), record(4, 2).key());
}

#[test]
fn single_point_trendline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    export_trendline(&[TrendPoint { step: 0, train_success: 0.5, test_success: 0.25, stage: 1 }], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "step,train_success,test_success,stage\n0,0.5,0.25,1\n");
    assert!(export_trendline(&[], &path).is_err());
}

fn table_rows() -> Vec<TableRow> {
    let scales = [(1.0, 1.0), (0.9, 1.0), (0.8, 1.0), (0.7, 1.0), (0.9, 0.875), (0.8, 0.875), (0.7, 0.875), (0.9, 0.75), (0.8, 0.75), (0.7, 0.75)];
    scales
        .iter()
        .enumerate()
        .map(|(i, &(alpha, beta))| TableRow {
            row: i + 1,
            alpha,
            beta,
            batch: (330.0 * alpha + 0.5) as usize,
            samples: (20000.0 * beta + 0.5) as usize,
            seed: 0,
            stage2_steps: 1000,
            outcome: if i == 3 { Err("diverged".into()) } else { Ok((0.5, 0.05 * i as f64)) },
        })
        .collect()
}

#[test]
fn table_export_has_ten_rows_in_order_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    export_table(&table_rows(), &a).unwrap();
    export_table(&table_rows(), &b).unwrap();
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    let text = String::from_utf8(text).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TABLE_HEADER);
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[1], "1,1,1,330,20000,0.5,0,0,1000");
    assert_eq!(lines[4], "4,0.7,1,231,20000,failed,failed,0,1000");
    assert_eq!(lines[5], "5,0.9,0.875,297,17500,0.5,0.2,0,1000");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_roundtrip_any_rates(step in 0u64..u64::MAX / 2, tr in 0.0f64..=1.0, te in 0.0f64..=1.0, stage in 1u8..=2) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let r = MetricsRecord { step, train_success: tr, test_success: te, stage, wall_clock: 0.5 };
        append_metrics(&path, &r).unwrap();
        prop_assert_eq!(read_metrics(&path).unwrap(), vec![r]);
    }
}
