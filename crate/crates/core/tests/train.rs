use std::io::Write;

use docrectify::model::{Model, ModelConfig, ParamStore};
use docrectify::synth::{write_dataset, Augment};
use docrectify::tensor::Tensor;
use docrectify::train::{
    batch_indices, read_checkpoint, Adam, AdamConfig, Dataset, StepLoss, TrainConfig, TrainError, Trainer, MAGIC,
};

fn dataset(count: usize) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data");
    write_dataset(&path, count, 64, 3, &Augment::default()).unwrap();
    let data = Dataset::load(&path).unwrap();
    (dir, data)
}

fn desk_trainer(steps: u64) -> Trainer {
    let cfg = TrainConfig {
        steps,
        batch_size: 2,
        seed: 9,
        ..Default::default()
    };
    Trainer::new(ModelConfig::desk(), cfg).unwrap()
}

fn scalar_store(value: f32) -> ParamStore {
    ParamStore::from_named(vec![("p".into(), Tensor::new([1], vec![value]).unwrap())])
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let cfg = AdamConfig {
        lr: 0.1,
        ..Default::default()
    };
    let mut params = scalar_store(1.0);
    let mut adam = Adam::new(cfg, &params);
    adam.step(&mut params, &[&[1.0]]).unwrap();
    // m̂ = g, v̂ = g², so the update is lr·g/(|g| + ε).
    let expected = 1.0 - 0.1 / (1.0 + 1e-8);
    assert!((params.tensors()[0].data()[0] as f64 - expected).abs() < 1e-7);
    assert!((params.tensors()[0].data()[0] - 0.9).abs() < 1e-6);
}

#[test]
fn zero_gradient_only_decays_moments() {
    let mut params = scalar_store(2.0);
    let mut adam = Adam::new(AdamConfig::default(), &params);
    adam.step(&mut params, &[&[0.5]]).unwrap();
    let after_first = params.tensors()[0].data()[0];
    let (m, v) = (adam.m[0][0], adam.v[0][0]);
    let mut frozen = scalar_store(3.0);
    let mut adam2 = adam.clone();
    adam2.m[0][0] = 0.0;
    adam2.v[0][0] = 0.0;
    adam2.step(&mut frozen, &[&[0.0]]).unwrap();
    assert_eq!(frozen.tensors()[0].data()[0], 3.0);
    adam.step(&mut params, &[&[0.0]]).unwrap();
    assert!((adam.m[0][0] - 0.9 * m).abs() <= 1e-6 * m);
    assert!((adam.v[0][0] - 0.999 * v).abs() <= 1e-6 * v);
    assert!(params.tensors()[0].data()[0] < after_first);
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut params = scalar_store(1.0);
    let mut adam = Adam::new(AdamConfig::default(), &params);
    let e = adam.step(&mut params, &[&[f32::NAN]]).unwrap_err();
    assert_eq!(e.param, "p");
    assert_eq!(params.tensors()[0].data()[0], 1.0);
}

#[test]
fn optimizer_covers_every_parameter() {
    let t = desk_trainer(1);
    assert_eq!(t.adam.param_count(), t.model.params.numel());
    assert_eq!(t.adam.m.len(), t.model.params.len());
}

#[test]
fn batches_walk_through_epoch_permutations() {
    let len = 10;
    let mut epoch: Vec<usize> = (0..5).flat_map(|s| batch_indices(4, s, 2, len)).collect();
    epoch.sort();
    assert_eq!(epoch, (0..len).collect::<Vec<_>>());
    assert_eq!(batch_indices(4, 7, 3, len), batch_indices(4, 7, 3, len));
    assert_ne!(
        (0..5).flat_map(|s| batch_indices(4, s, 2, len)).collect::<Vec<_>>(),
        (5..10).flat_map(|s| batch_indices(4, s, 2, len)).collect::<Vec<_>>()
    );
}

fn run_log(trainer: &mut Trainer, data: &Dataset) -> Vec<StepLoss> {
    let mut log = vec![];
    trainer
        .run(
            data,
            |l| {
                log.push(*l);
                Ok(())
            },
            |_| Ok(()),
        )
        .unwrap();
    log
}

#[test]
fn identical_runs_are_identical() {
    let (_dir, data) = dataset(6);
    let (mut a, mut b) = (desk_trainer(3), desk_trainer(3));
    assert_eq!(run_log(&mut a, &data), run_log(&mut b, &data));
    for (x, y) in a.model.params.tensors().iter().zip(b.model.params.tensors()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn zero_steps_keeps_the_initialization() {
    let (_dir, data) = dataset(2);
    let mut t = desk_trainer(0);
    let mut saved = 0;
    t.run(&data, |_| unreachable!(), |_| {
        saved += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(saved, 1);
    let mut bytes = vec![];
    t.write_checkpoint(&mut bytes).unwrap();
    let ckpt = read_checkpoint(&bytes).unwrap();
    let init: Model = Model::new(ModelConfig::desk(), 9).unwrap();
    for (name, p) in init.params.iter() {
        assert_eq!(ckpt.tensor(name).unwrap().data, p.data(), "{name}");
    }
    assert_eq!(ckpt.meta("step"), Some("0"));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (_dir, data) = dataset(4);
    let mut t = desk_trainer(2);
    run_log(&mut t, &data);
    let mut first = vec![];
    t.write_checkpoint(&mut first).unwrap();
    assert_eq!(&first[..4], MAGIC);
    let restored = Trainer::from_checkpoint(&read_checkpoint(&first).unwrap()).unwrap();
    let mut second = vec![];
    restored.write_checkpoint(&mut second).unwrap();
    assert!(first == second);
    assert_eq!(restored.step, 2);
    assert_eq!(restored.config, t.config);
}

#[test]
fn damaged_checkpoints_are_rejected_with_offsets() {
    let t = desk_trainer(0);
    let mut bytes = vec![];
    t.write_checkpoint(&mut bytes).unwrap();
    for cut in [0, 3, 9, 40, bytes.len() / 2, bytes.len() - 1] {
        match read_checkpoint(&bytes[..cut]) {
            Err(TrainError::Checkpoint { offset, msg }) => {
                assert!(offset <= cut, "{offset} > {cut}");
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("cut at {cut}: {:?}", other.map(|_| ())),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad), Err(TrainError::Checkpoint { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(read_checkpoint(&bad), Err(TrainError::Checkpoint { offset: 4, .. })));
    let mut long = bytes;
    long.push(0);
    assert!(read_checkpoint(&long).is_err());
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_log() {
    let (_dir, data) = dataset(6);
    let mut straight = desk_trainer(4);
    let full = run_log(&mut straight, &data);

    let mut first = desk_trainer(2);
    let mut head = run_log(&mut first, &data);
    let mut bytes = vec![];
    first.write_checkpoint(&mut bytes).unwrap();
    let mut resumed = Trainer::from_checkpoint(&read_checkpoint(&bytes).unwrap()).unwrap();
    resumed.config.steps = 4;
    head.extend(run_log(&mut resumed, &data));
    assert_eq!(head.len(), full.len());
    for (a, b) in head.iter().zip(&full) {
        assert_eq!(a.csv_row(), b.csv_row());
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }
    for (x, y) in straight.model.params.tensors().iter().zip(resumed.model.params.tensors()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn mismatched_dataset_is_a_config_error() {
    let (_dir, data) = dataset(2);
    let cfg = TrainConfig {
        steps: 1,
        ..Default::default()
    };
    let mut t = Trainer::new(ModelConfig { input_size: 32, base_width: 2 }, cfg).unwrap();
    assert!(matches!(t.train_step(&data), Err(TrainError::Config(_))));
    assert_eq!(t.step, 0);
}

#[test]
fn invalid_train_configs() {
    for cfg in [
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { lr: 0.0, ..Default::default() },
        TrainConfig { lambda: -1.0, ..Default::default() },
        TrainConfig { omega: 0.5, ..Default::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    }
}

/// Follows the checkpoint byte stream without holding it, recording tensor
/// names and the total length.
#[derive(Default)]
struct StreamScanner {
    total: usize,
    header: Vec<u8>,
    meta_left: Option<usize>,
    pending: Vec<u8>,
    payload_left: usize,
    names: Vec<String>,
}

impl StreamScanner {
    fn feed(&mut self, mut buf: &[u8]) {
        self.total += buf.len();
        while !buf.is_empty() {
            if self.header.len() < 12 {
                let n = (12 - self.header.len()).min(buf.len());
                self.header.extend_from_slice(&buf[..n]);
                buf = &buf[n..];
                if self.header.len() == 12 {
                    assert_eq!(&self.header[..4], MAGIC);
                    self.meta_left = Some(u32::from_le_bytes(self.header[8..12].try_into().unwrap()) as usize);
                }
                continue;
            }
            if let Some(left) = self.meta_left.filter(|&l| l > 0) {
                let n = left.min(buf.len());
                self.meta_left = Some(left - n);
                buf = &buf[n..];
                continue;
            }
            if self.payload_left > 0 {
                let n = self.payload_left.min(buf.len());
                self.payload_left -= n;
                buf = &buf[n..];
                continue;
            }
            self.pending.push(buf[0]);
            buf = &buf[1..];
            let p = &self.pending;
            if p.len() < 2 {
                continue;
            }
            let name_len = u16::from_le_bytes([p[0], p[1]]) as usize;
            if p.len() < 3 + name_len {
                continue;
            }
            let rank = p[2 + name_len] as usize;
            let dims_at = 3 + name_len;
            if p.len() < dims_at + 4 * rank {
                continue;
            }
            let numel: usize = (0..rank)
                .map(|i| u32::from_le_bytes(p[dims_at + 4 * i..dims_at + 4 * i + 4].try_into().unwrap()) as usize)
                .product();
            self.names.push(String::from_utf8(p[2..2 + name_len].to_vec()).unwrap());
            self.payload_left = 4 * numel;
            self.pending.clear();
        }
    }
}

impl Write for StreamScanner {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.feed(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn default_checkpoint_enumerates_each_parameter_once() {
    let t = Trainer::new(ModelConfig::default(), TrainConfig::default()).unwrap();
    let mut scan = StreamScanner::default();
    t.write_checkpoint(&mut scan).unwrap();
    assert!(scan.total > 1 << 20, "{} bytes", scan.total);
    assert_eq!(scan.payload_left, 0);
    for name in t.model.params.names() {
        assert_eq!(scan.names.iter().filter(|n| *n == name).count(), 1, "{name}");
        for prefix in ["adam.m.", "adam.v."] {
            assert_eq!(scan.names.iter().filter(|n| **n == format!("{prefix}{name}")).count(), 1);
        }
    }
    let mut sorted = scan.names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), scan.names.len());
}
