use shadowheight_core::datapipe::{AugmentConfig, DatasetMode, PatchCatalog};
use shadowheight_core::net::{build_model, Preset};
use shadowheight_core::shadow::ShadowParams;
use shadowheight_core::synth::{generate_dataset, SceneParams};
use shadowheight_core::train::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, Trainer, FORMAT_VERSION};
use shadowheight_core::Error;

fn catalog() -> PatchCatalog {
    let t = SceneParams {
        world: 128,
        n_buildings: 4,
        footprint_range: (8, 20),
        seed: 3,
        ..SceneParams::default()
    };
    generate_dataset(&t, 4, &DatasetMode::synthetic(t.rgb_gsd)).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 4,
        seed: 9,
        augment: AugmentConfig::default(),
        ..TrainConfig::for_preset(Preset::Micro)
    }
}

fn trained(epochs: usize) -> Trainer {
    let mut t = Trainer::new(build_model(&Preset::Micro.spec(true), 9).unwrap(), config(epochs)).unwrap();
    t.run(&catalog(), &ShadowParams::default(), |_, _| Ok(())).unwrap();
    t
}

#[test]
fn bytes_round_trip_bit_exactly() {
    let t = trained(1);
    let ckpt = t.checkpoint();
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert_eq!(back, ckpt);
    let m = back.model().unwrap();
    for ((na, a), (nb, b)) in m.params().iter().zip(t.model().params()) {
        assert_eq!(na, &nb);
        assert!(a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    for ((_, a), (_, b)) in m.buffers().iter().zip(t.model().buffers()) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = trained(0).checkpoint().to_bytes().unwrap();
    for cut in [0, 3, 15, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match Checkpoint::from_bytes(&future) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("{other:?}"),
    }
    let mut wrong_magic = bytes;
    wrong_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&wrong_magic), Err(Error::Checkpoint(_))));
}

#[test]
fn resumed_run_repeats_the_uninterrupted_one() {
    let straight = trained(3);

    let first = trained(2);
    let saved = Checkpoint::from_bytes(&first.checkpoint().to_bytes().unwrap()).unwrap();
    let best = Checkpoint::from_bytes(&first.best().to_bytes().unwrap()).unwrap();
    let mut resumed = Trainer::resume(&saved, Some(best), config(3)).unwrap();
    resumed.run(&catalog(), &ShadowParams::default(), |_, _| Ok(())).unwrap();

    assert_eq!(resumed.history().len(), 3);
    let (a, b) = (&straight.history()[2], &resumed.history()[2]);
    assert_eq!(a.train_mae.to_bits(), b.train_mae.to_bits());
    assert_eq!(a.val_mae.to_bits(), b.val_mae.to_bits());
    assert_eq!(straight.checkpoint(), resumed.checkpoint());
}

#[test]
fn resume_refuses_a_different_seed() {
    let saved = trained(0).checkpoint();
    let other = TrainConfig { seed: 10, ..config(1) };
    assert!(matches!(Trainer::resume(&saved, None, other), Err(Error::InvalidArgument(_))));
}
