use caan_core::discriminator::{Discriminator, DiscriminatorConfig};
use caan_core::generator::{padded_len, weighted_features, Generator, ModelConfig};
use caan_core::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn features(frames: usize, d: usize, seed: u64) -> Tensor<f32> {
    Tensor::uniform(&[frames, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn weighted_features_scale_rows() {
    let x = features(10, 4, 0).cast::<f64>();
    let mut t = Tape::new();
    let vx = t.constant(x.clone());
    let ones = t.constant(Tensor::full(&[10], 1.0));
    let zeros = t.constant(Tensor::zeros(&[10]));
    let s: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    let vs = t.constant(Tensor::new(vec![10], s.clone()).unwrap());

    let same = weighted_features(&mut t, vx, ones).unwrap();
    assert_eq!(t.value(same).data(), x.data());
    let none = weighted_features(&mut t, vx, zeros).unwrap();
    assert!(t.value(none).data().iter().all(|&v| v == 0.0));
    let w = weighted_features(&mut t, vx, vs).unwrap();
    for f in 0..10 {
        for j in 0..4 {
            assert_eq!(t.value(w).at(f, j), s[f] * x.at(f, j));
        }
    }
    let short = t.constant(Tensor::zeros(&[9]));
    assert!(weighted_features(&mut t, vx, short).is_err());
}

#[test]
fn generator_handles_any_length() {
    let g = Generator::<f32>::new(ModelConfig::tiny(8), 3).unwrap();
    assert!(matches!(
        g.generate(&features(1, 8, 0)),
        Err(caan_core::error::Error::Degenerate { .. })
    ));
    for frames in [2, 7, 16, 30, 33, 100] {
        let x = features(frames, 8, frames as u64);
        let (scores, weighted) = g.generate(&x).unwrap();
        assert_eq!(scores.len(), frames);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0), "scores lie in (0, 1)");
        assert_eq!(weighted.shape(), [frames, 8]);
        assert!(padded_len(frames) >= frames && padded_len(frames) % 16 == 0);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let g = Generator::<f64>::new(ModelConfig::tiny(8), 1).unwrap();
    let mut t = Tape::new();
    let x = t.constant(features(20, 8, 2).cast());
    let (out, _) = g.forward(&mut t, x, false).unwrap();
    let a = t.value(out.attention);
    assert_eq!(a.shape(), [20, 20]);
    for r in 0..20 {
        let s: f64 = a.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(a.row(r).iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn generator_rejects_wrong_width() {
    let g = Generator::<f32>::new(ModelConfig::tiny(8), 0).unwrap();
    assert!(g.generate(&features(16, 7, 0)).is_err());
    assert!(g.generate(&Tensor::zeros(&[0, 8])).is_err());
}

#[test]
fn generator_init_is_seeded() {
    let a = Generator::<f32>::new(ModelConfig::tiny(8), 5).unwrap();
    let b = Generator::<f32>::new(ModelConfig::tiny(8), 5).unwrap();
    let c = Generator::<f32>::new(ModelConfig::tiny(8), 6).unwrap();
    assert_eq!(a.params().fingerprint(), b.params().fingerprint());
    assert_ne!(a.params().fingerprint(), c.params().fingerprint());
    let x = features(24, 8, 9);
    assert_eq!(a.generate(&x).unwrap().0, b.generate(&x).unwrap().0);
}

#[test]
fn discriminator_is_deterministic_and_bounded() {
    let cfg = DiscriminatorConfig { feature_dim: 8, hidden: 8 };
    let d = Discriminator::<f32>::new(cfg, 4);
    let x = features(12, 8, 1);
    let (p1, phi1) = d.discriminate(&x).unwrap();
    let (p2, phi2) = d.discriminate(&x).unwrap();
    assert_eq!(p1.to_bits(), p2.to_bits());
    assert_eq!(phi1, phi2);
    assert!(p1 > 0.0 && p1 < 1.0);
    assert_eq!(phi1.len(), 8);
    assert!(d.discriminate(&features(12, 5, 1)).is_err());
}

#[test]
fn phi_is_the_final_hidden_state() {
    // phi must see the last frame, and differ from the phi of the prefix.
    let cfg = DiscriminatorConfig { feature_dim: 8, hidden: 8 };
    let d = Discriminator::<f64>::new(cfg, 2);
    let x = features(10, 8, 3).cast::<f64>();
    let (_, phi) = d.discriminate(&x).unwrap();
    let mut y = x.clone();
    y.data_mut()[9 * 8] += 0.5;
    let (_, phi_y) = d.discriminate(&y).unwrap();
    assert!(phi.iter().zip(&phi_y).any(|(a, b)| a != b));

    let prefix = Tensor::new(vec![9, 8], x.data()[..72].to_vec()).unwrap();
    let (_, phi_prefix) = d.discriminate(&prefix).unwrap();
    assert_ne!(phi, phi_prefix);
}

#[test]
fn casting_preserves_outputs() {
    let g32 = Generator::<f32>::new(ModelConfig::tiny(8), 7).unwrap();
    let g64: Generator<f64> = g32.cast();
    let x = features(16, 8, 4);
    let (s32, _) = g32.generate(&x).unwrap();
    let (s64, _) = g64.generate(&x.cast()).unwrap();
    for (a, b) in s32.iter().zip(&s64) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}
