#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tllm_core::input_block::InputConfig;
use tllm_core::model::{GuidanceConfig, ModelConfig};
use tllm_core::numerics::{Real, Tensor};
use tllm_core::student::StudentConfig;
use tllm_core::teacher::{CapacitySchedule, TeacherConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<F: Real>(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Tiny model: C=3, L=8, T=4, d=8.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        channels: 3,
        lookback: 8,
        horizon: 4,
        d_model: 8,
        instance_norm: false,
        input: InputConfig {
            heads: 2,
            dict_size: 6,
            ..InputConfig::default()
        },
        teacher: TeacherConfig {
            kernel: 3,
            capacity: CapacitySchedule::new(vec![(4, 3), (8, 5)]).unwrap(),
            d_pool: 4,
            d_gate: 4,
            ..TeacherConfig::default()
        },
        student: StudentConfig {
            layers: 2,
            heads: 2,
            d_ff: 8,
            lora_rank: 2,
            lora_alpha: 4.0,
            ..StudentConfig::default()
        },
        guidance: GuidanceConfig::default(),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
