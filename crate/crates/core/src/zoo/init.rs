use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, LayerSpec};
use crate::error::{bail, Result};
use crate::rng::{Rng, SeedStream};

/// Weight initialization families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Uniform,
    Normal,
    KaimingUniform,
    KaimingNormal,
    XavierUniform,
    XavierNormal,
}

/// Scale of the plain `uniform` / `normal` families.
pub const PLAIN_INIT_SCALE: f64 = 0.1;

impl InitMethod {
    pub const ALL: [InitMethod; 6] = [
        InitMethod::Uniform,
        InitMethod::Normal,
        InitMethod::KaimingUniform,
        InitMethod::KaimingNormal,
        InitMethod::XavierUniform,
        InitMethod::XavierNormal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InitMethod::Uniform => "uniform",
            InitMethod::Normal => "normal",
            InitMethod::KaimingUniform => "kaiming_uniform",
            InitMethod::KaimingNormal => "kaiming_normal",
            InitMethod::XavierUniform => "xavier_uniform",
            InitMethod::XavierNormal => "xavier_normal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "uniform" => Ok(InitMethod::Uniform),
            "normal" => Ok(InitMethod::Normal),
            "kaiming_uniform" | "kaiming_un" => Ok(InitMethod::KaimingUniform),
            "kaiming_normal" | "kaiming_no" => Ok(InitMethod::KaimingNormal),
            "xavier_uniform" | "xavier_un" => Ok(InitMethod::XavierUniform),
            "xavier_normal" | "xavier_no" => Ok(InitMethod::XavierNormal),
            _ => bail!(Config, "unknown init method '{s}'"),
        }
    }

    /// Uniform bound or normal std for a layer with the given fans.
    pub fn scale(&self, fan_in: usize, fan_out: usize) -> f64 {
        let (fi, fo) = (fan_in as f64, fan_out as f64);
        match self {
            InitMethod::Uniform | InitMethod::Normal => PLAIN_INIT_SCALE,
            InitMethod::KaimingUniform => (6.0 / fi).sqrt(),
            InitMethod::KaimingNormal => (2.0 / fi).sqrt(),
            InitMethod::XavierUniform => (6.0 / (fi + fo)).sqrt(),
            InitMethod::XavierNormal => (2.0 / (fi + fo)).sqrt(),
        }
    }

    fn is_uniform(&self) -> bool {
        matches!(self, InitMethod::Uniform | InitMethod::KaimingUniform | InitMethod::XavierUniform)
    }

    fn draw(&self, scale: f64, rng: &mut Rng) -> f32 {
        if self.is_uniform() {
            rng.random_range(-scale..=scale) as f32
        } else {
            Normal::new(0.0, scale).expect("positive std").sample(rng) as f32
        }
    }
}

/// Draws a flat weight vector; biases are zero except for `uniform`/`normal`.
pub fn init_weights(arch: &ArchSpec, method: InitMethod, seed: u64) -> Vec<f32> {
    let mut rng = SeedStream::new(seed).rng_for(&[0x1417]);
    let mut out = Vec::with_capacity(arch.param_count());
    for layer in &arch.layers {
        let (fan_in, fan_out, n_w, n_b) = match *layer {
            LayerSpec::Dense { inp, out, bias } => (inp, out, inp * out, if bias { out } else { 0 }),
            LayerSpec::Conv { c_in, c_out, ks } => (c_in * ks * ks, c_out * ks * ks, c_out * c_in * ks * ks, c_out),
            _ => continue,
        };
        let s = method.scale(fan_in, fan_out);
        out.extend((0..n_w).map(|_| method.draw(s, &mut rng)));
        let plain = matches!(method, InitMethod::Uniform | InitMethod::Normal);
        out.extend((0..n_b).map(|_| if plain { method.draw(s, &mut rng) } else { 0.0 }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::arch::build_ffn_tetris;

    #[test]
    fn deterministic_per_seed() {
        let a = build_ffn_tetris();
        for m in InitMethod::ALL {
            assert_eq!(init_weights(&a, m, 5), init_weights(&a, m, 5));
            assert_ne!(init_weights(&a, m, 5), init_weights(&a, m, 6));
            assert_eq!(init_weights(&a, m, 5).len(), 100);
        }
    }

    #[test]
    fn formula_scales() {
        assert!((InitMethod::XavierUniform.scale(16, 5) - 0.5345).abs() < 1e-4);
        assert!((InitMethod::KaimingNormal.scale(16, 5) - 0.3536).abs() < 1e-4);
        let w = init_weights(&build_ffn_tetris(), InitMethod::XavierUniform, 1);
        assert!(w[..80].iter().all(|x| x.abs() <= 0.5346));
    }

    #[test]
    fn parse_names() {
        for m in InitMethod::ALL {
            assert_eq!(InitMethod::parse(m.name()).unwrap(), m);
        }
        assert!(InitMethod::parse("orthogonal").is_err());
    }
}
