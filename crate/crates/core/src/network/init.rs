use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{ParamSet, Tensor};

use super::ModelConfig;

/// Number of outputs of the pose head: quaternion, translation, confidence.
pub(crate) const HEAD_OUTPUTS: usize = 8;

struct Init {
    rng: ChaCha8Rng,
    params: ParamSet,
}

impl Init {
    /// Glorot-uniform weight times `gain`, zero bias.
    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, gain: f64) {
        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-limit..limit))
            .collect();
        self.params.insert(
            format!("{prefix}.w"),
            Tensor::new(vec![fan_in, fan_out], w).expect("sized"),
        );
        self.params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.params.insert(format!("{prefix}.g"), Tensor::ones(&[d]));
        self.params.insert(format!("{prefix}.b"), Tensor::zeros(&[d]));
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-limit..limit))
            .collect();
        self.params
            .insert(name, Tensor::new(vec![fan_in, fan_out], w).expect("sized"));
    }

    fn encoder_stack(&mut self, prefix: &str, layers: usize, d: usize) {
        for l in 0..layers {
            let p = format!("{prefix}.l{l}");
            self.layer_norm(&format!("{p}.ln1"), d);
            for w in ["wq", "wk", "wv"] {
                self.weight(format!("{p}.{w}"), d, d);
            }
            self.linear(&format!("{p}.wo"), d, d, 1.0);
            self.layer_norm(&format!("{p}.ln2"), d);
            self.linear(&format!("{p}.ff1"), d, 2 * d, 1.0);
            self.linear(&format!("{p}.ff2"), 2 * d, d, 1.0);
        }
    }
}

pub(crate) fn init_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let e = &cfg.encoder;
    let f = &cfg.fusion;
    let mut it = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: ParamSet::new(),
    };

    let c = e.color_channels;
    it.linear("color.conv0", 9 * 3, c, 1.0);
    it.linear("color.conv1", 9 * c, c, 1.0);
    it.linear("color.conv2", 9 * c, c, 1.0);
    it.linear("color.proj", c, e.d_rgb, 1.0);

    it.linear("geo.early", 3, e.d2, 1.0);
    it.linear("geo.latent0", e.d2, e.d1, 1.0);
    it.linear("geo.latent1", e.d1, e.d1, 1.0);
    it.linear("geo.global", e.d1, e.d3, 1.0);
    it.linear("geo.dec0", e.d_geo, e.decoder_hidden, 1.0);
    it.linear("geo.dec1", e.decoder_hidden, 3, 0.1);

    // Identity on (real, imag) with zero biases: the filter starts as a
    // no-op.
    let w2 = 2 * e.d_geo;
    let mut eye = Tensor::zeros(&[w2, w2]);
    for i in 0..w2 {
        eye.data_mut()[i * w2 + i] = 1.0;
    }
    it.params.insert("gff.w", eye);
    it.params.insert("gff.b", Tensor::zeros(&[w2]));
    it.params.insert("gff.shrink", Tensor::zeros(&[e.d_geo]));

    it.linear("proj.color", e.d_rgb, f.d_emb, 1.0);
    it.linear("proj.geo", e.d_geo, f.d_emb, 1.0);

    if f.d_f1 != f.d_emb {
        it.linear("modality.in", f.d_emb, f.d_f1, 1.0);
    }
    it.encoder_stack("modality", f.modality_layers, f.d_f1);

    it.linear("pointwise.in", 2 * f.d_emb + 2 * f.d_f1, f.d_f2, 1.0);
    it.encoder_stack("pointwise", f.pointwise_layers, f.d_f2);

    let h = f.head_hidden;
    it.linear("head.h0", 2 * f.d_f1 + f.d_f2, h, 1.0);
    it.linear("head.h1", h, h, 1.0);
    it.linear("head.out", h, HEAD_OUTPUTS, 0.1);
    // Start every point at the identity rotation.
    it.params.get_mut("head.out.b").expect("inserted").data_mut()[0] = 1.0;

    it.params
}
