//! End-to-end differentiability: the query loss against central differences
//! through every parameter family, and structural gradient-flow checks.

use hypergen_model::{
    episode_loss, CnnSpec, Generator, GeneratorConfig, TransformerConfig, TransformerVariant,
    WeightSource,
};
use hypergen_tensor::{gradcheck, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INPUT: [usize; 3] = [1, 12, 12];

fn rand_image(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor<f64> {
    let n = shape[0] * shape[1] * shape[2];
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

struct FdCase {
    generator: Generator<f64>,
    support: Vec<Tensor<f64>>,
    support_labels: Vec<Option<usize>>,
    query: Vec<Tensor<f64>>,
    query_labels: Vec<usize>,
}

fn fd_case(variant: TransformerVariant, seed: u64) -> FdCase {
    let spec = CnnSpec::standard(
        2,
        1,
        2,
        INPUT,
        WeightSource::Generated,
        WeightSource::Generated,
    );
    let mut config = GeneratorConfig::new(2);
    config.d_label = 8;
    config.transformer = TransformerConfig {
        num_layers: 1,
        num_heads: 2,
        nu: 0.25,
        variant,
        simplified: false,
    };
    let generator = Generator::new(config, spec, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    FdCase {
        generator,
        support: (0..3).map(|_| rand_image(&mut r, INPUT)).collect(),
        support_labels: vec![Some(0), Some(1), None],
        query: (0..2).map(|_| rand_image(&mut r, INPUT)).collect(),
        query_labels: vec![0, 1],
    }
}

impl FdCase {
    fn loss(&self) -> f64 {
        let mut tape = Tape::<f64>::new();
        let bound = self.generator.bind_frozen(&mut tape);
        let (loss, _) = episode_loss(
            &mut tape,
            &self.generator,
            &bound,
            &self.support,
            &self.support_labels,
            &self.query,
            &self.query_labels,
        )
        .unwrap();
        tape.value(loss).item().unwrap()
    }

    /// Analytic gradient entries for the probed (name, coordinate) pairs.
    fn analytic(&self, coords: &[(String, usize)]) -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let bound = self.generator.bind(&mut tape);
        let (loss, _) = episode_loss(
            &mut tape,
            &self.generator,
            &bound,
            &self.support,
            &self.support_labels,
            &self.query,
            &self.query_labels,
        )
        .unwrap();
        let grads = tape.backward(loss).unwrap();
        coords
            .iter()
            .map(|(name, coord)| {
                let id = self.generator.params.id(name).unwrap_or_else(|| {
                    panic!("no parameter named {name}");
                });
                grads
                    .get(bound.tid(id))
                    .map(|g| g.data()[*coord])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    fn probe(&mut self, names: &[&str]) -> (Vec<(String, usize)>, Vec<f64>) {
        let mut coords = Vec::new();
        for &name in names {
            let id = self
                .generator
                .params
                .id(name)
                .unwrap_or_else(|| panic!("no parameter named {name}"));
            let n = self.generator.params.get(id).numel();
            coords.push((name.to_string(), 0));
            if n > 1 {
                coords.push((name.to_string(), n / 2));
            }
        }
        let x0 = coords
            .iter()
            .map(|(name, coord)| {
                let id = self.generator.params.id(name).unwrap();
                self.generator.params.get(id).data()[*coord]
            })
            .collect();
        (coords, x0)
    }

    fn check(&mut self, names: &[&str], tol: f64) {
        let (coords, x0) = self.probe(names);
        let analytic = self.analytic(&coords);
        let mut f = |x: &[f64]| -> f64 {
            for ((name, coord), &v) in coords.iter().zip(x) {
                let id = self.generator.params.id(name).unwrap();
                self.generator.params.get_mut(id).data_mut()[*coord] = v;
            }
            self.loss()
        };
        let numeric = gradcheck::central_diff(&mut f, &x0, 1e-5);
        let mut worst = (0.0f64, 0usize);
        for i in 0..coords.len() {
            let err = gradcheck::max_rel_err(&analytic[i..=i], &numeric[i..=i], 1e-6);
            if err > worst.0 {
                worst = (err, i);
            }
        }
        let (name, coord) = &coords[worst.1];
        assert!(
            worst.0 < tol,
            "worst relative gradient error {:.3e} at {name}[{coord}]: analytic {:.6e}, numeric {:.6e}",
            worst.0,
            analytic[worst.1],
            numeric[worst.1]
        );
    }
}

#[test]
fn episode_loss_matches_central_differences() {
    let mut case = fd_case(TransformerVariant::EncoderOnly, 77);
    case.check(
        &[
            "codebook.xi",
            "codebook.xi_hat",
            "gen0.mu",
            "gen1.mu",
            "gen0.e0.attn.wq",
            "gen0.e0.attn.wk",
            "gen0.e0.attn.wv",
            "gen0.e0.attn.wo",
            "gen0.e0.attn.ob",
            "gen0.e0.ln1.gamma",
            "gen0.e0.ff.w1",
            "gen1.e0.ff.w2",
            "gen1.e0.ff.b1",
            "img.s0.kernel",
            "img.s2.bn_gamma",
            "img.s3.kernel",
            "gen0.act0.kernel",
            "gen1.act1.kernel",
            "gen1.act0.bias",
            "cnn0.bn_gamma",
            "cnn0.bn_beta",
        ],
        1e-3,
    );
}

#[test]
fn decoder_variant_matches_central_differences() {
    let mut case = fd_case(TransformerVariant::EncoderDecoder, 78);
    case.check(
        &[
            "gen0.e0.attn.wq",
            "gen0.d0.self.wq",
            "gen0.d0.self.wv",
            "gen0.d0.cross.wq",
            "gen0.d0.cross.wk",
            "gen0.d0.cross.wv",
            "gen0.d0.ln2.gamma",
            "gen0.d0.ff.w1",
            "gen1.d0.cross.wo",
            "gen1.mu",
        ],
        1e-3,
    );
}

#[test]
fn gradients_reach_every_parameter_family() {
    let case = fd_case(TransformerVariant::EncoderOnly, 79);
    let mut tape = Tape::<f64>::new();
    let bound = case.generator.bind(&mut tape);
    let (loss, _) = episode_loss(
        &mut tape,
        &case.generator,
        &bound,
        &case.support,
        &case.support_labels,
        &case.query,
        &case.query_labels,
    )
    .unwrap();
    let grads = tape.backward(loss).unwrap();
    for ((name, _), &tid) in case.generator.params.iter().zip(bound.tids()) {
        let max_abs = grads
            .get(tid)
            .map(|g| g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .unwrap_or(0.0);
        if name.starts_with("img.s") && name.ends_with(".bias") {
            // A constant shift before batch norm is normalized away, so these
            // biases only see floating-point residue.
            assert!(max_abs < 1e-8, "{name} should be shadowed by batch norm, got {max_abs:.3e}");
        } else {
            assert!(max_abs > 0.0, "{name} received no gradient");
        }
    }
}

#[test]
fn unused_codebook_rows_get_no_gradient() {
    let mut case = fd_case(TransformerVariant::EncoderOnly, 80);
    // Fully labeled episode: the unlabeled code is never gathered.
    case.support_labels = vec![Some(0), Some(1), Some(0)];
    let mut tape = Tape::<f64>::new();
    let bound = case.generator.bind(&mut tape);
    let (loss, _) = episode_loss(
        &mut tape,
        &case.generator,
        &bound,
        &case.support,
        &case.support_labels,
        &case.query,
        &case.query_labels,
    )
    .unwrap();
    let grads = tape.backward(loss).unwrap();
    let id = case.generator.params.id("codebook.xi_hat").unwrap();
    let max_abs = grads
        .get(bound.tid(id))
        .map(|g| g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .unwrap_or(0.0);
    assert_eq!(max_abs, 0.0, "xi_hat gradient must be exactly zero");
}
