use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{LossWeights, TrainConfig};
use crate::autodiff::{
    adam_step, forward_on, input_gradient_on, mlp_infer, Activation, AdamHyper, AdamState, MlpSpec, NamedTensor, NodeId,
    ParameterSet, Tape, Tensor2,
};
use crate::error::{Error, Result};

/// Generator, class embedding and critic parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub generator_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    /// Generator MLP blocks followed by the `embedding` block (`classes × d_z`).
    pub generator: ParameterSet,
    pub critic: ParameterSet,
}

pub const EMBEDDING_BLOCK: &str = "embedding";

impl GanModel {
    pub fn specs(cfg: &TrainConfig) -> Result<(MlpSpec, MlpSpec)> {
        let slope = cfg.network.leaky_slope;
        let mut gw = vec![cfg.d_z];
        gw.extend(&cfg.network.generator_hidden);
        gw.push(cfg.pixels());
        let mut cw = vec![cfg.pixels()];
        cw.extend(&cfg.network.critic_hidden);
        cw.push(1 + cfg.classes);
        Ok((
            MlpSpec::new(gw, Activation::LeakyRelu(slope), Activation::Tanh)?,
            MlpSpec::new(cw, Activation::LeakyRelu(slope), Activation::Identity)?,
        ))
    }

    pub fn init<R: Rng>(cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let (generator_spec, critic_spec) = Self::specs(cfg)?;
        let mut generator = generator_spec.init(rng);
        let embedding = (0..cfg.classes * cfg.d_z).map(|_| StandardNormal.sample(rng)).collect();
        generator
            .blocks
            .push(NamedTensor::new(EMBEDDING_BLOCK, Tensor2::from_vec(cfg.classes, cfg.d_z, embedding)));
        let critic = critic_spec.init(rng);
        Ok(GanModel {
            generator_spec,
            critic_spec,
            generator,
            critic,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.generator.blocks.len();
        if n == 0 || self.generator.blocks[n - 1].name != EMBEDDING_BLOCK {
            return Err(Error::Contract("generator parameters lack the embedding block".into()));
        }
        let mlp = ParameterSet {
            blocks: self.generator.blocks[..n - 1].to_vec(),
        };
        self.generator_spec.check_params(&mlp)?;
        self.critic_spec.check_params(&self.critic)?;
        let e = self.embedding();
        if e.cols != self.d_z() || e.rows + 1 != self.critic_spec.output_width() {
            return Err(Error::Contract(format!("embedding is {}x{}", e.rows, e.cols)));
        }
        Ok(())
    }

    pub fn embedding(&self) -> &Tensor2 {
        &self.generator.blocks.last().expect("embedding block").tensor
    }

    pub fn d_z(&self) -> usize {
        self.generator_spec.input_width()
    }

    pub fn classes(&self) -> usize {
        self.critic_spec.output_width() - 1
    }

    pub fn pixels(&self) -> usize {
        self.generator_spec.output_width()
    }

    /// Generator output in `[-1, 1]` for latent rows `z` and their labels.
    pub fn generate(&self, z: &Tensor2, labels: &[usize]) -> Result<Tensor2> {
        self.check_batch(z, labels)?;
        let e = self.embedding();
        let mut cond = z.clone();
        for (r, &y) in labels.iter().enumerate() {
            for (v, &w) in cond.data[r * z.cols..(r + 1) * z.cols].iter_mut().zip(e.row(y)) {
                *v *= w;
            }
        }
        let n = self.generator.blocks.len();
        mlp_infer(&self.generator_spec, &self.generator.blocks[..n - 1], &cond)
    }

    fn check_batch(&self, z: &Tensor2, labels: &[usize]) -> Result<()> {
        let classes = self.classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        if z.rows != labels.len() || z.cols != self.d_z() {
            return Err(Error::Contract(format!(
                "latent batch is {}x{}, expected {}x{}",
                z.rows,
                z.cols,
                labels.len(),
                self.d_z()
            )));
        }
        Ok(())
    }

    /// Score column and class logits for each row of `x`.
    pub fn critic_outputs(&self, x: &Tensor2) -> Result<Vec<CriticOutputs>> {
        let mut tape = Tape::new();
        let c = self.critic.to_leaves(&mut tape);
        let xin = tape.leaf(x.clone());
        let out = forward_on(&mut tape, &self.critic_spec, &c, xin)?.output;
        let v = tape.value(out);
        Ok((0..v.rows)
            .map(|r| CriticOutputs {
                score: v.get(r, 0),
                logits: v.row(r)[1..].to_vec(),
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticOutputs {
    pub score: f64,
    pub logits: Vec<f64>,
}

/// `z ⊙ E[y]`.
pub fn condition_latent(z: &[f64], y: usize, embedding: &Tensor2) -> Result<Vec<f64>> {
    if y >= embedding.rows {
        return Err(Error::Label {
            label: y,
            classes: embedding.rows,
        });
    }
    if z.len() != embedding.cols {
        return Err(Error::Contract(format!(
            "latent has length {}, embedding rows have {}",
            z.len(),
            embedding.cols
        )));
    }
    Ok(z.iter().zip(embedding.row(y)).map(|(a, b)| a * b).collect())
}

/// `batch × d` matrix of standard-normal draws.
pub fn sample_latent<R: Rng>(rng: &mut R, batch: usize, d_z: usize) -> Tensor2 {
    Tensor2::from_vec(batch, d_z, (0..batch * d_z).map(|_| StandardNormal.sample(rng)).collect())
}

/// Records `G(z ⊙ E[y])`; `g` are the generator leaves with the embedding last.
pub fn record_generator(tape: &mut Tape, model: &GanModel, g: &[NodeId], z: &Tensor2, labels: &[usize]) -> Result<NodeId> {
    model.check_batch(z, labels)?;
    let (emb, mlp) = g.split_last().expect("embedding block");
    let zn = tape.leaf(z.clone());
    let rows = tape.gather_rows(*emb, Arc::new(labels.to_vec()));
    let cond = tape.mul(zn, rows);
    Ok(forward_on(tape, &model.generator_spec, mlp, cond)?.output)
}

/// Splits a critic output node into the score column and the logits.
fn record_critic(tape: &mut Tape, spec: &MlpSpec, c: &[NodeId], x: NodeId) -> Result<(NodeId, NodeId)> {
    let out = forward_on(tape, spec, c, x)?.output;
    let classes = spec.output_width() - 1;
    let score = tape.slice_cols(out, 0, 1);
    let logits = tape.slice_cols(out, 1, classes);
    Ok((score, logits))
}

/// `−Σ_r w_r log softmax(logits_r)[y_r]`; rows with `None` are ignored.
fn weighted_cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[Option<usize>], weight: f64) -> NodeId {
    let (rows, classes) = tape.value(logits).shape();
    let mut pick = Tensor2::zeros(rows, classes);
    for (r, y) in labels.iter().enumerate() {
        if let Some(y) = *y {
            pick.set(r, y, -weight);
        }
    }
    let ls = tape.log_softmax(logits);
    let pick = tape.leaf(pick);
    let picked = tape.mul(ls, pick);
    tape.sum_all(picked)
}

/// Interpolates `ε·real + (1 − ε)·fake` row by row.
pub fn interpolate(real: &Tensor2, fake: &Tensor2, eps: &[f64]) -> Result<Tensor2> {
    if real.shape() != fake.shape() || eps.len() != real.rows {
        return Err(Error::Contract("real, fake and epsilon sizes differ".into()));
    }
    let mut out = fake.clone();
    for r in 0..real.rows {
        let e = eps[r];
        for c in 0..real.cols {
            out.set(r, c, e * real.get(r, c) + (1.0 - e) * fake.get(r, c));
        }
    }
    Ok(out)
}

/// Records `mean_r (‖∇ₓ D(x̂_r)‖₂ − 1)²` without the `λ_gp` factor.
pub fn record_gradient_penalty(tape: &mut Tape, spec: &MlpSpec, c: &[NodeId], xhat: &Tensor2) -> Result<NodeId> {
    let x = tape.leaf(xhat.clone());
    let g = input_gradient_on(tape, spec, c, x, 0)?;
    let sq = tape.square(g);
    let norms = tape.sum_cols(sq);
    let norms = tape.sqrt(norms);
    let d = tape.add_scalar(norms, -1.0);
    let d2 = tape.square(d);
    Ok(tape.mean_all(d2))
}

/// `λ_gp · mean (‖∇ₓ D(x̂)‖₂ − 1)²` on fresh interpolates of `real` and `fake`.
pub fn gradient_penalty<R: Rng>(
    spec: &MlpSpec,
    params: &ParameterSet,
    real: &Tensor2,
    fake: &Tensor2,
    lambda_gp: f64,
    rng: &mut R,
) -> Result<f64> {
    spec.check_params(params)?;
    let eps: Vec<f64> = (0..real.rows).map(|_| rng.gen::<f64>()).collect();
    let xhat = interpolate(real, fake, &eps)?;
    let mut tape = Tape::new();
    let c = params.to_leaves(&mut tape);
    let gp = record_gradient_penalty(&mut tape, spec, &c, &xhat)?;
    let v = lambda_gp * tape.value(gp).data[0];
    if !v.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "non-finite gradient penalty".into(),
        });
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticLosses {
    pub l_d: f64,
    /// `mean D(fake) − mean D(real)`.
    pub wasserstein: f64,
    /// Already multiplied by `λ_gp`.
    pub penalty: f64,
    pub cls: f64,
}

/// Loss of the critic on a real batch and a constant fake batch.
pub fn critic_loss(
    model: &GanModel,
    weights: &LossWeights,
    real: &Tensor2,
    real_labels: &[usize],
    fake: &Tensor2,
    eps: &[f64],
) -> Result<(CriticLosses, Tape, NodeId, Vec<NodeId>)> {
    let b = real.rows;
    if fake.rows != b || real_labels.len() != b {
        return Err(Error::Contract("critic batches differ in size".into()));
    }
    let classes = model.classes();
    if let Some(&bad) = real_labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    let mut tape = Tape::new();
    let c = model.critic.to_leaves(&mut tape);
    let x = tape.leaf(Tensor2::vstack(&[real, fake]));
    let (score, logits) = record_critic(&mut tape, &model.critic_spec, &c, x)?;

    let inv = 1.0 / b as f64;
    let signs = Tensor2::from_vec(2 * b, 1, (0..2 * b).map(|r| if r < b { -inv } else { inv }).collect());
    let signs = tape.leaf(signs);
    let signed = tape.mul(score, signs);
    let wd = tape.sum_all(signed);

    let labels: Vec<Option<usize>> = real_labels.iter().map(|&y| Some(y)).chain((0..b).map(|_| None)).collect();
    let ce = weighted_cross_entropy(&mut tape, logits, &labels, inv);

    let xhat = interpolate(real, fake, eps)?;
    let gp = record_gradient_penalty(&mut tape, &model.critic_spec, &c, &xhat)?;
    let gp = tape.scale(gp, weights.lambda_gp);

    let lw = tape.add(wd, gp);
    let lw = tape.scale(lw, weights.lambda_w);
    let lc = tape.scale(ce, weights.lambda_cls);
    let total = tape.add(lw, lc);

    let losses = CriticLosses {
        l_d: tape.value(total).data[0],
        wasserstein: tape.value(wd).data[0],
        penalty: tape.value(gp).data[0],
        cls: tape.value(ce).data[0],
    };
    Ok((losses, tape, total, c))
}

fn check_finite(values: &[f64], iteration: usize, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            reason: format!("non-finite {what} loss"),
        })
    }
}

/// One optimizer step on the critic; the generator is untouched.
#[allow(clippy::too_many_arguments)]
pub fn critic_step(
    model: &mut GanModel,
    state: &mut AdamState,
    hyper: &AdamHyper,
    weights: &LossWeights,
    real: &Tensor2,
    real_labels: &[usize],
    fake: &Tensor2,
    eps: &[f64],
    iteration: usize,
) -> Result<CriticLosses> {
    let (losses, mut tape, total, c) = critic_loss(model, weights, real, real_labels, fake, eps)?;
    check_finite(&[losses.l_d], iteration, "critic")?;
    let grads = tape.grad(total, &c, 1.0)?;
    let grads = model.critic.with_values(tape.into_values(&grads));
    adam_step(&mut model.critic, &grads, state, hyper).map_err(|e| with_iteration(e, iteration))?;
    Ok(losses)
}

fn with_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { iteration, reason },
        other => other,
    }
}

/// Structure terms for one generator step, decided from the generated batch.
#[derive(Clone, Debug, Default)]
pub struct StructureTerms {
    /// Row and column blur matrices; `None` skips the blur term.
    pub blur: Option<(Arc<Tensor2>, Arc<Tensor2>)>,
    /// Per-row reconstruction targets (held constant); `None` skips the term.
    pub recon_target: Option<Tensor2>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorLosses {
    pub l_g: f64,
    pub l_w: f64,
    pub l_cls: f64,
    pub l_blur: f64,
    pub l_recon: f64,
}

/// Builds the generator loss. `structure` sees the generated batch values.
pub fn generator_loss(
    model: &GanModel,
    weights: &LossWeights,
    z: &Tensor2,
    labels: &[usize],
    side: usize,
    structure: &mut dyn FnMut(&Tensor2) -> Result<StructureTerms>,
) -> Result<(GeneratorLosses, Tape, NodeId, Vec<NodeId>)> {
    let mut tape = Tape::new();
    let g = model.generator.to_leaves(&mut tape);
    let c = model.critic.to_leaves(&mut tape);
    let xg = record_generator(&mut tape, model, &g, z, labels)?;
    let (score, logits) = record_critic(&mut tape, &model.critic_spec, &c, xg)?;

    let mean_score = tape.mean_all(score);
    let lw = tape.scale(mean_score, -1.0);
    let b = labels.len();
    let targets: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
    let lcls = weighted_cross_entropy(&mut tape, logits, &targets, 1.0 / b as f64);

    let terms = structure(tape.value(xg))?;
    let lblur = match terms.blur {
        Some((left, right)) => {
            let blurred = tape.separable2d(xg, side, side, left, right);
            let d = tape.sub(xg, blurred);
            let d2 = tape.square(d);
            Some(tape.mean_all(d2))
        }
        None => None,
    };
    let lrecon = match terms.recon_target {
        Some(t) => {
            if t.shape() != tape.value(xg).shape() {
                return Err(Error::Contract("reconstruction target shape differs from batch".into()));
            }
            let t = tape.leaf(t);
            let d = tape.sub(xg, t);
            let d2 = tape.square(d);
            Some(tape.mean_all(d2))
        }
        None => None,
    };

    let mut total = tape.scale(lw, weights.lambda_w);
    let parts = [(Some(lcls), weights.lambda_cls), (lblur, weights.lambda_blur), (lrecon, weights.lambda_recon)];
    for (node, lambda) in parts {
        if let Some(n) = node {
            if lambda != 0.0 {
                let s = tape.scale(n, lambda);
                total = tape.add(total, s);
            }
        }
    }
    let val = |n: Option<NodeId>| n.map(|n| tape.value(n).data[0]).unwrap_or(0.0);
    let losses = GeneratorLosses {
        l_g: tape.value(total).data[0],
        l_w: val(Some(lw)),
        l_cls: val(Some(lcls)),
        l_blur: val(lblur),
        l_recon: val(lrecon),
    };
    Ok((losses, tape, total, g))
}

/// One optimizer step on generator and embedding; the critic is untouched.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    model: &mut GanModel,
    state: &mut AdamState,
    hyper: &AdamHyper,
    weights: &LossWeights,
    z: &Tensor2,
    labels: &[usize],
    side: usize,
    structure: &mut dyn FnMut(&Tensor2) -> Result<StructureTerms>,
    iteration: usize,
) -> Result<GeneratorLosses> {
    let (losses, mut tape, total, g) = generator_loss(model, weights, z, labels, side, structure)?;
    check_finite(
        &[losses.l_g, losses.l_w, losses.l_cls, losses.l_blur, losses.l_recon],
        iteration,
        "generator",
    )?;
    let grads = tape.grad(total, &g, 1.0)?;
    let grads = model.generator.with_values(tape.into_values(&grads));
    adam_step(&mut model.generator, &grads, state, hyper).map_err(|e| with_iteration(e, iteration))?;
    Ok(losses)
}
