use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::GanModel;
use crate::autodiff::{AdamState, MlpSpec, NamedTensor, ParameterSet, Tensor2};
use crate::error::{Error, Result};
use crate::io;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One parameter tensor as nested rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub name: String,
    pub values: Vec<Vec<f64>>,
}

impl Block {
    fn from_tensor(name: &str, t: &Tensor2) -> Self {
        Block {
            name: name.to_string(),
            values: (0..t.rows).map(|r| t.row(r).to_vec()).collect(),
        }
    }

    fn to_tensor(&self) -> Result<Tensor2> {
        let rows = self.values.len();
        let cols = self.values.first().map_or(0, Vec::len);
        if self.values.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract(format!("block {} has ragged rows", self.name)));
        }
        if rows == 0 {
            return Ok(Tensor2::zeros(0, 0));
        }
        Ok(Tensor2::from_rows(&self.values))
    }
}

fn blocks_of(p: &ParameterSet) -> Vec<Block> {
    p.blocks.iter().map(|b| Block::from_tensor(&b.name, &b.tensor)).collect()
}

fn params_of(blocks: &[Block]) -> Result<ParameterSet> {
    Ok(ParameterSet {
        blocks: blocks
            .iter()
            .map(|b| Ok(NamedTensor::new(b.name.clone(), b.to_tensor()?)))
            .collect::<Result<_>>()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first: Vec<Block>,
    pub second: Vec<Block>,
}

impl OptimizerSnapshot {
    fn of(state: &AdamState, names: &ParameterSet) -> Self {
        let wrap = |ts: &[Tensor2]| {
            ts.iter()
                .zip(&names.blocks)
                .map(|(t, b)| Block::from_tensor(&b.name, t))
                .collect()
        };
        OptimizerSnapshot {
            step: state.step,
            first: wrap(&state.first),
            second: wrap(&state.second),
        }
    }

    fn restore(&self) -> Result<AdamState> {
        let unwrap = |bs: &[Block]| bs.iter().map(Block::to_tensor).collect::<Result<Vec<_>>>();
        Ok(AdamState {
            step: self.step,
            first: unwrap(&self.first)?,
            second: unwrap(&self.second)?,
        })
    }
}

/// Complete training state at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub generator_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub generator: Vec<Block>,
    pub critic: Vec<Block>,
    pub generator_optimizer: OptimizerSnapshot,
    pub critic_optimizer: OptimizerSnapshot,
    pub rng_seed: u64,
    /// ChaCha word position, decimal (exceeds 64 bits).
    pub rng_word_pos: String,
    pub epoch: usize,
    pub iteration: usize,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        config: &TrainConfig,
        model: &GanModel,
        g_opt: &AdamState,
        c_opt: &AdamState,
        rng_word_pos: u128,
        epoch: usize,
        iteration: usize,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: config.clone(),
            generator_spec: model.generator_spec.clone(),
            critic_spec: model.critic_spec.clone(),
            generator: blocks_of(&model.generator),
            critic: blocks_of(&model.critic),
            generator_optimizer: OptimizerSnapshot::of(g_opt, &model.generator),
            critic_optimizer: OptimizerSnapshot::of(c_opt, &model.critic),
            rng_seed: config.seed,
            rng_word_pos: rng_word_pos.to_string(),
            epoch,
            iteration,
        }
    }

    pub fn model(&self) -> Result<GanModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "checkpoint format {} is not supported (expected {})",
                self.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let model = GanModel {
            generator_spec: self.generator_spec.clone(),
            critic_spec: self.critic_spec.clone(),
            generator: params_of(&self.generator)?,
            critic: params_of(&self.critic)?,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn optimizers(&self) -> Result<(AdamState, AdamState)> {
        Ok((self.generator_optimizer.restore()?, self.critic_optimizer.restore()?))
    }

    pub fn word_pos(&self) -> Result<u128> {
        self.rng_word_pos
            .parse()
            .map_err(|_| Error::Contract(format!("bad rng word position {:?}", self.rng_word_pos)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = io::read_json(path)?;
        c.model()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut cfg = TrainConfig {
            image_side: 4,
            d_z: 3,
            classes: 2,
            ..Default::default()
        };
        cfg.network.generator_hidden = vec![5];
        cfg.network.critic_hidden = vec![6];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = GanModel::init(&cfg, &mut rng).unwrap();
        let g = AdamState::new(&model.generator);
        let c = AdamState::new(&model.critic);
        let ck = Checkpoint::capture(&cfg, &model, &g, &c, 1u128 << 70, 3, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), model);
        assert_eq!(back.word_pos().unwrap(), 1u128 << 70);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let cfg = TrainConfig {
            image_side: 4,
            d_z: 2,
            classes: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = GanModel::init(&cfg, &mut rng).unwrap();
        let mut ck = Checkpoint::capture(
            &cfg,
            &model,
            &AdamState::new(&model.generator),
            &AdamState::new(&model.critic),
            0,
            0,
            0,
        );
        ck.format_version = 99;
        assert!(ck.model().is_err());
    }
}
