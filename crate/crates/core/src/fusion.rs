//! Fusion stage: cascaded factorized-bilinear blocks with residual state.
//!
//! A block multiplies (Hadamard) the projections `H_ch · U_ch` of every
//! active channel, and `Z · U_state` when an incoming state `Z` exists, then
//! applies row `ℓ2` normalization and a learned affine map. With a state the
//! block returns `Z + fused`, otherwise `fused`. The pooled representation is
//! the mean of all block outputs, averaged over the aspect rows.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::gcn::glorot;
use crate::error::{EmgfError, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Dep,
    Con,
    Sem,
    Kge,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Dep, Channel::Con, Channel::Sem, Channel::Kge];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Dep => "dep",
            Channel::Con => "con",
            Channel::Sem => "sem",
            Channel::Kge => "kge",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = EmgfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dep" => Ok(Channel::Dep),
            "con" => Ok(Channel::Con),
            "sem" => Ok(Channel::Sem),
            "kge" => Ok(Channel::Kge),
            other => Err(EmgfError::Config(format!(
                "unknown channel '{other}' (expected dep, con, sem or kge)"
            ))),
        }
    }
}

/// Nonempty subset of the four channels, kept in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Channel>", into = "Vec<Channel>")]
pub struct ChannelSet(Vec<Channel>);

impl ChannelSet {
    pub fn new(channels: impl IntoIterator<Item = Channel>) -> Result<Self> {
        let mut v: Vec<Channel> = channels.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(EmgfError::Config("at least one fusion channel is required".into()));
        }
        Ok(ChannelSet(v))
    }

    pub fn all() -> Self {
        ChannelSet(Channel::ALL.to_vec())
    }

    /// All 15 nonempty subsets.
    pub fn all_subsets() -> Vec<ChannelSet> {
        (1u8..16)
            .map(|mask| {
                ChannelSet(
                    Channel::ALL
                        .into_iter()
                        .filter(|c| mask & (1 << c.index()) != 0)
                        .collect(),
                )
            })
            .collect()
    }

    pub fn contains(&self, c: Channel) -> bool {
        self.0.contains(&c)
    }

    pub fn iter(&self) -> impl Iterator<Item = Channel> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<Channel>> for ChannelSet {
    type Error = EmgfError;

    fn try_from(v: Vec<Channel>) -> Result<Self> {
        ChannelSet::new(v)
    }
}

impl From<ChannelSet> for Vec<Channel> {
    fn from(s: ChannelSet) -> Self {
        s.0
    }
}

impl FromStr for ChannelSet {
    type Err = EmgfError;

    /// Comma-separated, e.g. `dep,con,sem`; `all` selects every channel.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(ChannelSet::all());
        }
        ChannelSet::new(s.split(',').map(str::parse).collect::<Result<Vec<_>>>()?)
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|c| c.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Channel features for one instance, `n×d` each, indexed by [`Channel::index`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ChannelInputs {
    slots: [Option<Var>; 4],
}

impl ChannelInputs {
    pub fn new() -> Self {
        ChannelInputs::default()
    }

    pub fn with(mut self, c: Channel, v: Var) -> Self {
        self.slots[c.index()] = Some(v);
        self
    }

    pub fn get(&self, c: Channel) -> Option<Var> {
        self.slots[c.index()]
    }
}

#[derive(Debug, Clone)]
pub struct EmsfBlock {
    channel_maps: [ParamId; 4],
    state_map: Option<ParamId>,
    gamma: ParamId,
    beta: ParamId,
}

impl EmsfBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        index: usize,
        dim: usize,
        factor_dim: usize,
        with_state: bool,
        rng: &mut R,
    ) -> Self {
        let prefix = format!("fusion/{index}");
        let channel_maps = Channel::ALL.map(|c| {
            store.add(format!("{prefix}.u_{}", c.name()), glorot(dim, factor_dim, rng))
        });
        let state_map = with_state
            .then(|| store.add(format!("{prefix}.u_state"), glorot(factor_dim, factor_dim, rng)));
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::ones(1, factor_dim));
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(1, factor_dim));
        EmsfBlock {
            channel_maps,
            state_map,
            gamma,
            beta,
        }
    }

    pub fn channel_map(&self, c: Channel) -> ParamId {
        self.channel_maps[c.index()]
    }

    pub fn state_map(&self) -> Option<ParamId> {
        self.state_map
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    /// Fused features before the residual is added.
    pub fn fused(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Option<Var>,
        active: &ChannelSet,
        inputs: &ChannelInputs,
    ) -> Result<Var> {
        let mut factors = Vec::with_capacity(active.len() + 1);
        for c in active.iter() {
            let h = inputs.get(c).ok_or_else(|| {
                EmgfError::Config(format!("channel '{c}' is active but has no input"))
            })?;
            let u = tape.param(store, self.channel_maps[c.index()]);
            factors.push(tape.matmul(h, u)?);
        }
        if let Some(z) = state {
            let u = self.state_map.ok_or_else(|| {
                EmgfError::Config("block without a state map received a state".into())
            })?;
            let u = tape.param(store, u);
            factors.push(tape.matmul(z, u)?);
        }
        let (&first, rest) = factors
            .split_first()
            .ok_or_else(|| EmgfError::Config("fusion block needs at least one channel".into()))?;
        let product = rest.iter().try_fold(first, |acc, &f| tape.mul(acc, f))?;
        let normed = tape.normalize_rows(product)?;
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let scaled = tape.mul_row(normed, gamma)?;
        tape.add_row(scaled, beta)
    }

    /// `state + fused` when a state is given, else `fused`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Option<Var>,
        active: &ChannelSet,
        inputs: &ChannelInputs,
    ) -> Result<Var> {
        let fused = self.fused(tape, store, state, active, inputs)?;
        match state {
            Some(z) => tape.add(z, fused),
            None => Ok(fused),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionState {
    pub block_outputs: Vec<Var>,
    /// `1×d_f` pooled representation.
    pub r: Var,
}

#[derive(Debug, Clone)]
pub struct Cascade {
    blocks: Vec<EmsfBlock>,
    factor_dim: usize,
}

impl Cascade {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        blocks: usize,
        dim: usize,
        factor_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if blocks == 0 {
            return Err(EmgfError::Config("fusion needs at least one block".into()));
        }
        let blocks = (0..blocks)
            .map(|i| EmsfBlock::new(store, i, dim, factor_dim, i > 0, rng))
            .collect();
        Ok(Cascade { blocks, factor_dim })
    }

    pub fn blocks(&self) -> &[EmsfBlock] {
        &self.blocks
    }

    pub fn factor_dim(&self) -> usize {
        self.factor_dim
    }

    /// Runs every block, averages the block outputs and pools over `aspect` rows.
    pub fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        active: &ChannelSet,
        inputs: &ChannelInputs,
        aspect: &[usize],
    ) -> Result<FusionState> {
        let mut outputs = Vec::with_capacity(self.blocks.len());
        let mut state = None;
        for block in &self.blocks {
            let z = block.forward(tape, store, state, active, inputs)?;
            outputs.push(z);
            state = Some(z);
        }
        let total = tape.add_all(&outputs)?;
        let mean = tape.scale(total, 1.0 / outputs.len() as f64);
        let rows = tape.select_rows(mean, aspect)?;
        let r = tape.mean_over_rows(rows)?;
        Ok(FusionState {
            block_outputs: outputs,
            r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn channel_set_parsing() {
        let s: ChannelSet = "sem,dep".parse().unwrap();
        assert_eq!(s.to_string(), "dep,sem");
        assert!("".parse::<ChannelSet>().is_err());
        assert!("dep,foo".parse::<ChannelSet>().is_err());
        assert_eq!("all".parse::<ChannelSet>().unwrap(), ChannelSet::all());
        assert_eq!(ChannelSet::all_subsets().len(), 15);
    }

    #[test]
    fn single_channel_identity_map_is_affine_of_input() {
        let mut store = ParamStore::new();
        let block = EmsfBlock::new(&mut store, 0, 2, 2, false, &mut rng());
        store.get_mut(block.channel_map(Channel::Sem)).value = Tensor::identity(2);
        store.get_mut(block.gamma()).value = Tensor::row_vector(&[2.0, -1.0]);
        store.get_mut(block.beta()).value = Tensor::row_vector(&[0.5, 0.25]);

        let s = 0.5f64.sqrt();
        let input = Tensor::from_rows(&[vec![1.0, 0.0], vec![s, s]]).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(input.clone());
        let active = ChannelSet::new([Channel::Sem]).unwrap();
        let inputs = ChannelInputs::new().with(Channel::Sem, h);
        let out = block.forward(&mut tape, &store, None, &active, &inputs).unwrap();
        let v = tape.value(out);
        for r in 0..2 {
            let expected = [input.get(r, 0) * 2.0 + 0.5, -input.get(r, 1) + 0.25];
            for c in 0..2 {
                assert!((v.get(r, c) - expected[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_channel_annihilates_fused_term() {
        let mut store = ParamStore::new();
        let block = EmsfBlock::new(&mut store, 1, 3, 3, true, &mut rng());
        let beta = Tensor::row_vector(&[0.1, 0.2, 0.3]);
        store.get_mut(block.beta()).value = beta.clone();
        let mut tape = Tape::new();
        let mut r = rng();
        let dep = tape.constant(Tensor::randn(4, 3, 1.0, &mut r));
        let zero = tape.constant(Tensor::zeros(4, 3));
        let state = Tensor::randn(4, 3, 1.0, &mut r);
        let z = tape.constant(state.clone());
        let active = ChannelSet::new([Channel::Dep, Channel::Con]).unwrap();
        let inputs = ChannelInputs::new().with(Channel::Dep, dep).with(Channel::Con, zero);
        let out = block.forward(&mut tape, &store, Some(z), &active, &inputs).unwrap();
        let v = tape.value(out);
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(v.get(i, j), state.get(i, j) + beta.get(0, j));
            }
        }
    }

    #[test]
    fn zero_affine_makes_block_identity_on_state() {
        let mut store = ParamStore::new();
        let block = EmsfBlock::new(&mut store, 1, 3, 3, true, &mut rng());
        store.get_mut(block.gamma()).value = Tensor::zeros(1, 3);
        let mut tape = Tape::new();
        let mut r = rng();
        let h = tape.constant(Tensor::randn(5, 3, 1.0, &mut r));
        let state = Tensor::randn(5, 3, 1.0, &mut r);
        let z = tape.constant(state.clone());
        let active = ChannelSet::all();
        let inputs = Channel::ALL
            .into_iter()
            .fold(ChannelInputs::new(), |acc, c| acc.with(c, h));
        let out = block.forward(&mut tape, &store, Some(z), &active, &inputs).unwrap();
        assert_eq!(tape.value(out), &state);
    }

    #[test]
    fn missing_active_input_is_an_error() {
        let mut store = ParamStore::new();
        let block = EmsfBlock::new(&mut store, 0, 2, 2, false, &mut rng());
        let mut tape = Tape::new();
        let active = ChannelSet::new([Channel::Kge]).unwrap();
        assert!(block
            .forward(&mut tape, &store, None, &active, &ChannelInputs::new())
            .is_err());
    }

    #[test]
    fn bias_only_cascade_is_running_sum_average() {
        let (blocks, n, d) = (3, 4, 2);
        let mut store = ParamStore::new();
        let cascade = Cascade::new(&mut store, blocks, d, d, &mut rng()).unwrap();
        let betas = [[1.0, 2.0], [0.5, -1.0], [-3.0, 0.25]];
        for (b, beta) in cascade.blocks().iter().zip(betas) {
            for c in Channel::ALL {
                store.get_mut(b.channel_map(c)).value = Tensor::zeros(d, d);
            }
            if let Some(s) = b.state_map() {
                store.get_mut(s).value = Tensor::zeros(d, d);
            }
            store.get_mut(b.beta()).value = Tensor::row_vector(&beta);
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::randn(n, d, 1.0, &mut rng()));
        let active = ChannelSet::all();
        let inputs = Channel::ALL
            .into_iter()
            .fold(ChannelInputs::new(), |acc, c| acc.with(c, h));
        let state = cascade.run(&mut tape, &store, &active, &inputs, &[1, 2]).unwrap();
        assert_eq!(state.block_outputs.len(), 3);

        // Z1 = b1, Z2 = b1 + b2, Z3 = b1 + b2 + b3; r = mean(Z1, Z2, Z3)
        let expected = [
            (3.0 * 1.0 + 2.0 * 0.5 - 3.0) / 3.0,
            (3.0 * 2.0 + 2.0 * -1.0 + 0.25) / 3.0,
        ];
        let r = tape.value(state.r);
        assert_eq!(r.shape(), [1, 2]);
        for c in 0..2 {
            assert!((r.get(0, c) - expected[c]).abs() < 1e-15, "{r:?}");
        }
    }
}
