//! Full network: encoders, preprocessing stage, fusion cascade and classifier.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_con_stack, build_dep_adj, AspectInstance, ConGraphStack};
use crate::encoders::gcn::glorot;
use crate::encoders::{
    Adjacency, AttentionConfig, EmbeddingProvider, GcnKind, GcnStack, KnowledgeChannel,
    TokenEncoder,
};
use crate::error::{EmgfError, Result};
use crate::fusion::{Cascade, Channel, ChannelInputs, ChannelSet, FusionState};
use crate::preprocess::{build_triplets, purify, select_anchors, triplet_loss, DualViewGraph, TripletSet};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token feature width `d`.
    pub dim: usize,
    pub heads: usize,
    pub dep_layers: usize,
    /// Also the number of constituent slices.
    pub con_layers: usize,
    pub sem_layers: usize,
    /// Width of external knowledge vectors; filled from the data when unset.
    pub kge_dim: Option<usize>,
    pub kge_buckets: usize,
    pub embedding_seed: u64,
    pub embedding_table: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            heads: 2,
            dep_layers: 3,
            con_layers: 3,
            sem_layers: 3,
            kge_dim: None,
            kge_buckets: 64,
            embedding_seed: 0,
            embedding_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// The constant `c` in the anchor count.
    pub anchor_c: f64,
    pub margin: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            anchor_c: 1.0,
            margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub blocks: usize,
    /// Defaults to the token width.
    pub factor_dim: Option<usize>,
    pub channels: ChannelSet,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            blocks: 6,
            factor_dim: None,
            channels: ChannelSet::all(),
        }
    }
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub fusion: FusionConfig,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let positive = [
            ("model.dim", m.dim),
            ("model.heads", m.heads),
            ("model.dep_layers", m.dep_layers),
            ("model.con_layers", m.con_layers),
            ("model.sem_layers", m.sem_layers),
            ("model.kge_buckets", m.kge_buckets),
            ("fusion.blocks", self.fusion.blocks),
            ("fusion.factor_dim", self.factor_dim()),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(EmgfError::Config(format!("{key} must be positive")));
            }
        }
        if m.kge_dim == Some(0) {
            return Err(EmgfError::Config("model.kge_dim must be positive".into()));
        }
        if !m.dim.is_multiple_of(m.heads) {
            return Err(EmgfError::Config(format!(
                "model.heads ({}) must divide model.dim ({})",
                m.heads, m.dim
            )));
        }
        let p = &self.preprocess;
        if !(p.anchor_c > 0.0 && p.anchor_c.is_finite()) {
            return Err(EmgfError::Config("preprocess.anchor_c must be positive".into()));
        }
        if !(p.margin >= 0.0 && p.margin.is_finite()) {
            return Err(EmgfError::Config("preprocess.margin must be non-negative".into()));
        }
        Ok(())
    }

    pub fn factor_dim(&self) -> usize {
        self.fusion.factor_dim.unwrap_or(self.model.dim)
    }
}

/// An instance with its graphs built once up front.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub instance: AspectInstance,
    pub dep: Tensor,
    pub con: ConGraphStack,
}

impl PreparedInstance {
    pub fn new(instance: AspectInstance, con_slices: usize) -> Self {
        let dep = build_dep_adj(&instance).adj;
        let con = build_con_stack(instance.tree(), con_slices);
        PreparedInstance { instance, dep, con }
    }

    pub fn gold(&self) -> usize {
        self.instance.polarity().index()
    }
}

/// Training-time dropout on the token states.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub a_sem: Var,
    pub anchors: Vec<usize>,
    pub triplets: TripletSet,
    /// Summed hinge over this instance's anchors.
    pub triplet: Var,
    pub channels: ChannelInputs,
    pub fusion: FusionState,
    /// `1×3` class probabilities.
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: Var,
    pub lc: Var,
    pub triplet: Var,
    pub probs: Vec<Var>,
}

/// Parameter handles and forward logic; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    encoder: TokenEncoder,
    attention: AttentionConfig,
    gcn_dep: GcnStack,
    gcn_con: GcnStack,
    gcn_sem: GcnStack,
    knowledge: KnowledgeChannel,
    cascade: Cascade,
    classifier_w: ParamId,
    classifier_b: ParamId,
}

impl Network {
    /// Registers all parameters in `store`, initialized from `seed`.
    pub fn new(arch: Architecture, store: &mut ParamStore, seed: u64) -> Result<Self> {
        arch.validate()?;
        let m = &arch.model;
        let provider = match &m.embedding_table {
            Some(path) => EmbeddingProvider::from_file(path, m.dim, m.embedding_seed)?,
            None => EmbeddingProvider::hashed(m.dim, m.embedding_seed),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TokenEncoder::new(store, provider);
        let attention = AttentionConfig::new(store, m.dim, m.heads, &mut rng)?;
        let gcn_dep = GcnStack::new(store, GcnKind::Dep, m.dep_layers, m.dim, &mut rng);
        let gcn_con = GcnStack::new(store, GcnKind::Con, m.con_layers, m.dim, &mut rng);
        let gcn_sem = GcnStack::new(store, GcnKind::Sem, m.sem_layers, m.dim, &mut rng);
        let knowledge = KnowledgeChannel::new(store, m.kge_dim, m.dim, m.kge_buckets, &mut rng);
        let d_f = arch.factor_dim();
        let cascade = Cascade::new(store, arch.fusion.blocks, m.dim, d_f, &mut rng)?;
        let classifier_w = store.add("classifier/weight", glorot(d_f, 3, &mut rng));
        let classifier_b = store.add("classifier/bias", Tensor::zeros(1, 3));
        Ok(Network {
            arch,
            encoder,
            attention,
            gcn_dep,
            gcn_con,
            gcn_sem,
            knowledge,
            cascade,
            classifier_w,
            classifier_b,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.arch.fusion.channels
    }

    pub fn cascade(&self) -> &Cascade {
        &self.cascade
    }

    pub fn classifier(&self) -> (ParamId, ParamId) {
        (self.classifier_w, self.classifier_b)
    }

    pub fn prepare(&self, instance: AspectInstance) -> Result<PreparedInstance> {
        if let Some(w) = instance.kge_width() {
            if Some(w) != self.arch.model.kge_dim {
                return Err(EmgfError::Instance(format!(
                    "instance has knowledge vectors of width {w}, model expects {}",
                    self.arch
                        .model
                        .kge_dim
                        .map_or("none".to_string(), |d| d.to_string())
                )));
            }
        }
        Ok(PreparedInstance::new(instance, self.arch.model.con_layers))
    }

    pub fn prepare_all(&self, instances: &[AspectInstance]) -> Result<Vec<PreparedInstance>> {
        instances.iter().map(|i| self.prepare(i.clone())).collect()
    }

    /// Semantic attention and anchors only, for inspection.
    pub fn anchors(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prep: &PreparedInstance,
    ) -> Result<(Var, Vec<usize>)> {
        let h_ctx = self.encoder.encode(tape, store, &prep.instance)?;
        let a_sem = self.attention.attention_matrix(tape, store, h_ctx)?;
        let anchors = select_anchors(tape.value(a_sem), self.arch.preprocess.anchor_c)?;
        Ok((a_sem, anchors))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prep: &PreparedInstance,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<ForwardOutput> {
        let inst = &prep.instance;
        let mut h_ctx = self.encoder.encode(tape, store, inst)?;
        if let Some(d) = dropout {
            h_ctx = tape.dropout(h_ctx, d.p, d.rng)?;
        }

        let a_sem = self.attention.attention_matrix(tape, store, h_ctx)?;
        let h_dep = self
            .gcn_dep
            .forward(tape, store, h_ctx, Adjacency::Fixed(&prep.dep))?;
        let h_con = self
            .gcn_con
            .forward(tape, store, h_ctx, Adjacency::Stack(&prep.con.slices))?;
        let h_sem = self
            .gcn_sem
            .forward(tape, store, h_ctx, Adjacency::Learned(a_sem))?;
        let h_kge = self.knowledge.forward(tape, store, inst)?;

        let anchors = select_anchors(tape.value(a_sem), self.arch.preprocess.anchor_c)?;
        let graph = DualViewGraph::new(prep.con.finest().clone(), prep.dep.clone())?;
        let triplets = build_triplets(&graph, &anchors, self.arch.preprocess.margin);
        let triplet = triplet_loss(tape, h_con, h_dep, &triplets)?;

        let dep_pure = purify(tape, h_dep, h_sem)?;
        let con_pure = purify(tape, h_con, h_sem)?;
        let channels = ChannelInputs::new()
            .with(Channel::Dep, dep_pure)
            .with(Channel::Con, con_pure)
            .with(Channel::Sem, h_sem)
            .with(Channel::Kge, h_kge);

        let fusion = self.cascade.run(
            tape,
            store,
            &self.arch.fusion.channels,
            &channels,
            &inst.aspect_indices(),
        )?;
        let w = tape.param(store, self.classifier_w);
        let b = tape.param(store, self.classifier_b);
        let logits = tape.matmul(fusion.r, w)?;
        let logits = tape.add_row(logits, b)?;
        let probs = tape.softmax_rows(logits)?;

        Ok(ForwardOutput {
            a_sem,
            anchors,
            triplets,
            triplet,
            channels,
            fusion,
            probs,
        })
    }

    /// `L_c + beta · L_triplet`, both averaged over the batch.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&PreparedInstance],
        beta: f64,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(EmgfError::Empty { op: "batch_loss" });
        }
        let mut nll = Vec::with_capacity(batch.len());
        let mut trip = Vec::with_capacity(batch.len());
        let mut probs = Vec::with_capacity(batch.len());
        for prep in batch {
            let out = self.forward(tape, store, prep, dropout.as_deref_mut())?;
            let p = tape.pick(out.probs, 0, prep.gold())?;
            let lp = tape.ln_clamped(p, PROB_FLOOR);
            nll.push(tape.scale(lp, -1.0));
            trip.push(out.triplet);
            probs.push(out.probs);
        }
        let inv = 1.0 / batch.len() as f64;
        let lc = tape.add_all(&nll)?;
        let lc = tape.scale(lc, inv);
        let triplet = tape.add_all(&trip)?;
        let triplet = tape.scale(triplet, inv);
        let weighted = tape.scale(triplet, beta);
        let total = tape.add(lc, weighted)?;
        Ok(BatchLoss {
            total,
            lc,
            triplet,
            probs,
        })
    }

    /// Class probabilities without dropout.
    pub fn predict(&self, store: &ParamStore, prep: &PreparedInstance) -> Result<[f64; 3]> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, prep, None)?;
        let p = tape.value(out.probs);
        Ok([p.get(0, 0), p.get(0, 1), p.get(0, 2)])
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Emgf {
    pub net: Network,
    pub params: ParamStore,
}

impl Emgf {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::new(arch, &mut params, seed)?;
        Ok(Emgf { net, params })
    }

    pub fn predict(&self, prep: &PreparedInstance) -> Result<[f64; 3]> {
        self.net.predict(&self.params, prep)
    }
}

/// Index of the largest probability; ties go to the lower class index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Polarity;

    fn instance(kge: bool) -> AspectInstance {
        let tokens: Vec<String> = ["food", "great", "but", "service", "slow", "."]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let kge = kge.then(|| (0..6).map(|i| vec![0.05 + i as f64 * 0.1; 4]).collect());
        AspectInstance::new(
            tokens,
            (0, 1),
            Polarity::Positive,
            vec![2, 0, 2, 5, 2, 2],
            "(S (S (NP food) (ADJP great)) (CC but) (S (NP service) (ADJP slow)) (. .))".to_string(),
            kge,
        )
        .unwrap()
    }

    fn small() -> Architecture {
        let mut a = Architecture::default();
        a.model.dim = 8;
        a.fusion.blocks = 2;
        a
    }

    #[test]
    fn shapes_and_probabilities() {
        let model = Emgf::new(small(), 3).unwrap();
        let prep = model.net.prepare(instance(false)).unwrap();
        let mut tape = Tape::new();
        let out = model.net.forward(&mut tape, &model.params, &prep, None).unwrap();
        assert_eq!(tape.value(out.a_sem).shape(), [6, 6]);
        assert_eq!(out.fusion.block_outputs.len(), 2);
        assert_eq!(tape.value(out.fusion.r).shape(), [1, 8]);
        let p = tape.value(out.probs);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(tape.value(out.triplet).item() >= 0.0);
    }

    #[test]
    fn kge_width_checked_at_prepare() {
        let model = Emgf::new(small(), 3).unwrap();
        assert!(model.net.prepare(instance(true)).is_err());
        let mut arch = small();
        arch.model.kge_dim = Some(4);
        let model = Emgf::new(arch, 3).unwrap();
        assert!(model.net.prepare(instance(true)).is_ok());
        assert!(model.net.prepare(instance(false)).is_ok());
    }

    #[test]
    fn loss_components_add_up() {
        let model = Emgf::new(small(), 5).unwrap();
        let prep = model.net.prepare(instance(false)).unwrap();
        let mut tape = Tape::new();
        let l = model
            .net
            .batch_loss(&mut tape, &model.params, &[&prep, &prep], 0.12, None)
            .unwrap();
        let (total, lc, trip) = (
            tape.value(l.total).item(),
            tape.value(l.lc).item(),
            tape.value(l.triplet).item(),
        );
        assert!((total - (lc + 0.12 * trip)).abs() < 1e-12);
        let p = model.predict(&prep).unwrap();
        assert!((lc + p[0].ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut model = Emgf::new(small(), 5).unwrap();
        let (w, _) = model.net.classifier();
        model.params.get_mut(w).value = Tensor::zeros(8, 3);
        let prep = model.net.prepare(instance(false)).unwrap();
        let p = model.predict(&prep).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_architecture() {
        let mut a = small();
        a.model.heads = 3;
        assert!(Emgf::new(a, 0).is_err());
        let mut a = small();
        a.fusion.blocks = 0;
        assert!(Emgf::new(a, 0).is_err());
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
    }

    #[test]
    fn full_model_gradients() {
        use crate::tensor::{grad_check, GradCheckOptions};
        let mut arch = small();
        arch.model.kge_dim = Some(4);
        let model = Emgf::new(arch, 11).unwrap();
        let prep = model.net.prepare(instance(true)).unwrap();
        let report = grad_check(
            &model.params,
            |store, tape| Ok(model.net.batch_loss(tape, store, &[&prep], 0.12, None)?.total),
            GradCheckOptions::default(),
            |_| true,
        )
        .unwrap();
        for (group, worst) in report.by_group() {
            eprintln!("{group}: {:e} ({})", worst.max_rel_error, worst.name);
        }
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    }
}
