use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::base::{AttentionState, BaseBranch, BranchInputs};
use super::layers::Bound;
use super::xia::{AttentionMode, XiaModule};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::tensor::{load_checkpoint, save_checkpoint, Checkpoint, ParamStore, Tape, Var};

/// Two-person model variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Two disjoint single-person branches.
    BaseIndependent,
    /// One branch over both skeletons stacked into `2J` joints.
    Concat2p,
    Xia,
    XiaNoResidual,
    XiaSelfAttention,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::BaseIndependent,
        Variant::Concat2p,
        Variant::Xia,
        Variant::XiaNoResidual,
        Variant::XiaSelfAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BaseIndependent => "base",
            Variant::Concat2p => "2pcat",
            Variant::Xia => "xia",
            Variant::XiaNoResidual => "xia-nores",
            Variant::XiaSelfAttention => "xia-self",
        }
    }

    pub fn uses_xia(self) -> bool {
        matches!(self, Variant::Xia | Variant::XiaNoResidual | Variant::XiaSelfAttention)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base" | "base-independent" => Variant::BaseIndependent,
            "2pcat" | "concat-2p" => Variant::Concat2p,
            "xia" => Variant::Xia,
            "xia-nores" | "xia-no-residual" => Variant::XiaNoResidual,
            "xia-self" | "xia-self-attention" => Variant::XiaSelfAttention,
            other => {
                return Err(Error::contract(format!(
                    "unknown variant '{other}' (expected base, 2pcat, xia, xia-nores or xia-self)"
                )))
            }
        })
    }
}

/// Key and value refiners of one person.
#[derive(Clone, Debug)]
struct Refiners {
    key: XiaModule,
    value: XiaModule,
}

#[derive(Clone, Debug)]
enum Arch {
    Pair {
        branches: [BaseBranch; 2],
        refiners: Option<[Refiners; 2]>,
    },
    Stacked(BaseBranch),
}

/// Prepared constant inputs for one forward pass.
#[derive(Clone, Debug)]
pub enum PairInputs {
    Pair([BranchInputs; 2]),
    Stacked(BranchInputs),
}

/// Leader/follower predictor. Person 0 is the leader, person 1 the follower.
#[derive(Clone, Debug)]
pub struct CollabModel {
    variant: Variant,
    cfg: ModelConfig,
    params: ParamStore,
    arch: Arch,
}

const ROLES: [&str; 2] = ["leader", "follower"];

/// Builds a freshly initialized model. Branch parameters are drawn first, so
/// every pair variant built from the same seed shares its branch weights.
pub fn make_variant(variant: Variant, cfg: &ModelConfig, seed: u64) -> Result<CollabModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let arch = if variant == Variant::Concat2p {
        Arch::Stacked(BaseBranch::new(&mut params, "pair", cfg, 2 * cfg.joints, &mut rng)?)
    } else {
        let leader = BaseBranch::new(&mut params, ROLES[0], cfg, cfg.joints, &mut rng)?;
        let follower = BaseBranch::new(&mut params, ROLES[1], cfg, cfg.joints, &mut rng)?;
        let refiners = if variant.uses_xia() {
            let residual = variant != Variant::XiaNoResidual;
            let mode = if variant == Variant::XiaSelfAttention {
                AttentionMode::SelfAttention
            } else {
                AttentionMode::Cross
            };
            let mut make = |role: &str| -> Result<Refiners> {
                Ok(Refiners {
                    key: XiaModule::init(
                        &mut params,
                        &format!("{role}.xia_key"),
                        cfg.d_model,
                        cfg.heads_key,
                        residual,
                        mode,
                        &mut rng,
                    )?,
                    value: XiaModule::init(
                        &mut params,
                        &format!("{role}.xia_value"),
                        cfg.coeffs,
                        cfg.heads_value,
                        residual,
                        mode,
                        &mut rng,
                    )?,
                })
            };
            Some([make(ROLES[0])?, make(ROLES[1])?])
        } else {
            None
        };
        Arch::Pair {
            branches: [leader, follower],
            refiners,
        }
    };
    Ok(CollabModel {
        variant,
        cfg: cfg.clone(),
        params,
        arch,
    })
}

impl CollabModel {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Single-person branches, leader first. Empty for the stacked variant.
    pub fn branches(&self) -> &[BaseBranch] {
        match &self.arch {
            Arch::Pair { branches, .. } => branches,
            Arch::Stacked(_) => &[],
        }
    }

    pub fn prepare(&self, leader: &MotionSequence, follower: &MotionSequence) -> Result<PairInputs> {
        if leader.frames() != follower.frames() {
            return Err(Error::contract(format!(
                "history lengths differ: leader {} frames, follower {}",
                leader.frames(),
                follower.frames()
            )));
        }
        for (role, seq) in ROLES.iter().zip([leader, follower]) {
            if seq.joints() != self.cfg.joints {
                return Err(Error::dim(
                    "collab forward",
                    format!("{role} has {} joints, model expects {}", seq.joints(), self.cfg.joints),
                ));
            }
        }
        match &self.arch {
            Arch::Pair { branches, .. } => Ok(PairInputs::Pair([
                branches[0].prepare(leader)?,
                branches[1].prepare(follower)?,
            ])),
            Arch::Stacked(branch) => branch.prepare(&stack(leader, follower)?).map(PairInputs::Stacked),
        }
    }

    /// Forward pass on `tape` with parameters bound as `vars`. Returns the
    /// leader and follower predictions, each `T × J·3` in millimetres.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], inputs: &PairInputs) -> Result<[Var; 2]> {
        let p = Bound(vars);
        match (&self.arch, inputs) {
            (Arch::Stacked(branch), PairInputs::Stacked(inp)) => {
                let out = branch.forward(tape, p, inp)?;
                let width = self.cfg.nodes();
                Ok([tape.slice(out, 1, 0, width)?, tape.slice(out, 1, width, width)?])
            }
            (Arch::Pair { branches, refiners }, PairInputs::Pair(inp)) => {
                let Some(refiners) = refiners else {
                    return Ok([branches[0].forward(tape, p, &inp[0])?, branches[1].forward(tape, p, &inp[1])?]);
                };
                let mut q = [None; 2];
                let mut k = Vec::with_capacity(2);
                let mut v = Vec::with_capacity(2);
                for (i, branch) in branches.iter().enumerate() {
                    let qi = tape.constant(inp[i].query.clone());
                    let ki = tape.constant(inp[i].keys.clone());
                    q[i] = Some(branch.encode_query(tape, p, qi)?);
                    k.push(branch.encode_keys(tape, p, ki)?);
                    v.push(tape.constant(inp[i].values.clone()));
                }
                let (kr, vr) = self.refine(tape, p, refiners, [k[0], k[1]], [v[0], v[1]])?;
                let mut out = Vec::with_capacity(2);
                for (i, branch) in branches.iter().enumerate() {
                    out.push(branch.finish(tape, p, q[i].expect("encoded"), kr[i], vr[i], &inp[i])?);
                }
                Ok([out[0], out[1]])
            }
            _ => Err(Error::contract("inputs were prepared for a different architecture")),
        }
    }

    fn refine(
        &self,
        tape: &mut Tape,
        p: Bound,
        refiners: &[Refiners; 2],
        keys: [Var; 2],
        values: [Var; 2],
    ) -> Result<([Var; 2], [Var; 2])> {
        let n = tape.shape(keys[0])[0];
        if tape.shape(keys[1])[0] != n || tape.shape(values[0])[0] != n || tape.shape(values[1])[0] != n {
            return Err(Error::contract("leader and follower banks have different window counts"));
        }
        let (nodes, c) = (self.cfg.nodes(), self.cfg.coeffs);
        let mut tokens = [values[0]; 2];
        for (t, &v) in tokens.iter_mut().zip(&values) {
            *t = tape.reshape(v, [n * nodes, c])?;
        }
        let mut kr = keys;
        let mut vr = values;
        for i in 0..2 {
            let j = 1 - i;
            kr[i] = refiners[i].key.forward(tape, p, keys[i], Some(keys[j]), 1)?;
            let refined = refiners[i].value.forward(tape, p, tokens[i], Some(tokens[j]), n)?;
            vr[i] = tape.reshape(refined, [n, nodes * c])?;
        }
        Ok((kr, vr))
    }

    /// Refines encoded key/value banks of both persons with the partner's
    /// rows. Only defined for the XIA variants.
    pub fn refine_bank(
        &self,
        leader: &AttentionState,
        follower: &AttentionState,
    ) -> Result<(AttentionState, AttentionState)> {
        let Arch::Pair {
            refiners: Some(refiners),
            ..
        } = &self.arch
        else {
            return Err(Error::contract(format!("variant {} has no refiners", self.variant)));
        };
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let k = [tape.constant(leader.keys.clone()), tape.constant(follower.keys.clone())];
        let v = [tape.constant(leader.values.clone()), tape.constant(follower.values.clone())];
        let (kr, vr) = self.refine(&mut tape, Bound(&vars), refiners, k, v)?;
        let out = |i: usize, s: &AttentionState| {
            AttentionState::new(s.query.clone(), tape.value(kr[i]).clone(), tape.value(vr[i]).clone())
        };
        Ok((out(0, leader)?, out(1, follower)?))
    }

    /// Predicts the next `T` frames of both persons.
    pub fn predict(&self, leader: &MotionSequence, follower: &MotionSequence) -> Result<(MotionSequence, MotionSequence)> {
        let inputs = self.prepare(leader, follower)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let [a, b] = self.forward(&mut tape, &vars, &inputs)?;
        let seq = |v: Var| MotionSequence::new(self.cfg.joints, leader.fps(), tape.value(v).data().to_vec());
        Ok((seq(a)?, seq(b)?))
    }

    pub fn metadata(&self) -> BTreeMap<String, String> {
        let c = &self.cfg;
        let mut meta = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            meta.insert(k.to_string(), v);
        };
        put("variant", self.variant.to_string());
        put("joints", c.joints.to_string());
        put("key_len", c.key_len.to_string());
        put("step_len", c.step_len.to_string());
        put("coeffs", c.coeffs.to_string());
        put("d_model", c.d_model.to_string());
        put("gcn_layers", c.gcn_layers.to_string());
        put("gcn_hidden", c.gcn_hidden.to_string());
        put("heads_key", c.heads_key.to_string());
        put("heads_value", c.heads_value.to_string());
        put("unit_mm", c.unit_mm.to_string());
        meta
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = self.metadata();
        meta.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        save_checkpoint(
            path,
            &Checkpoint {
                meta,
                params: self.params.clone(),
            },
        )
    }

    /// Loads a checkpoint, rebuilding the architecture from its metadata.
    pub fn load(path: &Path) -> Result<(CollabModel, BTreeMap<String, String>)> {
        let ckpt = load_checkpoint(path)?;
        let meta = &ckpt.meta;
        let field = |k: &str| -> Result<&str> {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Compatibility(format!("{}: missing '{k}' in checkpoint", path.display())))
        };
        let num = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| Error::Compatibility(format!("{}: bad value for '{k}'", path.display())))
        };
        let variant: Variant = field("variant")?
            .parse()
            .map_err(|e: Error| Error::Compatibility(e.to_string()))?;
        let cfg = ModelConfig {
            joints: num("joints")?,
            key_len: num("key_len")?,
            step_len: num("step_len")?,
            coeffs: num("coeffs")?,
            d_model: num("d_model")?,
            gcn_layers: num("gcn_layers")?,
            gcn_hidden: num("gcn_hidden")?,
            heads_key: num("heads_key")?,
            heads_value: num("heads_value")?,
            unit_mm: field("unit_mm")?
                .parse()
                .map_err(|_| Error::Compatibility(format!("{}: bad value for 'unit_mm'", path.display())))?,
        };
        cfg.validate().map_err(|e| Error::Compatibility(e.to_string()))?;
        let mut model = make_variant(variant, &cfg, 0)?;
        if model.params.len() != ckpt.params.len() {
            return Err(Error::Compatibility(format!(
                "{}: {} tensors, variant {variant} needs {}",
                path.display(),
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let value = ckpt.params.by_name(&name).ok_or_else(|| {
                Error::Compatibility(format!("{}: missing parameter '{name}'", path.display()))
            })?;
            if value.shape() != model.params.get(id).shape() {
                return Err(Error::Compatibility(format!(
                    "{}: parameter '{name}' has shape {:?}, expected {:?}",
                    path.display(),
                    value.shape(),
                    model.params.get(id).shape()
                )));
            }
            model.params.set(id, value.clone())?;
        }
        Ok((model, ckpt.meta))
    }
}

/// Frame-wise concatenation of two skeletons into one of `2J` joints.
pub fn stack(a: &MotionSequence, b: &MotionSequence) -> Result<MotionSequence> {
    if a.frames() != b.frames() {
        return Err(Error::contract("stacked sequences need equal lengths"));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    for t in 0..a.frames() {
        data.extend_from_slice(a.frame(t));
        data.extend_from_slice(b.frame(t));
    }
    MotionSequence::new(a.joints() + b.joints(), a.fps(), data)
}
