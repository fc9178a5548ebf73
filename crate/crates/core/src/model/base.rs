use rand_chacha::ChaCha8Rng;

use super::layers::{Bound, Gcn, Mlp};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::{extract_windows, DctBasis, DctCoeffs, MotionSequence};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Query `Q` (`1 × d`), keys `K` (`N × d`) and values `V` (`N × D`).
#[derive(Clone, Debug)]
pub struct AttentionState {
    pub query: Tensor,
    pub keys: Tensor,
    pub values: Tensor,
}

impl AttentionState {
    pub fn new(query: Tensor, keys: Tensor, values: Tensor) -> Result<Self> {
        let (qs, ks, vs) = (query.shape(), keys.shape(), values.shape());
        if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[0] != 1 || qs[1] != ks[1] || ks[0] != vs[0] {
            return Err(Error::dim(
                "attention state",
                format!("Q {qs:?}, K {ks:?}, V {vs:?}"),
            ));
        }
        Ok(AttentionState { query, keys, values })
    }

    /// Attention weights over the `N` windows and the aggregated value.
    pub fn evaluate(&self) -> Result<(Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let q = tape.constant(self.query.clone());
        let k = tape.constant(self.keys.clone());
        let v = tape.constant(self.values.clone());
        let (w, out) = attend_with_weights(&mut tape, q, k, v)?;
        Ok((tape.value(w).data().to_vec(), tape.value(out).clone()))
    }
}

/// `Σ_i softmax_i(Q·K_i/√d) V_i`.
pub fn attend(tape: &mut Tape, query: Var, keys: Var, values: Var) -> Result<Var> {
    Ok(attend_with_weights(tape, query, keys, values)?.1)
}

fn attend_with_weights(tape: &mut Tape, query: Var, keys: Var, values: Var) -> Result<(Var, Var)> {
    let d = tape.shape(query)[1] as f64;
    let kt = tape.transpose(keys)?;
    let scores = tape.matmul(query, kt)?;
    let scores = tape.scale(scores, 1.0 / d.sqrt())?;
    let weights = tape.softmax(scores, 1)?;
    let out = tape.matmul(weights, values)?;
    Ok((weights, out))
}

/// Constant inputs of one branch, derived from an observed history.
///
/// Positions are divided by `unit_mm`; DCT coefficients are laid out
/// node-major (`node * C + k`, node = `joint * 3 + axis`).
#[derive(Clone, Debug)]
pub struct BranchInputs {
    /// `1 × M·J·3`
    pub query: Tensor,
    /// `N × M·J·3`
    pub keys: Tensor,
    /// `N × J·3·C`
    pub values: Tensor,
    /// `J·3 × C`, DCT of the last `M` frames padded with `T` copies of the last frame.
    pub last_dct: Tensor,
    /// Last observed frame in millimetres.
    pub last_frame: Vec<f64>,
}

impl BranchInputs {
    pub fn prepare(history: &MotionSequence, cfg: &ModelConfig, joints: usize, basis: &DctBasis) -> Result<Self> {
        if history.joints() != joints {
            return Err(Error::dim(
                "branch inputs",
                format!("history has {} joints, model expects {joints}", history.joints()),
            ));
        }
        let bank = extract_windows(history, cfg.key_len, cfg.step_len)?;
        let scale = 1.0 / cfg.unit_mm;
        let n = bank.len();
        let nodes = joints * 3;
        let c = cfg.coeffs;

        let query_data: Vec<f64> = bank.query.data().iter().map(|v| v * scale).collect();
        let mut key_data = Vec::with_capacity(n * cfg.key_len * nodes);
        for k in &bank.keys {
            key_data.extend(k.data().iter().map(|v| v * scale));
        }
        let mut value_data = Vec::with_capacity(n * nodes * c);
        for v in &bank.values {
            value_data.extend(node_major(&DctCoeffs::encode(v, basis)?, scale));
        }
        let padded = history.tail(cfg.key_len)?.pad_with_last(cfg.step_len);
        let last = node_major(&DctCoeffs::encode(&padded, basis)?, scale);

        Ok(BranchInputs {
            query: Tensor::new([1, cfg.key_len * nodes], query_data)?,
            keys: Tensor::new([n, cfg.key_len * nodes], key_data)?,
            values: Tensor::new([n, nodes * c], value_data)?,
            last_dct: Tensor::new([nodes, c], last)?,
            last_frame: history.last_frame().to_vec(),
        })
    }

    pub fn windows(&self) -> usize {
        self.keys.shape()[0]
    }
}

fn node_major(c: &DctCoeffs, scale: f64) -> Vec<f64> {
    let nodes = c.joints * 3;
    let mut out = vec![0.0; nodes * c.coeffs];
    for k in 0..c.coeffs {
        for node in 0..nodes {
            out[node * c.coeffs + k] = c.data[k * nodes + node] * scale;
        }
    }
    out
}

/// Single-person predictor: MLP-encoded query and keys, softmax attention
/// over past windows, and a residual GCN in DCT space.
#[derive(Clone, Debug)]
pub struct BaseBranch {
    pub joints: usize,
    cfg: ModelConfig,
    basis: DctBasis,
    pub query_mlp: Mlp,
    pub key_mlp: Mlp,
    pub gcn: Gcn,
}

impl BaseBranch {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        joints: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let nodes = joints * 3;
        let input = cfg.key_len * nodes;
        let query_mlp = Mlp::init(store, &format!("{prefix}.query"), input, cfg.d_model, rng)?;
        let key_mlp = Mlp::init(store, &format!("{prefix}.key"), input, cfg.d_model, rng)?;
        let mut widths = vec![2 * cfg.coeffs];
        widths.extend(std::iter::repeat(cfg.gcn_hidden).take(cfg.gcn_layers - 1));
        widths.push(cfg.coeffs);
        let gcn = Gcn::init(store, &format!("{prefix}.gcn"), nodes, &widths, rng)?;
        Ok(BaseBranch {
            joints,
            cfg: cfg.clone(),
            basis: DctBasis::new(cfg.window_len(), cfg.coeffs)?,
            query_mlp,
            key_mlp,
            gcn,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn prepare(&self, history: &MotionSequence) -> Result<BranchInputs> {
        BranchInputs::prepare(history, &self.cfg, self.joints, &self.basis)
    }

    /// `Q` (`1 × d`) from the flattened query window.
    pub fn encode_query(&self, tape: &mut Tape, p: Bound, query: Var) -> Result<Var> {
        self.query_mlp.forward(tape, p, query)
    }

    /// `K` (`N × d`), one row per key window.
    pub fn encode_keys(&self, tape: &mut Tape, p: Bound, keys: Var) -> Result<Var> {
        self.key_mlp.forward(tape, p, keys)
    }

    /// Predicted DCT (`J·3 × C`): GCN over `[aggregated | last_dct]` plus a
    /// residual from `last_dct`.
    pub fn gcn_predict(&self, tape: &mut Tape, p: Bound, aggregated: Var, last_dct: Var) -> Result<Var> {
        let nodes = self.joints * 3;
        let agg = tape.reshape(aggregated, [nodes, self.cfg.coeffs])?;
        let input = tape.concat(&[agg, last_dct], 1)?;
        let delta = self.gcn.forward(tape, p, input)?;
        tape.add(delta, last_dct)
    }

    /// Last `T` frames of the decoded window, `T × J·3`, in millimetres.
    pub fn decode(&self, tape: &mut Tape, pred_dct: Var) -> Result<Var> {
        let basis = tape.constant(Tensor::new(
            [self.basis.coeffs(), self.basis.len()],
            self.basis.matrix().to_vec(),
        )?);
        let traj = tape.matmul(pred_dct, basis)?;
        let future = tape.slice(traj, 1, self.cfg.key_len, self.cfg.step_len)?;
        let frames = tape.transpose(future)?;
        tape.scale(frames, self.cfg.unit_mm)
    }

    /// Full single-person pass over prepared inputs; optional refined
    /// keys/values replace the encoded ones (used by the XIA model).
    pub fn forward(&self, tape: &mut Tape, p: Bound, inputs: &BranchInputs) -> Result<Var> {
        let q_in = tape.constant(inputs.query.clone());
        let k_in = tape.constant(inputs.keys.clone());
        let v = tape.constant(inputs.values.clone());
        let q = self.encode_query(tape, p, q_in)?;
        let k = self.encode_keys(tape, p, k_in)?;
        self.finish(tape, p, q, k, v, inputs)
    }

    /// attend → GCN → decode.
    pub(crate) fn finish(
        &self,
        tape: &mut Tape,
        p: Bound,
        q: Var,
        k: Var,
        v: Var,
        inputs: &BranchInputs,
    ) -> Result<Var> {
        let agg = attend(tape, q, k, v)?;
        let last = tape.constant(inputs.last_dct.clone());
        let pred = self.gcn_predict(tape, p, agg, last)?;
        self.decode(tape, pred)
    }

    /// Predicts the next `T` frames of `history` using parameters in `store`.
    pub fn forward_single(&self, store: &ParamStore, history: &MotionSequence) -> Result<MotionSequence> {
        let inputs = self.prepare(history)?;
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let out = self.forward(&mut tape, Bound(&vars), &inputs)?;
        MotionSequence::new(self.joints, history.fps(), tape.value(out).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};

    fn random_history(frames: usize, joints: usize, seed: u64) -> MotionSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * joints * 3).map(|_| rng.gen_range(-800.0..800.0)).collect();
        MotionSequence::new(joints, 25.0, data).unwrap()
    }

    fn branch(cfg: &ModelConfig, seed: u64) -> (ParamStore, BaseBranch) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = BaseBranch::new(&mut store, "b", cfg, cfg.joints, &mut rng).unwrap();
        (store, b)
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape).unwrap()).unwrap();
        }
    }

    #[test]
    fn uniform_keys_give_mean_value() {
        let q = Tensor::new([1, 2], vec![0.3, -1.0]).unwrap();
        let k = Tensor::new([3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let v = Tensor::new([3, 2], vec![1.0, 0.0, 2.0, 3.0, 6.0, 3.0]).unwrap();
        let (w, out) = AttentionState::new(q, k, v).unwrap().evaluate().unwrap();
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((out.data()[0] - 3.0).abs() < 1e-12);
        assert!((out.data()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_key_selects_its_value() {
        let q = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
        let k = Tensor::new([3, 2], vec![0.0, 1.0, 200.0, 0.0, 0.0, -1.0]).unwrap();
        let v = Tensor::new([3, 1], vec![-5.0, 7.0, 11.0]).unwrap();
        let (w, out) = AttentionState::new(q, k, v).unwrap().evaluate().unwrap();
        assert!((w[1] - 1.0).abs() < 1e-12);
        assert!((out.data()[0] - 7.0).abs() < 1e-10);
    }

    #[test]
    fn single_window_returns_its_value() {
        let q = Tensor::new([1, 2], vec![4.0, -9.0]).unwrap();
        let k = Tensor::new([1, 2], vec![0.5, 0.1]).unwrap();
        let v = Tensor::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (w, out) = AttentionState::new(q, k, v).unwrap().evaluate().unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn attention_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let q = Tensor::new([1, 4], r(4)).unwrap();
        let k = r(20);
        let v = r(15);
        let perm = [3usize, 0, 4, 1, 2];
        let kp: Vec<f64> = perm.iter().flat_map(|&i| k[i * 4..i * 4 + 4].to_vec()).collect();
        let vp: Vec<f64> = perm.iter().flat_map(|&i| v[i * 3..i * 3 + 3].to_vec()).collect();
        let a = AttentionState::new(q.clone(), Tensor::new([5, 4], k).unwrap(), Tensor::new([5, 3], v).unwrap())
            .unwrap()
            .evaluate()
            .unwrap();
        let b = AttentionState::new(q, Tensor::new([5, 4], kp).unwrap(), Tensor::new([5, 3], vp).unwrap())
            .unwrap()
            .evaluate()
            .unwrap();
        for (x, y) in a.1.data().iter().zip(b.1.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_frozen_pose() {
        let cfg = ModelConfig::tiny();
        let (mut store, b) = branch(&cfg, 1);
        zero_all(&mut store);
        let hist = random_history(12, cfg.joints, 2);
        let pred = b.forward_single(&store, &hist).unwrap();
        assert_eq!(pred.frames(), cfg.step_len);
        assert_eq!(pred.joints(), cfg.joints);
        for t in 0..pred.frames() {
            for (p, q) in pred.frame(t).iter().zip(hist.last_frame()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_window_zero_bias_query_is_zero() {
        let cfg = ModelConfig::tiny();
        let (store, b) = branch(&cfg, 3);
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([1, cfg.key_len * cfg.nodes()]).unwrap());
        let q = b.encode_query(&mut tape, Bound(&vars), x).unwrap();
        assert!(tape.value(q).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_keys_duplicate() {
        let cfg = ModelConfig::tiny();
        let (store, b) = branch(&cfg, 4);
        let hist = random_history(9, cfg.joints, 8);
        assert_eq!(b.forward_single(&store, &hist).unwrap(), b.forward_single(&store, &hist).unwrap());

        let row = random_history(cfg.key_len, cfg.joints, 9).data().to_vec();
        let mut dup = row.clone();
        dup.extend(&row);
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let keys = tape.constant(Tensor::new([2, row.len()], dup).unwrap());
        let k = b.encode_keys(&mut tape, Bound(&vars), keys).unwrap();
        let kd = tape.value(k).data();
        assert_eq!(&kd[..cfg.d_model], &kd[cfg.d_model..]);
    }

    #[test]
    fn short_history_is_rejected() {
        let cfg = ModelConfig::tiny();
        let (store, b) = branch(&cfg, 4);
        let hist = random_history(cfg.window_len() - 1, cfg.joints, 8);
        assert!(matches!(b.forward_single(&store, &hist), Err(Error::InsufficientHistory { .. })));
    }

    /// Central-difference check of one parameter of the branch against a
    /// scalar built from the forward pass.
    fn check_param(name: &str, objective: impl Fn(&BaseBranch, &mut Tape, Bound, &BranchInputs) -> Result<Var>) {
        let cfg = ModelConfig::tiny();
        let (store, b) = branch(&cfg, 21);
        let hist = random_history(10, cfg.joints, 22);
        let inputs = b.prepare(&hist).unwrap();
        let id = store.id_of(name).unwrap();
        let err = grad_check(
            |tape, x| {
                let mut vars = store.bind(tape);
                vars[id.index()] = x;
                objective(&b, tape, Bound(&vars), &inputs)
            },
            store.get(id),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{name}: {err}");
    }

    #[test]
    fn query_norm_gradient() {
        for name in ["b.query.l1.w", "b.query.l1.b", "b.query.l2.w"] {
            check_param(name, |b, tape, p, inputs| {
                let x = tape.constant(inputs.query.clone());
                let q = b.encode_query(tape, p, x)?;
                let sq = tape.mul(q, q)?;
                tape.sum(sq)
            });
        }
    }

    #[test]
    fn key_norm_gradient() {
        check_param("b.key.l1.w", |b, tape, p, inputs| {
            let x = tape.constant(inputs.keys.clone());
            let k = b.encode_keys(tape, p, x)?;
            let sq = tape.mul(k, k)?;
            tape.sum(sq)
        });
    }

    #[test]
    fn adjacency_gradient() {
        for name in ["b.gcn.0.adj", "b.gcn.1.adj", "b.gcn.1.w"] {
            check_param(name, |b, tape, p, inputs| {
                let out = b.forward(tape, p, inputs)?;
                let scaled = tape.scale(out, 1e-3)?;
                let sq = tape.mul(scaled, scaled)?;
                let s = tape.sum(sq)?;
                tape.sqrt(s)
            });
        }
    }
}
