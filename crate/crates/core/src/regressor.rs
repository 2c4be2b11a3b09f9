//! Trajectory-to-pose regressor.
//!
//! A bidirectional LSTM encodes the normalized trajectory into `u`, a ReLU
//! MLP maps it to a joint feature `v`, and two MLP heads predict the camera
//! height and an unnormalized orientation quaternion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, Quaternion};
use crate::neuralnet::{
    bilstm_backward, bilstm_encode, init_params, relu, relu_backward, BiLstmCache, LinearLayer,
    LstmCell, ParameterStore, Tensor,
};
use crate::simulator::Trajectory2D;

/// Identifier of the input scaling, recorded in checkpoints.
pub const NORMALIZATION_ID: &str = "image-unit-square-v1";

const INPUT_DIM: usize = 2;
const MIN_QUAT_NORM: f64 = 1e-9;

/// Layer widths. The joint extractor applies ReLU after every layer; the
/// heads apply it after every layer except their 1- or 4-wide output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub lstm_hidden: usize,
    pub joint_widths: Vec<usize>,
    pub location_widths: Vec<usize>,
    pub orientation_widths: Vec<usize>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 64,
            joint_widths: vec![256, 1024, 512],
            location_widths: vec![256, 128],
            orientation_widths: vec![256, 128],
        }
    }
}

impl RegressorConfig {
    fn validate(&self) -> Result<()> {
        let widths = self
            .joint_widths
            .iter()
            .chain(&self.location_widths)
            .chain(&self.orientation_widths);
        if self.lstm_hidden == 0 || self.joint_widths.is_empty() || widths.clone().any(|w| *w == 0)
        {
            return Err(Error::Config(format!("invalid regressor widths {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePrediction {
    pub height_m: f64,
    pub quat_raw: [f64; 4],
    pub quat_unit: Quaternion,
}

impl PosePrediction {
    pub fn new(height_m: f64, quat_raw: [f64; 4]) -> Result<Self> {
        let raw = Quaternion::from_array(quat_raw);
        let norm = raw.norm();
        if !(norm >= MIN_QUAT_NORM) || !height_m.is_finite() {
            return Err(Error::DegenerateQuaternion { norm });
        }
        Ok(Self {
            height_m,
            quat_raw,
            quat_unit: raw.scale(1.0 / norm),
        })
    }
}

/// `total = location + alpha * orientation`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub location: f64,
    pub orientation: f64,
    pub alpha: f64,
}

/// Maps pixels to `[-1, 1)` per axis.
pub fn normalize_input(traj: &Trajectory2D, k: &CameraIntrinsics) -> Result<Tensor> {
    let (w, h) = (k.width_f(), k.height_f());
    let mut data = Vec::with_capacity(traj.len() * INPUT_DIM);
    for p in &traj.points {
        if !k.contains(p[0], p[1]) {
            return Err(Error::InputDomain(format!(
                "pixel ({}, {}) outside the {}x{} image",
                p[0], p[1], k.width, k.height
            )));
        }
        data.push(2.0 * p[0] / w - 1.0);
        data.push(2.0 * p[1] / h - 1.0);
    }
    Tensor::from_vec(&[traj.len(), INPUT_DIM], data)
}

pub fn denormalize_point(n: [f64; 2], k: &CameraIntrinsics) -> [f64; 2] {
    [
        (n[0] + 1.0) * 0.5 * k.width_f(),
        (n[1] + 1.0) * 0.5 * k.height_f(),
    ]
}

/// Stacks equal-length `[N x 2]` sequences into a time-major `[N x B x 2]` batch.
pub fn stack_sequences(seqs: &[&Tensor]) -> Result<Tensor> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (n, d) = first.dims2()?;
    let b = seqs.len();
    let mut data = vec![0.0; n * b * d];
    for (j, s) in seqs.iter().enumerate() {
        if s.shape() != [n, d] {
            return Err(Error::ShapeMismatch {
                op: "stack_sequences",
                expected: vec![n, d],
                got: s.shape().to_vec(),
            });
        }
        for t in 0..n {
            data[(t * b + j) * d..(t * b + j + 1) * d]
                .copy_from_slice(&s.data()[t * d..(t + 1) * d]);
        }
    }
    Tensor::from_vec(&[n, b, d], data)
}

/// Loss of one prediction and its gradient with respect to `(t, q_raw)`.
///
/// The label quaternion is flipped into the hemisphere of the normalized
/// prediction before the distance is taken.
pub fn loss_and_grad(
    height_m: f64,
    quat_raw: [f64; 4],
    label: &CameraPose,
    alpha: f64,
) -> Result<(LossBreakdown, f64, [f64; 4])> {
    let raw = Quaternion::from_array(quat_raw);
    let norm = raw.norm();
    if !(norm >= MIN_QUAT_NORM) {
        return Err(Error::DegenerateQuaternion { norm });
    }
    let n = raw.scale(1.0 / norm).to_array();
    let mut target = label.orientation.to_array();
    if target.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        target = target.map(|v| -v);
    }
    let diff: [f64; 4] = std::array::from_fn(|i| target[i] - n[i]);
    let orientation = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let location = (label.height_m - height_m).abs();

    let dt = if height_m > label.height_m {
        1.0
    } else if height_m < label.height_m {
        -1.0
    } else {
        0.0
    };
    // d|target - n| / dn = -diff / |diff|; dn/dq = (I - n n^T) / |q|.
    let mut dq = [0.0; 4];
    if orientation > 0.0 {
        let dn: [f64; 4] = std::array::from_fn(|i| -alpha * diff[i] / orientation);
        let proj: f64 = dn.iter().zip(&n).map(|(a, b)| a * b).sum();
        for i in 0..4 {
            dq[i] = (dn[i] - proj * n[i]) / norm;
        }
    }
    Ok((
        LossBreakdown {
            total: location + alpha * orientation,
            location,
            orientation,
            alpha,
        },
        dt,
        dq,
    ))
}

pub fn loss(pred: &PosePrediction, label: &CameraPose, alpha: f64) -> Result<LossBreakdown> {
    Ok(loss_and_grad(pred.height_m, pred.quat_raw, label, alpha)?.0)
}

struct Mlp<'a> {
    layers: &'a [LinearLayer],
    /// ReLU after the final layer as well.
    relu_last: bool,
}

impl Mlp<'_> {
    fn has_relu(&self, i: usize) -> bool {
        self.relu_last || i + 1 < self.layers.len()
    }

    /// Returns the input followed by every layer's (activated) output.
    fn forward(&self, store: &ParameterStore, x: Tensor) -> Result<Vec<Tensor>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(store, acts.last().expect("non-empty"))?;
            acts.push(if self.has_relu(i) { relu(&y) } else { y });
        }
        Ok(acts)
    }

    fn backward(&self, store: &mut ParameterStore, acts: &[Tensor], dy: Tensor) -> Result<Tensor> {
        let mut grad = dy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.has_relu(i) {
                grad = relu_backward(&acts[i + 1], &grad);
            }
            grad = layer.backward(store, &acts[i], &grad)?;
        }
        Ok(grad)
    }
}

struct ForwardCache {
    bilstm: BiLstmCache,
    joint: Vec<Tensor>,
    location: Vec<Tensor>,
    orientation: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    config: RegressorConfig,
    store: ParameterStore,
    fe_fwd: LstmCell,
    fe_bwd: LstmCell,
    joint: Vec<LinearLayer>,
    location: Vec<LinearLayer>,
    orientation: Vec<LinearLayer>,
}

fn build_mlp(
    store: &mut ParameterStore,
    prefix: &str,
    input: usize,
    widths: &[usize],
) -> Result<Vec<LinearLayer>> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut d = input;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(LinearLayer::new(store, &format!("{prefix}.{i}"), d, w)?);
        d = w;
    }
    Ok(layers)
}

impl RegressorModel {
    /// Allocates the parameters (all zero); call [`RegressorModel::init`] next.
    pub fn new(config: RegressorConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let h = config.lstm_hidden;
        let fe_fwd = LstmCell::new(&mut store, "fe.fwd", INPUT_DIM, h)?;
        let fe_bwd = LstmCell::new(&mut store, "fe.bwd", INPUT_DIM, h)?;
        let joint = build_mlp(&mut store, "je", 2 * h, &config.joint_widths)?;
        let v_dim = *config.joint_widths.last().expect("validated");
        let mut lw = config.location_widths.clone();
        lw.push(1);
        let mut ow = config.orientation_widths.clone();
        ow.push(4);
        let location = build_mlp(&mut store, "lb", v_dim, &lw)?;
        let orientation = build_mlp(&mut store, "ob", v_dim, &ow)?;
        Ok(Self {
            config,
            store,
            fe_fwd,
            fe_bwd,
            joint,
            location,
            orientation,
        })
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        init_params(&mut self.store, rng);
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn mlps(&self) -> (Mlp<'_>, Mlp<'_>, Mlp<'_>) {
        (
            Mlp {
                layers: &self.joint,
                relu_last: true,
            },
            Mlp {
                layers: &self.location,
                relu_last: false,
            },
            Mlp {
                layers: &self.orientation,
                relu_last: false,
            },
        )
    }

    fn forward_cached(&self, inputs: &Tensor) -> Result<(Tensor, Tensor, ForwardCache)> {
        let (u, bilstm) = bilstm_encode(&self.fe_fwd, &self.fe_bwd, &self.store, inputs)?;
        let (je, lb, ob) = self.mlps();
        let joint = je.forward(&self.store, u)?;
        let v = joint.last().expect("non-empty").clone();
        let location = lb.forward(&self.store, v.clone())?;
        let orientation = ob.forward(&self.store, v)?;
        let t = location.last().expect("non-empty").clone();
        let q = orientation.last().expect("non-empty").clone();
        Ok((
            t,
            q,
            ForwardCache {
                bilstm,
                joint,
                location,
                orientation,
            },
        ))
    }

    /// Batched forward pass over a time-major `[N x B x 2]` input.
    /// Returns heights `[B x 1]` and raw quaternions `[B x 4]`.
    pub fn forward_batch(&self, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
        let (t, q, _) = self.forward_cached(inputs)?;
        Ok((t, q))
    }

    pub fn forward(&self, traj: &Trajectory2D, k: &CameraIntrinsics) -> Result<PosePrediction> {
        let x = normalize_input(traj, k)?;
        let (t, q) = self.forward_batch(&stack_sequences(&[&x])?)?;
        let qd = q.data();
        PosePrediction::new(t.data()[0], [qd[0], qd[1], qd[2], qd[3]])
    }

    /// Predicts every trajectory, batching equal lengths together.
    /// Results are returned in input order; per-trajectory failures are kept.
    pub fn predict_many(
        &self,
        trajs: &[Trajectory2D],
        k: &CameraIntrinsics,
    ) -> Vec<Result<PosePrediction>> {
        let mut out: Vec<Option<Result<PosePrediction>>> = (0..trajs.len()).map(|_| None).collect();
        let mut by_len: std::collections::BTreeMap<usize, Vec<(usize, Tensor)>> =
            Default::default();
        for (i, t) in trajs.iter().enumerate() {
            match normalize_input(t, k) {
                Ok(x) => by_len.entry(t.len()).or_default().push((i, x)),
                Err(e) => out[i] = Some(Err(e)),
            }
        }
        for group in by_len.values() {
            let seqs: Vec<&Tensor> = group.iter().map(|(_, x)| x).collect();
            let result = stack_sequences(&seqs).and_then(|x| self.forward_batch(&x));
            match result {
                Ok((t, q)) => {
                    for (j, (i, _)) in group.iter().enumerate() {
                        let qd = &q.data()[4 * j..4 * j + 4];
                        out[*i] = Some(PosePrediction::new(
                            t.data()[j],
                            [qd[0], qd[1], qd[2], qd[3]],
                        ));
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    for (i, _) in group {
                        out[*i] = Some(Err(Error::NumericFailure(msg.clone())));
                    }
                }
            }
        }
        out.into_iter()
            .map(|r| r.expect("every index filled"))
            .collect()
    }

    /// Gradients of the mean loss over a length-homogeneous batch of
    /// normalized inputs. Overwrites the gradient store.
    pub fn backward_normalized(
        &mut self,
        inputs: &[&Tensor],
        labels: &[&CameraPose],
        alpha: f64,
    ) -> Result<LossBreakdown> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "batch needs matching non-empty inputs and labels ({} vs {})",
                inputs.len(),
                labels.len()
            )));
        }
        let x = stack_sequences(inputs)?;
        let (t, q, cache) = self.forward_cached(&x)?;
        let batch = inputs.len();
        let scale = 1.0 / batch as f64;

        let mut dt = Tensor::zeros(&[batch, 1]);
        let mut dq = Tensor::zeros(&[batch, 4]);
        let mut mean = LossBreakdown {
            alpha,
            ..LossBreakdown::default()
        };
        for (j, label) in labels.iter().enumerate() {
            let qd = &q.data()[4 * j..4 * j + 4];
            let (l, gt, gq) =
                loss_and_grad(t.data()[j], [qd[0], qd[1], qd[2], qd[3]], label, alpha)?;
            mean.total += l.total * scale;
            mean.location += l.location * scale;
            mean.orientation += l.orientation * scale;
            dt.data_mut()[j] = gt * scale;
            for i in 0..4 {
                dq.data_mut()[4 * j + i] = gq[i] * scale;
            }
        }

        self.store.zero_grads();
        let (fe_fwd, fe_bwd) = (self.fe_fwd, self.fe_bwd);
        let joint = self.joint.clone();
        let location = self.location.clone();
        let orientation = self.orientation.clone();
        let store = &mut self.store;
        let dv_loc = Mlp {
            layers: &location,
            relu_last: false,
        }
        .backward(store, &cache.location, dt)?;
        let mut dv = Mlp {
            layers: &orientation,
            relu_last: false,
        }
        .backward(store, &cache.orientation, dq)?;
        for (a, b) in dv.data_mut().iter_mut().zip(dv_loc.data()) {
            *a += b;
        }
        let du = Mlp {
            layers: &joint,
            relu_last: true,
        }
        .backward(store, &cache.joint, dv)?;
        bilstm_backward(&fe_fwd, &fe_bwd, store, &cache.bilstm, &du)?;
        for (name, g) in store.names().iter().zip(store.grads()) {
            g.ensure_finite(&format!("gradient of {name}"))?;
        }
        Ok(mean)
    }

    pub fn backward(
        &mut self,
        batch: &[(&Trajectory2D, &CameraPose)],
        k: &CameraIntrinsics,
        alpha: f64,
    ) -> Result<LossBreakdown> {
        let xs = batch
            .iter()
            .map(|(t, _)| normalize_input(t, k))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&Tensor> = xs.iter().collect();
        let labels: Vec<&CameraPose> = batch.iter().map(|(_, p)| *p).collect();
        self.backward_normalized(&inputs, &labels, alpha)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use crate::neuralnet::testutil::rel_err;
    use crate::simulator::{generate_trajectory, stream_rng, MotionConfig};

    pub(crate) fn tiny_config() -> RegressorConfig {
        RegressorConfig {
            lstm_hidden: 4,
            joint_widths: vec![8, 16, 8],
            location_widths: vec![8, 4],
            orientation_widths: vec![8, 4],
        }
    }

    fn k1000() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    fn label(h: f64, pitch: f64, roll: f64) -> CameraPose {
        CameraPose::from_euler(h, EulerAngles::from_degrees(0.0, pitch, roll)).unwrap()
    }

    fn random_traj(n: usize, rng: &mut impl Rng) -> Trajectory2D {
        Trajectory2D::new(
            (0..n)
                .map(|_| [rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0)])
                .collect(),
        )
    }

    #[test]
    fn normalization_examples() {
        let k = k1000();
        let t = Trajectory2D::new(vec![[960.0, 540.0], [0.0, 0.0], [1919.5, 1079.5]]);
        let x = normalize_input(&t, &k).unwrap();
        assert_eq!(&x.data()[..4], &[0.0, 0.0, -1.0, -1.0]);
        assert!(x.data().iter().all(|v| (-1.0..1.0).contains(v)));
        for (i, p) in t.points.iter().enumerate() {
            let back = denormalize_point([x.data()[2 * i], x.data()[2 * i + 1]], &k);
            assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        }
        let bad = Trajectory2D::new(vec![[1920.0, 10.0]]);
        assert!(matches!(
            normalize_input(&bad, &k),
            Err(Error::InputDomain(_))
        ));
    }

    #[test]
    fn paper_sized_model_layout() {
        let m = RegressorModel::new(RegressorConfig::default()).unwrap();
        let s = m.store();
        let shape = |n: &str| s.param(s.id(n).unwrap()).shape().to_vec();
        assert_eq!(shape("fe.fwd.w_ih"), vec![256, 2]);
        assert_eq!(shape("fe.bwd.w_hh"), vec![256, 64]);
        assert_eq!(shape("je.0.weight"), vec![256, 128]);
        assert_eq!(shape("je.1.weight"), vec![1024, 256]);
        assert_eq!(shape("je.2.weight"), vec![512, 1024]);
        assert_eq!(shape("lb.0.weight"), vec![256, 512]);
        assert_eq!(shape("lb.1.weight"), vec![128, 256]);
        assert_eq!(shape("lb.2.weight"), vec![1, 128]);
        assert_eq!(shape("ob.2.weight"), vec![4, 128]);
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = stream_rng(1, 0, 0, 0);
        let mut m = RegressorModel::new(RegressorConfig::default()).unwrap();
        m.init(&mut rng);
        let t = random_traj(15, &mut rng);
        let a = m.forward(&t, &k1000()).unwrap();
        let b = m.forward(&t, &k1000()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.quat_raw.len(), 4);
        assert!((a.quat_unit.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_model_smoke_on_grid_trajectories() {
        let mut rng = stream_rng(2, 0, 0, 0);
        let mut m = RegressorModel::new(RegressorConfig::default()).unwrap();
        m.init(&mut rng);
        let k = k1000();
        let trajs: Vec<Trajectory2D> = (0..100)
            .map(|i| {
                let pose = label(
                    2.0 + (i % 16) as f64 * 0.4,
                    -45.0 + (i % 15) as f64 * 2.0,
                    -15.0 + (i % 16) as f64 * 2.0,
                );
                generate_trajectory(&pose, 1.4, &k, &MotionConfig::default(), &mut rng).unwrap()
            })
            .collect();
        let preds = m.predict_many(&trajs, &k);
        for (p, t) in preds.iter().zip(&trajs) {
            let p = p.as_ref().unwrap();
            assert!(p.height_m.is_finite() && p.quat_raw.iter().all(|v| v.is_finite()));
            // Batched and single-trajectory inference agree.
            let single = m.forward(t, &k).unwrap();
            assert!((single.height_m - p.height_m).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let l = label(5.0, -30.0, 2.0);
        let exact = PosePrediction::new(5.0, l.orientation.to_array()).unwrap();
        assert_eq!(loss(&exact, &l, 1.0).unwrap().total, 0.0);

        let raw = [0.9, -0.2, 0.1, 0.05];
        let p1 = PosePrediction::new(4.0, raw).unwrap();
        let p10 = PosePrediction::new(4.0, raw.map(|v| v * 10.0)).unwrap();
        let (a, b) = (loss(&p1, &l, 1.0).unwrap(), loss(&p10, &l, 1.0).unwrap());
        assert!((a.orientation - b.orientation).abs() < 1e-15);
        assert!((a.location - 1.0).abs() < 1e-15);
        let c = loss(&p1, &l, 7.0).unwrap();
        assert!((c.total - (c.location + 7.0 * c.orientation)).abs() < 1e-15);

        // The negated label is the same rotation.
        let neg = PosePrediction::new(5.0, (-l.orientation).to_array()).unwrap();
        assert!(loss(&neg, &l, 1.0).unwrap().total < 1e-15);

        assert!(matches!(
            PosePrediction::new(1.0, [0.0; 4]),
            Err(Error::DegenerateQuaternion { .. })
        ));
    }

    /// Central differences of the batch-mean loss with respect to every
    /// parameter of a shrunken model.
    pub(crate) fn whole_model_gradient_error(seed: u64) -> f64 {
        let mut rng = stream_rng(seed, 0, 0, 0);
        let k = k1000();
        let mut m = RegressorModel::new(tiny_config()).unwrap();
        m.init(&mut rng);
        for name in m.store().names().to_vec() {
            if name.ends_with("bias") {
                let id = m.store().id(&name).unwrap();
                for v in m.store_mut().param_mut(id).data_mut() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
        }
        let trajs = [random_traj(5, &mut rng), random_traj(5, &mut rng)];
        let labels = [label(4.3, -31.0, 3.0), label(6.1, -24.0, -7.0)];
        let batch: Vec<(&Trajectory2D, &CameraPose)> = trajs.iter().zip(labels.iter()).collect();
        let alpha = 1.0;
        m.backward(&batch, &k, alpha).unwrap();
        let analytic: Vec<Vec<f64>> = m
            .store()
            .grads()
            .iter()
            .map(|g| g.data().to_vec())
            .collect();

        let mean_loss = |m: &RegressorModel| -> f64 {
            batch
                .iter()
                .map(|(t, l)| loss(&m.forward(t, &k).unwrap(), l, alpha).unwrap().total)
                .sum::<f64>()
                / batch.len() as f64
        };
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for p in 0..m.store().len() {
            for i in 0..m.store().params()[p].len() {
                let orig = m.store().params()[p].data()[i];
                m.store_mut().params_mut()[p].data_mut()[i] = orig + eps;
                let up = mean_loss(&m);
                m.store_mut().params_mut()[p].data_mut()[i] = orig - eps;
                let down = mean_loss(&m);
                m.store_mut().params_mut()[p].data_mut()[i] = orig;
                worst = worst.max(rel_err(analytic[p][i], (up - down) / (2.0 * eps)));
            }
        }
        worst
    }

    #[test]
    fn whole_model_gradient_matches_finite_differences() {
        let worst = whole_model_gradient_error(17);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        let mut rng = stream_rng(4, 0, 0, 0);
        let k = k1000();
        let mut m = RegressorModel::new(tiny_config()).unwrap();
        m.init(&mut rng);
        let t = random_traj(6, &mut rng);
        let p = m.forward(&t, &k).unwrap();
        let l = CameraPose {
            height_m: p.height_m,
            orientation: p.quat_unit.canonical(),
            yaw_ref: 0.0,
        };
        let loss = m.backward(&[(&t, &l)], &k, 1.0).unwrap();
        assert!(loss.total < 1e-12);
        for g in m.store().grads() {
            assert!(g.data().iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn duplicated_sample_gives_same_gradient() {
        let mut rng = stream_rng(5, 0, 0, 0);
        let k = k1000();
        let mut m = RegressorModel::new(tiny_config()).unwrap();
        m.init(&mut rng);
        let t = random_traj(7, &mut rng);
        let l = label(5.0, -30.0, 0.0);
        let one = m.backward(&[(&t, &l)], &k, 1.0).unwrap();
        let g1: Vec<Tensor> = m.store().grads().to_vec();
        let two = m.backward(&[(&t, &l), (&t, &l)], &k, 1.0).unwrap();
        assert!((one.total - two.total).abs() < 1e-12);
        for (a, b) in g1.iter().zip(m.store().grads()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn mixed_lengths_are_rejected_in_one_batch() {
        let mut rng = stream_rng(6, 0, 0, 0);
        let k = k1000();
        let mut m = RegressorModel::new(tiny_config()).unwrap();
        m.init(&mut rng);
        let (a, b) = (random_traj(5, &mut rng), random_traj(6, &mut rng));
        let l = label(5.0, -30.0, 0.0);
        assert!(matches!(
            m.backward(&[(&a, &l), (&b, &l)], &k, 1.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn loss_is_nonnegative_and_scale_invariant(
                h in 0.5..10.0f64,
                th in 0.5..10.0f64,
                w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                s in 0.01..100.0f64,
                alpha in 0.1..100.0f64,
            ) {
                prop_assume!(w * w + x * x + y * y + z * z > 1e-4);
                let l = label(th, -30.0, 4.0);
                let a = loss(&PosePrediction::new(h, [w, x, y, z]).unwrap(), &l, alpha).unwrap();
                let b = loss(&PosePrediction::new(h, [w * s, x * s, y * s, z * s]).unwrap(), &l, alpha).unwrap();
                prop_assert!(a.total >= 0.0);
                prop_assert!((a.orientation - b.orientation).abs() < 1e-12);
                prop_assert!((a.total - (a.location + alpha * a.orientation)).abs() < 1e-9);
            }
        }
    }
}
