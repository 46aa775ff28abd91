//! The learned refiner: a stack of permutation-equivariant step networks
//! that predict pose and camera updates from the current estimate and the
//! per-view mixture evidence.
//!
//! Each step network sees one feature row per camera (camera parameters,
//! that view's mixture parameters, that view's reprojections) with the
//! view-invariant inputs (flattened pose, mean heatmap log-likelihood)
//! copied onto every row. The trunk applies shared dense layers per row;
//! `CC` aggregation points concatenate the first and second moments across
//! rows back onto each row, which is the only cross-view communication and
//! keeps the whole map equivariant: permuting input cameras permutes the
//! camera updates and leaves the pose update unchanged.
//!
//! Steps are trained progressively with stop-gradient between them, so
//! inference is a plain sequence of forward passes.

mod train;

pub use train::{train, Supervision, TeacherWeights, TrainConfig, TrainOutcome, TrainRecord};

use crate::geometry::{project_pose, GeometryError, Keypoints2D, Rot6D, Vec2, Vec3, WeakCamera};
use crate::objective::{ObjectiveError, SceneMixtures, SolutionState};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// selu's self-normalizing constants.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NeuroError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer plan: {0}")]
    InvalidPlan(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Linear,
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// One fully-connected layer, applied independently to each input row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Scaled uniform fan-in initialization: `U(±sqrt(3/fan_in))`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        out_dim: usize,
        in_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = (3.0 / in_dim as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(out_dim, in_dim, |_, _| rng.gen_range(-bound..bound)),
            bias: DVector::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `rows` is `N × in`; returns `N × out` and the pre-activation.
    fn forward(&self, rows: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut pre = rows * self.weights.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.bias.transpose();
        }
        let out = match self.activation {
            Activation::Linear => pre.clone(),
            Activation::Selu => pre.map(selu),
        };
        (out, pre)
    }

    /// Backward pass: returns (weight grad, bias grad, input grad).
    fn backward(
        &self,
        input: &DMatrix<f64>,
        pre: &DMatrix<f64>,
        out_grad: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let pre_grad = match self.activation {
            Activation::Linear => out_grad.clone(),
            Activation::Selu => out_grad.zip_map(pre, |g, p| g * selu_derivative(p)),
        };
        let weight_grad = pre_grad.transpose() * input;
        let bias_grad = pre_grad.row_sum().transpose();
        let input_grad = &pre_grad * &self.weights;
        (weight_grad, bias_grad, input_grad)
    }
}

/// One entry of an equivariant trunk plan: a dense width or a
/// moment-concatenation aggregation point (`CC`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanEntry {
    Dense(usize),
    MomentConcat,
}

/// The trunk layout as published: dense widths interleaved with `CC`
/// markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivariantBlockSpec {
    entries: Vec<PlanEntry>,
}

impl EquivariantBlockSpec {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self, NeuroError> {
        if !entries.iter().any(|e| matches!(e, PlanEntry::Dense(_))) {
            return Err(NeuroError::InvalidPlan(
                "plan needs at least one dense layer".into(),
            ));
        }
        if matches!(entries.first(), Some(PlanEntry::MomentConcat)) {
            return Err(NeuroError::InvalidPlan("plan must not start with CC".into()));
        }
        if entries
            .iter()
            .any(|e| matches!(e, PlanEntry::Dense(0)))
        {
            return Err(NeuroError::InvalidPlan("zero-width dense layer".into()));
        }
        Ok(Self { entries })
    }

    /// `[512, 512, CC, 512, 512, CC, 512]`.
    pub fn h36m() -> Self {
        Self::parse("512,512,CC,512,512,CC,512").expect("valid built-in plan")
    }

    /// `[512, 512, CC, 512, 512, CC, 512, 512, CC, 512, 512, CC, 512]`.
    pub fn skipose() -> Self {
        Self::parse("512,512,CC,512,512,CC,512,512,CC,512,512,CC,512")
            .expect("valid built-in plan")
    }

    /// Parses `"64,CC,64"`-style plans; `h36m` and `skipose` name the
    /// published layouts.
    pub fn parse(text: &str) -> Result<Self, NeuroError> {
        match text.trim().to_ascii_lowercase().as_str() {
            "h36m" => return Ok(Self::h36m()),
            "skipose" => return Ok(Self::skipose()),
            _ => {}
        }
        let entries = text
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                if tok.eq_ignore_ascii_case("cc") {
                    Ok(PlanEntry::MomentConcat)
                } else {
                    tok.parse::<usize>().map(PlanEntry::Dense).map_err(|_| {
                        NeuroError::InvalidPlan(format!("bad plan token '{tok}'"))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }
}

impl std::fmt::Display for EquivariantBlockSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for e in &self.entries {
            if !first {
                write!(f, ",")?;
            }
            first = false;
            match e {
                PlanEntry::Dense(n) => write!(f, "{n}")?,
                PlanEntry::MomentConcat => write!(f, "CC")?,
            }
        }
        Ok(())
    }
}

/// Feature-layout constants for one scene shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
    pub mixture_components: usize,
}

impl FeatureLayout {
    /// `[camera 9 | mixtures 4·M·J | projections 2J | pose 3J | likelihood 1]`.
    pub fn row_width(&self) -> usize {
        9 + 4 * self.mixture_components * self.joints + 2 * self.joints + 3 * self.joints + 1
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joints
    }
}

/// The per-camera feature rows fed to one step network.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    /// `C × row_width`, un-normalized.
    pub rows: DMatrix<f64>,
}

/// Mean mixture log-likelihood of the state's projections, the scalar
/// view-invariant input.
pub fn mean_log_likelihood(state: &SolutionState, mixtures: &SceneMixtures) -> f64 {
    -crate::objective::ba_neg_log_likelihood(state, mixtures)
        / (state.camera_count() * state.joint_count()) as f64
}

/// Assembles the per-camera feature rows from the current state, the
/// mixtures, the current projections, and the mean log-likelihood.
///
/// Mixture components enter as `(weight, mean_x, mean_y, log sigma)`,
/// already sorted by descending weight, so the features are stable across
/// EM runs.
pub fn build_step_input(
    state: &SolutionState,
    mixtures: &SceneMixtures,
    projections: &[Keypoints2D],
    log_likelihood: f64,
) -> Result<StepInput, NeuroError> {
    let joints = state.joint_count();
    let cameras = state.camera_count();
    if mixtures.camera_count() != cameras || mixtures.joint_count() != joints {
        return Err(NeuroError::ShapeMismatch(format!(
            "mixtures {}x{} vs state {}x{}",
            mixtures.camera_count(),
            mixtures.joint_count(),
            cameras,
            joints
        )));
    }
    if projections.len() != cameras || projections.iter().any(|p| p.len() != joints) {
        return Err(NeuroError::ShapeMismatch(
            "projections do not match state shape".into(),
        ));
    }
    let components = mixtures.get(0, 0).components().len();
    let layout = FeatureLayout {
        joints,
        mixture_components: components,
    };
    let width = layout.row_width();
    let pose_flat = state.pose().flat();

    let mut rows = DMatrix::zeros(cameras, width);
    for c in 0..cameras {
        let cam = &state.cameras()[c];
        let mut features = Vec::with_capacity(width);
        features.extend_from_slice(&cam.rot.flat());
        features.extend_from_slice(&[cam.shift.x, cam.shift.y, cam.log_scale]);
        for j in 0..joints {
            let mixture = mixtures.get(c, j);
            if mixture.components().len() != components {
                return Err(NeuroError::ShapeMismatch(format!(
                    "mixture ({c},{j}) has {} components, expected {components}",
                    mixture.components().len()
                )));
            }
            for comp in mixture.components() {
                features.extend_from_slice(&[
                    comp.weight,
                    comp.mean.x,
                    comp.mean.y,
                    comp.sigma.ln(),
                ]);
            }
        }
        for p in projections[c].points() {
            features.extend_from_slice(&[p.x, p.y]);
        }
        features.extend_from_slice(&pose_flat);
        features.push(log_likelihood);
        rows.row_mut(c).copy_from_slice(&features);
    }
    Ok(StepInput { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrunkLayer {
    Dense(DenseLayer),
    MomentConcat,
}

/// One refinement step: normalization constants, the shared equivariant
/// trunk, a per-row camera head and a pose head on the row-mean embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNetwork {
    pub layout: FeatureLayout,
    pub input_mean: DVector<f64>,
    pub input_std: DVector<f64>,
    pub trunk: Vec<TrunkLayer>,
    pub camera_head: Vec<DenseLayer>,
    pub pose_head: Vec<DenseLayer>,
}

pub(crate) struct ForwardCache {
    normalized: DMatrix<f64>,
    /// Per trunk layer: the input it saw, plus pre-activation for dense.
    trunk_inputs: Vec<DMatrix<f64>>,
    trunk_pres: Vec<Option<DMatrix<f64>>>,
    trunk_out: DMatrix<f64>,
    camera_inputs: Vec<DMatrix<f64>>,
    camera_pres: Vec<DMatrix<f64>>,
    pose_inputs: Vec<DMatrix<f64>>,
    pose_pres: Vec<DMatrix<f64>>,
}

/// Gradients of a loss with respect to every weight of a step network,
/// stored in the same structure as the network.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub trunk: Vec<Option<(DMatrix<f64>, DVector<f64>)>>,
    pub camera_head: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub pose_head: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl StepNetwork {
    /// Builds a freshly initialized network for the given layout.
    pub fn init<R: Rng + ?Sized>(
        layout: FeatureLayout,
        plan: &EquivariantBlockSpec,
        head_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut width = layout.row_width();
        let mut trunk = Vec::new();
        for entry in plan.entries() {
            match entry {
                PlanEntry::Dense(out) => {
                    trunk.push(TrunkLayer::Dense(DenseLayer::init(
                        *out,
                        width,
                        Activation::Selu,
                        rng,
                    )));
                    width = *out;
                }
                PlanEntry::MomentConcat => {
                    trunk.push(TrunkLayer::MomentConcat);
                    width *= 3;
                }
            }
        }
        let camera_head = vec![
            DenseLayer::init(head_hidden, width, Activation::Selu, rng),
            DenseLayer::init(9, head_hidden, Activation::Linear, rng),
        ];
        let pose_head = vec![
            DenseLayer::init(head_hidden, width, Activation::Selu, rng),
            DenseLayer::init(layout.pose_dim(), head_hidden, Activation::Linear, rng),
        ];
        Self {
            layout,
            input_mean: DVector::zeros(layout.row_width()),
            input_std: DVector::from_element(layout.row_width(), 1.0),
            trunk,
            camera_head,
            pose_head,
        }
    }

    fn normalize(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rows.clone();
        for mut row in out.row_iter_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - self.input_mean[i]) / self.input_std[i];
            }
        }
        out
    }

    pub(crate) fn forward_cached(
        &self,
        input: &StepInput,
    ) -> Result<(DVector<f64>, DMatrix<f64>, ForwardCache), NeuroError> {
        if input.rows.ncols() != self.layout.row_width() {
            return Err(NeuroError::ShapeMismatch(format!(
                "input rows have width {}, network expects {}",
                input.rows.ncols(),
                self.layout.row_width()
            )));
        }
        let cameras = input.rows.nrows() as f64;
        let normalized = self.normalize(&input.rows);

        let mut current = normalized.clone();
        let mut trunk_inputs = Vec::with_capacity(self.trunk.len());
        let mut trunk_pres = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            trunk_inputs.push(current.clone());
            match layer {
                TrunkLayer::Dense(dense) => {
                    let (out, pre) = dense.forward(&current);
                    trunk_pres.push(Some(pre));
                    current = out;
                }
                TrunkLayer::MomentConcat => {
                    trunk_pres.push(None);
                    current = moment_concat(&current);
                }
            }
        }
        let trunk_out = current.clone();

        let mut camera_inputs = Vec::new();
        let mut camera_pres = Vec::new();
        let mut rows = trunk_out.clone();
        for layer in &self.camera_head {
            camera_inputs.push(rows.clone());
            let (out, pre) = layer.forward(&rows);
            camera_pres.push(pre);
            rows = out;
        }
        let camera_updates = rows;

        // Row-mean embedding feeds the non-equivariant pose head.
        let mean_embedding =
            DMatrix::from_rows(&[(trunk_out.row_sum() / cameras)]);
        let mut pose_inputs = Vec::new();
        let mut pose_pres = Vec::new();
        let mut pose_rows = mean_embedding;
        for layer in &self.pose_head {
            pose_inputs.push(pose_rows.clone());
            let (out, pre) = layer.forward(&pose_rows);
            pose_pres.push(pre);
            pose_rows = out;
        }
        let pose_update = pose_rows.row(0).transpose();

        Ok((
            pose_update,
            camera_updates,
            ForwardCache {
                normalized,
                trunk_inputs,
                trunk_pres,
                trunk_out,
                camera_inputs,
                camera_pres,
                pose_inputs,
                pose_pres,
            },
        ))
    }

    /// Predicted updates: the flattened pose delta and one 9-vector per
    /// camera row `(d rot6d, d shift, d log_scale)`.
    pub fn forward(&self, input: &StepInput) -> Result<(DVector<f64>, DMatrix<f64>), NeuroError> {
        let (pose, cams, _) = self.forward_cached(input)?;
        Ok((pose, cams))
    }

    /// Backpropagates loss gradients on the outputs into weight gradients.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        pose_grad: &DVector<f64>,
        camera_grad: &DMatrix<f64>,
    ) -> StepGradients {
        let cameras = cache.normalized.nrows() as f64;

        // Pose head (single-row batch).
        let mut pose_gradients = vec![None; self.pose_head.len()];
        let mut grad_rows = DMatrix::from_rows(&[pose_grad.transpose()]);
        for (i, layer) in self.pose_head.iter().enumerate().rev() {
            let (wg, bg, ig) =
                layer.backward(&cache.pose_inputs[i], &cache.pose_pres[i], &grad_rows);
            pose_gradients[i] = Some((wg, bg));
            grad_rows = ig;
        }
        // Mean aggregation spreads the gradient evenly over rows.
        let mut trunk_out_grad = DMatrix::zeros(
            cache.trunk_out.nrows(),
            cache.trunk_out.ncols(),
        );
        for mut row in trunk_out_grad.row_iter_mut() {
            row += grad_rows.row(0) / cameras;
        }

        // Camera head.
        let mut camera_gradients = vec![None; self.camera_head.len()];
        let mut grad_rows = camera_grad.clone();
        for (i, layer) in self.camera_head.iter().enumerate().rev() {
            let (wg, bg, ig) =
                layer.backward(&cache.camera_inputs[i], &cache.camera_pres[i], &grad_rows);
            camera_gradients[i] = Some((wg, bg));
            grad_rows = ig;
        }
        trunk_out_grad += grad_rows;

        // Trunk.
        let mut trunk_gradients = vec![None; self.trunk.len()];
        let mut grad_rows = trunk_out_grad;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            match layer {
                TrunkLayer::Dense(dense) => {
                    let (wg, bg, ig) = dense.backward(
                        &cache.trunk_inputs[i],
                        cache.trunk_pres[i].as_ref().expect("dense cache"),
                        &grad_rows,
                    );
                    trunk_gradients[i] = Some((wg, bg));
                    grad_rows = ig;
                }
                TrunkLayer::MomentConcat => {
                    grad_rows = moment_concat_backward(&cache.trunk_inputs[i], &grad_rows);
                }
            }
        }

        StepGradients {
            trunk: trunk_gradients,
            camera_head: camera_gradients.into_iter().map(Option::unwrap).collect(),
            pose_head: pose_gradients.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// Flat views over all weights, for the optimizer.
    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::new();
        for layer in &mut self.trunk {
            if let TrunkLayer::Dense(dense) = layer {
                out.extend(dense.weights.iter_mut());
                out.extend(dense.bias.iter_mut());
            }
        }
        for layer in self.camera_head.iter_mut().chain(self.pose_head.iter_mut()) {
            out.extend(layer.weights.iter_mut());
            out.extend(layer.bias.iter_mut());
        }
        out
    }

    pub(crate) fn parameter_count(&self) -> usize {
        let dense = |l: &DenseLayer| l.weights.len() + l.bias.len();
        self.trunk
            .iter()
            .map(|l| match l {
                TrunkLayer::Dense(d) => dense(d),
                TrunkLayer::MomentConcat => 0,
            })
            .sum::<usize>()
            + self.camera_head.iter().map(dense).sum::<usize>()
            + self.pose_head.iter().map(dense).sum::<usize>()
    }
}

impl StepGradients {
    /// Flattened in the same order as [`StepNetwork::parameters_mut`].
    pub(crate) fn flatten_into(&self, out: &mut [f64], scale: f64) {
        let mut idx = 0;
        let mut push = |values: &mut dyn Iterator<Item = f64>| {
            for v in values {
                out[idx] += scale * v;
                idx += 1;
            }
        };
        for grad in &self.trunk {
            if let Some((w, b)) = grad {
                push(&mut w.iter().copied());
                push(&mut b.iter().copied());
            }
        }
        for (w, b) in self.camera_head.iter().chain(self.pose_head.iter()) {
            push(&mut w.iter().copied());
            push(&mut b.iter().copied());
        }
    }
}

/// Appends the mean and elementwise second moment across rows to each row:
/// `C × d` becomes `C × 3d`.
fn moment_concat(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let cameras = rows.nrows() as f64;
    let mean = rows.row_sum() / cameras;
    let second = rows.map(|v| v * v).row_sum() / cameras;
    let mut out = DMatrix::zeros(rows.nrows(), rows.ncols() * 3);
    for (i, row) in rows.row_iter().enumerate() {
        let mut target = out.row_mut(i);
        target.columns_mut(0, rows.ncols()).copy_from(&row);
        target
            .columns_mut(rows.ncols(), rows.ncols())
            .copy_from(&mean);
        target
            .columns_mut(2 * rows.ncols(), rows.ncols())
            .copy_from(&second);
    }
    out
}

fn moment_concat_backward(input: &DMatrix<f64>, out_grad: &DMatrix<f64>) -> DMatrix<f64> {
    let d = input.ncols();
    let cameras = input.nrows() as f64;
    let direct = out_grad.columns(0, d).into_owned();
    let mean_part = out_grad.columns(d, d).row_sum() / cameras;
    let second_part = out_grad.columns(2 * d, d).row_sum() / cameras;
    let mut grad = direct;
    for (i, mut row) in grad.row_iter_mut().enumerate() {
        row += &mean_part;
        for (j, v) in row.iter_mut().enumerate() {
            *v += 2.0 * input[(i, j)] * second_part[j];
        }
    }
    grad
}

/// Adds predicted updates onto a state. Camera 0 is the gauge and is never
/// touched; its update row is ignored. The additive 6D rotation update is
/// re-validated, log-scale keeps the camera scale positive by construction.
pub fn apply_update(
    state: &SolutionState,
    pose_update: &DVector<f64>,
    camera_updates: &DMatrix<f64>,
) -> Result<SolutionState, NeuroError> {
    let joints = state.joint_count();
    let cameras = state.camera_count();
    if pose_update.len() != 3 * joints {
        return Err(NeuroError::ShapeMismatch(format!(
            "pose update has {} entries, expected {}",
            pose_update.len(),
            3 * joints
        )));
    }
    if camera_updates.nrows() != cameras || camera_updates.ncols() != 9 {
        return Err(NeuroError::ShapeMismatch(format!(
            "camera updates are {}x{}, expected {cameras}x9",
            camera_updates.nrows(),
            camera_updates.ncols()
        )));
    }
    let pose = crate::geometry::Pose3D::from_flat(
        &state
            .pose()
            .flat()
            .iter()
            .zip(pose_update.iter())
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>(),
    )?;
    let mut cams = vec![WeakCamera::identity()];
    for c in 1..cameras {
        let old = &state.cameras()[c];
        let d = camera_updates.row(c);
        let rot = Rot6D::new(
            old.rot.x + Vec3::new(d[0], d[1], d[2]),
            old.rot.y + Vec3::new(d[3], d[4], d[5]),
        );
        rot.matrix()?;
        cams.push(WeakCamera {
            rot,
            shift: old.shift + Vec2::new(d[6], d[7]),
            log_scale: old.log_scale + d[8],
        });
    }
    Ok(SolutionState::new(pose, cams)?)
}

/// A trained stack of refinement steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralOptimizer {
    pub steps: Vec<StepNetwork>,
    pub layout: FeatureLayout,
}

impl NeuralOptimizer {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// Runs every step in sequence. Consumes only the mixtures and the
    /// initial state; no ground truth is involved.
    pub fn infer(
        &self,
        init: &SolutionState,
        mixtures: &SceneMixtures,
    ) -> Result<SolutionState, NeuroError> {
        let mut state = init.clone();
        for step in &self.steps {
            state = run_step(step, &state, mixtures)?;
        }
        Ok(state)
    }
}

/// One forward refinement step: build features, predict, apply.
pub(crate) fn run_step(
    step: &StepNetwork,
    state: &SolutionState,
    mixtures: &SceneMixtures,
) -> Result<SolutionState, NeuroError> {
    let projections: Vec<Keypoints2D> = state
        .cameras()
        .iter()
        .map(|c| project_pose(state.pose(), c))
        .collect();
    let likelihood = mean_log_likelihood(state, mixtures);
    let input = build_step_input(state, mixtures, &projections, likelihood)?;
    let (pose_update, camera_updates) = step.forward(&input)?;
    apply_update(state, &pose_update, &camera_updates)
}
