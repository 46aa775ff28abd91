//! Progressive training of the step networks.
//!
//! Steps are trained one at a time: step `i` sees the (detached) outputs of
//! the already-frozen steps `0..i` as its inputs, minimizes the configured
//! loss on the states it produces, and is then frozen itself. Each step
//! keeps the weights of its best validation-PMPJPE epoch, and a step whose
//! validation error fails to improve over its own input is retrained from a
//! fresh seed, up to a bounded number of attempts.

use super::{
    apply_update, build_step_input, mean_log_likelihood, run_step, EquivariantBlockSpec,
    FeatureLayout, NeuralOptimizer, NeuroError, StepInput, StepNetwork,
};
use crate::geometry::Keypoints2D;
use crate::metrics::pmpjpe;
use crate::objective::{Objective, SolutionState, TeacherLossConfig, TermWeights};
use crate::refine::{refine_iterative, AdamConfig, AdamState};
use crate::scenegen::Scene;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which loss supervises training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Supervision {
    /// Squared 2D error against ground-truth keypoints.
    Weak,
    /// The mixture bundle-adjustment likelihood alone; no keypoints used.
    SelfSupervised,
}

/// Weights of the optional teacher penalty. References are produced by
/// running the iterative refiner on each training scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherWeights {
    pub lambda_pose: f64,
    pub lambda_shift: f64,
    pub lambda_rotation: f64,
    pub lambda_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of refinement steps to train.
    pub steps: usize,
    pub plan: EquivariantBlockSpec,
    pub head_hidden: usize,
    /// Adam learning rate for the network weights.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fresh-seed retries per step when validation fails to improve.
    pub attempts: usize,
    pub seed: u64,
    pub supervision: Supervision,
    /// Weight of the bone-length prior term; zero disables it.
    pub bone_weight: f64,
    pub teacher: Option<TeacherWeights>,
    /// Refinement budget used to produce teacher references.
    pub teacher_refinement: AdamConfig,
    /// Leading fraction of the scene list held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            plan: EquivariantBlockSpec::skipose(),
            head_hidden: 128,
            lr: 1e-4,
            epochs: 200,
            batch_size: 16,
            attempts: 10,
            seed: 0,
            supervision: Supervision::Weak,
            bone_weight: 0.0,
            teacher: None,
            teacher_refinement: AdamConfig::default(),
            validation_fraction: 0.2,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub attempt: usize,
    pub epoch: usize,
    /// Mean per-scene training loss over the epoch.
    pub train_loss: f64,
    /// Mean validation PMPJPE after applying the step being trained.
    pub val_pmpjpe: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub optimizer: NeuralOptimizer,
    pub curve: Vec<TrainRecord>,
    /// Mean validation PMPJPE of the stage-1 initializations.
    pub initial_val_pmpjpe: f64,
    /// Mean validation PMPJPE after all trained steps.
    pub final_val_pmpjpe: f64,
}

fn derive_seed(base: u64, step: usize, attempt: usize) -> u64 {
    // splitmix64 over a composed counter.
    let mut z = base
        .wrapping_add((step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((attempt as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn snapshot(net: &StepNetwork) -> Vec<f64> {
    let mut copy = net.clone();
    copy.parameters_mut().into_iter().map(|p| *p).collect()
}

fn restore(net: &mut StepNetwork, values: &[f64]) {
    for (param, value) in net.parameters_mut().into_iter().zip(values) {
        *param = *value;
    }
}

/// Per-scene loss and weight gradients for one step network.
fn scene_loss_and_gradients(
    net: &StepNetwork,
    scene: &Scene,
    input: &StepInput,
    state: &SolutionState,
    cfg: &TrainConfig,
    teacher: Option<&TeacherLossConfig>,
    flat_grads: &mut [f64],
    batch_scale: f64,
) -> Result<f64, NeuroError> {
    let (pose_update, camera_updates, cache) = net.forward_cached(input)?;
    let updated = apply_update(state, &pose_update, &camera_updates).map_err(|e| {
        NeuroError::TrainingDiverged(format!("predicted update left the valid set: {e}"))
    })?;

    let mut objective = Objective::new().with_weights(TermWeights {
        reprojection: 1.0,
        ba: 1.0,
        bone: cfg.bone_weight,
    });
    match cfg.supervision {
        Supervision::Weak => objective = objective.with_reprojection(&scene.gt_keypoints),
        Supervision::SelfSupervised => objective = objective.with_ba(&scene.mixtures),
    }
    let prior;
    if cfg.bone_weight > 0.0 {
        prior = scene.bone_prior.as_ref().ok_or_else(|| {
            NeuroError::InvalidConfig("bone weight set but scene has no bone prior".into())
        })?;
        objective = objective.with_bone(&scene.skeleton, prior);
    }
    if let Some(teacher) = teacher {
        objective = objective.with_teacher(teacher);
    }

    let (value, state_grad) = objective.value_and_gradient(&updated)?;
    if !value.is_finite() || state_grad.iter().any(|g| !g.is_finite()) {
        return Err(NeuroError::TrainingDiverged(format!(
            "non-finite loss or gradient (loss {value})"
        )));
    }

    let joints = state.joint_count();
    let pose_grad = DVector::from_column_slice(&state_grad[..3 * joints]);
    let mut camera_grad = DMatrix::zeros(state.camera_count(), 9);
    for c in 1..state.camera_count() {
        for k in 0..9 {
            camera_grad[(c, k)] = state_grad[3 * joints + 9 * (c - 1) + k];
        }
    }
    let gradients = net.backward(&cache, &pose_grad, &camera_grad);
    gradients.flatten_into(flat_grads, batch_scale);
    Ok(value)
}

fn mean_val_pmpjpe(
    scenes: &[Scene],
    states: &[SolutionState],
    val_indices: &[usize],
) -> Result<f64, NeuroError> {
    let mut total = 0.0;
    for &i in val_indices {
        total += pmpjpe(states[i].pose(), &scenes[i].gt_pose)?;
    }
    Ok(total / val_indices.len() as f64)
}

/// Trains one step network against the current states, with fresh-seed
/// retries. Earlier steps are already baked into `states` and are never
/// touched.
#[allow(clippy::too_many_arguments)]
fn train_step_network(
    step_idx: usize,
    scenes: &[Scene],
    states: &[SolutionState],
    inputs: &[StepInput],
    teachers: &[Option<TeacherLossConfig>],
    train_indices: &[usize],
    val_indices: &[usize],
    layout: FeatureLayout,
    cfg: &TrainConfig,
    curve: &mut Vec<TrainRecord>,
) -> Result<StepNetwork, NeuroError> {
    // Input standardization from the training rows, frozen thereafter.
    let width = layout.row_width();
    let mut mean = DVector::zeros(width);
    let mut count = 0.0;
    for &i in train_indices {
        for row in inputs[i].rows.row_iter() {
            mean += row.transpose();
            count += 1.0;
        }
    }
    mean /= count;
    let mut var = DVector::zeros(width);
    for &i in train_indices {
        for row in inputs[i].rows.row_iter() {
            let d = row.transpose() - &mean;
            var += d.component_mul(&d);
        }
    }
    var /= count;
    let std = var.map(|v| v.sqrt().max(1e-8));

    let input_val = mean_val_pmpjpe(scenes, states, val_indices)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        steps: cfg.epochs,
        ..AdamConfig::default()
    };

    let mut best_overall: Option<(f64, StepNetwork)> = None;
    for attempt in 0..cfg.attempts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step_idx, attempt));
        let mut net = StepNetwork::init(layout, &cfg.plan, cfg.head_hidden, &mut rng);
        net.input_mean = mean.clone();
        net.input_std = std.clone();

        let param_count = net.parameter_count();
        let mut adam = AdamState::new(param_count);
        let mut flat_grads = vec![0.0; param_count];
        let mut best_epoch: Option<(f64, Vec<f64>)> = None;
        let mut order: Vec<usize> = train_indices.to_vec();

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                flat_grads.iter_mut().for_each(|g| *g = 0.0);
                let batch_scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    epoch_loss += scene_loss_and_gradients(
                        &net,
                        &scenes[i],
                        &inputs[i],
                        &states[i],
                        cfg,
                        teachers[i].as_ref(),
                        &mut flat_grads,
                        batch_scale,
                    )?;
                }
                let mut params = snapshot(&net);
                adam.step(&mut params, &flat_grads, &adam_cfg);
                restore(&mut net, &params);
            }
            epoch_loss /= train_indices.len() as f64;

            // Validation: apply the candidate step to the held-out states.
            let mut val_total = 0.0;
            for &i in val_indices {
                let refined = run_step(&net, &states[i], &scenes[i].mixtures)?;
                val_total += pmpjpe(refined.pose(), &scenes[i].gt_pose)?;
            }
            let val = val_total / val_indices.len() as f64;
            curve.push(TrainRecord {
                step: step_idx,
                attempt,
                epoch,
                train_loss: epoch_loss,
                val_pmpjpe: val,
            });
            if best_epoch.as_ref().map_or(true, |(b, _)| val < *b) {
                best_epoch = Some((val, snapshot(&net)));
            }
        }

        let (attempt_val, weights) = best_epoch.expect("at least one epoch");
        restore(&mut net, &weights);
        if best_overall.as_ref().map_or(true, |(b, _)| attempt_val < *b) {
            best_overall = Some((attempt_val, net));
        }
        if attempt_val < input_val {
            break;
        }
    }

    Ok(best_overall.expect("at least one attempt").1)
}

/// Trains a full optimizer stack on synthetic scenes.
///
/// Scenes must share the joint count and mixture component count; the first
/// `validation_fraction` of them is held out for validation and retry
/// decisions, mirroring a fixed leading validation split.
pub fn train(scenes: &[Scene], cfg: &TrainConfig) -> Result<TrainOutcome, NeuroError> {
    if cfg.steps == 0 {
        return Err(NeuroError::InvalidConfig("steps must be >= 1".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(NeuroError::InvalidConfig(
            "epochs and batch_size must be >= 1".into(),
        ));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(NeuroError::InvalidConfig("lr must be positive".into()));
    }
    if scenes.len() < 2 {
        return Err(NeuroError::InvalidConfig(
            "training needs at least two scenes".into(),
        ));
    }
    if !(0.0 < cfg.validation_fraction && cfg.validation_fraction < 1.0) {
        return Err(NeuroError::InvalidConfig(
            "validation_fraction must be in (0, 1)".into(),
        ));
    }

    let joints = scenes[0].joint_count();
    let components = scenes[0].mixtures.get(0, 0).components().len();
    for (i, scene) in scenes.iter().enumerate() {
        if scene.joint_count() != joints {
            return Err(NeuroError::ShapeMismatch(format!(
                "scene {i} has {} joints, expected {joints}",
                scene.joint_count()
            )));
        }
        if scene.mixtures.get(0, 0).components().len() != components {
            return Err(NeuroError::ShapeMismatch(format!(
                "scene {i} has a different mixture component count"
            )));
        }
    }
    let layout = FeatureLayout {
        joints,
        mixture_components: components,
    };

    // Stage-1 initializations are the step-0 inputs.
    let mut states: Vec<SolutionState> = scenes
        .iter()
        .map(|s| {
            crate::scenegen::stage1_from_scene(s)
                .map_err(|e| NeuroError::InvalidConfig(format!("stage-1 init failed: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let val_count = ((scenes.len() as f64 * cfg.validation_fraction).round() as usize)
        .clamp(1, scenes.len() - 1);
    let val_indices: Vec<usize> = (0..val_count).collect();
    let train_indices: Vec<usize> = (val_count..scenes.len()).collect();

    // Teacher references come from the iterative refiner on the same
    // mixtures the network sees.
    let teachers: Vec<Option<TeacherLossConfig>> = if let Some(weights) = cfg.teacher {
        scenes
            .iter()
            .zip(&states)
            .map(|(scene, init)| {
                let objective = Objective::new().with_ba(&scene.mixtures);
                let trace = refine_iterative(init, &objective, &cfg.teacher_refinement)
                    .map_err(|e| {
                        NeuroError::InvalidConfig(format!("teacher refinement failed: {e}"))
                    })?;
                Ok(Some(TeacherLossConfig {
                    lambda_pose: weights.lambda_pose,
                    lambda_shift: weights.lambda_shift,
                    lambda_rotation: weights.lambda_rotation,
                    lambda_scale: weights.lambda_scale,
                    reference: trace.final_state,
                }))
            })
            .collect::<Result<_, NeuroError>>()?
    } else {
        vec![None; scenes.len()]
    };

    let initial_val_pmpjpe = mean_val_pmpjpe(scenes, &states, &val_indices)?;
    let mut curve = Vec::new();
    let mut steps = Vec::with_capacity(cfg.steps);

    for step_idx in 0..cfg.steps {
        // Detached inputs: features of the current states.
        let inputs: Vec<StepInput> = scenes
            .iter()
            .zip(&states)
            .map(|(scene, state)| {
                let projections: Vec<Keypoints2D> = state
                    .cameras()
                    .iter()
                    .map(|c| crate::geometry::project_pose(state.pose(), c))
                    .collect();
                let likelihood = mean_log_likelihood(state, &scene.mixtures);
                build_step_input(state, &scene.mixtures, &projections, likelihood)
            })
            .collect::<Result<_, _>>()?;

        let net = train_step_network(
            step_idx,
            scenes,
            &states,
            &inputs,
            &teachers,
            &train_indices,
            &val_indices,
            layout,
            cfg,
            &mut curve,
        )?;

        // Freeze the step and advance every state through it.
        for (i, scene) in scenes.iter().enumerate() {
            states[i] = run_step(&net, &states[i], &scene.mixtures)?;
        }
        steps.push(net);
    }

    let final_val_pmpjpe = mean_val_pmpjpe(scenes, &states, &val_indices)?;
    Ok(TrainOutcome {
        optimizer: NeuralOptimizer { steps, layout },
        curve,
        initial_val_pmpjpe,
        final_val_pmpjpe,
    })
}
