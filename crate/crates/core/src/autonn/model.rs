//! The small convolutional classifier and its gradient surfaces.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tape::{NodeId, ReluMode, Tape};
use crate::dsp::{MelConfig, MelFilterbank, StftConfig, Waveform};
use crate::error::{CoreError, Result};
use crate::rng::{derive_rng, next_uniform_in};
use crate::tensor::Tensor;
use crate::{scalar, Scalar};

/// What the classifier consumes.
///
/// `LogMel` models take waveforms and differentiate through the
/// STFT-magnitude and log-mel front end; `Magnitude` models take a
/// spectrogram-shaped matrix directly (used for mask classifiers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    LogMel,
    Magnitude,
}

/// One convolution stage: square kernel, optional 2×2 max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 1 = no pooling, 2 = 2×2 max pool after the activation.
    pub pool: usize,
}

/// Classifier architecture and front-end parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input: InputKind,
    pub conv: Vec<ConvSpec>,
    /// Width of the dense layer before the output; 0 skips it.
    pub hidden: usize,
    pub n_classes: usize,
    /// ReLU after each conv and the hidden layer. Disabled for linear probes.
    pub relu: bool,
    pub stft: StftConfig,
    pub mel: MelConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input: InputKind::LogMel,
            conv: vec![
                ConvSpec { channels: 16, kernel: 3, stride: 1, pool: 2 },
                ConvSpec { channels: 32, kernel: 3, stride: 1, pool: 2 },
            ],
            hidden: 64,
            n_classes: 2,
            relu: true,
            stft: StftConfig::default(),
            mel: MelConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(CoreError::invalid("n_classes must be >= 2"));
        }
        if self.conv.is_empty() {
            return Err(CoreError::invalid("at least one conv layer is required"));
        }
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.channels == 0 || spec.kernel == 0 || spec.stride == 0 {
                return Err(CoreError::invalid(format!("conv layer {i} has a zero field")));
            }
            if spec.pool != 1 && spec.pool != 2 {
                return Err(CoreError::invalid(format!("conv layer {i}: pool must be 1 or 2")));
            }
        }
        self.stft.validate()?;
        self.mel.validate(self.stft.sample_rate)?;
        Ok(())
    }
}

/// Classifier with parameters in a fixed flat order:
/// per conv layer `(kernel, bias)`, then hidden `(w, b)` when present,
/// then output `(w, b)`.
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    params: Vec<Tensor<T>>,
    fb: Arc<MelFilterbank<T>>,
}

/// A recorded forward pass with the node ids needed downstream.
pub struct ForwardRun<T: Scalar> {
    pub tape: Tape<T>,
    pub input: NodeId,
    pub logits: NodeId,
    /// Output node of each conv layer (post-bias, pre-activation).
    pub conv_outputs: Vec<NodeId>,
    /// Leaf ids of the parameters, in parameter order.
    pub param_nodes: Vec<NodeId>,
}

impl<T: Scalar> Model<T> {
    /// Builds a model with seeded uniform init in `[-1/√fan_in, 1/√fan_in]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let fb = Arc::new(MelFilterbank::new(&config.mel, &config.stft)?);
        let mut params = Vec::new();
        let mut c_in = 1usize;
        let mut stream = 0u64;
        let mut init = |dims: &[usize], fan_in: usize, stream: u64| -> Tensor<T> {
            let mut rng = derive_rng(seed, "model-init", stream);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..dims.iter().product::<usize>())
                .map(|_| scalar(next_uniform_in(&mut rng, -bound, bound)))
                .collect();
            Tensor::from_vec(dims, data).unwrap().with_grad()
        };
        for spec in &config.conv {
            let fan_in = c_in * spec.kernel * spec.kernel;
            params.push(init(&[spec.channels, c_in, spec.kernel, spec.kernel], fan_in, stream));
            params.push(init(&[spec.channels], fan_in, stream + 1));
            stream += 2;
            c_in = spec.channels;
        }
        let mut width = c_in;
        if config.hidden > 0 {
            params.push(init(&[width, config.hidden], width, stream));
            params.push(init(&[config.hidden], width, stream + 1));
            stream += 2;
            width = config.hidden;
        }
        params.push(init(&[width, config.n_classes], width, stream));
        params.push(init(&[config.n_classes], width, stream + 1));
        Ok(Model { config, params, fb })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(CoreError::invalid("parameter count mismatch"));
        }
        for (new, old) in params.iter().zip(&self.params) {
            if new.dims() != old.dims() {
                return Err(CoreError::shape(format!(
                    "parameter {:?} vs expected {:?}",
                    new.dims(),
                    old.dims()
                )));
            }
        }
        self.params = params.into_iter().map(|p| p.with_grad()).collect();
        Ok(())
    }

    pub fn conv_layer_count(&self) -> usize {
        self.config.conv.len()
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.fb
    }

    /// Element-type conversion, e.g. a trained `f32` model checked in `f64`.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            fb: Arc::new(MelFilterbank::new(&self.config.mel, &self.config.stft).unwrap()),
        }
    }

    /// Log-mel features `[frames, n_mels]` for a waveform (LogMel models).
    pub fn features_from_wave(&self, wave: &Waveform<T>) -> Result<Tensor<T>> {
        if self.config.input != InputKind::LogMel {
            return Err(CoreError::Unsupported(
                "magnitude-input model does not take waveforms".into(),
            ));
        }
        let (m, _) = crate::dsp::stft(wave, &self.config.stft)?;
        crate::dsp::log_mel(&m, &self.fb)
    }

    /// Records the conv/dense trunk from an already-registered `[n,1,h,w]`
    /// feature node.
    fn build_trunk(&self, tape: &mut Tape<T>, mut cursor: NodeId) -> Result<(NodeId, Vec<NodeId>, Vec<NodeId>)> {
        let dims = tape.value(cursor).dims().to_vec();
        if dims.len() != 4 || dims[1] != 1 {
            return Err(CoreError::shape(format!("trunk input must be [n,1,h,w], got {dims:?}")));
        }
        let n = dims[0];
        let mut conv_outputs = Vec::new();
        let mut param_nodes = Vec::new();
        let mut p = 0usize;
        for spec in &self.config.conv {
            let kernel = tape.leaf(self.params[p].clone());
            let bias = tape.leaf(self.params[p + 1].clone());
            param_nodes.push(kernel);
            param_nodes.push(bias);
            p += 2;
            cursor = tape.conv2d(cursor, kernel, bias, spec.stride)?;
            conv_outputs.push(cursor);
            if self.config.relu {
                cursor = tape.relu(cursor);
            }
            if spec.pool == 2 {
                cursor = tape.maxpool2(cursor)?;
            }
        }
        cursor = tape.global_mean_pool(cursor)?;
        if self.config.hidden > 0 {
            let w = tape.leaf(self.params[p].clone());
            let b = tape.leaf(self.params[p + 1].clone());
            param_nodes.push(w);
            param_nodes.push(b);
            p += 2;
            cursor = tape.matmul(cursor, w)?;
            cursor = tape.add_row_bias(cursor, b)?;
            if self.config.relu {
                cursor = tape.relu(cursor);
            }
        }
        let w = tape.leaf(self.params[p].clone());
        let b = tape.leaf(self.params[p + 1].clone());
        param_nodes.push(w);
        param_nodes.push(b);
        cursor = tape.matmul(cursor, w)?;
        cursor = tape.add_row_bias(cursor, b)?;
        debug_assert_eq!(tape.value(cursor).dims(), &[n, self.config.n_classes]);
        Ok((cursor, conv_outputs, param_nodes))
    }

    /// Forward pass from a feature batch `[n, 1, h, w]`.
    ///
    /// For `Magnitude` models the "features" are the spectrogram-shaped map
    /// itself. The feature leaf is marked differentiable.
    pub fn forward_features(&self, features: &Tensor<T>) -> Result<ForwardRun<T>> {
        let mut tape = Tape::new();
        let input = tape.leaf(features.clone().with_grad());
        let (logits, conv_outputs, param_nodes) = self.build_trunk(&mut tape, input)?;
        Ok(ForwardRun { tape, input, logits, conv_outputs, param_nodes })
    }

    /// Forward pass from a waveform through the differentiable front end.
    pub fn forward_wave(&self, wave: &Waveform<T>) -> Result<ForwardRun<T>> {
        if self.config.input != InputKind::LogMel {
            return Err(CoreError::Unsupported(
                "magnitude-input model does not take waveforms".into(),
            ));
        }
        let mut tape = Tape::new();
        let signal = Tensor::from_vec(&[wave.len()], wave.samples.clone())?.with_grad();
        let input = tape.leaf(signal);
        let mag = tape.stft_mag(input, &self.config.stft)?;
        let mel = tape.log_mel(mag, Arc::clone(&self.fb))?;
        let frames = tape.value(mel).rows();
        let bands = tape.value(mel).cols();
        let shaped = tape.reshape(mel, &[1, 1, frames, bands])?;
        let (logits, conv_outputs, param_nodes) = self.build_trunk(&mut tape, shaped)?;
        Ok(ForwardRun { tape, input, logits, conv_outputs, param_nodes })
    }

    fn run_for(&self, input: &ModelInput<'_, T>) -> Result<ForwardRun<T>> {
        match input {
            ModelInput::Wave(w) => self.forward_wave(w),
            ModelInput::Features(f) => {
                if f.rank() == 2 {
                    let shaped = f.reshape(&[1, 1, f.rows(), f.cols()])?;
                    self.forward_features(&shaped)
                } else {
                    self.forward_features(f)
                }
            }
        }
    }

    /// Logits for a single input.
    pub fn logits(&self, input: &ModelInput<'_, T>) -> Result<Vec<T>> {
        let run = self.run_for(input)?;
        Ok(run.tape.value(run.logits).row(0).to_vec())
    }

    /// Softmax class probabilities for a single input.
    pub fn predict_proba(&self, input: &ModelInput<'_, T>) -> Result<Vec<T>> {
        let run = self.run_for(input)?;
        let probs = super::kernels::softmax_rows(run.tape.value(run.logits));
        Ok(probs.row(0).to_vec())
    }

    /// Gradient of the pre-softmax logit of `class` w.r.t. the model input.
    pub fn grad_input(
        &self,
        input: &ModelInput<'_, T>,
        class: usize,
        mode: ReluMode,
    ) -> Result<Tensor<T>> {
        let run = self.run_for(input)?;
        let grads = self.backward_from_logit(&run, class, mode)?;
        let g = grads[run.input]
            .clone()
            .ok_or_else(|| CoreError::Numerical("input gradient not produced".into()))?;
        match input {
            ModelInput::Features(f) if f.rank() == 2 => g.reshape(f.dims()),
            _ => Ok(g),
        }
    }

    /// Activations of conv layer `layer` and the gradient of `class`'s logit
    /// with respect to them. Shapes of the two tensors are identical.
    pub fn layer_capture(
        &self,
        input: &ModelInput<'_, T>,
        layer: usize,
        class: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let run = self.run_for(input)?;
        if layer >= run.conv_outputs.len() {
            return Err(CoreError::invalid(format!(
                "conv layer {layer} out of range ({} layers)",
                run.conv_outputs.len()
            )));
        }
        let node = run.conv_outputs[layer];
        let grads = self.backward_from_logit(&run, class, ReluMode::Standard)?;
        let acts = run.tape.value(node).clone();
        let g = grads[node]
            .clone()
            .ok_or_else(|| CoreError::Numerical("activation gradient not produced".into()))?;
        Ok((acts, g))
    }

    fn backward_from_logit(
        &self,
        run: &ForwardRun<T>,
        class: usize,
        mode: ReluMode,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let dims = run.tape.value(run.logits).dims().to_vec();
        if class >= dims[1] {
            return Err(CoreError::invalid(format!(
                "class {class} out of range for {} classes",
                dims[1]
            )));
        }
        if dims[0] != 1 {
            return Err(CoreError::invalid("logit gradients need a single-sample batch"));
        }
        let mut seed = Tensor::zeros(&dims);
        seed.data_mut()[class] = T::one();
        run.tape.backward(run.logits, seed, mode)
    }
}

/// Input accepted by inference/gradient entry points.
pub enum ModelInput<'a, T: Scalar> {
    /// A waveform, for `LogMel` models.
    Wave(&'a Waveform<T>),
    /// Feature tensor: `[h, w]` single map or `[n, 1, h, w]` batch.
    Features(&'a Tensor<T>),
}
