//! Dense autoencoder with a classification head on the code layer.
//!
//! The autoencoder chain is `EC1..ECn → Code → DC1..DCn → Output`. A softmax
//! head maps the code to class probabilities. Two losses drive training:
//!
//! - reconstruction: squared error summed over pixels, averaged over the batch;
//! - classification: cross entropy in bits, averaged over the batch.
//!
//! Each batch is fed forward once. The classification gradient then updates
//! only the encoder, code layer and head; the reconstruction gradient updates
//! the whole autoencoder chain and never the head.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Axis};

use crate::error::{Error, Result};
use crate::neural::{
    adam_update, dense_forward, dense_infer, dropout_backward, dropout_forward, layer_backward,
    lr_schedule, Activation, AdamState, DenseCache, DenseLayer, GradCheckable, Matrix, Mode,
    ParamGrads,
};
use crate::rng::RngStream;
use crate::{Label, IMAGE_SIDE};

/// Probabilities are clamped below at this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// Batch normalization on every hidden layer.
    Bn,
    /// Inverted dropout after every hidden layer.
    Dropout,
    /// Plain dense layers.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    MseOnly,
    MsePlusCe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub input_side: usize,
    pub encoder_widths: Vec<usize>,
    pub code_len: usize,
    pub decoder_widths: Vec<usize>,
    pub regularizer: Regularizer,
    pub keep_prob: f64,
    pub n_classes: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::symmetric(vec![2048, 1024, 1024], 256, Regularizer::Bn)
    }
}

impl ArchSpec {
    /// 40×40 input, decoder mirroring the encoder, two classes.
    pub fn symmetric(
        encoder_widths: Vec<usize>,
        code_len: usize,
        regularizer: Regularizer,
    ) -> Self {
        let decoder_widths = encoder_widths.iter().rev().copied().collect();
        Self {
            input_side: IMAGE_SIDE,
            encoder_widths,
            code_len,
            decoder_widths,
            regularizer,
            keep_prob: 0.5,
            n_classes: 2,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_side * self.input_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.decoder_widths.is_empty() {
            return Err(Error::config(
                "encoder and decoder need at least one hidden layer",
            ));
        }
        let rev: Vec<usize> = self.encoder_widths.iter().rev().copied().collect();
        if rev != self.decoder_widths {
            return Err(Error::config(format!(
                "decoder widths {:?} must mirror encoder widths {:?}",
                self.decoder_widths, self.encoder_widths
            )));
        }
        if self.input_side == 0 || self.code_len == 0 || self.encoder_widths.contains(&0) {
            return Err(Error::config("all layer widths must be at least 1"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config(format!(
                "keep probability must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        Ok(())
    }

    /// `(input, output, activation, has_bn)` for every chain layer, then the head.
    fn layer_plan(&self) -> Vec<(usize, usize, Activation, bool)> {
        let bn = self.regularizer == Regularizer::Bn;
        let mut plan = Vec::new();
        let mut prev = self.input_len();
        for &w in &self.encoder_widths {
            plan.push((prev, w, Activation::Relu, bn));
            prev = w;
        }
        plan.push((prev, self.code_len, Activation::Relu, false));
        prev = self.code_len;
        for &w in &self.decoder_widths {
            plan.push((prev, w, Activation::Relu, bn));
            prev = w;
        }
        plan.push((prev, self.input_len(), Activation::Sigmoid, false));
        plan.push((self.code_len, self.n_classes, Activation::Softmax, false));
        plan
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.layer_plan()
            .iter()
            .map(|&(i, o, _, bn)| o * i + if bn { 2 * o } else { o })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnnaeModel {
    pub arch: ArchSpec,
    /// Encoder hidden layers, code layer, decoder hidden layers, output layer.
    pub chain: Vec<DenseLayer>,
    pub head: DenseLayer,
    /// One optimizer state per block, chain order then head.
    pub adam: Vec<AdamState>,
}

pub fn build_dnnae(arch: &ArchSpec, seed: u64) -> Result<DnnaeModel> {
    DnnaeModel::new(arch.clone(), seed)
}

impl DnnaeModel {
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = RngStream::for_parts(seed, &[0x1417]);
        let mut layers: Vec<DenseLayer> = arch
            .layer_plan()
            .into_iter()
            .map(|(i, o, act, bn)| DenseLayer::init(i, o, act, bn, &mut rng))
            .collect();
        let head = layers.pop().expect("plan always has a head");
        let mut model = Self::assemble(arch, layers, head);
        model.round_to_storage();
        Ok(model)
    }

    /// Every weight and bias zero (BN at identity).
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut layers: Vec<DenseLayer> = arch
            .layer_plan()
            .into_iter()
            .map(|(i, o, act, bn)| DenseLayer::zeros(i, o, act, bn))
            .collect();
        let head = layers.pop().expect("plan always has a head");
        Ok(Self::assemble(arch, layers, head))
    }

    fn assemble(arch: ArchSpec, chain: Vec<DenseLayer>, head: DenseLayer) -> Self {
        let adam = chain
            .iter()
            .chain(std::iter::once(&head))
            .map(|l| AdamState::new(l.param_count()))
            .collect();
        Self {
            arch,
            chain,
            head,
            adam,
        }
    }

    fn n_enc(&self) -> usize {
        self.arch.encoder_widths.len()
    }

    /// Index of the code layer in `chain`.
    pub fn code_index(&self) -> usize {
        self.n_enc()
    }

    pub fn encoder_layers(&self) -> &[DenseLayer] {
        &self.chain[..self.n_enc()]
    }

    pub fn code_layer(&self) -> &DenseLayer {
        &self.chain[self.code_index()]
    }

    pub fn decoder_layers(&self) -> &[DenseLayer] {
        &self.chain[self.code_index() + 1..self.chain.len() - 1]
    }

    pub fn output_layer(&self) -> &DenseLayer {
        self.chain.last().expect("non-empty chain")
    }

    /// All trainable blocks: chain layers then the head.
    pub fn blocks(&self) -> impl Iterator<Item = &DenseLayer> {
        self.chain.iter().chain(std::iter::once(&self.head))
    }

    pub fn block_names(&self) -> Vec<String> {
        let e = self.n_enc();
        let d = self.arch.decoder_widths.len();
        (1..=e)
            .map(|i| format!("EC{i}"))
            .chain(std::iter::once("Code".to_string()))
            .chain((1..=d).map(|i| format!("DC{i}")))
            .chain(["Output".to_string(), "Head".to_string()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().map(DenseLayer::param_count).sum()
    }

    /// Whether a dropout mask follows chain layer `i`.
    fn dropout_after(&self, i: usize) -> bool {
        self.arch.regularizer == Regularizer::Dropout
            && self.arch.keep_prob < 1.0
            && i != self.code_index()
            && i != self.chain.len() - 1
    }

    fn check_images(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.arch.input_len() {
            return Err(Error::shape(format!(
                "expected images of {} pixels, got {}",
                self.arch.input_len(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Train-mode (or infer-mode) forward keeping every cache needed for backward.
    ///
    /// `rng` supplies dropout masks; it is not touched without dropout.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut RngStream) -> Result<ForwardPass> {
        self.check_images(x)?;
        let keep = self.arch.keep_prob;
        let mut caches = Vec::with_capacity(self.chain.len());
        let mut masks = Vec::with_capacity(self.chain.len());
        let mut h = x.clone();
        let mut codes = None;
        for i in 0..self.chain.len() {
            let drop = self.dropout_after(i);
            let (y, cache) = dense_forward(&h, &mut self.chain[i], mode)?;
            caches.push(cache);
            h = if drop {
                let (y, mask) = dropout_forward(&y, keep, rng, mode)?;
                masks.push(Some(mask));
                y
            } else {
                masks.push(None);
                y
            };
            if i == self.code_index() {
                codes = Some(h.clone());
            }
        }
        let codes = codes.expect("chain contains the code layer");
        let (probs, head_cache) = dense_forward(&codes, &mut self.head, mode)?;
        Ok(ForwardPass {
            recon: h,
            codes,
            probs,
            caches,
            masks,
            head_cache,
        })
    }

    /// Reconstruction gradients for every chain layer.
    pub fn backward_mse(&self, pass: &ForwardPass, input: &Matrix) -> Result<Vec<ParamGrads>> {
        if input.dim() != pass.recon.dim() {
            return Err(Error::shape("input batch does not match the forward pass"));
        }
        let n = input.nrows() as f64;
        let upstream = (&pass.recon - input) * (2.0 / n);
        self.backprop_chain(pass, self.chain.len(), upstream)
    }

    /// Classification gradients: encoder + code layer grads, head grads.
    pub fn backward_ce(
        &self,
        pass: &ForwardPass,
        onehot: &Matrix,
    ) -> Result<(Vec<ParamGrads>, ParamGrads)> {
        if onehot.dim() != pass.probs.dim() {
            return Err(Error::shape("label matrix does not match the forward pass"));
        }
        let scale = -1.0 / (onehot.nrows() as f64 * std::f64::consts::LN_2);
        let mut dprobs = onehot.clone();
        dprobs.zip_mut_with(&pass.probs, |y, &p| {
            *y = if p > PROB_FLOOR { scale * *y / p } else { 0.0 };
        });
        let (dcode, head_grads) = layer_backward(&self.head, &pass.head_cache, &dprobs)?;
        let enc = self.backprop_chain(pass, self.code_index() + 1, dcode)?;
        Ok((enc, head_grads))
    }

    /// Backpropagate `upstream` (gradient w.r.t. the output of chain layer
    /// `end - 1`, after its dropout) down to the input.
    fn backprop_chain(
        &self,
        pass: &ForwardPass,
        end: usize,
        mut upstream: Matrix,
    ) -> Result<Vec<ParamGrads>> {
        let mut grads = Vec::with_capacity(end);
        for i in (0..end).rev() {
            if let Some(mask) = &pass.masks[i] {
                upstream = dropout_backward(mask, self.arch.keep_prob, &upstream);
            }
            let (dx, g) = layer_backward(&self.chain[i], &pass.caches[i], &upstream)?;
            grads.push(g);
            upstream = dx;
        }
        grads.reverse();
        Ok(grads)
    }

    fn apply_chain_grads(&mut self, grads: &[ParamGrads], lr: f64) -> Result<()> {
        let names = self.block_names();
        for (i, g) in grads.iter().enumerate() {
            let mut params = self.chain[i].params_mut();
            adam_update(&mut params, &g.blocks(), &mut self.adam[i], lr, &names[i])?;
        }
        Ok(())
    }

    fn apply_head_grads(&mut self, g: &ParamGrads, lr: f64) -> Result<()> {
        let idx = self.chain.len();
        let mut params = self.head.params_mut();
        adam_update(&mut params, &g.blocks(), &mut self.adam[idx], lr, "Head")
    }

    /// One classification update (encoder, code layer and head only).
    pub fn ce_step(&mut self, pass: &ForwardPass, onehot: &Matrix, lr: f64) -> Result<()> {
        let (enc, head) = self.backward_ce(pass, onehot)?;
        self.apply_chain_grads(&enc, lr)?;
        self.apply_head_grads(&head, lr)
    }

    /// One reconstruction update (whole chain, head untouched).
    pub fn mse_step(&mut self, pass: &ForwardPass, input: &Matrix, lr: f64) -> Result<()> {
        let grads = self.backward_mse(pass, input)?;
        self.apply_chain_grads(&grads, lr)
    }

    /// Round every stored value to `f32` precision, the checkpoint storage format.
    pub fn round_to_storage(&mut self) {
        fn r(v: &mut f64) {
            *v = *v as f32 as f64;
        }
        for layer in self.chain.iter_mut().chain(std::iter::once(&mut self.head)) {
            layer.weights.iter_mut().for_each(r);
            layer.bias.iter_mut().for_each(r);
            if let Some(bn) = layer.bn.as_mut() {
                bn.gamma.iter_mut().for_each(r);
                bn.beta.iter_mut().for_each(r);
                bn.running_mean.iter_mut().for_each(r);
                bn.running_var.iter_mut().for_each(r);
            }
        }
        for st in &mut self.adam {
            st.m.iter_mut().for_each(r);
            st.v.iter_mut().for_each(r);
        }
    }

    /// Fresh optimizer state for every block.
    pub fn reset_optimizer(&mut self) {
        self.adam = self
            .blocks()
            .map(|l| AdamState::new(l.param_count()))
            .collect();
    }

    /// Inference-mode codes, `N × code_len`, all entries non-negative.
    pub fn encode(&self, images: &Matrix) -> Result<Matrix> {
        self.check_images(images)?;
        let mut h = images.clone();
        for layer in &self.chain[..=self.code_index()] {
            h = dense_infer(&h, layer)?;
        }
        Ok(h)
    }

    /// Inference-mode reconstruction from codes; output entries lie in (0, 1).
    pub fn decode(&self, codes: &Matrix) -> Result<Matrix> {
        if codes.ncols() != self.arch.code_len {
            return Err(Error::shape(format!(
                "expected codes of length {}, got {}",
                self.arch.code_len,
                codes.ncols()
            )));
        }
        let mut h = codes.clone();
        for layer in &self.chain[self.code_index() + 1..] {
            h = dense_infer(&h, layer)?;
        }
        Ok(h)
    }

    /// Inference-mode class probabilities from codes.
    pub fn classify_codes(&self, codes: &Matrix) -> Result<Matrix> {
        dense_infer(codes, &self.head)
    }

    /// Inference-mode reconstruction and class probabilities.
    pub fn infer(&self, images: &Matrix) -> Result<(Matrix, Matrix)> {
        let codes = self.encode(images)?;
        Ok((self.decode(&codes)?, self.classify_codes(&codes)?))
    }
}

pub struct ForwardPass {
    pub recon: Matrix,
    pub codes: Matrix,
    pub probs: Matrix,
    caches: Vec<DenseCache>,
    masks: Vec<Option<Matrix>>,
    head_cache: DenseCache,
}

/// Squared error summed over pixels and averaged over the batch.
pub fn loss_mse(input: &Matrix, recon: &Matrix) -> Result<f64> {
    if input.dim() != recon.dim() {
        return Err(Error::shape(format!(
            "input {:?} vs reconstruction {:?}",
            input.dim(),
            recon.dim()
        )));
    }
    if input.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    let sum: f64 = input
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / input.nrows() as f64)
}

/// Per-image squared reconstruction error.
pub fn per_image_sq_error(input: &Matrix, recon: &Matrix) -> Result<Vec<f64>> {
    if input.dim() != recon.dim() {
        return Err(Error::shape("input and reconstruction differ in shape"));
    }
    Ok(input
        .rows()
        .into_iter()
        .zip(recon.rows())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect())
}

/// Cross entropy in bits averaged over the batch.
pub fn loss_ce(onehot: &Matrix, probs: &Matrix) -> Result<f64> {
    if onehot.dim() != probs.dim() {
        return Err(Error::shape(format!(
            "labels {:?} vs probabilities {:?}",
            onehot.dim(),
            probs.dim()
        )));
    }
    if onehot.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    for (i, row) in onehot.rows().into_iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != row.len() - 1 {
            return Err(Error::validation(format!("label row {i} is not one-hot")));
        }
    }
    let total: f64 = onehot
        .iter()
        .zip(probs.iter())
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, p)| -y * p.max(PROB_FLOOR).log2())
        .sum();
    Ok(total / onehot.nrows() as f64)
}

pub fn one_hot(labels: &[Label], n_classes: usize) -> Matrix {
    let mut m = Matrix::zeros((labels.len(), n_classes));
    for (i, l) in labels.iter().enumerate() {
        m[[i, l.index()]] = 1.0;
    }
    m
}

/// Images (one flattened image per row) with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    pub pixels: Matrix,
    pub labels: Vec<Label>,
}

impl LabeledImages {
    pub fn new(pixels: Matrix, labels: Vec<Label>) -> Result<Self> {
        if pixels.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                pixels.nrows(),
                labels.len()
            )));
        }
        Ok(Self { pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> LabeledImages {
        LabeledImages {
            pixels: self.pixels.slice(s![start..end, ..]).to_owned(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> LabeledImages {
        LabeledImages {
            pixels: self.pixels.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Matrix products are single-threaded with a fixed reduction order, so
    /// runs are always bit-reproducible; the flag is kept for the record.
    pub determinism: bool,
    /// First epoch index, non-zero when resuming from a checkpoint.
    pub start_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 100,
            seed: 0,
            loss_mode: LossMode::MsePlusCe,
            determinism: true,
            start_epoch: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub train_ce: f64,
    pub val_mse: f64,
    pub val_ce: f64,
}

/// Number of full batches per epoch; a trailing partial batch is dropped.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size
}

/// Train for `cfg.epochs` epochs starting at `cfg.start_epoch`.
///
/// Batches are taken in dataset order. Per batch: one train-mode forward, then
/// (for `MsePlusCe`) a classification step on encoder, code layer and head,
/// then a reconstruction step on the whole chain; both gradients are taken at
/// the forward point. Model state is rounded to `f32` after every epoch so a
/// checkpoint written between epochs resumes bit-identically.
pub fn train(
    model: &mut DnnaeModel,
    train_set: &LabeledImages,
    val_set: &LabeledImages,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_with(model, train_set, val_set, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F>(
    model: &mut DnnaeModel,
    train_set: &LabeledImages,
    val_set: &LabeledImages,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&DnnaeModel, &EpochMetrics) -> Result<()>,
{
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::validation(
            "training and validation sets must be non-empty",
        ));
    }
    if cfg.batch_size == 0 || cfg.batch_size > train_set.len() {
        return Err(Error::config(format!(
            "batch size {} invalid for {} training samples",
            cfg.batch_size,
            train_set.len()
        )));
    }
    if model.arch.regularizer == Regularizer::Bn && cfg.batch_size < 2 {
        return Err(Error::config("batch normalization needs batch size >= 2"));
    }
    let n_batches = batches_per_epoch(train_set.len(), cfg.batch_size);
    let onehot = one_hot(&train_set.labels, model.arch.n_classes);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in cfg.start_epoch..cfg.start_epoch + cfg.epochs {
        let lr = lr_schedule(epoch);
        let (mut mse_sum, mut ce_sum) = (0.0, 0.0);
        for b in 0..n_batches {
            let rows = b * cfg.batch_size..(b + 1) * cfg.batch_size;
            let x = train_set.pixels.slice(s![rows.clone(), ..]).to_owned();
            let y = onehot.slice(s![rows, ..]).to_owned();
            let mut rng = RngStream::for_parts(cfg.seed, &[0xD120, epoch as u64, b as u64]);
            let pass = model.forward(&x, Mode::Train, &mut rng)?;
            mse_sum += loss_mse(&x, &pass.recon)?;
            ce_sum += loss_ce(&y, &pass.probs)?;
            let mse_grads = model.backward_mse(&pass, &x)?;
            if cfg.loss_mode == LossMode::MsePlusCe {
                model.ce_step(&pass, &y, lr)?;
            }
            model.apply_chain_grads(&mse_grads, lr)?;
        }
        model.round_to_storage();
        let val = evaluate(model, val_set)?;
        let m = EpochMetrics {
            epoch,
            lr,
            train_mse: mse_sum / n_batches as f64,
            train_ce: ce_sum / n_batches as f64,
            val_mse: val.mse,
            val_ce: val.ce,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.6e} train mse {:.4} ce {:.4} | val mse {:.4} ({:.3e}/px) ce {:.4}",
            m.train_mse,
            m.train_ce,
            m.val_mse,
            m.val_mse / model.arch.input_len() as f64,
            m.val_ce
        );
        on_epoch(model, &m)?;
        history.push(m);
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub mse: f64,
    pub ce: f64,
    pub combined: f64,
    pub per_class_mse: BTreeMap<Label, f64>,
    pub class_counts: BTreeMap<Label, usize>,
    /// Fraction of samples whose most probable head class matches the label.
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 512;

/// Inference-mode losses over a labeled set, overall and per class.
pub fn evaluate(model: &DnnaeModel, set: &LabeledImages) -> Result<LossReport> {
    if set.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty set"));
    }
    let mut sq = Vec::with_capacity(set.len());
    let mut ce_total = 0.0;
    let mut correct = 0usize;
    for start in (0..set.len()).step_by(EVAL_CHUNK) {
        let part = set.slice(start, (start + EVAL_CHUNK).min(set.len()));
        let (recon, probs) = model.infer(&part.pixels)?;
        sq.extend(per_image_sq_error(&part.pixels, &recon)?);
        let y = one_hot(&part.labels, model.arch.n_classes);
        ce_total += loss_ce(&y, &probs)? * part.len() as f64;
        for (row, label) in probs.rows().into_iter().zip(&part.labels) {
            if argmax(row.iter().copied()) == label.index() {
                correct += 1;
            }
        }
    }
    let n = set.len() as f64;
    let mse = sq.iter().sum::<f64>() / n;
    let ce = ce_total / n;
    let mut sums: BTreeMap<Label, (f64, usize)> = BTreeMap::new();
    for (e, l) in sq.iter().zip(&set.labels) {
        let entry = sums.entry(*l).or_insert((0.0, 0));
        entry.0 += e;
        entry.1 += 1;
    }
    Ok(LossReport {
        mse,
        ce,
        combined: mse + ce,
        per_class_mse: sums.iter().map(|(l, (s, c))| (*l, s / *c as f64)).collect(),
        class_counts: sums.iter().map(|(l, (_, c))| (*l, *c)).collect(),
        accuracy: correct as f64 / n,
    })
}

pub(crate) fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Write per-epoch metrics as CSV.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "epoch,lr,train_mse,train_ce,val_mse,val_ce").expect("vec write");
    for m in metrics {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            m.epoch, m.lr, m.train_mse, m.train_ce, m.val_mse, m.val_ce
        )
        .expect("vec write");
    }
    crate::persistence::write_atomic(path, &buf)
}

/// Which objective a [`GradProbe`] differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossSelector {
    Mse,
    Ce,
    Combined,
}

/// A model pinned to one batch, exposing its train-mode loss to the gradient
/// checker. Dropout masks are replayed from the same stream on every call.
pub struct GradProbe {
    pub model: DnnaeModel,
    pub input: Matrix,
    pub onehot: Matrix,
    pub selector: LossSelector,
    pub seed: u64,
}

impl GradProbe {
    fn pass(&mut self) -> Result<ForwardPass> {
        let mut rng = RngStream::new(self.seed, 0);
        self.model.forward(&self.input, Mode::Train, &mut rng)
    }

    fn layer_mut(&mut self, layer: usize) -> &mut DenseLayer {
        if layer < self.model.chain.len() {
            &mut self.model.chain[layer]
        } else {
            &mut self.model.head
        }
    }

    /// `(layer, slot)` for every parameter block, slot indexing `params_mut`.
    fn block_map(&self) -> Vec<(usize, usize)> {
        self.model
            .blocks()
            .enumerate()
            .flat_map(|(i, l)| (0..l.params().len()).map(move |s| (i, s)))
            .collect()
    }

    /// Analytic gradients per layer (chain order, then head), zero where the
    /// selected loss does not reach.
    pub fn layer_grads(&mut self) -> Result<Vec<ParamGrads>> {
        let pass = self.pass()?;
        let zero = |l: &DenseLayer| ParamGrads {
            weights: Matrix::zeros(l.weights.dim()),
            bias: ndarray::Array1::zeros(l.bias.len()),
            gamma: l.bn.as_ref().map(|b| ndarray::Array1::zeros(b.width())),
            beta: l.bn.as_ref().map(|b| ndarray::Array1::zeros(b.width())),
        };
        let mut out: Vec<ParamGrads> = self.model.blocks().map(zero).collect();
        if matches!(self.selector, LossSelector::Mse | LossSelector::Combined) {
            for (i, g) in self
                .model
                .backward_mse(&pass, &self.input)?
                .iter()
                .enumerate()
            {
                out[i].add_assign(g);
            }
        }
        if matches!(self.selector, LossSelector::Ce | LossSelector::Combined) {
            let (enc, head) = self.model.backward_ce(&pass, &self.onehot)?;
            for (i, g) in enc.iter().enumerate() {
                out[i].add_assign(g);
            }
            let h = out.len() - 1;
            out[h].add_assign(&head);
        }
        Ok(out)
    }
}

impl GradCheckable for GradProbe {
    fn block_sizes(&self) -> Vec<usize> {
        self.model
            .blocks()
            .flat_map(|l| l.params().into_iter().map(<[f64]>::len).collect::<Vec<_>>())
            .collect()
    }

    fn param_mut(&mut self, block: usize, index: usize) -> &mut f64 {
        let (layer, slot) = self.block_map()[block];
        let l = self.layer_mut(layer);
        match (slot, l.bn.as_mut()) {
            (0, _) => &mut l.weights.as_slice_mut().expect("standard layout")[index],
            (1, None) => &mut l.bias[index],
            (1, Some(bn)) => &mut bn.gamma[index],
            (_, Some(bn)) => &mut bn.beta[index],
            (_, None) => unreachable!("plain layers have two blocks"),
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let pass = self.pass()?;
        let mse = loss_mse(&self.input, &pass.recon)?;
        let ce = loss_ce(&self.onehot, &pass.probs)?;
        Ok(match self.selector {
            LossSelector::Mse => mse,
            LossSelector::Ce => ce,
            LossSelector::Combined => mse + ce,
        })
    }

    fn analytic_grads(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .layer_grads()?
            .iter()
            .flat_map(|g| {
                g.blocks()
                    .into_iter()
                    .map(<[f64]>::to_vec)
                    .collect::<Vec<_>>()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_arch(reg: Regularizer) -> ArchSpec {
        ArchSpec {
            input_side: 4,
            ..ArchSpec::symmetric(vec![8], 4, reg)
        }
    }

    fn toy_batch(n: usize, seed: u64) -> (Matrix, Vec<Label>) {
        let mut rng = RngStream::new(seed, 1);
        let x = Matrix::from_shape_simple_fn((n, 16), || rng.uniform());
        let labels = (0..n)
            .map(|i| if i % 2 == 0 { Label::Fri } else { Label::Frii })
            .collect();
        (x, labels)
    }

    #[test]
    fn default_chain_dimensions() {
        let m = DnnaeModel::zeros(ArchSpec::default()).unwrap();
        let dims: Vec<(usize, usize)> = m
            .blocks()
            .map(|l| (l.input_dim(), l.output_dim()))
            .collect();
        assert_eq!(
            dims,
            vec![
                (1600, 2048),
                (2048, 1024),
                (1024, 1024),
                (1024, 256),
                (256, 1024),
                (1024, 1024),
                (1024, 2048),
                (2048, 1600),
                (256, 2),
            ]
        );
        let bn: Vec<bool> = m.blocks().map(DenseLayer::has_bn).collect();
        assert_eq!(
            bn,
            vec![true, true, true, false, true, true, true, false, false]
        );
        assert_eq!(m.code_layer().activation, Activation::Relu);
        assert_eq!(m.output_layer().activation, Activation::Sigmoid);
        assert_eq!(m.head.activation, Activation::Softmax);
        assert_eq!(m.adam.len(), 9);
    }

    #[test]
    fn param_count_closed_form() {
        let arch = ArchSpec::default();
        let m = DnnaeModel::zeros(arch.clone()).unwrap();
        // BN layers: weights + gamma + beta; others: weights + bias
        let bn_layers: usize = [
            (1600, 2048),
            (2048, 1024),
            (1024, 1024),
            (256, 1024),
            (1024, 1024),
            (1024, 2048),
        ]
        .iter()
        .map(|&(i, o)| o * i + 2 * o)
        .sum();
        let plain: usize = [(1024, 256), (2048, 1600), (256, 2)]
            .iter()
            .map(|&(i, o)| o * i + o)
            .sum();
        assert_eq!(bn_layers + plain, 13_388_098);
        assert_eq!(m.param_count(), bn_layers + plain);
        assert_eq!(arch.param_count(), bn_layers + plain);
        let allocated: usize = m
            .blocks()
            .flat_map(|l| l.params().into_iter().map(<[f64]>::len))
            .sum();
        assert_eq!(allocated, m.param_count());
        let adam: usize = m.adam.iter().map(AdamState::len).sum();
        assert_eq!(adam, m.param_count());
    }

    #[test]
    fn code_len_parameterizes_head() {
        let m = DnnaeModel::zeros(ArchSpec::symmetric(vec![32, 16], 16, Regularizer::Bn)).unwrap();
        assert_eq!(m.code_layer().output_dim(), 16);
        assert_eq!((m.head.input_dim(), m.head.output_dim()), (16, 2));
    }

    #[test]
    fn rejects_bad_arch() {
        assert!(DnnaeModel::new(ArchSpec::symmetric(vec![], 4, Regularizer::Bn), 0).is_err());
        let mut a = ArchSpec::symmetric(vec![8, 4], 2, Regularizer::Bn);
        a.decoder_widths = vec![8, 4];
        assert!(matches!(DnnaeModel::new(a, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = DnnaeModel::zeros(toy_arch(Regularizer::Bn)).unwrap();
        let (x, _) = toy_batch(3, 0);
        let (recon, probs) = m.infer(&x).unwrap();
        assert!(recon.iter().all(|&v| v == 0.5));
        assert!(probs.iter().all(|&v| v == 0.5));
        let code = Matrix::zeros((2, 4));
        assert!(m.decode(&code).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_ranges() {
        let mut m = DnnaeModel::new(toy_arch(Regularizer::Bn), 3).unwrap();
        let (x, _) = toy_batch(6, 1);
        let pass = m
            .forward(&x, Mode::Train, &mut RngStream::new(0, 0))
            .unwrap();
        assert!(pass.codes.iter().all(|&v| v >= 0.0));
        assert!(pass.recon.iter().all(|&v| v > 0.0 && v < 1.0));
        for row in pass.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_image_size() {
        let m = DnnaeModel::zeros(toy_arch(Regularizer::Bn)).unwrap();
        assert!(matches!(
            m.encode(&Matrix::zeros((2, 15))),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            m.decode(&Matrix::zeros((2, 5))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let m = DnnaeModel::new(toy_arch(Regularizer::Bn), 9).unwrap();
        let (x, _) = toy_batch(7, 2);
        let a = m.encode(&x).unwrap();
        let b = m.encode(&x).unwrap();
        assert_eq!(a.dim(), (7, 4));
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v >= 0.0));
        assert_eq!(m.decode(&a).unwrap().dim(), x.dim());
    }

    #[test]
    fn mse_examples() {
        let i = Matrix::from_elem((2, 3), 0.25);
        assert_eq!(loss_mse(&i, &i).unwrap(), 0.0);
        assert_eq!(
            loss_mse(&array![[0.5, 0.0]], &array![[0.0, 0.5]]).unwrap(),
            0.5
        );
        // per-image squared sums 1.0 and 3.0
        let a = array![[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let b = Matrix::zeros((2, 3));
        assert_eq!(loss_mse(&a, &b).unwrap(), 2.0);
        assert!(loss_mse(&a, &Matrix::zeros((2, 2))).is_err());
    }

    #[test]
    fn ce_examples() {
        let y = array![[1.0, 0.0]];
        assert_eq!(loss_ce(&y, &array![[1.0, 0.0]]).unwrap(), 0.0);
        assert_eq!(loss_ce(&y, &array![[0.5, 0.5]]).unwrap(), 1.0);
        assert_eq!(loss_ce(&y, &array![[0.25, 0.75]]).unwrap(), 2.0);
        // clamped instead of infinite
        let c = loss_ce(&y, &array![[0.0, 1.0]]).unwrap();
        assert!((c - (-(1e-12f64).log2())).abs() < 1e-9);
    }

    #[test]
    fn ce_rejects_non_onehot() {
        for bad in [array![[1.0, 1.0]], array![[0.0, 0.0]], array![[0.5, 0.5]]] {
            assert!(matches!(
                loss_ce(&bad, &array![[0.5, 0.5]]),
                Err(Error::Validation(_))
            ));
        }
    }

    #[test]
    fn ce_step_leaves_decoder_untouched() {
        let mut m = DnnaeModel::new(toy_arch(Regularizer::Bn), 4).unwrap();
        let (x, labels) = toy_batch(6, 3);
        let y = one_hot(&labels, 2);
        let before = m.clone();
        let pass = m
            .forward(&x, Mode::Train, &mut RngStream::new(0, 0))
            .unwrap();
        m.ce_step(&pass, &y, 0.01).unwrap();
        let c = m.code_index();
        for i in c + 1..m.chain.len() {
            assert_eq!(m.chain[i].params(), before.chain[i].params(), "layer {i}");
            assert_eq!(m.adam[i], before.adam[i]);
        }
        assert_ne!(m.chain[0].params(), before.chain[0].params());
        assert_ne!(m.head.params(), before.head.params());
    }

    #[test]
    fn mse_step_leaves_head_untouched() {
        let mut m = DnnaeModel::new(toy_arch(Regularizer::Bn), 4).unwrap();
        let (x, _) = toy_batch(6, 3);
        let before = m.clone();
        let pass = m
            .forward(&x, Mode::Train, &mut RngStream::new(0, 0))
            .unwrap();
        m.mse_step(&pass, &x, 0.01).unwrap();
        assert_eq!(m.head, before.head);
        for i in 0..m.chain.len() {
            assert_ne!(m.chain[i].weights, before.chain[i].weights, "layer {i}");
        }
    }

    #[test]
    fn batch_count_follows_loop_structure() {
        assert_eq!(batches_per_epoch(200, 100), 2);
        let arch = toy_arch(Regularizer::Bn);
        let mut m = DnnaeModel::new(arch, 0).unwrap();
        let (x, labels) = toy_batch(200, 5);
        let set = LabeledImages::new(x, labels).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 100,
            ..TrainConfig::default()
        };
        train(&mut m, &set, &set, &cfg).unwrap();
        let c = m.code_index();
        // encoder and code layer: CE + MSE per batch; decoder: MSE only; head: CE only
        for i in 0..=c {
            assert_eq!(m.adam[i].t, 4);
        }
        for i in c + 1..m.chain.len() {
            assert_eq!(m.adam[i].t, 2);
        }
        assert_eq!(m.adam[m.chain.len()].t, 2);
    }

    #[test]
    fn mse_only_never_touches_head() {
        let mut m = DnnaeModel::new(toy_arch(Regularizer::Bn), 0).unwrap();
        let before = m.head.clone();
        let (x, labels) = toy_batch(20, 5);
        let set = LabeledImages::new(x, labels).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 10,
            loss_mode: LossMode::MseOnly,
            ..TrainConfig::default()
        };
        train(&mut m, &set, &set, &cfg).unwrap();
        assert_eq!(m.head, before);
    }

    #[test]
    fn batch_larger_than_dataset() {
        let mut m = DnnaeModel::new(toy_arch(Regularizer::Bn), 0).unwrap();
        let (x, labels) = toy_batch(10, 5);
        let set = LabeledImages::new(x, labels).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 11,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut m, &set, &set, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_keep_all_equals_plain_network() {
        let mut drop = toy_arch(Regularizer::Dropout);
        drop.keep_prob = 1.0;
        let mut a = DnnaeModel::new(drop, 12).unwrap();
        let mut b = DnnaeModel::new(toy_arch(Regularizer::None), 12).unwrap();
        assert_eq!(a.chain, b.chain);
        let (x, _) = toy_batch(5, 8);
        let pa = a
            .forward(&x, Mode::Train, &mut RngStream::new(1, 1))
            .unwrap();
        let pb = b
            .forward(&x, Mode::Train, &mut RngStream::new(2, 2))
            .unwrap();
        assert_eq!(pa.recon, pb.recon);
        assert_eq!(pa.probs, pb.probs);
    }

    #[test]
    fn evaluate_per_class() {
        let m = DnnaeModel::new(toy_arch(Regularizer::Bn), 1).unwrap();
        let (x, labels) = toy_batch(9, 4);
        let set = LabeledImages::new(x, labels).unwrap();
        let r = evaluate(&m, &set).unwrap();
        let weighted: f64 = r
            .per_class_mse
            .iter()
            .map(|(l, v)| v * r.class_counts[l] as f64)
            .sum::<f64>()
            / set.len() as f64;
        assert!((weighted - r.mse).abs() < 1e-12);
        assert_eq!(r.combined, r.mse + r.ce);

        let only_fri = set.select(&[0, 2, 4]);
        let r = evaluate(&m, &only_fri).unwrap();
        assert_eq!(r.per_class_mse.len(), 1);
        assert!(r.per_class_mse.contains_key(&Label::Fri));

        let empty = set.select(&[]);
        assert!(matches!(evaluate(&m, &empty), Err(Error::Validation(_))));
    }

    #[test]
    fn grad_probe_on_tiny_net() {
        let mut m = DnnaeModel::new(toy_arch(Regularizer::Bn), 21).unwrap();
        m.round_to_storage();
        let (x, labels) = toy_batch(3, 6);
        let mut probe = GradProbe {
            model: m,
            input: x,
            onehot: one_hot(&labels, 2),
            selector: LossSelector::Combined,
            seed: 0,
        };
        let err = crate::neural::grad_check(&mut probe).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
