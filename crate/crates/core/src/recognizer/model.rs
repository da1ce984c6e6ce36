use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::{self, Alphabet, FrameLogProbs, FrameMatrix};
use crate::metrics::Transcript;
use crate::nn::{
    self, column_max, dropout_mask, Adam, BatchNorm2d, BiLstm, BiLstmCache, BnCache, Conv2d, Fmap,
    Grads, Linear, MaxPool2, ParamStore, PoolCache, Seq,
};

use super::{ModelConfig, ModelError, TrainConfig};

/// A single-image input tensor in CHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image tensor size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }
}

/// One training sample: input tensor plus encoded target labels.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub image: ImageTensor,
    pub labels: Vec<usize>,
}

impl TrainingExample {
    pub fn new(
        id: impl Into<String>,
        image: ImageTensor,
        text: &Transcript,
        alphabet: &Alphabet,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let labels = alphabet.encode(text).map_err(|e| match e {
            ctc::CtcError::OutOfAlphabet(c) => ModelError::OutOfAlphabet {
                sample_id: id.clone(),
                codepoint: c,
            },
            other => ModelError::Ctc(other),
        })?;
        Ok(Self { id, image, labels })
    }
}

/// Mean losses over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub main: f64,
    pub aux: f64,
    /// Main loss divided by the number of frames.
    pub main_per_frame: f64,
}

#[derive(Debug, Clone)]
struct ResBlock {
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    projection: Option<Conv2d>,
}

struct BlockTape {
    bn1: BnCache,
    act1: Fmap,
    bn2: BnCache,
    act2: Fmap,
}

impl ResBlock {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut R) -> Self {
        Self {
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), in_c),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), in_c, out_c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), out_c),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1, rng),
            projection: (in_c != out_c)
                .then(|| Conv2d::new(store, &format!("{name}.proj"), in_c, out_c, 1, 1, 0, rng)),
        }
    }

    /// Pre-activation residual block: BN-ReLU-conv, BN-ReLU-conv, plus skip.
    fn forward_train(&self, store: &ParamStore, x: &Fmap) -> (Fmap, BlockTape) {
        let (mut act1, bn1) = self.bn1.forward_train(store, x);
        nn::relu_in_place(&mut act1.data);
        let u = self.conv1.forward(store, &act1);
        let (mut act2, bn2) = self.bn2.forward_train(store, &u);
        nn::relu_in_place(&mut act2.data);
        let mut out = self.conv2.forward(store, &act2);
        match &self.projection {
            Some(p) => nn::add_in_place(&mut out.data, &p.forward(store, &act1).data),
            None => nn::add_in_place(&mut out.data, &x.data),
        }
        (out, BlockTape { bn1, act1, bn2, act2 })
    }

    fn forward_eval(&self, store: &ParamStore, x: &Fmap) -> Fmap {
        let mut act1 = self.bn1.forward_eval(store, x);
        nn::relu_in_place(&mut act1.data);
        let u = self.conv1.forward(store, &act1);
        let mut act2 = self.bn2.forward_eval(store, &u);
        nn::relu_in_place(&mut act2.data);
        let mut out = self.conv2.forward(store, &act2);
        match &self.projection {
            Some(p) => nn::add_in_place(&mut out.data, &p.forward(store, &act1).data),
            None => nn::add_in_place(&mut out.data, &x.data),
        }
        out
    }

    fn backward(&self, store: &ParamStore, grads: &mut Grads, tape: &BlockTape, dout: &Fmap) -> Fmap {
        let mut d_act2 = self
            .conv2
            .backward(store, grads, &tape.act2, dout, true)
            .expect("requested");
        nn::relu_backward_in_place(&tape.act2.data, &mut d_act2.data);
        let du = self.bn2.backward(store, grads, &tape.bn2, &d_act2);
        let mut d_act1 = self
            .conv1
            .backward(store, grads, &tape.act1, &du, true)
            .expect("requested");
        if let Some(p) = &self.projection {
            let dp = p.backward(store, grads, &tape.act1, dout, true).expect("requested");
            nn::add_in_place(&mut d_act1.data, &dp.data);
        }
        nn::relu_backward_in_place(&tape.act1.data, &mut d_act1.data);
        let mut dx = self.bn1.backward(store, grads, &tape.bn1, &d_act1);
        if self.projection.is_none() {
            nn::add_in_place(&mut dx.data, &dout.data);
        }
        dx
    }

    fn update_running(&self, store: &mut ParamStore, tape: &BlockTape) {
        self.bn1.update_running(store, &tape.bn1);
        self.bn2.update_running(store, &tape.bn2);
    }
}

struct GroupTape {
    blocks: Vec<BlockTape>,
    pool: Option<(PoolCache, Vec<f32>)>,
}

struct Tape {
    input: Fmap,
    groups: Vec<GroupTape>,
    final_bn: BnCache,
    final_act: Fmap,
    pool_rows: Vec<u32>,
    pooled: Seq,
    rnn_inputs: Vec<Seq>,
    rnn_caches: Vec<BiLstmCache>,
    head_mask: Vec<f32>,
    head_input: Seq,
}

/// Residual CNN encoder, column-wise max pooling, stacked BiLSTM head and
/// per-frame classifier, plus the training-only CTC shortcut.
#[derive(Debug, Clone)]
pub struct Crnn {
    config: ModelConfig,
    alphabet: Alphabet,
    store: ParamStore,
    stem: Conv2d,
    groups: Vec<Vec<ResBlock>>,
    final_bn: BatchNorm2d,
    rnns: Vec<BiLstm>,
    classifier: Linear,
    shortcut: Linear,
}

impl Crnn {
    pub fn new(config: ModelConfig, alphabet: Alphabet, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if alphabet.len() != config.alphabet_size {
            return Err(ModelError::InvalidConfig(format!(
                "alphabet has {} symbols but alphabet_size is {}",
                alphabet.len(),
                config.alphabet_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stem = Conv2d::new(
            &mut store,
            "stem",
            config.input_channels,
            config.stem_channels,
            7,
            2,
            3,
            &mut rng,
        );
        let mut channels = config.stem_channels;
        let mut groups = Vec::new();
        for (gi, &(count, out_c)) in config.block_plan.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..count {
                blocks.push(ResBlock::new(&mut store, &format!("group{gi}.block{bi}"), channels, out_c, &mut rng));
                channels = out_c;
            }
            groups.push(blocks);
        }
        let final_bn = BatchNorm2d::new(&mut store, "encoder.bn", channels);
        let mut rnns = Vec::new();
        let mut width = channels;
        for l in 0..config.recurrent_layers {
            rnns.push(BiLstm::new(&mut store, &format!("rnn{l}"), width, config.recurrent_hidden, &mut rng));
            width = config.recurrent_hidden;
        }
        let classifier = Linear::new(&mut store, "classifier", width, config.classes(), &mut rng);
        let shortcut = Linear::new(&mut store, "shortcut", channels, config.classes(), &mut rng);
        Ok(Self {
            config,
            alphabet,
            store,
            stem,
            groups,
            final_bn,
            rnns,
            classifier,
            shortcut,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn frames(&self) -> usize {
        self.config.frames()
    }

    fn check_image(&self, image: &ImageTensor) -> Result<(), ModelError> {
        let c = &self.config;
        if image.channels != c.input_channels || image.height != c.input_height || image.width != c.input_width {
            return Err(ModelError::InputShape {
                expected: (c.input_channels, c.input_height, c.input_width),
                got: (image.channels, image.height, image.width),
            });
        }
        Ok(())
    }

    fn stack<'a>(&self, images: impl ExactSizeIterator<Item = &'a ImageTensor>) -> Result<Fmap, ModelError> {
        let c = &self.config;
        let n = images.len();
        let mut x = Fmap::zeros(n, c.input_channels, c.input_height, c.input_width);
        for (i, img) in images.enumerate() {
            self.check_image(img)?;
            x.sample_mut(i).copy_from_slice(&img.data);
        }
        Ok(x)
    }

    fn encode_eval(&self, x: &Fmap) -> Seq {
        let s = &self.store;
        let mut cur = self.stem.forward(s, x);
        let last = self.groups.len() - 1;
        for (gi, group) in self.groups.iter().enumerate() {
            for block in group {
                cur = block.forward_eval(s, &cur);
            }
            if gi < last {
                cur = MaxPool2.forward(&cur).0;
            }
        }
        let mut act = self.final_bn.forward_eval(s, &cur);
        nn::relu_in_place(&mut act.data);
        column_max(&act).0
    }

    fn head_eval(&self, pooled: Seq) -> Seq {
        let mut h = pooled;
        for rnn in &self.rnns {
            h = rnn.forward(&self.store, &h).0;
        }
        self.classifier.forward(&self.store, &h)
    }

    fn to_log_probs(&self, logits: &Seq) -> Vec<FrameLogProbs> {
        (0..logits.n)
            .map(|i| {
                let values = logits.sample(i).iter().map(|&v| v as f64).collect();
                FrameMatrix::new(logits.t, logits.d, values)
                    .expect("logit shape")
                    .log_softmax()
            })
            .collect()
    }

    /// Column-pooled encoder features: `W/8` vectors of the last group's width.
    pub fn encode(&self, image: &ImageTensor) -> Result<Vec<Vec<f32>>, ModelError> {
        let x = self.stack(std::iter::once(image))?;
        let seq = self.encode_eval(&x);
        Ok(seq.data.chunks(seq.d).map(<[f32]>::to_vec).collect())
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<FrameLogProbs, ModelError> {
        Ok(self.forward_batch(std::slice::from_ref(image))?.remove(0))
    }

    /// Inference-mode forward pass over several images.
    pub fn forward_batch(&self, images: &[ImageTensor]) -> Result<Vec<FrameLogProbs>, ModelError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.stack(images.iter())?;
        let logits = self.head_eval(self.encode_eval(&x));
        Ok(self.to_log_probs(&logits))
    }

    /// Greedy CTC transcription; the shortcut branch is not used.
    pub fn predict(&self, image: &ImageTensor) -> Result<Transcript, ModelError> {
        let probs = self.forward(image)?;
        Ok(ctc::greedy_decode(&probs, &self.alphabet)?)
    }

    pub fn predict_batch(&self, images: &[ImageTensor]) -> Result<Vec<Transcript>, ModelError> {
        self.forward_batch(images)?
            .iter()
            .map(|p| ctc::greedy_decode(p, &self.alphabet).map_err(ModelError::from))
            .collect()
    }

    fn forward_train<R: Rng>(&self, x: Fmap, rng: &mut R) -> (Seq, Seq, Tape) {
        let s = &self.store;
        let rate = self.config.dropout_rate;
        let mut cur = self.stem.forward(s, &x);
        let last = self.groups.len() - 1;
        let mut groups = Vec::with_capacity(self.groups.len());
        for (gi, group) in self.groups.iter().enumerate() {
            let mut blocks = Vec::with_capacity(group.len());
            for block in group {
                let (out, tape) = block.forward_train(s, &cur);
                blocks.push(tape);
                cur = out;
            }
            let pool = if gi < last {
                let (mut pooled, cache) = MaxPool2.forward(&cur);
                let mask = dropout_mask(pooled.data.len(), rate, rng);
                pooled.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                cur = pooled;
                Some((cache, mask))
            } else {
                None
            };
            groups.push(GroupTape { blocks, pool });
        }
        let (mut final_act, final_bn) = self.final_bn.forward_train(s, &cur);
        nn::relu_in_place(&mut final_act.data);
        let (pooled, pool_rows) = column_max(&final_act);
        let aux_logits = self.shortcut.forward(s, &pooled);

        let mut rnn_inputs = Vec::with_capacity(self.rnns.len());
        let mut rnn_caches = Vec::with_capacity(self.rnns.len());
        let mut h = pooled.clone();
        for rnn in &self.rnns {
            let (y, cache) = rnn.forward(s, &h);
            rnn_inputs.push(h);
            rnn_caches.push(cache);
            h = y;
        }
        let head_mask = dropout_mask(h.data.len(), rate, rng);
        h.data.iter_mut().zip(&head_mask).for_each(|(v, m)| *v *= m);
        let logits = self.classifier.forward(s, &h);
        let tape = Tape {
            input: x,
            groups,
            final_bn,
            final_act,
            pool_rows,
            pooled,
            rnn_inputs,
            rnn_caches,
            head_mask,
            head_input: h,
        };
        (logits, aux_logits, tape)
    }

    /// CTC loss over each sample's frames; returns per-sample losses and the
    /// logit gradients scaled by `weight / n`.
    fn ctc_terms(&self, logits: &Seq, batch: &[TrainingExample], weight: f64) -> Result<(Vec<f64>, Seq), ModelError> {
        let n = batch.len();
        let mut grad = Seq::zeros(logits.n, logits.t, logits.d);
        let mut losses = Vec::with_capacity(n);
        let len = logits.t * logits.d;
        for (i, ex) in batch.iter().enumerate() {
            let mut lp: Vec<f64> = logits.sample(i).iter().map(|&v| v as f64).collect();
            for row in lp.chunks_mut(logits.d) {
                ctc::log_softmax_in_place(row);
            }
            let (loss, g) = ctc::loss_and_logit_gradient(&lp, logits.d, &ex.labels).map_err(|e| match e {
                ctc::CtcError::Infeasible { required, frames } => ModelError::InfeasibleTarget {
                    sample_id: ex.id.clone(),
                    required,
                    frames,
                },
                other => ModelError::Ctc(other),
            })?;
            losses.push(loss);
            let scale = weight / n as f64;
            for (dst, &src) in grad.data[i * len..(i + 1) * len].iter_mut().zip(&g) {
                *dst = (src * scale) as f32;
            }
        }
        Ok((losses, grad))
    }

    fn backward(&self, tape: &Tape, dlogits: &Seq, daux: &Seq) -> Grads {
        let s = &self.store;
        let mut grads = s.zero_grads();
        let mut dh = self.classifier.backward(s, &mut grads, &tape.head_input, dlogits);
        dh.data.iter_mut().zip(&tape.head_mask).for_each(|(v, m)| *v *= m);
        for (l, rnn) in self.rnns.iter().enumerate().rev() {
            dh = rnn.backward(s, &mut grads, &tape.rnn_caches[l], &tape.rnn_inputs[l], &dh);
        }
        let dshort = self.shortcut.backward(s, &mut grads, &tape.pooled, daux);
        nn::add_in_place(&mut dh.data, &dshort.data);
        let mut dact = nn::column_max_backward(&tape.pool_rows, &dh, tape.final_act.h);
        nn::relu_backward_in_place(&tape.final_act.data, &mut dact.data);
        let mut dcur = self.final_bn.backward(s, &mut grads, &tape.final_bn, &dact);
        for (group, gtape) in self.groups.iter().zip(&tape.groups).rev() {
            if let Some((cache, mask)) = &gtape.pool {
                dcur.data.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                dcur = MaxPool2.backward(cache, &dcur);
            }
            for (block, btape) in group.iter().zip(&gtape.blocks).rev() {
                dcur = block.backward(s, &mut grads, btape, &dcur);
            }
        }
        self.stem.backward(s, &mut grads, &tape.input, &dcur, false);
        grads
    }

    /// Loss and parameter gradients for one batch in training mode.
    ///
    /// Returns the tape so batch-norm running statistics can be committed.
    fn loss_and_gradients<R: Rng>(
        &self,
        batch: &[TrainingExample],
        rng: &mut R,
    ) -> Result<(StepLoss, Grads, Tape), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::InvalidConfig("empty batch".into()));
        }
        let x = self.stack(batch.iter().map(|e| &e.image))?;
        let (logits, aux_logits, tape) = self.forward_train(x, rng);
        let (main, dlogits) = self.ctc_terms(&logits, batch, 1.0)?;
        let weight = self.config.aux_loss_weight as f64;
        let (aux, daux) = self.ctc_terms(&aux_logits, batch, weight)?;
        let n = batch.len() as f64;
        let main = main.iter().sum::<f64>() / n;
        let aux = aux.iter().sum::<f64>() / n;
        let loss = StepLoss {
            total: main + weight * aux,
            main,
            aux,
            main_per_frame: main / self.frames() as f64,
        };
        if !loss.total.is_finite() {
            return Err(ModelError::NonFiniteLoss(loss.total));
        }
        let grads = self.backward(&tape, &dlogits, &daux);
        Ok((loss, grads, tape))
    }

    /// Gradients for one batch without updating anything.
    pub fn gradients<R: Rng>(&self, batch: &[TrainingExample], rng: &mut R) -> Result<(StepLoss, Grads), ModelError> {
        let (loss, grads, _) = self.loss_and_gradients(batch, rng)?;
        Ok((loss, grads))
    }

    fn commit_running_stats(&mut self, tape: &Tape) {
        let Self {
            store, groups, final_bn, ..
        } = self;
        for (group, gtape) in groups.iter().zip(&tape.groups) {
            for (block, btape) in group.iter().zip(&gtape.blocks) {
                block.update_running(store, btape);
            }
        }
        final_bn.update_running(store, &tape.final_bn);
    }
}

/// Owns the optimizer state and the schedule for one training run; the
/// single writer of the model's parameters.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Crnn,
    optimizer: Adam,
    config: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Crnn, config: TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let optimizer = Adam::new(model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_d20f);
        Ok(Self {
            model,
            optimizer,
            config,
            rng,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Crnn {
        &self.model
    }

    pub fn into_model(self) -> Crnn {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn learning_rate(&self) -> f32 {
        self.config.lr_at(self.epoch)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One Adam update on `batch` at the scheduled learning rate. The loss is
    /// the mean main CTC loss plus the weighted mean shortcut CTC loss.
    pub fn training_step(&mut self, batch: &[TrainingExample]) -> Result<StepLoss, ModelError> {
        let (loss, mut grads, tape) = self.model.loss_and_gradients(batch, &mut self.rng)?;
        if let Some(clip) = self.config.grad_clip {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        self.model.commit_running_stats(&tape);
        let lr = self.learning_rate();
        self.optimizer.update(self.model.params_mut(), &grads, lr);
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_alphabet() -> Alphabet {
        Alphabet::new("abcde".chars()).unwrap()
    }

    fn toy_config(width: usize) -> ModelConfig {
        ModelConfig {
            dropout_rate: 0.0,
            ..ModelConfig::desk(width, 5)
        }
    }

    /// Each symbol is a distinct stripe pattern 8 columns wide.
    fn toy_image(text: &str, alphabet: &Alphabet, width: usize) -> ImageTensor {
        let h = 32;
        let mut img = ImageTensor::filled(1, h, width, 0.0);
        for (slot, c) in text.chars().enumerate() {
            let k = alphabet.index_of(c).unwrap();
            let x0 = 4 + slot * 12;
            for dx in 0..8 {
                for y in 0..h {
                    let on = match k {
                        1 => y < 16,
                        2 => y >= 16,
                        3 => dx < 4,
                        4 => (y / 4 + dx / 2) % 2 == 0,
                        _ => y % 8 < 4,
                    };
                    if on && x0 + dx < width {
                        img.data[y * width + x0 + dx] = 1.0;
                    }
                }
            }
        }
        img
    }

    fn toy_batch(model: &Crnn) -> Vec<TrainingExample> {
        let width = model.config().input_width;
        ["abc", "ed", "cab", "dde"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let text = Transcript::new(t);
                TrainingExample::new(format!("s{i}"), toy_image(t, model.alphabet(), width), &text, model.alphabet())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn shape_and_normalization() {
        let model = Crnn::new(ModelConfig::desk(256, 5), toy_alphabet(), 1).unwrap();
        let img = toy_image("abc", model.alphabet(), 256);
        let lp = model.forward(&img).unwrap();
        assert_eq!((lp.frames(), lp.classes()), (32, 6));
        for t in 0..lp.frames() {
            let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let feats = model.encode(&img).unwrap();
        assert_eq!(feats.len(), 32);
        assert!(feats.iter().all(|f| f.len() == 64));
        let mut wrong = img.clone();
        wrong.width = 128;
        wrong.data.truncate(32 * 128);
        assert!(matches!(model.forward(&wrong), Err(ModelError::InputShape { .. })));
    }

    #[test]
    fn vertical_flip_keeps_shape() {
        let model = Crnn::new(ModelConfig::desk(64, 5), toy_alphabet(), 2).unwrap();
        let img = toy_image("ab", model.alphabet(), 64);
        let mut flipped = img.clone();
        for y in 0..32 {
            let src = &img.data[(31 - y) * 64..(32 - y) * 64];
            flipped.data[y * 64..(y + 1) * 64].copy_from_slice(src);
        }
        let a = model.encode(&img).unwrap();
        let b = model.encode(&flipped).unwrap();
        assert_eq!((a.len(), a[0].len()), (b.len(), b[0].len()));
    }

    #[test]
    fn forward_is_deterministic_and_batch_consistent() {
        let model = Crnn::new(ModelConfig::desk(64, 5), toy_alphabet(), 3).unwrap();
        let a = toy_image("ab", model.alphabet(), 64);
        let b = toy_image("ed", model.alphabet(), 64);
        let one = model.forward(&a).unwrap();
        assert_eq!(one, model.forward(&a).unwrap());
        let both = model.forward_batch(&[a.clone(), b]).unwrap();
        for (x, y) in one.values().iter().zip(both[0].values()) {
            assert!((x - y).abs() < 1e-5);
        }
        assert_eq!(model.predict(&a).unwrap(), model.predict(&a).unwrap());
    }

    #[test]
    fn infeasible_target_names_sample() {
        let model = Crnn::new(toy_config(32), toy_alphabet(), 4).unwrap();
        let text = Transcript::new("aaaa");
        let ex = TrainingExample::new("long-one", ImageTensor::filled(1, 32, 32, 0.0), &text, model.alphabet()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match model.gradients(&[ex], &mut rng) {
            Err(ModelError::InfeasibleTarget { sample_id, .. }) => assert_eq!(sample_id, "long-one"),
            other => panic!("{other:?}"),
        }
        let err = TrainingExample::new("x", ImageTensor::filled(1, 32, 32, 0.0), &Transcript::new("z"), model.alphabet());
        assert!(matches!(err, Err(ModelError::OutOfAlphabet { codepoint: 'z', .. })));
    }

    #[test]
    fn gradients_reach_nearly_every_parameter() {
        let model = Crnn::new(ModelConfig::desk(64, 5), toy_alphabet(), 5).unwrap();
        let batch = toy_batch(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, grads) = model.gradients(&batch, &mut rng).unwrap();
        let nonzero = 1.0 - grads.zero_fraction();
        assert!(nonzero >= 0.99, "only {nonzero} of parameters got gradient");
    }

    #[test]
    fn zero_aux_weight_gives_main_loss() {
        let config = ModelConfig {
            aux_loss_weight: 0.0,
            ..toy_config(64)
        };
        let model = Crnn::new(config, toy_alphabet(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, _) = model.gradients(&toy_batch(&model), &mut rng).unwrap();
        assert_eq!(loss.total, loss.main);
        assert!(loss.aux > 0.0);
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let config = ModelConfig {
            stem_channels: 4,
            block_plan: vec![(1, 4), (1, 6)],
            recurrent_hidden: 5,
            ..toy_config(32)
        };
        let model = Crnn::new(config, toy_alphabet(), 7).unwrap();
        let mut batch = toy_batch(&model);
        batch.truncate(2);
        batch[0].labels.truncate(2);
        batch[1].labels.truncate(2);
        // random pixels avoid exact ties in the max-pooling stages
        let mut pixel_rng = ChaCha8Rng::seed_from_u64(70);
        for ex in &mut batch {
            ex.image.data.iter_mut().for_each(|v| *v = pixel_rng.gen_range(0.0..1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, grads) = model.gradients(&batch, &mut rng).unwrap();
        let loss_of = |m: &Crnn| m.gradients(&batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0.total;
        // directional derivatives along random unit directions
        let mut dir_rng = ChaCha8Rng::seed_from_u64(71);
        let h = 1e-3f32;
        for _ in 0..4 {
            let dirs: Vec<Vec<f32>> = model
                .params()
                .params()
                .iter()
                .map(|t| t.data.iter().map(|_| dir_rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let norm = dirs.iter().flatten().map(|v| v * v).sum::<f32>().sqrt();
            let shifted = |sign: f32| {
                let mut m = model.clone();
                for (t, d) in m.params_mut().params_mut().iter_mut().zip(&dirs) {
                    t.data.iter_mut().zip(d).for_each(|(p, v)| *p += sign * h * v / norm);
                }
                loss_of(&m)
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h as f64);
            let analytic: f64 = grads
                .iter()
                .zip(&dirs)
                .flat_map(|(g, d)| g.iter().zip(d).map(|(g, v)| (g * v / norm) as f64))
                .sum();
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-3);
            // max pooling and ReLU kinks keep f32 differences from agreeing more tightly
            assert!(rel < 5e-2, "directional fd {fd} vs analytic {analytic}");
        }
    }

    #[test]
    fn toy_batch_overfits() {
        let model = Crnn::new(toy_config(64), toy_alphabet(), 8).unwrap();
        let batch = toy_batch(&model);
        let train = TrainConfig {
            learning_rate: 3e-3,
            max_epochs: 1000,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, train).unwrap();
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(trainer.training_step(&batch).unwrap().main_per_frame);
        }
        let smooth = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let windows: Vec<f64> = losses.chunks(20).map(smooth).collect();
        assert!(windows.windows(2).filter(|w| w[1] < w[0]).count() >= windows.len() - 2, "{windows:?}");
        assert!(*losses.last().unwrap() < 0.1, "final {}", losses.last().unwrap());
        let model = trainer.into_model();
        for ex in &batch {
            let pred = model.predict(&ex.image).unwrap();
            assert_eq!(model.alphabet().encode(&pred).unwrap(), ex.labels, "{}", ex.id);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let model = Crnn::new(ModelConfig::desk(64, 5), toy_alphabet(), 9).unwrap();
        let mut trainer = Trainer::new(model, TrainConfig::desk()).unwrap();
        let batch = toy_batch(trainer.model());
        trainer.training_step(&batch).unwrap();
        let model = trainer.into_model();
        let restored = Crnn::from_bytes(&model.to_bytes()).unwrap();
        let img = &batch[0].image;
        let a = model.forward(img).unwrap();
        let b = restored.forward(img).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(model.to_bytes(), restored.to_bytes());

        let dir = std::env::temp_dir().join(format!("cerhv-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        crate::recognizer::save_checkpoint(&model, &path).unwrap();
        let other = ModelConfig::desk(128, 5);
        let err = crate::recognizer::load_checkpoint(&path, Some((&other, model.alphabet())));
        assert!(matches!(err, Err(ModelError::Checkpoint(_))));
        crate::recognizer::load_checkpoint(&path, Some((model.config(), model.alphabet()))).unwrap();
        let mut bytes = model.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Crnn::from_bytes(&bytes).is_err());
        std::fs::remove_dir_all(dir).ok();
    }
}
