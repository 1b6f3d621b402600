use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BnCache};
use super::{Mode, ModelSpec, Tensor};
use crate::error::{ensure, Result};

/// A named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    HeUniform(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    kernel: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
    cout: usize,
}

#[derive(Debug, Clone, Copy)]
struct UpConv {
    kernel: usize,
    bias: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<[ConvBn; 2]>,
    /// `up[l]` maps level `l + 1` to level `l`.
    up: Vec<UpConv>,
    dec: Vec<[ConvBn; 2]>,
    head_kernel: usize,
    head_bias: usize,
}

struct Plan {
    layout: Layout,
    params: Vec<(String, Vec<usize>, bool, Init)>,
}

impl Plan {
    fn add(&mut self, name: String, shape: Vec<usize>, trainable: bool, init: Init) -> usize {
        self.params.push((name, shape, trainable, init));
        self.params.len() - 1
    }

    fn conv_bn(&mut self, prefix: &str, cin: usize, cout: usize) -> ConvBn {
        ConvBn {
            kernel: self.add(format!("{prefix}.conv.kernel"), vec![cout, cin, 3, 3], true, Init::HeUniform(cin * 9)),
            gamma: self.add(format!("{prefix}.bn.gamma"), vec![cout], true, Init::Ones),
            beta: self.add(format!("{prefix}.bn.beta"), vec![cout], true, Init::Zeros),
            mean: self.add(format!("{prefix}.bn.moving_mean"), vec![cout], false, Init::Zeros),
            var: self.add(format!("{prefix}.bn.moving_variance"), vec![cout], false, Init::Ones),
            cout,
        }
    }

    fn new(spec: &ModelSpec) -> Plan {
        let mut plan = Plan {
            layout: Layout {
                enc: Vec::new(),
                up: Vec::new(),
                dec: Vec::new(),
                head_kernel: 0,
                head_bias: 0,
            },
            params: Vec::new(),
        };
        let mut cin = 1;
        let mut enc = Vec::new();
        for l in 0..spec.depth {
            let f = spec.filters(l);
            let a = plan.conv_bn(&format!("enc{l}.0"), cin, f);
            let b = plan.conv_bn(&format!("enc{l}.1"), f, f);
            enc.push([a, b]);
            cin = f;
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in (0..spec.depth - 1).rev() {
            let f = spec.filters(l);
            let below = spec.filters(l + 1);
            up.push(UpConv {
                kernel: plan.add(format!("dec{l}.up.kernel"), vec![below, f, 2, 2], true, Init::HeUniform(below)),
                bias: plan.add(format!("dec{l}.up.bias"), vec![f], true, Init::Zeros),
                cout: f,
            });
            let a = plan.conv_bn(&format!("dec{l}.0"), 2 * f, f);
            let b = plan.conv_bn(&format!("dec{l}.1"), f, f);
            dec.push([a, b]);
        }
        up.reverse();
        dec.reverse();
        let f0 = spec.filters(0);
        let k = spec.out_channels;
        let head_kernel = plan.add("head.kernel".into(), vec![k, f0, 1, 1], true, Init::HeUniform(f0));
        let head_bias = plan.add("head.bias".into(), vec![k], true, Init::Zeros);
        plan.layout = Layout {
            enc,
            up,
            dec,
            head_kernel,
            head_bias,
        };
        plan
    }
}

fn he_uniform<R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Per-parameter gradients, aligned with [`Model::params`]. Entries of
/// non-trainable parameters are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<Vec<f32>>,
}

impl Gradients {
    fn zeros(params: &[Param]) -> Self {
        Gradients {
            values: params
                .iter()
                .map(|p| if p.trainable { vec![0.0; p.value.len()] } else { Vec::new() })
                .collect(),
        }
    }

    /// Wraps raw per-parameter gradients; non-trainable entries are empty.
    pub fn from_values(values: Vec<Vec<f32>>) -> Self {
        Gradients { values }
    }

    fn add(&mut self, idx: usize, g: &[f32]) {
        self.values[idx].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    pub fn get(&self, idx: usize) -> &[f32] {
        &self.values[idx]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.values.iter().map(Vec::as_slice)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|&g| f64::from(g).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

struct BlockTape {
    cache: Option<BnCache>,
    output: Tensor,
}

struct LevelTape {
    input: Tensor,
    /// Dropout scale applied to produce `input`.
    drop: Option<Vec<f32>>,
    /// Max-pool winners that produced `input` (encoder levels below the top).
    pool_arg: Vec<u8>,
    blocks: [BlockTape; 2],
}

/// Intermediate values of a training-mode forward pass.
pub struct Tape {
    enc: Vec<LevelTape>,
    dec: Vec<LevelTape>,
    probs: Tensor,
}

impl Tape {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// ReLU on/off pattern and max-pool winners. Two passes with different
    /// patterns lie on different linear pieces of the network.
    pub fn kinks(&self) -> Vec<u8> {
        let mut sig = Vec::new();
        for level in self.enc.iter().chain(&self.dec) {
            sig.extend_from_slice(&level.pool_arg);
            for b in &level.blocks {
                sig.extend(b.output.data.iter().map(|&v| u8::from(v > 0.0)));
            }
        }
        sig
    }
}

struct TrainState {
    rng: ChaCha8Rng,
    running: Vec<(usize, Vec<f32>)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
    layout: Layout,
    dropout_rng: ChaCha8Rng,
}

impl Model {
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let plan = Plan::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = plan
            .params
            .into_iter()
            .map(|(name, shape, trainable, init)| {
                let len = shape.iter().product();
                let value = match init {
                    Init::HeUniform(fan_in) => he_uniform(&mut rng, fan_in, len),
                    Init::Zeros => vec![0.0; len],
                    Init::Ones => vec![1.0; len],
                };
                Param {
                    name,
                    shape,
                    value,
                    trainable,
                }
            })
            .collect();
        Ok(Model {
            spec,
            params,
            layout: plan.layout,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f),
        })
    }

    /// Rebuilds a model from stored parameters; names and shapes must match `spec`.
    pub fn from_params(spec: ModelSpec, params: Vec<Param>, seed: u64) -> Result<Model> {
        spec.validate()?;
        let plan = Plan::new(&spec);
        ensure!(
            plan.params.len() == params.len(),
            Shape,
            "expected {} parameters, found {}",
            plan.params.len(),
            params.len()
        );
        for ((name, shape, trainable, _), p) in plan.params.iter().zip(&params) {
            ensure!(
                *name == p.name && *shape == p.shape && *trainable == p.trainable,
                Shape,
                "parameter {} {:?} does not match expected {name} {shape:?}",
                p.name,
                p.shape
            );
            ensure!(
                p.value.len() == shape.iter().product::<usize>(),
                Shape,
                "parameter {name} has {} values",
                p.value.len()
            );
        }
        Ok(Model {
            spec,
            params,
            layout: plan.layout,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn out_channels(&self) -> usize {
        self.spec.out_channels
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Restarts the dropout stream.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f);
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let [n, c, h, w] = images.shape;
        let (eh, ew) = self.spec.input_size;
        ensure!(
            n > 0 && c == 1 && (h, w) == (eh, ew),
            Shape,
            "input of shape {:?}, model expects n×1×{eh}×{ew}",
            images.shape
        );
        Ok(())
    }

    pub fn forward(&mut self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => self.predict(images),
            Mode::Train => Ok(self.forward_train(images)?.probs),
        }
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        Ok(self.run(images, &mut None).probs)
    }

    /// Train-mode forward pass keeping what [`Model::backward`] needs.
    pub fn forward_train(&mut self, images: &Tensor) -> Result<Tape> {
        self.check_input(images)?;
        let mut state = Some(TrainState {
            rng: self.dropout_rng.clone(),
            running: Vec::new(),
        });
        let tape = self.run(images, &mut state);
        let state = state.expect("train state");
        self.dropout_rng = state.rng;
        for (idx, values) in state.running {
            self.params[idx].value = values;
        }
        Ok(tape)
    }

    fn dropout(&self, x: &mut Tensor, state: &mut Option<TrainState>) -> Option<Vec<f32>> {
        let s = state.as_mut()?;
        let mask = layers::spatial_dropout_mask(&mut s.rng, x.batch(), x.channels(), self.spec.spatial_dropout_rate)?;
        layers::apply_channel_scale(x, &mask);
        Some(mask)
    }

    fn conv_bn(&self, cb: ConvBn, x: &Tensor, state: &mut Option<TrainState>) -> BlockTape {
        let v = |i: usize| self.params[i].value.as_slice();
        let mut y = layers::conv3x3_forward(x, v(cb.kernel), cb.cout);
        let cache = match state {
            Some(s) => {
                let mut mean = v(cb.mean).to_vec();
                let mut var = v(cb.var).to_vec();
                let (out, cache) = layers::batchnorm_train(&y, v(cb.gamma), v(cb.beta), &mut mean, &mut var);
                s.running.push((cb.mean, mean));
                s.running.push((cb.var, var));
                y = out;
                Some(cache)
            }
            None => {
                layers::batchnorm_eval(&mut y, v(cb.gamma), v(cb.beta), v(cb.mean), v(cb.var));
                None
            }
        };
        layers::relu_inplace(&mut y);
        BlockTape { cache, output: y }
    }

    fn level(
        &self,
        blocks: &[ConvBn; 2],
        input: Tensor,
        drop: Option<Vec<f32>>,
        pool_arg: Vec<u8>,
        state: &mut Option<TrainState>,
    ) -> LevelTape {
        let a = self.conv_bn(blocks[0], &input, state);
        let b = self.conv_bn(blocks[1], &a.output, state);
        LevelTape {
            input,
            drop,
            pool_arg,
            blocks: [a, b],
        }
    }

    fn run(&self, images: &Tensor, state: &mut Option<TrainState>) -> Tape {
        let depth = self.spec.depth;
        let lay = &self.layout;
        let mut enc: Vec<LevelTape> = Vec::with_capacity(depth);
        let mut input = images.clone();
        let mut drop = None;
        let mut arg = Vec::new();
        for l in 0..depth {
            let level = self.level(&lay.enc[l], input, drop, arg, state);
            let (mut pooled, a) = layers::maxpool_forward(&level.blocks[1].output);
            drop = if l + 1 < depth { self.dropout(&mut pooled, state) } else { None };
            input = pooled;
            arg = a;
            enc.push(level);
        }
        let mut dec: Vec<LevelTape> = Vec::with_capacity(depth - 1);
        for l in (0..depth - 1).rev() {
            let below = match dec.last() {
                Some(d) => &d.blocks[1].output,
                None => &enc[depth - 1].blocks[1].output,
            };
            let up = lay.up[l];
            let upsampled = layers::upconv_forward(
                below,
                &self.params[up.kernel].value,
                &self.params[up.bias].value,
                up.cout,
            );
            let mut merged = layers::concat_channels(&upsampled, &enc[l].blocks[1].output);
            let drop = self.dropout(&mut merged, state);
            dec.push(self.level(&lay.dec[l], merged, drop, Vec::new(), state));
        }
        dec.reverse();
        let probs = layers::head_forward(
            &dec[0].blocks[1].output,
            &self.params[lay.head_kernel].value,
            &self.params[lay.head_bias].value,
            self.spec.out_channels,
        );
        Tape { enc, dec, probs }
    }

    fn level_backward(
        &self,
        blocks: &[ConvBn; 2],
        tape: &LevelTape,
        grad_out: Tensor,
        grads: &mut Gradients,
        need_input: bool,
    ) -> Option<Tensor> {
        let mut d = grad_out;
        for j in [1, 0] {
            let cb = blocks[j];
            let block = &tape.blocks[j];
            let input = if j == 1 { &tape.blocks[0].output } else { &tape.input };
            layers::relu_backward_inplace(&block.output, &mut d);
            let cache = block.cache.as_ref().expect("tape recorded in train mode");
            let (dz, dgamma, dbeta) = layers::batchnorm_backward(cache, &self.params[cb.gamma].value, &d);
            grads.add(cb.gamma, &dgamma);
            grads.add(cb.beta, &dbeta);
            let (dk, dx) = layers::conv3x3_backward(input, &self.params[cb.kernel].value, &dz, j == 1 || need_input);
            grads.add(cb.kernel, &dk);
            d = dx?;
        }
        Some(d)
    }

    /// Gradients of a scalar loss given its gradient with respect to the
    /// probabilities recorded in `tape`.
    pub fn backward(&self, tape: &Tape, grad_probs: &Tensor) -> Result<Gradients> {
        ensure!(
            grad_probs.shape == tape.probs.shape,
            Shape,
            "gradient shape {:?} does not match output {:?}",
            grad_probs.shape,
            tape.probs.shape
        );
        let depth = self.spec.depth;
        let lay = &self.layout;
        let mut grads = Gradients::zeros(&self.params);

        let (mut d, dk, db) = layers::head_backward(
            &tape.dec[0].blocks[1].output,
            &self.params[lay.head_kernel].value,
            &tape.probs,
            grad_probs,
        );
        grads.add(lay.head_kernel, &dk);
        grads.add(lay.head_bias, &db);

        let mut skip_grads = Vec::with_capacity(depth - 1);
        for l in 0..depth - 1 {
            let level = &tape.dec[l];
            let mut dmerged = self
                .level_backward(&lay.dec[l], level, d, &mut grads, true)
                .expect("input gradient");
            if let Some(mask) = &level.drop {
                layers::apply_channel_scale(&mut dmerged, mask);
            }
            let up = lay.up[l];
            let (dup, dskip) = layers::split_channels(&dmerged, up.cout);
            skip_grads.push(dskip);
            let below = if l + 2 == depth {
                &tape.enc[depth - 1].blocks[1].output
            } else {
                &tape.dec[l + 1].blocks[1].output
            };
            let (dbelow, dk, db) = layers::upconv_backward(below, &self.params[up.kernel].value, &dup);
            grads.add(up.kernel, &dk);
            grads.add(up.bias, &db);
            d = dbelow;
        }

        for l in (0..depth).rev() {
            if l + 1 < depth {
                d.data.iter_mut().zip(&skip_grads[l].data).for_each(|(a, b)| *a += b);
            }
            let level = &tape.enc[l];
            let Some(mut din) = self.level_backward(&lay.enc[l], level, d, &mut grads, l > 0) else {
                break;
            };
            if let Some(mask) = &level.drop {
                layers::apply_channel_scale(&mut din, mask);
            }
            d = layers::maxpool_backward(&din, &level.pool_arg, tape.enc[l - 1].blocks[1].output.shape);
        }
        Ok(grads)
    }

    /// Appends one freshly initialized output channel. Every other parameter
    /// is kept as is, so existing channels produce identical outputs.
    pub fn extend_output(mut self, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = self.spec.filters(0);
        let (hk, hb) = (self.layout.head_kernel, self.layout.head_bias);
        let row = he_uniform(&mut rng, f0, f0);
        self.params[hk].value.extend(row);
        self.params[hk].shape[0] += 1;
        self.params[hb].value.push(0.0);
        self.params[hb].shape[0] += 1;
        self.spec.out_channels += 1;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{data_adaptive_loss, BatchPrediction, LossConfig, LossOutput};

    fn tiny(k: usize, size: usize) -> ModelSpec {
        ModelSpec {
            depth: 3,
            base_filters: 8,
            spatial_dropout_rate: 0.0,
            out_channels: k,
            input_size: (size, size),
        }
    }

    fn random_images(n: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec([n, 1, size, size], (0..n * size * size).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn parameter_count_depth3_base8() {
        // enc: 1→8, 8→16, 16→32; dec: up 32→16 and 16→8 with bias; head 8→1.
        let conv = |cin: usize, cout: usize| cin * cout * 9;
        let bn = |c: usize| 4 * c;
        let enc = conv(1, 8) + bn(8) + conv(8, 8) + bn(8)
            + conv(8, 16) + bn(16) + conv(16, 16) + bn(16)
            + conv(16, 32) + bn(32) + conv(32, 32) + bn(32);
        let dec = 32 * 16 * 4 + 16 + conv(32, 16) + bn(16) + conv(16, 16) + bn(16)
            + 16 * 8 * 4 + 8 + conv(16, 8) + bn(8) + conv(8, 8) + bn(8);
        let head = 8 + 1;
        let model = Model::build(tiny(1, 64), 0).unwrap();
        assert_eq!(enc + dec + head, 29_801);
        assert_eq!(model.num_parameters(), 29_801);
        assert_eq!(model.num_trainable(), 29_801 - 320);
    }

    #[test]
    fn build_is_deterministic() {
        let a = Model::build(tiny(2, 32), 11).unwrap();
        let b = Model::build(tiny(2, 32), 11).unwrap();
        let c = Model::build(tiny(2, 32), 12).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn output_shape_and_range() {
        let mut model = Model::build(ModelSpec { out_channels: 8, ..tiny(8, 32) }, 3).unwrap();
        let x = random_images(2, 32, 0);
        let y = model.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape, [2, 8, 32, 32]);
        let y = model.forward(&x, Mode::Eval).unwrap();
        assert!(y.data.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(model.predict(&random_images(1, 16, 0)).is_err());
    }

    #[test]
    fn eval_is_repeatable_and_train_updates_running_stats() {
        let mut model = Model::build(tiny(1, 16), 5).unwrap();
        let x = random_images(3, 16, 1);
        assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
        let before = model.param("enc0.0.bn.moving_mean").unwrap().value.clone();
        model.forward(&x, Mode::Train).unwrap();
        assert_ne!(model.param("enc0.0.bn.moving_mean").unwrap().value, before);
    }

    #[test]
    fn dropout_changes_train_outputs_only() {
        let spec = ModelSpec { spatial_dropout_rate: 0.5, ..tiny(1, 16) };
        let mut model = Model::build(spec, 5).unwrap();
        let x = random_images(2, 16, 2);
        let a = model.forward(&x, Mode::Train).unwrap();
        let b = model.forward(&x, Mode::Train).unwrap();
        assert_ne!(a, b);
        assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn extension_keeps_old_channels_bitwise() {
        let model = Model::build(tiny(7, 32), 9).unwrap();
        let x = random_images(2, 32, 3);
        let before = model.predict(&x).unwrap();
        let extended = model.extend_output(10);
        assert_eq!(extended.out_channels(), 8);
        let after = extended.predict(&x).unwrap();
        assert_eq!(after.shape, [2, 8, 32, 32]);
        for i in 0..2 {
            for k in 0..7 {
                let (a, b) = (before.channel(i, k), after.channel(i, k));
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        let bias = extended.param("head.bias").unwrap();
        assert_eq!(bias.shape, vec![8]);
        assert_eq!(bias.value[7], 0.0);
    }

    /// Data-adaptive loss of a two-structure batch where the second
    /// structure of the second slice is not annotated.
    fn batch_loss(probs: &Tensor, target: &[u8]) -> LossOutput {
        let pixels = probs.plane();
        let truths = (0..4)
            .map(|slot| (slot != 3).then(|| target[slot * pixels..(slot + 1) * pixels].to_vec()))
            .collect();
        let indices = vec![("p".to_string(), 0), ("p".to_string(), 1)];
        let preds = probs.data.iter().map(|&p| f64::from(p)).collect();
        let batch = BatchPrediction::new(indices, 2, pixels, preds, truths).unwrap();
        data_adaptive_loss(&batch, &LossConfig::default()).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = Model::build(tiny(2, 16), 21).unwrap();
        let x = random_images(2, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target: Vec<u8> = (0..4 * 256)
            .map(|i: i32| {
                let (slot, y, x) = (i / 256, (i % 256) / 16, i % 16);
                let (cy, cx) = (5 + 2 * slot, 10 - slot);
                u8::from((y - cy).pow(2) + (x - cx).pow(2) <= 12)
            })
            .collect();
        let tape = model.forward_train(&x).unwrap();
        let pattern = tape.kinks();
        let out = batch_loss(tape.probs(), &target);
        let dprobs = Tensor::from_vec(tape.probs().shape, out.grad.iter().map(|&g| g as f32).collect()).unwrap();
        let grads = model.backward(&tape, &dprobs).unwrap();

        // f32 rounding puts a noise floor under central differences, so only
        // gradients that are not tiny next to the largest one are sampled
        let largest = grads.iter().flatten().fold(0.0f32, |m, g| m.max(g.abs()));
        let trainable: Vec<(usize, usize)> = model
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trainable)
            .flat_map(|(i, p)| (0..p.value.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| grads.get(i)[j].abs() >= 0.05 * largest)
            .collect();
        let h = 1e-3f32;
        let (mut checked, mut tried) = (0, 0);
        while checked < 20 {
            tried += 1;
            assert!(tried < 400, "too many samples straddle a ReLU or pooling kink");
            let (i, j) = trainable[rng.gen_range(0..trainable.len())];
            let analytic = f64::from(grads.get(i)[j]);
            let orig = model.params[i].value[j];
            model.params[i].value[j] = orig + h;
            let up = model.forward_train(&x).unwrap();
            model.params[i].value[j] = orig - h;
            let down = model.forward_train(&x).unwrap();
            model.params[i].value[j] = orig;
            // central differences are only meaningful where the piecewise-linear
            // parts do not switch between the two evaluations
            if up.kinks() != pattern || down.kinks() != pattern {
                continue;
            }
            let numeric =
                (batch_loss(up.probs(), &target).value - batch_loss(down.probs(), &target).value) / (2.0 * f64::from(h));
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            assert!(
                rel < 1e-2,
                "{}[{j}]: analytic {analytic}, numeric {numeric}",
                model.params[i].name
            );
            checked += 1;
        }
    }
}
