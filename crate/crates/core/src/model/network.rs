//! The dual-encoder conditional variational network.
//!
//! Each encoder runs up to three branches over its time span (motion through
//! a temporal convolution, flattened occupancy grids, scene images through a
//! three-layer CNN), encodes each branch with its own LSTM and fuses the final
//! hidden states with a ReLU layer. The past encoding `phi_x` and the future
//! encoding `phi_y` parameterize the latent posterior during training; the
//! decoder maps `(phi_x, z)` to a sequence of offsets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::params::Binding;
use crate::nn::{Conv2dLayer, ConvGeom, Linear, Lstm, Mat, ParamStore, Tape, Var};

use super::batch::{Batch, SceneBatch};
use super::config::{Branches, ModelConfig, Standardizer};

#[derive(Debug, Clone)]
struct Encoder {
    motion_conv: Linear,
    motion_lstm: Lstm,
    occupancy_lstm: Option<Lstm>,
    scene_cnn: Option<Vec<Conv2dLayer>>,
    scene_lstm: Option<Lstm>,
    fusion: Linear,
}

impl Encoder {
    fn new(
        store: &mut ParamStore,
        name: &str,
        config: &ModelConfig,
        branches: &Branches,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = config.lstm_hidden;
        let motion_conv = Linear::new(
            store,
            &format!("{name}.motion_conv"),
            config.conv1d_kernel * config.motion_features(),
            config.motion_channels,
            rng,
        );
        let motion_lstm = Lstm::new(store, &format!("{name}.motion_lstm"), config.motion_channels, h, rng);
        let occupancy_lstm = branches
            .occupancy_cells
            .map(|cells| Lstm::new(store, &format!("{name}.occupancy_lstm"), cells, h, rng));
        let (scene_cnn, scene_lstm) = match branches.scene {
            Some(shape) => {
                let mut layers = Vec::new();
                let (mut side, mut ch) = (shape.size, shape.channels);
                for (k, (&kernel, &out)) in config.cnn_kernel_sizes.iter().zip(&config.cnn_channels).enumerate() {
                    let geom = ConvGeom::same(side, side, ch, out, kernel, config.cnn_stride);
                    layers.push(Conv2dLayer::new(store, &format!("{name}.scene_cnn{k}"), geom, rng));
                    side = geom.out_height;
                    ch = out;
                }
                let lstm = Lstm::new(store, &format!("{name}.scene_lstm"), ch, h, rng);
                (Some(layers), Some(lstm))
            }
            None => (None, None),
        };
        let branch_count = 1 + occupancy_lstm.is_some() as usize + scene_lstm.is_some() as usize;
        let fusion = Linear::new(store, &format!("{name}.fusion"), branch_count * h, config.fusion_dim, rng);
        Self {
            motion_conv,
            motion_lstm,
            occupancy_lstm,
            scene_cnn,
            scene_lstm,
            fusion,
        }
    }
}

/// Tape handles of one encoder's inputs.
#[derive(Debug, Clone)]
pub struct EncoderInputs {
    pub motion: Vec<Var>,
    pub occupancy: Vec<Var>,
    pub scene_images: Option<Var>,
    pub scene_index: Vec<Vec<usize>>,
}

impl EncoderInputs {
    fn place(tape: &mut Tape, motion: &[Mat], occupancy: &[Mat], scene: Option<&SceneBatch>) -> Self {
        Self {
            motion: motion.iter().map(|m| tape.leaf(m.clone())).collect(),
            occupancy: occupancy.iter().map(|m| tape.leaf(m.clone())).collect(),
            scene_images: scene.map(|s| tape.leaf(s.images.clone())),
            scene_index: scene.map(|s| s.index.clone()).unwrap_or_default(),
        }
    }
}

/// Every intermediate of one training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub past: EncoderInputs,
    pub future: EncoderInputs,
    pub target: Var,
    pub epsilon: Var,
    pub phi_x: Var,
    pub phi_y: Var,
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    /// Standardized predicted offsets `[B, 2 T']`.
    pub pred: Var,
    pub mse: Var,
    pub kl: Var,
    pub loss: Var,
}

#[derive(Debug, Clone)]
pub struct Mcenet {
    pub config: ModelConfig,
    pub branches: Branches,
    pub standardizer: Standardizer,
    pub params: ParamStore,
    x_encoder: Encoder,
    y_encoder: Encoder,
    latent_hidden: [Linear; 2],
    mu_head: Linear,
    log_var_head: Linear,
    decoder_fc: Linear,
    decoder_lstm: Lstm,
    decoder_head: Linear,
}

impl Mcenet {
    /// Builds a network with parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, branches: Branches, standardizer: Standardizer) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let x_encoder = Encoder::new(&mut store, "x_encoder", &config, &branches, &mut rng);
        let y_encoder = Encoder::new(&mut store, "y_encoder", &config, &branches, &mut rng);
        let f = config.fusion_dim;
        let latent_hidden = [
            Linear::new(&mut store, "latent.fc0", 2 * f, f, &mut rng),
            Linear::new(&mut store, "latent.fc1", f, f, &mut rng),
        ];
        let mu_head = Linear::new(&mut store, "latent.mu", f, config.latent_dim, &mut rng);
        let log_var_head = Linear::new(&mut store, "latent.log_var", f, config.latent_dim, &mut rng);
        let decoder_fc = Linear::new(&mut store, "decoder.fc", f + config.latent_dim, f, &mut rng);
        let decoder_lstm = Lstm::new(&mut store, "decoder.lstm", f, config.lstm_hidden, &mut rng);
        let decoder_head = Linear::new(&mut store, "decoder.head", config.lstm_hidden, 2, &mut rng);
        Ok(Self {
            config,
            branches,
            standardizer,
            params: store,
            x_encoder,
            y_encoder,
            latent_hidden,
            mu_head,
            log_var_head,
            decoder_fc,
            decoder_lstm,
            decoder_head,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.params.bind(tape)
    }

    pub fn place_past(&self, tape: &mut Tape, batch: &Batch) -> EncoderInputs {
        EncoderInputs::place(tape, &batch.past_motion, &batch.past_occupancy, batch.past_scene.as_ref())
    }

    pub fn place_future(&self, tape: &mut Tape, batch: &Batch) -> EncoderInputs {
        EncoderInputs::place(
            tape,
            &batch.future_motion,
            &batch.future_occupancy,
            batch.future_scene.as_ref(),
        )
    }

    fn encode(&self, enc: &Encoder, tape: &mut Tape, p: &Binding, inputs: &EncoderInputs) -> Var {
        let batch = tape.value(inputs.motion[0]).nrows();
        let k = self.config.conv1d_kernel;
        let left = (k - 1) / 2;
        let steps = inputs.motion.len() as isize;
        let pad = tape.leaf(Mat::zeros((batch, self.config.motion_features())));
        let mut motion_seq = Vec::with_capacity(inputs.motion.len());
        for t in 0..steps {
            let window: Vec<Var> = (0..k as isize)
                .map(|j| {
                    let src = t - left as isize + j;
                    if (0..steps).contains(&src) {
                        inputs.motion[src as usize]
                    } else {
                        pad
                    }
                })
                .collect();
            let stacked = tape.concat(&window);
            let conv = enc.motion_conv.forward(tape, p, stacked);
            motion_seq.push(tape.relu(conv));
        }
        let mut finals = vec![enc.motion_lstm.encode(tape, p, &motion_seq)];

        if let Some(lstm) = &enc.occupancy_lstm {
            finals.push(lstm.encode(tape, p, &inputs.occupancy));
        }
        if let (Some(cnn), Some(lstm), Some(images)) = (&enc.scene_cnn, &enc.scene_lstm, inputs.scene_images) {
            let mut x = images;
            for layer in cnn {
                let y = layer.forward(tape, p, x);
                x = tape.relu(y);
            }
            let channels = cnn.last().expect("three layers").geom.out_channels;
            let features = tape.spatial_mean(x, channels);
            let seq: Vec<Var> = inputs
                .scene_index
                .iter()
                .map(|rows| tape.gather_rows(features, rows))
                .collect();
            finals.push(lstm.encode(tape, p, &seq));
        }
        let fused = if finals.len() == 1 { finals[0] } else { tape.concat(&finals) };
        let out = enc.fusion.forward(tape, p, fused);
        tape.relu(out)
    }

    /// `phi_x`: fused encoding of the observed window, `[B, fusion_dim]`.
    pub fn encode_x(&self, tape: &mut Tape, p: &Binding, inputs: &EncoderInputs) -> Var {
        self.encode(&self.x_encoder, tape, p, inputs)
    }

    /// `phi_y`: fused encoding of the future window (training only).
    pub fn encode_y(&self, tape: &mut Tape, p: &Binding, inputs: &EncoderInputs) -> Var {
        self.encode(&self.y_encoder, tape, p, inputs)
    }

    /// Posterior mean and log-variance from both encodings.
    pub fn latent(&self, tape: &mut Tape, p: &Binding, phi_x: Var, phi_y: Var) -> (Var, Var) {
        let mut h = tape.concat(&[phi_x, phi_y]);
        for layer in &self.latent_hidden {
            let a = layer.forward(tape, p, h);
            h = tape.relu(a);
        }
        let mu = self.mu_head.forward(tape, p, h);
        let log_var = self.log_var_head.forward(tape, p, h);
        (mu, log_var)
    }

    pub fn reparameterize(tape: &mut Tape, mu: Var, log_var: Var, epsilon: Var) -> Var {
        let half = tape.scale(log_var, 0.5);
        let sigma = tape.exp(half);
        let noise = tape.mul(sigma, epsilon);
        tape.add(mu, noise)
    }

    /// Standardized offsets `[B, 2 T']` from `(phi_x, z)`.
    pub fn decode(&self, tape: &mut Tape, p: &Binding, phi_x: Var, z: Var) -> Var {
        let joined = tape.concat(&[phi_x, z]);
        let fc = self.decoder_fc.forward(tape, p, joined);
        let fused = tape.relu(fc);
        let inputs = vec![fused; self.config.pred_len];
        let hidden = self.decoder_lstm.forward(tape, p, &inputs);
        let steps: Vec<Var> = hidden
            .into_iter()
            .map(|h| self.decoder_head.forward(tape, p, h))
            .collect();
        tape.concat(&steps)
    }

    /// Batch mean of the closed-form KL to the standard normal.
    pub fn kl_term(tape: &mut Tape, mu: Var, log_var: Var) -> Var {
        let (batch, dim) = tape.value(mu).dim();
        let mu2 = tape.mul(mu, mu);
        let var = tape.exp(log_var);
        let a = tape.add(mu2, var);
        let b = tape.sub(a, log_var);
        let total = tape.sum(b);
        let shifted = tape.add_scalar(total, -((batch * dim) as f64));
        tape.scale(shifted, 0.5 / batch as f64)
    }

    pub fn mse_term(tape: &mut Tape, pred: Var, target: Var) -> Var {
        let diff = tape.sub(pred, target);
        let sq = tape.mul(diff, diff);
        tape.mean(sq)
    }

    /// Full training graph: both encoders, posterior, reparameterized draw
    /// with the given `epsilon [B, latent_dim]`, decoder and loss.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, batch: &Batch, epsilon: &Mat, kl_weight: f64) -> ForwardPass {
        let past = self.place_past(tape, batch);
        let future = self.place_future(tape, batch);
        let target = tape.leaf(batch.target.clone());
        let epsilon = tape.leaf(epsilon.clone());
        let phi_x = self.encode_x(tape, p, &past);
        let phi_y = self.encode_y(tape, p, &future);
        let (mu, log_var) = self.latent(tape, p, phi_x, phi_y);
        let z = Self::reparameterize(tape, mu, log_var, epsilon);
        let pred = self.decode(tape, p, phi_x, z);
        let mse = Self::mse_term(tape, pred, target);
        let kl = Self::kl_term(tape, mu, log_var);
        let weighted = tape.scale(kl, kl_weight);
        let loss = tape.add(mse, weighted);
        ForwardPass {
            past,
            future,
            target,
            epsilon,
            phi_x,
            phi_y,
            mu,
            log_var,
            z,
            pred,
            mse,
            kl,
            loss,
        }
    }
}
