//! Affine-coupling normalizing flows over flattened 2D pose segments.
//!
//! Direction convention: `encode` maps data to latent, `decode` maps latent
//! back to data. The log-determinant returned by `encode` is that of the
//! data→latent Jacobian, so `log p(x) = log N(encode(x); 0, I) + log_det`.

mod train;

pub use train::{segment_columns, train_flow, train_flow_set, train_flow_target, FlowEpoch, FlowSetTraining, FlowTrainConfig, FlowTraining, SampleSource};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::nn::{Init, Mlp, MlpTape, Network, Parameters};

/// `ln(2π)`.
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which keypoints a flow models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FlowTarget {
    Full,
    Segment(Segment),
}

impl FlowTarget {
    pub const ALL: [FlowTarget; 5] = [
        FlowTarget::Full,
        FlowTarget::Segment(Segment::Legs),
        FlowTarget::Segment(Segment::Torso),
        FlowTarget::Segment(Segment::Left),
        FlowTarget::Segment(Segment::Right),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowTarget::Full => "full",
            FlowTarget::Segment(s) => s.as_str(),
        }
    }
}

impl fmt::Display for FlowTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlowTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            Ok(FlowTarget::Full)
        } else {
            Ok(FlowTarget::Segment(s.parse()?))
        }
    }
}

impl From<FlowTarget> for String {
    fn from(t: FlowTarget) -> String {
        t.as_str().to_string()
    }
}

impl TryFrom<String> for FlowTarget {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub blocks: usize,
    /// Hidden widths of each scale and translation subnet.
    pub hidden: Vec<usize>,
    /// Raw scale outputs pass through `bound · tanh(raw / bound)`.
    pub scale_bound: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            blocks: 8,
            hidden: vec![1024, 1024],
            scale_bound: 2.0,
        }
    }
}

/// Transforms the `transformed` coordinates conditioned on the `pass`
/// coordinates: `y_t = x_t · exp(s(x_p)) + t(x_p)`, `y_p = x_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingBlock {
    pub pass: Vec<usize>,
    pub transformed: Vec<usize>,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
}

struct BlockTape {
    x_t: Array2<f64>,
    scale_tape: MlpTape,
    shift_tape: MlpTape,
    squashed: Array2<f64>,
    exp_s: Array2<f64>,
}

/// Cached activations of [`FlowModel::encode_with_tape`].
pub struct FlowTape {
    fingerprint: u64,
    batch: usize,
    blocks: Vec<BlockTape>,
}

fn select_columns(x: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    x.select(Axis(1), cols)
}

impl CouplingBlock {
    fn scale_of(&self, raw: &Array2<f64>, bound: f64) -> (Array2<f64>, Array2<f64>) {
        let squashed = raw.mapv(|r| (r / bound).tanh());
        let s = &squashed * bound;
        (s, squashed)
    }

    fn forward(&self, x: &Array2<f64>, bound: f64) -> Result<(Array2<f64>, Array1<f64>, BlockTape)> {
        let xp = select_columns(x, &self.pass);
        let x_t = select_columns(x, &self.transformed);
        let (raw, scale_tape) = self.scale_net.forward(&xp)?;
        let (shift, shift_tape) = self.shift_net.forward(&xp)?;
        let (s, squashed) = self.scale_of(&raw, bound);
        let exp_s = s.mapv(f64::exp);
        let y_t = &x_t * &exp_s + &shift;
        let mut y = x.clone();
        for (k, &c) in self.transformed.iter().enumerate() {
            y.column_mut(c).assign(&y_t.column(k));
        }
        let log_det = s.sum_axis(Axis(1));
        Ok((
            y,
            log_det,
            BlockTape {
                x_t,
                scale_tape,
                shift_tape,
                squashed,
                exp_s,
            },
        ))
    }

    fn inverse(&self, y: &Array2<f64>, bound: f64) -> Result<(Array2<f64>, Array1<f64>)> {
        let yp = select_columns(y, &self.pass);
        let y_t = select_columns(y, &self.transformed);
        let raw = self.scale_net.predict(&yp)?;
        let shift = self.shift_net.predict(&yp)?;
        let (s, _) = self.scale_of(&raw, bound);
        let x_t = (&y_t - &shift) * &s.mapv(|v| (-v).exp());
        let mut x = y.clone();
        for (k, &c) in self.transformed.iter().enumerate() {
            x.column_mut(c).assign(&x_t.column(k));
        }
        Ok((x, -s.sum_axis(Axis(1))))
    }

    fn backward(
        &self,
        tape: &BlockTape,
        dy: &Array2<f64>,
        d_log_det: &Array1<f64>,
        bound: f64,
        grads: Option<&mut CouplingBlock>,
    ) -> Result<Array2<f64>> {
        let dy_t = select_columns(dy, &self.transformed);
        let dx_t = &dy_t * &tape.exp_s;
        let mut ds = &dy_t * &tape.x_t * &tape.exp_s;
        ds += &d_log_det.view().insert_axis(Axis(1));
        let d_raw = &ds * &tape.squashed.mapv(|q| 1.0 - q * q);
        let _ = bound; // d/draw [bound·tanh(raw/bound)] does not depend on the bound
        let (g_scale, g_shift) = match grads {
            Some(g) => (Some(&mut g.scale_net), Some(&mut g.shift_net)),
            None => (None, None),
        };
        let dxp = self.scale_net.backward(&tape.scale_tape, &d_raw, g_scale)?
            + self.shift_net.backward(&tape.shift_tape, &dy_t, g_shift)?;
        let mut dx = dy.clone();
        for (k, &c) in self.transformed.iter().enumerate() {
            dx.column_mut(c).assign(&dx_t.column(k));
        }
        for (k, &c) in self.pass.iter().enumerate() {
            let mut col = dx.column_mut(c);
            col += &dxp.column(k);
        }
        Ok(dx)
    }
}

impl Parameters for CouplingBlock {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.scale_net.visit(f);
        self.shift_net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.scale_net.visit_mut(f);
        self.shift_net.visit_mut(f);
    }
}

/// Pass-through/transformed partitions for each coupling block.
///
/// Blocks come in pairs; a pair splits a fixed permutation of the dimensions
/// into halves and each block of the pair transforms one half. The first pair
/// uses the identity permutation; later pairs use seeded shuffles.
pub fn coupling_partitions(dim: usize, blocks: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let half = dim / 2;
    (0..blocks)
        .map(|k| {
            let pair = k / 2;
            let mut perm: Vec<usize> = (0..dim).collect();
            if pair > 0 {
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(0x6d61_736b_0000 + pair as u64));
            }
            let (a, b) = perm.split_at(half);
            let (mut pass, mut transformed) = if k % 2 == 0 {
                (a.to_vec(), b.to_vec())
            } else {
                (b.to_vec(), a.to_vec())
            };
            pass.sort_unstable();
            transformed.sort_unstable();
            (pass, transformed)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub target: FlowTarget,
    pub dim: usize,
    pub scale_bound: f64,
    pub blocks: Vec<CouplingBlock>,
}

impl FlowModel {
    pub const INIT_SCHEME: &'static str = "kaiming-uniform hidden layers, zero output layers (identity flow)";

    /// Hidden layers Kaiming-uniform, subnet outputs zero: the flow starts as
    /// the identity map.
    pub fn new<R: Rng + ?Sized>(target: FlowTarget, dim: usize, config: &FlowConfig, rng: &mut R) -> Self {
        Self::with_output_init(target, dim, config, Init::Zeros, rng)
    }

    pub fn with_output_init<R: Rng + ?Sized>(
        target: FlowTarget,
        dim: usize,
        config: &FlowConfig,
        output_init: Init,
        rng: &mut R,
    ) -> Self {
        let blocks = coupling_partitions(dim, config.blocks)
            .into_iter()
            .map(|(pass, transformed)| {
                let mut dims = vec![pass.len()];
                dims.extend(&config.hidden);
                dims.push(transformed.len());
                CouplingBlock {
                    scale_net: Mlp::new(&dims, Init::KaimingUniform, output_init, rng),
                    shift_net: Mlp::new(&dims, Init::KaimingUniform, output_init, rng),
                    pass,
                    transformed,
                }
            })
            .collect();
        Self {
            target,
            dim,
            scale_bound: config.scale_bound,
            blocks,
        }
    }

    pub fn architecture(&self) -> serde_json::Value {
        let hidden: Vec<usize> = self.blocks.first().map_or(Vec::new(), |b| {
            b.scale_net.layers[..b.scale_net.layers.len() - 1]
                .iter()
                .map(|l| l.output_dim())
                .collect()
        });
        serde_json::json!({
            "type": "affine-coupling-flow",
            "target": self.target.as_str(),
            "dim": self.dim,
            "blocks": self.blocks.len(),
            "hidden": hidden,
            "activation": "relu",
            "scale_bound": self.scale_bound,
        })
    }

    fn check(&self, x: &Array2<f64>) -> Result<()> {
        crate::error::ensure_len("flow input", self.dim, x.ncols())
    }

    /// Data → latent, with the per-sample log-determinant of that map.
    pub fn encode_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (z, ld, _) = self.encode_with_tape(x)?;
        Ok((z, ld))
    }

    pub fn encode_with_tape(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, FlowTape)> {
        self.check(x)?;
        let mut h = x.clone();
        let mut log_det = Array1::zeros(x.nrows());
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, ld, t) = b.forward(&h, self.scale_bound)?;
            log_det += &ld;
            tapes.push(t);
            h = y;
        }
        Ok((
            h,
            log_det,
            FlowTape {
                fingerprint: self.fingerprint(),
                batch: x.nrows(),
                blocks: tapes,
            },
        ))
    }

    /// Gradient of a loss through `encode`, given its gradients with respect
    /// to the latent and to each sample's log-determinant. Returns the input
    /// gradient; parameter gradients go into `grads` when given.
    pub fn backward(
        &self,
        tape: &FlowTape,
        dz: &Array2<f64>,
        d_log_det: &Array1<f64>,
        mut grads: Option<&mut FlowModel>,
    ) -> Result<Array2<f64>> {
        if tape.blocks.len() != self.blocks.len() || tape.fingerprint != self.fingerprint() {
            return Err(Error::StaleTape("flow parameters changed since forward".into()));
        }
        if dz.nrows() != tape.batch || d_log_det.len() != tape.batch {
            return Err(Error::StaleTape("batch size differs from forward".into()));
        }
        let mut d = dz.clone();
        for i in (0..self.blocks.len()).rev() {
            let g = grads.as_deref_mut().map(|g| &mut g.blocks[i]);
            d = self.blocks[i].backward(&tape.blocks[i], &d, d_log_det, self.scale_bound, g)?;
        }
        Ok(d)
    }

    /// Latent → data, with the per-sample log-determinant of that map (the
    /// exact negation of the encode log-determinant at the matching point).
    pub fn decode_batch(&self, z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check(z)?;
        let mut h = z.clone();
        let mut log_det = Array1::zeros(z.nrows());
        for b in self.blocks.iter().rev() {
            let (x, ld) = b.inverse(&h, self.scale_bound)?;
            log_det += &ld;
            h = x;
        }
        Ok((h, log_det))
    }

    /// Per-sample negative log-likelihood `−log p(x)`.
    pub fn nll_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let (z, ld) = self.encode_batch(x)?;
        Ok(self.nll_from_latent(&z, &ld))
    }

    fn nll_from_latent(&self, z: &Array2<f64>, log_det: &Array1<f64>) -> Array1<f64> {
        let half_sq = z.map_axis(Axis(1), |r| 0.5 * r.dot(&r));
        half_sq + 0.5 * self.dim as f64 * LN_2PI - log_det
    }

    /// NLL per sample and the gradient of `Σ_b weights[b] · nll[b]` with
    /// respect to the inputs (and parameters when `grads` is given).
    pub fn nll_with_grad(
        &self,
        x: &Array2<f64>,
        weights: &Array1<f64>,
        grads: Option<&mut FlowModel>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let (z, ld, tape) = self.encode_with_tape(x)?;
        let nll = self.nll_from_latent(&z, &ld);
        let dz = &z * &weights.view().insert_axis(Axis(1));
        let dld = -weights;
        let dx = self.backward(&tape, &dz, &dld, grads)?;
        Ok((nll, dx))
    }

    fn row(&self, x: &[f64]) -> Result<Array2<f64>> {
        crate::error::ensure_len("flow input", self.dim, x.len())?;
        Ok(Array2::from_shape_vec((1, self.dim), x.to_vec()).expect("shape checked"))
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.encode_batch(&self.row(x)?)?;
        Ok((z.into_raw_vec_and_offset().0, ld[0]))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&self.row(z)?)?.0.into_raw_vec_and_offset().0)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let lp = -self.nll_batch(&self.row(x)?)?[0];
        if lp.is_finite() {
            Ok(lp)
        } else {
            Err(Error::NonFinite("flow log-density".into()))
        }
    }

    /// `decode(z + σ · z ⊙ ε)` with `z = encode(x)` and fresh `ε ~ N(0, I)`.
    pub fn sample_perturbed_batch<R: Rng + ?Sized>(&self, x: &Array2<f64>, sigma: f64, rng: &mut R) -> Result<Array2<f64>> {
        let (z, _) = self.encode_batch(x)?;
        let noise = Array2::from_shape_fn(z.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
        let perturbed = &z + &(&z * &noise * sigma);
        Ok(self.decode_batch(&perturbed)?.0)
    }

    pub fn sample_perturbed<R: Rng + ?Sized>(&self, x: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self
            .sample_perturbed_batch(&self.row(x)?, sigma, rng)?
            .into_raw_vec_and_offset()
            .0)
    }

    /// Decodes unconditioned standard-normal latents.
    pub fn sample_prior<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Array2<f64>> {
        let z = Array2::from_shape_fn((count, self.dim), |_| rng.sample::<f64, _>(StandardNormal));
        Ok(self.decode_batch(&z)?.0)
    }
}

impl Parameters for FlowModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.blocks.iter().for_each(|b| b.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
    }
}

/// The five flows: one over the full pose and one per segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSet {
    pub full: FlowModel,
    /// Indexed by [`Segment::index`].
    pub segments: Vec<FlowModel>,
}

impl FlowSet {
    pub fn segment(&self, seg: Segment) -> &FlowModel {
        &self.segments[seg.index()]
    }

    pub fn get(&self, target: FlowTarget) -> &FlowModel {
        match target {
            FlowTarget::Full => &self.full,
            FlowTarget::Segment(s) => self.segment(s),
        }
    }
}
