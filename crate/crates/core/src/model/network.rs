use ndarray::{s, Array2, Array4, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, HeadKind};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{
    elu, elu_backward, l2_normalize_rows, l2_normalize_rows_backward, lit, rms_normalize, rms_normalize_backward,
    softmax_rows, softmax_rows_backward, Conv2d, ConvCache, ConvSpec, Dense, ParamId, ParamStore, Scalar,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Sheet,
    Audio,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Sheet => "sheet",
            Modality::Audio => "audio",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-b, b]` with `b = sqrt(6 / fan_in)`.
    FanIn(usize),
    Zeros,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

/// Collects parameter declarations; ids are handed out in declaration order
/// and match the layout of the store produced by [`Builder::init`].
#[derive(Default, Debug)]
pub struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    pub fn param(&mut self, name: String, shape: (usize, usize), init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    pub fn conv(&mut self, prefix: &str, spec: ConvSpec, zero: bool) -> Conv2d {
        let init = if zero { Init::Zeros } else { Init::FanIn(spec.fan_in()) };
        let w = self.param(format!("{prefix}.w"), (spec.c_out, spec.fan_in()), init);
        let b = self.param(format!("{prefix}.b"), (1, spec.c_out), Init::Zeros);
        Conv2d { spec, w, b }
    }

    pub fn dense(&mut self, prefix: &str, n_in: usize, n_out: usize) -> Dense {
        let w = self.param(format!("{prefix}.w"), (n_out, n_in), Init::FanIn(n_in));
        let b = self.param(format!("{prefix}.b"), (1, n_out), Init::Zeros);
        Dense { n_in, n_out, w, b }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Each tensor draws from its own stream keyed by its name, so a tensor's
    /// initial value does not depend on which other tensors exist.
    pub fn init(&self, seed: u64) -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        for spec in &self.specs {
            let t = match spec.init {
                Init::Zeros => Array2::zeros(spec.shape),
                Init::FanIn(fan_in) => {
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    let mut r = rng::rng(rng::derive_seed(seed, rng::str_hash(&spec.name)));
                    Array2::from_shape_simple_fn(spec.shape, || r.gen_range(-bound..=bound))
                }
            };
            ps.push(spec.name.clone(), t);
        }
        ps
    }

    /// Checks that `ps` has exactly the declared names and shapes.
    pub fn check<F: Scalar>(&self, ps: &ParamStore<F>) -> Result<()> {
        if ps.len() != self.specs.len() {
            return Err(Error::config(format!(
                "parameter count mismatch: expected {}, found {}",
                self.specs.len(),
                ps.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(ps.iter()) {
            if spec.name != name || spec.shape != t.dim() {
                return Err(Error::config(format!(
                    "parameter '{name}' {:?} does not match expected '{}' {:?}",
                    t.dim(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}

/// One encoder pathway: strided conv blocks, a pooled or dense head, and the
/// linear projection into the joint space followed by L2 normalization.
#[derive(Clone, Debug)]
pub struct Pathway {
    pub modality: Modality,
    pub input_hw: (usize, usize),
    convs: Vec<Conv2d>,
    out_chw: (usize, usize, usize),
    fc: Option<Dense>,
    pub feat_dim: usize,
    pub proj: Dense,
}

pub struct FeatureTape<F> {
    caches: Vec<ConvCache<F>>,
    acts: Vec<Array4<F>>,
    flat: Array2<F>,
    feat: Array2<F>,
}

pub struct EmbedTape<F> {
    feat: FeatureTape<F>,
    z: Array2<F>,
    norms: Vec<F>,
}

impl Pathway {
    pub fn build(b: &mut Builder, arch: &ArchConfig, modality: Modality) -> Self {
        let prefix = modality.prefix();
        let input_hw = match modality {
            Modality::Sheet => arch.sheet_input_hw(),
            Modality::Audio => arch.audio_input_hw(),
        };
        let (mut h, mut w) = input_hw;
        let mut c = 1;
        let mut convs = Vec::with_capacity(arch.blocks);
        for i in 0..arch.blocks {
            let spec = ConvSpec::square(c, arch.channels(i), arch.kernel, 2);
            (h, w) = spec.out_hw(h, w);
            c = spec.c_out;
            convs.push(b.conv(&format!("{prefix}.conv{i}"), spec, false));
        }
        let (fc, feat_dim) = match arch.head {
            HeadKind::Pooled => (None, c),
            HeadKind::Dense => (Some(b.dense(&format!("{prefix}.fc"), c * h * w, arch.hidden)), arch.hidden),
        };
        let proj = b.dense(&format!("{prefix}.proj"), feat_dim, arch.embedding_dim);
        Self { modality, input_hw, convs, out_chw: (c, h, w), fc, feat_dim, proj }
    }

    fn check_input<F>(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 1 || (h, w) != self.input_hw {
            return Err(Error::arg(format!(
                "{} pathway expects 1x{}x{} input, got {c}x{h}x{w}",
                self.modality.prefix(),
                self.input_hw.0,
                self.input_hw.1
            )));
        }
        Ok(())
    }

    /// Encoder features, i.e. everything before the joint projection.
    pub fn features<F: Scalar>(&self, ps: &ParamStore<F>, x: &Array4<F>) -> Result<(Array2<F>, FeatureTape<F>)> {
        self.check_input(x)?;
        let n = x.dim().0;
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut acts: Vec<Array4<F>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = acts.last().unwrap_or(x);
            let (y, cache) = conv.forward(ps, input);
            caches.push(cache);
            acts.push(elu(&y));
        }
        let last = acts.last().expect("at least one block");
        let (c, h, w) = self.out_chw;
        let (flat, feat) = match &self.fc {
            None => {
                let pooled = last.mean_axis(Axis(3)).unwrap().mean_axis(Axis(2)).unwrap();
                (pooled.clone(), pooled)
            }
            Some(fc) => {
                let flat = last.to_shape((n, c * h * w)).expect("contiguous").to_owned();
                let feat = elu(&fc.forward(ps, &flat));
                (flat, feat)
            }
        };
        Ok((feat.clone(), FeatureTape { caches, acts, flat, feat }))
    }

    pub fn backward_features<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &FeatureTape<F>,
        dfeat: &Array2<F>,
        grads: &mut ParamStore<F>,
        want_dx: bool,
    ) -> Option<Array4<F>> {
        let (c, h, w) = self.out_chw;
        let n = dfeat.nrows();
        let mut d = match &self.fc {
            None => {
                let inv = lit::<F>(1.0 / (h * w) as f64);
                Array4::from_shape_fn((n, c, h, w), |(i, ch, _, _)| dfeat[[i, ch]] * inv)
            }
            Some(fc) => {
                let dpre = elu_backward(&tape.feat, dfeat);
                let dflat = fc.backward(ps, &tape.flat, &dpre, grads, true).expect("requested");
                dflat.into_shape_with_order((n, c, h, w)).expect("contiguous")
            }
        };
        for i in (0..self.convs.len()).rev() {
            let dpre = elu_backward(&tape.acts[i], &d);
            let need = i > 0 || want_dx;
            match self.convs[i].backward(ps, &tape.caches[i], &dpre, grads, need) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    pub fn embed<F: Scalar>(&self, ps: &ParamStore<F>, x: &Array4<F>) -> Result<(Array2<F>, EmbedTape<F>)> {
        let (feat, ft) = self.features(ps, x)?;
        let (z, norms) = l2_normalize_rows(&self.proj.forward(ps, &feat));
        Ok((z.clone(), EmbedTape { feat: ft, z, norms }))
    }

    pub fn backward_embed<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &EmbedTape<F>,
        dz: &Array2<F>,
        grads: &mut ParamStore<F>,
        want_dx: bool,
    ) -> Option<Array4<F>> {
        let dproj = l2_normalize_rows_backward(&tape.z, &tape.norms, dz);
        let dfeat = self.proj.backward(ps, &tape.feat.feat, &dproj, grads, true).expect("requested");
        self.backward_features(ps, &tape.feat, &dfeat, grads, want_dx)
    }
}

/// Soft attention over spectrogram frames. Two temporal convolutions (the
/// first followed by a sum over frequency), a 1x1 scoring layer plus a
/// learned per-frame bias, scaled by `gain`, then a softmax across frames.
#[derive(Clone, Debug)]
pub struct AttentionNet {
    t1: Conv2d,
    t2: Conv2d,
    score: Conv2d,
    pos: ParamId,
    frames: usize,
    gain: f64,
}

pub struct AttentionTape<F> {
    c1: ConvCache<F>,
    a1: Array4<F>,
    c2: ConvCache<F>,
    a2: Array4<F>,
    c3: ConvCache<F>,
    mask: Array2<F>,
}

impl AttentionNet {
    pub fn build(b: &mut Builder, arch: &ArchConfig) -> Self {
        let k = arch.attention_kernel;
        let t1 = b.conv("attention.t1", ConvSpec::temporal(1, arch.attention_channels, k), false);
        let t2 = b.conv("attention.t2", ConvSpec::temporal(arch.attention_channels, arch.attention_hidden, k), false);
        let score = b.conv("attention.score", ConvSpec::temporal(arch.attention_hidden, 1, 1), true);
        let frames = arch.context.frames();
        let pos = b.param("attention.pos".into(), (1, frames), Init::Zeros);
        Self { t1, t2, score, pos, frames, gain: arch.attention_gain }
    }

    /// `x` is the RMS-normalized excerpt batch `[N, 1, F, T]`.
    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, x: &Array4<F>) -> (Array2<F>, AttentionTape<F>) {
        let n = x.dim().0;
        let (y1, c1) = self.t1.forward(ps, x);
        let a1 = elu(&y1);
        let pooled = a1.sum_axis(Axis(2)).insert_axis(Axis(2));
        let (y2, c2) = self.t2.forward(ps, &pooled);
        let a2 = elu(&y2);
        let (y3, c3) = self.score.forward(ps, &a2);
        let mut scores = y3.into_shape_with_order((n, self.frames)).expect("single channel");
        scores += &ps.get(self.pos).row(0);
        scores *= lit::<F>(self.gain);
        let mask = softmax_rows(&scores);
        (mask.clone(), AttentionTape { c1, a1, c2, a2, c3, mask })
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &AttentionTape<F>,
        dmask: &Array2<F>,
        grads: &mut ParamStore<F>,
    ) {
        let n = dmask.nrows();
        let dscores = softmax_rows_backward(&tape.mask, dmask) * lit::<F>(self.gain);
        grads.get_mut(self.pos).row_mut(0).zip_mut_with(&dscores.sum_axis(Axis(0)), |g, v| *g += *v);
        let dy3 = dscores.into_shape_with_order((n, 1, 1, self.frames)).expect("contiguous");
        let da2 = self.score.backward(ps, &tape.c3, &dy3, grads, true).expect("requested");
        let dy2 = elu_backward(&tape.a2, &da2);
        let dpooled = self.t2.backward(ps, &tape.c2, &dy2, grads, true).expect("requested");
        let da1 = dpooled.broadcast(tape.a1.dim()).expect("frequency broadcast").to_owned();
        let dy1 = elu_backward(&tape.a1, &da1);
        self.t1.backward(ps, &tape.c1, &dy1, grads, false);
    }
}

/// How the audio pathway weights frames before encoding.
#[derive(Clone, Copy, Debug)]
pub enum MaskMode<'a, F> {
    None,
    Learned,
    Fixed(&'a Array2<F>),
}

pub struct AudioTape<F> {
    raw: Array4<F>,
    attention: Option<AttentionTape<F>>,
    y: Array4<F>,
    scales: Vec<F>,
    path: EmbedTape<F>,
}

impl<F> AudioTape<F> {
    pub fn mask(&self) -> Option<&Array2<F>> {
        self.attention.as_ref().map(|a| &a.mask)
    }
}

/// The full two-pathway model with its optional attention branch.
#[derive(Clone, Debug)]
pub struct Network {
    pub arch: ArchConfig,
    pub sheet: Pathway,
    pub audio: Pathway,
    pub attention: Option<AttentionNet>,
    layout: Vec<ParamSpec>,
}

impl Network {
    pub fn new(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut b = Builder::default();
        let sheet = Pathway::build(&mut b, arch, Modality::Sheet);
        let audio = Pathway::build(&mut b, arch, Modality::Audio);
        let attention = arch.attention.then(|| AttentionNet::build(&mut b, arch));
        Ok(Self { arch: arch.clone(), sheet, audio, attention, layout: b.specs })
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn init(&self, seed: u64) -> ParamStore<f32> {
        Builder { specs: self.layout.clone() }.init(seed)
    }

    pub fn check(&self, ps: &ParamStore<impl Scalar>) -> Result<()> {
        Builder { specs: self.layout.clone() }.check(ps)
    }

    pub fn pathway(&self, m: Modality) -> &Pathway {
        match m {
            Modality::Sheet => &self.sheet,
            Modality::Audio => &self.audio,
        }
    }

    pub fn sheet_forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        x: &Array4<F>,
    ) -> Result<(Array2<F>, EmbedTape<F>)> {
        self.sheet.embed(ps, x)
    }

    pub fn sheet_backward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &EmbedTape<F>,
        dz: &Array2<F>,
        grads: &mut ParamStore<F>,
    ) {
        self.sheet.backward_embed(ps, tape, dz, grads, false);
    }

    /// `raw` is the unnormalized excerpt batch `[N, 1, F, T]`. The excerpt is
    /// optionally weighted per frame, then scaled to unit RMS before the
    /// pathway sees it.
    pub fn audio_forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        raw: &Array4<F>,
        mode: MaskMode<'_, F>,
    ) -> Result<(Array2<F>, AudioTape<F>)> {
        self.audio.check_input(raw)?;
        let (n, _, _, t) = raw.dim();
        let (mask, attention) = match mode {
            MaskMode::None => (None, None),
            MaskMode::Learned => {
                let att = self
                    .attention
                    .as_ref()
                    .ok_or_else(|| Error::config("attention requested but the architecture has no attention branch"))?;
                let (xhat, _) = rms_normalize(raw);
                let (m, tape) = att.forward(ps, &xhat);
                (Some(m), Some(tape))
            }
            MaskMode::Fixed(m) => {
                if m.dim() != (n, t) {
                    return Err(Error::arg(format!("mask shape {:?} does not match {n}x{t}", m.dim())));
                }
                (Some(m.clone()), None)
            }
        };
        let weighted = match &mask {
            None => raw.clone(),
            Some(m) => {
                let mut w = raw.clone();
                for (mut img, mrow) in w.outer_iter_mut().zip(m.outer_iter()) {
                    for mut row in img.slice_mut(s![0, .., ..]).outer_iter_mut() {
                        row *= &mrow;
                    }
                }
                w
            }
        };
        let (y, scales) = rms_normalize(&weighted);
        let (z, path) = self.audio.embed(ps, &y)?;
        Ok((z, AudioTape { raw: raw.clone(), attention, y, scales, path }))
    }

    pub fn audio_backward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &AudioTape<F>,
        dz: &Array2<F>,
        grads: &mut ParamStore<F>,
    ) {
        let Some(att_tape) = &tape.attention else {
            self.audio.backward_embed(ps, &tape.path, dz, grads, false);
            return;
        };
        let att = self.attention.as_ref().expect("tape implies attention branch");
        let dy = self.audio.backward_embed(ps, &tape.path, dz, grads, true).expect("requested");
        let dw = rms_normalize_backward(&tape.y, &tape.scales, &dy);
        let (n, _, _, t) = tape.raw.dim();
        let mut dmask = Array2::<F>::zeros((n, t));
        for ((mut drow, dimg), rimg) in dmask.outer_iter_mut().zip(dw.outer_iter()).zip(tape.raw.outer_iter()) {
            let prod = &dimg.slice(s![0, .., ..]) * &rimg.slice(s![0, .., ..]);
            drow += &prod.sum_axis(Axis(0));
        }
        att.backward(ps, att_tape, &dmask, grads);
    }
}

/// Sheet batch: ink-positive (`1 - x`) and average-pooled by `factor`.
pub fn sheet_batch<F: Scalar>(snippets: &[&Grid], hw: (usize, usize), factor: usize) -> Result<Array4<F>> {
    let mut out = Array4::<F>::zeros((snippets.len(), 1, hw.0, hw.1));
    let inv = 1.0 / (factor * factor) as f64;
    for (i, g) in snippets.iter().enumerate() {
        if g.dim() != (hw.0 * factor, hw.1 * factor) {
            return Err(Error::arg(format!(
                "sheet snippet must be {}x{}, got {:?}",
                hw.0 * factor,
                hw.1 * factor,
                g.dim()
            )));
        }
        let mut dst = out.slice_mut(s![i, 0, .., ..]);
        for ((r, c), v) in g.indexed_iter() {
            dst[[r / factor, c / factor]] += lit::<F>((1.0 - *v as f64) * inv);
        }
    }
    Ok(out)
}

/// Audio batch `[N, 1, F, T]` straight from the excerpts.
pub fn audio_batch<F: Scalar>(excerpts: &[&Grid], hw: (usize, usize)) -> Result<Array4<F>> {
    let mut out = Array4::<F>::zeros((excerpts.len(), 1, hw.0, hw.1));
    for (i, g) in excerpts.iter().enumerate() {
        if g.dim() != hw {
            return Err(Error::arg(format!("audio excerpt must be {}x{}, got {:?}", hw.0, hw.1, g.dim())));
        }
        out.slice_mut(s![i, 0, .., ..]).assign(&g.mapv(|v| lit::<F>(v as f64)));
    }
    Ok(out)
}
