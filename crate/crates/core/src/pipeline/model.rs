//! The full few-shot segmentation model.

use serde::{Deserialize, Serialize};

use crate::autograd::{Bindings, Graph, Var};
use crate::correlation::{self, Correlation4D};
use crate::crm::{self, CrmLevel, CrmParams};
use crate::decoder::{self, DecodeVars, DecoderParams, MemoryBank, PredictionMap};
use crate::encoder4d::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::fem::{self, FemParams};
use crate::init::seeded;
use crate::mask::BinaryMask;
use crate::pipeline::backbone::{ToyBackbone, LEVEL_WIDTHS, MAPS_PER_LEVEL};
use crate::pipeline::episode::{Episode, Shot};
use crate::tensor::{FeatureMap, ParamSet, Real, Tensor};

/// Component switches. All on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Feature enhancement before the global-context correlation.
    pub fem: bool,
    /// Global-context correlation channel.
    pub gc: bool,
    /// Dense correlations keep support background; off masks it out.
    pub keep_background: bool,
    /// Memory-bank prior for the decoder.
    pub bank: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            fem: true,
            gc: true,
            keep_background: true,
            bank: true,
        }
    }
}

impl Ablation {
    /// All 16 on/off combinations.
    pub fn lattice() -> Vec<Self> {
        (0..16u8)
            .map(|bits| Self {
                fem: bits & 1 != 0,
                gc: bits & 2 != 0,
                keep_background: bits & 4 != 0,
                bank: bits & 8 != 0,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Self-similarity neighbourhood (odd).
    pub k: usize,
    /// Number of multi-scale guidance convolutions.
    pub depth: usize,
    /// Encoder widths, fine to coarse.
    pub widths: [usize; 3],
    pub ablation: Ablation,
    pub backbone_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 5,
            depth: 2,
            widths: encoder4d::DEFAULT_WIDTHS,
            ablation: Ablation::default(),
            backbone_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_multiple_of(2) {
            return Err(Error::validation(format!("k must be odd, got {}", self.k)));
        }
        if self.depth == 0 {
            return Err(Error::validation("depth must be at least 1"));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w == 0 || w % encoder4d::GN_GROUPS != 0) {
            return Err(Error::validation(format!(
                "encoder width {w} must be a positive multiple of {}",
                encoder4d::GN_GROUPS
            )));
        }
        Ok(())
    }
}

/// Parameter handles of every trainable component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelLayout {
    pub fem: Option<[FemParams; 3]>,
    pub crm: Option<Vec<CrmParams>>,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl ModelLayout {
    pub fn new<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let a = cfg.ablation;
        let fem = a
            .fem
            .then(|| [0, 1, 2].map(|l| FemParams::new(ps, &format!("fem{l}"), LEVEL_WIDTHS[l], &mut rng)));
        let crm = if a.gc {
            Some(
                (0..3)
                    .map(|l| CrmParams::new(ps, &format!("crm{l}"), cfg.k, cfg.depth, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let gc = a.gc as usize;
        let in_channels = [0, 1, 2].map(|l| MAPS_PER_LEVEL[l] + gc);
        let encoder = EncoderParams::new(ps, "enc", in_channels, cfg.widths, &mut rng)?;
        let decoder = DecoderParams::new(ps, "dec", encoder.output_channels(), &mut rng);
        Ok(Self {
            fem,
            crm,
            encoder,
            decoder,
        })
    }
}

/// Constant inputs of one pyramid level for a (query, support) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelInputs<T = f32> {
    /// `[n, Hq, Wq, Hs, Ws]` stacked dense correlations.
    pub dense: Tensor<T>,
    /// Mask-filtered support map and query map fed to enhancement.
    pub fs: FeatureMap<T>,
    pub fq: FeatureMap<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeFeatures<T = f32> {
    pub levels: [LevelInputs<T>; 3],
    pub image_hw: (usize, usize),
}

impl EpisodeFeatures<f32> {
    pub fn compute(backbone: &ToyBackbone, query: &Shot, support: &Shot, ablation: &Ablation) -> Result<Self> {
        let fq = backbone.features(&query.image)?;
        let fs = backbone.features(&support.image)?;
        let mut dense = Vec::with_capacity(fq.len());
        for ((q, l), (s, _)) in fq.iter().zip(&fs) {
            let c = if ablation.keep_background {
                correlation::cosine_correlation(q, s)?
            } else {
                correlation::cosine_correlation(q, &correlation::mask_features(s, &support.mask)?)?
            };
            dense.push((c, *l));
        }
        let pyr = correlation::stack_and_group(&dense)?;
        let last = |feats: &[(FeatureMap<f32>, usize)], level: usize| {
            feats
                .iter()
                .rev()
                .find(|(_, l)| *l == level)
                .map(|(f, _)| f.clone())
                .expect("every level emits maps")
        };
        let levels = [0, 1, 2].map(|l| -> Result<LevelInputs<f32>> {
            Ok(LevelInputs {
                dense: pyr.levels[l].tensor().clone(),
                fs: correlation::mask_features(&last(&fs, l), &support.mask)?,
                fq: last(&fq, l),
            })
        });
        let [a, b, c] = levels;
        Ok(Self {
            levels: [a?, b?, c?],
            image_hw: query.dims(),
        })
    }
}

impl<T: Real> EpisodeFeatures<T> {
    pub fn cast<U: Real>(&self) -> EpisodeFeatures<U> {
        EpisodeFeatures {
            levels: [0, 1, 2].map(|l| LevelInputs {
                dense: self.levels[l].dense.cast(),
                fs: self.levels[l].fs.cast(),
                fq: self.levels[l].fq.cast(),
            }),
            image_hw: self.image_hw,
        }
    }

    /// Encoder / bank resolution.
    pub fn context_hw(&self) -> (usize, usize) {
        let d = self.levels[0].dense.dims();
        (d[1], d[2])
    }
}

/// Records enhancement and correlation reconstruction; returns the three
/// pyramid levels.
pub fn pyramid_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    layout: &ModelLayout,
    feats: &EpisodeFeatures<T>,
) -> Result<Vec<Var>> {
    let mut levels = Vec::with_capacity(3);
    for (l, inp) in feats.levels.iter().enumerate() {
        let dense = g.constant(inp.dense.clone());
        let enhanced = if layout.crm.is_some() {
            let (fs, fq) = (g.constant(inp.fs.clone()), g.constant(inp.fq.clone()));
            Some(match &layout.fem {
                Some(fem) => {
                    let (es, eq) = fem::fem_forward_graph(g, b, &fem[l], fs, fq)?;
                    (eq, es)
                }
                None => (fq, fs),
            })
        } else {
            None
        };
        levels.push(CrmLevel { dense, enhanced });
    }
    crm::crm_forward_graph(g, b, &levels, layout.crm.as_deref())
}

/// Records the forward pass; `prior` is `[1, h, w]` at context resolution.
pub fn forward_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    layout: &ModelLayout,
    feats: &EpisodeFeatures<T>,
    prior: &Tensor<T>,
) -> Result<DecodeVars> {
    let pyr = pyramid_graph(g, b, layout, feats)?;
    let ctx = encoder4d::encode_pyramid_graph(g, b, &layout.encoder, [pyr[0], pyr[1], pyr[2]])?;
    let prior = g.constant(prior.clone());
    decoder::residual_decode_graph(g, b, &layout.decoder, ctx, prior, feats.image_hw)
}

/// Per-pixel mean cross-entropy of one episode.
pub fn loss_graph<T: Real>(g: &mut Graph<T>, d: &DecodeVars, gt: &BinaryMask) -> Result<Var> {
    let ce = g.cross_entropy(d.probs, gt)?;
    Ok(g.scale(ce, 1.0 / (gt.height() * gt.width()) as f64))
}

pub struct FecaModel {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamSet<f32>,
    backbone: ToyBackbone,
}

impl FecaModel {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let layout = ModelLayout::new(&config, &mut params, seed)?;
        let backbone = ToyBackbone::new(config.backbone_seed);
        Ok(Self {
            config,
            layout,
            params,
            backbone,
        })
    }

    /// Model whose parameters are replaced by `params`, which must match the
    /// layout implied by `config` in names and dims.
    pub fn with_params(config: ModelConfig, params: ParamSet<f32>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::validation(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (id, name, t) in model.params.iter() {
            let other = params.get(id);
            if params.name(id) != name || other.dims() != t.dims() {
                return Err(Error::validation(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.dims(),
                    params.name(id),
                    other.dims()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn backbone(&self) -> &ToyBackbone {
        &self.backbone
    }

    pub fn features(&self, ep: &Episode, support: usize) -> Result<EpisodeFeatures<f32>> {
        let s = ep.supports.get(support).ok_or_else(|| {
            Error::validation(format!("episode has {} supports, asked for #{support}", ep.shots()))
        })?;
        EpisodeFeatures::compute(&self.backbone, &ep.query, s, &self.config.ablation)
    }

    /// Decoder prior for `qid`: the bank entry when the bank is enabled.
    pub fn prior(&self, bank: &MemoryBank, qid: &str, hw: (usize, usize)) -> Tensor<f32> {
        if self.config.ablation.bank {
            bank.fetch(qid, hw.0, hw.1)
        } else {
            Tensor::zeros([1, hw.0, hw.1])
        }
    }

    pub fn predict(&self, feats: &EpisodeFeatures<f32>, prior: &Tensor<f32>) -> Result<PredictionMap> {
        let mut g = Graph::new();
        let b = g.bind(&self.params);
        let d = forward_graph(&mut g, &b, &self.layout, feats, prior)?;
        decoder::prediction_from(&g, &d)
    }

    /// One pass with support `support`, reading and then updating the bank.
    pub fn forward_support(&self, ep: &Episode, support: usize, bank: &mut MemoryBank) -> Result<PredictionMap> {
        let feats = self.features(ep, support)?;
        let prior = self.prior(bank, &ep.query_id, feats.context_hw());
        let pred = self.predict(&feats, &prior)?;
        if self.config.ablation.bank {
            bank.update(&ep.query_id, &pred);
        }
        Ok(pred)
    }
}

/// Single-support forward pass through the whole model.
pub fn forward_episode(model: &FecaModel, ep: &Episode, bank: &mut MemoryBank) -> Result<PredictionMap> {
    model.forward_support(ep, 0, bank)
}

/// Correlation pyramid of an episode as the encoder sees it, for inspection.
pub fn episode_pyramid(model: &FecaModel, ep: &Episode) -> Result<[Correlation4D<f32>; 3]> {
    let feats = model.features(ep, 0)?;
    let mut g = Graph::new();
    let b = g.bind(&model.params);
    let pyr = pyramid_graph(&mut g, &b, &model.layout, &feats)?;
    let [a, b2, c] = [0, 1, 2].map(|l| Correlation4D::new(g.value(pyr[l]).clone()));
    Ok([a?, b2?, c?])
}
