//! Procedural datasets with fixations drawn from the model itself under
//! planted bias parameters, so every fitted quantity has a known truth.

use super::{Fixation, FixationDataset, StimulusMeta};
use crate::centerbias::CenterBiasModel;
use crate::error::{config_err, Result};
use crate::grid::sample::sample_with;
use crate::grid::{encode_fmap, softmax_normalize, Grid, GridStack};
use crate::image::Image;
use crate::model::{forward, output_geometry, BuiltinFeatures, DatasetBiasParams, FeatureBank, ReadoutParams, ScaleSpec};
use crate::rng::SeededRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

/// Centered Gaussian plus uniform prior used to generate fixations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCenterBias {
    pub std_x: f64,
    pub std_y: f64,
    pub uniform_weight: f64,
}

impl Default for PlantedCenterBias {
    fn default() -> Self {
        PlantedCenterBias {
            std_x: 0.2,
            std_y: 0.2,
            uniform_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub px_per_dva: f64,
    pub subjects: usize,
    pub fixations_per_subject: usize,
    pub color: bool,
    pub scales: Vec<ScaleSpec>,
    /// Planted scale weights (normalized internally).
    pub scale_weights: Vec<f64>,
    pub priority: f64,
    pub sigma_dva: f64,
    pub cb_weight: f64,
    pub centerbias: PlantedCenterBias,
    /// Seed of the planted readout; datasets sharing it share the priority structure.
    pub readout_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synth".into(),
            images: 20,
            width: 64,
            height: 64,
            px_per_dva: 20.0,
            subjects: 10,
            fixations_per_subject: 10,
            color: true,
            scales: vec![ScaleSpec::absolute(5.0), ScaleSpec::absolute(10.0), ScaleSpec::absolute(20.0)],
            scale_weights: vec![0.2, 0.3, 0.5],
            priority: 1.0,
            sigma_dva: 0.5,
            cb_weight: 1.0,
            centerbias: PlantedCenterBias::default(),
            readout_seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 || self.subjects == 0 || self.fixations_per_subject == 0 {
            return Err(config_err!("synthetic spec needs images, subjects and fixations"));
        }
        if self.width < 8 || self.height < 8 || !(self.px_per_dva > 0.0) {
            return Err(config_err!("synthetic images must be at least 8x8 with positive px/dva"));
        }
        if self.scales.is_empty() || self.scales.len() != self.scale_weights.len() {
            return Err(config_err!("one planted weight per scale is required"));
        }
        if self.scale_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(config_err!("planted scale weights must be positive"));
        }
        if !(self.priority > 0.0 && self.sigma_dva > 0.0) {
            return Err(config_err!("planted priority and blur must be positive"));
        }
        let cb = &self.centerbias;
        if !(cb.std_x > 0.0 && cb.std_y > 0.0 && (0.0..=1.0).contains(&cb.uniform_weight)) {
            return Err(config_err!("invalid planted center bias"));
        }
        Ok(())
    }

    /// Planted readout shared by every dataset with this readout seed.
    pub fn planted_readout(&self) -> ReadoutParams {
        ReadoutParams::init(crate::model::BUILTIN_CHANNELS, self.readout_seed)
    }

    /// Planted bias parameters of the generator.
    pub fn planted_bias(&self) -> DatasetBiasParams {
        let z: f64 = self.scale_weights.iter().sum();
        let cb = CenterBiasModel::gaussian(
            format!("{}-planted", self.name),
            self.centerbias.std_x,
            self.centerbias.std_y,
            self.centerbias.uniform_weight,
        );
        let mut b = DatasetBiasParams::init(self.scales.len(), cb);
        b.scale_logits = self.scale_weights.iter().map(|w| (w / z).ln()).collect();
        b.log_priority = self.priority.ln();
        b.log_sigma = self.sigma_dva.ln();
        b.cb_weight = self.cb_weight;
        b
    }
}

pub struct SynthOutput {
    pub dataset: FixationDataset,
    pub images: HashMap<String, Arc<Image>>,
    /// Generating distribution per stimulus on the model's output grid.
    pub densities: Vec<Grid>,
    pub readout: ReadoutParams,
    pub bias: DatasetBiasParams,
}

impl SynthOutput {
    pub fn provider(&self) -> BuiltinFeatures {
        BuiltinFeatures::with_images(self.images.clone())
    }

    /// Writes images, manifest, fixations and generating densities (FMAP) to `dir`.
    pub fn save(&mut self, dir: &Path) -> Result<std::path::PathBuf> {
        let img_dir = dir.join("images");
        let dens_dir = dir.join("densities");
        for d in [&img_dir, &dens_dir] {
            std::fs::create_dir_all(d).map_err(|e| crate::error::SalError::io(d, e))?;
        }
        for (s, dens) in self.dataset.stimuli.iter_mut().zip(&self.densities) {
            let img = &self.images[&s.stimulus_id];
            let ext = if img.is_color() { "ppm" } else { "pgm" };
            let p = img_dir.join(format!("{}.{ext}", s.stimulus_id));
            img.save_pnm(&p)?;
            s.image_path = Some(p);
            let bytes = encode_fmap(&GridStack::from_grids(std::slice::from_ref(dens))?);
            crate::io::write_atomic(&dens_dir.join(format!("{}.fmap", s.stimulus_id)), &bytes)?;
        }
        super::save_dataset(&self.dataset, dir)
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Blob-and-edge texture, quantized to 8 bits so saved images reload exactly.
fn procedural_image(w: usize, h: usize, color: bool, rng: &mut SeededRng) -> Image {
    let ch = if color { 3 } else { 1 };
    let mut planes = vec![vec![0.0; w * h]; ch];
    for p in planes.iter_mut() {
        let base = rng.uniform_range(0.3, 0.7);
        p.iter_mut().for_each(|v| *v = base);
    }
    let blobs = 3 + rng.below(6);
    for _ in 0..blobs {
        let cx = rng.uniform() * w as f64;
        let cy = rng.uniform() * h as f64;
        let r = rng.uniform_range(1.0, w.max(h) as f64 / 6.0);
        let amp = rng.uniform_range(-0.45, 0.45);
        let tint: Vec<f64> = (0..ch).map(|_| rng.uniform_range(0.3, 1.0)).collect();
        for (k, p) in planes.iter_mut().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    p[y * w + x] += amp * tint[k] * (-d2 / (2.0 * r * r)).exp();
                }
            }
        }
    }
    let edges = 1 + rng.below(3);
    for _ in 0..edges {
        let x0 = rng.below(w);
        let y0 = rng.below(h);
        let x1 = (x0 + 2 + rng.below(w / 2)).min(w);
        let y1 = (y0 + 2 + rng.below(h / 2)).min(h);
        let step = rng.uniform_range(-0.25, 0.25);
        for p in planes.iter_mut() {
            for y in y0..y1 {
                for x in x0..x1 {
                    p[y * w + x] += step;
                }
            }
        }
    }
    let mut data = vec![0.0; w * h * ch];
    for (k, p) in planes.iter().enumerate() {
        for (i, &v) in p.iter().enumerate() {
            data[i * ch + k] = quantize(v);
        }
    }
    Image::new(w, h, ch, data).expect("consistent buffer")
}

/// Generates images and fixations sampled from the planted model.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let readout = spec.planted_readout();
    let bias = spec.planted_bias();
    let stimuli: Vec<StimulusMeta> = (0..spec.images)
        .map(|i| StimulusMeta::new(format!("{}_{i:04}", spec.name), spec.width, spec.height, spec.px_per_dva))
        .collect();
    let images: HashMap<String, Arc<Image>> = stimuli
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = SeededRng::derived(seed, i as u64);
            (s.stimulus_id.clone(), Arc::new(procedural_image(spec.width, spec.height, spec.color, &mut rng)))
        })
        .collect();
    let provider = BuiltinFeatures::with_images(images.clone());
    let shell = FixationDataset {
        name: spec.name.clone(),
        stimuli: stimuli.clone(),
        fixations: Vec::new(),
        provenance: Vec::new(),
    };
    let bank = FeatureBank::build(&provider, &shell, &spec.scales)?;
    let geom = output_geometry(&stimuli[0]);
    let log_cb = Arc::new(bias.centerbias.render(&geom));

    let per_image: Vec<(Grid, Vec<Fixation>)> = stimuli
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<(Grid, Vec<Fixation>)> {
            let trace = forward(bank.get(&s.stimulus_id)?, s, &bias, &readout, log_cb.clone())?;
            let density = softmax_normalize(&trace.logits)?;
            let mut rng = SeededRng::derived(seed, (1u64 << 32) | i as u64);
            let sx = spec.width as f64 / geom.grid_w as f64;
            let sy = spec.height as f64 / geom.grid_h as f64;
            let mut fixations = Vec::with_capacity(spec.subjects * spec.fixations_per_subject);
            for subj in 0..spec.subjects {
                let draws = sample_with(&density, spec.fixations_per_subject, &mut rng);
                for (k, (gx, gy)) in draws.into_iter().enumerate() {
                    let cell = (gy.floor() as usize) * geom.grid_w + gx.floor() as usize;
                    let (mut x, mut y) = (gx * sx, gy * sy);
                    if geom.cell_of(x, y) != cell {
                        x = (gx.floor() + 0.5) * sx;
                        y = (gy.floor() + 0.5) * sy;
                    }
                    fixations.push(Fixation {
                        stimulus_id: s.stimulus_id.clone(),
                        subject_id: format!("s{subj:02}"),
                        x,
                        y,
                        ordinal: k as u32,
                    });
                }
            }
            Ok((density, fixations))
        })
        .collect::<Result<_>>()?;

    let mut densities = Vec::with_capacity(spec.images);
    let mut fixations = Vec::with_capacity(spec.images * spec.subjects * spec.fixations_per_subject);
    for (d, f) in per_image {
        densities.push(d);
        fixations.extend(f);
    }
    let mut dataset = FixationDataset::new(spec.name.clone(), stimuli, fixations)?;
    dataset.provenance.push(format!("synthetic seed {seed}"));
    Ok(SynthOutput {
        dataset,
        images,
        densities,
        readout,
        bias,
    })
}
