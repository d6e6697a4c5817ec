//! Emulated segmentation output: pixel rows of the ILM, the RPE and the
//! needle tip, sampled at the B-scan rate with Gaussian noise, impulse
//! outliers, dropouts and needle occlusion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};
use crate::motion::LayerDepths;
use crate::registration::AxisOrientation;
use crate::rng::{channel, rng_for};
use crate::table::{fmt_sig, parse_f64, parse_opt_u32, write_preamble, CsvTable};

pub const SAMPLE_HEADER: &str = "t_s,ilm_px,rpe_px,needle_px,valid_mask";

pub const MASK_ILM: u8 = 1;
pub const MASK_RPE: u8 = 2;
pub const MASK_NEEDLE: u8 = 4;

/// Axial pixel geometry of the OCT window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingGeometry {
    pub image_height_px: u32,
    pub mm_per_px: f64,
    /// Robot-frame depth of pixel row 0 (mm).
    pub window_top_z: f64,
}

impl Default for ImagingGeometry {
    fn default() -> Self {
        Self {
            image_height_px: 1024,
            mm_per_px: 3.379 / 1024.0,
            window_top_z: 0.5,
        }
    }
}

impl ImagingGeometry {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("imaging geometry", &[self.mm_per_px, self.window_top_z])?;
        if self.image_height_px == 0 || self.mm_per_px <= 0.0 {
            return Err(invalid("imaging geometry", "image height and mm_per_px must be positive"));
        }
        Ok(())
    }

    /// Axial field depth (mm).
    pub fn field_depth(&self) -> f64 {
        self.mm_per_px * self.image_height_px as f64
    }

    /// Pixel rows grow with robot-frame depth in this simulated rig.
    pub fn orientation(&self) -> AxisOrientation {
        AxisOrientation::Aligned
    }

    /// Continuous (unquantized) pixel row of depth `z`.
    pub fn row_of(&self, z: f64) -> f64 {
        (z - self.window_top_z) / self.mm_per_px
    }

    pub fn px_to_mm(&self, p: f64) -> f64 {
        self.window_top_z + p * self.mm_per_px
    }

    /// Nearest pixel row of depth `z`; may fall outside the image.
    pub fn mm_to_px(&self, z: f64) -> i64 {
        self.row_of(z).round() as i64
    }

    pub fn contains_row(&self, p: f64) -> bool {
        p >= 0.0 && p < self.image_height_px as f64
    }
}

/// Noise model of the segmentation output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationNoise {
    /// Gaussian noise on the layer channels (px).
    pub sd_px: f64,
    /// Gaussian noise on the needle-tip channel (px).
    pub needle_sd_px: f64,
    pub outlier_prob: f64,
    /// Magnitude of an impulse outlier (px); its sign is random.
    pub outlier_scale_px: f64,
    /// Extra layer noise while the needle is below the ILM (px).
    pub occlusion_extra_sd_px: f64,
    /// Probability that a whole frame is missing.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for ObservationNoise {
    fn default() -> Self {
        Self {
            sd_px: 3.0,
            needle_sd_px: 1.5,
            outlier_prob: 0.01,
            outlier_scale_px: 50.0,
            occlusion_extra_sd_px: 6.0,
            dropout_prob: 0.01,
            seed: 0,
        }
    }
}

impl ObservationNoise {
    /// Exact quantized projection of the ground truth.
    pub fn ideal() -> Self {
        Self {
            sd_px: 0.0,
            needle_sd_px: 0.0,
            outlier_prob: 0.0,
            outlier_scale_px: 0.0,
            occlusion_extra_sd_px: 0.0,
            dropout_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "observation noise",
            &[
                self.sd_px,
                self.needle_sd_px,
                self.outlier_prob,
                self.outlier_scale_px,
                self.occlusion_extra_sd_px,
                self.dropout_prob,
            ],
        )?;
        if [self.sd_px, self.needle_sd_px, self.outlier_scale_px, self.occlusion_extra_sd_px]
            .iter()
            .any(|v| *v < 0.0)
        {
            return Err(invalid("observation noise", "standard deviations must be non-negative"));
        }
        for (name, p) in [("outlier_prob", self.outlier_prob), ("dropout_prob", self.dropout_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("observation noise", format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One segmentation result. Missing channels are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub t: f64,
    pub ilm_px: Option<u32>,
    pub rpe_px: Option<u32>,
    pub needle_px: Option<u32>,
    /// Ground-truth diagnostic: an impulse was injected into some channel.
    /// Never consulted by the processing pipeline.
    pub is_outlier: bool,
}

impl DepthSample {
    pub fn valid_mask(&self) -> u8 {
        let mut m = 0;
        if self.ilm_px.is_some() {
            m |= MASK_ILM;
        }
        if self.rpe_px.is_some() {
            m |= MASK_RPE;
        }
        if self.needle_px.is_some() {
            m |= MASK_NEEDLE;
        }
        m
    }
}

struct ChannelDraw {
    row: f64,
    outlier: bool,
}

fn noisy_row(
    exact_row: f64,
    sd: f64,
    noise: &ObservationNoise,
    index: u64,
    chan: u64,
    height: u32,
) -> ChannelDraw {
    let mut rng = rng_for(noise.seed, index, chan);
    let g: f64 = rng.sample(StandardNormal);
    let mut row = exact_row + sd * g;
    let mut outlier = false;
    if noise.outlier_prob > 0.0 && rng.random::<f64>() < noise.outlier_prob {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        row += sign * noise.outlier_scale_px;
        outlier = true;
    }
    ChannelDraw {
        row: row.round().clamp(0.0, (height - 1) as f64),
        outlier,
    }
}

/// Produces the segmentation output for frame `index` taken at time `t`.
///
/// Every draw is keyed by `(noise.seed, index, channel)`.
pub fn observe(
    truth: LayerDepths,
    needle_z: f64,
    geometry: &ImagingGeometry,
    noise: &ObservationNoise,
    t: f64,
    index: u64,
) -> Result<DepthSample> {
    ensure_finite("observation input", &[truth.ilm, truth.rpe, needle_z, t])?;
    let mut sample = DepthSample {
        t,
        ilm_px: None,
        rpe_px: None,
        needle_px: None,
        is_outlier: false,
    };
    if noise.dropout_prob > 0.0
        && rng_for(noise.seed, index, channel::OBS_DROPOUT).random::<f64>() < noise.dropout_prob
    {
        return Ok(sample);
    }
    let h = geometry.image_height_px;
    let layer_sd = if needle_z > truth.ilm {
        noise.sd_px.hypot(noise.occlusion_extra_sd_px)
    } else {
        noise.sd_px
    };
    let ilm = noisy_row(geometry.row_of(truth.ilm), layer_sd, noise, index, channel::OBS_ILM, h);
    let rpe = noisy_row(geometry.row_of(truth.rpe), layer_sd, noise, index, channel::OBS_RPE, h);
    sample.ilm_px = Some(ilm.row as u32);
    sample.rpe_px = Some(rpe.row as u32);
    sample.is_outlier = ilm.outlier || rpe.outlier;

    let needle_row = geometry.row_of(needle_z);
    if geometry.contains_row(needle_row) {
        let nd = noisy_row(needle_row, noise.needle_sd_px, noise, index, channel::OBS_NEEDLE, h);
        sample.needle_px = Some(nd.row as u32);
        sample.is_outlier |= nd.outlier;
    }
    Ok(sample)
}

fn fmt_opt(v: Option<u32>) -> String {
    v.map(|p| p.to_string()).unwrap_or_default()
}

pub fn samples_to_csv(samples: &[DepthSample], comments: &[String]) -> String {
    let mut out = String::with_capacity(samples.len() * 28);
    write_preamble(&mut out, comments, SAMPLE_HEADER);
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_sig(s.t, 9),
            fmt_opt(s.ilm_px),
            fmt_opt(s.rpe_px),
            fmt_opt(s.needle_px),
            s.valid_mask()
        ));
    }
    out
}

/// Parses a sample log. The outlier diagnostic is not stored and reads back as `false`.
pub fn samples_from_csv(text: &str) -> Result<(Vec<DepthSample>, Vec<String>)> {
    let table = CsvTable::parse(text, SAMPLE_HEADER)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, cells) in &table.rows {
        let s = DepthSample {
            t: parse_f64(*line, &cells[0])?,
            ilm_px: parse_opt_u32(*line, &cells[1])?,
            rpe_px: parse_opt_u32(*line, &cells[2])?,
            needle_px: parse_opt_u32(*line, &cells[3])?,
            is_outlier: false,
        };
        let mask: u8 = cells[4].parse().map_err(|_| crate::Error::Parse {
            line: *line,
            message: format!("bad valid_mask `{}`", cells[4]),
        })?;
        if mask != s.valid_mask() {
            return Err(crate::Error::Parse {
                line: *line,
                message: "valid_mask disagrees with the present channels".into(),
            });
        }
        out.push(s);
    }
    Ok((out, table.comments))
}
