//! Slice segmenters: external plugin processes speaking the file protocol in
//! [`protocol`], and in-process oracles built from a reference label volume.

pub mod protocol;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::distance::{class_distances, squared_edt};
use crate::error::{Error, Result};
use crate::multiplanar::{SliceBatch, SlicePrediction, ViewGrid, LABEL_FILL};
use crate::phantom::CounterRng;
use crate::volume::{LabelVolume, Mask};

pub const DEFAULT_TIMEOUT_SECS: f64 = 600.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalPlugin {
    /// Program followed by its fixed arguments; `--input`/`--output` are appended.
    pub command: Vec<String>,
    pub timeout: Duration,
}

impl ExternalPlugin {
    /// Splits a command line with POSIX shell quoting rules.
    pub fn from_command_line(line: &str) -> Result<Self> {
        let command = shlex::split(line)
            .ok_or_else(|| Error::InvalidArgument(format!("unbalanced quotes in plugin command {line:?}")))?;
        if command.is_empty() {
            return Err(Error::InvalidArgument("empty plugin command".into()));
        }
        Ok(Self {
            command,
            timeout: Duration::from_secs_f64(DEFAULT_TIMEOUT_SECS),
        })
    }
}

/// Emits one-hot probabilities of the nearest reference label at every
/// requested pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSegmenter {
    pub reference: Arc<LabelVolume>,
}

impl OracleSegmenter {
    pub fn num_classes(&self) -> usize {
        self.reference.num_classes
    }

    /// Channel-last one-hot map for slice `k` of `grid`.
    pub fn predict_slice(&self, grid: &ViewGrid, k: usize) -> Vec<f32> {
        let d = grid.pixels_per_side;
        let nc = self.num_classes();
        let mut out = vec![0.0f32; d * d * nc];
        for b in 0..d {
            for a in 0..d {
                let p = grid.point(a as f64, b as f64, k as f64);
                let label = self.reference.sample_nearest(p, LABEL_FILL);
                out[(b * d + a) * nc + usize::from(label)] = 1.0;
            }
        }
        out
    }

    pub fn predict(&self, grid: &ViewGrid, slices: std::ops::Range<usize>) -> SlicePrediction {
        let mut pred = SlicePrediction::zeros(grid.pixels_per_side, self.num_classes());
        for k in slices {
            let probs = self.predict_slice(grid, k);
            pred.slice_mut(k).copy_from_slice(&probs);
        }
        pred
    }

    /// Serves a manifest as a plugin would. The manifest must carry its grid.
    pub fn serve(&self, manifest_path: &Path, output_dir: &Path) -> Result<()> {
        let manifest = protocol::SliceManifest::read(manifest_path)?;
        if manifest.num_classes != self.num_classes() {
            return Err(Error::Protocol {
                id: String::new(),
                reason: format!(
                    "manifest asks for {} classes, reference has {}",
                    manifest.num_classes,
                    self.num_classes()
                ),
            });
        }
        let grid = manifest.grid.as_ref().ok_or_else(|| Error::Protocol {
            id: String::new(),
            reason: "oracle needs the manifest grid".into(),
        })?;
        std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
        for entry in &manifest.entries {
            let k = entry.slice_index.ok_or_else(|| Error::Protocol {
                id: entry.id.clone(),
                reason: "oracle needs slice_index".into(),
            })?;
            protocol::write_probs(output_dir, &entry.id, &self.predict_slice(grid, k))?;
        }
        protocol::write_done(output_dir)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmenterHandle {
    External(ExternalPlugin),
    Oracle(OracleSegmenter),
}

pub fn oracle_perfect(reference: LabelVolume) -> SegmenterHandle {
    SegmenterHandle::Oracle(OracleSegmenter {
        reference: Arc::new(reference),
    })
}

/// Deterministic damage applied to a reference before it serves as an oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    /// Fraction of boundary-band voxels of paired classes given the partner label.
    #[serde(default)]
    pub swap_fraction: f64,
    /// Band depth (voxels) measured from the class boundary.
    #[serde(default = "default_band")]
    pub swap_band_vox: f64,
    #[serde(default)]
    pub pairs: Vec<(u8, u8)>,
    /// Grow every class into background by this radius (nearest class wins).
    #[serde(default)]
    pub dilate_vox: u32,
    #[serde(default)]
    pub floaters: usize,
    #[serde(default = "default_floater_radius")]
    pub floater_radius_vox: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_band() -> f64 {
    2.0
}

fn default_floater_radius() -> u32 {
    2
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            swap_fraction: 0.0,
            swap_band_vox: default_band(),
            pairs: Vec::new(),
            dilate_vox: 0,
            floaters: 0,
            floater_radius_vox: default_floater_radius(),
            seed: 0,
        }
    }
}

impl Corruption {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.swap_fraction) {
            return Err(Error::InvalidArgument(format!(
                "swap fraction {} must lie in [0, 1]",
                self.swap_fraction
            )));
        }
        if !(self.swap_band_vox >= 0.0) {
            return Err(Error::InvalidArgument("swap band must be >= 0".into()));
        }
        crate::postprocess::SymmetryPairs::new(self.pairs.clone()).validate(num_classes)
    }
}

fn ball_offsets(radius: u32) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dk in -r..=r {
        for dj in -r..=r {
            for di in -r..=r {
                if di * di + dj * dj + dk * dk <= r * r {
                    out.push([di, dj, dk]);
                }
            }
        }
    }
    out
}

/// Applies, in order: boundary-band swaps between paired classes, dilation of
/// every class into background, and injection of floating blobs.
pub fn corrupt_labels(reference: &LabelVolume, c: &Corruption) -> Result<LabelVolume> {
    c.validate(reference.num_classes)?;
    let g = reference.geometry.clone();
    let mut labels = reference.labels.clone();
    let rng = CounterRng::new(c.seed);

    if c.swap_fraction > 0.0 {
        let swap_rng = rng.fork(1);
        let band2 = c.swap_band_vox * c.swap_band_vox;
        for &(a, b) in &c.pairs {
            for (class, partner) in [(a, b), (b, a)] {
                let outside = Mask {
                    dims: g.dims,
                    data: reference.labels.iter().map(|&l| l != class).collect(),
                };
                let depth2 = squared_edt(&outside, [1.0; 3]);
                for (i, &l) in reference.labels.iter().enumerate() {
                    if l == class && depth2[i] <= band2 && swap_rng.uniform(i as u64) < c.swap_fraction {
                        labels[i] = partner;
                    }
                }
            }
        }
    }

    if c.dilate_vox > 0 {
        let current = LabelVolume::new(g.clone(), labels.clone(), reference.num_classes)?;
        let field = class_distances(&current);
        let r = f64::from(c.dilate_vox);
        for (i, l) in labels.iter_mut().enumerate() {
            if *l == 0 && field.d1[i] <= r {
                *l = field.nearest_class[i];
            }
        }
    }

    if c.floaters > 0 {
        let classes: Vec<u8> = (1..reference.num_classes as u8).collect();
        if classes.is_empty() {
            return Err(Error::InvalidArgument("floaters need a foreground class".into()));
        }
        let place_rng = rng.fork(2);
        let radius = c.floater_radius_vox;
        let offsets = ball_offsets(radius);
        let mut counter = 0u64;
        for n in 0..c.floaters {
            let fg = Mask {
                dims: g.dims,
                data: labels.iter().map(|&l| l != 0).collect(),
            };
            let clear2 = {
                let d = f64::from(2 * radius + 2);
                d * d
            };
            let dist2 = squared_edt(&fg, [1.0; 3]);
            let mut placed = false;
            for _ in 0..10_000 {
                let center: [usize; 3] = std::array::from_fn(|a| {
                    let span = g.dims[a].saturating_sub(2 * radius as usize);
                    let u = place_rng.uniform(counter + a as u64);
                    radius as usize + ((u * span as f64) as usize).min(span.saturating_sub(1))
                });
                counter += 3;
                if (0..3).any(|a| center[a] + radius as usize >= g.dims[a]) {
                    continue;
                }
                let ci = g.index(center[0], center[1], center[2]);
                if dist2[ci] <= clear2 {
                    continue;
                }
                let class = classes[(place_rng.uniform(1_000_000_007 + n as u64) * classes.len() as f64) as usize % classes.len()];
                for off in &offsets {
                    let p: [usize; 3] = std::array::from_fn(|a| (center[a] as isize + off[a]) as usize);
                    labels[g.index(p[0], p[1], p[2])] = class;
                }
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::InvalidArgument(format!("no room to place floater {n}")));
            }
        }
    }

    LabelVolume::new(g, labels, reference.num_classes)
}

pub fn oracle_corrupted(reference: &LabelVolume, corruption: &Corruption) -> Result<SegmenterHandle> {
    Ok(oracle_perfect(corrupt_labels(reference, corruption)?))
}

/// Per-call settings for [`run_segmenter`].
#[derive(Clone, Debug)]
pub struct RunContext {
    /// Scratch directory owned by this call (created if missing).
    pub work_dir: PathBuf,
    pub num_classes: usize,
}

fn pump(mut reader: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = reader.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn run_external(plugin: &ExternalPlugin, batch: &SliceBatch, ctx: &RunContext) -> Result<SlicePrediction> {
    let input_dir = ctx.work_dir.join("input");
    let output_dir = ctx.work_dir.join("output");
    for dir in [&input_dir, &output_dir] {
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::create_dir_all(&output_dir).map_err(|e| Error::io(&output_dir, e))?;
    let manifest_path = protocol::write_batch(batch, ctx.num_classes, &input_dir)?;
    let manifest = protocol::SliceManifest::read(&manifest_path)?;

    let mut child = Command::new(&plugin.command[0])
        .args(&plugin.command[1..])
        .arg("--input")
        .arg(&manifest_path)
        .arg("--output")
        .arg(&output_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::PluginFailed {
            status: "spawn failure".into(),
            stderr: format!("{}: {e}", plugin.command[0]),
        })?;
    let stderr = pump(child.stderr.take().expect("stderr piped"));

    let start = Instant::now();
    let status = loop {
        match child.try_wait().map_err(|e| Error::io(&plugin.command[0], e))? {
            Some(status) => break status,
            None if start.elapsed() >= plugin.timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::PluginTimeout {
                    seconds: plugin.timeout.as_secs_f64(),
                });
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    let stderr = stderr.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::PluginFailed {
            status: status.to_string(),
            stderr: stderr.trim_end().to_string(),
        });
    }
    let outputs = protocol::validate_outputs(&manifest, &output_dir)?;
    protocol::assemble_prediction(&manifest, outputs, batch.grid.pixels_per_side)
}

/// Runs the segmenter over every slice of the batch.
pub fn run_segmenter(handle: &SegmenterHandle, batch: &SliceBatch, ctx: &RunContext) -> Result<SlicePrediction> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty slice batch".into()));
    }
    match handle {
        SegmenterHandle::Oracle(oracle) => {
            if oracle.num_classes() != ctx.num_classes {
                return Err(Error::Mismatch(format!(
                    "oracle has {} classes, run expects {}",
                    oracle.num_classes(),
                    ctx.num_classes
                )));
            }
            Ok(oracle.predict(&batch.grid, batch.slices.clone()))
        }
        SegmenterHandle::External(plugin) => run_external(plugin, batch, ctx),
    }
}
