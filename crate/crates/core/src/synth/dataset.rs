//! Persisted datasets: one tensor container plus one OBJ per sample and a
//! line-oriented manifest.
//!
//! ```text
//! version=1
//! samples=10
//! ...
//! split=train seed=... view=0 yaw=0 sample=samples/train_0000_v0.ircn mesh=samples/train_0000_v0.obj
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::render::{render_orthographic, RenderedSample, CAMERA};
use super::scene::{generate_scene_with, SceneKind, DEFAULT_MESH_RESOLUTION};
use crate::error::{Error, Result};
use crate::geometry::obj::{read_obj, write_obj};
use crate::kv::{parse_value, unknown_key, KeyValue};
use crate::nn::checkpoint;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TENSOR_NAMES: [&str; 7] = ["img_hi", "img_lo", "fnml_hi", "fnml_lo", "bnml_hi", "bnml_lo", "mask"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Yaw-rotated renders per scene, evenly spaced over a full turn.
    pub views_per_scene: usize,
    pub kind: SceneKind,
    pub mesh_resolution: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 8,
            n_test: 2,
            resolution: 128,
            seed: 0,
            views_per_scene: 1,
            kind: SceneKind::Body,
            mesh_resolution: DEFAULT_MESH_RESOLUTION,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 || self.resolution % 2 != 0 {
            return Err(Error::Config(format!(
                "resolution {} must be even so the low-resolution level is exact",
                self.resolution
            )));
        }
        if self.views_per_scene == 0 {
            return Err(Error::Config("views_per_scene must be positive".into()));
        }
        if self.mesh_resolution < 8 {
            return Err(Error::Config("mesh_resolution must be at least 8".into()));
        }
        Ok(())
    }
}

impl KeyValue for DatasetConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("n_train".into(), self.n_train.to_string()),
            ("n_test".into(), self.n_test.to_string()),
            ("resolution".into(), self.resolution.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("views_per_scene".into(), self.views_per_scene.to_string()),
            ("kind".into(), self.kind.name().into()),
            ("mesh_resolution".into(), self.mesh_resolution.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_test" => self.n_test = parse_value(key, value)?,
            "resolution" => self.resolution = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "views_per_scene" => self.views_per_scene = parse_value(key, value)?,
            "kind" => self.kind = SceneKind::parse(value)?,
            "mesh_resolution" => self.mesh_resolution = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub scene_seed: u64,
    pub view: usize,
    pub yaw: f64,
    /// Relative to the dataset root.
    pub sample: PathBuf,
    pub mesh: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub resolution: usize,
    pub seed: u64,
    pub camera: String,
    pub kind: SceneKind,
    pub views_per_scene: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Per-scene seed derived from the dataset seed (splitmix64 finalizer).
pub fn scene_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn view_yaw(view: usize, views: usize) -> f64 {
    std::f64::consts::TAU * view as f64 / views as f64
}

/// Renders the scene for `seed` rotated by `yaw` about +y.
pub fn render_scene_view(seed: u64, kind: SceneKind, mesh_resolution: usize, yaw: f64, resolution: usize) -> Result<RenderedSample> {
    let (_, mesh) = generate_scene_with(seed, kind, mesh_resolution)?;
    let mesh = if yaw == 0.0 { mesh } else { mesh.rotated_y(yaw) };
    render_orthographic(&mesh, resolution)
}

fn planned_entries(config: &DatasetConfig) -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for i in 0..config.n_train + config.n_test {
        let split = if i < config.n_train { Split::Train } else { Split::Test };
        let local = if i < config.n_train { i } else { i - config.n_train };
        for view in 0..config.views_per_scene {
            let stem = format!("samples/{}_{:04}_v{}", split.name(), local, view);
            out.push(ManifestEntry {
                split,
                scene_seed: scene_seed(config.seed, i as u64),
                view,
                yaw: view_yaw(view, config.views_per_scene),
                sample: PathBuf::from(format!("{stem}.ircn")),
                mesh: PathBuf::from(format!("{stem}.obj")),
            });
        }
    }
    out
}

/// Generates every sample in memory, in manifest order.
pub fn generate_samples(config: &DatasetConfig) -> Result<Vec<(ManifestEntry, RenderedSample)>> {
    config.validate()?;
    planned_entries(config)
        .into_par_iter()
        .map(|e| {
            let s = render_scene_view(e.scene_seed, config.kind, config.mesh_resolution, e.yaw, config.resolution)?;
            Ok((e, s))
        })
        .collect()
}

pub fn sample_tensors(sample: &RenderedSample) -> checkpoint::NamedTensors {
    let t = [
        &sample.img_hi,
        &sample.img_lo,
        &sample.fnml_hi,
        &sample.fnml_lo,
        &sample.bnml_hi,
        &sample.bnml_lo,
        &sample.mask,
    ];
    TENSOR_NAMES
        .iter()
        .zip(t)
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect()
}

pub fn save_sample(sample: &RenderedSample, tensor_path: &Path, mesh_path: &Path) -> Result<()> {
    checkpoint::save(tensor_path, &sample_tensors(sample))?;
    write_obj(&sample.mesh, mesh_path)
}

pub fn load_sample(tensor_path: &Path, mesh_path: &Path) -> Result<RenderedSample> {
    let tensors = checkpoint::load(tensor_path)?;
    let get = |name: &str| {
        checkpoint::find(&tensors, name)
            .cloned()
            .ok_or_else(|| Error::format(tensor_path, format!("missing tensor {name}")))
    };
    let sample = RenderedSample {
        img_hi: get("img_hi")?,
        img_lo: get("img_lo")?,
        fnml_hi: get("fnml_hi")?,
        fnml_lo: get("fnml_lo")?,
        bnml_hi: get("bnml_hi")?,
        bnml_lo: get("bnml_lo")?,
        mask: get("mask")?,
        mesh: read_obj(mesh_path)?,
    };
    let h = sample.img_hi.shape().get(1).copied().unwrap_or(0);
    let hi = [3, h, h];
    let lo = [3, h / 2, h / 2];
    let ok = sample.img_hi.shape() == hi
        && sample.fnml_hi.shape() == hi
        && sample.bnml_hi.shape() == hi
        && sample.img_lo.shape() == lo
        && sample.fnml_lo.shape() == lo
        && sample.bnml_lo.shape() == lo
        && sample.mask.shape() == [1, h, h];
    if !ok {
        return Err(Error::format(tensor_path, "inconsistent tensor shapes"));
    }
    Ok(sample)
}

/// Generates and persists a dataset under `out_dir`.
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(config)?;
    let dir = out_dir.join("samples");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (e, s) in &samples {
        save_sample(s, &out_dir.join(&e.sample), &out_dir.join(&e.mesh))?;
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        resolution: config.resolution,
        seed: config.seed,
        camera: CAMERA.to_string(),
        kind: config.kind,
        views_per_scene: config.views_per_scene,
        entries: samples.into_iter().map(|(e, _)| e).collect(),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn parse_kv(line: &str) -> BTreeMap<&str, &str> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .collect()
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "version={}\nsamples={}\nresolution={}\nseed={}\ncamera={}\nkind={}\nviews_per_scene={}\n",
            self.version,
            self.entries.len(),
            self.resolution,
            self.seed,
            self.camera,
            self.kind.name(),
            self.views_per_scene
        );
        for e in &self.entries {
            s.push_str(&format!(
                "split={} seed={} view={} yaw={} sample={} mesh={}\n",
                e.split.name(),
                e.scene_seed,
                e.view,
                e.yaw,
                e.sample.display(),
                e.mesh.display()
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |d: String| Error::format(origin, d);
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with("split=") {
                let kv = parse_kv(line);
                let field = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("line {}: missing {k}", ln + 1)));
                let num = |k: &str| -> Result<f64> {
                    field(k)?.parse().map_err(|_| bad(format!("line {}: bad {k}", ln + 1)))
                };
                entries.push(ManifestEntry {
                    split: Split::parse(field("split")?).ok_or_else(|| bad(format!("line {}: bad split", ln + 1)))?,
                    scene_seed: field("seed")?.parse().map_err(|_| bad(format!("line {}: bad seed", ln + 1)))?,
                    view: field("view")?.parse().map_err(|_| bad(format!("line {}: bad view", ln + 1)))?,
                    yaw: num("yaw")?,
                    sample: PathBuf::from(field("sample")?),
                    mesh: PathBuf::from(field("mesh")?),
                });
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| bad(format!("line {}: expected key=value", ln + 1)))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| header.get(k).ok_or_else(|| bad(format!("missing header {k}")));
        let parse_u = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad header {k}"))) };
        let version = parse_u("version")? as u32;
        if version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported manifest version {version}")));
        }
        let count = parse_u("samples")? as usize;
        if count != entries.len() {
            return Err(bad(format!("header lists {count} samples, found {}", entries.len())));
        }
        Ok(Self {
            version,
            resolution: parse_u("resolution")? as usize,
            seed: parse_u("seed")?,
            camera: get("camera")?.clone(),
            kind: SceneKind::parse(get("kind")?)?,
            views_per_scene: parse_u("views_per_scene")? as usize,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_entry(&self, root: &Path, entry: &ManifestEntry) -> Result<RenderedSample> {
        let s = load_sample(&root.join(&entry.sample), &root.join(&entry.mesh))?;
        if s.resolution() != self.resolution {
            return Err(Error::format(
                root.join(&entry.sample),
                format!("resolution {} differs from manifest {}", s.resolution(), self.resolution),
            ));
        }
        Ok(s)
    }

    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<RenderedSample>> {
        self.entries(split).map(|e| self.load_entry(root, e)).collect()
    }

    /// Checks seed uniqueness and that every listed file exists and parses.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.scene_seed, e.view)) {
                return Err(Error::Config(format!("duplicate sample seed {} view {}", e.scene_seed, e.view)));
            }
            self.load_entry(root, e)?;
        }
        Ok(())
    }
}
