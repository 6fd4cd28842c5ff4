use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, Palette, SegMap};
use super::scene::{render_scene, SceneParams, View, N_CATEGORIES};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PALETTE_FILE: &str = "palette.json";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const INFO_FILE: &str = "dataset.json";

/// Aligned aerial/ground images with their segmentation maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub aerial: Image,
    pub ground: Image,
    pub aerial_seg: SegMap,
    pub ground_seg: SegMap,
}

impl PairedSample {
    pub fn image(&self, view: View) -> &Image {
        match view {
            View::Aerial => &self.aerial,
            View::Ground => &self.ground,
        }
    }

    pub fn seg(&self, view: View) -> &SegMap {
        match view {
            View::Aerial => &self.aerial_seg,
            View::Ground => &self.ground_seg,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.aerial.same_shape(&self.ground)
            && (self.aerial_seg.height, self.aerial_seg.width) == (self.aerial.height, self.aerial.width)
            && (self.ground_seg.height, self.ground_seg.width) == (self.ground.height, self.ground.width);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("sample {} has misaligned views or maps", self.id)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest line; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub aerial: PathBuf,
    pub ground: PathBuf,
    pub aerial_seg: PathBuf,
    pub ground_seg: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetInfo {
    split: Split,
    resolution: usize,
    count: usize,
    seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub resolution: usize,
    /// Directory holding the manifest; entry paths resolve against it.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load a manifest (a `manifest.jsonl` file or the directory holding it),
    /// checking that ids are unique and every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let f = fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", file.display(), lineno + 1)))?;
            entries.push(entry);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", e.id)));
            }
            for p in [&e.aerial, &e.ground, &e.aerial_seg, &e.ground_seg] {
                if !root.join(p).is_file() {
                    return Err(Error::Manifest(format!("{}: missing file {}", e.id, p.display())));
                }
            }
        }
        let info_path = root.join(INFO_FILE);
        let (split, resolution) = if info_path.is_file() {
            let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
            let info: DatasetInfo = serde_json::from_str(&text)?;
            (info.split, info.resolution)
        } else {
            let res = match entries.first() {
                Some(e) => Image::load(&root.join(&e.aerial))?.height,
                None => 0,
            };
            (Split::Train, res)
        };
        Ok(Self { entries, split, resolution, root })
    }

    pub fn palette(&self) -> Result<Palette> {
        let p = self.root.join(PALETTE_FILE);
        if p.is_file() {
            Palette::from_json(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
        } else {
            Ok(Palette::default())
        }
    }

    pub fn load_sample(&self, entry: &ManifestEntry, palette: &Palette) -> Result<PairedSample> {
        let img = |p: &Path| Image::load(&self.root.join(p));
        let sample = PairedSample {
            id: entry.id.clone(),
            aerial: img(&entry.aerial)?,
            ground: img(&entry.ground)?,
            aerial_seg: SegMap::from_colorized(&img(&entry.aerial_seg)?, palette)?,
            ground_seg: SegMap::from_colorized(&img(&entry.ground_seg)?, palette)?,
        };
        sample.check()?;
        Ok(sample)
    }

    pub fn load_samples(&self) -> Result<Vec<PairedSample>> {
        let palette = self.palette()?;
        self.entries.iter().map(|e| self.load_sample(e, &palette)).collect()
    }

    /// Scene parameters of synthetic datasets, keyed by id.
    pub fn load_scenes(&self) -> Result<HashMap<String, SceneParams>> {
        #[derive(Deserialize)]
        struct Line {
            id: String,
            params: SceneParams,
        }
        let p = self.root.join(SCENES_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let line: Line = serde_json::from_str(l)?;
                Ok((line.id, line.params))
            })
            .collect()
    }
}

/// Render `n` scenes (categories cycled for a uniform histogram) and write
/// images, color-coded maps, palette and manifest under `out_dir`.
pub fn make_synthetic_dataset(n: usize, seed: u64, size: usize, out_dir: &Path) -> Result<DatasetManifest> {
    make_synthetic_dataset_split(n, seed, size, out_dir, Split::Train)
}

pub fn make_synthetic_dataset_split(
    n: usize,
    seed: u64,
    size: usize,
    out_dir: &Path,
    split: Split,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    if size != 64 && size != 256 {
        return Err(Error::InvalidSize(size));
    }
    let dirs = ["aerial", "ground", "aerial_seg", "ground_seg"];
    for d in dirs {
        let p = out_dir.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let palette = Palette::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    let mut scenes = String::new();
    for i in 0..n {
        let params = SceneParams::sample_in_category(i % N_CATEGORIES, &mut rng);
        let id = format!("s{seed}_{i:05}");
        let (aerial, aerial_seg) = render_scene(&params, View::Aerial, size)?;
        let (ground, ground_seg) = render_scene(&params, View::Ground, size)?;
        let file = format!("{id}.png");
        let entry = ManifestEntry {
            id: id.clone(),
            aerial: Path::new("aerial").join(&file),
            ground: Path::new("ground").join(&file),
            aerial_seg: Path::new("aerial_seg").join(&file),
            ground_seg: Path::new("ground_seg").join(&file),
        };
        aerial.save_png(&out_dir.join(&entry.aerial))?;
        ground.save_png(&out_dir.join(&entry.ground))?;
        aerial_seg.colorized().save_png(&out_dir.join(&entry.aerial_seg))?;
        ground_seg.colorized().save_png(&out_dir.join(&entry.ground_seg))?;
        scenes.push_str(&serde_json::to_string(&serde_json::json!({ "id": id, "params": params }))?);
        scenes.push('\n');
        entries.push(entry);
    }
    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&serde_json::to_string(e)?);
        manifest.push('\n');
    }
    let info = DatasetInfo { split, resolution: size, count: n, seed: Some(seed) };
    write_file(&out_dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_file(&out_dir.join(SCENES_FILE), scenes.as_bytes())?;
    write_file(&out_dir.join(PALETTE_FILE), palette.to_json().as_bytes())?;
    write_file(&out_dir.join(INFO_FILE), serde_json::to_string_pretty(&info)?.as_bytes())?;
    Ok(DatasetManifest { entries, split, resolution: size, root: out_dir.to_path_buf() })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
