//! Dataset manifests, the `annotations.jsonl` wire format, image-level
//! train/test splitting and curriculum training plans.
//!
//! `annotations.jsonl` layout, one JSON object per line:
//!
//! ```text
//! {"type":"header","schema_version":1,"name":..,"classes":[..],"seed":..,"config_digest":..,"n_images":..,"n_annotations":..}
//! {"type":"image","image_id":..,"path":..,"width":..,"height":..}          (n_images lines)
//! {"type":"annotation","image_id":..,"class_name":..,"bbox":[xmin,ymin,xmax,ymax],"source":"synthetic","difficult":false}
//! ```
//!
//! Boxes are integer pixels with inclusive corners.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelBox;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub class_name: String,
    pub bbox: PixelBox,
    pub source: Source,
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<Annotation>,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Header {
        schema_version: u32,
        name: String,
        classes: Vec<String>,
        seed: u64,
        config_digest: String,
        n_images: usize,
        n_annotations: usize,
    },
    Image(ImageEntry),
    Annotation(Annotation),
}

/// Borrowing twin of [`Line`] so writing does not clone every record.
#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LineRef<'a> {
    Header {
        schema_version: u32,
        name: &'a str,
        classes: &'a [String],
        seed: u64,
        config_digest: &'a str,
        n_images: usize,
        n_annotations: usize,
    },
    Image(&'a ImageEntry),
    Annotation(&'a Annotation),
}

impl DatasetManifest {
    /// Checks every structural invariant. `line` numbers in errors refer to
    /// the `annotations.jsonl` layout of this manifest.
    pub fn validate(&self) -> Result<()> {
        let schema = |line, message: String| Err(Error::Schema { line, message });
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return schema(1, "class list must be sorted and unique".into());
        }
        let mut ids = HashSet::with_capacity(self.images.len());
        for (i, img) in self.images.iter().enumerate() {
            if !ids.insert(img.image_id.as_str()) {
                return schema(i + 2, format!("duplicate image_id `{}`", img.image_id));
            }
        }
        let classes: HashSet<&str> = self.classes.iter().map(String::as_str).collect();
        let first_ann_line = self.images.len() + 2;
        for (i, a) in self.annotations.iter().enumerate() {
            let line = first_ann_line + i;
            if !a.bbox.is_well_ordered() {
                return schema(line, format!("bbox {:?} has max < min", <[i64; 4]>::from(a.bbox)));
            }
            if !ids.contains(a.image_id.as_str()) {
                return schema(line, format!("annotation references unknown image `{}`", a.image_id));
            }
            if !classes.contains(a.class_name.as_str()) {
                return Err(Error::UnknownClass {
                    line,
                    class: a.class_name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn annotations_by_image(&self) -> BTreeMap<&str, Vec<&Annotation>> {
        let mut map: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
        for a in &self.annotations {
            map.entry(a.image_id.as_str()).or_default().push(a);
        }
        map
    }

    /// Sub-manifest holding `keep` images (in manifest order) and their annotations.
    fn subset(&self, name: String, keep: &HashSet<&str>) -> DatasetManifest {
        DatasetManifest {
            name,
            classes: self.classes.clone(),
            images: self
                .images
                .iter()
                .filter(|i| keep.contains(i.image_id.as_str()))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(a.image_id.as_str()))
                .cloned()
                .collect(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
        }
    }

    pub fn write_jsonl(&self, w: impl Write) -> Result<()> {
        self.write_jsonl_inner(w).map_err(|e| Error::io("<annotations>", e))
    }

    fn write_jsonl_inner(&self, w: impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        let header = LineRef::Header {
            schema_version: SCHEMA_VERSION,
            name: &self.name,
            classes: &self.classes,
            seed: self.seed,
            config_digest: &self.config_digest,
            n_images: self.images.len(),
            n_annotations: self.annotations.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for img in &self.images {
            serde_json::to_writer(&mut w, &LineRef::Image(img))?;
            w.write_all(b"\n")?;
        }
        for a in &self.annotations {
            serde_json::to_writer(&mut w, &LineRef::Annotation(a))?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<DatasetManifest> {
        let mut manifest: Option<DatasetManifest> = None;
        let mut expected = (0, 0);
        for (i, line) in r.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| Error::Schema {
                line: n,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Schema {
                line: n,
                message: e.to_string(),
            })?;
            match (parsed, manifest.as_mut()) {
                (
                    Line::Header {
                        schema_version,
                        name,
                        classes,
                        seed,
                        config_digest,
                        n_images,
                        n_annotations,
                    },
                    None,
                ) => {
                    if schema_version != SCHEMA_VERSION {
                        return Err(Error::Schema {
                            line: n,
                            message: format!("unsupported schema_version {schema_version}"),
                        });
                    }
                    expected = (n_images, n_annotations);
                    manifest = Some(DatasetManifest {
                        name,
                        classes,
                        images: Vec::with_capacity(n_images),
                        annotations: Vec::with_capacity(n_annotations),
                        seed,
                        config_digest,
                    });
                }
                (Line::Header { .. }, Some(_)) => {
                    return Err(Error::Schema {
                        line: n,
                        message: "second header line".into(),
                    })
                }
                (_, None) => {
                    return Err(Error::Schema {
                        line: n,
                        message: "first line must be the header".into(),
                    })
                }
                (Line::Image(img), Some(m)) => {
                    if !m.annotations.is_empty() {
                        return Err(Error::Schema {
                            line: n,
                            message: "image lines must precede annotation lines".into(),
                        });
                    }
                    m.images.push(img);
                }
                (Line::Annotation(a), Some(m)) => m.annotations.push(a),
            }
        }
        let m = manifest.ok_or(Error::Schema {
            line: 1,
            message: "missing header".into(),
        })?;
        if (m.images.len(), m.annotations.len()) != expected {
            return Err(Error::Schema {
                line: 1,
                message: format!(
                    "header announces {} images / {} annotations, found {} / {}",
                    expected.0,
                    expected.1,
                    m.images.len(),
                    m.annotations.len()
                ),
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Versioned<'a> {
            schema_version: u32,
            #[serde(flatten)]
            manifest: &'a DatasetManifest,
        }
        let mut s = serde_json::to_string_pretty(&Versioned {
            schema_version: SCHEMA_VERSION,
            manifest: self,
        })
        .expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<DatasetManifest> {
        #[derive(Deserialize)]
        struct Versioned {
            schema_version: u32,
            #[serde(flatten)]
            manifest: DatasetManifest,
        }
        let v: Versioned = serde_json::from_str(s).map_err(|e| Error::Schema {
            line: e.line(),
            message: e.to_string(),
        })?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                line: 1,
                message: format!("unsupported schema_version {}", v.schema_version),
            });
        }
        v.manifest.validate()?;
        Ok(v.manifest)
    }
}

pub fn write_annotations(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    manifest.write_jsonl(f).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}

pub fn read_annotations(path: &Path) -> Result<DatasetManifest> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::read_jsonl(BufReader::new(f)).map_err(|e| e.in_file(path))
}

/// Reads either `annotations.jsonl` or a `manifest.json`.
pub fn read_manifest_any(path: &Path) -> Result<DatasetManifest> {
    if path.extension().is_some_and(|e| e == "json") {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::from_json(&s).map_err(|e| e.in_file(path))
    } else {
        read_annotations(path)
    }
}

/// Imports `image,class,xmin,ymin,xmax,ymax` rows (header line optional).
/// Image sizes are read from the files under `image_root`.
pub fn import_csv(csv: &Path, image_root: &Path, name: &str) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let mut classes = BTreeSet::new();
    let mut images: Vec<ImageEntry> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut annotations = Vec::new();
    for (i, row) in text.lines().enumerate() {
        let line = i + 1;
        let cols: Vec<&str> = row.split(',').map(str::trim).collect();
        if row.trim().is_empty() || (line == 1 && cols.first() == Some(&"image")) {
            continue;
        }
        let bad = |m: String| Error::Schema { line, message: m }.in_file(csv);
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", cols.len())));
        }
        let mut coords = [0i64; 4];
        for (c, s) in coords.iter_mut().zip(&cols[2..]) {
            *c = s.parse().map_err(|_| bad(format!("`{s}` is not an integer")))?;
        }
        let bbox = PixelBox::from(coords);
        if !bbox.is_well_ordered() {
            return Err(bad(format!("bbox {coords:?} has max < min")));
        }
        let image_id = cols[0].to_owned();
        if !seen.contains_key(&image_id) {
            let p = image_root.join(&image_id);
            let (width, height) = image::image_dimensions(&p).map_err(|source| Error::Decode { path: p, source })?;
            seen.insert(image_id.clone(), images.len());
            images.push(ImageEntry {
                image_id: image_id.clone(),
                path: image_root.join(&image_id).to_string_lossy().into_owned(),
                width,
                height,
            });
        }
        classes.insert(cols[1].to_owned());
        annotations.push(Annotation {
            image_id,
            class_name: cols[1].to_owned(),
            bbox,
            source: Source::Real,
            difficult: false,
        });
    }
    let m = DatasetManifest {
        name: name.to_owned(),
        classes: classes.into_iter().collect(),
        images,
        annotations,
        seed: 0,
        config_digest: String::new(),
    };
    m.validate()?;
    Ok(m)
}

/// Image-level split: per class, `n_train_per_class` images go to training,
/// the rest to testing. An image is bucketed under the lexicographically
/// first class among its annotations; images without annotations go to test.
pub fn split_dataset(
    manifest: &DatasetManifest,
    n_train_per_class: usize,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let by_image = manifest.annotations_by_image();
    let mut buckets: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for img in &manifest.images {
        if let Some(first) = by_image
            .get(img.image_id.as_str())
            .and_then(|anns| anns.iter().map(|a| a.class_name.as_str()).min())
        {
            buckets.entry(first).or_default().push(img.image_id.as_str());
        }
    }
    for class in &manifest.classes {
        let have = buckets.get(class.as_str()).map_or(0, Vec::len);
        if have <= n_train_per_class {
            return Err(Error::InsufficientImages {
                class: class.clone(),
                have,
                need: n_train_per_class,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train: HashSet<&str> = HashSet::new();
    for ids in buckets.values_mut() {
        ids.sort_unstable();
        for i in sample(&mut rng, ids.len(), n_train_per_class).into_iter() {
            train.insert(ids[i]);
        }
    }
    let test: HashSet<&str> = manifest
        .images
        .iter()
        .map(|i| i.image_id.as_str())
        .filter(|id| !train.contains(id))
        .collect();
    Ok((
        manifest.subset(format!("{}-train", manifest.name), &train),
        manifest.subset(format!("{}-test", manifest.name), &test),
    ))
}

/// The six training regimes compared for sparse real data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlanName {
    /// Real training images only.
    #[serde(rename = "RealImg")]
    RealImg,
    /// Synthetic images of the target classes only.
    #[serde(rename = "SynImg-xCls")]
    SynImgTarget,
    /// Synthetic images of every exemplar class.
    #[serde(rename = "SynImg-463Cls")]
    SynImgAll,
    /// Pre-train on target-class synthetic data, fine-tune on real.
    #[serde(rename = "SynImg-xCls+RealImg")]
    SynImgTargetThenReal,
    /// Pre-train on all-class synthetic data, fine-tune on real.
    #[serde(rename = "SynImg-463Cls+RealImg")]
    SynImgAllThenReal,
    /// One stage over the union of all-class synthetic and real data.
    #[serde(rename = "Fusion")]
    Fusion,
}

impl PlanName {
    pub const ALL: [PlanName; 6] = [
        PlanName::RealImg,
        PlanName::SynImgTarget,
        PlanName::SynImgAll,
        PlanName::SynImgTargetThenReal,
        PlanName::SynImgAllThenReal,
        PlanName::Fusion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlanName::RealImg => "RealImg",
            PlanName::SynImgTarget => "SynImg-xCls",
            PlanName::SynImgAll => "SynImg-463Cls",
            PlanName::SynImgTargetThenReal => "SynImg-xCls+RealImg",
            PlanName::SynImgAllThenReal => "SynImg-463Cls+RealImg",
            PlanName::Fusion => "Fusion",
        }
    }

    fn needs(&self) -> (bool, bool) {
        match self {
            PlanName::RealImg => (false, true),
            PlanName::SynImgTarget | PlanName::SynImgAll => (true, false),
            _ => (true, true),
        }
    }

    fn target_classes_only(&self) -> bool {
        matches!(self, PlanName::SynImgTarget | PlanName::SynImgTargetThenReal)
    }
}

impl fmt::Display for PlanName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlanName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlanName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = PlanName::ALL.iter().map(|p| p.as_str()).collect();
                Error::InvalidConfig(format!("unknown plan `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    Train,
    Finetune,
}

/// A manifest referenced by a plan stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRef {
    pub name: String,
    pub path: String,
    pub source: Source,
    pub n_images: usize,
    pub classes: Vec<String>,
}

impl ManifestRef {
    pub fn new(manifest: &DatasetManifest, path: impl Into<String>, source: Source) -> Self {
        ManifestRef {
            name: manifest.name.clone(),
            path: path.into(),
            source,
            n_images: manifest.images.len(),
            classes: manifest.classes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub stage_id: usize,
    pub mode: StageMode,
    pub manifests: Vec<ManifestRef>,
    /// When set, training in this stage only uses annotations of these classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_filter: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub schema_version: u32,
    pub plan_name: PlanName,
    pub stages: Vec<Stage>,
}

impl CurriculumPlan {
    /// Checks the stage layout for the plan's regime.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("plan {}: {m}", self.plan_name)));
        let sources: Vec<Vec<Source>> = self
            .stages
            .iter()
            .map(|s| s.manifests.iter().map(|m| m.source).collect())
            .collect();
        let ok = match self.plan_name {
            PlanName::RealImg => sources == [vec![Source::Real]],
            PlanName::SynImgTarget | PlanName::SynImgAll => sources == [vec![Source::Synthetic]],
            PlanName::SynImgTargetThenReal | PlanName::SynImgAllThenReal => {
                sources == [vec![Source::Synthetic], vec![Source::Real]]
                    && self.stages[0].mode == StageMode::Train
                    && self.stages[1].mode == StageMode::Finetune
            }
            PlanName::Fusion => sources == [vec![Source::Synthetic, Source::Real]],
        };
        if !ok {
            return bad("stage layout does not match the regime");
        }
        if self.stages.iter().enumerate().any(|(i, s)| s.stage_id != i) {
            return bad("stage ids must be 0..n");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serialises");
        s.push('\n');
        s
    }
}

/// Emits the stage structure for `plan`. Staged regimes pre-train on the
/// synthetic manifest and fine-tune on the real one.
pub fn make_plan(plan: PlanName, synth: Option<&ManifestRef>, real: Option<&ManifestRef>) -> Result<CurriculumPlan> {
    let (need_synth, need_real) = plan.needs();
    let missing = |which| Error::MissingManifest {
        plan: plan.to_string(),
        which,
    };
    let synth = if need_synth {
        Some(synth.ok_or_else(|| missing("synthetic"))?)
    } else {
        None
    };
    let real = if need_real {
        Some(real.ok_or_else(|| missing("real"))?)
    } else {
        None
    };

    let class_filter = plan.target_classes_only().then(|| match real {
        Some(r) => r.classes.clone(),
        None => synth.map(|s| s.classes.clone()).unwrap_or_default(),
    });
    let stage = |stage_id, mode, manifests: Vec<&ManifestRef>, class_filter| Stage {
        stage_id,
        mode,
        manifests: manifests.into_iter().cloned().collect(),
        class_filter,
    };
    let stages = match (synth, real) {
        (None, Some(r)) => vec![stage(0, StageMode::Train, vec![r], None)],
        (Some(s), None) => vec![stage(0, StageMode::Train, vec![s], class_filter)],
        (Some(s), Some(r)) if plan == PlanName::Fusion => vec![stage(0, StageMode::Train, vec![s, r], None)],
        (Some(s), Some(r)) => vec![
            stage(0, StageMode::Train, vec![s], class_filter),
            stage(1, StageMode::Finetune, vec![r], None),
        ],
        (None, None) => unreachable!("every plan needs a manifest"),
    };
    let plan = CurriculumPlan {
        schema_version: SCHEMA_VERSION,
        plan_name: plan,
        stages,
    };
    plan.validate()?;
    Ok(plan)
}

pub fn resolve_image_path(manifest_path: &Path, entry: &ImageEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_owned()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
