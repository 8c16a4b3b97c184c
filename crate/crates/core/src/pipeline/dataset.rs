use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AugmentConfig, DatasetConfig};
use crate::aero::{build_grid, classify, eval_surrogate, AeroLabel, ClassGrid, REYNOLDS};
use crate::csrep::{
    clamp_feasible, decode_coeffs_with, encode_regularized, CoeffSeq, MetaParams, Targets, DY, END, R, RADIUS, SPINE,
    START, Y,
};
use crate::geometry::{
    extract_csrep, naca4_profile, naca5_profile, resample_arclength, sweep_envelope, validate, CsRep, Point2, Profile,
    SmoothnessThresholds,
};
use crate::metrics::{chamfer, PointSet};
use crate::rng::{hash_str, normal, Rng};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Points sampled on the analytic section before arc-length resampling.
const RAW_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Naca4,
    Naca5,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Split as a pure function of the record id and seed.
pub fn split_of(id: &str, seed: u64, ratios: [f64; 3]) -> Split {
    let u = (hash_str(seed, id) >> 11) as f64 / (1u64 << 53) as f64;
    if u < ratios[0] {
        Split::Train
    } else if u < ratios[0] + ratios[1] {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub source: SourceTag,
    /// Closed boundary, `profile_len` points.
    pub profile: Vec<Point2>,
    pub csrep: CsRep,
    pub targets: Targets,
    pub label: AeroLabel,
    pub class_id: usize,
    pub split: Split,
}

impl DatasetRecord {
    pub fn profile(&self) -> Result<Profile> {
        Profile::new(self.profile.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub total: usize,
    pub by_split: BTreeMap<Split, usize>,
    pub by_source: BTreeMap<SourceTag, usize>,
    pub by_class: BTreeMap<usize, usize>,
}

impl RecordCounts {
    pub fn of(records: &[DatasetRecord]) -> Self {
        let mut c = RecordCounts {
            total: records.len(),
            ..Self::default()
        };
        for r in records {
            *c.by_split.entry(r.split).or_default() += 1;
            *c.by_source.entry(r.source).or_default() += 1;
            *c.by_class.entry(r.class_id).or_default() += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub delta_x: f64,
    pub profile_len: usize,
    pub max_round_trip: f64,
    pub grid: ClassGrid,
    pub split: [f64; 3],
    pub seed: u64,
    pub counts: RecordCounts,
    /// Candidates dropped while building, by reason.
    pub discarded: BTreeMap<String, usize>,
    pub records_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == s)
    }

    pub fn thresholds(&self) -> SmoothnessThresholds {
        SmoothnessThresholds::for_spacing(self.manifest.delta_x)
    }
}

/// Point-set chamfer distance between a profile and the envelope of a
/// cs-rep resampled to the same point count.
pub fn round_trip_chamfer(profile: &Profile, rep: &CsRep) -> Result<f64> {
    let back = resample_arclength(&sweep_envelope(rep)?, profile.len())?;
    chamfer(&PointSet::from(&back), &PointSet::from(profile))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Naca4 { m: f64, p: f64, t: f64 },
    Naca5 { code: String },
}

impl Candidate {
    pub fn id(&self) -> String {
        match self {
            Candidate::Naca4 { m, p, t } => format!("naca4-m{m:.4}-p{p:.3}-t{t:.3}"),
            Candidate::Naca5 { code } => format!("naca5-{code}"),
        }
    }

    pub fn source(&self) -> SourceTag {
        match self {
            Candidate::Naca4 { .. } => SourceTag::Naca4,
            Candidate::Naca5 { .. } => SourceTag::Naca5,
        }
    }

    pub fn profile(&self, len: usize) -> Result<Profile> {
        let raw = match self {
            Candidate::Naca4 { m, p, t } => naca4_profile(*m, *p, *t, RAW_POINTS)?,
            Candidate::Naca5 { code } => naca5_profile(code, RAW_POINTS)?,
        };
        resample_arclength(&raw, len)
    }
}

/// Every section of the configured sweeps; symmetric sections appear once.
pub fn candidates(cfg: &DatasetConfig) -> Vec<Candidate> {
    let mut out = Vec::new();
    for t in cfg.naca4_t.values() {
        for m in cfg.naca4_m.values() {
            if m == 0.0 {
                out.push(Candidate::Naca4 { m, p: 0.0, t });
                continue;
            }
            for p in cfg.naca4_p.values() {
                out.push(Candidate::Naca4 { m, p, t });
            }
        }
    }
    for &d in &cfg.naca5_design {
        for &q in &cfg.naca5_position {
            for reflex in [false, true] {
                if reflex && !cfg.naca5_reflex {
                    continue;
                }
                for &t in &cfg.naca5_thickness {
                    out.push(Candidate::Naca5 {
                        code: format!("{d}{q}{}{t:02}", u8::from(reflex)),
                    });
                }
            }
        }
    }
    out
}

/// Fields of a record that do not depend on the class grid.
#[derive(Debug, Clone)]
struct Built {
    id: String,
    source: SourceTag,
    profile: Profile,
    csrep: CsRep,
    targets: Targets,
    label: AeroLabel,
}

fn build_one(c: &Candidate, cfg: &DatasetConfig, th: &SmoothnessThresholds) -> std::result::Result<Built, String> {
    let profile = c.profile(cfg.profile_len).map_err(|e| format!("section: {e}"))?;
    let ext = extract_csrep(&profile, cfg.delta_x).map_err(|_| "extraction".to_string())?;
    let (meta, coeffs) = encode_regularized(&ext, th).map_err(|_| "encoding".to_string())?;
    let csrep = decode_coeffs_with(&meta, &coeffs, cfg.delta_x, th).map_err(|_| "decoding".to_string())?;
    let env = sweep_envelope(&csrep).map_err(|_| "envelope".to_string())?;
    if !validate(&env, &csrep, th).is_valid() {
        return Err("invalid".into());
    }
    let d = round_trip_chamfer(&profile, &csrep).map_err(|_| "round trip".to_string())?;
    if !(d <= cfg.max_round_trip) {
        return Err("round trip".into());
    }
    let label = eval_surrogate(&csrep, REYNOLDS).map_err(|_| "label".to_string())?;
    Ok(Built {
        id: c.id(),
        source: c.source(),
        profile,
        csrep,
        targets: Targets { meta, coeffs },
        label,
    })
}

/// Builds the base dataset from the configured NACA sweeps. Candidates
/// whose cs-rep fails validity or the round-trip bound are dropped and
/// counted by reason; the class grid comes from the training labels.
pub fn build_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    let th = SmoothnessThresholds::for_spacing(cfg.delta_x);
    let cands = candidates(cfg);
    let results: Vec<std::result::Result<Built, String>> = cands.par_iter().map(|c| build_one(c, cfg, &th)).collect();
    let mut discarded = BTreeMap::new();
    let mut built = Vec::new();
    for r in results {
        match r {
            Ok(b) => built.push(b),
            Err(reason) => *discarded.entry(reason).or_insert(0) += 1,
        }
    }
    let splits: Vec<Split> = built.iter().map(|b| split_of(&b.id, seed, cfg.split)).collect();
    let train_labels: Vec<AeroLabel> = built
        .iter()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .map(|(b, _)| b.label)
        .collect();
    let grid = build_grid(&train_labels, cfg.grid_bins)?;
    let records: Vec<DatasetRecord> = built
        .into_iter()
        .zip(splits)
        .map(|(b, split)| DatasetRecord {
            class_id: class_of(b.label, &grid),
            id: b.id,
            source: b.source,
            profile: b.profile.points,
            csrep: b.csrep,
            targets: b.targets,
            label: b.label,
            split,
        })
        .collect();
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            delta_x: cfg.delta_x,
            profile_len: cfg.profile_len,
            max_round_trip: cfg.max_round_trip,
            grid,
            split: cfg.split,
            seed,
            counts: RecordCounts::of(&records),
            discarded,
            records_file: records_file(cfg.gzip).into(),
        },
        records,
    })
}

fn class_of(label: AeroLabel, grid: &ClassGrid) -> usize {
    classify(label, grid).class_id().expect("classify yields a real class")
}

pub fn in_grid(label: AeroLabel, grid: &ClassGrid) -> bool {
    let inside = |v: f64, e: &[f64]| v >= e[0] && v <= e[e.len() - 1];
    inside(label.cl, &grid.cl_edges) && inside(label.cd, &grid.cd_edges)
}

fn records_file(gzip: bool) -> &'static str {
    if gzip {
        "records.jsonl.gz"
    } else {
        "records.jsonl"
    }
}

/// Jittered copy of a record's targets, projected back onto the feasible
/// set.
fn jitter(
    targets: &Targets,
    cfg: &AugmentConfig,
    dx: f64,
    th: &SmoothnessThresholds,
    rng: &mut Rng,
) -> Result<(MetaParams, CoeffSeq)> {
    let mut m = targets.meta.m;
    let s = cfg.meta_jitter * dx;
    m[START][Y] += s * normal(rng);
    for row in [START, SPINE, END] {
        m[row][DY] += s * normal(rng);
    }
    for row in [START, RADIUS] {
        m[row][R] *= (1.0 + cfg.radius_jitter * normal(rng)).max(0.5);
    }
    let meta = MetaParams::new(m).repair(dx, th);
    let counts = meta.check(dx, th)?;
    let mut coeffs = targets.coeffs.clone();
    if coeffs.len() != counts.n {
        return Err(Error::shape("jittered meta changed the sequence length"));
    }
    for c in coeffs.u_tilde.iter_mut().chain(coeffs.v_tilde.iter_mut()) {
        *c = (*c + rng.gen_range(-cfg.coeff_jitter..=cfg.coeff_jitter)).clamp(0.0, 1.0);
    }
    Ok((meta, clamp_feasible(&coeffs, counts, th)))
}

/// Grows the dataset to `factor` times its size with jittered copies of
/// training records. Every new record is decoded, validated, relabelled
/// and kept only if its label lies inside the class grid.
pub fn augment(base: &Dataset, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Dataset> {
    if !(cfg.factor >= 1.0) {
        return Err(Error::domain(format!("augmentation factor {} is below 1", cfg.factor)));
    }
    let want = ((cfg.factor - 1.0) * base.records.len() as f64).round() as usize;
    let mut out = base.clone();
    if want == 0 {
        return Ok(out);
    }
    let parents: Vec<&DatasetRecord> = base.split(Split::Train).collect();
    if parents.is_empty() {
        return Err(Error::domain("no training records to augment"));
    }
    let (dx, len) = (base.manifest.delta_x, base.manifest.profile_len);
    let th = base.thresholds();
    let grid = &base.manifest.grid;
    let mut made = 0;
    let mut attempts = 0;
    let mut rejected = 0;
    while made < want {
        attempts += 1;
        if attempts > 20 * want + 100 {
            return Err(Error::domain(format!(
                "augmentation produced only {made} of {want} records"
            )));
        }
        let parent = parents[rng.gen_range(0..parents.len())];
        let Ok((meta, coeffs)) = jitter(&parent.targets, cfg, dx, &th, rng) else {
            rejected += 1;
            continue;
        };
        let csrep = decode_coeffs_with(&meta, &coeffs, dx, &th)?;
        let env = sweep_envelope(&csrep)?;
        let label = eval_surrogate(&csrep, REYNOLDS)?;
        if !validate(&env, &csrep, &th).is_valid() || !in_grid(label, grid) {
            rejected += 1;
            continue;
        }
        let id = format!("aug-{:07}", made);
        out.records.push(DatasetRecord {
            split: split_of(&id, base.manifest.seed, base.manifest.split),
            id,
            source: SourceTag::Augmented,
            profile: resample_arclength(&env, len)?.points,
            csrep,
            targets: Targets { meta, coeffs },
            label,
            class_id: class_of(label, grid),
        });
        made += 1;
    }
    *out.manifest
        .discarded
        .entry("augmentation rejected".into())
        .or_insert(0) += rejected;
    out.manifest.counts = RecordCounts::of(&out.records);
    Ok(out)
}

/// Writes `manifest.json` and the record file into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(&ds.manifest.records_file);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w: Box<dyn Write> = if ds.manifest.records_file.ends_with(".gz") {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    for r in &ds.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    drop(w);
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&ds.manifest)?;
    std::fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Reads a dataset directory and checks the record counts against the
/// manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let path: PathBuf = dir.join(&manifest.records_file);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let reader: Box<dyn Read> = if manifest.records_file.ends_with(".gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("record {}: {e}", i + 1)))?;
        records.push(r);
    }
    let counts = RecordCounts::of(&records);
    if counts != manifest.counts {
        return Err(Error::Validation(format!(
            "manifest lists {} records, file holds {}",
            manifest.counts.total, counts.total
        )));
    }
    Ok(Dataset { manifest, records })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub failures: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Re-validates every record: geometry, round-trip consistency, target
/// decoding, label, class and split.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let th = ds.thresholds();
    let m = &ds.manifest;
    let failures: Vec<(String, String)> = ds
        .records
        .par_iter()
        .filter_map(|r| check_record(r, m, &th).err().map(|e| (r.id.clone(), e)))
        .collect();
    let mut report = ValidationReport {
        checked: ds.records.len(),
        failures,
    };
    let mut seen = std::collections::HashSet::new();
    for r in &ds.records {
        if !seen.insert(&r.id) {
            report.failures.push((r.id.clone(), "duplicate id".into()));
        }
    }
    if RecordCounts::of(&ds.records) != m.counts {
        report.failures.push(("manifest".into(), "record counts differ".into()));
    }
    report
}

fn check_record(r: &DatasetRecord, m: &Manifest, th: &SmoothnessThresholds) -> std::result::Result<(), String> {
    let profile = r.profile().map_err(|e| e.to_string())?;
    if profile.len() != m.profile_len {
        return Err(format!("profile has {} points", profile.len()));
    }
    let env = sweep_envelope(&r.csrep).map_err(|e| e.to_string())?;
    let report = validate(&env, &r.csrep, th);
    if !report.is_valid() {
        return Err(format!("invalid cs-rep: {:?}", report.violations.first()));
    }
    let d = round_trip_chamfer(&profile, &r.csrep).map_err(|e| e.to_string())?;
    if !(d <= m.max_round_trip) {
        return Err(format!("round trip chamfer {d:.3e}"));
    }
    let dec = decode_coeffs_with(&r.targets.meta, &r.targets.coeffs, m.delta_x, th).map_err(|e| e.to_string())?;
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
    if !close(&dec.spine_y, &r.csrep.spine_y) || !close(&dec.radii, &r.csrep.radii) {
        return Err("targets do not decode to the stored cs-rep".into());
    }
    let label = eval_surrogate(&r.csrep, REYNOLDS).map_err(|e| e.to_string())?;
    if (label.cl - r.label.cl).abs() > 1e-9 || (label.cd - r.label.cd).abs() > 1e-9 {
        return Err("label differs from the surrogate".into());
    }
    if class_of(r.label, &m.grid) != r.class_id {
        return Err("class id does not match the grid".into());
    }
    if split_of(&r.id, m.seed, m.split) != r.split {
        return Err("split does not match the id hash".into());
    }
    Ok(())
}
