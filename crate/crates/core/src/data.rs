//! Image datasets: CSV and binary-PGM ingestion, area-average downscaling,
//! stratified splitting, client partitioning and a synthetic generator.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grayscale image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Contract(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Non-overlapping `side × side` patches in row-major patch order, each
    /// flattened row-major.
    pub fn patches(&self, side: usize) -> Result<Vec<Vec<f64>>> {
        if side == 0 || !self.height.is_multiple_of(side) || !self.width.is_multiple_of(side) {
            return Err(Error::Contract(format!(
                "{}x{} image is not divisible into {side}x{side} patches",
                self.height, self.width
            )));
        }
        let mut out = Vec::with_capacity((self.height / side) * (self.width / side));
        for pr in (0..self.height).step_by(side) {
            for pc in (0..self.width).step_by(side) {
                let mut patch = Vec::with_capacity(side * side);
                for r in pr..pr + side {
                    patch.extend_from_slice(
                        &self.pixels[r * self.width + pc..r * self.width + pc + side],
                    );
                }
                out.push(patch);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image: Image,
    pub label: u8,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<ImageSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dims = (first.image.height, first.image.width);
            for s in &samples {
                if (s.image.height, s.image.width) != dims {
                    return Err(Error::Format(format!(
                        "sample {} is {}x{}, expected {}x{}",
                        s.id, s.image.height, s.image.width, dims.0, dims.1
                    )));
                }
                if s.label > 1 {
                    return Err(Error::Domain(format!(
                        "sample {} has label {}",
                        s.id, s.label
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(height, width)` of the samples, if any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.samples
            .first()
            .map(|s| (s.image.height, s.image.width))
    }

    /// `[n_label0, n_label1]`.
    pub fn label_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for s in &self.samples {
            c[s.label as usize] += 1;
        }
        c
    }

    fn subset(&self, name: String, idx: &[usize]) -> Dataset {
        Dataset {
            name,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Indices of each label in dataset order.
    fn indices_by_label(&self) -> [Vec<usize>; 2] {
        let mut by = [Vec::new(), Vec::new()];
        for (i, s) in self.samples.iter().enumerate() {
            by[s.label as usize].push(i);
        }
        by
    }

    /// Writes `# w=W h=H`, then `label,p0,…` rows with decimal pixels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (h, w) = self.dims().unwrap_or((0, 0));
        let mut out = format!("# w={w} h={h}\nlabel");
        for i in 0..h * w {
            out.push_str(&format!(",p{i}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.label.to_string());
            for p in &s.image.pixels {
                out.push(',');
                out.push_str(&format_pixel(*p));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

// Pixels are written with a decimal point so the file is read back as
// decimals rather than 0–255 integers.
fn format_pixel(p: f64) -> String {
    let s = format!("{p:?}");
    if s.contains('.') || s.contains('e') {
        s
    } else {
        format!("{s}.0")
    }
}

/// Reads a `label,p0,…,p{HW−1}` CSV.
///
/// An optional first line `# w=W h=H` gives the image shape; otherwise the
/// images must be square. If every pixel token is an integer the file is
/// treated as 8-bit and divided by 255, otherwise values are decimals.
/// Values are clamped to `[0, 1]`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut shape = None;
    let mut body = text.as_str();
    let mut line_offset = 0;
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.trim().strip_prefix('#') {
            shape = Some(parse_shape_comment(rest).ok_or_else(|| Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("expected `# w=W h=H`, got `{first}`"),
            })?);
            body = text[first.len()..].trim_start_matches(['\r', '\n']);
            line_offset = 1;
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let n_pixels = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.into(),
            line: line_offset + 1,
            msg: e.to_string(),
        })?
        .len()
        .saturating_sub(1);

    let (h, w) = match shape {
        Some((w, h)) => {
            if w * h != n_pixels {
                return Err(Error::Format(format!(
                    "{}: header has {n_pixels} pixel columns but shape is {w}x{h}",
                    path.display()
                )));
            }
            (h, w)
        }
        None => {
            let side = (n_pixels as f64).sqrt().round() as usize;
            if side == 0 || side * side != n_pixels {
                return Err(Error::Format(format!(
                    "{}: {n_pixels} pixel columns is not a square image and no `# w= h=` line given",
                    path.display()
                )));
            }
            (side, side)
        }
    };

    let mut rows = Vec::new();
    let mut all_integer = true;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: line_offset + e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = line_offset + rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        if rec.len() != n_pixels + 1 {
            return Err(perr(format!(
                "row has {} pixels, expected {n_pixels}",
                rec.len().saturating_sub(1)
            )));
        }
        let label: u8 = match &rec[0] {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(format!("label `{other}` is not 0 or 1"))),
        };
        let mut values = Vec::with_capacity(n_pixels);
        for tok in rec.iter().skip(1) {
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(format!("pixel `{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(perr(format!("pixel `{tok}` is not finite")));
            }
            all_integer &= tok.parse::<i64>().is_ok();
            values.push(v);
        }
        rows.push((label, values, line));
    }

    let scale = if all_integer { 255.0 } else { 1.0 };
    let stem = path
        .file_stem()
        .map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (label, values, _))| {
            let pixels = values
                .into_iter()
                .map(|v| (v / scale).clamp(0.0, 1.0))
                .collect();
            Ok(ImageSample {
                image: Image::new(h, w, pixels)?,
                label,
                id: format!("{stem}-{i}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(stem, samples)
}

fn parse_shape_comment(s: &str) -> Option<(usize, usize)> {
    let mut w = None;
    let mut h = None;
    for tok in s.split_whitespace() {
        if let Some(v) = tok.strip_prefix("w=") {
            w = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("h=") {
            h = v.parse().ok();
        }
    }
    Some((w?, h?))
}

/// Decodes a binary (`P5`) PGM into normalized pixels.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (magic P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PGM header".into()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!(
            "invalid PGM header {width}x{height} maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("PGM raster truncated: need {need} bytes")))?;
    let pixels = if bps == 1 {
        raster
            .iter()
            .map(|&b| (b as f64 / maxval as f64).min(1.0))
            .collect()
    } else {
        raster
            .chunks(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64).min(1.0))
            .collect()
    };
    Image::new(height, width, pixels)
}

/// Loads every `*.pgm` file of `dir`, labelled by `labels_csv` rows
/// `filename,label` (a header row is optional). Sorted by filename.
pub fn load_pgm_dir(dir: &Path, labels_csv: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(labels_csv)
        .map_err(|e| Error::Format(format!("{}: {e}", labels_csv.display())))?;
    let mut labels = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", labels_csv.display())))?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                path: labels_csv.into(),
                line: i + 1,
                msg: "expected `filename,label`".into(),
            });
        }
        let label = match &rec[1] {
            "0" => 0u8,
            "1" => 1u8,
            _ if i == 0 => continue, // header
            other => {
                return Err(Error::Parse {
                    path: labels_csv.into(),
                    line: i + 1,
                    msg: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        labels.insert(rec[0].to_string(), label);
    }

    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    let name = dir
        .file_name()
        .map_or("pgm".into(), |s| s.to_string_lossy().into_owned());
    if names.is_empty() {
        warn!("no .pgm files found in {}", dir.display());
        return Ok(Dataset {
            name,
            samples: Vec::new(),
        });
    }

    let mut samples = Vec::with_capacity(names.len());
    for file in names {
        let label = *labels.get(&file).ok_or_else(|| {
            Error::Format(format!("{file} has no entry in {}", labels_csv.display()))
        })?;
        let path = dir.join(&file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let image = parse_pgm(&bytes).map_err(|e| Error::Format(format!("{file}: {e}")))?;
        samples.push(ImageSample {
            image,
            label,
            id: file,
        });
    }
    Dataset::new(name, samples)
}

// Overlap weights between output cell `i` of `n_out` and source cell `k` of
// `n_in` along one axis, in units of source cells.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|k| {
                    let w = hi.min(k as f64 + 1.0) - lo.max(k as f64);
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling: every output pixel is the mean of the source
/// area it covers.
pub fn downscale(sample: &ImageSample, out_h: usize, out_w: usize) -> Result<ImageSample> {
    let img = &sample.image;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(
            "downscale target has a zero dimension".into(),
        ));
    }
    if out_h > img.height || out_w > img.width {
        return Err(Error::Contract(format!(
            "cannot downscale {}x{} to larger {out_h}x{out_w}",
            img.height, img.width
        )));
    }
    let rows = axis_weights(img.height, out_h);
    let cols = axis_weights(img.width, out_w);
    let area = (img.height as f64 / out_h as f64) * (img.width as f64 / out_w as f64);
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for rw in &rows {
        for cw in &cols {
            let mut acc = 0.0;
            for &(r, wr) in rw {
                for &(c, wc) in cw {
                    acc += wr * wc * img.at(r, c);
                }
            }
            pixels.push((acc / area).clamp(0.0, 1.0));
        }
    }
    Ok(ImageSample {
        image: Image::new(out_h, out_w, pixels)?,
        label: sample.label,
        id: sample.id.clone(),
    })
}

pub fn downscale_dataset(d: &Dataset, out_h: usize, out_w: usize) -> Result<Dataset> {
    let samples = d
        .samples
        .iter()
        .map(|s| downscale(s, out_h, out_w))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: d.name.clone(),
        samples,
    })
}

/// Splits `total` items into `fractions.len()` parts of `floor(f·total)`,
/// handing the leftover one at a time to the first parts.
fn floor_with_leading_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (f * total as f64).floor() as usize)
        .collect();
    let mut left = total - sizes.iter().sum::<usize>().min(total);
    for s in sizes.iter_mut() {
        if left == 0 {
            break;
        }
        *s += 1;
        left -= 1;
    }
    sizes
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Contract(format!(
            "fractions {fractions:?} must lie in [0, 1]"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("fractions sum to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Stratified train/validation/test split.
///
/// Validation and test each receive `floor(f·n)` samples overall; per label
/// they take `floor(f·n_label)` and any shortfall goes to the labels with the
/// largest fractional remainder (lower label first on ties). Training gets
/// everything else.
pub fn train_val_test_split(d: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if d.is_empty() {
        return Err(Error::Contract("cannot split an empty dataset".into()));
    }
    check_fractions(&fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label = d.indices_by_label();
    for idx in by_label.iter_mut() {
        idx.shuffle(&mut rng);
    }
    let n = d.len();
    let counts = [by_label[0].len(), by_label[1].len()];

    // per_label[split][label] for val (0) and test (1)
    let mut per_label = [[0usize; 2]; 2];
    for (s, &f) in fractions[1..].iter().enumerate() {
        let target = (f * n as f64).floor() as usize;
        let exact = [f * counts[0] as f64, f * counts[1] as f64];
        let mut q = [exact[0].floor() as usize, exact[1].floor() as usize];
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor()))
        });
        let mut left = target.saturating_sub(q[0] + q[1]);
        for &l in order.iter().cycle().take(4) {
            if left == 0 {
                break;
            }
            let taken = per_label[0][l] + per_label[1][l];
            if q[l] + taken < counts[l] {
                q[l] += 1;
                left -= 1;
            }
        }
        per_label[s] = q;
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (label, idx) in by_label.iter().enumerate() {
        let n_val = per_label[0][label];
        let n_test = per_label[1][label];
        let n_train = idx.len() - n_val - n_test;
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    Ok(Split {
        train: d.subset(format!("{}-train", d.name), &parts[0]),
        val: d.subset(format!("{}-val", d.name), &parts[1]),
        test: d.subset(format!("{}-test", d.name), &parts[2]),
    })
}

/// How training data is divided among clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    /// Exact `[n_label0, n_label1]` per client.
    Counts { counts: Vec<[usize; 2]> },
    /// Share of the dataset per client.
    Fractions {
        fractions: Vec<f64>,
        #[serde(default = "default_true")]
        stratified: bool,
    },
}

fn default_true() -> bool {
    true
}

impl PartitionSpec {
    pub fn n_clients(&self) -> usize {
        match self {
            PartitionSpec::Counts { counts } => counts.len(),
            PartitionSpec::Fractions { fractions, .. } => fractions.len(),
        }
    }
}

/// Disjoint per-client datasets named `H1, H2, …`.
///
/// Samples are shuffled with `seed` first. Counts are honoured exactly;
/// fractions get floor sizes with the remainder going to the first clients,
/// per label when stratified.
pub fn partition(d: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Dataset>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label = d.indices_by_label();
    for idx in by_label.iter_mut() {
        idx.shuffle(&mut rng);
    }
    let assignment: Vec<Vec<usize>> = match spec {
        PartitionSpec::Counts { counts } => {
            if counts.is_empty() {
                return Err(Error::Contract(
                    "partition needs at least one client".into(),
                ));
            }
            for label in 0..2 {
                let mut used = 0;
                for (c, want) in counts.iter().enumerate() {
                    used += want[label];
                    if used > by_label[label].len() {
                        return Err(Error::Capacity(format!(
                            "client H{} asks for label-{label} samples beyond the {} available",
                            c + 1,
                            by_label[label].len()
                        )));
                    }
                }
            }
            let mut cursor = [0usize; 2];
            counts
                .iter()
                .map(|want| {
                    let mut idx = Vec::new();
                    for label in 0..2 {
                        idx.extend_from_slice(
                            &by_label[label][cursor[label]..cursor[label] + want[label]],
                        );
                        cursor[label] += want[label];
                    }
                    idx
                })
                .collect()
        }
        PartitionSpec::Fractions {
            fractions,
            stratified,
        } => {
            check_fractions(fractions)?;
            let pools: Vec<Vec<usize>> = if *stratified {
                by_label.to_vec()
            } else {
                let mut all: Vec<usize> = (0..d.len()).collect();
                all.shuffle(&mut rng);
                vec![all]
            };
            let mut out = vec![Vec::new(); fractions.len()];
            for pool in &pools {
                let sizes = floor_with_leading_remainder(pool.len(), fractions);
                let mut cursor = 0;
                for (client, size) in sizes.into_iter().enumerate() {
                    out[client].extend_from_slice(&pool[cursor..cursor + size]);
                    cursor += size;
                }
            }
            out
        }
    };
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(c, idx)| d.subset(format!("H{}", c + 1), idx))
        .collect())
}

/// Balanced two-class images: label 1 has a bright top half, label 0 a
/// bright bottom half (base 0.9 bright, 0.1 dark), plus Gaussian noise of
/// standard deviation `noise_sd`, clamped to `[0, 1]`. Labels alternate
/// starting with 0.
pub fn synth_blobs(n: usize, h: usize, w: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if h < 4 || w < 4 {
        return Err(Error::Contract(format!(
            "synthetic images must be at least 4x4, got {h}x{w}"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Domain(format!(
            "noise_sd {noise_sd} must be finite and >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let samples = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let pixels = (0..h * w)
                .map(|k| {
                    let top = k / w < h / 2;
                    let bright = top == (label == 1);
                    let base = if bright { 0.9 } else { 0.1 };
                    let eps = if noise_sd > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (base + eps).clamp(0.0, 1.0)
                })
                .collect();
            Ok(ImageSample {
                image: Image::new(h, w, pixels)?,
                label,
                id: format!("synth-{i:05}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("synth", samples)
}
