//! Synthetic wafer defect maps and the `WDM1` dataset format.
//!
//! A wafer map is an `H × W` grid of die states: `0` off-wafer, `1` good,
//! `2` defective. The wafer is the circle inscribed in the grid.
//!
//! `WDM1` is UTF-8 text:
//!
//! ```text
//! WDM1 <count> <H> <W> <K>
//! <class>,<class>,...
//! <label>
//! <W digits>      ┐
//! ...             ├ H rows per sample
//! <W digits>      ┘
//! ```
//!
//! Every line ends with `\n`, including the last one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::FeatureTensor;
use crate::stream_rng;

pub const OFF_WAFER: u8 = 0;
pub const GOOD_DIE: u8 = 1;
pub const DEFECT_DIE: u8 = 2;

pub const MAGIC: &str = "WDM1";
pub const DEFAULT_SIZE: usize = 26;
pub const MIN_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    None,
    Center,
    Edge,
    Cluster,
    Scratch,
    Ring,
}

impl Pattern {
    pub const ALL: [Pattern; 6] =
        [Pattern::None, Pattern::Center, Pattern::Edge, Pattern::Cluster, Pattern::Scratch, Pattern::Ring];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::None => "None",
            Pattern::Center => "Center",
            Pattern::Edge => "Edge",
            Pattern::Cluster => "Cluster",
            Pattern::Scratch => "Scratch",
            Pattern::Ring => "Ring",
        }
    }

    /// Position in [`Pattern::ALL`].
    pub fn index(self) -> usize {
        Pattern::ALL.iter().position(|&p| p == self).expect("listed")
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .iter()
            .copied()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown defect pattern '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaferSample {
    height: usize,
    width: usize,
    grid: Vec<u8>,
    pub label: usize,
}

/// `true` for cells whose centre lies inside the inscribed circle.
pub fn wafer_mask(height: usize, width: usize) -> Vec<bool> {
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let r = height.min(width) as f64 / 2.0;
    let mut mask = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            mask.push(dy * dy + dx * dx <= r * r);
        }
    }
    mask
}

impl WaferSample {
    pub fn new(height: usize, width: usize, grid: Vec<u8>, label: usize) -> Result<Self> {
        if height == 0 || width == 0 || grid.len() != height * width {
            return Err(Error::dim(format!("{} cells for a {height}×{width} wafer", grid.len())));
        }
        if let Some(v) = grid.iter().find(|&&v| v > DEFECT_DIE) {
            return Err(Error::invalid(format!("die state {v} outside {{0, 1, 2}}")));
        }
        let mask = wafer_mask(height, width);
        if grid.iter().zip(&mask).any(|(&v, &on)| !on && v != OFF_WAFER) {
            return Err(Error::invalid("die marked outside the wafer mask"));
        }
        Ok(WaferSample { height, width, grid, label })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.grid[y * self.width + x]
    }

    pub fn defect_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == DEFECT_DIE).count()
    }

    /// One-channel tensor with die state shifted to `{-1, 0, 1}` (off-wafer,
    /// good, defect), so good dies contribute nothing to the activations.
    pub fn to_tensor(&self) -> FeatureTensor {
        let data = self.grid.iter().map(|&v| f64::from(v) - 1.0).collect();
        FeatureTensor::new(1, self.height, self.width, data).expect("non-empty grid")
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut grid = Vec::with_capacity(self.grid.len());
        for row in self.grid.chunks(self.width) {
            grid.extend(row.iter().rev());
        }
        WaferSample { grid, ..self.clone() }
    }

    /// Upside-down image.
    pub fn flipped(&self) -> Self {
        let mut grid = Vec::with_capacity(self.grid.len());
        for row in self.grid.chunks(self.width).rev() {
            grid.extend_from_slice(row);
        }
        WaferSample { grid, ..self.clone() }
    }

    /// Rotated clockwise by `quarter_turns × 90°`. Non-square maps only
    /// accept multiples of two quarter turns.
    pub fn rotated90(&self, quarter_turns: usize) -> Result<Self> {
        let k = quarter_turns % 4;
        if k % 2 == 1 && self.height != self.width {
            return Err(Error::invalid("quarter-turn rotation of a non-square wafer map"));
        }
        let mut s = self.clone();
        for _ in 0..k {
            let (h, w) = (s.height, s.width);
            let mut grid = vec![0; h * w];
            for y in 0..h {
                for x in 0..w {
                    // (y, x) → (x, h-1-y)
                    grid[x * h + (h - 1 - y)] = s.grid[y * w + x];
                }
            }
            s = WaferSample { height: w, width: h, grid, label: s.label };
        }
        Ok(s)
    }
}

/// Cells within Chebyshev distance `depth` of an off-wafer cell or the grid
/// border.
fn boundary_band(mask: &[bool], h: usize, w: usize, depth: usize) -> Vec<bool> {
    let d = depth as isize;
    let mut band = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !mask[(y as usize) * w + x as usize] {
                continue;
            }
            'search: for dy in -d..=d {
                for dx in -d..=d {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize || !mask[ny as usize * w + nx as usize] {
                        band[y as usize * w + x as usize] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    band
}

fn polar(y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
    let dy = y as f64 + 0.5 - h as f64 / 2.0;
    let dx = x as f64 + 0.5 - w as f64 / 2.0;
    ((dy * dy + dx * dx).sqrt(), dy.atan2(dx))
}

/// Depth of the edge defect band, in cells.
pub const EDGE_BAND: usize = 2;

/// Draws one wafer map. The label is the pattern's index in
/// [`Pattern::ALL`]; dataset builders relabel it.
pub fn generate(pattern: Pattern, height: usize, width: usize, noise_rate: f64, seed: u64) -> Result<WaferSample> {
    if height < MIN_SIZE || width < MIN_SIZE {
        return Err(Error::invalid(format!("wafer maps must be at least {MIN_SIZE}×{MIN_SIZE}")));
    }
    if !(0.0..0.5).contains(&noise_rate) {
        return Err(Error::invalid(format!("noise rate {noise_rate} outside [0, 0.5)")));
    }
    let (h, w) = (height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = wafer_mask(h, w);
    let mut grid: Vec<u8> = mask.iter().map(|&on| if on { GOOD_DIE } else { OFF_WAFER }).collect();
    let radius = h.min(w) as f64 / 2.0;
    let on_wafer: Vec<usize> = (0..h * w).filter(|&i| mask[i]).collect();

    match pattern {
        Pattern::None => {}
        Pattern::Center => {
            let r = h as f64 / 6.0;
            for &i in &on_wafer {
                if polar(i / w, i % w, h, w).0 <= r {
                    grid[i] = DEFECT_DIE;
                }
            }
        }
        Pattern::Edge => {
            let band = boundary_band(&mask, h, w, EDGE_BAND);
            let start = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let span = rng.gen_range(std::f64::consts::FRAC_PI_2..=std::f64::consts::TAU);
            for &i in &on_wafer {
                if band[i] {
                    let a = (polar(i / w, i % w, h, w).1 - start).rem_euclid(std::f64::consts::TAU);
                    if a <= span {
                        grid[i] = DEFECT_DIE;
                    }
                }
            }
        }
        Pattern::Cluster => {
            let size = rng.gen_range(8..=20);
            let seed_cell = *on_wafer.choose(&mut rng).expect("wafer has cells");
            let mut blob = vec![seed_cell];
            grid[seed_cell] = DEFECT_DIE;
            let mut attempts = 0;
            while blob.len() < size && attempts < 10_000 {
                attempts += 1;
                let from = blob[rng.gen_range(0..blob.len())];
                let (y, x) = ((from / w) as isize, (from % w) as isize);
                let (dy, dx) = [(-1, 0), (1, 0), (0, -1), (0, 1)][rng.gen_range(0..4)];
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask[j] && grid[j] != DEFECT_DIE {
                    grid[j] = DEFECT_DIE;
                    blob.push(j);
                }
            }
        }
        Pattern::Scratch => {
            let r = radius - 1.0;
            let a0 = rng.gen_range(0.0..std::f64::consts::TAU);
            // keep the chord away from a degenerate sliver
            let a1 = a0 + rng.gen_range(std::f64::consts::FRAC_PI_2..1.5 * std::f64::consts::PI);
            let width2 = rng.gen_bool(0.5);
            let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
            let (y0, x0) = (cy + r * a0.sin(), cx + r * a0.cos());
            let (y1, x1) = (cy + r * a1.sin(), cx + r * a1.cos());
            let steps = (4.0 * ((y1 - y0).abs().max((x1 - x0).abs()))).ceil() as usize + 1;
            let steep = (y1 - y0).abs() > (x1 - x0).abs();
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (py, px) = (y0 + t * (y1 - y0), x0 + t * (x1 - x0));
                let (iy, ix) = (py.floor() as isize, px.floor() as isize);
                let mut cells = vec![(iy, ix)];
                if width2 {
                    cells.push(if steep { (iy, ix + 1) } else { (iy + 1, ix) });
                }
                for (cy, cx) in cells {
                    if cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w {
                        let j = cy as usize * w + cx as usize;
                        if mask[j] {
                            grid[j] = DEFECT_DIE;
                        }
                    }
                }
            }
        }
        Pattern::Ring => {
            let r = h as f64 / 3.0;
            for &i in &on_wafer {
                if (polar(i / w, i % w, h, w).0 - r).abs() <= 1.0 {
                    grid[i] = DEFECT_DIE;
                }
            }
        }
    }

    if noise_rate > 0.0 {
        for &i in &on_wafer {
            if rng.gen_bool(noise_rate) {
                grid[i] = if grid[i] == DEFECT_DIE { GOOD_DIE } else { DEFECT_DIE };
            }
        }
    }
    WaferSample::new(h, w, grid, pattern.index())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<WaferSample>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, class_names: Vec<String>, samples: Vec<WaferSample>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        for name in &class_names {
            if name.is_empty() || name.contains([',', '\n', '\r']) || name.trim() != name {
                return Err(Error::invalid(format!("class name '{name}' is not representable")));
            }
        }
        for s in &samples {
            if (s.height, s.width) != (height, width) {
                return Err(Error::dim(format!(
                    "{}×{} sample in a {height}×{width} dataset",
                    s.height, s.width
                )));
            }
            if s.label >= class_names.len() {
                return Err(Error::invalid(format!("label {} out of range for {} classes", s.label, class_names.len())));
            }
        }
        Ok(Dataset { height, width, class_names, samples })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Canonical `WDM1` text.
    pub fn to_wdm1(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * (self.height * (self.width + 1) + 4) + 64);
        let _ = writeln!(out, "{MAGIC} {} {} {} {}", self.samples.len(), self.height, self.width, self.n_classes());
        out.push_str(&self.class_names.join(","));
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{}", s.label);
            for row in s.grid.chunks(self.width) {
                out.extend(row.iter().map(|&v| char::from(b'0' + v)));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_wdm1(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n').enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            let (n, l) = lines.next().ok_or_else(|| Error::format(format!("truncated file: missing {what}")))?;
            let l = l.strip_suffix('\n').ok_or_else(|| Error::format(format!("line {n}: missing newline")))?;
            Ok((n, l))
        };

        let (_, header) = next("header")?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.first() != Some(&MAGIC) {
            return Err(Error::format(format!("bad magic, expected {MAGIC}")));
        }
        if fields.len() != 5 {
            return Err(Error::format("header must be: WDM1 <count> <H> <W> <K>"));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| Error::format(format!("bad {what} '{s}' in header")))
        };
        let count = num(fields[1], "count")?;
        let (h, w) = (num(fields[2], "height")?, num(fields[3], "width")?);
        let k = num(fields[4], "class count")?;
        if h == 0 || w == 0 {
            return Err(Error::format("zero-sized wafer in header"));
        }

        let (_, names) = next("class names")?;
        let class_names: Vec<String> = names.split(',').map(str::to_owned).collect();
        if class_names.len() != k {
            return Err(Error::format(format!("header declares {k} classes, name line has {}", class_names.len())));
        }

        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, label_line) = next("sample label")?;
            let label: usize =
                label_line.parse().map_err(|_| Error::format(format!("line {n}: bad label '{label_line}'")))?;
            let mut grid = Vec::with_capacity(h * w);
            for _ in 0..h {
                let (n, row) = next("grid row")?;
                if row.len() != w {
                    return Err(Error::format(format!("line {n}: expected {w} digits, got {}", row.len())));
                }
                for b in row.bytes() {
                    match b {
                        b'0'..=b'2' => grid.push(b - b'0'),
                        other => {
                            return Err(Error::format(format!(
                                "line {n}: die state '{}' outside {{0, 1, 2}}",
                                char::from(other)
                            )))
                        }
                    }
                }
            }
            let s = WaferSample::new(h, w, grid, label).map_err(|e| Error::format(format!("sample ending line {n}: {e}")))?;
            samples.push(s);
        }
        if next("").is_ok() {
            return Err(Error::format(format!("more content than the {count} declared samples")));
        }
        Dataset::new(h, w, class_names, samples).map_err(|e| Error::format(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_wdm1())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_wdm1(&std::fs::read_to_string(path)?)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Dataset {
            height: self.height,
            width: self.width,
            class_names: self.class_names.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.write(path)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::read(path)
}

/// `count` samples cycling through `mix`; labels index into `mix`.
pub fn generate_dataset(mix: &[Pattern], count: usize, size: usize, noise_rate: f64, seed: u64) -> Result<Dataset> {
    if mix.is_empty() {
        return Err(Error::invalid("empty pattern mix"));
    }
    let mut seen = std::collections::HashSet::new();
    if !mix.iter().all(|p| seen.insert(*p)) {
        return Err(Error::invalid("pattern listed twice in mix"));
    }
    let samples = (0..count)
        .map(|i| {
            let label = i % mix.len();
            let sample_seed = stream_rng(seed, i as u64).gen();
            let mut s = generate(mix[label], size, size, noise_rate, sample_seed)?;
            s.label = label;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(size, size, mix.iter().map(|p| p.name().to_owned()).collect(), samples)
}

/// Stratified split; every class keeps at least one sample on each side.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut test = Vec::new();
    for (&label, idx) in &by_class {
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class '{}' has {} sample(s); stratified split needs at least 2",
                dataset.class_names[label],
                idx.len()
            )));
        }
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut stream_rng(seed, label as u64));
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&shuffled[..n_test]);
    }
    test.sort_unstable();
    let mut is_test = vec![false; dataset.len()];
    for &i in &test {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !is_test[i]).collect();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
