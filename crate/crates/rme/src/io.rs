//! File formats: measurement CSV with metadata sidecar, flat `key = value`
//! config files with `[section]` headers, the binary network-weights format,
//! and report CSVs.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, RmeError};
use crate::estimators::network::{ConvLayer, NetworkWeights};
use crate::evaluation::MetricReport;
use crate::geo::{Location, Measurement, MeasurementSet};

pub const MEASUREMENT_HEADER: &str = "x_m,y_m,power_db";
pub const REPORT_HEADER: &str =
    "estimator,metric,n_obs,normalized_density,mean_error_db,std_error_db,iterations";
const WEIGHTS_MAGIC: &[u8; 5] = b"RMEW1";

/// Format with 6 significant digits, plain decimal, deterministically.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (5 - mag).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

fn sidecar_path(csv: &Path) -> PathBuf {
    let mut p = csv.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Write the measurement CSV plus its `<path>.meta` sidecar.
pub fn write_measurement_set(set: &MeasurementSet, path: &Path) -> Result<()> {
    let mut csv = String::with_capacity(32 * set.measurements.len() + 32);
    csv.push_str(MEASUREMENT_HEADER);
    csv.push('\n');
    for m in &set.measurements {
        csv.push_str(&format!(
            "{},{},{}\n",
            format_sig(m.loc.x),
            format_sig(m.loc.y),
            format_sig(m.power_db)
        ));
    }
    std::fs::write(path, csv).map_err(|e| RmeError::io(path, e))?;
    let meta = format!(
        "region_x_m = {}\nregion_y_m = {}\nwavelength_m = {}\ngrid_spacing_m = {}\n",
        format_sig(set.region.0),
        format_sig(set.region.1),
        format_sig(set.wavelength),
        format_sig(set.grid_spacing)
    );
    let mpath = sidecar_path(path);
    std::fs::write(&mpath, meta).map_err(|e| RmeError::io(&mpath, e))
}

/// Read a measurement CSV and its sidecar back into a validated set.
pub fn read_measurement_set(path: &Path) -> Result<MeasurementSet> {
    let text = std::fs::read_to_string(path).map_err(|e| RmeError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MEASUREMENT_HEADER => {}
        other => {
            return Err(RmeError::Config(format!(
                "{}: expected header '{MEASUREMENT_HEADER}', got {other:?}",
                path.display()
            )))
        }
    }
    let mut measurements = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(RmeError::Config(format!(
                "{}:{}: expected 3 fields",
                path.display(),
                ln + 2
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| RmeError::Config(format!("{}: bad number '{s}'", path.display())))
        };
        measurements.push(Measurement {
            loc: Location::new(parse(fields[0])?, parse(fields[1])?),
            power_db: parse(fields[2])?,
        });
    }
    let mpath = sidecar_path(path);
    let meta = ConfigMap::read(&mpath)?;
    let set = MeasurementSet {
        measurements,
        region: (meta.f64("", "region_x_m")?, meta.f64("", "region_y_m")?),
        wavelength: meta.f64("", "wavelength_m")?,
        grid_spacing: meta.f64("", "grid_spacing_m")?,
    };
    set.validate()?;
    Ok(set)
}

/// Flat `key = value` config with optional `[section]` headers; the empty
/// section name addresses keys above the first header. `#` starts a comment.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                map.sections.entry(section.clone()).or_default();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(RmeError::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    ln + 1
                )));
            };
            map.sections
                .entry(section.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RmeError::io(path, e))?;
        Self::parse(&text).map_err(|e| RmeError::Config(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            RmeError::Config(format!("missing key '{key}' in section '[{section}]'"))
        })
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        let raw = self.require(section, key)?;
        raw.parse()
            .map_err(|_| RmeError::Config(format!("key '{key}': bad number '{raw}'")))
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64> {
        let raw = self.require(section, key)?;
        raw.parse()
            .map_err(|_| RmeError::Config(format!("key '{key}': bad integer '{raw}'")))
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        Ok(self.u64(section, key)? as usize)
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(_) => self.f64(section, key),
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(_) => self.usize(section, key),
        }
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    /// List of comma-separated f64 values.
    pub fn f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        self.require(section, key)?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| RmeError::Config(format!("key '{key}': bad number '{s}'")))
            })
            .collect()
    }

    pub fn usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>> {
        self.require(section, key)?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| RmeError::Config(format!("key '{key}': bad integer '{s}'")))
            })
            .collect()
    }

    /// Deterministic serialization: sections and keys in sorted order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        if let Some(root) = self.sections.get("") {
            for (k, v) in root {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        for (name, kv) in &self.sections {
            if name.is_empty() {
                continue;
            }
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in kv {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| RmeError::io(path, e))
    }
}

/// Serialize network weights: magic "RMEW1", little-endian u32 layer count,
/// per layer five u32 dims (out, in, kernel rows, kernel cols, stride), then
/// the f64 weights row-major followed by the biases.
pub fn write_weights(weights: &NetworkWeights, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(weights.layers.len() as u32).to_le_bytes());
    for layer in &weights.layers {
        let s = layer.weights.shape();
        for dim in [s[0], s[1], s[2], s[3], layer.stride] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for w in layer.weights.iter() {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for b in layer.bias.iter() {
            buf.extend_from_slice(&b.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| RmeError::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<NetworkWeights> {
    let mut file = std::fs::File::open(path).map_err(|e| RmeError::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| RmeError::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(RmeError::Config(format!(
                "{}: truncated weights file",
                path.display()
            )));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 5)? != WEIGHTS_MAGIC {
        return Err(RmeError::Config(format!(
            "{}: bad magic, not a weights file",
            path.display()
        )));
    }
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let n_layers = read_u32(&mut pos)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out_ch = read_u32(&mut pos)? as usize;
        let in_ch = read_u32(&mut pos)? as usize;
        let kr = read_u32(&mut pos)? as usize;
        let kc = read_u32(&mut pos)? as usize;
        let stride = read_u32(&mut pos)? as usize;
        if kr != 3 || kc != 3 || !(1..=2).contains(&stride) {
            return Err(RmeError::Config(format!(
                "{}: unsupported layer dims {out_ch}x{in_ch}x{kr}x{kc} stride {stride}",
                path.display()
            )));
        }
        let mut layer = ConvLayer::zeros(out_ch, in_ch, stride);
        for w in layer.weights.iter_mut() {
            *w = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        }
        for b in layer.bias.iter_mut() {
            *b = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        }
        layers.push(layer);
    }
    if pos != buf.len() {
        return Err(RmeError::Config(format!(
            "{}: trailing bytes after weights",
            path.display()
        )));
    }
    Ok(NetworkWeights { layers })
}

/// Render report rows; `extra` prepends an additional (header, per-row value)
/// column such as `distance_m` or `scenario`.
pub fn render_report(reports: &[MetricReport], extra: Option<(&str, &[String])>) -> String {
    let mut out = String::new();
    match extra {
        Some((h, _)) => out.push_str(&format!("{h},{REPORT_HEADER}\n")),
        None => {
            out.push_str(REPORT_HEADER);
            out.push('\n');
        }
    }
    for (k, r) in reports.iter().enumerate() {
        if let Some((_, vals)) = extra {
            out.push_str(&vals[k]);
            out.push(',');
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.estimator,
            r.metric.name(),
            r.n_obs,
            format_sig(r.normalized_density),
            format_sig(r.mean_error),
            format_sig(r.std_error),
            r.iterations
        ));
    }
    out
}

pub fn write_report(reports: &[MetricReport], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| RmeError::io(path, e))?;
    f.write_all(render_report(reports, None).as_bytes())
        .map_err(|e| RmeError::io(path, e))
}
