//! Plain-text run configuration: one `key = value` per line, `#` comments,
//! dotted keys for grouping. Unknown keys are errors.
//!
//! ```text
//! mode = mmmfem
//! media.source = synthetic
//! media.kind = channel
//! media.dims = 60 220
//! coarsening = 10
//! mortar.polynomial_order = 0
//! mortar.multiscale = true
//! ```
//!
//! Every key has a default (see [`SimConfig::default`]), so a file only
//! needs the keys it changes. [`to_text`] writes every key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::driver::{MediaSource, SimConfig, SyntheticField};
use crate::error::{Error, Result};
use crate::media::Spe10Model;
use crate::transport::{Completion, WellLayout};

pub fn load(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| match e {
        Error::Config(message) => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn save(config: &SimConfig, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(config)).map_err(|e| Error::io(path, e))
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split_whitespace().map(|v| value(key, v)).collect()
}

fn optional<T: FromStr>(key: &str, raw: &str, none: &str) -> Result<Option<T>> {
    if raw == none {
        Ok(None)
    } else {
        value(key, raw).map(Some)
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Parses a configuration document on top of the defaults.
pub fn parse(text: &str) -> Result<SimConfig> {
    let mut entries = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = key.trim().to_string();
        if entries.insert(key.clone(), raw.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
        }
    }
    let mut take = |key: &str| entries.remove(key);

    let mut c = SimConfig::default();
    if let Some(v) = take("mode") {
        c.mode = v.parse()?;
    }
    if let Some(v) = take("seed") {
        c.seed = value("seed", &v)?;
    }
    if let Some(v) = take("coarsening") {
        c.coarsening = value("coarsening", &v)?;
    }
    if let Some(v) = take("refresh_every") {
        c.refresh_every = value("refresh_every", &v)?;
    }

    // media
    let source = take("media.source").unwrap_or_else(|| "synthetic".into());
    let mut media_keys: BTreeMap<&str, Option<String>> = [
        "media.kind",
        "media.dims",
        "media.spacing",
        "media.k",
        "media.contrast",
        "media.bands",
        "media.sigma",
        "media.correlation",
        "media.model",
        "media.perm_file",
        "media.phi_file",
    ]
    .into_iter()
    .map(|k| (k, take(k)))
    .collect();
    let mut media = |key: &str| media_keys.get_mut(key).and_then(Option::take);
    c.media = match source.as_str() {
        "synthetic" => {
            let (dims, spacing) = match &c.media {
                MediaSource::Synthetic { dims, spacing, .. } => (dims.clone(), spacing.clone()),
                MediaSource::Spe10 { .. } => unreachable!("default is synthetic"),
            };
            let dims = media("media.dims").map_or(Ok(dims), |v| list("media.dims", &v))?;
            let spacing = media("media.spacing").map_or(Ok(spacing), |v| list("media.spacing", &v))?;
            let kind = media("media.kind").unwrap_or_else(|| "channel".into());
            let field = match kind.as_str() {
                "uniform" => SyntheticField::Uniform {
                    k: media("media.k").map_or(Ok(1.0), |v| value("media.k", &v))?,
                },
                "layered" => SyntheticField::Layered {
                    contrast: media("media.contrast").map_or(Ok(1e3), |v| value("media.contrast", &v))?,
                    bands: media("media.bands").map_or(Ok(4), |v| value("media.bands", &v))?,
                },
                "lognormal" => SyntheticField::Lognormal {
                    sigma: media("media.sigma").map_or(Ok(2.0), |v| value("media.sigma", &v))?,
                    correlation: media("media.correlation")
                        .map_or(Ok(3.0), |v| value("media.correlation", &v))?,
                },
                "channel" => SyntheticField::Channel,
                other => return Err(Error::Config(format!("media.kind: unknown field {other:?}"))),
            };
            MediaSource::Synthetic { field, dims, spacing }
        }
        "spe10" => {
            let model = match media("media.model").as_deref() {
                Some("1") | None => Spe10Model::Model1,
                Some("2") => Spe10Model::Model2,
                Some("3") => Spe10Model::Model3,
                Some(other) => return Err(Error::Config(format!("media.model: expected 1, 2 or 3, got {other:?}"))),
            };
            let perm = media("media.perm_file")
                .ok_or_else(|| Error::Config("media.perm_file is required for spe10 media".into()))?;
            MediaSource::Spe10 {
                model,
                perm: PathBuf::from(perm),
                phi: media("media.phi_file").map(PathBuf::from),
            }
        }
        other => return Err(Error::Config(format!("media.source: unknown source {other:?}"))),
    };
    if let Some((key, _)) = media_keys.iter().find(|(_, v)| v.is_some()) {
        return Err(Error::Config(format!("{key} does not apply to {source} media")));
    }
    if let Some(v) = take("media.porosity") {
        c.porosity = optional("media.porosity", &v, "data")?;
    }

    // mortar
    if let Some(v) = take("mortar.polynomial_order") {
        c.mortar.polynomial_order = optional("mortar.polynomial_order", &v, "none")?;
    }
    if let Some(v) = take("mortar.multiscale") {
        c.mortar.multiscale = value("mortar.multiscale", &v)?;
    }
    if let Some(v) = take("mortar.full_trace") {
        c.mortar.full_trace = value("mortar.full_trace", &v)?;
    }
    if let Some(v) = take("mortar.drop_tol") {
        c.drop_tol = value("mortar.drop_tol", &v)?;
    }

    // wells
    if let Some(v) = take("wells.layout") {
        c.wells = match v.as_str() {
            "type1" => WellLayout::TypeI,
            "type2" => WellLayout::TypeII,
            "none" => WellLayout::None,
            other => return Err(Error::Config(format!("wells.layout: unknown layout {other:?}"))),
        };
    }
    if let Some(v) = take("wells.completion") {
        c.completion = match v.as_str() {
            "mid" => Completion::MidLayer,
            "column" => Completion::FullColumn,
            other => return Err(Error::Config(format!("wells.completion: unknown value {other:?}"))),
        };
    }
    if let Some(v) = take("wells.total_rate") {
        c.total_rate = optional("wells.total_rate", &v, "auto")?;
    }

    // fluid, time, solver controls
    let floats: [(&str, &mut f64); 8] = [
        ("fluid.mu_w", &mut c.fluid.mu_w),
        ("fluid.mu_o", &mut c.fluid.mu_o),
        ("fluid.exp_w", &mut c.fluid.exp_w),
        ("fluid.exp_o", &mut c.fluid.exp_o),
        ("time.total", &mut c.total_time),
        ("time.interval", &mut c.outer_interval),
        ("smoothing.damping", &mut c.smoothing_damping),
        ("transport.cfl", &mut c.cfl),
    ];
    for (key, slot) in floats {
        if let Some(v) = take(key) {
            *slot = value(key, &v)?;
        }
    }
    if let Some(v) = take("smoothing.iterations") {
        c.smoothing_iterations = value("smoothing.iterations", &v)?;
    }
    if let Some(v) = take("output.dir") {
        c.output_dir = optional("output.dir", &v, "none")?;
    }

    if let Some(key) = entries.keys().next() {
        return Err(Error::Config(format!("unknown key {key}")));
    }
    c.validate()?;
    Ok(c)
}

/// Writes every key of `config`; `parse(to_text(c)) == c`.
pub fn to_text(c: &SimConfig) -> String {
    let mut out = String::new();
    let mut put = |key: &str, value: String| {
        let _ = writeln!(out, "{key} = {value}");
    };
    put("mode", c.mode.name().into());
    put("seed", c.seed.to_string());
    put("coarsening", c.coarsening.to_string());
    put("refresh_every", c.refresh_every.to_string());
    match &c.media {
        MediaSource::Synthetic { field, dims, spacing } => {
            put("media.source", "synthetic".into());
            match field {
                SyntheticField::Uniform { k } => {
                    put("media.kind", "uniform".into());
                    put("media.k", k.to_string());
                }
                SyntheticField::Layered { contrast, bands } => {
                    put("media.kind", "layered".into());
                    put("media.contrast", contrast.to_string());
                    put("media.bands", bands.to_string());
                }
                SyntheticField::Lognormal { sigma, correlation } => {
                    put("media.kind", "lognormal".into());
                    put("media.sigma", sigma.to_string());
                    put("media.correlation", correlation.to_string());
                }
                SyntheticField::Channel => put("media.kind", "channel".into()),
            }
            put("media.dims", join(dims));
            put("media.spacing", join(spacing));
        }
        MediaSource::Spe10 { model, perm, phi } => {
            put("media.source", "spe10".into());
            let m = match model {
                Spe10Model::Model1 => "1",
                Spe10Model::Model2 => "2",
                Spe10Model::Model3 => "3",
            };
            put("media.model", m.into());
            put("media.perm_file", perm.display().to_string());
            if let Some(phi) = phi {
                put("media.phi_file", phi.display().to_string());
            }
        }
    }
    put("media.porosity", c.porosity.map_or("data".into(), |p| p.to_string()));
    put(
        "mortar.polynomial_order",
        c.mortar.polynomial_order.map_or("none".into(), |r| r.to_string()),
    );
    put("mortar.multiscale", c.mortar.multiscale.to_string());
    put("mortar.full_trace", c.mortar.full_trace.to_string());
    put("mortar.drop_tol", c.drop_tol.to_string());
    let layout = match c.wells {
        WellLayout::TypeI => "type1",
        WellLayout::TypeII => "type2",
        WellLayout::None => "none",
    };
    put("wells.layout", layout.into());
    let completion = match c.completion {
        Completion::MidLayer => "mid",
        Completion::FullColumn => "column",
    };
    put("wells.completion", completion.into());
    put("wells.total_rate", c.total_rate.map_or("auto".into(), |r| r.to_string()));
    put("fluid.mu_w", c.fluid.mu_w.to_string());
    put("fluid.mu_o", c.fluid.mu_o.to_string());
    put("fluid.exp_w", c.fluid.exp_w.to_string());
    put("fluid.exp_o", c.fluid.exp_o.to_string());
    put("time.total", c.total_time.to_string());
    put("time.interval", c.outer_interval.to_string());
    put("smoothing.iterations", c.smoothing_iterations.to_string());
    put("smoothing.damping", c.smoothing_damping.to_string());
    put("transport.cfl", c.cfl.to_string());
    if let Some(dir) = &c.output_dir {
        put("output.dir", dir.display().to_string());
    }
    out
}
