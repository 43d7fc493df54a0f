//! CSV and JSON persistence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dataset::{uniform_step, Channel, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::eval::{link_vars, motion_vars, DiscoveredModel, MotionLaw, Provenance};
use crate::numeric::{cumtrapz, diff_central};
use crate::symreg::{Expr, ParetoFront};

/// `<dir>/<stem>.meta.json` next to a CSV file.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    csv.with_file_name(format!("{stem}.meta.json"))
}

/// Shortest decimal text that parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

fn parse_f64(s: &str, row: usize, col: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Dataset(format!("row {row}, column `{col}`: cannot parse `{s}`")))
}

/// Writes `columns` under `header` as CSV with exact float text.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let n = columns.first().map_or(0, |c| c.len());
    let mut row = Vec::with_capacity(columns.len());
    for i in 0..n {
        row.clear();
        row.extend(columns.iter().map(|c| fmt_f64(c[i])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a numeric CSV into named columns.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Dataset(format!("{other:?}")),
        })?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            cols[j].push(parse_f64(field, i + 1, &header[j])?);
        }
    }
    Ok((header, cols))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses JSON text, turning syntax errors into [`Error::Parse`] with a byte offset.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        msg: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Writes the dataset as `t,u,x,xdot,xddot[,z]` plus the `.meta.json` sidecar.
///
/// Missing response channels are written as `NaN` so the header is fixed.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let nan = vec![f64::NAN; ds.len()];
    let get = |c: Channel| ds.channel(c).unwrap_or(&nan);
    let mut header = vec!["t", "u", "x", "xdot", "xddot"];
    let mut cols: Vec<&[f64]> = vec![&ds.t, &ds.u, get(Channel::X), get(Channel::Xdot), get(Channel::Xddot)];
    if let Some(z) = &ds.z {
        header.push("z");
        cols.push(z);
    }
    write_columns(path, &header, &cols)?;
    write_json(&sidecar_path(path), &ds.meta)
}

/// Loads a dataset CSV. Response columns may be absent or all-`NaN`; with
/// `derive` set, missing kinematic channels are reconstructed from the
/// present ones and listed in `meta.derived`.
pub fn load_dataset(path: &Path, derive: bool) -> Result<Dataset> {
    let (header, mut cols) = read_columns(path)?;
    let mut take = |name: &str| -> Option<Vec<f64>> {
        let i = header.iter().position(|h| h == name)?;
        let v = std::mem::take(&mut cols[i]);
        (!v.iter().all(|x| x.is_nan())).then_some(v)
    };
    let t = take("t").ok_or_else(|| Error::Dataset("missing column `t`".into()))?;
    let u = take("u").ok_or_else(|| Error::Dataset("missing column `u`".into()))?;
    let x = take("x").or_else(|| take("displacement"));
    let xdot = take("xdot").or_else(|| take("velocity"));
    let xddot = take("xddot").or_else(|| take("acceleration"));
    let z = take("z");
    uniform_step(&t)?;
    let sidecar = sidecar_path(path);
    let meta: DatasetMeta = if sidecar.exists() { read_json(&sidecar)? } else { DatasetMeta::default() };
    let mut ds = Dataset {
        t,
        u,
        x,
        xdot,
        xddot,
        z,
        meta,
    };
    ds.validate()?;
    if derive {
        derive_channels(&mut ds);
    }
    Ok(ds)
}

/// Fills missing kinematic channels: differentiates downwards with the
/// second-order stencil, integrates upwards with the trapezoid rule.
pub fn derive_channels(ds: &mut Dataset) {
    let dt = ds.dt();
    let init = ds.meta.initial_state.unwrap_or([0.0; 3]);
    let mark = |ds: &mut Dataset, c: Channel, v: Vec<f64>| {
        *ds.channel_mut(c) = Some(v);
        if !ds.meta.derived.iter().any(|d| d == c.name()) {
            ds.meta.derived.push(c.name().to_string());
        }
    };
    if ds.xdot.is_none() {
        if let Some(x) = &ds.x {
            let v = diff_central(x, dt);
            mark(ds, Channel::Xdot, v);
        } else if let Some(a) = &ds.xddot {
            let v = cumtrapz(a, dt, init[1]);
            mark(ds, Channel::Xdot, v);
        }
    }
    if ds.xddot.is_none() {
        if let Some(v) = &ds.xdot {
            let a = diff_central(v, dt);
            mark(ds, Channel::Xddot, a);
        }
    }
    if ds.x.is_none() {
        if let Some(v) = &ds.xdot {
            let x = cumtrapz(v, dt, init[0]);
            mark(ds, Channel::X, x);
        }
    }
}

/// Reads a `t,u` forcing file.
pub fn read_forcing_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (header, mut cols) = read_columns(path)?;
    let mut col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .map(|i| std::mem::take(&mut cols[i]))
            .ok_or_else(|| Error::Dataset(format!("{}: missing column `{name}`", path.display())))
    };
    let t = col("t")?;
    let u = col("u")?;
    if t.len() < 2 {
        return Err(Error::Dataset(format!("{}: need at least two samples", path.display())));
    }
    Ok((t, u))
}

/// Serde adapter writing non-finite samples of a series as `null` (JSON
/// has no NaN) and reading `null` back as NaN.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// Version written into model files; anything else is rejected on load.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    motion: MotionFile,
    /// `ż` over `(xdot, z)` as an s-expression.
    link: String,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum MotionFile {
    Physical {
        m: f64,
        c: f64,
        k: f64,
        alpha: f64,
        stiffness_power: u8,
    },
    /// `ẍ` over `(x, xdot, z, u)` as an s-expression.
    Symbolic { expr: String },
}

pub fn model_to_json(model: &DiscoveredModel) -> String {
    let motion = match &model.motion {
        MotionLaw::Physical {
            m,
            c,
            k,
            alpha,
            stiffness_power,
        } => MotionFile::Physical {
            m: *m,
            c: *c,
            k: *k,
            alpha: *alpha,
            stiffness_power: *stiffness_power,
        },
        MotionLaw::Symbolic(e) => MotionFile::Symbolic {
            expr: e.to_sexpr(&motion_vars()),
        },
    };
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        motion,
        link: model.link.to_sexpr(&link_vars()),
        provenance: model.provenance.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
    text.push('\n');
    text
}

pub fn model_from_json(text: &str) -> Result<DiscoveredModel> {
    let raw: serde_json::Value = parse_json(text)?;
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::UnknownVersion(u32::try_from(v).unwrap_or(u32::MAX))),
        None => return Err(Error::Config("model file has no integer `version`".into())),
    }
    let file: ModelFile = serde_json::from_value(raw).map_err(|e| Error::Config(format!("model file: {e}")))?;
    let motion = match file.motion {
        MotionFile::Physical {
            m,
            c,
            k,
            alpha,
            stiffness_power,
        } => MotionLaw::Physical {
            m,
            c,
            k,
            alpha,
            stiffness_power,
        },
        MotionFile::Symbolic { expr } => MotionLaw::Symbolic(Expr::parse_sexpr(&expr, &motion_vars())?),
    };
    let model = DiscoveredModel {
        motion,
        link: Expr::parse_sexpr(&file.link, &link_vars())?,
        provenance: file.provenance,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &DiscoveredModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<DiscoveredModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

/// Writes a Pareto front as `complexity,loss,sexpr,infix`.
pub fn save_front(path: &Path, front: &ParetoFront) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["complexity", "loss", "sexpr", "infix"])?;
    for m in &front.members {
        w.write_record([
            m.complexity.to_string(),
            fmt_f64(m.loss),
            m.expr.to_sexpr(&front.vars),
            m.expr.to_infix(&front.vars, 6),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_points_into_text() {
        let text = "{\n  \"a\": 1,\n  \"b\": ";
        let err = parse_json::<serde_json::Value>(text).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset <= text.len() && offset > 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn benchmark_model() -> DiscoveredModel {
        DiscoveredModel::from_params(&crate::simulate::BoucWenParams::benchmark())
    }

    #[test]
    fn model_round_trips_exactly() {
        let mut model = benchmark_model();
        model.provenance.seeds = vec![3, 4];
        model.provenance.config_digest = Some("abc".into());
        let back = model_from_json(&model_to_json(&model)).unwrap();
        assert_eq!(back, model);

        let mut symbolic = model.clone();
        symbolic.motion = MotionLaw::Symbolic(model.motion.to_expr());
        let back = model_from_json(&model_to_json(&symbolic)).unwrap();
        assert_eq!(back, symbolic);
    }

    #[test]
    fn hand_written_model_matches_simulator() {
        let text = r#"{
  "version": 1,
  "motion": {"kind": "physical", "m": 2.0, "c": 10.0, "k": 50000.0, "alpha": 1.0, "stiffness_power": 1},
  "link": "(- (- (* 50000.0 xdot) (* 800.0 (* (abs xdot) z))) (* -1100.0 (* xdot (abs z))))"
}"#;
        let model = model_from_json(text).unwrap();
        let p = crate::simulate::BoucWenParams::benchmark();
        let exc = crate::excitation::make_excitation(&crate::excitation::ExcitationSpec::sinesweep(40.0, 20.0, 50.0, 0.2, 3000.0)).unwrap();
        let opts = crate::simulate::IntegrateOptions::default();
        let truth = crate::simulate::simulate_with(&p, &exc, [0.0; 3], opts).unwrap();
        let pred = crate::eval::resimulate(&model, &exc, [0.0; 3], opts).unwrap();
        let (a, b) = (truth.x.unwrap(), pred.x.unwrap());
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-9 * scale, "{p} vs {q}");
        }
    }

    #[test]
    fn truncated_model_reports_offset() {
        let text = model_to_json(&benchmark_model());
        let cut = &text[..text.len() / 2];
        match model_from_json(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset <= cut.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_model_version_is_rejected() {
        let text = model_to_json(&benchmark_model()).replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(model_from_json(&text), Err(Error::UnknownVersion(7))));
    }

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
