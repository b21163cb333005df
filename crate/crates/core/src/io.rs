//! File formats: quadrature records, density matrices, Wigner slices,
//! wavepackets, trace batches and herald events.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fock::{CMatrix, FockCutoff, TwoModeState, C64};
use crate::quadrature::QuadratureRecord;
use crate::sync_sim::HeraldEvent;
use crate::temporal_modes::ModeFunction;
use crate::tomography::MleDiagnostics;
use crate::wigner::{Axis, WignerSlice};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "json" | "ndjson")
    )
}

/// Header `theta1_deg,theta2_deg,x1,x2,tau1_ns,tau2_ns`.
pub fn write_records_csv<W: Write>(writer: W, records: &[QuadratureRecord]) -> Result<()> {
    write_rows_csv(writer, records)
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<QuadratureRecord>> {
    read_rows_csv(reader)
}

pub fn write_records_jsonl<W: Write>(mut writer: W, records: &[QuadratureRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records_jsonl<R: Read>(reader: R) -> Result<Vec<QuadratureRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// CSV unless the extension is `.jsonl`, `.ndjson` or `.json`.
pub fn save_records(path: &Path, records: &[QuadratureRecord]) -> Result<()> {
    let w = create(path)?;
    if is_jsonl(path) {
        write_records_jsonl(w, records)
    } else {
        write_records_csv(w, records)
    }
}

pub fn load_records(path: &Path) -> Result<Vec<QuadratureRecord>> {
    let f = File::open(path)?;
    let records = if is_jsonl(path) {
        read_records_jsonl(f)?
    } else {
        read_records_csv(f)?
    };
    if records.is_empty() {
        return Err(HomError::Empty(format!("no records in {}", path.display())));
    }
    Ok(records)
}

fn write_rows_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows_csv<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(HomError::from)).collect()
}

pub fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows_csv(create(path)?, rows)
}

pub fn load_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_rows_csv(File::open(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Density matrix file: cutoff, row-major `[re, im]` entries, diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixFile {
    pub cutoff: FockCutoff,
    pub entries: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<MleDiagnostics>,
}

impl DensityMatrixFile {
    pub fn from_state(state: &TwoModeState, diagnostics: Option<MleDiagnostics>) -> Self {
        let m = state.matrix();
        let entries = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| [m[(i, j)].re, m[(i, j)].im]))
            .collect();
        DensityMatrixFile {
            cutoff: state.cutoff(),
            entries,
            diagnostics,
        }
    }

    pub fn to_state(&self) -> Result<TwoModeState> {
        let d = self.cutoff.dim2();
        if self.entries.len() != d * d {
            return Err(HomError::state(format!(
                "expected {} entries, found {}",
                d * d,
                self.entries.len()
            )));
        }
        let m = CMatrix::from_fn(d, d, |i, j| {
            let [re, im] = self.entries[i * d + j];
            C64::new(re, im)
        });
        TwoModeState::new(self.cutoff, m)
    }
}

pub fn save_state(path: &Path, state: &TwoModeState, diagnostics: Option<MleDiagnostics>) -> Result<()> {
    save_json(path, &DensityMatrixFile::from_state(state, diagnostics))
}

pub fn load_state(path: &Path) -> Result<(TwoModeState, Option<MleDiagnostics>)> {
    let file: DensityMatrixFile = load_json(path)?;
    Ok((file.to_state()?, file.diagnostics))
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::X1 => "x1",
        Axis::P1 => "p1",
        Axis::X2 => "x2",
        Axis::P2 => "p2",
    }
}

/// Matrix CSV: the header names the axes (`x1\x2`) and lists column
/// coordinates; each row starts with its row coordinate.
pub fn write_matrix_csv<W: Write>(
    writer: W,
    corner: &str,
    rows: &[f64],
    cols: &[f64],
    values: &DMatrix<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![corner.to_string()];
    header.extend(cols.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![r.to_string()];
        rec.extend((0..cols.len()).map(|j| values[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_matrix_csv`]: `(corner, rows, cols, values)`.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(String, Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = r.records();
    let header = records.next().ok_or_else(|| HomError::Empty("matrix CSV".into()))??;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| HomError::state(format!("bad number {s:?}: {e}")))
    };
    let corner = header.get(0).unwrap_or_default().to_string();
    let cols = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec?;
        rows.push(parse(&rec[0])?);
        let row = rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        if row.len() != cols.len() {
            return Err(HomError::state("ragged matrix CSV"));
        }
        values.extend(row);
    }
    let m = DMatrix::from_row_slice(rows.len(), cols.len(), &values);
    Ok((corner, rows, cols, m))
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns both paths.
pub fn save_slice(dir: &Path, stem: &str, slice: &WignerSlice) -> Result<[std::path::PathBuf; 2]> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let corner = format!(
        "{}\\{}",
        axis_name(slice.plane.row_axis),
        axis_name(slice.plane.col_axis)
    );
    write_matrix_csv(create(&csv_path)?, &corner, &slice.rows, &slice.cols, &slice.values)?;
    save_json(&json_path, &slice.metadata())?;
    Ok([csv_path, json_path])
}

#[derive(Serialize, Deserialize)]
struct ModeRow {
    t_ns: f64,
    amplitude: f64,
}

/// `t_ns,amplitude`.
pub fn save_mode(path: &Path, mode: &ModeFunction) -> Result<()> {
    let rows: Vec<ModeRow> = mode
        .times()
        .into_iter()
        .zip(mode.samples())
        .map(|(t_ns, &amplitude)| ModeRow { t_ns, amplitude })
        .collect();
    save_csv(path, &rows)
}

pub fn load_mode(path: &Path) -> Result<ModeFunction> {
    let rows: Vec<ModeRow> = load_csv(path)?;
    if rows.len() < 2 {
        return Err(HomError::Empty("mode CSV needs two or more samples".into()));
    }
    let dt = rows[1].t_ns - rows[0].t_ns;
    ModeFunction::normalized(rows[0].t_ns, dt, rows.iter().map(|r| r.amplitude).collect())
}

/// One trace per row under a header of sample times.
pub fn save_traces(path: &Path, t0: f64, dt: f64, traces: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record((0..traces.ncols()).map(|j| (t0 + j as f64 * dt).to_string()))?;
    for i in 0..traces.nrows() {
        w.write_record((0..traces.ncols()).map(|j| traces[(i, j)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Returns `(t0, dt, traces)`.
pub fn load_traces(path: &Path) -> Result<(f64, f64, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| HomError::state(format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() < 2 || rows[0].len() < 2 {
        return Err(HomError::Empty("trace CSV needs a time header and traces".into()));
    }
    let times = rows.remove(0);
    let n = times.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(HomError::state("ragged trace CSV"));
    }
    let flat: Vec<f64> = rows.concat();
    Ok((
        times[0],
        times[1] - times[0],
        DMatrix::from_row_slice(rows.len(), n, &flat),
    ))
}

/// `release_time_s,storage1_ns,storage2_ns`.
pub fn save_events(path: &Path, events: &[HeraldEvent]) -> Result<()> {
    save_csv(path, events)
}

pub fn load_events(path: &Path) -> Result<Vec<HeraldEvent>> {
    load_csv(path)
}
