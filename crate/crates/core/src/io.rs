//! On-disk formats: physio logs, MCFLIRT-style `.par` motion files, ROI
//! tables and RV series.
//!
//! Every reader skips blank lines and lines starting with `#`, and reports
//! problems with the file path and 1-based line number. Writers emit a
//! leading `# rvrecon <kind> v1` comment so format changes stay detectable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signals::{FrameClock, RespiratoryTrace, RvSeries};

pub const FORMAT_VERSION: u32 = 1;

/// Channel names of a motion row, in file order.
pub const MOTION_CHANNELS: [&str; 6] = ["rot_x", "rot_y", "rot_z", "trans_x", "trans_y", "trans_z"];

/// Per-frame rigid-body motion: three rotations (rad) then three
/// translations (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeries {
    rows: Vec<[f64; 6]>,
    clock: FrameClock,
}

impl MotionSeries {
    pub fn new(rows: Vec<[f64; 6]>, clock: FrameClock) -> Result<Self> {
        if rows.len() != clock.n_frames() {
            return Err(Error::Shape(format!(
                "motion has {} rows for {} frames",
                rows.len(),
                clock.n_frames()
            )));
        }
        if let Some(k) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("motion frame {k}")));
        }
        Ok(Self { rows, clock })
    }

    pub fn rows(&self) -> &[[f64; 6]] {
        &self.rows
    }

    pub fn clock(&self) -> &FrameClock {
        &self.clock
    }

    pub fn n_frames(&self) -> usize {
        self.rows.len()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }
}

/// Per-frame mean BOLD signal of `n_roi` regions, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSeries {
    data: Vec<f64>,
    n_roi: usize,
    clock: FrameClock,
}

impl RoiSeries {
    pub fn new(data: Vec<f64>, n_roi: usize, clock: FrameClock) -> Result<Self> {
        if n_roi == 0 {
            return Err(Error::InvalidArgument("ROI series needs at least one region".into()));
        }
        if data.len() != n_roi * clock.n_frames() {
            return Err(Error::Shape(format!(
                "ROI data has {} values, expected {} frames x {} regions",
                data.len(),
                clock.n_frames(),
                n_roi
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ROI frame {} region {}", i / n_roi, i % n_roi)));
        }
        Ok(Self { data, n_roi, clock })
    }

    pub fn from_channels(channels: &[Vec<f64>], clock: FrameClock) -> Result<Self> {
        let n_roi = channels.len();
        let n = clock.n_frames();
        if let Some(j) = channels.iter().position(|c| c.len() != n) {
            return Err(Error::Shape(format!("ROI channel {j} length differs from clock")));
        }
        let mut data = Vec::with_capacity(n * n_roi);
        for k in 0..n {
            data.extend(channels.iter().map(|c| c[k]));
        }
        Self::new(data, n_roi, clock)
    }

    pub fn n_roi(&self) -> usize {
        self.n_roi
    }

    pub fn n_frames(&self) -> usize {
        self.clock.n_frames()
    }

    pub fn clock(&self) -> &FrameClock {
        &self.clock
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_roi..(k + 1) * self.n_roi]
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.n_roi).copied().collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines with their 1-based numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_finite(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("'{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value '{field}'")));
    }
    Ok(v)
}

/// Read one whitespace-separated column of a physiological log.
pub fn read_physio(path: &Path, column_index: usize, sample_rate_hz: f64) -> Result<RespiratoryTrace> {
    let text = read_text(path)?;
    let mut samples = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        let field = fields.get(column_index).ok_or_else(|| {
            Error::parse(
                path,
                line,
                format!("column {column_index} missing (line has {} columns)", fields.len()),
            )
        })?;
        samples.push(parse_finite(path, line, field)?);
    }
    if samples.is_empty() {
        return Err(Error::parse(path, 0, "physio file has no samples"));
    }
    RespiratoryTrace::new(samples, sample_rate_hz, 0.0)
}

/// Write `[trigger, respiration, pulse]` rows with zero trigger and pulse,
/// so column 1 holds the trace.
pub fn write_physio(path: &Path, trace: &RespiratoryTrace) -> Result<()> {
    let mut out = format!(
        "# rvrecon physio v{FORMAT_VERSION} rate_hz={}\n",
        trace.sample_rate_hz()
    );
    for v in trace.samples() {
        writeln!(out, "0 {v} 0").unwrap();
    }
    write_text(path, &out)
}

pub fn read_motion_par(path: &Path, clock: &FrameClock) -> Result<MotionSeries> {
    let rows = parse_motion_rows(path)?;
    if rows.len() != clock.n_frames() {
        return Err(Error::parse(
            path,
            0,
            format!("{} motion rows but clock has {} frames", rows.len(), clock.n_frames()),
        ));
    }
    MotionSeries::new(rows, *clock)
}

/// As [`read_motion_par`], taking the frame count from the file.
pub fn read_motion_par_with_tr(path: &Path, tr_s: f64) -> Result<MotionSeries> {
    let rows = parse_motion_rows(path)?;
    let clock = FrameClock::new(tr_s, rows.len())?;
    MotionSeries::new(rows, clock)
}

fn parse_motion_rows(path: &Path) -> Result<Vec<[f64; 6]>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 6 motion parameters, found {}", fields.len()),
            ));
        }
        let mut row = [0.0; 6];
        for (slot, f) in row.iter_mut().zip(&fields) {
            *slot = parse_finite(path, line, f)?;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "motion file has no rows"));
    }
    Ok(rows)
}

pub fn write_motion_par(path: &Path, motion: &MotionSeries) -> Result<()> {
    let mut out = format!("# rvrecon par v{FORMAT_VERSION}\n");
    for r in motion.rows() {
        writeln!(out, "{} {} {} {} {} {}", r[0], r[1], r[2], r[3], r[4], r[5]).unwrap();
    }
    write_text(path, &out)
}

/// Read a frames x ROIs table separated by commas or tabs. A first row
/// that does not parse as numbers is treated as a header.
pub fn read_roi_table(path: &Path, clock: &FrameClock) -> Result<RoiSeries> {
    let (data, n_roi, n_rows) = parse_roi_table(path)?;
    if n_rows != clock.n_frames() {
        return Err(Error::parse(
            path,
            0,
            format!("{n_rows} ROI rows but clock has {} frames", clock.n_frames()),
        ));
    }
    RoiSeries::new(data, n_roi, *clock)
}

/// As [`read_roi_table`], taking the frame count from the file.
pub fn read_roi_table_with_tr(path: &Path, tr_s: f64) -> Result<RoiSeries> {
    let (data, n_roi, n_rows) = parse_roi_table(path)?;
    RoiSeries::new(data, n_roi, FrameClock::new(tr_s, n_rows)?)
}

fn parse_roi_table(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = read_text(path)?;
    let mut data = Vec::new();
    let mut n_roi = None;
    let mut n_rows = 0usize;
    for (idx, (line, l)) in data_lines(&text).enumerate() {
        let sep = if l.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = l.split(sep).map(str::trim).collect();
        if idx == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        match n_roi {
            None => n_roi = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("ragged row: {} columns, expected {n}", fields.len()),
                ))
            }
            Some(_) => {}
        }
        for f in fields {
            data.push(parse_finite(path, line, f)?);
        }
        n_rows += 1;
    }
    let n_roi = n_roi.ok_or_else(|| Error::parse(path, 0, "ROI table has no data rows"))?;
    Ok((data, n_roi, n_rows))
}

pub fn write_roi_table(path: &Path, roi: &RoiSeries) -> Result<()> {
    let mut out = format!("# rvrecon roi v{FORMAT_VERSION}\n");
    let header: Vec<String> = (0..roi.n_roi()).map(|j| format!("roi{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for k in 0..roi.n_frames() {
        let row: Vec<String> = roi.frame(k).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Write `frame_index,time_s,rv` rows; with `extrapolated` a fourth 0/1
/// column marks frames that carry no direct model estimate.
pub fn write_rv(path: &Path, rv: &RvSeries, extrapolated: Option<&[bool]>) -> Result<()> {
    let mut out = format!("# rvrecon rv v{FORMAT_VERSION}\n");
    out.push_str(if extrapolated.is_some() {
        "frame_index,time_s,rv,extrapolated\n"
    } else {
        "frame_index,time_s,rv\n"
    });
    for (k, v) in rv.values().iter().enumerate() {
        write!(out, "{k},{},{v}", rv.clock().time(k)).unwrap();
        if let Some(flags) = extrapolated {
            write!(out, ",{}", u8::from(flags[k])).unwrap();
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read an RV file and rebuild its clock from the time column. Returns the
/// series and the extrapolation flags (all false when the column is absent).
pub fn read_rv(path: &Path, rv_window_s: f64) -> Result<(RvSeries, Vec<bool>)> {
    let text = read_text(path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut flags = Vec::new();
    for (line, l) in data_lines(&text) {
        if l.starts_with("frame_index") {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::parse(path, line, format!("expected 3 or 4 columns, found {}", fields.len())));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad frame index '{}'", fields[0])))?;
        if idx != values.len() {
            return Err(Error::parse(path, line, format!("frame index {idx} out of sequence")));
        }
        times.push(parse_finite(path, line, fields[1])?);
        values.push(parse_finite(path, line, fields[2])?);
        flags.push(fields.get(3).is_some_and(|f| *f == "1"));
    }
    if values.is_empty() {
        return Err(Error::parse(path, 0, "RV file has no rows"));
    }
    let tr = if times.len() > 1 {
        (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
    } else {
        crate::signals::DEFAULT_TR_S
    };
    let clock = FrameClock::with_start(tr, values.len(), times[0])?;
    Ok((RvSeries::new(values, clock, rv_window_s)?, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn physio_column_projection() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "phys.txt", "0 10 5\n0 11 5\n1 12 5\n");
        let t = read_physio(&p, 1, 400.0).unwrap();
        assert_eq!(t.samples(), &[10.0, 11.0, 12.0]);
        assert_eq!(t.sample_rate_hz(), 400.0);
        let err = read_physio(&p, 7, 400.0).unwrap_err().to_string();
        assert!(err.contains("column 7"), "{err}");
    }

    #[test]
    fn physio_errors() {
        let dir = TempDir::new().unwrap();
        let bad = write(&dir, "bad.txt", "0 1 2\n0 x 2\n");
        let err = read_physio(&bad, 1, 400.0).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        let empty = write(&dir, "empty.txt", "");
        assert!(read_physio(&empty, 1, 400.0).is_err());
        let nan = write(&dir, "nan.txt", "0 1 2\n0 NaN 2\n");
        assert!(read_physio(&nan, 1, 400.0).unwrap_err().to_string().contains(":2:"));
    }

    #[test]
    fn physio_round_trip() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("rt.txt");
        let t = RespiratoryTrace::new(vec![0.1, -2.5e-7, 1.0 / 3.0, 12345.678], 400.0, 0.0).unwrap();
        write_physio(&p, &t).unwrap();
        assert_eq!(read_physio(&p, 1, 400.0).unwrap(), t);
    }

    #[test]
    fn par_field_order() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "m.par", "0.001 -0.002 0.0 0.5 0.1 -0.3\n");
        let m = read_motion_par(&p, &FrameClock::new(0.72, 1).unwrap()).unwrap();
        assert_eq!(m.rows()[0], [0.001, -0.002, 0.0, 0.5, 0.1, -0.3]);
    }

    #[test]
    fn par_column_and_length_checks() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "m.par", "0 0 0 0 0 0\n0 0 0 0 0\n");
        let err = read_motion_par(&p, &FrameClock::new(0.72, 2).unwrap()).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("6"), "{err}");

        let body: String = (0..900).map(|_| "0 0 0 0 0 0\n").collect();
        let p = write(&dir, "long.par", &body);
        assert!(read_motion_par(&p, &FrameClock::new(0.72, 900).unwrap()).is_ok());
        assert!(read_motion_par(&p, &FrameClock::new(0.72, 899).unwrap()).is_err());
    }

    #[test]
    fn roi_table_variants() {
        let dir = TempDir::new().unwrap();
        let clock = FrameClock::new(0.72, 2).unwrap();
        let p = write(&dir, "a.csv", "1,2,3\n4,5,6\n");
        let r = read_roi_table(&p, &clock).unwrap();
        assert_eq!(r.n_roi(), 3);
        assert_eq!(r.channel(1), vec![2.0, 5.0]);
        let p = write(&dir, "b.csv", "r1,r2,r3\n1,2,3\n4,5,6\n");
        assert_eq!(read_roi_table(&p, &clock).unwrap().frame(1), &[4.0, 5.0, 6.0]);
        let p = write(&dir, "c.tsv", "1\t2\t3\n4\t5\t6\n");
        assert_eq!(read_roi_table(&p, &clock).unwrap().n_roi(), 3);
        let p = write(&dir, "d.csv", "1,2,3\n4,5\n");
        let err = read_roi_table(&p, &clock).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("ragged"), "{err}");
        let p = write(&dir, "e.csv", "1,2,3\n4,x,6\n");
        assert!(read_roi_table(&p, &clock).is_err());
        let p = write(&dir, "f.csv", "1,2,3\n");
        assert!(read_roi_table(&p, &clock).is_err());
    }

    #[test]
    fn rv_round_trip_with_flags() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("rv.csv");
        let clock = FrameClock::new(0.72, 4).unwrap();
        let rv = RvSeries::new(vec![0.1, 0.2, 0.3, 0.4], clock, 6.0).unwrap();
        write_rv(&p, &rv, Some(&[true, false, false, true])).unwrap();
        let (back, flags) = read_rv(&p, 6.0).unwrap();
        assert_eq!(back.values(), rv.values());
        assert!(back.clock().same_frames(&clock));
        assert_eq!(flags, vec![true, false, false, true]);
    }
}
