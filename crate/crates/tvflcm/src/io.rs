//! Text formats: the wide functional-data input, the stacked landmark
//! dataset, surface exports, fit reports, study reports, and a fit file
//! that round-trips everything prediction needs.
//!
//! Every floating-point value is written with 17 significant digits so
//! files round-trip losslessly; nondeterministic values (wall times) only
//! ever appear on lines starting with `#`.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::fit::FitResult;
use crate::landmark::{LandmarkGrid, StackedLandmarkData};
use crate::model::{CoefficientSurface, Route, ScalarEffect, TimeMargin, TvflcmFit};
use crate::predict::{SurfaceEvaluation, Z_95};
use crate::sim::StudyReport;
use crate::survival::{CumulativeHazard, FunctionalPredictor, SurvivalRecord};
use crate::basis::{make_basis, BasisFamily};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad file structure: {0}")]
    Format(String),

    #[error(transparent)]
    Survival(#[from] crate::survival::SurvivalError),

    #[error(transparent)]
    Landmark(#[from] crate::landmark::LandmarkError),
}

/// Full-precision decimal text for one value (17 significant digits).
pub fn fmt_g17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else if v.is_infinite() {
        "-inf".to_string()
    } else {
        "nan".to_string()
    }
}

fn parse_f64(token: &str, line: usize) -> Result<f64, IoError> {
    token.trim().parse::<f64>().map_err(|_| IoError::Parse {
        line,
        message: format!("expected a number, got {token:?}"),
    })
}

// ----------------------------------------------------------------------
// Wide functional-data input (one row per subject)
// ----------------------------------------------------------------------

/// How the functional grid abscissae are supplied.
#[derive(Debug, Clone)]
pub enum GridSpec {
    /// `J` midpoints of the unit interval.
    Uniform(usize),
    /// Explicit abscissae.
    Points(Vec<f64>),
}

impl GridSpec {
    pub fn resolve(&self, j: usize) -> Result<Vec<f64>, IoError> {
        match self {
            GridSpec::Uniform(n) => {
                if *n != j {
                    return Err(IoError::Format(format!(
                        "grid declares {n} points but the data have {j} functional columns"
                    )));
                }
                Ok((0..j).map(|v| (v as f64 + 0.5) / j as f64).collect())
            }
            GridSpec::Points(p) => {
                if p.len() != j {
                    return Err(IoError::Format(format!(
                        "grid file has {} points but the data have {j} functional columns",
                        p.len()
                    )));
                }
                Ok(p.clone())
            }
        }
    }
}

/// Reads the wide input format: header `id,time,delta,<scalars...>,z_0001..`,
/// one subject per row. Scalar covariate names are every non-`z_` column
/// after `delta`.
pub fn read_functional_dataset(
    reader: impl BufRead,
    grid: &GridSpec,
) -> Result<(Vec<SurvivalRecord>, FunctionalPredictor, Vec<String>), IoError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IoError::Format("empty input".into()))?;
    let header = header?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "time" || cols[2] != "delta" {
        return Err(IoError::Format(
            "header must start with id,time,delta and carry at least one z_ column".into(),
        ));
    }
    let first_z = cols
        .iter()
        .position(|c| c.starts_with("z_"))
        .ok_or_else(|| IoError::Format("no z_ columns found".into()))?;
    if cols[first_z..].iter().any(|c| !c.starts_with("z_")) {
        return Err(IoError::Format(
            "functional z_ columns must be contiguous and last".into(),
        ));
    }
    let scalar_names: Vec<String> = cols[3..first_z].to_vec();
    let j = cols.len() - first_z;

    let mut records = Vec::new();
    let mut z_rows: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let id: u64 = fields[0].trim().parse().map_err(|_| IoError::Parse {
            line: line_no,
            message: format!("bad subject id {:?}", fields[0]),
        })?;
        let time = parse_f64(fields[1], line_no)?;
        if !time.is_finite() || time <= 0.0 {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("time must be positive, got {time}"),
            });
        }
        let delta_raw = parse_f64(fields[2], line_no)?;
        if delta_raw != 0.0 && delta_raw != 1.0 {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("delta must be 0 or 1, got {delta_raw}"),
            });
        }
        let mut x = Vec::with_capacity(scalar_names.len());
        for (c, field) in fields[3..first_z].iter().enumerate() {
            let v = parse_f64(field, line_no)?;
            if !v.is_finite() {
                return Err(IoError::Parse {
                    line: line_no,
                    message: format!("covariate {} is not finite", scalar_names[c]),
                });
            }
            x.push(v);
        }
        for field in &fields[first_z..] {
            z_rows.push(parse_f64(field, line_no)?);
        }
        records.push(
            SurvivalRecord::new(id, time, delta_raw as u8, x).map_err(|e| IoError::Parse {
                line: line_no,
                message: e.to_string(),
            })?,
        );
    }
    if records.is_empty() {
        return Err(IoError::Format("no data rows".into()));
    }
    let grid_points = grid.resolve(j)?;
    let values = Array2::from_shape_vec((records.len(), j), z_rows)
        .expect("row-major functional block");
    let z = FunctionalPredictor::new(values, grid_points)?;
    Ok((records, z, scalar_names))
}

/// Writes the wide input format.
pub fn write_functional_dataset(
    mut w: impl Write,
    records: &[SurvivalRecord],
    z: &FunctionalPredictor,
    scalar_names: &[String],
) -> Result<(), IoError> {
    let j = z.n_points();
    let mut header = String::from("id,time,delta");
    for name in scalar_names {
        header.push(',');
        header.push_str(name);
    }
    for v in 0..j {
        header.push_str(&format!(",z_{:04}", v + 1));
    }
    writeln!(w, "{header}")?;
    for (i, r) in records.iter().enumerate() {
        let mut line = format!("{},{},{}", r.id, fmt_g17(r.y), r.delta);
        for v in &r.x {
            line.push(',');
            line.push_str(&fmt_g17(*v));
        }
        for v in z.values.row(i).iter() {
            line.push(',');
            line.push_str(&fmt_g17(*v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Stacked landmark dataset
// ----------------------------------------------------------------------

/// Writes the flat stacked-landmark layout: header then one row per
/// (subject, landmark) with columns `id,time,d,svec,x_*,u_*,z_*,l_*`.
/// `smat` and `zlmat` are reconstructed on load.
pub fn write_landmark_dataset(
    mut w: impl Write,
    data: &StackedLandmarkData,
) -> Result<(), IoError> {
    let p_x = data.x.ncols();
    let j = data.u_grid.len();
    let mut header = String::from("id,time,d,svec");
    for c in 0..p_x {
        header.push_str(&format!(",x_{}", c + 1));
    }
    for v in 0..j {
        header.push_str(&format!(",u_{}", v + 1));
    }
    for v in 0..j {
        header.push_str(&format!(",z_{}", v + 1));
    }
    for v in 0..j {
        header.push_str(&format!(",l_{}", v + 1));
    }
    writeln!(w, "{header}")?;
    for row in 0..data.n_rows() {
        let mut line = format!(
            "{},{},{},{}",
            data.id[row],
            fmt_g17(data.capped_time[row]),
            data.d[row],
            fmt_g17(data.svec[row]),
        );
        for c in 0..p_x {
            line.push(',');
            line.push_str(&fmt_g17(data.x[[row, c]]));
        }
        for v in 0..j {
            line.push(',');
            line.push_str(&fmt_g17(data.u_grid[v]));
        }
        for v in 0..j {
            line.push(',');
            line.push_str(&fmt_g17(data.zmat[[row, v]]));
        }
        for v in 0..j {
            line.push(',');
            line.push_str(&fmt_g17(data.lmat[v]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads the flat stacked-landmark layout back. Strata are recovered from
/// the distinct `svec` values in order of appearance; window lengths are
/// not stored in the format and load as infinite (the capped times and
/// event indicators already encode the windowing).
pub fn read_landmark_dataset(reader: impl BufRead) -> Result<StackedLandmarkData, IoError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IoError::Format("empty landmark file".into()))?;
    let header = header?;
    let cols: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if cols.len() < 5 || cols[0] != "id" || cols[1] != "time" || cols[2] != "d" || cols[3] != "svec"
    {
        return Err(IoError::Format(
            "landmark header must start with id,time,d,svec".into(),
        ));
    }
    let p_x = cols.iter().filter(|c| c.starts_with("x_")).count();
    let j = cols.iter().filter(|c| c.starts_with("u_")).count();
    if j == 0
        || cols.iter().filter(|c| c.starts_with("z_")).count() != j
        || cols.iter().filter(|c| c.starts_with("l_")).count() != j
    {
        return Err(IoError::Format(
            "landmark file needs matching u_, z_, l_ column groups".into(),
        ));
    }

    let mut id = Vec::new();
    let mut capped_time = Vec::new();
    let mut d = Vec::new();
    let mut svec = Vec::new();
    let mut x_rows = Vec::new();
    let mut z_rows = Vec::new();
    let mut u_grid: Option<Vec<f64>> = None;
    let mut lmat: Option<Vec<f64>> = None;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + p_x + 3 * j {
            return Err(IoError::Parse {
                line: line_no,
                message: format!(
                    "expected {} fields, got {}",
                    4 + p_x + 3 * j,
                    fields.len()
                ),
            });
        }
        id.push(fields[0].trim().parse::<u64>().map_err(|_| IoError::Parse {
            line: line_no,
            message: format!("bad id {:?}", fields[0]),
        })?);
        capped_time.push(parse_f64(fields[1], line_no)?);
        d.push(parse_f64(fields[2], line_no)? as u8);
        svec.push(parse_f64(fields[3], line_no)?);
        for f in &fields[4..4 + p_x] {
            x_rows.push(parse_f64(f, line_no)?);
        }
        let u_here: Vec<f64> = fields[4 + p_x..4 + p_x + j]
            .iter()
            .map(|f| parse_f64(f, line_no))
            .collect::<Result<_, _>>()?;
        match &u_grid {
            None => u_grid = Some(u_here),
            Some(u) if *u == u_here => {}
            Some(_) => {
                return Err(IoError::Parse {
                    line: line_no,
                    message: "functional grid differs between rows".into(),
                })
            }
        }
        for f in &fields[4 + p_x + j..4 + p_x + 2 * j] {
            z_rows.push(parse_f64(f, line_no)?);
        }
        let l_here: Vec<f64> = fields[4 + p_x + 2 * j..]
            .iter()
            .map(|f| parse_f64(f, line_no))
            .collect::<Result<_, _>>()?;
        match &lmat {
            None => lmat = Some(l_here),
            Some(l) if *l == l_here => {}
            Some(_) => {
                return Err(IoError::Parse {
                    line: line_no,
                    message: "integration multipliers differ between rows".into(),
                })
            }
        }
    }
    let n = id.len();
    if n == 0 {
        return Err(IoError::Format("no landmark rows".into()));
    }
    // strata from distinct svec values in order of appearance
    let mut s_values: Vec<f64> = Vec::new();
    let mut stratum = Vec::with_capacity(n);
    for &s in &svec {
        let pos = match s_values.iter().position(|&v| v == s) {
            Some(p) => p,
            None => {
                s_values.push(s);
                s_values.len() - 1
            }
        };
        stratum.push(pos);
    }
    let grid = LandmarkGrid::new(s_values.clone(), vec![f64::INFINITY; s_values.len()])?;
    let u_grid = u_grid.expect("n > 0");
    let subject: Vec<usize> = (0..n).collect();
    Ok(StackedLandmarkData {
        subject,
        id,
        capped_time,
        d,
        x: Array2::from_shape_vec((n, p_x), x_rows).expect("row-major"),
        svec,
        stratum,
        zmat: Array2::from_shape_vec((n, u_grid.len()), z_rows).expect("row-major"),
        u_grid,
        lmat: Array1::from_vec(lmat.expect("n > 0")),
        grid,
        centered: false,
        centering_means: Vec::new(),
        report: Default::default(),
    })
}

// ----------------------------------------------------------------------
// Surface export
// ----------------------------------------------------------------------

/// Long-format surface file: `u,t,gamma,se,ci_lo,ci_hi` with the interval
/// at `gamma +- 1.959964 se`.
pub fn write_surface_csv(mut w: impl Write, eval: &SurfaceEvaluation) -> Result<(), IoError> {
    writeln!(w, "u,t,gamma,se,ci_lo,ci_hi")?;
    for (ui, &u) in eval.u.iter().enumerate() {
        for (ti, &t) in eval.t.iter().enumerate() {
            let g = eval.values[[ui, ti]];
            let s = eval.se[[ui, ti]];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_g17(u),
                fmt_g17(t),
                fmt_g17(g),
                fmt_g17(s),
                fmt_g17(g - Z_95 * s),
                fmt_g17(g + Z_95 * s)
            )?;
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Fit report
// ----------------------------------------------------------------------

/// Human- and machine-readable fit report: key-value header followed by a
/// coefficient table. Wall times appear on `#` comment lines only.
pub fn write_fit_report(mut w: impl Write, fit: &TvflcmFit) -> Result<(), IoError> {
    writeln!(w, "route {}", fit.route.name())?;
    writeln!(w, "rows {}", fit.rows)?;
    writeln!(w, "coefficients {}", fit.fit.coefficients.len())?;
    writeln!(w, "iterations {}", fit.fit.iterations)?;
    writeln!(w, "penalized_loglik {}", fmt_g17(fit.fit.penalized_loglik))?;
    writeln!(w, "loglik {}", fmt_g17(fit.fit.loglik))?;
    writeln!(w, "grad_norm {}", fmt_g17(fit.fit.final_grad_norm))?;
    for (m, l) in fit.fit.lambdas.iter().enumerate() {
        writeln!(w, "lambda_{} {}", m + 1, fmt_g17(*l))?;
    }
    writeln!(w, "edf_total {}", fmt_g17(fit.fit.edf_total))?;
    writeln!(w, "edf_tensor {}", fmt_g17(fit.edf_tensor))?;
    for (c, e) in fit.edf_scalar.iter().enumerate() {
        writeln!(w, "edf_scalar_{} {}", c + 1, fmt_g17(*e))?;
    }
    writeln!(w, "jittered_records {}", fit.jitter.jittered)?;
    for (l, s) in &fit.dropped_landmarks {
        writeln!(w, "dropped_landmark {} {}", l, fmt_g17(*s))?;
    }
    writeln!(w, "# wall_expansion_seconds {}", fit.expansion_seconds)?;
    writeln!(w, "# wall_fit_seconds {}", fit.fit_seconds)?;
    writeln!(w, "table coefficient estimate se")?;
    for (i, v) in fit.fit.coefficients.iter().enumerate() {
        let se = fit.fit.covariance[[i, i]].max(0.0).sqrt();
        writeln!(w, "{} {} {}", i, fmt_g17(*v), fmt_g17(se))?;
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Study report
// ----------------------------------------------------------------------

/// Deterministic study report; wall-clock means live on `#` lines.
pub fn write_study_report(mut w: impl Write, report: &StudyReport) -> Result<(), IoError> {
    writeln!(w, "scenario {}", report.gamma.name())?;
    writeln!(w, "n_subjects {}", report.n_subjects)?;
    writeln!(w, "replications {}", report.replications)?;
    writeln!(w, "seed {}", report.seed)?;
    if let Some(avg) = report.coverage_average {
        writeln!(w, "coverage_average {}", fmt_g17(avg))?;
    }
    for m in &report.methods {
        writeln!(
            w,
            "method {} amse {} successes {} failures {} mean_rows {}",
            m.method,
            fmt_g17(m.amse),
            m.successes,
            m.failures,
            fmt_g17(m.mean_rows)
        )?;
    }
    for m in &report.methods {
        writeln!(
            w,
            "# wall {} expansion_seconds {} fit_seconds {}",
            m.method, m.mean_expansion_seconds, m.mean_fit_seconds
        )?;
    }
    let mut order: Vec<&crate::sim::MethodSummary> = report.methods.iter().collect();
    order.sort_by(|a, b| {
        (a.mean_expansion_seconds + a.mean_fit_seconds)
            .partial_cmp(&(b.mean_expansion_seconds + b.mean_fit_seconds))
            .unwrap()
    });
    let names: Vec<&str> = order.iter().map(|m| m.method.as_str()).collect();
    writeln!(w, "# timing_order_fastest_first {}", names.join(" "))?;
    for r in &report.records {
        let lambdas = r
            .lambdas
            .iter()
            .map(|l| fmt_g17(*l))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            w,
            "rep {} {} ise {} rows {} lambdas {}",
            r.replication,
            r.method,
            fmt_g17(r.ise),
            r.rows,
            lambdas
        )?;
    }
    for f in &report.failures {
        writeln!(w, "failure {f}")?;
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Fit file (round-trips prediction)
// ----------------------------------------------------------------------

fn write_matrix(w: &mut impl Write, name: &str, m: &Array2<f64>) -> Result<(), IoError> {
    writeln!(w, "[{name}] {} {}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        let line = row.iter().map(|v| fmt_g17(*v)).collect::<Vec<_>>().join(" ");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn write_vector(w: &mut impl Write, name: &str, v: &[f64]) -> Result<(), IoError> {
    writeln!(w, "[{name}] {}", v.len())?;
    let line = v.iter().map(|x| fmt_g17(*x)).collect::<Vec<_>>().join(" ");
    writeln!(w, "{line}")?;
    Ok(())
}

fn margin_tag(margin: &TimeMargin) -> String {
    match margin {
        TimeMargin::Constant => "constant".into(),
        TimeMargin::Spline(spec) => format!(
            "spline {} {} {}",
            spec.dimension,
            fmt_g17(spec.domain.0),
            fmt_g17(spec.domain.1)
        ),
    }
}

/// Serializes everything `predict` needs to operate on a fit.
pub fn save_fit(mut w: impl Write, fit: &TvflcmFit) -> Result<(), IoError> {
    writeln!(w, "tvflcm-fit v1")?;
    writeln!(w, "route {}", fit.route.name())?;
    writeln!(
        w,
        "u_spec {} {} {}",
        fit.surface.u_spec.dimension,
        fmt_g17(fit.surface.u_spec.domain.0),
        fmt_g17(fit.surface.u_spec.domain.1)
    )?;
    writeln!(w, "t_margin {}", margin_tag(&fit.surface.t_margin))?;
    write_vector(&mut w, "u_grid", &fit.u_grid)?;
    write_vector(&mut w, "u_weights", &fit.u_weights.to_vec())?;
    write_matrix(&mut w, "xi", &fit.surface.xi)?;
    write_matrix(&mut w, "xi_cov", &fit.surface.covariance)?;
    writeln!(w, "scalars {}", fit.scalar_effects.len())?;
    for (c, eff) in fit.scalar_effects.iter().enumerate() {
        writeln!(w, "scalar_margin_{c} {}", margin_tag(&eff.margin))?;
        write_vector(&mut w, &format!("scalar_coef_{c}"), &eff.coefficients.to_vec())?;
        write_matrix(&mut w, &format!("scalar_cov_{c}"), &eff.covariance)?;
    }
    writeln!(w, "windows {}", fit.windows.len())?;
    for (s, e) in &fit.windows {
        writeln!(w, "window {} {}", fmt_g17(*s), fmt_g17(*e))?;
    }
    writeln!(w, "centering {}", fit.centering.len())?;
    for m in &fit.centering {
        write_vector(&mut w, "centering_row", &m.to_vec())?;
    }
    writeln!(w, "baselines {}", fit.baselines.len())?;
    for h in &fit.baselines {
        writeln!(w, "baseline {}", h.times.len())?;
        for (t, j) in h.times.iter().zip(&h.jumps) {
            writeln!(w, "{} {}", fmt_g17(*t), fmt_g17(*j))?;
        }
    }
    Ok(())
}

struct FitReader<R: BufRead> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
}

impl<R: BufRead> FitReader<R> {
    fn next_line(&mut self) -> Result<(usize, String), IoError> {
        match self.lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(IoError::Format("unexpected end of fit file".into())),
        }
    }

    fn expect_key(&mut self, key: &str) -> Result<Vec<String>, IoError> {
        let (line_no, line) = self.next_line()?;
        let mut parts = line.split_whitespace().map(str::to_string);
        let head = parts.next().unwrap_or_default();
        if head != key {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("expected {key:?}, found {head:?}"),
            });
        }
        Ok(parts.collect())
    }

    fn read_vector(&mut self, key: &str) -> Result<Vec<f64>, IoError> {
        let (line_no, line) = self.next_line()?;
        let tag = format!("[{key}]");
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag.as_str()) {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("expected section {tag}"),
            });
        }
        let n: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(IoError::Parse {
                line: line_no,
                message: "missing vector length".into(),
            })?;
        let (data_line_no, data) = self.next_line()?;
        let values: Vec<f64> = data
            .split_whitespace()
            .map(|t| parse_f64(t, data_line_no))
            .collect::<Result<_, _>>()?;
        if values.len() != n {
            return Err(IoError::Parse {
                line: data_line_no,
                message: format!("expected {n} values, got {}", values.len()),
            });
        }
        Ok(values)
    }

    fn read_matrix(&mut self, key: &str) -> Result<Array2<f64>, IoError> {
        let (line_no, line) = self.next_line()?;
        let tag = format!("[{key}]");
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag.as_str()) {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("expected section {tag}"),
            });
        }
        let rows: usize = parts.next().and_then(|t| t.parse().ok()).ok_or(IoError::Parse {
            line: line_no,
            message: "missing row count".into(),
        })?;
        let cols: usize = parts.next().and_then(|t| t.parse().ok()).ok_or(IoError::Parse {
            line: line_no,
            message: "missing column count".into(),
        })?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (data_line_no, data_line) = self.next_line()?;
            for t in data_line.split_whitespace() {
                data.push(parse_f64(t, data_line_no)?);
            }
        }
        if data.len() != rows * cols {
            return Err(IoError::Format(format!(
                "matrix {key} has {} values, expected {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("validated shape"))
    }
}

fn parse_margin(tokens: &[String], line: usize) -> Result<TimeMargin, IoError> {
    match tokens.first().map(String::as_str) {
        Some("constant") => Ok(TimeMargin::Constant),
        Some("spline") => {
            if tokens.len() != 4 {
                return Err(IoError::Parse {
                    line,
                    message: "spline margin needs dimension and domain".into(),
                });
            }
            let dim: usize = tokens[1].parse().map_err(|_| IoError::Parse {
                line,
                message: "bad margin dimension".into(),
            })?;
            let lo = parse_f64(&tokens[2], line)?;
            let hi = parse_f64(&tokens[3], line)?;
            Ok(TimeMargin::Spline(
                make_basis(BasisFamily::CubicRegression, (lo, hi), dim).map_err(|e| {
                    IoError::Format(format!("margin reconstruction failed: {e}"))
                })?,
            ))
        }
        _ => Err(IoError::Parse {
            line,
            message: "unknown margin tag".into(),
        }),
    }
}

/// Loads a fit file. The returned fit carries everything evaluation and
/// prediction use; optimizer internals are not round-tripped.
pub fn load_fit(reader: impl BufRead) -> Result<TvflcmFit, IoError> {
    let mut r = FitReader {
        lines: reader.lines().enumerate(),
    };
    let (line_no, magic) = r.next_line()?;
    if magic.trim() != "tvflcm-fit v1" {
        return Err(IoError::Parse {
            line: line_no,
            message: "not a tvflcm fit file".into(),
        });
    }
    let route_tokens = r.expect_key("route")?;
    let route = match route_tokens.first().map(String::as_str) {
        Some("poisson") => Route::Poisson,
        Some("landmark") => Route::Landmark,
        other => {
            return Err(IoError::Format(format!("unknown route {other:?}")))
        }
    };
    let u_tokens = r.expect_key("u_spec")?;
    if u_tokens.len() != 3 {
        return Err(IoError::Format("u_spec needs dimension and domain".into()));
    }
    let k_u: usize = u_tokens[0]
        .parse()
        .map_err(|_| IoError::Format("bad u dimension".into()))?;
    let u_lo = parse_f64(&u_tokens[1], 0)?;
    let u_hi = parse_f64(&u_tokens[2], 0)?;
    let u_spec = make_basis(BasisFamily::CyclicCubic, (u_lo, u_hi), k_u)
        .map_err(|e| IoError::Format(format!("u margin reconstruction failed: {e}")))?;
    let t_tokens = r.expect_key("t_margin")?;
    let t_margin = parse_margin(&t_tokens, 0)?;

    let u_grid = r.read_vector("u_grid")?;
    let u_weights = r.read_vector("u_weights")?;
    let xi = r.read_matrix("xi")?;
    let xi_cov = r.read_matrix("xi_cov")?;

    let scalar_count: usize = r
        .expect_key("scalars")?
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or(IoError::Format("bad scalar count".into()))?;
    let mut scalar_effects = Vec::with_capacity(scalar_count);
    for c in 0..scalar_count {
        let tokens = r.expect_key(&format!("scalar_margin_{c}"))?;
        let margin = parse_margin(&tokens, 0)?;
        let coef = r.read_vector(&format!("scalar_coef_{c}"))?;
        let cov = r.read_matrix(&format!("scalar_cov_{c}"))?;
        scalar_effects.push(ScalarEffect {
            margin,
            coefficients: Array1::from_vec(coef),
            covariance: cov,
        });
    }

    let window_count: usize = r
        .expect_key("windows")?
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or(IoError::Format("bad window count".into()))?;
    let mut windows = Vec::with_capacity(window_count);
    for _ in 0..window_count {
        let tokens = r.expect_key("window")?;
        if tokens.len() != 2 {
            return Err(IoError::Format("window needs start and end".into()));
        }
        windows.push((parse_f64(&tokens[0], 0)?, parse_f64(&tokens[1], 0)?));
    }

    let centering_count: usize = r
        .expect_key("centering")?
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or(IoError::Format("bad centering count".into()))?;
    let mut centering = Vec::with_capacity(centering_count);
    for _ in 0..centering_count {
        centering.push(Array1::from_vec(r.read_vector("centering_row")?));
    }

    let baseline_count: usize = r
        .expect_key("baselines")?
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or(IoError::Format("bad baseline count".into()))?;
    let mut baselines = Vec::with_capacity(baseline_count);
    for _ in 0..baseline_count {
        let jumps: usize = r
            .expect_key("baseline")?
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or(IoError::Format("bad jump count".into()))?;
        let mut pairs = Vec::with_capacity(jumps);
        for _ in 0..jumps {
            let (line_no, line) = r.next_line()?;
            let mut parts = line.split_whitespace();
            let t = parse_f64(parts.next().unwrap_or(""), line_no)?;
            let j = parse_f64(parts.next().unwrap_or(""), line_no)?;
            pairs.push((t, j));
        }
        baselines.push(CumulativeHazard::from_jumps(pairs));
    }

    let surface = CoefficientSurface {
        xi,
        u_spec,
        t_margin,
        covariance: xi_cov,
    };
    // optimizer internals are not stored; carry an inert placeholder
    let fit = FitResult {
        coefficients: Array1::zeros(0),
        covariance: Array2::zeros((0, 0)),
        lambdas: Vec::new(),
        iterations: 0,
        final_grad_norm: 0.0,
        loglik: f64::NAN,
        penalized_loglik: f64::NAN,
        edf_by_column: Array1::zeros(0),
        edf_total: f64::NAN,
        hessian: Array2::zeros((0, 0)),
        trace: Vec::new(),
        baselines: baselines.clone(),
    };
    Ok(TvflcmFit {
        route,
        surface,
        scalar_effects,
        fit,
        grid: None,
        centering,
        u_weights: Array1::from_vec(u_weights),
        u_grid,
        baselines,
        windows,
        rows: 0,
        expansion_seconds: 0.0,
        fit_seconds: 0.0,
        jitter: Default::default(),
        dropped_landmarks: Vec::new(),
        edf_tensor: f64::NAN,
        edf_scalar: Vec::new(),
    })
}
