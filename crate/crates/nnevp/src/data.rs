//! Ingestion of digitized stress-strain data with uneven spacing:
//! comment-aware CSV parsing, shape-preserving monotone cubic Hermite
//! interpolation (Fritsch-Carlson), and resampling onto the solver's
//! strain grid.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::solver::Curve;

/// A digitized stress-strain curve plus its metadata header.
#[derive(Debug, Clone, Default)]
pub struct RawCurve {
    /// `(strain, stress_mpa)` with strictly increasing strain.
    pub points: Vec<(f64, f64)>,
    pub material: Option<String>,
    pub grain_size_um: Option<f64>,
    pub strain_rate_per_s: Option<f64>,
}

impl RawCurve {
    pub fn strains(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn stresses(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

/// Parses a curve CSV: optional `# key: value` metadata lines, a header
/// naming at least `strain` and `stress_mpa` columns, then numeric rows.
/// Rows are sorted by strain and exact duplicate strains averaged.
pub fn parse_curve_csv(path: &Path) -> Result<RawCurve> {
    let text = std::fs::read_to_string(path)?;
    parse_curve_str(&text, &path.display().to_string())
}

pub fn parse_curve_str(text: &str, origin: &str) -> Result<RawCurve> {
    let mut curve = RawCurve::default();
    let mut columns: Option<(usize, usize)> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once(':') {
                let value = value.trim();
                match key.trim() {
                    "material" => curve.material = Some(value.to_string()),
                    "grain_size_um" => {
                        curve.grain_size_um =
                            Some(parse_field(value, origin, lineno, "grain_size_um")?)
                    }
                    "strain_rate_per_s" => {
                        curve.strain_rate_per_s =
                            Some(parse_field(value, origin, lineno, "strain_rate_per_s")?)
                    }
                    _ => {} // unknown metadata is a comment
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match columns {
            None => {
                let strain = fields.iter().position(|f| *f == "strain");
                let stress = fields.iter().position(|f| *f == "stress_mpa");
                match (strain, stress) {
                    (Some(a), Some(b)) => columns = Some((a, b)),
                    _ => {
                        return Err(Error::CurveParse {
                            path: origin.to_string(),
                            line: lineno,
                            msg: "header must name strain and stress_mpa columns".into(),
                        })
                    }
                }
            }
            Some((a, b)) => {
                let need = a.max(b);
                if fields.len() <= need {
                    return Err(Error::CurveParse {
                        path: origin.to_string(),
                        line: lineno,
                        msg: format!("expected at least {} comma-separated fields", need + 1),
                    });
                }
                let strain = parse_field(fields[a], origin, lineno, "strain")?;
                let stress = parse_field(fields[b], origin, lineno, "stress_mpa")?;
                curve.points.push((strain, stress));
            }
        }
    }
    curve
        .points
        .sort_by(|p, q| p.0.partial_cmp(&q.0).expect("finite strains"));
    // Average stresses at exactly duplicated strains.
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(curve.points.len());
    let mut run = 1usize;
    for &(x, y) in &curve.points {
        match merged.last_mut() {
            Some(last) if last.0 == x => {
                run += 1;
                last.1 += (y - last.1) / run as f64;
            }
            _ => {
                run = 1;
                merged.push((x, y));
            }
        }
    }
    curve.points = merged;
    if curve.points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{origin}: cubic interpolation needs at least 4 distinct strains, got {}",
            curve.points.len()
        )));
    }
    Ok(curve)
}

fn parse_field(s: &str, origin: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::CurveParse {
        path: origin.to_string(),
        line,
        msg: format!("invalid {what} value {s:?}"),
    })
}

/// Writes a raw curve back out; numbers use the shortest representation
/// that round-trips exactly.
pub fn write_raw_curve_csv(path: &Path, curve: &RawCurve) -> Result<()> {
    let mut out = String::new();
    if let Some(m) = &curve.material {
        out.push_str(&format!("# material: {m}\n"));
    }
    if let Some(d) = curve.grain_size_um {
        out.push_str(&format!("# grain_size_um: {d}\n"));
    }
    if let Some(r) = curve.strain_rate_per_s {
        out.push_str(&format!("# strain_rate_per_s: {r}\n"));
    }
    out.push_str("strain,stress_mpa\n");
    for (x, y) in &curve.points {
        out.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a simulated curve with the full per-step record.
pub fn write_curve_csv(path: &Path, curve: &Curve, raw_meta: &RawCurve) -> Result<()> {
    let mut out = String::new();
    if let Some(m) = &raw_meta.material {
        out.push_str(&format!("# material: {m}\n"));
    }
    if let Some(d) = raw_meta.grain_size_um {
        out.push_str(&format!("# grain_size_um: {d}\n"));
    }
    if let Some(r) = raw_meta.strain_rate_per_s {
        out.push_str(&format!("# strain_rate_per_s: {r}\n"));
    }
    out.push_str("strain,stress_mpa,time_s,r,nr_iters\n");
    for i in 0..curve.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            curve.strain[i], curve.stress_mpa[i], curve.time_s[i], curve.r[i], curve.nr_iters[i]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Monotone-limited piecewise cubic Hermite interpolant (Fritsch-Carlson).
///
/// C1 continuous, passes through every datum exactly, and never overshoots
/// on intervals where the data are monotone. Outside the data range it
/// continues linearly with the boundary slope and flags the evaluation.
#[derive(Debug, Clone)]
pub struct Interpolant {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

/// Fits the shape-preserving interpolant to a raw curve.
pub fn fit_interpolant(raw: &RawCurve) -> Result<Interpolant> {
    let n = raw.points.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "interpolation needs at least 4 points, got {n}"
        )));
    }
    let x: Vec<f64> = raw.strains().collect();
    let y: Vec<f64> = raw.stresses().collect();
    let mut h = vec![0.0; n - 1];
    let mut delta = vec![0.0; n - 1];
    for i in 0..n - 1 {
        h[i] = x[i + 1] - x[i];
        if h[i] <= 0.0 {
            return Err(Error::InsufficientData(
                "strains must be strictly increasing".into(),
            ));
        }
        delta[i] = (y[i + 1] - y[i]) / h[i];
    }

    let mut d = vec![0.0; n];
    // Endpoint slopes: one-sided three-point with the Fritsch-Carlson clamps.
    d[0] = {
        let mut s = ((2.0 * h[0] + h[1]) * delta[0] - h[0] * delta[1]) / (h[0] + h[1]);
        if s.signum() != delta[0].signum() {
            s = 0.0;
        } else if delta[0].signum() != delta[1].signum() && s.abs() > 3.0 * delta[0].abs() {
            s = 3.0 * delta[0];
        }
        s
    };
    d[n - 1] = {
        let (hn, hm) = (h[n - 2], h[n - 3]);
        let (dn, dm) = (delta[n - 2], delta[n - 3]);
        let mut s = ((2.0 * hn + hm) * dn - hn * dm) / (hn + hm);
        if s.signum() != dn.signum() {
            s = 0.0;
        } else if dn.signum() != dm.signum() && s.abs() > 3.0 * dn.abs() {
            s = 3.0 * dn;
        }
        s
    };
    for i in 1..n - 1 {
        let (dp, dn) = (delta[i - 1], delta[i]);
        if dp == 0.0 || dn == 0.0 || dp.signum() != dn.signum() {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / dp + w2 / dn);
        }
    }

    Ok(Interpolant { x, y, d })
}

impl Interpolant {
    pub fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Value at `x`; the flag is true when `x` lies outside the data range
    /// and the linear boundary extension was used.
    pub fn eval(&self, xq: f64) -> (f64, bool) {
        let n = self.x.len();
        if xq < self.x[0] {
            return (self.y[0] + self.d[0] * (xq - self.x[0]), true);
        }
        if xq > self.x[n - 1] {
            return (self.y[n - 1] + self.d[n - 1] * (xq - self.x[n - 1]), true);
        }
        let i = match self
            .x
            .binary_search_by(|v| v.partial_cmp(&xq).expect("finite strains"))
        {
            Ok(idx) => return (self.y[idx], false),
            Err(ins) => ins - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        (
            h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1],
            false,
        )
    }
}

/// Stresses aligned one-to-one with a strain grid, with per-point
/// out-of-range flags.
#[derive(Debug, Clone)]
pub struct Resampled {
    pub stress: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

/// Evaluates the interpolant on the solver's strain grid.
pub fn resample_to_grid(interp: &Interpolant, grid: &[f64]) -> Resampled {
    let mut stress = Vec::with_capacity(grid.len());
    let mut extrapolated = Vec::with_capacity(grid.len());
    for &g in grid {
        let (v, ex) = interp.eval(g);
        stress.push(v);
        extrapolated.push(ex);
    }
    Resampled {
        stress,
        extrapolated,
    }
}

/// Dataset manifest: the member curve files of a multi-curve experiment.
/// Paths are resolved relative to the manifest's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub curve: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub grain_size_um: Option<f64>,
    pub strain_rate_per_s: Option<f64>,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if manifest.curve.is_empty() {
        return Err(Error::Config(format!(
            "{}: manifest lists no curves",
            path.display()
        )));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn curve_of(points: &[(f64, f64)]) -> RawCurve {
        RawCurve {
            points: points.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn parses_well_formed_file() {
        let text = "# material: Ni\n# grain_size_um: 2.1\nstrain,stress_mpa\n0,0\n0.001,90\n0.002,95\n0.004,100\n";
        let c = parse_curve_str(text, "test.csv").unwrap();
        assert_eq!(c.points.len(), 4);
        assert_eq!(c.material.as_deref(), Some("Ni"));
        assert_eq!(c.grain_size_um, Some(2.1));
        assert_eq!(c.points[1], (0.001, 90.0));
    }

    #[test]
    fn shuffled_rows_sort_identically() {
        let a = "strain,stress_mpa\n0,0\n0.001,90\n0.002,95\n0.004,100\n";
        let b = "strain,stress_mpa\n0.002,95\n0,0\n0.004,100\n0.001,90\n";
        let ca = parse_curve_str(a, "a").unwrap();
        let cb = parse_curve_str(b, "b").unwrap();
        assert_eq!(ca.points, cb.points);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = "strain,stress_mpa\n0.01,abc\n";
        let err = parse_curve_str(text, "bad.csv").unwrap_err();
        match err {
            Error::CurveParse { path, line, .. } => {
                assert_eq!(path, "bad.csv");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let text = "strain,stress_mpa\n0,0\n0.001,90\n0.002,95\n";
        assert!(matches!(
            parse_curve_str(text, "short.csv"),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn duplicate_strains_are_averaged() {
        let text = "strain,stress_mpa\n0,0\n0.001,80\n0.001,100\n0.002,95\n0.004,99\n";
        let c = parse_curve_str(text, "dup").unwrap();
        assert_eq!(c.points.len(), 4);
        assert_abs_diff_eq!(c.points[1].1, 90.0, epsilon = 1e-12);
    }

    #[test]
    fn solver_curve_output_is_ingestible() {
        let curve = Curve {
            strain: vec![0.001, 0.002, 0.003, 0.004],
            stress_mpa: vec![90.0, 95.0, 97.0, 98.0],
            time_s: vec![1.0, 2.0, 3.0, 4.0],
            r: vec![0.0, 1e-4, 3e-4, 6e-4],
            nr_iters: vec![1, 3, 2, 2],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        write_curve_csv(&path, &curve, &RawCurve::default()).unwrap();
        let back = parse_curve_csv(&path).unwrap();
        assert_eq!(back.points.len(), 4);
        assert_eq!(back.points[2], (0.003, 97.0));
    }

    #[test]
    fn round_trip_preserves_numbers_exactly() {
        let c = curve_of(&[
            (0.0, 0.0),
            (0.2 + 1e-16, 95.0),
            (1.0 / 3.0, 90.123456789012345),
            (0.7, std::f64::consts::PI * 30.0),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_raw_curve_csv(&path, &c).unwrap();
        let back = parse_curve_csv(&path).unwrap();
        for (p, q) in c.points.iter().zip(&back.points) {
            assert_eq!(p.0.to_bits(), q.0.to_bits());
            assert_eq!(p.1.to_bits(), q.1.to_bits());
        }
    }

    #[test]
    fn linear_data_reproduced_exactly() {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.01, 3.0 + 40.0 * i as f64 * 0.01)).collect();
        let interp = fit_interpolant(&curve_of(&pts)).unwrap();
        for k in 0..700 {
            let x = 0.07 * k as f64 / 699.0;
            let (v, ex) = interp.eval(x);
            assert!(!ex);
            assert_relative_eq!(v, 3.0 + 40.0 * x, max_relative = 1e-12);
        }
    }

    #[test]
    fn breakpoints_are_interpolated_not_regressed() {
        let pts = [(0.0, 0.0), (0.001, 88.0), (0.003, 95.5), (0.01, 103.25)];
        let interp = fit_interpolant(&curve_of(&pts)).unwrap();
        for (x, y) in pts {
            let (v, ex) = interp.eval(x);
            assert!(!ex);
            assert_eq!(v, y);
        }
    }

    #[test]
    fn monotone_concave_data_never_decreases() {
        // Hardening-like concave monotone data with uneven spacing.
        let pts: Vec<(f64, f64)> = [0.0, 0.0004, 0.001, 0.0025, 0.004, 0.007, 0.01, 0.02, 0.05, 0.1]
            .iter()
            .map(|&e: &f64| (e, 90.0 * (1.0 - (-180.0 * e).exp()) + 250.0 * e))
            .collect();
        let interp = fit_interpolant(&curve_of(&pts)).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..10_000 {
            let x = 0.1 * k as f64 / 9_999.0;
            let (v, _) = interp.eval(x);
            assert!(v >= prev - 1e-12, "interpolant decreased at x={x}");
            prev = v;
        }
    }

    #[test]
    fn out_of_range_extends_linearly_and_flags() {
        let pts = [(0.0, 0.0), (0.01, 10.0), (0.02, 20.0), (0.03, 30.0)];
        let interp = fit_interpolant(&curve_of(&pts)).unwrap();
        let (v, ex) = interp.eval(0.0315);
        assert!(ex);
        // Boundary slope of linear data is the data slope.
        assert_relative_eq!(v, 31.5, max_relative = 1e-10);
        let (v, ex) = interp.eval(-0.001);
        assert!(ex);
        assert_relative_eq!(v, -1.0, max_relative = 1e-10);

        let grid = [0.005, 0.02, 0.0315];
        let rs = resample_to_grid(&interp, &grid);
        assert_eq!(rs.extrapolated, vec![false, false, true]);
    }

    #[test]
    fn grid_matching_raw_strains_returns_raw_stresses() {
        let pts = [(0.001, 91.0), (0.002, 94.0), (0.005, 99.0), (0.01, 104.0)];
        let interp = fit_interpolant(&curve_of(&pts)).unwrap();
        let grid: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let rs = resample_to_grid(&interp, &grid);
        for (got, want) in rs.stress.iter().zip(pts.iter().map(|p| p.1)) {
            assert_eq!(*got, want);
        }
    }

    #[test]
    fn dense_smooth_curve_resamples_within_a_permille() {
        // A smooth hardening shape sampled densely, then resampled onto a
        // geometric 50-point grid.
        let truth = |e: f64| 90.0 + 292.0 * e.powf(1.09) + 60.0 * (1.0 - (-400.0 * e).exp());
        let pts: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let e = 0.1 * i as f64 / 200.0;
                (e, truth(e))
            })
            .collect();
        let interp = fit_interpolant(&curve_of(&pts)).unwrap();
        let mut eps = 0.0;
        let mut dt = 0.1 * 0.15 / (1.15f64.powi(50) - 1.0);
        for _ in 0..50 {
            eps += dt;
            dt *= 1.15;
            if eps > 0.1 {
                break;
            }
            let (v, ex) = interp.eval(eps);
            assert!(!ex);
            let rel = (v - truth(eps)).abs() / truth(eps);
            assert!(rel < 1e-3, "resampling error {rel} at strain {eps}");
        }
    }

    #[test]
    fn manifest_parses_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.toml");
        std::fs::write(
            &path,
            "[[curve]]\nfile = \"a.csv\"\ngrain_size_um = 2.1\n\n[[curve]]\nfile = \"b.csv\"\n",
        )
        .unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.curve.len(), 2);
        assert_eq!(m.curve[0].grain_size_um, Some(2.1));

        std::fs::write(&path, "[[curve]]\nfile = \"a.csv\"\ntypo_key = 1\n").unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
