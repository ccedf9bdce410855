//! Artifact export: SVG heat maps for the grid-study quantities and
//! re-export of a completed run's derived files. Every writer is a pure
//! function of its inputs, so re-export is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::run::LEARNING_CURVE_FILE;
use crate::study::{GridSpec, GridStudy};
use crate::HarnessError;

pub const GRID_STUDY_FILE: &str = "grid_study.csv";

/// Eight-anchor viridis-like ramp, linearly interpolated.
const RAMP: [(f64, f64, f64); 8] = [
    (0.267, 0.005, 0.329),
    (0.283, 0.141, 0.458),
    (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553),
    (0.164, 0.471, 0.558),
    (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518),
    (0.993, 0.906, 0.144),
];

fn color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let lerp = |a: f64, b: f64| a + (b - a) * f;
    let (r0, g0, b0) = RAMP[i];
    let (r1, g1, b1) = RAMP[i + 1];
    (
        (lerp(r0, r1) * 255.0).round() as u8,
        (lerp(g0, g1) * 255.0).round() as u8,
        (lerp(b0, b1) * 255.0).round() as u8,
    )
}

/// Renders one grid quantity as an SVG heat map. With `log_scale`, colors
/// follow log10 of the values (zeros pinned to the bottom of the ramp).
/// Non-finite cells are rejected.
pub fn heatmap_svg(
    values: &[f64],
    spec: &GridSpec,
    title: &str,
    log_scale: bool,
) -> Result<String, HarnessError> {
    if values.len() != spec.len() {
        return Err(HarnessError::Config(format!(
            "heatmap: {} values for a {}x{} grid",
            values.len(),
            spec.rows,
            spec.cols
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HarnessError::Numerical(
            "heatmap rejects non-finite cell values".into(),
        ));
    }

    let transformed: Vec<f64> = if log_scale {
        let floor = values
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor } else { 1.0 };
        values.iter().map(|v| v.max(floor * 0.1).log10()).collect()
    } else {
        values.to_vec()
    };
    let lo = transformed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = transformed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let cell = 6usize;
    let margin = 28usize;
    let width = spec.cols * cell + 2 * margin;
    let height = spec.rows * cell + 2 * margin;
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{margin}\" y=\"16\" font-family=\"monospace\" font-size=\"12\">{title}</text>"
    )
    .unwrap();
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let v = transformed[i * spec.cols + j];
            let (r, g, b) = color((v - lo) / span);
            // Row 0 is the lowest angle; draw it at the bottom.
            let x = margin + j * cell;
            let y = margin + (spec.rows - 1 - i) * cell;
            writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>"
            )
            .unwrap();
        }
    }
    let (phi_lo, phi_hi) = spec.phi_range;
    let (w_lo, w_hi) = spec.phidot_range;
    writeln!(
        svg,
        "<text x=\"{margin}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">phi in [{phi_lo}, {phi_hi}] (vertical), phidot in [{w_lo}, {w_hi}] (horizontal)</text>",
        height - 8
    )
    .unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn parse_grid_csv(text: &str) -> Result<GridStudy, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::MissingRun("empty grid CSV".into()))?;
    if header != "phi,phidot,u_gjs,d_tv,in_e" {
        return Err(HarnessError::MissingRun(format!(
            "unexpected grid header: {header}"
        )));
    }
    let mut phis = Vec::new();
    let mut phidots = Vec::new();
    let mut u = Vec::new();
    let mut d = Vec::new();
    let mut in_e = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(HarnessError::MissingRun("malformed grid row".into()));
        }
        let p = |s: &str| -> Result<f64, HarnessError> {
            s.parse()
                .map_err(|e| HarnessError::MissingRun(format!("grid value: {e}")))
        };
        phis.push(p(f[0])?);
        phidots.push(p(f[1])?);
        u.push(p(f[2])?);
        d.push(p(f[3])?);
        in_e.push(f[4] == "1");
    }
    let mut uph: Vec<f64> = phis.clone();
    uph.sort_by(f64::total_cmp);
    uph.dedup();
    let mut upd: Vec<f64> = phidots.clone();
    upd.sort_by(f64::total_cmp);
    upd.dedup();
    let rows = uph.len();
    let cols = upd.len();
    if rows * cols != u.len() {
        return Err(HarnessError::MissingRun(format!(
            "grid CSV is not a full {rows}x{cols} grid"
        )));
    }
    Ok(GridStudy {
        spec: GridSpec {
            phi_range: (uph[0], uph[rows - 1]),
            phidot_range: (upd[0], upd[cols - 1]),
            rows,
            cols,
        },
        kappa: f64::NAN,
        u_gjs: u,
        d_tv: d,
        in_e,
    })
}

/// Regenerates the derived artifacts of a completed run: one SVG heat map
/// per grid quantity (when a grid study exists). Requires the learning
/// curve (or, for toy runs, the model-training log) as evidence of a
/// completed run. Returns the files written.
pub fn export_artifacts(run_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let curve = run_dir.join(LEARNING_CURVE_FILE);
    let toy = run_dir.join(crate::run::MODEL_TRAINING_FILE);
    if !curve.exists() && !toy.exists() {
        return Err(HarnessError::MissingRun(format!(
            "{} has neither {} nor {}",
            run_dir.display(),
            LEARNING_CURVE_FILE,
            crate::run::MODEL_TRAINING_FILE
        )));
    }
    if curve.exists() {
        // Validate schema so a corrupted run surfaces here.
        crate::log::parse_learning_curve(&std::fs::read_to_string(&curve)?)?;
    }

    let mut written = Vec::new();
    let grid_path = run_dir.join(GRID_STUDY_FILE);
    if grid_path.exists() {
        let study = parse_grid_csv(&std::fs::read_to_string(&grid_path)?)?;
        let quantities: [(&str, Vec<f64>, bool); 3] = [
            ("u_gjs", study.u_gjs.clone(), true),
            ("d_tv", study.d_tv.clone(), true),
            (
                "in_e",
                study.in_e.iter().map(|&b| b as u8 as f64).collect(),
                false,
            ),
        ];
        for (name, values, log_scale) in quantities {
            let svg = heatmap_svg(&values, &study.spec, name, log_scale)?;
            let path = run_dir.join(format!("{name}.svg"));
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}
