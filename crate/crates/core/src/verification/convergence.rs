//! Self-convergence studies in space, time and truncation radius.
//!
//! Every study drives the forward solver with the smooth source
//! `f(y, s) = (1 + s) exp(-|y|^2) cos(y_1)` from a zero initial state and
//! compares final states on the nodes shared by successive discretizations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::SimilarityScenario;
use crate::state::{ControlSeries, DiscreteModel, SolverOptions};
use crate::weighted::{Grid, WeightedSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Space,
    Time,
    Radius,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(Self::Space),
            "time" => Ok(Self::Time),
            "radius" => Ok(Self::Radius),
            other => Err(Error::config("kind", format!("unknown study {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudySettings {
    pub radius: f64,
    /// Coarsest points per axis of the spatial study; refined by halving `dy`.
    pub base_n: usize,
    /// Number of refinements (the study uses `refinements + 1` grids).
    pub refinements: usize,
    /// Steps of the spatial study, and coarsest steps of the temporal one.
    pub steps: usize,
    pub theta: f64,
    /// Points per axis of the temporal study.
    pub time_n: usize,
    /// Radii of the truncation study, all sharing spacing `radius_spacing`.
    pub radii: Vec<f64>,
    pub radius_spacing: f64,
}

impl StudySettings {
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            1 => Self {
                radius: 8.0,
                base_n: 33,
                refinements: 4,
                steps: 32,
                theta: 0.5,
                time_n: 129,
                radii: vec![4.0, 6.0, 8.0, 10.0],
                radius_spacing: 0.125,
            },
            _ => Self {
                radius: 6.0,
                base_n: 13,
                refinements: 3,
                steps: 16,
                theta: 0.5,
                time_n: 33,
                radii: vec![4.0, 6.0, 8.0, 10.0],
                radius_spacing: 0.5,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyRow {
    /// Points per axis, steps, or radius.
    pub parameter: f64,
    /// `dy`, `ds`, or `dy` again for the radius study.
    pub spacing: f64,
    /// Weighted distance to the next refinement (or to the previous radius).
    pub error: f64,
    /// Observed order against the previous row.
    pub rate: Option<f64>,
    /// Extra diagnostic: `lambda_1 - N/2` for space and radius rows.
    pub extra: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyTable {
    pub kind: StudyKind,
    pub theta: f64,
    pub rows: Vec<StudyRow>,
    /// Slope of `log error` against `log spacing`; not used for radius.
    pub fitted_rate: f64,
    pub r_squared: f64,
    /// Radius study: spatial discretization error at the common spacing.
    pub floor: Option<f64>,
}

impl StudyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,parameter,spacing,error,rate,extra\n");
        let kind = match self.kind {
            StudyKind::Space => "space",
            StudyKind::Time => "time",
            StudyKind::Radius => "radius",
        };
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{kind},{},{:.9e},{:.9e},{},{}\n",
                r.parameter,
                r.spacing,
                r.error,
                opt(r.rate),
                opt(r.extra)
            ));
        }
        out
    }

    /// Radius rows at `R >= min_radius` all change less than the floor.
    pub fn flat_beyond(&self, min_radius: f64) -> bool {
        let floor = self.floor.unwrap_or(0.0);
        self.rows
            .iter()
            .filter(|r| r.parameter >= min_radius && r.error.is_finite())
            .all(|r| r.error <= floor)
    }
}

/// Least-squares slope and `R^2` of `log y` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, r2)
}

fn study_source(model: &DiscreteModel) -> ControlSeries {
    let time = *model.time();
    ControlSeries::from_fn(*model.grid(), time.steps(), |y, k| {
        let s = time.midpoint(k);
        let r2: f64 = y.iter().map(|c| c * c).sum();
        (1.0 + s) * (-r2).exp() * y[0].cos()
    })
}

fn final_state(
    scenario: &SimilarityScenario,
    grid: Grid,
    steps: usize,
    theta: f64,
) -> Result<Vec<f64>> {
    let model = DiscreteModel::new(
        scenario.clone(),
        grid,
        steps,
        theta,
        SolverOptions::default(),
    )?;
    let src = study_source(&model);
    model.final_state(&src)
}

/// Maps a node of `coarse` to the node of `fine` with the same coordinates.
/// Both grids must share the lattice spacing ratio `ratio` and be centred.
fn node_map(coarse: &Grid, fine: &Grid, ratio: usize) -> Vec<usize> {
    let nc = coarse.points_per_axis() as isize;
    let nf = fine.points_per_axis() as isize;
    let shift = (nf - 1) / 2 - ratio as isize * (nc - 1) / 2;
    (0..coarse.len())
        .map(|idx| {
            let mi = coarse.multi_index(idx);
            (0..coarse.dim())
                .map(|a| (mi[a] as isize * ratio as isize + shift) as usize * fine.stride(a))
                .sum()
        })
        .collect()
}

fn weighted_distance(space: &WeightedSpace, coarse: &[f64], fine: &[f64], map: &[usize]) -> f64 {
    let diff: Vec<f64> = coarse.iter().zip(map).map(|(c, &j)| c - fine[j]).collect();
    space.dot_raw(&diff, &diff).sqrt()
}

fn lambda_gap(grid: &Grid) -> Result<f64> {
    let lam = WeightedSpace::new(*grid).spectral_probe(1)?[0];
    Ok(lam - grid.dim() as f64 / 2.0)
}

fn rates(rows: &mut [StudyRow]) {
    for j in 1..rows.len() {
        let (a, b) = (&rows[j - 1], &rows[j]);
        if a.error > 0.0 && b.error > 0.0 {
            let r = (a.error / b.error).ln() / (a.spacing / b.spacing).ln();
            rows[j].rate = Some(r);
        }
    }
}

fn space_study(scenario: &SimilarityScenario, st: &StudySettings) -> Result<StudyTable> {
    let dim = scenario.dim();
    let grids = (0..=st.refinements)
        .map(|l| Grid::new(dim, st.radius, (st.base_n - 1) * (1 << l) + 1))
        .collect::<Result<Vec<_>>>()?;
    let states = grids
        .iter()
        .map(|g| final_state(scenario, *g, st.steps, st.theta))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for l in 0..st.refinements {
        let space = WeightedSpace::new(grids[l]);
        let map = node_map(&grids[l], &grids[l + 1], 2);
        rows.push(StudyRow {
            parameter: grids[l].points_per_axis() as f64,
            spacing: grids[l].spacing(),
            error: weighted_distance(&space, &states[l], &states[l + 1], &map),
            rate: None,
            extra: lambda_gap(&grids[l]).ok(),
        });
    }
    rates(&mut rows);
    let (fitted_rate, r_squared) = loglog_fit(
        &rows.iter().map(|r| r.spacing).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.error).collect::<Vec<_>>(),
    );
    Ok(StudyTable {
        kind: StudyKind::Space,
        theta: st.theta,
        rows,
        fitted_rate,
        r_squared,
        floor: None,
    })
}

fn time_study(scenario: &SimilarityScenario, st: &StudySettings) -> Result<StudyTable> {
    let grid = Grid::new(scenario.dim(), st.radius, st.time_n)?;
    let steps: Vec<usize> = (0..=st.refinements).map(|l| st.steps * (1 << l)).collect();
    let states = steps
        .iter()
        .map(|&m| final_state(scenario, grid, m, st.theta))
        .collect::<Result<Vec<_>>>()?;
    let space = WeightedSpace::new(grid);
    let identity: Vec<usize> = (0..grid.len()).collect();
    let mut rows = Vec::new();
    for l in 0..st.refinements {
        rows.push(StudyRow {
            parameter: steps[l] as f64,
            spacing: scenario.horizon() / steps[l] as f64,
            error: weighted_distance(&space, &states[l], &states[l + 1], &identity),
            rate: None,
            extra: None,
        });
    }
    rates(&mut rows);
    let (fitted_rate, r_squared) = loglog_fit(
        &rows.iter().map(|r| r.spacing).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.error).collect::<Vec<_>>(),
    );
    Ok(StudyTable {
        kind: StudyKind::Time,
        theta: st.theta,
        rows,
        fitted_rate,
        r_squared,
        floor: None,
    })
}

fn radius_study(scenario: &SimilarityScenario, st: &StudySettings) -> Result<StudyTable> {
    let dim = scenario.dim();
    let h = st.radius_spacing;
    let grids = st
        .radii
        .iter()
        .map(|&r| {
            let cells = (2.0 * r / h).round() as usize;
            if ((cells as f64) * h - 2.0 * r).abs() > 1e-9 * r || !cells.is_multiple_of(2) {
                return Err(Error::config("radius_spacing", "must divide every radius"));
            }
            Grid::new(dim, r, cells + 1)
        })
        .collect::<Result<Vec<_>>>()?;
    let states = grids
        .iter()
        .map(|g| final_state(scenario, *g, st.steps, st.theta))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (l, g) in grids.iter().enumerate() {
        let error = if l == 0 {
            f64::NAN
        } else {
            // The smaller box, extended by zero, against the larger one.
            let big = WeightedSpace::new(*g);
            let map = node_map(&grids[l - 1], g, 1);
            let mut ext = vec![0.0; g.len()];
            for (c, &j) in map.iter().enumerate() {
                ext[j] = states[l - 1][c];
            }
            let diff: Vec<f64> = ext.iter().zip(&states[l]).map(|(a, b)| a - b).collect();
            big.dot_raw(&diff, &diff).sqrt() / big.dot_raw(&states[l], &states[l]).sqrt()
        };
        rows.push(StudyRow {
            parameter: g.radius(),
            spacing: h,
            error,
            rate: None,
            extra: lambda_gap(g).ok(),
        });
    }
    // Discretization floor: relative self-convergence error at spacing h.
    let mid = st
        .radii
        .iter()
        .copied()
        .fold(f64::NAN, f64::max)
        .min(8.0)
        .max(st.radii[0]);
    let coarse = Grid::new(dim, mid, (2.0 * mid / h).round() as usize + 1)?;
    let fine = Grid::new(dim, mid, 2 * (coarse.points_per_axis() - 1) + 1)?;
    let vc = final_state(scenario, coarse, st.steps, st.theta)?;
    let vf = final_state(scenario, fine, st.steps, st.theta)?;
    let space = WeightedSpace::new(coarse);
    let floor = weighted_distance(&space, &vc, &vf, &node_map(&coarse, &fine, 2))
        / space.dot_raw(&vc, &vc).sqrt();
    Ok(StudyTable {
        kind: StudyKind::Radius,
        theta: st.theta,
        rows,
        fitted_rate: f64::NAN,
        r_squared: f64::NAN,
        floor: Some(floor),
    })
}

/// Runs one study on `scenario`.
pub fn convergence_study(
    scenario: &SimilarityScenario,
    kind: StudyKind,
    settings: &StudySettings,
) -> Result<StudyTable> {
    if settings.refinements < 2 && kind != StudyKind::Radius {
        return Err(Error::config(
            "refinements",
            "a rate fit needs at least two refinements",
        ));
    }
    match kind {
        StudyKind::Space => space_study(scenario, settings),
        StudyKind::Time => time_study(scenario, settings),
        StudyKind::Radius => radius_study(scenario, settings),
    }
}
