use fractal_forms::energy::{
    boundary_data, general_energy_dominant_measure, harmonic_coordinates, kusuoka_measure,
    self_similar_measure, solve_dirichlet,
};
use fractal_forms::quasilinear::{PLaplace, ShiftedPLaplace};
use fractal_forms::{CellMeasure, EnergyForm, MonotoneCoefficient, Tolerances};

use crate::config::MeasureChoice;
use crate::error::CliResult;

/// The reference measure selected by the run configuration.
pub fn build_measure(form: &EnergyForm, choice: &MeasureChoice, tol: &Tolerances) -> CliResult<CellMeasure> {
    let graph = form.graph();
    Ok(match choice {
        MeasureChoice::Kusuoka {} => kusuoka_measure(form, &harmonic_coordinates(form)?)?,
        MeasureChoice::SelfSimilar { weights } => self_similar_measure(graph, weights)?,
        MeasureChoice::General { pool } => {
            let mut fs = harmonic_coordinates(form)?;
            for b in pool {
                fs.push(solve_dirichlet(graph, &boundary_data(graph, b))?);
            }
            general_energy_dominant_measure(form, &fs, tol.zero_energy)?.measure
        }
    })
}

pub fn coefficient(p: f64, kappa: f64) -> CliResult<Box<dyn MonotoneCoefficient>> {
    Ok(if kappa > 0.0 {
        Box::new(ShiftedPLaplace { p, kappa })
    } else {
        Box::new(PLaplace::new(p)?)
    })
}
