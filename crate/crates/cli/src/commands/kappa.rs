//! `kappa`: reconstruct across a noise ladder and fit the log-log slope of
//! reconstruction drift against data perturbation.

use log::info;

use parasource_core::inverse::kappa_fit;
use parasource_core::report;

use crate::config::RunConfig;
use crate::error::CliResult;

pub fn run(cfg: &RunConfig, echo: &str) -> CliResult<()> {
    let spec = cfg.spec()?;
    let rcfg = cfg.reconstruction(&spec)?;
    let seeds = cfg.seed_ladder();
    let fit = kappa_fit(
        &spec,
        &rcfg,
        cfg.solver.dt,
        &cfg.experiment.noise_levels,
        &seeds,
    )?;
    info!(
        "kappa = {:.3} (band [{:.3}, {:.3}], R^2 = {:.3})",
        fit.kappa, fit.kappa_low, fit.kappa_high, fit.r_squared
    );

    let rows: Vec<Vec<f64>> = fit
        .levels
        .iter()
        .map(|lv| {
            vec![
                lv.noise,
                lv.data_norm,
                lv.median_pert,
                lv.median_error,
                lv.error_q1,
                lv.error_q3,
            ]
        })
        .collect();
    report::write_table(
        &cfg.output_dir.join("kappa_ladder.csv"),
        "kappa_ladder",
        &[
            "noise",
            "data_norm",
            "median_pert",
            "median_error",
            "error_q1",
            "error_q3",
        ],
        &rows,
        echo,
    )?;
    report::write_json_report(&cfg.output_dir.join("kappa.json"), "kappa", echo, &fit)?;
    Ok(())
}
