use std::fs;
use std::io::BufWriter;

use ocplab::analysis::{estimate_inverse_norm, l2_norm, Component, GreenOracle, OpNormMethod, DECAY_FLOOR};
use ocplab::assembly::equation_name;
use ocplab::experiments::{
    motivation_norm, motivation_response, DifferenceRun, EllipticCase, Mode, MotivationSource, ParabolicCase,
    ParabolicRun, SpaceTimeSource,
};
use ocplab::parabolic::heat_bound_experiment;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{num, write_csv};

pub type CmdResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

type Rows = Vec<Vec<String>>;

const MODES: [Mode; 2] = [Mode::Uncontrolled, Mode::Controlled];
const COMPONENTS: [Component; 3] = [Component::State, Component::Control, Component::Adjoint];

fn grid<A: Copy, B: Copy>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
}

fn cells(length: f64, n_per_unit: usize) -> usize {
    ((length * n_per_unit as f64).round() as usize).max(2)
}

pub fn motivate1d(cfg: &ExperimentConfig) -> CmdResult<()> {
    let jobs = grid(&cfg.lengths, &cfg.c);
    let results = jobs
        .par_iter()
        .map(|&(length, c)| -> CmdResult<(Rows, Rows)> {
            let n = cells(length, cfg.n_per_unit);
            let eq = equation_name(c);
            let mut sol = Vec::new();
            let mut norms = Vec::new();
            for mode in MODES {
                let (mesh, y) = motivation_response(length, n, c, mode, MotivationSource::Box)?;
                for (i, v) in y.iter().enumerate() {
                    sol.push(vec![num(mesh.node(i)[0]), num(*v), eq.clone(), num(length), mode.name().into()]);
                }
                for source in [MotivationSource::Dirac, MotivationSource::Box] {
                    let norm = motivation_norm(length, n, c, mode, source)?;
                    let reference = if c == 0.0 && mode == Mode::Uncontrolled && source == MotivationSource::Dirac {
                        num(GreenOracle::new(length)?.dirac_mid_norm_sq().sqrt())
                    } else {
                        String::new()
                    };
                    norms.push(vec![num(length), eq.clone(), mode.name().into(), source.name().into(), num(norm), reference]);
                }
            }
            Ok((sol, norms))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let (sol, norms): (Vec<Rows>, Vec<Rows>) = results.into_iter().unzip();
    write_csv(cfg, "motivate1d_solutions.csv", &["coord", "value", "equation", "L", "mode"], &sol.concat())?;
    write_csv(cfg, "motivate1d_norms.csv", &["L", "equation", "mode", "source", "l2_norm", "reference"], &norms.concat())?;
    Ok(())
}

struct EllipticRows {
    norms: Rows,
    slice: Rows,
    decay: Rows,
    fits: Rows,
    opnorm: Option<Vec<String>>,
}

fn elliptic_job(cfg: &ExperimentConfig, case: EllipticCase, fields: bool, opnorm: bool) -> CmdResult<EllipticRows> {
    let eq = equation_name(case.reaction);
    let (l, preset) = (num(case.length), case.preset.name().to_string());
    let mut rows = EllipticRows { norms: Vec::new(), slice: Vec::new(), decay: Vec::new(), fits: Vec::new(), opnorm: None };
    let kkt = if fields {
        let run = DifferenceRun::new(&case)?;
        let [y, _, _] = run.nodal();
        rows.norms.push(vec![
            preset.clone(),
            eq.clone(),
            l.clone(),
            num(run.kkt.primal_norm(&run.delta.blocks())),
            num(l2_norm(run.mesh(), &y)),
        ]);
        for (coord, value) in run.slice() {
            rows.slice.push(vec![num(coord), num(value), eq.clone(), l.clone(), preset.clone()]);
        }
        for comp in COMPONENTS {
            match run.fit(comp) {
                Ok(fit) => {
                    for b in fit.bands.iter().filter(|b| b.norm > DECAY_FLOOR) {
                        rows.decay.push(vec![num(b.mid()), num(b.norm.ln()), comp.name().into(), eq.clone(), l.clone()]);
                    }
                    rows.fits.push(vec![
                        preset.clone(),
                        eq.clone(),
                        l.clone(),
                        comp.name().into(),
                        num(fit.mu_hat),
                        num(fit.intercept),
                        num(fit.r_squared),
                    ]);
                }
                Err(ocplab::Error::InsufficientData(msg)) => {
                    log::warn!("{preset} {eq} L={l} {}: no decay fit ({msg})", comp.name());
                    rows.fits.push(vec![preset.clone(), eq.clone(), l.clone(), comp.name().into(), "NaN".into(), "NaN".into(), "NaN".into()]);
                }
                Err(e) => return Err(e.into()),
            }
        }
        run.kkt
    } else {
        case.kkt()?
    };
    if opnorm {
        let est = estimate_inverse_norm(&kkt, cfg.trials, cfg.seed, OpNormMethod::RandomProbing)?;
        rows.opnorm = Some(vec![l.clone(), preset.clone(), num(est.value), est.trials.to_string()]);
    }
    if cfg.export_mtx {
        let dir = cfg.out.join("matrices");
        fs::create_dir_all(&dir)?;
        let file = fs::File::create(dir.join(format!("kkt_{preset}_{eq}_L{l}.mtx")))?;
        kkt.matrix.write_matrix_market(BufWriter::new(file))?;
    }
    Ok(rows)
}

pub fn elliptic2d(cfg: &ExperimentConfig, fields: bool, opnorm: bool) -> CmdResult<()> {
    let mut fits = Vec::new();
    let mut norms = Vec::new();
    let mut opnorms: Vec<Rows> = vec![Vec::new(); cfg.c.len()];
    for &preset in &cfg.presets {
        let jobs = grid(&cfg.c, &cfg.lengths);
        let results = jobs
            .par_iter()
            .map(|&(c, length)| {
                let case = EllipticCase { dim: 2, length, n_per_unit: cfg.n_per_unit, reaction: c, preset };
                elliptic_job(cfg, case, fields, opnorm)
            })
            .collect::<CmdResult<Vec<_>>>()?;
        let mut slice = Vec::new();
        let mut decay = Vec::new();
        for (k, r) in results.into_iter().enumerate() {
            slice.extend(r.slice);
            decay.extend(r.decay);
            fits.extend(r.fits);
            norms.extend(r.norms);
            if let Some(row) = r.opnorm {
                opnorms[k / cfg.lengths.len()].push(row);
            }
        }
        if fields {
            let p = preset.name();
            write_csv(cfg, &format!("slice_{p}.csv"), &["coord", "value", "equation", "L", "preset"], &slice)?;
            write_csv(cfg, &format!("decay_{p}.csv"), &["band_mid", "log_norm", "component", "equation", "L"], &decay)?;
        }
    }
    if fields {
        write_csv(cfg, "difference_norms.csv", &["preset", "equation", "L", "primal_norm", "state_l2"], &norms)?;
        write_csv(cfg, "decay_fits.csv", &["preset", "equation", "L", "component", "mu_hat", "intercept", "r_squared"], &fits)?;
    }
    if opnorm {
        for (c, rows) in cfg.c.iter().zip(&opnorms) {
            write_csv(cfg, &format!("opnorm_{}.csv", equation_name(*c)), &["L", "preset", "estimate", "trials"], rows)?;
        }
    }
    Ok(())
}

pub fn parabolic(cfg: &ExperimentConfig) -> CmdResult<()> {
    let jobs: Vec<(f64, f64, Mode)> =
        grid(&cfg.lengths, &cfg.c).into_iter().flat_map(|(l, c)| MODES.map(|m| (l, c, m))).collect();
    let results = jobs
        .par_iter()
        .map(|&(length, c, mode)| -> CmdResult<(Rows, Vec<String>)> {
            let case = ParabolicCase {
                length,
                n_per_unit: cfg.n_per_unit,
                reaction: c,
                horizon: cfg.horizon,
                tau: cfg.tau(),
                mode,
                source: SpaceTimeSource::POINT,
            };
            let run = ParabolicRun::new(&case)?;
            let (eq, l) = (equation_name(c), num(length));
            let mesh = &run.kkt.ops.mesh;
            let mut heat = Vec::new();
            for (k, y) in run.delta.y.iter().enumerate() {
                let t = num((k + 1) as f64 * run.kkt.tau);
                let full = run.kkt.ops.dofs.extend(y);
                for (i, v) in full.iter().enumerate() {
                    heat.push(vec![t.clone(), num(mesh.node(i)[0]), num(*v), eq.clone(), l.clone(), mode.name().into()]);
                }
            }
            let last = run.kkt.ops.dofs.extend(run.delta.y.last().expect("at least one step"));
            let summary = vec![
                l,
                num(cfg.horizon),
                eq,
                mode.name().into(),
                num(run.w_norm()?),
                num(l2_norm(mesh, &last)),
            ];
            Ok((heat, summary))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let (heat, summary): (Vec<Rows>, Rows) = results.into_iter().unzip();
    write_csv(cfg, "parabolic_heatmap.csv", &["t", "omega", "value", "equation", "L", "mode"], &heat.concat())?;
    write_csv(cfg, "parabolic_wnorm.csv", &["L", "T", "equation", "mode", "w_norm", "final_l2"], &summary)?;
    let length = cfg.lengths[0];
    let rows: Rows = heat_bound_experiment(length, cells(length, cfg.n_per_unit), &[1.0, 2.0, 4.0, 8.0], cfg.tau())?
        .iter()
        .map(|r| {
            vec![
                num(r.horizon),
                r.steps.to_string(),
                num(r.l2l2),
                num(r.l2l2_expected),
                num(r.w_norm),
                num(r.data_norm),
                num(r.ratio),
                num(r.bound),
            ]
        })
        .collect();
    write_csv(cfg, "heat_bound.csv", &["T", "steps", "l2l2", "expected_l2l2", "w_norm", "data_norm", "ratio", "bound"], &rows)?;
    Ok(())
}
