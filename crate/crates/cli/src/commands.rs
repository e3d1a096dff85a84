use crate::{FitArgs, GofArgs, JointprobArgs, ScaleArg, SimstudyArgs, SimulateArgs, SummaryArgs, TauArgs};
use condex::bootstrap::{bootstrap_ci, JointMethod, RiskMeasure, RiskReport};
use condex::data::{load_csv, summarize_missingness, Dataset};
use condex::dependence::extract_residuals;
use condex::gof::gaussianity_test;
use condex::jointprob::{joint_prob_integral, joint_prob_mc, IntegralOptions, JointEvent};
use condex::model::{fit_model, CondExModel};
use condex::residual_copula::to_gaussian_scale;
use condex::rng::derive_seed;
use condex::simstudy::{simstudy as run_simstudy, SimStudyConfig};
use condex::simulate::{simulate_anywhere_extreme, simulate_conditional, tau_all, Scale};
use condex::stats::norm_quantile;
use condex::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

fn load_model(path: &Path) -> Result<CondExModel> {
    CondExModel::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read model {}: {io}", path.display())),
        other => other,
    })
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_csv(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read data {}: {io}", path.display())),
        other => other,
    })
}

/// Site by identifier, falling back to a zero-based index.
fn resolve_site(model: &CondExModel, site: &str) -> Result<usize> {
    model.site_index(site).or_else(|e| match site.parse::<usize>() {
        Ok(j) if j < model.n_sites() => Ok(j),
        _ => Err(Error::Config(e.to_string())),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let ds = load_data(&a.data)?;
    let model = fit_model(&ds, &cfg, a.partial)?;
    model.save(&a.out)?;
    println!("site,n_v,pd_repaired,min_pair_count,fallback_pairs,error");
    for r in &model.report.sites {
        println!(
            "{},{},{},{},{},{}",
            r.site,
            r.n_v,
            r.pd_repaired,
            r.min_pair_count,
            r.fallback_pairs.join(";"),
            r.error.as_deref().unwrap_or("")
        );
    }
    let failed = model.report.failed_sites().len();
    if failed > 0 {
        eprintln!("warning: {failed} conditional fits failed; model written with --partial");
    }
    Ok(())
}

pub fn gof(a: GofArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let model = load_model(&a.model)?;
    let ds = load_data(&a.data)?;
    let yl = model.to_laplace_dataset(&ds)?;
    let sites: Vec<usize> = match &a.site {
        Some(s) => vec![resolve_site(&model, s)?],
        None => (0..model.n_sites()).filter(|&j| model.conditionals[j].is_some()).collect(),
    };
    let mut qq = a.qq_out.as_deref().map(csv_writer).transpose()?;
    let mut pairs = a.pairs_out.as_deref().map(csv_writer).transpose()?;
    let mut nulls = a.null_out.as_deref().map(csv_writer).transpose()?;
    if let Some(w) = qq.as_mut() {
        w.write_record(["site", "empirical", "theoretical"])?;
    }
    if let Some(w) = pairs.as_mut() {
        w.write_record(["site", "row", "component_a", "component_b", "zn_a", "zn_b"])?;
    }
    if let Some(w) = nulls.as_mut() {
        w.write_record(["site", "replicate", "t_star"])?;
    }
    for j in sites {
        let site = model.site(j)?;
        let id = &model.site_ids[j];
        let rs = extract_residuals(&site.fit, &yl)?;
        let zn = to_gaussian_scale(&rs, &site.residuals.margins);
        let res = gaussianity_test(&zn, &site.residuals.sigma_tilde, cfg.gof_reps, derive_seed(a.seed, j as u64))?;
        let line = json!({
            "site": id,
            "t_star": res.t_star,
            "p_value": res.p_value,
            "n_v": res.n_v,
            "n_reps": cfg.gof_reps,
            "sigma": "fitted correlation treated as known in the null simulation",
        });
        println!("{line}");

        let names: Vec<&str> = site.fit.others.iter().map(|&o| model.site_ids[o].as_str()).collect();
        let k = zn.ncols();
        if let Some(w) = qq.as_mut() {
            let mut pooled: Vec<f64> = (0..zn.nrows())
                .flat_map(|r| (0..k).map(move |c| (r, c)))
                .filter(|&(r, c)| zn.mask[(r, c)])
                .map(|(r, c)| zn.values[(r, c)])
                .collect();
            pooled.sort_by(f64::total_cmp);
            let n = pooled.len() as f64;
            for (i, z) in pooled.iter().enumerate() {
                let q = norm_quantile((i as f64 + 0.5) / n);
                w.write_record([id.clone(), z.to_string(), q.to_string()])?;
            }
        }
        if let Some(w) = pairs.as_mut() {
            for r in 0..zn.nrows() {
                for x in 0..k {
                    for y in x + 1..k {
                        if zn.mask[(r, x)] && zn.mask[(r, y)] {
                            w.write_record([
                                id.clone(),
                                r.to_string(),
                                names[x].to_string(),
                                names[y].to_string(),
                                zn.values[(r, x)].to_string(),
                                zn.values[(r, y)].to_string(),
                            ])?;
                        }
                    }
                }
            }
        }
        if let Some(w) = nulls.as_mut() {
            for (i, t) in res.null_samples.iter().enumerate() {
                w.write_record([id.clone(), i.to_string(), t.to_string()])?;
            }
        }
    }
    for w in [qq, pairs, nulls].into_iter().flatten() {
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    }
    Ok(())
}

/// `events.csv` gets the sidecar `events.meta.json`.
fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let model = load_model(&a.model)?;
    let events = match &a.site {
        Some(s) => simulate_conditional(&model, resolve_site(&model, s)?, a.p, a.n, a.seed)?,
        None => simulate_anywhere_extreme(&model, a.p, a.n, cfg.n_mc_argmax, a.seed)?,
    };
    let scale = match a.scale {
        ScaleArg::Native => Scale::Native,
        ScaleArg::Laplace => Scale::Laplace,
    };
    let values = events.events(&model, scale);
    let mut w = csv_writer(&a.out)?;
    let mut header = vec!["cond_site".to_string()];
    header.extend(model.site_ids.iter().cloned());
    w.write_record(&header)?;
    for r in 0..events.len() {
        let mut row = vec![model.site_ids[events.cond_site[r]].clone()];
        row.extend((0..model.n_sites()).map(|c| format!("{:?}", values[(r, c)])));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?;

    let counts: BTreeMap<&str, usize> = model
        .site_ids
        .iter()
        .map(String::as_str)
        .zip(events.cond_site_counts(model.n_sites()))
        .collect();
    let meta = json!({
        "p": a.p,
        "seed": a.seed,
        "n": events.len(),
        "scale": match a.scale { ScaleArg::Native => "native", ScaleArg::Laplace => "laplace" },
        "acceptance_rate": events.acceptance_rate,
        "cond_site_counts": counts,
        "model_config_hash": model.report.config_hash,
    });
    write_json(&meta, Some(&sidecar_path(&a.out)))
}

pub fn tau(a: TauArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let model = load_model(&a.model)?;
    let j = resolve_site(&model, &a.site)?;
    let id = &model.site_ids[j];
    let mut w = a.out.as_deref().map(csv_writer).transpose()?;
    if let Some(w) = w.as_mut() {
        w.write_record(["site", "p", "m", "tau", "prob_exactly_m"])?;
    }
    println!("site,p,m,tau");
    for (i, &p) in a.p.iter().enumerate() {
        let tau = tau_all(&model, j, p, cfg.n_sim, derive_seed(a.seed, i as u64))?;
        for (m, &t) in tau.iter().enumerate() {
            println!("{id},{p},{},{t}", m + 1);
        }
        if let Some(w) = w.as_mut() {
            // P(exactly m others extreme) = tau_m - tau_{m+1}, tau_0 = 1
            for m in 0..=tau.len() {
                let upper = if m == 0 { 1.0 } else { tau[m - 1] };
                let lower = tau.get(m).copied().unwrap_or(0.0);
                let t = if m == 0 { String::new() } else { upper.to_string() };
                w.write_record([id.clone(), p.to_string(), m.to_string(), t, (upper - lower).to_string()])?;
            }
        }
    }
    if let Some(w) = w {
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    }
    if let (Some(data), Some(report)) = (&a.data, &a.report) {
        let ds = load_data(data)?;
        if ds.site_ids() != model.site_ids.as_slice() {
            return Err(Error::Schema("dataset sites differ from the model's".into()));
        }
        let ms: Vec<usize> = if a.m.is_empty() { (1..model.n_sites()).collect() } else { a.m.clone() };
        let measures: Vec<RiskMeasure> = a
            .p
            .iter()
            .flat_map(|&p| ms.iter().map(move |&m| RiskMeasure::Tau { cond_site: j, m, p }))
            .collect();
        let rr = RiskReport::compute(&ds, &cfg, &measures, a.seed)?;
        write_json(&rr, Some(report))?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SiteRef {
    Index(usize),
    Id(String),
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum EventMethod {
    MonteCarlo,
    Integral,
    #[default]
    Both,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventSpec {
    cond_site: SiteRef,
    p_levels: Option<Vec<Option<f64>>>,
    thresholds: Option<Vec<Option<f64>>>,
    #[serde(default)]
    method: EventMethod,
    /// Monte Carlo sample size; defaults to the configured `n_sim`.
    n: Option<usize>,
}

pub fn jointprob(a: JointprobArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let model = load_model(&a.model)?;
    let text = std::fs::read_to_string(&a.event)
        .map_err(|e| Error::Config(format!("cannot read event {}: {e}", a.event.display())))?;
    let spec: EventSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.event.display())))?;
    let j = match &spec.cond_site {
        SiteRef::Index(j) => *j,
        SiteRef::Id(s) => resolve_site(&model, s)?,
    };
    let event = match (&spec.p_levels, &spec.thresholds) {
        (Some(p), None) => JointEvent::from_probabilities(&model, j, p)?,
        (None, Some(q)) => JointEvent::from_thresholds(&model, j, q)?,
        _ => return Err(Error::Config("give exactly one of `p_levels` and `thresholds`".into())),
    };
    let mut out = serde_json::Map::new();
    out.insert("cond_site".into(), json!(model.site_ids[j]));
    out.insert("levels_laplace".into(), json!(event.levels.iter().map(|l| l.is_finite().then_some(*l)).collect::<Vec<_>>()));
    out.insert("seed".into(), json!(a.seed));
    if spec.method != EventMethod::Integral {
        let mc = joint_prob_mc(&model, &event, spec.n.unwrap_or(cfg.n_sim), a.seed)?;
        if mc.zero_hits {
            eprintln!("warning: no simulated event fell in the region; use the integral estimator");
        }
        out.insert("monte_carlo".into(), serde_json::to_value(mc)?);
    }
    if spec.method != EventMethod::MonteCarlo {
        let opts = IntegralOptions {
            qmc: cfg.qmc(a.seed),
            ..IntegralOptions::default()
        };
        let int = joint_prob_integral(&model, &event, &opts)?;
        if !int.converged {
            eprintln!("warning: adaptive quadrature did not converge; numerical_error is enlarged");
        }
        out.insert("integral".into(), serde_json::to_value(int)?);
    }
    if let Some(data) = &a.data {
        let p_levels = spec
            .p_levels
            .clone()
            .ok_or_else(|| Error::Config("bootstrap intervals need `p_levels`".into()))?;
        let ds = load_data(data)?;
        let method = if spec.method == EventMethod::MonteCarlo {
            JointMethod::MonteCarlo
        } else {
            JointMethod::Integral
        };
        let measure = RiskMeasure::JointProb {
            cond_site: j,
            p_levels,
            method,
        };
        let iv = bootstrap_ci(&ds, &cfg, &measure, cfg.n_boot, cfg.ci_level, a.seed)?;
        out.insert("interval".into(), serde_json::to_value(iv)?);
        out.insert("bootstrap_procedure".into(), json!(condex::bootstrap::BOOTSTRAP_PROCEDURE));
    }
    write_json(&out, a.out.as_deref())
}

pub fn simstudy(a: SimstudyArgs) -> Result<()> {
    let cfg = SimStudyConfig {
        d: a.d,
        delta: a.delta,
        n: a.n,
        p_levels: a.p,
        dependence_quantile: a.dependence_quantile,
        method: a.method.into(),
        known_regression: !a.estimate_regression,
        n_reps: a.reps,
        n_boot: a.n_boot,
        n_mc: a.n_mc,
        ci_level: a.ci_level,
        seed: a.seed,
    };
    let report = run_simstudy(&cfg)?;
    print!("{}", report.to_pretty());
    if let Some(path) = &a.csv {
        std::fs::write(path, report.to_csv())?;
    }
    if let Some(path) = &a.json {
        write_json(&report, Some(path))?;
    }
    Ok(())
}

pub fn summary(a: SummaryArgs) -> Result<()> {
    if a.data.is_none() && a.model.is_none() {
        return Err(Error::Config("give --data, --model or both".into()));
    }
    let mut out = serde_json::Map::new();
    if let Some(path) = &a.data {
        let ds = load_data(path)?;
        let s = summarize_missingness(&ds);
        let mut observed_counts = BTreeMap::new();
        for &c in &s.per_row_observed_count {
            *observed_counts.entry(c).or_insert(0usize) += 1;
        }
        let sites: Vec<_> = ds
            .site_ids()
            .iter()
            .zip(&s.per_site_fraction_missing)
            .map(|(id, f)| json!({"site": id, "observed": ds.observed_column(ds.site_ids().iter().position(|x| x == id).unwrap()).len(), "fraction_missing": f}))
            .collect();
        out.insert(
            "data".into(),
            json!({
                "n_rows": ds.n_rows(),
                "n_sites": ds.n_sites(),
                "data_usage_efficiency": s.data_usage_efficiency,
                "rows_by_observed_count": observed_counts,
                "sites": sites,
            }),
        );
    }
    if let Some(path) = &a.model {
        let model = load_model(path)?;
        let margins: Vec<_> = model
            .site_ids
            .iter()
            .zip(&model.margins)
            .map(|(id, m)| {
                json!({
                    "site": id,
                    "threshold": m.gpd.u,
                    "sigma": m.gpd.sigma,
                    "xi": m.gpd.xi,
                    "phi_u": m.gpd.phi_u,
                    "n_exceedances": m.gpd.n_exc,
                    "bandwidth": m.body.bandwidth(),
                })
            })
            .collect();
        let conditionals: Vec<_> = model
            .conditionals
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.as_ref().map(|c| (j, c)))
            .map(|(j, c)| {
                let others: Vec<&str> = c.fit.others.iter().map(|&o| model.site_ids[o].as_str()).collect();
                json!({
                    "site": model.site_ids[j],
                    "others": others,
                    "alpha": c.fit.alpha,
                    "beta": c.fit.beta,
                    "min_eigenvalue": condex::residual_copula::min_eigenvalue(&c.residuals.sigma_tilde),
                })
            })
            .collect();
        out.insert(
            "model".into(),
            json!({
                "schema": model.schema,
                "marginal_threshold_quantile": model.marginal_threshold_quantile,
                "dependence_quantile": model.dependence_quantile,
                "margins": margins,
                "conditionals": conditionals,
                "report": model.report,
            }),
        );
    }
    write_json(&out, None)
}
