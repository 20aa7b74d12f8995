//! The four subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use cdo_hjmm::hjmm::HjmmModel;
use cdo_hjmm::levy::{LevyTriplet, MomentReport};
use cdo_hjmm::market::{bond_prices, simulate_loss, CoupledPath, PathPlan};
use cdo_hjmm::seed::derive_seed;
use cdo_hjmm::statespace::ForwardSurface;
use cdo_hjmm::verify::{
    audit_positivity_monotonicity, martingale_test, price_monotonicity_audit, solve_batch, MartingaleReport,
    MartingaleSetup, PriceAudit, SurfaceAudit, PRICE_TOLERANCE,
};
use cdo_hjmm::volatility::{
    check_derivative_conditions, check_m1_m2, check_p1_p2, estimate_regularity_constants, CertificationReport,
    RegularityReport, SamplingBoxes, SpecSummary,
};
use cdo_hjmm::{Error, Verdict};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::{Cli, CliError, Command, Exit};

struct Run<'a> {
    cli: &'a Cli,
    cfg: ScenarioConfig,
    config_path: PathBuf,
    out: PathBuf,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_path: String,
    seed: Option<u64>,
    drift_convention: &'static str,
    no_drift: bool,
    force: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    laplace_range: Option<(f64, f64, usize)>,
    exit_code: u8,
    outputs: &'a [String],
    /// Every setting, defaults included.
    config: &'a ScenarioConfig,
}

pub fn dispatch(cli: &Cli) -> Result<Exit, CliError> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let mut cfg = ScenarioConfig::load(&config_path)?;
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(c) = cli.drift_convention {
        cfg.drift_convention = c;
    }
    cfg.validate_conditions()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut run = Run {
        cli,
        cfg,
        config_path,
        out,
        outputs: vec![],
    };
    let exit = match &cli.command {
        Command::Check => run.check(),
        Command::Simulate => run.simulate(),
        Command::Verify => run.verify(),
        Command::Laplace { z_min, z_max, z_steps } => run.laplace(*z_min, *z_max, *z_steps),
    };
    // Metadata is written for every run that got past config parsing.
    let code = match &exit {
        Ok(e) => e.code(),
        Err(e) => e.exit.code(),
    };
    if fs::create_dir_all(&run.out).is_ok() {
        run.write_metadata(code)?;
    }
    exit
}

fn verdict_of<'a>(vs: impl IntoIterator<Item = &'a Verdict>) -> Verdict {
    vs.into_iter().fold(Verdict::Pass, |acc, v| acc.and(*v))
}

fn moment_verdict(m: &MomentReport) -> Verdict {
    verdict_of(
        [&m.levy_integrability, &m.second_moment, &m.third_moment]
            .into_iter()
            .chain(m.exp_moment_second.iter())
            .chain(m.exp_moment_third.iter()),
    )
}

#[derive(Serialize)]
struct CheckReport {
    requested: Vec<String>,
    spec: SpecSummary,
    boxes: SamplingBoxes,
    certification: Option<CertificationReport>,
    regularity: Option<RegularityReport>,
    moments: Option<MomentReport>,
    verdicts: BTreeMap<String, Verdict>,
    verdict: Verdict,
}

#[derive(Serialize)]
struct VerifyReport {
    n_paths: usize,
    no_drift: bool,
    drift_convention: &'static str,
    surface_audit: Option<SurfaceAudit>,
    price_audit: Option<PriceAudit>,
    martingale: Option<MartingaleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    martingale_error: Option<String>,
    verdicts: BTreeMap<String, Verdict>,
    verdict: Verdict,
}

fn model_error(e: Error) -> CliError {
    CliError::runtime(e.to_string())
}

fn is_inconsistency(e: &Error) -> bool {
    match e {
        Error::ModelInconsistency { .. } => true,
        Error::Step { source, .. } => is_inconsistency(source),
        _ => false,
    }
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        self.outputs.push(name.to_string());
        Ok(self.out.join(name))
    }

    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let p = self.path(name)?;
        let f = File::create(&p).map_err(|e| CliError::io(&p, e))?;
        Ok((p, BufWriter::new(f)))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let (p, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(&p, e))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(&p, e))
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> cdo_hjmm::Result<()>,
    ) -> Result<(), CliError> {
        let (p, mut w) = self.create(name)?;
        f(&mut w).map_err(|e| CliError::io(&p, e))?;
        w.flush().map_err(|e| CliError::io(&p, e))
    }

    fn write_metadata(&mut self, exit_code: u8) -> Result<(), CliError> {
        let laplace_range = match self.cli.command {
            Command::Laplace { z_min, z_max, z_steps } => Some((z_min, z_max, z_steps)),
            _ => None,
        };
        let mut outputs = self.outputs.clone();
        outputs.push("run_metadata.json".into());
        let meta = Metadata {
            tool: "cdo-lab",
            version: env!("CARGO_PKG_VERSION"),
            command: self.cli.command.name(),
            config_path: self.config_path.display().to_string(),
            seed: self.cfg.seed,
            drift_convention: self.cfg.drift_convention.as_str(),
            no_drift: self.cli.no_drift,
            force: self.cli.force,
            laplace_range,
            exit_code,
            outputs: &outputs,
            config: &self.cfg,
        };
        let p = self.out.join("run_metadata.json");
        let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::io(&p, e))?;
        fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
    }

    fn model(&self) -> Result<HjmmModel, CliError> {
        let cfg = &self.cfg;
        let model =
            HjmmModel::with_convention(cfg.triplet()?, cfg.volatility()?, cfg.grid()?, cfg.eps, cfg.drift_convention)
                .map_err(|e| CliError::config(e.to_string()))?;
        Ok(if self.cli.no_drift {
            model.without_drift()
        } else {
            model
        })
    }

    fn certify(&self, triplet: &LevyTriplet) -> Result<CheckReport, CliError> {
        let cfg = &self.cfg;
        let spec = cfg.volatility()?;
        let grid = cfg.grid()?;
        let boxes = cfg.boxes(cfg.seed()?)?;
        let c = &cfg.check;
        let mut verdicts = BTreeMap::new();
        let mut cert: Option<CertificationReport> = None;
        let mut add = |r: CertificationReport| {
            cert = Some(match cert.take() {
                Some(prev) => prev.merge(r),
                None => r,
            });
        };
        if c.wants("P1") || c.wants("P2") {
            add(check_p1_p2(&spec, triplet, &boxes));
        }
        if c.wants("M1") || c.wants("M2") {
            add(check_m1_m2(&spec, triplet, &boxes));
        }
        let mut derivative = None;
        if c.wants("derivative") {
            let r = check_derivative_conditions(&spec, triplet, &boxes);
            derivative = Some(r.overall());
            add(r);
        }
        for name in ["P1", "P2", "M1", "M2"] {
            if c.wants(name) {
                let v = cert
                    .as_ref()
                    .and_then(|r| r.verdict(name))
                    .unwrap_or(Verdict::Indeterminate);
                verdicts.insert(name.to_string(), v);
            }
        }
        if let Some(v) = derivative {
            verdicts.insert("derivative".into(), v);
        }
        let mut regularity = None;
        let mut moments = None;
        if c.wants("regularity") || c.wants("moments") {
            let reg = estimate_regularity_constants(&spec, &boxes, grid.gamma);
            if c.wants("moments") {
                let m = triplet.check_moment_conditions(Some(reg.exp_moment_constant(grid.gamma)));
                verdicts.insert("moments".into(), moment_verdict(&m));
                moments = Some(m);
            }
            if c.wants("regularity") {
                verdicts.insert("regularity".into(), verdict_of(reg.constants.iter().map(|k| &k.verdict)));
                regularity = Some(reg);
            }
        }
        let verdict = verdict_of(verdicts.values());
        Ok(CheckReport {
            requested: c.conditions.clone(),
            spec: spec.summary(),
            boxes,
            certification: cert,
            regularity,
            moments,
            verdicts,
            verdict,
        })
    }

    fn check(&mut self) -> Result<Exit, CliError> {
        let report = self.certify(&self.cfg.triplet()?)?;
        self.write_json("check_report.json", &report)?;
        for (name, v) in &report.verdicts {
            println!("{name}: {}", verdict_str(*v));
        }
        if let Some(cert) = &report.certification {
            for c in cert.conditions.iter().filter(|c| c.verdict == Verdict::Fail) {
                if let Some(w) = &c.witness {
                    println!("{} witness: {}", c.condition, serde_json::to_string(w).unwrap_or_default());
                }
            }
        }
        println!("check: {}", verdict_str(report.verdict));
        Ok(Exit::from_verdict(report.verdict))
    }

    /// Certification gate for simulate and verify.
    fn precheck(&mut self) -> Result<Option<Exit>, CliError> {
        if self.cli.force {
            return Ok(None);
        }
        let report = self.certify(&self.cfg.triplet()?)?;
        self.write_json("check_report.json", &report)?;
        match report.verdict {
            Verdict::Pass => Ok(None),
            v => {
                let failed: Vec<&str> = report
                    .verdicts
                    .iter()
                    .filter(|(_, x)| **x != Verdict::Pass)
                    .map(|(k, _)| k.as_str())
                    .collect();
                eprintln!(
                    "config is not certified ({}: {}); rerun with --force to override",
                    verdict_str(v),
                    failed.join(", ")
                );
                Ok(Some(Exit::from_verdict(v)))
            }
        }
    }

    fn simulate(&mut self) -> Result<Exit, CliError> {
        let seed = self.cfg.seed()?;
        let model = self.model()?;
        let r0 = self.cfg.r0()?;
        if let Some(exit) = self.precheck()? {
            return Ok(exit);
        }
        let sim = self.cfg.simulate.clone();
        let plan = PathPlan {
            horizon: self.cfg.horizon,
            snapshot_times: sim.snapshot_times.clone(),
            price_times: sim.price_times.clone(),
            maturities: sim.maturities.clone(),
        };
        let paths: Vec<cdo_hjmm::Result<CoupledPath>> = (0..sim.paths)
            .into_par_iter()
            .map(|p| simulate_loss(&model, &r0, &plan, derive_seed(seed, p as u64)))
            .collect();
        for (p, path) in paths.into_iter().enumerate() {
            let path = path.map_err(|e| CliError::runtime(format!("path {p}: {e}")))?;
            self.write_path(p, &path)?;
        }
        println!("simulate: {} path(s) written to {}", sim.paths, self.out.display());
        Ok(Exit::Pass)
    }

    fn write_path(&mut self, p: usize, path: &CoupledPath) -> Result<(), CliError> {
        for (t, s) in &path.scenario.snapshots {
            self.write_with(&format!("surface_p{p}_t{t}.csv"), |w| s.write_csv(w))?;
        }
        let sc = &path.scenario;
        let loss = &path.loss;
        self.write_with(&format!("short_end_p{p}.csv"), |w| {
            let mut wtr = csv::Writer::from_writer(w);
            let n = sc.short_end.first().map_or(0, Vec::len);
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|i| format!("x_{i}")));
            header.push("loss".into());
            header.push("discount".into());
            wtr.write_record(&header)?;
            for (m, (t, row)) in sc.times.iter().zip(&sc.short_end).enumerate() {
                let mut rec = vec![format!("{t}")];
                rec.extend(row.iter().map(|v| format!("{v}")));
                rec.push(format!("{}", loss.level_at(*t)));
                rec.push(path.discount.get(m).map_or(String::new(), |d| format!("{d}")));
                wtr.write_record(&rec)?;
            }
            wtr.flush()?;
            Ok(())
        })?;
        self.write_with(&format!("loss_p{p}.csv"), |w| loss.write_csv(w))?;
        for g in &path.prices {
            self.write_with(&format!("prices_p{p}_t{}.csv", g.t), |w| g.write_csv(w))?;
        }
        Ok(())
    }

    fn verify(&mut self) -> Result<Exit, CliError> {
        let seed = self.cfg.seed()?;
        let model = self.model()?;
        let r0 = self.cfg.r0()?;
        if let Some(exit) = self.precheck()? {
            return Ok(exit);
        }
        let cfg = &self.cfg;
        let c = &cfg.check;
        let want_pos = c.wants("P1") || c.wants("P2");
        let want_mon = c.wants("M1") || c.wants("M2");
        let mut verdicts = BTreeMap::new();

        let mut surface_audit = None;
        let mut price_audit = None;
        if want_pos || want_mon {
            let batch =
                solve_batch(&model, &r0, cfg.horizon, cfg.verify.audit_paths, seed).map_err(model_error)?;
            let audit = audit_positivity_monotonicity(&batch, cfg.verify.tolerance_ratio);
            if want_pos {
                verdicts.insert("positivity".to_string(), audit.positivity);
            }
            if want_mon {
                verdicts.insert("monotonicity".to_string(), audit.monotonicity);
                verdicts.insert("short_end_monotonicity".to_string(), audit.short_end_monotonicity);
            }
            if want_pos && want_mon {
                let grids = price_grids(&batch.iter().map(|s| &s.final_surface).collect::<Vec<_>>(), cfg)?;
                let pa = price_monotonicity_audit(&grids, PRICE_TOLERANCE);
                verdicts.insert("price_monotonicity".to_string(), pa.verdict);
                price_audit = Some(pa);
            }
            surface_audit = Some(audit);
        }

        let setup = MartingaleSetup {
            n_paths: cfg.n_paths,
            horizon: cfg.horizon,
            maturities: cfg.verify.maturities.clone(),
            checkpoints: cfg.verify.checkpoints,
            multiple: cfg.verify.multiple,
            seed,
        };
        let (martingale, martingale_error) = match martingale_test(&model, &r0, &setup) {
            Ok(rep) => {
                verdicts.insert("martingale".to_string(), rep.verdict);
                if rep.insufficient_paths {
                    eprintln!("warning: standard errors exceed 10% of the initial prices; add paths");
                }
                (Some(rep), None)
            }
            Err(e) if is_inconsistency(&e) => {
                verdicts.insert("martingale".to_string(), Verdict::Fail);
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(model_error(e)),
        };

        let verdict = verdict_of(verdicts.values());
        let report = VerifyReport {
            n_paths: cfg.n_paths,
            no_drift: self.cli.no_drift,
            drift_convention: cfg.drift_convention.as_str(),
            surface_audit,
            price_audit,
            martingale,
            martingale_error,
            verdicts,
            verdict,
        };
        for (name, v) in &report.verdicts {
            println!("{name}: {}", verdict_str(*v));
        }
        if let Some(m) = &report.martingale {
            println!("max normalized drift: {:.3} (limit {})", m.max_normalized, m.multiple);
            self.write_with("martingale.csv", |w| m.write_csv(w))?;
        }
        if let Some(e) = &report.martingale_error {
            println!("martingale run aborted: {e}");
        }
        self.write_json("verify_report.json", &report)?;
        println!("verify: {}", verdict_str(report.verdict));
        Ok(Exit::from_verdict(report.verdict))
    }

    fn laplace(&mut self, z_min: f64, z_max: f64, z_steps: usize) -> Result<Exit, CliError> {
        if !(z_min.is_finite() && z_max.is_finite() && z_max >= z_min) || z_steps == 0 {
            return Err(CliError::config(format!(
                "bad z range [{z_min}, {z_max}] with {z_steps} steps"
            )));
        }
        let triplet = self.cfg.triplet()?;
        let zs: Vec<f64> = if z_steps == 1 {
            vec![z_min]
        } else {
            (0..z_steps)
                .map(|k| z_min + (z_max - z_min) * k as f64 / (z_steps - 1) as f64)
                .collect()
        };
        let rows: Vec<[Option<f64>; 3]> = zs
            .par_iter()
            .map(|&z| {
                [
                    triplet.laplace_exponent(z).ok(),
                    triplet.laplace_derivative(z, 1).ok(),
                    triplet.laplace_derivative(z, 2).ok(),
                ]
            })
            .collect();
        let status: Vec<String> = zs
            .iter()
            .zip(&rows)
            .map(|(&z, r)| {
                if r.iter().all(Option::is_some) {
                    "ok".to_string()
                } else {
                    // Report the first failing quantity.
                    let err = triplet
                        .laplace_exponent(z)
                        .and_then(|_| triplet.laplace_derivative(z, 1))
                        .and_then(|_| triplet.laplace_derivative(z, 2))
                        .err();
                    match err {
                        Some(Error::Indeterminate { .. }) => "indeterminate".into(),
                        Some(Error::Domain { .. }) => "domain".into(),
                        Some(other) => format!("error: {other}"),
                        None => "ok".into(),
                    }
                }
            })
            .collect();
        self.write_with("laplace.csv", |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["z", "J", "dJ", "d2J", "status"])?;
            for ((z, r), s) in zs.iter().zip(&rows).zip(&status) {
                let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
                wtr.write_record([format!("{z}"), cell(r[0]), cell(r[1]), cell(r[2]), s.clone()])?;
            }
            wtr.flush()?;
            Ok(())
        })?;
        let bad = status.iter().filter(|s| *s != "ok").count();
        println!("laplace: {} rows, {bad} outside the domain", zs.len());
        Ok(Exit::Pass)
    }
}

/// Bond prices at the horizon on each final surface, default-free loss
/// level, for the verification maturities still ahead.
fn price_grids(
    surfaces: &[&ForwardSurface],
    cfg: &ScenarioConfig,
) -> Result<Vec<cdo_hjmm::market::PriceGrid>, CliError> {
    let t = cfg.horizon;
    let mut mats = vec![t];
    mats.extend(cfg.verify.maturities.iter().copied().filter(|&m| m > t));
    surfaces
        .iter()
        .map(|s| bond_prices(s, 0.0, t, &mats, 1.0).map_err(model_error))
        .collect()
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Indeterminate => "indeterminate",
    }
}
