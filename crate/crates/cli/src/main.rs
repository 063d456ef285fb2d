//! Scenario-driven command line: stratification tables, clustering
//! reports, scalar-curvature traces, asymptotic fits, genericity scans,
//! and the named verification suites.
//!
//! Exit codes: 0 pass, 1 check failed, 2 configuration error, 3 numerical
//! horizon reached. The worker count comes from `--workers` or the
//! `EBIN_WORKERS` environment variable; output bytes are identical for any
//! worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ebin_core::asymptotics::{delta_condition, fit_decay, predicted_rate, y_membership};
use ebin_core::cluster::{check_cluster_hypothesis, propose_clustering};
use ebin_core::curvature::{curvature_trace, CurvatureTrace, GeodesicSpec, Method};
use ebin_core::error::Error;
use ebin_core::field::{structure_functions, Region};
use ebin_core::genericity::{perturb_to_generic, singular_locus, transversality_margin};
use ebin_core::scenario::Scenario;
use ebin_core::strata::{check_reference_table, enumerate_multiplicities, enumerate_triplets};
use ebin_core::verify::{run_suite, SUITES};

#[derive(Parser)]
#[command(name = "ebin", version, about = "Scalar curvature along volume-preserving metric geodesics: tables, traces, fits, and verification suites")]
struct Cli {
    /// Worker threads for grid sweeps (default: EBIN_WORKERS or the
    /// available parallelism). Results are byte-identical for any value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalue-multiplicity tables: faces, codimensions, and triplets.
    Strata {
        /// Ambient dimension (2..=10).
        #[arg(short, long)]
        n: usize,
        /// Codimension cutoff (default: n).
        #[arg(long)]
        max_codim: Option<usize>,
        /// Compare against the embedded reference tables (n = 4, 5, 6).
        #[arg(long)]
        check_paper: bool,
        /// Output machine-readable rows instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Propose a clustering for the scenario field and report margins.
    Cluster {
        #[arg(short, long)]
        scenario: PathBuf,
        /// Restrict to a named region from the scenario.
        #[arg(long)]
        region: Option<String>,
    },
    /// Scalar-curvature trace as CSV rows (region, t, sup, inf, mean).
    Trace {
        #[arg(short, long)]
        scenario: PathBuf,
        #[arg(short, long, default_value = "diagonal")]
        method: String,
        /// Also run the coordinate oracle and add its columns.
        #[arg(long)]
        compare_oracle: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump each curvature field as a text grid into this directory.
        #[arg(long)]
        dump_fields: Option<PathBuf>,
    },
    /// Decay analysis: delta condition, membership, fit, predicted rate.
    Asymp {
        #[arg(short, long)]
        scenario: PathBuf,
        /// Override the scenario fit window.
        #[arg(long, num_args = 2)]
        window: Option<Vec<f64>>,
    },
    /// Singular-locus scan with transversality margins.
    Generic {
        #[arg(short, long)]
        scenario: PathBuf,
        /// Write the hit table as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Perturb the scenario field until its hits pass transversality.
    Perturb {
        #[arg(short, long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        magnitude: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 24)]
        budget: usize,
    },
    /// Run a named verification suite.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(short, long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here (stdout always gets the summary).
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let workers = cli
        .workers
        .or_else(|| {
            std::env::var("EBIN_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1)
        })
        .max(1);
    let code = match run(cli.command, workers) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Overflow(_) => 3,
                Error::Config(_) | Error::Io(_) | Error::DimensionMismatch(_) => 2,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn load(path: &Path) -> Result<(Scenario, PathBuf), Error> {
    let sc = Scenario::load(path)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((sc, base))
}

fn run(command: Command, workers: usize) -> Result<i32, Error> {
    match command {
        Command::Strata {
            n,
            max_codim,
            check_paper,
            csv,
        } => {
            if !(2..=10).contains(&n) {
                return Err(Error::Config("strata needs 2 <= n <= 10".into()));
            }
            let cutoff = max_codim.unwrap_or(n);
            let faces = enumerate_multiplicities(n, cutoff);
            if csv {
                println!("n,m,codim,orbit_space_dim,triplet_count,triplets");
                for f in &faces {
                    let trips = enumerate_triplets(&f.m);
                    let list = trips
                        .iter()
                        .map(|t| format!("(1 {} {})", t.b, t.c))
                        .collect::<Vec<_>>()
                        .join(" ");
                    println!(
                        "{n},{},{},{},{},{list}",
                        f.m, f.codim, f.orbit_space_dim, trips.len()
                    );
                }
            } else {
                println!("{:<16} {:>6} {:>10} {:>8}  triplets", "m", "codim", "orbit-dim", "count");
                for f in &faces {
                    let trips = enumerate_triplets(&f.m);
                    let list = trips
                        .iter()
                        .map(|t| t.to_string())
                        .collect::<Vec<_>>()
                        .join(" ");
                    println!(
                        "{:<16} {:>6} {:>10} {:>8}  {list}",
                        f.m.to_string(),
                        f.codim,
                        f.orbit_space_dim,
                        trips.len()
                    );
                }
            }
            if check_paper {
                check_reference_table(n)?;
                println!("reference table n = {n}: match");
            }
            Ok(0)
        }
        Command::Cluster { scenario, region } => {
            let (sc, base) = load(&scenario)?;
            let built = sc.build(&base)?;
            let work = match &region {
                Some(name) => built
                    .regions
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no region named '{name}'")))?,
                None => built.full.clone(),
            };
            let spec = propose_clustering(&built.h, &work, sc.eps_divisor)?;
            println!("clustering m = {}", spec.m);
            println!("lambda* = {:?}", spec.lambda_star);
            println!("r = {}", spec.r);
            println!("eps = {}", spec.eps);
            let report = check_cluster_hypothesis(&built.h, &spec, &work);
            println!("hypothesis margin = {}", report.margin);
            match ebin_core::cluster::block_decompose(&built.h, &spec, &work, &built.g0) {
                Ok(bf) => {
                    let audit = bf.audit(&built.h, &built.g0)?;
                    println!("min cluster gap = {}", audit.min_gap);
                    println!("max |lambda - lambda*| = {}", audit.max_lambda_dev);
                    println!("max |S| = {}", audit.max_block_norm);
                    println!("off-block residual = {}", audit.offblock_residual);
                    println!("frame residual = {}", audit.frame_residual);
                    Ok(0)
                }
                Err(e) => {
                    println!("decomposition failed: {e}");
                    Ok(1)
                }
            }
        }
        Command::Trace {
            scenario,
            method,
            compare_oracle,
            out,
            dump_fields,
        } => {
            let (sc, base) = load(&scenario)?;
            let built = sc.build(&base)?;
            let method: Method = method.parse()?;
            let bf = match method {
                Method::Oracle => None,
                _ => Some(built.block_frame()?),
            };
            let mut csv = String::new();
            let mut horizon = None;
            let mut oracle_note = String::new();
            let regions: Vec<(String, Region)> = if built.regions.is_empty() {
                vec![("full".to_string(), built.full.clone())]
            } else {
                built
                    .regions
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect()
            };
            if compare_oracle {
                csv.push_str(
                    "region,t,sup_R,inf_R,mean_R,oracle_sup_R,oracle_inf_R,oracle_mean_R\n",
                );
            } else {
                csv.push_str("region,t,sup_R,inf_R,mean_R\n");
            }
            for (name, region) in &regions {
                let spec = GeodesicSpec {
                    g0: &built.g0,
                    h: &built.h,
                    times: &sc.times,
                    region,
                };
                let keep = dump_fields.is_some();
                let trace = curvature_trace(&spec, method, bf.as_ref(), workers, keep)?;
                horizon = horizon.or(trace.horizon);
                let oracle = if compare_oracle && method != Method::Oracle {
                    Some(curvature_trace(&spec, Method::Oracle, None, workers, false)?)
                } else {
                    None
                };
                append_rows(&mut csv, name, &trace, oracle.as_ref());
                if let Some(o) = &oracle {
                    let mut worst = 0.0f64;
                    for (a, b) in trace.sup.iter().zip(&o.sup) {
                        worst = worst.max((a - b).abs());
                    }
                    oracle_note =
                        format!("max |sup_R - oracle_sup_R| over '{name}' = {worst}");
                }
                if let Some(dir) = &dump_fields {
                    std::fs::create_dir_all(dir)?;
                    if let Some(fields) = &trace.fields {
                        for (t, field) in trace.times.iter().zip(fields) {
                            let path =
                                dir.join(format!("{name}-{}-t{t}.fld", method.name()));
                            let mut f = std::fs::File::create(path)?;
                            field.write_text(&mut f)?;
                        }
                    }
                }
            }
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            if !oracle_note.is_empty() {
                eprintln!("{oracle_note}");
            }
            if let Some(t) = horizon {
                eprintln!("overflow horizon reached at t = {t}; trace truncated");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Asymp { scenario, window } => {
            let (sc, base) = load(&scenario)?;
            let built = sc.build(&base)?;
            let bf = built.block_frame()?;
            let window = match window {
                Some(w) => (w[0], w[1]),
                None => sc.fit_window,
            };
            let c0 = structure_functions(&bf.frame, &built.g0);
            let delta = delta_condition(&c0, &bf.spec.m, &built.full, &built.grid);
            let membership =
                y_membership(&built.h, &built.g0, &built.cover(), sc.eps_divisor)?;
            let spec = GeodesicSpec {
                g0: &built.g0,
                h: &built.h,
                times: &sc.times,
                region: &built.full,
            };
            let trace = curvature_trace(&spec, Method::Diagonal, Some(&bf), workers, false)?;
            let fit = fit_decay(&trace, window)?;
            let rate = predicted_rate(&bf, &c0, &built.full, delta.delta.max(f64::MIN_POSITIVE), 1e-8)?;
            let row = serde_json::json!({
                "delta_p": delta.delta,
                "member": membership.member,
                "c1": fit.c1,
                "c2": fit.c2,
                "residual": fit.residual,
                "window": [fit.t_lo, fit.t_hi],
                "predicted_rate": rate.rho,
                "rate_floor": rate.floor,
            });
            println!("{row}");
            println!(
                "verdict: {} (delta_p = {}, fitted rate {} vs predicted {})",
                if membership.member { "member" } else { "not a member" },
                delta.delta,
                fit.c2,
                rate.rho
            );
            Ok(if membership.member { 0 } else { 1 })
        }
        Command::Generic { scenario, json } => {
            let (sc, base) = load(&scenario)?;
            let built = sc.build(&base)?;
            let report = singular_locus(&built.h, sc.gap_tol);
            println!(
                "{:<24} {:<12} {:>12} {:>12}  verdict",
                "position", "m", "gap", "margin"
            );
            let mut rows = Vec::new();
            let mut all_ok = true;
            for hit in &report.hits {
                let (margin, verdict) =
                    match transversality_margin(&built.h, hit, Some(sc.margin_tol)) {
                        Ok(m) => (Some(m.margin), if m.transversal { "transversal" } else { "DEGENERATE" }),
                        Err(Error::CodimensionTooLarge { codim, n }) => {
                            all_ok = false;
                            println!("  (codim {codim} > {n}: stratum cannot occur transversally)");
                            (None, "too-deep")
                        }
                        Err(e) => return Err(e),
                    };
                if verdict == "DEGENERATE" {
                    all_ok = false;
                }
                let pos = hit
                    .position
                    .iter()
                    .map(|v| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(",");
                println!(
                    "{:<24} {:<12} {:>12.3e} {:>12}  {verdict}",
                    pos,
                    hit.m.to_string(),
                    hit.gap,
                    margin.map(|m| format!("{m:.3e}")).unwrap_or_else(|| "-".into()),
                );
                rows.push(serde_json::json!({
                    "position": hit.position,
                    "m": hit.m.parts(),
                    "gap": hit.gap,
                    "margin": margin,
                    "verdict": verdict,
                }));
            }
            println!(
                "{} hits, {} flagged points (gap_tol = {})",
                report.hits.len(),
                report.flagged,
                report.gap_tol
            );
            if let Some(path) = json {
                std::fs::write(
                    path,
                    serde_json::json!({
                        "hits": rows,
                        "flagged": report.flagged,
                        "gap_tol": report.gap_tol,
                    })
                    .to_string(),
                )?;
            }
            Ok(if all_ok { 0 } else { 1 })
        }
        Command::Perturb {
            scenario,
            magnitude,
            seed,
            budget,
        } => {
            let (sc, base) = load(&scenario)?;
            let built = sc.build(&base)?;
            let seed = seed.unwrap_or(sc.seed);
            let (out, info) = perturb_to_generic(
                &built.h,
                seed,
                magnitude,
                sc.gap_tol,
                Some(sc.margin_tol),
                budget,
            )?;
            let _ = out;
            println!(
                "candidate {} accepted: {} hits, worst margin {}",
                info.candidate, info.hits, info.worst_margin
            );
            Ok(0)
        }
        Command::Verify {
            suite,
            scenario,
            seed,
            json,
        } => {
            let (sc, base) = match &scenario {
                Some(path) => {
                    let (sc, base) = load(path)?;
                    (Some(sc), base)
                }
                None => (None, PathBuf::from(".")),
            };
            let seed = seed.or(sc.as_ref().map(|s| s.seed)).unwrap_or(0);
            if !SUITES.contains(&suite.as_str()) {
                return Err(Error::Config(format!(
                    "unknown suite '{suite}'; known: {SUITES:?}"
                )));
            }
            let report = run_suite(&suite, sc.as_ref(), &base, seed, workers)?;
            let payload = report.to_json();
            if let Some(path) = &json {
                std::fs::write(path, &payload)?;
            }
            println!("{payload}");
            println!(
                "suite {}: {}",
                report.suite,
                if report.pass { "PASS" } else { "FAIL" }
            );
            Ok(if report.pass { 0 } else { 1 })
        }
    }
}

fn append_rows(
    csv: &mut String,
    region: &str,
    trace: &CurvatureTrace,
    oracle: Option<&CurvatureTrace>,
) {
    for (i, t) in trace.times.iter().enumerate() {
        match oracle {
            Some(o) => {
                let _ = writeln!(
                    csv,
                    "{region},{t},{},{},{},{},{},{}",
                    trace.sup[i], trace.inf[i], trace.mean[i], o.sup[i], o.inf[i], o.mean[i]
                );
            }
            None => {
                let _ = writeln!(
                    csv,
                    "{region},{t},{},{},{}",
                    trace.sup[i], trace.inf[i], trace.mean[i]
                );
            }
        }
    }
}
