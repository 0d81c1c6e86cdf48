//! Command dispatch and report emission for the `robustcert` binary.
//!
//! Every command builds one JSON report. Text output is rendered from that
//! same value, so both modes carry the same verdicts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use robustcert_core::dual::{DualError, DualFeasibility, StrongDuality, TypeMode};
use robustcert_core::efficiency::{oracle_verdicts, OracleVerdicts, SufficientReport, FEASIBILITY_TOL};
use robustcert_core::fixtures::fixture_source;
use robustcert_core::kkt::{KktSearch, VerifyReport};
use robustcert_core::robust::{worst_case, ACTIVITY_TOL};
use robustcert_core::*;

pub const SCHEMA: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Robust feasibility, worst-case values, active sets and subdifferentials.
    Check,
    /// Constraint qualification at the point.
    Cq,
    /// KKT certificate search and verification.
    Kkt,
    /// Grid oracles for weak, ordinary and proper efficiency.
    Efficiency,
    /// Type I / type II generalized convexity sampling.
    Convexity,
    /// Dual feasibility, weak and converse duality.
    Dual,
    /// Everything above in one report.
    Report,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "robustcert", version, about = "Certify robust efficiency of nonsmooth multiobjective programs")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Problem JSON file, or the name of a bundled fixture (ex2_2, ex2_3, ex3_2, ex3_3).
    #[arg(long)]
    pub problem: String,
    /// Comma-separated decision point. Defaults to the problem's reference point.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    /// Tolerance for KKT residuals, certificate clauses and dual feasibility.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Points per axis of the feasibility grid used by the efficiency oracles.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    /// Points per uncertainty axis (default: 1001, 101 or 21 by dimension).
    #[arg(long)]
    pub ugrid: Option<usize>,
    /// Resolution of the multiplier direction grid of the KKT search.
    #[arg(long, default_value_t = 40)]
    pub ygrid: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Decision-space samples of the convexity checks.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Quantify the dual sign condition over the whole uncertainty grid.
    #[arg(long)]
    pub strict_dual: bool,
    /// Use the subdifferential of the combined objective instead of the sum rule.
    #[arg(long)]
    pub exact_scalarization: bool,
    /// Dual triple `{"y": .., "y_star": .., "mu": ..}`, inline or as a file path.
    #[arg(long)]
    pub triple: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("problem: {0}")]
    Problem(#[from] ProblemError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Problem(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Loads a problem from disk, falling back to the bundled fixtures by name.
pub fn resolve_problem(name: &str) -> Result<Problem, CliError> {
    if Path::new(name).exists() {
        return Ok(load_problem(name)?);
    }
    match fixture_source(name) {
        Some(src) => Ok(src.parse()?),
        None => Err(CliError::Io(format!("cannot read `{name}`: no such file or bundled fixture"))),
    }
}

pub fn parse_point(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("bad coordinate `{s}` in --point")))
        })
        .collect()
}

pub fn parse_triple(text: &str) -> Result<DualTriple, CliError> {
    let raw = if text.trim_start().starts_with('{') {
        text.to_string()
    } else {
        std::fs::read_to_string(text).map_err(|e| CliError::Io(format!("cannot read `{text}`: {e}")))?
    };
    serde_json::from_str(&raw).map_err(|e| CliError::Usage(format!("bad --triple: {e}")))
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cli: Cli,
    pub problem: Problem,
    pub point: Vec<f64>,
    pub triple: Option<DualTriple>,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let problem = resolve_problem(&cli.problem)?;
        let point = match &cli.point {
            Some(p) => parse_point(p)?,
            None => problem
                .reference_point
                .clone()
                .ok_or_else(|| CliError::Usage("--point is required for problems without a reference point".into()))?,
        };
        if point.len() != problem.d {
            return Err(CliError::Usage(format!(
                "--point has {} coordinates, the problem has {} decision variables",
                point.len(),
                problem.d
            )));
        }
        if !(cli.tol > 0.0) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        if cli.grid < 2 || cli.ygrid < 1 || cli.samples < 1 || cli.ugrid.is_some_and(|u| u < 2) {
            return Err(CliError::Usage("--grid and --ugrid need at least 2 points, --ygrid and --samples at least 1".into()));
        }
        let triple = cli.triple.as_deref().map(parse_triple).transpose()?;
        if let Some(t) = &triple {
            if t.y.len() != problem.d || t.y_star.len() != problem.m || t.mu.len() != problem.n {
                return Err(CliError::Usage(format!(
                    "--triple needs y of length {}, y_star of length {}, mu of length {}",
                    problem.d, problem.m, problem.n
                )));
            }
        }
        Ok(RunConfig {
            cli,
            problem,
            point,
            triple,
        })
    }

    fn mode(&self) -> Mode {
        if self.cli.exact_scalarization {
            Mode::Exact
        } else {
            Mode::Outer
        }
    }

    fn robust(&self) -> RobustOptions {
        RobustOptions {
            ugrid: self.cli.ugrid,
            ..Default::default()
        }
    }

    fn kkt_options(&self) -> KktOptions {
        KktOptions {
            ygrid: self.cli.ygrid,
            tol: self.cli.tol,
            mode: self.mode(),
            robust: self.robust(),
            ..Default::default()
        }
    }

    fn sampler(&self) -> Sampler {
        Sampler {
            ugrid: self.cli.ugrid,
            mode: self.mode(),
            ..Sampler::new(self.cli.samples, self.cli.seed)
        }
    }

    fn dual_options(&self) -> DualOptions {
        DualOptions {
            tol: self.cli.tol,
            strict: self.cli.strict_dual,
            mode: self.mode(),
            robust: self.robust(),
        }
    }
}

/// Report under construction: sections plus a flat list of verdicts.
struct Builder {
    sections: Map<String, Value>,
    verdicts: Map<String, Value>,
    resolutions: Map<String, Value>,
}

impl Builder {
    fn verdict(&mut self, key: &str, v: impl Into<String>) {
        self.verdicts.insert(key.into(), Value::String(v.into()));
    }
}

fn yes(b: bool, t: &str, f: &str) -> String {
    if b { t } else { f }.to_string()
}

fn feasibility_section(cfg: &RunConfig, b: &mut Builder) -> Result<bool, CliError> {
    let p = &cfg.problem;
    let z = &cfg.point;
    let o = cfg.robust();
    let mut psi = Vec::new();
    for i in 0..p.n {
        let w = worst_case(p, i, z, &o).map_err(numerical)?;
        psi.push(json!({"index": i, "value": w.value, "argmax": w.argmax}));
    }
    let feasible = is_robust_feasible(p, z, FEASIBILITY_TOL, &o).map_err(numerical)?;
    let in_box = p.domain.contains(z);
    let active = active_index_set(p, z, ACTIVITY_TOL, &o).map_err(numerical)?;
    b.verdict("feasibility", yes(feasible, "feasible", "infeasible"));
    b.resolutions.insert("uncertainty_grid".into(), Value::String(o.describe(&p.uncertainty)));
    b.sections.insert(
        "feasibility".into(),
        json!({
            "feasible": feasible,
            "in_box": in_box,
            "tol": FEASIBILITY_TOL,
            "psi": psi,
            "active": active,
            "activity_tol": ACTIVITY_TOL,
        }),
    );
    Ok(feasible)
}

fn subdifferential_section(cfg: &RunConfig, b: &mut Builder) -> Result<(), CliError> {
    let p = &cfg.problem;
    let z = &cfg.point;
    let o = cfg.robust();
    let pt = Point::decision(z);
    let mut objectives = Vec::new();
    for (j, f) in p.objectives.iter().enumerate() {
        let s = limiting_subdiff(f, &pt, Wrt::Decision).map_err(numerical)?;
        objectives.push(json!({"index": j, "source": p.objective_sources[j], "set": s}));
    }
    let mut constraints = Vec::new();
    for i in active_index_set(p, z, ACTIVITY_TOL, &o).map_err(numerical)? {
        let clusters = active_uncertainty(p, i, z, ACTIVITY_TOL, &o).map_err(numerical)?;
        let hull = worst_case_subdiff(p, i, z, ACTIVITY_TOL, &o).map_err(numerical)?;
        constraints.push(json!({
            "index": i,
            "source": p.constraint_sources[i],
            "active_uncertainty": clusters,
            "worst_case_hull": hull,
        }));
    }
    b.sections.insert(
        "subdifferentials".into(),
        json!({"objectives": objectives, "active_constraints": constraints, "activity_tol": ACTIVITY_TOL}),
    );
    Ok(())
}

fn cq_section(cfg: &RunConfig, b: &mut Builder) -> Result<(), CliError> {
    let r = check_cq(&cfg.problem, &cfg.point, cfg.cli.tol, &cfg.robust()).map_err(numerical)?;
    b.verdict("cq", yes(r.holds, "holds", "fails"));
    b.sections.insert("cq".into(), to_value(&r));
    Ok(())
}

fn verify(cfg: &RunConfig, c: &KktCertificate) -> Result<VerifyReport, CliError> {
    verify_certificate(&cfg.problem, &cfg.point, c, cfg.cli.tol, &cfg.robust()).map_err(numerical)
}

fn kkt_section(cfg: &RunConfig, b: &mut Builder, search: Result<KktSearch, KktError>) -> Result<(), CliError> {
    let opts = cfg.kkt_options();
    let mut sec = Map::new();
    sec.insert("tol".into(), json!(opts.tol));
    sec.insert("mode".into(), json!(opts.mode.as_str()));
    match search {
        Ok(s) => {
            let rep = verify(cfg, &s.certificate)?;
            let kind = if s.certificate.fritz_john { "fritz_john" } else { "kkt" };
            b.verdict("kkt", format!("{kind} certificate found"));
            b.verdict("kkt_verification", yes(rep.passed, "passed", "failed"));
            b.resolutions.insert("kkt_directions".into(), json!(s.directions));
            sec.insert("found".into(), json!(true));
            sec.insert("search".into(), to_value(&s));
            sec.insert("verification".into(), to_value(&rep));
        }
        Err(KktError::NotFoundAtResolution { min_residual, directions }) => {
            b.verdict("kkt", "not found at resolution");
            b.resolutions.insert("kkt_directions".into(), json!(directions));
            sec.insert("found".into(), json!(false));
            sec.insert("min_residual".into(), json!(min_residual));
            sec.insert("directions".into(), json!(directions));
        }
        Err(KktError::Infeasible { max_psi }) => {
            b.verdict("kkt", "skipped: point not robust feasible");
            sec.insert("found".into(), json!(false));
            sec.insert("max_psi".into(), json!(max_psi));
        }
        Err(e) => return Err(numerical(e)),
    }
    let stated = &cfg.problem.stated;
    if let (Some(y), Some(mu), Some(pt)) = (&stated.y_star, &stated.mu, &stated.point) {
        if pt == &cfg.point {
            let c = KktCertificate::from_multipliers(&cfg.problem, &cfg.point, y, mu, opts.mode, &opts.robust).map_err(numerical)?;
            let rep = verify(cfg, &c)?;
            b.verdict("stated_certificate", yes(rep.passed, "verified", "rejected"));
            sec.insert("stated".into(), json!({"certificate": c, "verification": rep}));
        }
    }
    b.sections.insert("kkt".into(), Value::Object(sec));
    Ok(())
}

fn convexity_section(cfg: &RunConfig, b: &mut Builder, t: &TypeReport) {
    let s = cfg.sampler();
    b.verdict("type_i", fmt_str(&to_value(&t.type_i)));
    b.verdict("type_ii", fmt_str(&to_value(&t.type_ii)));
    b.resolutions.insert("convexity_sampler".into(), Value::String(s.describe(&cfg.problem)));
    b.sections.insert("convexity".into(), json!({"summary": t.summary(), "report": t}));
}

fn efficiency_section(b: &mut Builder, grid: &FeasibleGrid, o: &OracleVerdicts, eps: f64) {
    for (k, r) in [("weak", &o.weak), ("efficient", &o.efficient), ("proper", &o.proper)] {
        b.verdict(k, yes(r.holds(), "holds_on_grid", "refuted"));
    }
    b.resolutions.insert("feasibility_grid".into(), Value::String(grid.describe()));
    b.sections.insert("efficiency".into(), json!({"interior_margin": eps, "grid": grid, "oracle": o}));
}

fn build_grid(cfg: &RunConfig) -> Result<FeasibleGrid, CliError> {
    FeasibleGrid::build(&cfg.problem, cfg.cli.grid, &cfg.robust()).map_err(numerical)
}

fn dual_section(cfg: &RunConfig, b: &mut Builder, grid: &FeasibleGrid) -> Result<(), CliError> {
    let p = &cfg.problem;
    let d = cfg.dual_options();
    let mut sec = Map::new();
    sec.insert("tol".into(), json!(d.tol));
    sec.insert("strict".into(), json!(d.strict));
    let triple = match &cfg.triple {
        Some(t) => Some(t.clone()),
        None => match strong_duality_construct(p, &cfg.point, &cfg.kkt_options(), &d) {
            Ok(StrongDuality { triple, cq, dual_feasibility: _, claim }) => {
                sec.insert("strong_duality".into(), json!({"cq": cq, "claim": claim}));
                Some(triple)
            }
            Err(e @ (DualError::Precondition(_) | DualError::Kkt(_))) => {
                b.verdict("strong_duality", format!("not constructed: {e}"));
                sec.insert("strong_duality".into(), json!({"error": e.to_string()}));
                None
            }
            Err(e) => return Err(numerical(e)),
        },
    };
    if let Some(t) = triple {
        let feas: DualFeasibility = is_dual_feasible(p, &t, &d).map_err(numerical)?;
        b.verdict("dual_feasible", yes(feas.feasible, "feasible", "infeasible"));
        let weak = weak_duality_test(p, &t, grid, TypeMode::TypeI).map_err(numerical)?;
        b.verdict("weak_duality", yes(weak.holds(), "no violation", "violated"));
        sec.insert("triple".into(), to_value(&t));
        sec.insert("dual_feasibility".into(), to_value(&feas));
        sec.insert("weak_duality".into(), to_value(&weak));
        if feas.feasible {
            match converse_duality_check(p, &t, grid, TypeMode::TypeI, &d, &cfg.sampler()) {
                Ok(c) => {
                    b.verdict("converse_duality", yes(c.corroborated, "corroborated", "not corroborated"));
                    sec.insert("converse".into(), to_value(&c));
                }
                Err(DualError::Precondition(m)) => {
                    b.verdict("converse_duality", format!("skipped: {m}"));
                    sec.insert("converse".into(), json!({"error": m}));
                }
                Err(e) => return Err(numerical(e)),
            }
        }
    }
    b.sections.insert("dual".into(), Value::Object(sec));
    Ok(())
}

fn sufficient_section(b: &mut Builder, r: &SufficientReport) {
    let strongest = r.strongest.map(|c| fmt_str(&to_value(&c)));
    b.verdict("sufficient", strongest.clone().map_or("no licensed conclusion".into(), |s| format!("{s} licensed")));
    b.sections.insert(
        "sufficient".into(),
        json!({
            "kkt_verified": r.kkt_verified,
            "interior_certificate": r.interior_certificate,
            "conclusions": r.conclusions,
            "strongest": strongest,
        }),
    );
}

/// Runs one command and returns the report value.
pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let mut b = Builder {
        sections: Map::new(),
        verdicts: Map::new(),
        resolutions: Map::new(),
    };
    let p = &cfg.problem;
    let z = &cfg.point;
    let eps = robustcert_core::kkt::INTERIOR_MARGIN;
    match cfg.cli.command {
        Command::Check => {
            feasibility_section(cfg, &mut b)?;
            subdifferential_section(cfg, &mut b)?;
        }
        Command::Cq => {
            feasibility_section(cfg, &mut b)?;
            cq_section(cfg, &mut b)?;
        }
        Command::Kkt => {
            feasibility_section(cfg, &mut b)?;
            kkt_section(cfg, &mut b, find_kkt_certificate(p, z, &cfg.kkt_options()))?;
        }
        Command::Efficiency => {
            if feasibility_section(cfg, &mut b)? {
                let grid = build_grid(cfg)?;
                let o = oracle_verdicts(p, z, &grid, eps).map_err(numerical)?;
                efficiency_section(&mut b, &grid, &o, eps);
            }
        }
        Command::Convexity => {
            let t = classify_type(p, z, &cfg.sampler()).map_err(numerical)?;
            convexity_section(cfg, &mut b, &t);
        }
        Command::Dual => {
            feasibility_section(cfg, &mut b)?;
            let grid = build_grid(cfg)?;
            b.resolutions.insert("feasibility_grid".into(), Value::String(grid.describe()));
            dual_section(cfg, &mut b, &grid)?;
        }
        Command::Report => {
            let feasible = feasibility_section(cfg, &mut b)?;
            subdifferential_section(cfg, &mut b)?;
            cq_section(cfg, &mut b)?;
            if feasible {
                let grid = build_grid(cfg)?;
                let opts = SufficientOptions {
                    kkt: cfg.kkt_options(),
                    sampler: cfg.sampler(),
                    grid_per_axis: cfg.cli.grid,
                    interior_margin: eps,
                };
                let r = sufficient_conditions(p, z, &opts, &grid).map_err(numerical)?;
                let search = match (&r.kkt, &r.kkt_error) {
                    (Some(s), _) => Ok(s.clone()),
                    _ => find_kkt_certificate(p, z, &opts.kkt),
                };
                kkt_section(cfg, &mut b, search)?;
                convexity_section(cfg, &mut b, &r.convexity);
                efficiency_section(&mut b, &grid, &r.oracle, eps);
                sufficient_section(&mut b, &r);
                dual_section(cfg, &mut b, &grid)?;
            } else {
                let t = classify_type(p, z, &cfg.sampler()).map_err(numerical)?;
                convexity_section(cfg, &mut b, &t);
                b.verdict("pipeline", "stopped after feasibility: point not robust feasible");
            }
        }
    }
    let a = &cfg.cli;
    let mut report = Map::new();
    report.insert("schema".into(), json!(SCHEMA));
    report.insert(
        "config".into(),
        json!({
            "command": a.command,
            "problem": a.problem,
            "label": p.label,
            "point": z,
            "tol": a.tol,
            "grid": a.grid,
            "ugrid": a.ugrid,
            "ygrid": a.ygrid,
            "seed": a.seed,
            "samples": a.samples,
            "strict_dual": a.strict_dual,
            "scalarization": cfg.mode().as_str(),
            "triple": cfg.triple,
        }),
    );
    report.insert(
        "provenance".into(),
        json!({
            "tool": "robustcert",
            "version": env!("CARGO_PKG_VERSION"),
            "resolutions": b.resolutions,
            "assumptions": "expressions are piecewise C1 with continuous branch gradients; grid verdicts are conclusive only at the stated resolutions",
        }),
    );
    report.insert("verdicts".into(), Value::Object(b.verdicts));
    for (k, v) in b.sections {
        report.insert(k, v);
    }
    Ok(Value::Object(report))
}

fn fmt_vec(v: &Value) -> String {
    match v {
        Value::Array(a) => format!("({})", a.iter().map(fmt_num).collect::<Vec<_>>().join(", ")),
        other => fmt_num(other),
    }
}

fn fmt_str(v: &Value) -> String {
    v.as_str().map_or_else(|| v.to_string(), str::to_string)
}

fn fmt_num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if v.is_f64() => format!("{x:.6}"),
        _ => v.to_string(),
    }
}

/// Human-readable rendering of a report value.
pub fn render_text(r: &Value) -> String {
    let mut s = String::new();
    let c = &r["config"];
    let _ = writeln!(s, "robustcert {} | {}", c["command"].as_str().unwrap_or(""), c["label"].as_str().unwrap_or(""));
    let _ = writeln!(s, "point {}", fmt_vec(&c["point"]));
    if let Some(f) = r.get("feasibility") {
        let _ = writeln!(s, "\n[feasibility] tol {}", f["tol"]);
        for e in f["psi"].as_array().into_iter().flatten() {
            let _ = writeln!(s, "  psi_{} = {} at u = {}", e["index"], fmt_num(&e["value"]), fmt_vec(&e["argmax"]));
        }
        let _ = writeln!(s, "  constraints attaining max psi {}", f["active"]);
    }
    if let Some(sd) = r.get("subdifferentials") {
        let _ = writeln!(s, "\n[subdifferentials]");
        for o in sd["objectives"].as_array().into_iter().flatten() {
            let _ = writeln!(s, "  objective {}: {}", o["index"], o["set"]);
        }
        for g in sd["active_constraints"].as_array().into_iter().flatten() {
            let reps: Vec<String> = g["active_uncertainty"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|c| fmt_vec(&c["representative"]))
                .collect();
            let _ = writeln!(s, "  constraint {}: active u {}; worst-case hull {}", g["index"], reps.join(" "), g["worst_case_hull"]);
        }
    }
    if let Some(q) = r.get("cq") {
        let _ = writeln!(s, "\n[cq] tol {}", q["tol"]);
        for e in q["entries"].as_array().into_iter().flatten() {
            let _ = writeln!(s, "  constraint {}: distance of 0 to hull {}", e["index"], fmt_num(&e["distance"]));
        }
    }
    if let Some(k) = r.get("kkt") {
        let _ = writeln!(s, "\n[kkt] tol {} mode {}", k["tol"], fmt_str(&k["mode"]));
        if let Some(cert) = k.get("search").map(|x| &x["certificate"]) {
            let _ = writeln!(
                s,
                "  y* = {}  mu = {}  residual {}",
                fmt_vec(&cert["y_star"]),
                fmt_vec(&cert["mu"]),
                cert["residual"]
            );
        }
        if let Some(m) = k.get("min_residual") {
            let _ = writeln!(s, "  smallest residual {} over {} directions", m, k["directions"]);
        }
        for (name, rep) in [("found", k.get("verification")), ("stated", k.get("stated").map(|x| &x["verification"]))] {
            if let Some(rep) = rep {
                for cl in rep["clauses"].as_array().into_iter().flatten() {
                    let mark = if cl["passed"].as_bool() == Some(true) { "ok  " } else { "FAIL" };
                    let _ = writeln!(s, "  {name} {mark} {} = {} (tol {})", cl["name"].as_str().unwrap_or(""), cl["value"], cl["tol"]);
                }
            }
        }
    }
    if let Some(cv) = r.get("convexity") {
        let _ = writeln!(s, "\n[convexity] {}", cv["summary"].as_str().unwrap_or(""));
        for key in ["pseudo_convex", "strictly_pseudo_convex", "generalized_quasi_convex"] {
            let v = &cv["report"][key];
            let _ = writeln!(s, "  {key}: {} ({} samples, {} premises met)", fmt_str(&v["status"]), v["samples_used"], v["premises_met"]);
            if let Some(w) = v.get("witness").filter(|w| !w.is_null()) {
                let _ = writeln!(
                    s,
                    "    witness z = {} subgradient {} inner product {}",
                    fmt_vec(&w["z"]),
                    fmt_vec(&w["subgradient"]),
                    w["inner_product"]
                );
            }
        }
    }
    if let Some(e) = r.get("efficiency") {
        let _ = writeln!(s, "\n[efficiency] interior margin {}", e["interior_margin"]);
        for key in ["weak", "efficient", "proper"] {
            let o = &e["oracle"][key];
            let mut line = format!("  {key}: {}", fmt_str(&o["status"]));
            if let Some(z) = o.get("dominating_point").filter(|z| !z.is_null()) {
                let _ = write!(line, ", dominated by {}", fmt_vec(z));
            }
            if let Some(y) = o.get("proper_multiplier").filter(|z| !z.is_null()) {
                let _ = write!(line, ", multiplier {}", fmt_vec(y));
            }
            let _ = writeln!(s, "{line}");
        }
    }
    if let Some(d) = r.get("sufficient") {
        let _ = writeln!(s, "\n[sufficient conditions]");
        for c in d["conclusions"].as_array().into_iter().flatten() {
            let _ = writeln!(s, "  {}: {} (oracle agrees: {})", fmt_str(&c["concept"]), c["rule"].as_str().unwrap_or(""), c["oracle_agrees"]);
        }
    }
    if let Some(d) = r.get("dual") {
        let _ = writeln!(s, "\n[dual] tol {} strict {}", d["tol"], d["strict"]);
        if let Some(t) = d.get("triple") {
            let _ = writeln!(s, "  triple y = {} y* = {} mu = {}", fmt_vec(&t["y"]), fmt_vec(&t["y_star"]), fmt_vec(&t["mu"]));
        }
        for cl in d["dual_feasibility"]["clauses"].as_array().into_iter().flatten() {
            let mark = if cl["passed"].as_bool() == Some(true) { "ok  " } else { "FAIL" };
            let _ = writeln!(s, "  {mark} {} = {}", cl["name"].as_str().unwrap_or(""), cl["value"]);
        }
        if let Some(w) = d.get("weak_duality") {
            let _ = writeln!(s, "  weak duality: {} violations over {} points", w["violations"], w["checked"]);
        }
    }
    let _ = writeln!(s, "\n[verdicts]");
    for (k, v) in r["verdicts"].as_object().into_iter().flatten() {
        let _ = writeln!(s, "  {k}: {}", v.as_str().unwrap_or(""));
    }
    if let Some(res) = r["provenance"]["resolutions"].as_object() {
        let _ = writeln!(s, "\n[resolutions]");
        for (k, v) in res {
            let _ = writeln!(s, "  {k}: {}", fmt_str(v));
        }
    }
    s
}

/// Caps the rayon pool from `ROBUSTCERT_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("ROBUSTCERT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("ROBUSTCERT_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

/// Parses, runs and emits; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let out = cli.out.clone();
    let json_mode = cli.json;
    let result = configure_threads().and_then(|_| RunConfig::from_cli(cli)).and_then(|cfg| run(&cfg));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("robustcert: {e}");
            return e.exit_code();
        }
    };
    let text = if json_mode {
        let mut t = serde_json::to_string_pretty(&report).expect("json");
        t.push('\n');
        t
    } else {
        render_text(&report)
    };
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, text) {
                eprintln!("robustcert: cannot write `{}`: {e}", path.display());
                return 1;
            }
        }
        None => print!("{text}"),
    }
    0
}
