//! Configuration-driven experiment runner behind the `segregate` binary.
//!
//! Configs are flat `key = value` files with dotted namespaces; `#` starts a
//! comment. Each experiment accepts a fixed key set with defaults, rejects
//! anything else, and echoes the resolved set in its JSON output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::energy::{
    elastic_energy, elastic_to_nonlocal_with, Field, NodalField, Prefactor, ProfileProblem,
};
use crate::error::{Error, Result};
use crate::kernels::{
    build_balanced, build_short, neumann_green, KernelFamily, KernelMatrix, ShortRangeKernel,
};
use crate::minimize::{
    continuation, criterion_c, detect_jumps, equal_segments, exponent_fit, gap_avoidance_check,
    interface_costs, kt_grid, local_minimize, mollify, optimize_jump_positions, select_prefactor,
    LongRange, MinimizeOptions,
};
use crate::plot::{Chart, Series};
use crate::thermo::{critical_point, maxwell_construction, vdw_pressure, EosParams};
use crate::wells::{EnvelopeOptions, EnvelopeTable, WellParams};

/// Raw key/value pairs as read from a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("key '{k}' given twice")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Eos,
    Envelope,
    Minimize,
    Gamma,
    ElasticCheck,
    Exponent,
}

type KeyTable = &'static [(&'static str, Option<&'static str>)];

const MINIMIZE_KEYS: KeyTable = &[
    ("minimize.initial_step", Some("0.1")),
    ("minimize.backtrack", Some("0.5")),
    ("minimize.grad_tol", Some("1e-5")),
    ("minimize.max_iter", Some("20000")),
    ("minimize.box_margin", Some("1e-9")),
];

const NONLOCAL_KEYS: KeyTable = &[
    ("grid.n", Some("2048")),
    ("kernel.family", Some("gaussian")),
    ("kernel.scale", Some("0.5")),
    ("kernel.mass", Some("1")),
    ("kernel.eps", Some("0.2,0.1,0.05")),
    ("kernel.long", Some("green")),
    ("well.kt", Some("0.25")),
    ("mass", Some("0")),
];

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Eos => "eos",
            Experiment::Envelope => "envelope",
            Experiment::Minimize => "minimize",
            Experiment::Gamma => "gamma",
            Experiment::ElasticCheck => "elastic-check",
            Experiment::Exponent => "exponent",
        }
    }

    fn keys(self) -> Vec<(&'static str, Option<&'static str>)> {
        let own: KeyTable = match self {
            Experiment::Eos => &[
                ("eos.a", None),
                ("eos.b", None),
                ("eos.r", None),
                ("eos.temperatures", Some("0.85,0.9,0.95")),
                ("eos.v_max", Some("6")),
                ("eos.points", Some("400")),
            ],
            Experiment::Envelope => &[
                ("envelope.temperatures", Some("0.1,0.2,0.3,0.4,0.5,0.6")),
                ("envelope.points", Some("4001")),
                ("envelope.margin", Some("1e-6")),
                ("envelope.samples", Some("401")),
            ],
            Experiment::Minimize => &[
                ("init.jumps", Some("2")),
                ("init.perturbation", Some("0")),
                ("census.level", Some("0.9")),
                ("criterion.samples", Some("16")),
            ],
            Experiment::Gamma => &[
                ("gamma.k", Some("2")),
                ("profile.half_width", Some("20")),
                ("profile.resolution", Some("40")),
            ],
            Experiment::ElasticCheck => &[
                ("elastic.grids", Some("256,512,1024")),
                ("elastic.eps", Some("0.1")),
                ("elastic.fields", Some("10")),
                ("elastic.modes", Some("4")),
                ("elastic.amplitude", Some("0.03")),
                ("well.j", Some("0")),
                ("well.kt", Some("0.3")),
                ("mass", Some("0")),
            ],
            Experiment::Exponent => &[
                ("kernel.family", Some("constant")),
                ("kernel.scale", Some("1")),
                ("kernel.mass", Some("1")),
                ("well.j", Some("0")),
                ("exponent.lo", Some("0.9")),
                ("exponent.hi", Some("0.99")),
                ("exponent.points", Some("8")),
                ("profile.half_width", Some("5")),
                ("profile.resolution", Some("10")),
                ("profile.prefactor", Some("quarter")),
                ("profile.grad_tol", Some("1e-10")),
            ],
        };
        let mut keys: Vec<_> = own.to_vec();
        if matches!(self, Experiment::Minimize | Experiment::Gamma) {
            keys.extend_from_slice(NONLOCAL_KEYS);
            keys.extend_from_slice(MINIMIZE_KEYS);
        }
        keys.push(("seed", Some("0")));
        keys
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eos" => Experiment::Eos,
            "envelope" => Experiment::Envelope,
            "minimize" => Experiment::Minimize,
            "gamma" => Experiment::Gamma,
            "elastic-check" => Experiment::ElasticCheck,
            "exponent" => Experiment::Exponent,
            _ => return Err(Error::Config(format!("unknown experiment '{s}'"))),
        })
    }
}

/// Config restricted to one experiment's keys, with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    values: BTreeMap<String, String>,
}

impl Resolved {
    pub fn new(exp: Experiment, raw: &Config) -> Result<Self> {
        let keys = exp.keys();
        if let Some(k) = raw
            .values
            .keys()
            .find(|k| !keys.iter().any(|(name, _)| name == k))
        {
            return Err(Error::Config(format!(
                "unknown key '{k}' for {}",
                exp.name()
            )));
        }
        let mut values = BTreeMap::new();
        for (k, default) in keys {
            let v = match (raw.get(k), default) {
                (Some(v), _) => v.to_string(),
                (None, Some(d)) => d.to_string(),
                (None, None) => return Err(Error::Config(format!("missing required key '{k}'"))),
            };
            values.insert(k.to_string(), v);
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        Error::Config(format!(
            "key '{key}': expected {what}, got '{}'",
            self.raw(key)
        ))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.bad(key, "a finite number"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)
            .parse()
            .map_err(|_| self.bad(key, "a nonnegative integer"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)
            .parse()
            .map_err(|_| self.bad(key, "a nonnegative integer"))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let out: Option<Vec<f64>> = self
            .raw(key)
            .split(',')
            .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        out.filter(|v| !v.is_empty())
            .ok_or_else(|| self.bad(key, "a comma-separated list of numbers"))
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let out: Option<Vec<usize>> = self
            .raw(key)
            .split(',')
            .map(|t| t.trim().parse().ok())
            .collect();
        out.filter(|v| !v.is_empty())
            .ok_or_else(|| self.bad(key, "a comma-separated list of integers"))
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key)
    }

    pub fn to_json(&self) -> Value {
        Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect(),
        )
    }

    fn family(&self) -> Result<KernelFamily> {
        self.str("kernel.family")
            .parse()
            .map_err(|_| self.bad("kernel.family", "box, gaussian, exponential or constant"))
    }

    fn kernel(&self) -> Result<ShortRangeKernel> {
        ShortRangeKernel::new(
            self.family()?,
            self.f64("kernel.scale")?,
            self.f64("kernel.mass")?,
        )
        .map_err(|e| Error::Config(format!("kernel: {e}")))
    }

    fn grid(&self) -> Result<usize> {
        let n = self.usize("grid.n")?;
        if n < 4 {
            return Err(self.bad("grid.n", "at least 4 cells"));
        }
        Ok(n)
    }

    fn minimize_options(&self) -> Result<MinimizeOptions> {
        let o = MinimizeOptions {
            initial_step: self.f64("minimize.initial_step")?,
            backtrack: self.f64("minimize.backtrack")?,
            grad_tol: self.f64("minimize.grad_tol")?,
            max_iter: self.usize("minimize.max_iter")?,
            box_margin: self.f64("minimize.box_margin")?,
            seed: self.u64("seed")?,
        };
        o.validate()
            .map_err(|e| Error::Config(format!("minimize options: {e}")))?;
        Ok(o)
    }

    fn eps_list(&self) -> Result<Vec<f64>> {
        let eps = self.f64_list("kernel.eps")?;
        if eps.iter().any(|&e| !(e > 0.0)) {
            return Err(self.bad("kernel.eps", "positive values"));
        }
        Ok(eps)
    }

    fn use_green(&self) -> Result<bool> {
        match self.str("kernel.long") {
            "green" => Ok(true),
            "none" => Ok(false),
            _ => Err(self.bad("kernel.long", "green or none")),
        }
    }
}

/// Runs one experiment, writing its artifacts under `out`. Returns the
/// written paths in creation order.
pub fn run(exp: Experiment, raw: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let cfg = Resolved::new(exp, raw)?;
    fs::create_dir_all(out)?;
    let mut w = Writer {
        out: out.to_path_buf(),
        written: Vec::new(),
    };
    match exp {
        Experiment::Eos => run_eos(&cfg, &mut w)?,
        Experiment::Envelope => run_envelope(&cfg, &mut w)?,
        Experiment::Minimize => run_minimize(&cfg, &mut w)?,
        Experiment::Gamma => run_gamma(&cfg, &mut w)?,
        Experiment::ElasticCheck => run_elastic_check(&cfg, &mut w)?,
        Experiment::Exponent => run_exponent(&cfg, &mut w)?,
    }
    Ok(w.written)
}

/// Process exit code for an error: 2 for configuration and parameter
/// problems, 3 for numerical domain failures, 1 for I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Input(_) | Error::Shape { .. } => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

struct Writer {
    out: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn file(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, rel: &str, v: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.file(rel, &text)
    }
}

fn csv(header: &str, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn run_eos(cfg: &Resolved, w: &mut Writer) -> Result<()> {
    let p = EosParams::new(cfg.f64("eos.a")?, cfg.f64("eos.b")?, cfg.f64("eos.r")?)
        .map_err(|e| Error::Config(format!("eos.a/eos.b/eos.r: {e}")))?;
    let temps = cfg.f64_list("eos.temperatures")?;
    let v_max = cfg.f64("eos.v_max")?;
    let points = cfg.usize("eos.points")?;
    if !(v_max > 1.25 * p.b) {
        return Err(cfg.bad("eos.v_max", "a volume above 1.25 b"));
    }
    if points < 2 {
        return Err(cfg.bad("eos.points", "at least 2"));
    }
    let crit = critical_point(&p)?;
    let v_min = 1.25 * p.b;
    let volumes: Vec<f64> = (0..points)
        .map(|i| v_min + (v_max - v_min) * i as f64 / (points - 1) as f64)
        .collect();
    let mut iso_rows = Vec::new();
    let mut series = Vec::new();
    for &t in &temps {
        let mut pts = Vec::with_capacity(points);
        for &v in &volumes {
            let pr = vdw_pressure(v, t, &p)?;
            iso_rows.push(vec![t.to_string(), v.to_string(), pr.to_string()]);
            pts.push((v, pr));
        }
        series.push(Series {
            name: format!("T = {t}"),
            points: pts,
            markers: false,
        });
    }
    let mut coex_rows = Vec::new();
    let mut records = Vec::new();
    let mut tie = Vec::new();
    for &t in &temps {
        match maxwell_construction(t, &p) {
            Ok(c) => {
                coex_rows.push(vec![
                    t.to_string(),
                    c.v1.to_string(),
                    c.v2.to_string(),
                    c.p_star.to_string(),
                ]);
                records.push(json!({"t": t, "v1": c.v1, "v2": c.v2, "p_star": c.p_star, "equal_area_residual": c.equal_area_residual(&p)}));
                tie.push((c.v1, c.p_star));
                tie.push((c.v2, c.p_star));
            }
            Err(Error::NoCoexistence { .. }) => {
                coex_rows.push(vec![
                    t.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                records.push(json!({"t": t, "supercritical": true}));
            }
            Err(e) => return Err(e),
        }
    }
    if !tie.is_empty() {
        series.push(Series {
            name: "coexistence".into(),
            points: tie,
            markers: true,
        });
    }
    w.file("isotherms.csv", &csv("T,V,P", iso_rows.into_iter()))?;
    w.file(
        "coexistence.csv",
        &csv("T,V1,V2,Pstar", coex_rows.into_iter()),
    )?;
    let chart = Chart {
        title: "van der Waals isotherms".into(),
        x_label: "V".into(),
        y_label: "P".into(),
        series,
    };
    w.file("isotherms.svg", &chart.render())?;
    w.json(
        "eos.json",
        &json!({"config": cfg.to_json(), "critical": {"v": crit.v, "t": crit.t, "p": crit.p}, "coexistence": records}),
    )
}

fn run_envelope(cfg: &Resolved, w: &mut Writer) -> Result<()> {
    let temps = cfg.f64_list("envelope.temperatures")?;
    let opts = EnvelopeOptions {
        points: cfg.usize("envelope.points")?,
        box_margin: cfg.f64("envelope.margin")?,
    };
    let samples = cfg.usize("envelope.samples")?;
    if samples < 2 {
        return Err(cfg.bad("envelope.samples", "at least 2"));
    }
    let tables: Vec<Result<EnvelopeTable>> = temps
        .par_iter()
        .map(|&kt| EnvelopeTable::for_mixing(kt, &opts))
        .collect();
    let mut rows = Vec::new();
    let mut flat_rows = Vec::new();
    let mut records = Vec::new();
    let mut series = Vec::new();
    let lim = 1.0 - opts.box_margin;
    for (&kt, t) in temps.iter().zip(tables) {
        let t = t?;
        let mut g_pts = Vec::new();
        let mut s_pts = Vec::new();
        for i in 0..samples {
            let u = -lim + 2.0 * lim * i as f64 / (samples - 1) as f64;
            let g = crate::wells::eval_big_g(u, kt)?;
            let gs = t.value(u)?;
            rows.push(vec![
                kt.to_string(),
                u.to_string(),
                g.to_string(),
                gs.to_string(),
            ]);
            g_pts.push((u, g));
            s_pts.push((u, gs));
        }
        series.push(Series {
            name: format!("G, kT = {kt}"),
            points: g_pts,
            markers: false,
        });
        series.push(Series {
            name: format!("G*, kT = {kt}"),
            points: s_pts,
            markers: false,
        });
        match t.flat_interval() {
            Some(f) => {
                flat_rows.push(vec![
                    kt.to_string(),
                    f.lower.to_string(),
                    f.upper.to_string(),
                    f.v_star.to_string(),
                ]);
                records.push(
                    json!({"kt": kt, "lower": f.lower, "upper": f.upper, "v_star": f.v_star}),
                );
            }
            None => {
                flat_rows.push(vec![
                    kt.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                records.push(json!({"kt": kt, "lower": null, "upper": null, "v_star": null}));
            }
        }
    }
    w.file("envelope.csv", &csv("kT,u,G,Gstar", rows.into_iter()))?;
    w.file(
        "flat.csv",
        &csv("kT,lower,upper,v_star", flat_rows.into_iter()),
    )?;
    let chart = Chart {
        title: "mixing free energy and its convex envelope".into(),
        x_label: "u".into(),
        y_label: "G".into(),
        series,
    };
    w.file("envelope.svg", &chart.render())?;
    w.json(
        "envelope.json",
        &json!({"config": cfg.to_json(), "flat_intervals": records}),
    )
}

fn long_range(cfg: &Resolved, n: usize) -> Result<Option<KernelMatrix>> {
    Ok(if cfg.use_green()? {
        Some(neumann_green(n)?)
    } else {
        None
    })
}

fn field_csv(u: &Field) -> String {
    csv(
        "x,u",
        (0..u.n()).map(|i| vec![u.x(i).to_string(), u.values()[i].to_string()]),
    )
}

fn field_chart(u: &Field, title: String) -> String {
    Chart {
        title,
        x_label: "x".into(),
        y_label: "u".into(),
        series: vec![Series {
            name: "u".into(),
            points: (0..u.n()).map(|i| (u.x(i), u.values()[i])).collect(),
            markers: false,
        }],
    }
    .render()
}

fn run_minimize(cfg: &Resolved, w: &mut Writer) -> Result<()> {
    let n = cfg.grid()?;
    let short = cfg.kernel()?;
    let eps_list = cfg.eps_list()?;
    let kt = cfg.f64("well.kt")?;
    let m = cfg.f64("mass")?;
    let opts = cfg.minimize_options()?;
    let k = cfg.usize("init.jumps")?;
    let noise = cfg.f64("init.perturbation")?;
    let level = cfg.f64("census.level")?;
    let samples = cfg.usize("criterion.samples")?;
    if samples == 0 {
        return Err(cfg.bad("criterion.samples", "a positive integer"));
    }
    if !(m.abs() < 1.0) {
        return Err(cfg.bad("mass", "a value strictly inside (-1, 1)"));
    }
    let long = long_range(cfg, n)?;
    let amp = short
        .line_mass()
        .and_then(|j| WellParams::new(j, kt).ok())
        .and_then(|p| p.well_point())
        .unwrap_or(0.5)
        .min(1.0 - opts.box_margin);
    let table = EnvelopeTable::for_mixing(kt, &EnvelopeOptions::default())?;
    let outcomes: Vec<Result<(f64, Field, Value)>> = eps_list
        .par_iter()
        .map(|&eps| {
            let js = build_short(&short, eps, n)?;
            let j = match &long {
                Some(l) => build_balanced(&js, l, eps)?,
                None => js,
            };
            let mut init = if k == 0 {
                Field::constant(n, m)?
            } else {
                mollify(&equal_segments(k, -1, m)?, eps, amp, n)?
            };
            if noise > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let v: Vec<f64> = init.values().iter().map(|&u| (u + noise * rng.gen_range(-1.0..1.0)).clamp(-amp, amp)).collect();
                init = Field::new(v)?;
            }
            let r = local_minimize(&init, &j, kt, m, &opts)?;
            let census = detect_jumps(&r.field, level)?;
            let xs: Vec<f64> = (0..samples).map(|i| (i as f64 + 0.5) / samples as f64).collect();
            let cs: Vec<f64> = xs.iter().map(|&x| criterion_c(&j, kt, &r.field, x)).collect::<Result<_>>()?;
            let gap = match gap_avoidance_check(&r.field, &table, &census) {
                Ok(g) => json!(g),
                Err(Error::NotApplicable(_)) => Value::Null,
                Err(e) => return Err(e),
            };
            let rec = json!({
                "config": cfg.to_json(),
                "eps": eps,
                "energy": r.energy,
                "iterations": r.iterations,
                "converged": r.converged,
                "pg_norm": r.pg_norm,
                "mass": r.field.mass(),
                "census": {"count": census.count, "locations": census.locations, "widths": census.widths},
                "criterion_c": {"x0": xs, "values": cs, "all_positive": cs.iter().all(|&c| c > 0.0)},
                "gap_avoidance": gap,
            });
            Ok((eps, r.field, rec))
        })
        .collect();
    for o in outcomes {
        let (eps, field, rec) = o?;
        let dir = format!("eps_{eps}");
        w.file(&format!("{dir}/field.csv"), &field_csv(&field))?;
        w.json(&format!("{dir}/result.json"), &rec)?;
        w.file(
            &format!("{dir}/field.svg"),
            &field_chart(&field, format!("local minimizer, eps = {eps}")),
        )?;
    }
    Ok(())
}

fn run_gamma(cfg: &Resolved, w: &mut Writer) -> Result<()> {
    let n = cfg.grid()?;
    let short = cfg.kernel()?;
    let eps_list = cfg.eps_list()?;
    let kt = cfg.f64("well.kt")?;
    let m = cfg.f64("mass")?;
    let k = cfg.usize("gamma.k")?;
    let opts = cfg.minimize_options()?;
    if !cfg.use_green()? {
        return Err(cfg.bad("kernel.long", "green for the sharp-interface limit"));
    }
    let green = neumann_green(n)?;
    let costs = interface_costs(
        &short,
        kt,
        cfg.f64("profile.half_width")?,
        cfg.f64("profile.resolution")?,
    )?;
    let (config, _) = optimize_jump_positions(k, costs.quarter, LongRange::Green, m)?;
    let outcomes: Vec<_> = eps_list
        .par_iter()
        .map(|&eps| continuation(&config, eps, &short, &green, kt, &costs, &opts))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = outcomes.clone();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let chosen = select_prefactor(&sorted);
    let records: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "eps": o.eps,
                "converged": o.result.converged,
                "iterations": o.result.iterations,
                "census_count": o.result.census.count,
                "widths": o.result.census.widths,
                "distance": o.distance,
                "reference_energy": o.reference,
                "scaled_energy": o.scaled_energy,
                "gap_quarter": o.gap(Prefactor::Quarter),
                "gap_unit": o.gap(Prefactor::Unit),
                "failure": o.failure,
            })
        })
        .collect();
    for o in &outcomes {
        w.file(
            &format!("eps_{}/field.csv", o.eps),
            &field_csv(&o.result.field),
        )?;
    }
    let chart = Chart {
        title: "continued minimizers".into(),
        x_label: "x".into(),
        y_label: "u".into(),
        series: outcomes
            .iter()
            .map(|o| Series {
                name: format!("eps = {}", o.eps),
                points: (0..n)
                    .map(|i| (o.result.field.x(i), o.result.field.values()[i]))
                    .collect(),
                markers: false,
            })
            .collect(),
    };
    w.file("continuation.svg", &chart.render())?;
    w.json(
        "gamma.json",
        &json!({
            "config": cfg.to_json(),
            "k": k,
            "jumps": config.jumps(),
            "start_sign": config.start_sign(),
            "c0": {"quarter": costs.quarter, "unit": costs.unit},
            "well": costs.well,
            "limit": {
                "quarter": crate::energy::energy_i0_green(&config, costs.quarter),
                "unit": crate::energy::energy_i0_green(&config, costs.unit),
            },
            "continuation": records,
            "prefactor": chosen.map(Prefactor::name),
        }),
    )
}

/// Smooth displacement `Σ a_k sin(kπx)` with seeded amplitudes.
fn smooth_displacement(rng: &mut ChaCha8Rng, modes: usize, amplitude: f64) -> Vec<f64> {
    (1..=modes)
        .map(|k| rng.gen_range(-amplitude..amplitude) / k as f64)
        .collect()
}

fn run_elastic_check(cfg: &Resolved, w: &mut Writer) -> Result<()> {
    let grids = cfg.usize_list("elastic.grids")?;
    if grids.iter().any(|&n| n < 4) {
        return Err(cfg.bad("elastic.grids", "grid sizes of at least 4"));
    }
    let eps = cfg.f64("elastic.eps")?;
    let count = cfg.usize("elastic.fields")?;
    let modes = cfg.usize("elastic.modes")?;
    let amplitude = cfg.f64("elastic.amplitude")?;
    if modes == 0 || !(amplitude > 0.0) {
        return Err(cfg.bad("elastic.modes", "positive modes and amplitude"));
    }
    let p = WellParams::new(cfg.f64("well.j")?, cfg.f64("well.kt")?)
        .map_err(|e| Error::Config(format!("well: {e}")))?;
    let m = cfg.f64("mass")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.u64("seed")?);
    let coeffs: Vec<Vec<f64>> = (0..count)
        .map(|_| smooth_displacement(&mut rng, modes, amplitude))
        .collect();
    let greens: Vec<KernelMatrix> = grids
        .iter()
        .map(|&n| neumann_green(n))
        .collect::<Result<_>>()?;
    let rows: Vec<Result<Value>> = coeffs
        .par_iter()
        .enumerate()
        .map(|(idx, a)| {
            let f = |x: f64| {
                a.iter()
                    .enumerate()
                    .map(|(k, ak)| ak * ((k + 1) as f64 * std::f64::consts::PI * x).sin())
                    .sum::<f64>()
            };
            let mut table = Vec::new();
            let mut gaps = Vec::new();
            for (&n, g) in grids.iter().zip(&greens) {
                let wf = NodalField::from_fn(n, f)?;
                let el = elastic_energy(&wf, eps, &p)?;
                let (_, nl) = elastic_to_nonlocal_with(&wf, eps, &p, m, g)?;
                let gap = ((el - nl) / el).abs();
                gaps.push(gap);
                table.push(json!({"n": n, "elastic": el, "nonlocal": nl, "relative_gap": gap}));
            }
            let ratios: Vec<f64> = gaps.windows(2).map(|g| g[0] / g[1]).collect();
            Ok(json!({"field": idx, "coefficients": a, "grids": table, "ratios": ratios}))
        })
        .collect();
    let rows: Vec<Value> = rows.into_iter().collect::<Result<_>>()?;
    w.json(
        "elastic.json",
        &json!({"config": cfg.to_json(), "fields": rows}),
    )
}

fn run_exponent(cfg: &Resolved, w: &mut Writer) -> Result<()> {
    let kernel = cfg.kernel()?;
    let well = WellParams::new(cfg.f64("well.j")?, 0.0)
        .map_err(|e| Error::Config(format!("well: {e}")))?;
    let count = cfg.usize("exponent.points")?;
    if count < 2 {
        return Err(cfg.bad("exponent.points", "at least 2"));
    }
    let kts = kt_grid(
        well.critical_kt(),
        cfg.f64("exponent.lo")?,
        cfg.f64("exponent.hi")?,
        count,
    );
    let mut pp = ProfileProblem::new(
        cfg.f64("profile.half_width")?,
        cfg.f64("profile.resolution")?,
        kernel,
        well,
    );
    pp.prefactor = match cfg.str("profile.prefactor") {
        "quarter" => Prefactor::Quarter,
        "unit" => Prefactor::Unit,
        _ => return Err(cfg.bad("profile.prefactor", "quarter or unit")),
    };
    pp.grad_tol = cfg.f64("profile.grad_tol")?;
    let fit = exponent_fit(kernel.family, &kts, &pp)?;
    let pts: Vec<(f64, f64)> = fit
        .points
        .iter()
        .map(|&(kt, c)| ((fit.kt_c - kt).ln(), c.ln()))
        .collect();
    let line: Vec<(f64, f64)> = [pts[0].0, pts[pts.len() - 1].0]
        .iter()
        .map(|&x| (x, fit.intercept + fit.mu * x))
        .collect();
    let mut title = String::new();
    let _ = write!(
        title,
        "{} kernel: mu = {:.3}, R2 = {:.5}",
        kernel.family.name(),
        fit.mu,
        fit.r_squared
    );
    let chart = Chart {
        title,
        x_label: "ln(kT_c - kT)".into(),
        y_label: "ln c0".into(),
        series: vec![
            Series {
                name: "c0".into(),
                points: pts,
                markers: true,
            },
            Series {
                name: "fit".into(),
                points: line,
                markers: false,
            },
        ],
    };
    w.file("loglog.svg", &chart.render())?;
    w.json(
        "exponent.json",
        &json!({
            "config": cfg.to_json(),
            "mu": fit.mu,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "accepted": fit.accepted,
            "kt_c": fit.kt_c,
            "points": fit.points.iter().map(|&(kt, c0)| json!({"kt": kt, "c0": c0})).collect::<Vec<_>>(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_resolve() {
        let c = Config::parse("# comment\n eos.a = 3 \neos.b=0.3333333333333333\neos.r = 2.6666666666666665 # trailing\n").unwrap();
        let r = Resolved::new(Experiment::Eos, &c).unwrap();
        assert_eq!(r.f64("eos.a").unwrap(), 3.0);
        assert_eq!(
            r.f64_list("eos.temperatures").unwrap(),
            vec![0.85, 0.9, 0.95]
        );
        assert_eq!(r.str("seed"), "0");
    }

    #[test]
    fn config_errors_name_the_key() {
        let c = Config::parse("eos.b = 1\neos.r = 1").unwrap();
        let e = Resolved::new(Experiment::Eos, &c).unwrap_err();
        assert!(e.to_string().contains("eos.a"));
        let c = Config::parse("eos.a=1\neos.b=1\neos.r=1\nbogus=2").unwrap();
        assert!(Resolved::new(Experiment::Eos, &c)
            .unwrap_err()
            .to_string()
            .contains("bogus"));
        assert!(Config::parse("x = 1\nx = 2").is_err());
        assert!(Config::parse("novalue").is_err());
        let mut c = Config::default();
        c.set("grid.n", "abc");
        let r = Resolved::new(Experiment::Minimize, &c).unwrap();
        assert!(r.grid().unwrap_err().to_string().contains("grid.n"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Parameter("x".into())), 2);
        assert_eq!(exit_code(&Error::Domain("x".into())), 3);
        assert_eq!(exit_code(&Error::NoInterface { kt: 1.0, kt_c: 0.5 }), 3);
    }
}
