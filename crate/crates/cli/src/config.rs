//! Experiment configuration: a flat INI file plus `DUALGRID_` environment
//! overrides.
//!
//! ```ini
//! [experiment]
//! name = p2-feeder4
//! kind = p2                 ; toy | p1 | p2 | p3
//! long_running = false
//!
//! [data]
//! cases = fixture:feeder4   ; fixture:<name> or a path relative to this file
//! grouping = singleton      ; singleton | whole | 1,2;3,4 (bus ids per cell)
//!
//! [tie.1]                   ; p1 only, one section per tie line
//! from = a:3
//! to = b:1
//!
//! [algorithm]
//! method = ddsa             ; ddsa | classic | classic-avg
//! eta0 = 100
//! horizons = 100, 1000, 10000, 100000
//!
//! [tracking]
//! change_points = 3
//! eta = 0.1
//!
//! [output]
//! dir = out/p2
//! ```
//!
//! Any `[section] key` outside the tie sections can be overridden with
//! `DUALGRID_<SECTION>__<KEY>` (upper case), e.g. `DUALGRID_ALGORITHM__ETA0`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dualgrid_core::ddsa::RecordSchedule;
use dualgrid_grid::stitch::{DEFAULT_TIE_CAPACITY_MW, DEFAULT_TIE_REACTANCE};
use ini::Ini;
use thiserror::Error;

pub const ENV_PREFIX: &str = "DUALGRID_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("[{section}] {key}: {reason}")]
    Value {
        section: String,
        key: String,
        reason: String,
    },
    #[error("[{section}] {key} is required")]
    Missing { section: String, key: String },
    #[error("unknown key [{section}] {key}")]
    Unknown { section: String, key: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Toy,
    P1,
    P2,
    P3,
}

impl ProblemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemKind::Toy => "toy",
            ProblemKind::P1 => "p1",
            ProblemKind::P2 => "p2",
            ProblemKind::P3 => "p3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ddsa,
    Classic,
    ClassicAvg,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ddsa => "ddsa",
            Method::Classic => "classic",
            Method::ClassicAvg => "classic-avg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    Singleton,
    Whole,
    /// Bus ids per cell.
    Cells(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphChoice {
    /// Per-kind default: complete for toy and p1, the feeder tree
    /// contracted to cells for p2, the star for p3.
    Auto,
    Complete,
    Path,
    Star,
    /// `0-1, 1-2`, zero-based agent indices.
    Edges(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieConfig {
    pub area_a: String,
    pub bus_a: usize,
    pub area_b: String,
    pub bus_b: usize,
    pub reactance: f64,
    pub reactance_base_mva: f64,
    pub capacity_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingConfig {
    pub change_points: usize,
    /// Fixed step used in every segment.
    pub eta: f64,
    pub segment_horizon: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ProblemKind,
    pub long_running: bool,
    /// Case references; for p1 one per area, for p3 the transmission case.
    pub cases: Vec<String>,
    pub feeders: Vec<String>,
    pub areas: Vec<String>,
    pub ties: Vec<TieConfig>,
    pub base_mva: Option<f64>,
    pub internal_capacity_mw: Option<f64>,
    pub cleanup_boundary: bool,
    pub perturb_costs: bool,
    pub grouping: Grouping,
    pub der_disc: bool,
    pub method: Method,
    pub eta0: f64,
    /// Overrides `η₀/√T` with a constant step.
    pub eta: Option<f64>,
    pub horizons: Vec<usize>,
    pub seed: u64,
    pub record: RecordSchedule,
    pub threads: usize,
    pub graph: GraphChoice,
    pub evaluate_dual: bool,
    pub accept_tol: f64,
    pub oracle: bool,
    pub tracking: Option<TrackingConfig>,
    pub out_dir: PathBuf,
    /// Directory that relative case paths are resolved against.
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, kind: ProblemKind) -> Self {
        Self {
            name: name.into(),
            kind,
            long_running: false,
            cases: Vec::new(),
            feeders: Vec::new(),
            areas: Vec::new(),
            ties: Vec::new(),
            base_mva: None,
            internal_capacity_mw: Some(100.0),
            cleanup_boundary: true,
            perturb_costs: false,
            grouping: Grouping::Singleton,
            der_disc: false,
            method: Method::Ddsa,
            eta0: 1.0,
            eta: None,
            horizons: vec![1000],
            seed: 0,
            record: RecordSchedule::default(),
            threads: 1,
            graph: GraphChoice::Auto,
            evaluate_dual: true,
            accept_tol: 1e-6,
            oracle: true,
            tracking: None,
            out_dir: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(ConfigError::Invalid("every horizon must be at least 1".into()));
        }
        if !(self.eta0 > 0.0) {
            return Err(ConfigError::Invalid("eta0 must be positive".into()));
        }
        if self.eta.is_some_and(|e| !(e > 0.0)) {
            return Err(ConfigError::Invalid("eta must be positive".into()));
        }
        match self.kind {
            ProblemKind::Toy => {}
            ProblemKind::P1 => {
                if self.cases.len() != self.areas.len() || self.cases.is_empty() {
                    return Err(ConfigError::Invalid("p1 needs one area name per case".into()));
                }
            }
            ProblemKind::P2 => {
                if self.cases.len() != 1 {
                    return Err(ConfigError::Invalid("p2 needs exactly one feeder case".into()));
                }
            }
            ProblemKind::P3 => {
                if self.cases.len() != 1 || self.feeders.is_empty() {
                    return Err(ConfigError::Invalid("p3 needs one transmission case and its feeders".into()));
                }
            }
        }
        if let Some(t) = &self.tracking {
            if self.kind != ProblemKind::P2 {
                return Err(ConfigError::Invalid("tracking runs are defined for p2 only".into()));
            }
            if t.change_points > dualgrid_grid::random::CHANGE_POINTS.len() {
                return Err(ConfigError::Invalid(format!(
                    "at most {} change points are defined",
                    dualgrid_grid::random::CHANGE_POINTS.len()
                )));
            }
            if !(t.eta > 0.0) || t.segment_horizon == 0 {
                return Err(ConfigError::Invalid("tracking needs a positive eta and segment horizon".into()));
            }
        }
        for c in self.cases.iter().chain(&self.feeders) {
            if !c.starts_with("fixture:") && !self.base_dir.join(c).exists() {
                return Err(ConfigError::Invalid(format!("case file {c} does not exist")));
            }
        }
        Ok(())
    }

    /// Reads a file; relative case paths resolve against its directory.
    pub fn load(path: &Path, env: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, env)?;
        if let Some(dir) = path.parent() {
            cfg.base_dir = dir.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text, then applies the environment overrides.
    pub fn parse(text: &str, env: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut flat: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut ties: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (sec, props) in ini.iter() {
            let sec = sec.unwrap_or("").to_ascii_lowercase();
            for (k, v) in props.iter() {
                let k = k.to_ascii_lowercase();
                if let Some(id) = sec.strip_prefix("tie.") {
                    ties.entry(id.to_string()).or_default().insert(k, v.trim().to_string());
                } else {
                    flat.insert((sec.clone(), k), v.trim().to_string());
                }
            }
        }
        for (k, v) in env {
            let Some(rest) = k.strip_prefix(ENV_PREFIX) else { continue };
            let Some((sec, key)) = rest.split_once("__") else { continue };
            flat.insert((sec.to_ascii_lowercase(), key.to_ascii_lowercase()), v.clone());
        }
        let mut r = Reader { flat };
        let kind = match r.take("experiment", "kind").as_deref() {
            Some("toy") => ProblemKind::Toy,
            Some("p1") => ProblemKind::P1,
            Some("p2") => ProblemKind::P2,
            Some("p3") => ProblemKind::P3,
            Some(other) => return Err(r.bad("experiment", "kind", format!("unknown kind {other:?}"))),
            None => return Err(missing("experiment", "kind")),
        };
        let mut c = Self::new(r.take("experiment", "name").unwrap_or_else(|| kind.as_str().into()), kind);
        if let Some(v) = r.parse::<bool>("experiment", "long_running")? {
            c.long_running = v;
        }
        c.cases = r.list("data", "cases");
        c.feeders = r.list("data", "feeders");
        c.areas = r.list("data", "areas");
        c.base_mva = r.parse("data", "base_mva")?;
        if let Some(v) = r.take("data", "internal_capacity_mw") {
            c.internal_capacity_mw = match v.as_str() {
                "keep" => None,
                s => Some(s.parse().map_err(|_| r.bad("data", "internal_capacity_mw", format!("not a number: {s}")))?),
            };
        }
        if let Some(v) = r.parse("data", "cleanup_boundary")? {
            c.cleanup_boundary = v;
        }
        if let Some(v) = r.parse("data", "perturb_costs")? {
            c.perturb_costs = v;
        }
        if let Some(v) = r.parse("data", "der_disc")? {
            c.der_disc = v;
        }
        if let Some(g) = r.take("data", "grouping") {
            c.grouping = parse_grouping(&g).map_err(|reason| r.bad("data", "grouping", reason))?;
        }
        if let Some(m) = r.take("algorithm", "method") {
            c.method = match m.as_str() {
                "ddsa" => Method::Ddsa,
                "classic" => Method::Classic,
                "classic-avg" => Method::ClassicAvg,
                other => return Err(r.bad("algorithm", "method", format!("unknown method {other:?}"))),
            };
        }
        if let Some(v) = r.parse("algorithm", "eta0")? {
            c.eta0 = v;
        }
        c.eta = r.parse("algorithm", "eta")?;
        let hz = r.list("algorithm", "horizons");
        if !hz.is_empty() {
            c.horizons = hz
                .iter()
                .map(|h| parse_count(h).ok_or_else(|| r.bad("algorithm", "horizons", format!("not a count: {h}"))))
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = r.parse("algorithm", "seed")? {
            c.seed = v;
        }
        if let Some(v) = r.take("algorithm", "record") {
            c.record = parse_record(&v).map_err(|reason| r.bad("algorithm", "record", reason))?;
        }
        if let Some(v) = r.parse("algorithm", "threads")? {
            c.threads = v;
        }
        if let Some(v) = r.take("algorithm", "graph") {
            c.graph = parse_graph(&v).map_err(|reason| r.bad("algorithm", "graph", reason))?;
        }
        if let Some(v) = r.parse("algorithm", "evaluate_dual")? {
            c.evaluate_dual = v;
        }
        if let Some(v) = r.parse("algorithm", "accept_tol")? {
            c.accept_tol = v;
        }
        if let Some(v) = r.parse("algorithm", "oracle")? {
            c.oracle = v;
        }
        let cps: Option<usize> = r.parse("tracking", "change_points")?;
        let eta: Option<f64> = r.parse("tracking", "eta")?;
        let seg = r.take("tracking", "segment_horizon");
        let thr: Option<f64> = r.parse("tracking", "threshold")?;
        if cps.is_some() || eta.is_some() || seg.is_some() || thr.is_some() {
            c.tracking = Some(TrackingConfig {
                change_points: cps.unwrap_or(3),
                eta: eta.unwrap_or(0.1),
                segment_horizon: match seg {
                    Some(s) => parse_count(&s).ok_or_else(|| r.bad("tracking", "segment_horizon", format!("not a count: {s}")))?,
                    None => 100_000,
                },
                threshold: thr.unwrap_or(5e-2),
            });
        }
        if let Some(d) = r.take("output", "dir") {
            c.out_dir = PathBuf::from(d);
        }
        for (id, mut t) in ties {
            let sec = format!("tie.{id}");
            let mut end = |key: &str| -> Result<(String, usize), ConfigError> {
                let v = t.remove(key).ok_or_else(|| missing(&sec, key))?;
                let (a, b) = v.split_once(':').ok_or_else(|| value_err(&sec, key, "expected area:bus".into()))?;
                let bus = b
                    .trim()
                    .parse()
                    .map_err(|_| value_err(&sec, key, format!("bad bus id {b:?}")))?;
                Ok((a.trim().to_string(), bus))
            };
            let (area_a, bus_a) = end("from")?;
            let (area_b, bus_b) = end("to")?;
            let mut num = |key: &str, default: f64| -> Result<f64, ConfigError> {
                match t.remove(key) {
                    Some(v) => v.parse().map_err(|_| value_err(&sec, key, format!("not a number: {v}"))),
                    None => Ok(default),
                }
            };
            let tie = TieConfig {
                area_a,
                bus_a,
                area_b,
                bus_b,
                reactance: num("reactance", DEFAULT_TIE_REACTANCE)?,
                reactance_base_mva: num("reactance_base_mva", 100.0)?,
                capacity_mw: num("capacity_mw", DEFAULT_TIE_CAPACITY_MW)?,
            };
            if let Some(k) = t.keys().next() {
                return Err(ConfigError::Unknown {
                    section: sec,
                    key: k.clone(),
                });
            }
            c.ties.push(tie);
        }
        if let Some(((s, k), _)) = r.flat.into_iter().next() {
            return Err(ConfigError::Unknown { section: s, key: k });
        }
        Ok(c)
    }

    /// The resolved configuration as INI text; parsing it back gives the
    /// same configuration.
    pub fn to_ini(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("experiment"))
            .set("name", &self.name)
            .set("kind", self.kind.as_str())
            .set("long_running", self.long_running.to_string());
        {
            let mut s = ini.with_section(Some("data"));
            if !self.cases.is_empty() {
                s.set("cases", self.cases.join(", "));
            }
            if !self.feeders.is_empty() {
                s.set("feeders", self.feeders.join(", "));
            }
            if !self.areas.is_empty() {
                s.set("areas", self.areas.join(", "));
            }
            if let Some(b) = self.base_mva {
                s.set("base_mva", fmt_f64(b));
            }
            s.set(
                "internal_capacity_mw",
                self.internal_capacity_mw.map_or("keep".to_string(), fmt_f64),
            )
            .set("cleanup_boundary", self.cleanup_boundary.to_string())
            .set("perturb_costs", self.perturb_costs.to_string())
            .set("der_disc", self.der_disc.to_string())
            .set("grouping", grouping_text(&self.grouping));
        }
        for (i, t) in self.ties.iter().enumerate() {
            ini.with_section(Some(format!("tie.{}", i + 1)))
                .set("from", format!("{}:{}", t.area_a, t.bus_a))
                .set("to", format!("{}:{}", t.area_b, t.bus_b))
                .set("reactance", fmt_f64(t.reactance))
                .set("reactance_base_mva", fmt_f64(t.reactance_base_mva))
                .set("capacity_mw", fmt_f64(t.capacity_mw));
        }
        {
            let mut s = ini.with_section(Some("algorithm"));
            s.set("method", self.method.as_str()).set("eta0", fmt_f64(self.eta0));
            if let Some(e) = self.eta {
                s.set("eta", fmt_f64(e));
            }
            s.set(
                "horizons",
                self.horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", "),
            )
            .set("seed", self.seed.to_string())
            .set("record", record_text(&self.record))
            .set("threads", self.threads.to_string())
            .set("graph", graph_text(&self.graph))
            .set("evaluate_dual", self.evaluate_dual.to_string())
            .set("accept_tol", fmt_f64(self.accept_tol))
            .set("oracle", self.oracle.to_string());
        }
        if let Some(t) = &self.tracking {
            ini.with_section(Some("tracking"))
                .set("change_points", t.change_points.to_string())
                .set("eta", fmt_f64(t.eta))
                .set("segment_horizon", t.segment_horizon.to_string())
                .set("threshold", fmt_f64(t.threshold));
        }
        ini.with_section(Some("output"))
            .set("dir", self.out_dir.display().to_string());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }
}

struct Reader {
    flat: BTreeMap<(String, String), String>,
}

impl Reader {
    fn take(&mut self, sec: &str, key: &str) -> Option<String> {
        self.flat.remove(&(sec.to_string(), key.to_string()))
    }

    fn parse<T: std::str::FromStr>(&mut self, sec: &str, key: &str) -> Result<Option<T>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| self.bad(sec, key, format!("cannot parse {v:?}"))),
        }
    }

    fn list(&mut self, sec: &str, key: &str) -> Vec<String> {
        self.take(sec, key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn bad(&self, sec: &str, key: &str, reason: String) -> ConfigError {
        value_err(sec, key, reason)
    }
}

fn value_err(sec: &str, key: &str, reason: String) -> ConfigError {
    ConfigError::Value {
        section: sec.into(),
        key: key.into(),
        reason,
    }
}

fn missing(sec: &str, key: &str) -> ConfigError {
    ConfigError::Missing {
        section: sec.into(),
        key: key.into(),
    }
}

/// Integer counts, also accepting `1e5`.
fn parse_count(s: &str) -> Option<usize> {
    if let Ok(v) = s.parse::<usize>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < 1e15).then_some(f as usize)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_grouping(s: &str) -> Result<Grouping, String> {
    match s {
        "singleton" => Ok(Grouping::Singleton),
        "whole" => Ok(Grouping::Whole),
        _ => s
            .split(';')
            .map(|cell| {
                cell.split(',')
                    .map(|b| b.trim().parse::<usize>().map_err(|_| format!("bad bus id {b:?}")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Grouping::Cells),
    }
}

fn grouping_text(g: &Grouping) -> String {
    match g {
        Grouping::Singleton => "singleton".into(),
        Grouping::Whole => "whole".into(),
        Grouping::Cells(cells) => cells
            .iter()
            .map(|c| c.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";"),
    }
}

fn parse_record(s: &str) -> Result<RecordSchedule, String> {
    let (kind, arg) = s.split_once(':').ok_or("expected every:<k> or geometric:<ratio>")?;
    match kind.trim() {
        "every" => parse_count(arg.trim())
            .map(RecordSchedule::Every)
            .ok_or_else(|| format!("bad stride {arg:?}")),
        "geometric" => arg
            .trim()
            .parse()
            .map(RecordSchedule::Geometric)
            .map_err(|_| format!("bad ratio {arg:?}")),
        other => Err(format!("unknown schedule {other:?}")),
    }
}

fn record_text(r: &RecordSchedule) -> String {
    match r {
        RecordSchedule::Every(k) => format!("every:{k}"),
        RecordSchedule::Geometric(g) => format!("geometric:{g:?}"),
    }
}

fn parse_graph(s: &str) -> Result<GraphChoice, String> {
    match s {
        "auto" => Ok(GraphChoice::Auto),
        "complete" => Ok(GraphChoice::Complete),
        "path" => Ok(GraphChoice::Path),
        "star" => Ok(GraphChoice::Star),
        _ => s
            .split(',')
            .map(|e| {
                let (a, b) = e.split_once('-').ok_or_else(|| format!("bad edge {e:?}"))?;
                let p = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad edge {e:?}"));
                Ok((p(a)?, p(b)?))
            })
            .collect::<Result<Vec<_>, String>>()
            .map(GraphChoice::Edges),
    }
}

fn graph_text(g: &GraphChoice) -> String {
    match g {
        GraphChoice::Auto => "auto".into(),
        GraphChoice::Complete => "complete".into(),
        GraphChoice::Path => "path".into(),
        GraphChoice::Star => "star".into(),
        GraphChoice::Edges(e) => e.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(", "),
    }
}
