//! Plain `key=value` run configuration with dotted sections.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::cell::Regime;
use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, HoleKind, DEFAULT_VERTEX_BUDGET};
use crate::harness::{Diagnostics, Format, SweepPlan};
use crate::materials::{CoefficientPreset, DensityCase};

pub const KEYS: &[&str] = &[
    "regime",
    "geometry.hole",
    "geometry.hole_extent",
    "geometry.m",
    "geometry.s",
    "sweep.n",
    "coefficients.preset",
    "density.case",
    "counts.k",
    "limit.grid",
    "diagnostics.corrector",
    "diagnostics.factorization",
    "diagnostics.pairing",
    "output.dir",
    "output.formats",
    "budget.vertices",
    "check.seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub regime: Regime,
    pub geometry: CellGeometry,
    pub s: usize,
    pub n_values: Vec<usize>,
    pub coefficients: CoefficientPreset,
    pub density: DensityCase,
    pub count: usize,
    pub limit_grid: usize,
    pub diagnostics: Diagnostics,
    pub output_dir: String,
    pub formats: Vec<Format>,
    pub budget: usize,
    pub seed: u64,
}

fn default_density(regime: Regime) -> DensityCase {
    match regime {
        Regime::MPos => DensityCase::PositiveAvg,
        Regime::MZero => DensityCase::ZeroAvg,
        Regime::MNeg => DensityCase::NegativeAvg,
    }
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
        Format::Svg => "svg",
    }
}

fn hole_name(k: HoleKind) -> &'static str {
    match k {
        HoleKind::None => "none",
        HoleKind::Square => "square",
        HoleKind::Polygon => "polygon",
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_regime(Regime::MPos)
    }
}

impl RunConfig {
    pub fn for_regime(regime: Regime) -> Self {
        let plan = SweepPlan::new(regime, default_density(regime));
        Self {
            regime,
            geometry: plan.geometry,
            s: plan.s,
            n_values: plan.n_values,
            coefficients: plan.coefficients,
            density: plan.density,
            count: plan.count,
            limit_grid: plan.limit_grid,
            diagnostics: plan.diagnostics,
            output_dir: "out".into(),
            formats: vec![Format::Csv, Format::Json, Format::Svg],
            budget: DEFAULT_VERTEX_BUDGET,
            seed: 20240611,
        }
    }

    pub fn plan(&self) -> SweepPlan {
        SweepPlan {
            regime: self.regime,
            geometry: self.geometry.clone(),
            s: self.s,
            n_values: self.n_values.clone(),
            coefficients: self.coefficients,
            density: self.density,
            limit_grid: self.limit_grid,
            count: self.count,
            diagnostics: self.diagnostics,
            budget: self.budget,
        }
    }

    /// Every key with its value; `parse_config` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("regime", self.regime.name().into());
        put("geometry.hole", hole_name(self.geometry.hole_kind).into());
        if self.geometry.hole_kind == HoleKind::Polygon {
            put("geometry.hole_extent", join(&self.geometry.hole_extent));
        }
        put("geometry.m", self.geometry.resolution.to_string());
        put("geometry.s", self.s.to_string());
        put("sweep.n", join(&self.n_values));
        put("coefficients.preset", self.coefficients.name().into());
        put("density.case", self.density.name().into());
        put("counts.k", self.count.to_string());
        put("limit.grid", self.limit_grid.to_string());
        put("diagnostics.corrector", self.diagnostics.corrector_energy.to_string());
        put("diagnostics.factorization", self.diagnostics.factorization.to_string());
        put("diagnostics.pairing", self.diagnostics.pairing.to_string());
        put("output.dir", self.output_dir.clone());
        put(
            "output.formats",
            self.formats.iter().map(|&f| format_name(f)).collect::<Vec<_>>().join(","),
        );
        put("budget.vertices", self.budget.to_string());
        put("check.seed", self.seed.to_string());
        s
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, ()> {
    v.split(',').map(|x| x.trim().parse::<T>().map_err(|_| ())).collect()
}

/// Parses and validates a configuration, reporting every violation.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errors.push(format!("line {}: expected key=value, got `{line}`", lineno + 1));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            errors.push(format!("line {}: unknown key `{k}`", lineno + 1));
            continue;
        }
        if !seen.insert(k.to_string()) {
            errors.push(format!("line {}: duplicate key `{k}`", lineno + 1));
            continue;
        }
        pairs.push((k, v, lineno + 1));
    }

    let get = |key: &str| pairs.iter().find(|(k, _, _)| *k == key).map(|&(_, v, l)| (v, l));
    let mut value_errors = Vec::new();
    let mut bad = |key: &str, line: usize, v: &str, what: &str| {
        value_errors.push(format!("line {line}: `{key}={v}`: {what}"));
    };

    let regime = match get("regime") {
        Some((v, l)) => v.parse::<Regime>().unwrap_or_else(|_| {
            bad("regime", l, v, "expected M_pos, M_zero or M_neg");
            Regime::MPos
        }),
        None => Regime::MPos,
    };
    let mut cfg = RunConfig::for_regime(regime);

    macro_rules! field {
        ($key:expr, $ty:ty, $what:expr, $set:expr) => {
            if let Some((v, l)) = get($key) {
                match v.parse::<$ty>() {
                    Ok(x) => $set(x),
                    Err(_) => bad($key, l, v, $what),
                }
            }
        };
    }

    let mut hole = HoleKind::Square;
    if let Some((v, l)) = get("geometry.hole") {
        match v {
            "square" => hole = HoleKind::Square,
            "none" => hole = HoleKind::None,
            "polygon" => hole = HoleKind::Polygon,
            _ => bad("geometry.hole", l, v, "expected square, none or polygon"),
        }
    }
    let mut extent = None;
    if let Some((v, l)) = get("geometry.hole_extent") {
        match parse_list::<f64>(v) {
            Ok(x) if x.len() == 4 && hole == HoleKind::Polygon => extent = Some([x[0], x[1], x[2], x[3]]),
            Ok(x) if x.len() == 4 => bad("geometry.hole_extent", l, v, "only polygon holes take an extent"),
            _ => bad("geometry.hole_extent", l, v, "expected four numbers x_lo,y_lo,x_hi,y_hi"),
        }
    }
    let mut m = cfg.geometry.resolution;
    field!("geometry.m", usize, "expected a positive integer", |x| m = x);
    cfg.geometry = match hole {
        HoleKind::Square => CellGeometry::square(m),
        HoleKind::None => CellGeometry::no_hole(m),
        HoleKind::Polygon => match extent {
            Some(e) => CellGeometry::polygon(m, e),
            None => {
                let l = get("geometry.hole").map_or(0, |(_, l)| l);
                bad("geometry.hole", l, "polygon", "polygon holes need `geometry.hole_extent`");
                CellGeometry::polygon(m, [0.25, 0.25, 0.75, 0.75])
            }
        },
    };
    field!("geometry.s", usize, "expected a positive integer", |x| cfg.s = x);
    if let Some((v, l)) = get("sweep.n") {
        match parse_list::<usize>(v) {
            Ok(x) => cfg.n_values = x,
            Err(_) => bad("sweep.n", l, v, "expected a comma-separated list of integers"),
        }
    }
    field!("coefficients.preset", CoefficientPreset, "expected identity or layered", |x| cfg.coefficients = x);
    field!(
        "density.case",
        DensityCase,
        "expected positive_avg, zero_avg or negative_avg",
        |x| cfg.density = x
    );
    field!("counts.k", usize, "expected a positive integer", |x| cfg.count = x);
    field!("limit.grid", usize, "expected a positive integer", |x| cfg.limit_grid = x);
    field!("diagnostics.corrector", bool, "expected true or false", |x| cfg.diagnostics.corrector_energy = x);
    field!("diagnostics.factorization", bool, "expected true or false", |x| cfg.diagnostics.factorization = x);
    field!("diagnostics.pairing", bool, "expected true or false", |x| cfg.diagnostics.pairing = x);
    if let Some((v, _)) = get("output.dir") {
        cfg.output_dir = v.to_string();
    }
    if let Some((v, l)) = get("output.formats") {
        match v.split(',').map(|x| x.parse::<Format>()).collect::<Result<Vec<_>>>() {
            Ok(f) if !f.is_empty() => cfg.formats = f,
            _ => bad("output.formats", l, v, "expected a subset of csv,json,svg"),
        }
    }
    field!("budget.vertices", usize, "expected a positive integer", |x| cfg.budget = x);
    field!("check.seed", u64, "expected an unsigned integer", |x| cfg.seed = x);

    errors.append(&mut value_errors);
    if cfg.s != cfg.geometry.resolution {
        // The hole must also sit on the s-grid.
        if let Err(e) = cfg.geometry.with_resolution(cfg.s).validate() {
            errors.push(format!("geometry misaligned at s = {}: {e}", cfg.s));
        }
    }
    errors.extend(cfg.plan().violations());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errors))
    }
}

/// `--print-defaults` output.
pub fn defaults_text() -> String {
    let mut s = String::from("# perfhom defaults; every key is optional\n");
    s.push_str(&RunConfig::default().to_text());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn violations(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config("regime=M_pos\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn regime_density_mismatch() {
        let v = violations("regime=M_pos\ndensity.case=zero_avg\n");
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("does not match"));
    }

    #[test]
    fn duplicate_key_is_named() {
        let v = violations("regime=M_pos\ngeometry.m=8\ngeometry.m=16\n");
        assert!(v.iter().any(|e| e.contains("duplicate key `geometry.m`")));
    }

    #[test]
    fn all_violations_are_reported() {
        let v = violations("colour=blue\nsweep.n=4,2\ngeometry.m=12\n");
        assert!(v.iter().any(|e| e.contains("unknown key `colour`")));
        assert!(v.iter().any(|e| e.contains("strictly increasing")));
        assert!(v.iter().any(|e| e.contains("grid line")), "{v:?}");
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::for_regime(Regime::MZero);
        cfg.geometry = CellGeometry::polygon(16, [0.25, 0.25, 0.75, 0.75]);
        cfg.s = 16;
        cfg.limit_grid = 256;
        cfg.formats = vec![Format::Json];
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(parse_config(&defaults_text()).unwrap(), RunConfig::default());
    }
}
