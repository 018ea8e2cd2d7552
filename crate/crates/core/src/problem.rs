//! Game specifications: dynamics, gains, impulse costs, action cones, and
//! the config file loader with its structural validators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::expr::{parse_expr, state_vars, Expr, ExprError};
use crate::grid::{order_actions, ActionGrid};
use crate::report::{CheckResult, VerificationReport};

pub const DEFAULT_COST_SAMPLES: usize = 4096;
pub const DEFAULT_COST_SEED: u64 = 0x1D_0C05;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("expression `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("cost structure violated: {failed:?} (load with the override flag to proceed)")]
    Costs { failed: Vec<String>, report: VerificationReport },
}

/// Per-coordinate cone descriptor: a half-line or the full line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeAxis {
    NonNegative,
    NonPositive,
    FullLine,
}

impl ConeAxis {
    pub fn parse(text: &str) -> Result<Self, String> {
        match text.trim() {
            "pos" | "nonneg" | "[0,inf)" => Ok(ConeAxis::NonNegative),
            "neg" | "nonpos" | "(-inf,0]" => Ok(ConeAxis::NonPositive),
            "line" | "full" => Ok(ConeAxis::FullLine),
            other => Err(format!("unknown cone descriptor `{other}` (use pos, neg or line)")),
        }
    }

    pub fn contains_axis(self, other: ConeAxis) -> bool {
        matches!(
            (self, other),
            (ConeAxis::FullLine, _)
                | (ConeAxis::NonNegative, ConeAxis::NonNegative)
                | (ConeAxis::NonPositive, ConeAxis::NonPositive)
        )
    }

    pub fn contains_value(self, v: f64) -> bool {
        match self {
            ConeAxis::NonNegative => v >= 0.0,
            ConeAxis::NonPositive => v <= 0.0,
            ConeAxis::FullLine => true,
        }
    }

    fn interval(self, r_max: f64) -> (f64, f64) {
        match self {
            ConeAxis::NonNegative => (0.0, r_max),
            ConeAxis::NonPositive => (-r_max, 0.0),
            ConeAxis::FullLine => (-r_max, r_max),
        }
    }
}

/// Action cones for the two players, truncated at `r_max` and discretized
/// with `m_imp` points per axis. The player-II cone must be contained in
/// the player-I cone coordinatewise.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub cone_i: Vec<ConeAxis>,
    pub cone_ii: Vec<ConeAxis>,
    pub r_max: f64,
    pub m_imp: usize,
}

impl ActionSpace {
    fn axis_values(cone: ConeAxis, r_max: f64, m_imp: usize) -> Result<Vec<f64>, String> {
        if m_imp == 1 {
            return Ok(vec![0.0]);
        }
        match cone {
            ConeAxis::FullLine => {
                if m_imp % 2 == 0 {
                    return Err(format!(
                        "full-line axis needs an odd m_imp so 0 is a grid point, got {m_imp}"
                    ));
                }
                let half = (m_imp as i64 - 1) / 2;
                let step = r_max / half as f64;
                Ok((-half..=half).map(|k| k as f64 * step).collect())
            }
            ConeAxis::NonNegative => {
                let step = r_max / (m_imp - 1) as f64;
                Ok((0..m_imp).map(|j| j as f64 * step).collect())
            }
            ConeAxis::NonPositive => {
                let step = r_max / (m_imp - 1) as f64;
                Ok((0..m_imp).map(|j| -(j as f64) * step).collect())
            }
        }
    }

    /// Builds the discrete action grids. The player-II grid is carved out
    /// of the player-I grid so containment holds exactly.
    pub fn build_grid(&self) -> Result<ActionGrid, SpecError> {
        let field = |message: String| SpecError::Field { field: "actions".to_string(), message };
        if self.r_max <= 0.0 {
            return Err(field(format!("r_max must be positive, got {}", self.r_max)));
        }
        if self.m_imp == 0 {
            return Err(field("m_imp must be at least 1".to_string()));
        }
        let dim = self.cone_i.len();
        let mut axes_i = Vec::with_capacity(dim);
        let mut axes_ii = Vec::with_capacity(dim);
        for d in 0..dim {
            let vals_i = Self::axis_values(self.cone_i[d], self.r_max, self.m_imp)
                .map_err(|m| field(format!("axis {}: {m}", d + 1)))?;
            let vals_ii: Vec<f64> = vals_i
                .iter()
                .copied()
                .filter(|&v| self.cone_ii[d].contains_value(v))
                .collect();
            axes_i.push(vals_i);
            axes_ii.push(vals_ii);
        }
        let product = |axes: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut out: Vec<Vec<f64>> = vec![Vec::new()];
            for axis in axes {
                let mut next = Vec::with_capacity(out.len() * axis.len());
                for prefix in &out {
                    for &v in axis {
                        let mut action = prefix.clone();
                        action.push(v);
                        next.push(action);
                    }
                }
                out = next;
            }
            out
        };
        let list_i = product(&axes_i);
        if list_i.len() > 100_000 {
            return Err(field(format!("action grid too large ({} points)", list_i.len())));
        }
        let grid = ActionGrid::new(order_actions(list_i), order_actions(product(&axes_ii)))
            .map_err(|e| field(e.to_string()))?;
        Ok(grid)
    }

    fn sample_action<R: Rng>(&self, cones: &[ConeAxis], rng: &mut R) -> Vec<f64> {
        cones
            .iter()
            .map(|c| {
                let (lo, hi) = c.interval(self.r_max);
                rng.random_range(lo..=hi)
            })
            .collect()
    }
}

/// Impulse cost functions: `cost_i` is what player I pays per impulse (a
/// gain for player II), `cost_ii` what player II pays (a gain for player
/// I). `h_min` is the claimed uniform lower bound for the structural
/// margin that separates chained impulses from single ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub cost_i: Expr,
    pub cost_ii: Expr,
    pub h_min: f64,
}

impl CostSpec {
    pub fn cost_i_at(&self, t: f64, action: &[f64]) -> Result<f64, ExprError> {
        let mut vals = Vec::with_capacity(action.len() + 1);
        vals.push(t);
        vals.extend_from_slice(action);
        self.cost_i.eval(&vals)
    }

    pub fn cost_ii_at(&self, t: f64, action: &[f64]) -> Result<f64, ExprError> {
        let mut vals = Vec::with_capacity(action.len() + 1);
        vals.push(t);
        vals.extend_from_slice(action);
        self.cost_ii.eval(&vals)
    }
}

/// Full problem definition for one game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    pub dim: usize,
    pub noise_dim: usize,
    pub horizon: f64,
    pub drift: Vec<Expr>,
    pub diffusion: Vec<Vec<Expr>>,
    pub running_gain: Expr,
    pub terminal_payoff: Expr,
    pub costs: CostSpec,
    pub actions: ActionSpace,
    pub domain: Vec<(f64, f64)>,
}

impl GameSpec {
    fn state_bindings(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut vals = Vec::with_capacity(x.len() + 1);
        vals.push(t);
        vals.extend_from_slice(x);
        vals
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let vals = self.state_bindings(t, x);
        self.drift.iter().map(|e| e.eval(&vals)).collect()
    }

    /// Diffusion matrix rows (state dim) by columns (noise dim).
    pub fn diffusion_at(&self, t: f64, x: &[f64]) -> Result<Vec<Vec<f64>>, ExprError> {
        let vals = self.state_bindings(t, x);
        self.diffusion
            .iter()
            .map(|row| row.iter().map(|e| e.eval(&vals)).collect())
            .collect()
    }

    pub fn running_gain_at(&self, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        self.running_gain.eval(&self.state_bindings(t, x))
    }

    pub fn terminal_payoff_at(&self, x: &[f64]) -> Result<f64, ExprError> {
        // g is a function of the state only; t is irrelevant but bound.
        self.terminal_payoff.eval(&self.state_bindings(self.horizon, x))
    }

    pub fn domain_center(&self) -> Vec<f64> {
        self.domain.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Structural validation: ranges, cone containment, grid invariants,
    /// and a finite-evaluation smoke check of the coefficients at the
    /// domain corners and center.
    pub fn validate_structure(&self) -> Result<(), SpecError> {
        let field = |f: &str, m: String| SpecError::Field { field: f.to_string(), message: m };
        if self.dim == 0 {
            return Err(field("dynamics", "state dimension n must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(field("horizon", format!("T must be positive, got {}", self.horizon)));
        }
        if self.domain.len() != self.dim {
            return Err(field("domain", "one [x_min, x_max] pair per axis required".into()));
        }
        for (d, (lo, hi)) in self.domain.iter().enumerate() {
            if !(lo < hi) {
                return Err(field(
                    "domain",
                    format!("axis {}: x_min {lo} must be below x_max {hi}", d + 1),
                ));
            }
        }
        if self.actions.cone_i.len() != self.dim || self.actions.cone_ii.len() != self.dim {
            return Err(field("actions", "one cone descriptor per axis required".into()));
        }
        for d in 0..self.dim {
            if !self.actions.cone_i[d].contains_axis(self.actions.cone_ii[d]) {
                return Err(field(
                    "actions",
                    format!("axis {}: player-II cone is not contained in player-I cone", d + 1),
                ));
            }
        }
        if self.drift.len() != self.dim {
            return Err(field("dynamics", "drift must have one expression per axis".into()));
        }
        if self.diffusion.len() != self.dim
            || self.diffusion.iter().any(|row| row.len() != self.noise_dim)
        {
            return Err(field("dynamics", "diffusion must be an n-by-d expression matrix".into()));
        }
        // Grid invariants (containment, zero action) hold by construction;
        // build once to surface descriptor errors early.
        let grid = self.actions.build_grid()?;
        grid.check_invariants()
            .map_err(|e| field("actions", e.to_string()))?;

        // Finite-evaluation smoke check at corners and center, t in {0, T}.
        let mut probes: Vec<Vec<f64>> = vec![self.domain_center()];
        for corner in 0..(1usize << self.dim.min(16)) {
            let point: Vec<f64> = self
                .domain
                .iter()
                .enumerate()
                .map(|(d, (lo, hi))| if (corner >> d) & 1 == 1 { *hi } else { *lo })
                .collect();
            probes.push(point);
        }
        for t in [0.0, self.horizon] {
            for point in &probes {
                let checks: [(&str, Result<f64, ExprError>); 2] = [
                    ("gains.f", self.running_gain_at(t, point)),
                    ("gains.g", self.terminal_payoff_at(point)),
                ];
                for (name, result) in checks {
                    let v = result.map_err(|e| SpecError::Expr { field: name.into(), source: e })?;
                    if !v.is_finite() {
                        return Err(field(name, format!("non-finite value {v} at {point:?}")));
                    }
                }
                let b = self
                    .drift_at(t, point)
                    .map_err(|e| SpecError::Expr { field: "dynamics.b".into(), source: e })?;
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(field("dynamics.b", format!("non-finite value at {point:?}")));
                }
                let s = self
                    .diffusion_at(t, point)
                    .map_err(|e| SpecError::Expr { field: "dynamics.sigma".into(), source: e })?;
                if s.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(field("dynamics.sigma", format!("non-finite value at {point:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Names of the sampled cost-structure checks.
pub mod cost_checks {
    /// inf c > 0 over the sampled points.
    pub const COST_I_POSITIVE: &str = "cost_i_positive";
    /// inf chi > 0 over the sampled points.
    pub const COST_II_POSITIVE: &str = "cost_ii_positive";
    /// c(t, y1+z+y2) <= c(t, y1) - chi(t, z) + c(t, y2) - h_min.
    pub const CHAIN: &str = "cost_chain_margin";
    /// chi(t, z1+z2) <= chi(t, z1) + chi(t, z2) - h_min.
    pub const SUBADDITIVE: &str = "cost_ii_subadditive_margin";
    /// Costs are nonincreasing in time.
    pub const TIME_MONOTONE: &str = "cost_time_monotone";
    /// Advisory: sampled 1/2-Hoelder quotient in time.
    pub const TIME_HOLDER: &str = "cost_time_holder_quotient";
}

/// Samples the cost-structure conditions and reports the worst margin for
/// each. A condition passes iff its worst margin is nonnegative (strictly
/// positive for the positivity checks). Violations are reported, never
/// thrown.
pub fn validate_costs(spec: &GameSpec, n_samples: usize, seed: u64) -> VerificationReport {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let costs = &spec.costs;
    let actions = &spec.actions;

    let mut min_cost_i = f64::INFINITY;
    let mut min_cost_ii = f64::INFINITY;
    let mut chain_margin = f64::INFINITY;
    let mut subadd_margin = f64::INFINITY;
    let mut monotone_margin = f64::INFINITY;
    let mut holder_quotient: f64 = 0.0;
    let mut eval_failure: Option<String> = None;

    let n_samples = n_samples.max(1);
    for _ in 0..n_samples {
        let t = rng.random_range(0.0..=spec.horizon);
        let t_late = rng.random_range(t..=spec.horizon);
        let y1 = actions.sample_action(&actions.cone_i, &mut rng);
        let y2 = actions.sample_action(&actions.cone_i, &mut rng);
        let z = actions.sample_action(&actions.cone_ii, &mut rng);
        let z1 = actions.sample_action(&actions.cone_ii, &mut rng);
        let z2 = actions.sample_action(&actions.cone_ii, &mut rng);
        let y_sum: Vec<f64> = y1
            .iter()
            .zip(&z)
            .zip(&y2)
            .map(|((a, b), c)| a + b + c)
            .collect();
        let z_sum: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();

        let sample = (|| -> Result<(), ExprError> {
            let c_y1 = costs.cost_i_at(t, &y1)?;
            let c_y2 = costs.cost_i_at(t, &y2)?;
            let c_sum = costs.cost_i_at(t, &y_sum)?;
            let chi_z = costs.cost_ii_at(t, &z)?;
            let chi_z1 = costs.cost_ii_at(t, &z1)?;
            let chi_z2 = costs.cost_ii_at(t, &z2)?;
            let chi_sum = costs.cost_ii_at(t, &z_sum)?;

            min_cost_i = min_cost_i.min(c_y1).min(c_y2).min(c_sum);
            min_cost_ii = min_cost_ii.min(chi_z).min(chi_z1).min(chi_z2).min(chi_sum);
            chain_margin = chain_margin.min(c_y1 - chi_z + c_y2 - costs.h_min - c_sum);
            subadd_margin = subadd_margin.min(chi_z1 + chi_z2 - costs.h_min - chi_sum);

            let c_late = costs.cost_i_at(t_late, &y1)?;
            let chi_late = costs.cost_ii_at(t_late, &z1)?;
            let c_early = c_y1;
            let chi_early = chi_z1;
            monotone_margin = monotone_margin.min(c_early - c_late).min(chi_early - chi_late);
            if t_late > t {
                let dt = (t_late - t).sqrt();
                holder_quotient = holder_quotient
                    .max((c_early - c_late).abs() / dt)
                    .max((chi_early - chi_late).abs() / dt);
            }
            Ok(())
        })();
        if let Err(e) = sample {
            eval_failure = Some(e.to_string());
            break;
        }
    }

    let context = format!("n_samples={n_samples} seed={seed}");
    let mut report = VerificationReport::new();
    let mut add = |name: &str, pass: bool, measured: f64, tolerance: f64, advisory: bool| {
        let mut check = CheckResult::new(
            name,
            pass && eval_failure.is_none(),
            measured,
            tolerance,
            match &eval_failure {
                Some(msg) => format!("{context}; evaluation failed: {msg}"),
                None => context.clone(),
            },
        );
        if advisory {
            check = check.advisory();
        }
        report.push(check).expect("cost check names are unique");
    };

    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    add(cost_checks::COST_I_POSITIVE, min_cost_i > 0.0, finite(min_cost_i), 0.0, false);
    add(cost_checks::COST_II_POSITIVE, min_cost_ii > 0.0, finite(min_cost_ii), 0.0, false);
    add(cost_checks::CHAIN, chain_margin >= 0.0, finite(chain_margin), 0.0, false);
    add(cost_checks::SUBADDITIVE, subadd_margin >= 0.0, finite(subadd_margin), 0.0, false);
    add(cost_checks::TIME_MONOTONE, monotone_margin >= 0.0, finite(monotone_margin), 0.0, false);
    add(cost_checks::TIME_HOLDER, true, finite(holder_quotient), f64::INFINITY, true);
    report
}

/// Load-time options for [`load_problem`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// When false, cost-structure violations only warn instead of failing
    /// the load.
    pub enforce_costs: bool,
    pub cost_samples: usize,
    pub cost_seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            enforce_costs: true,
            cost_samples: DEFAULT_COST_SAMPLES,
            cost_seed: DEFAULT_COST_SEED,
        }
    }
}

/// Parses and fully validates a problem config.
pub fn load_problem(config: &str, opts: &LoadOptions) -> Result<GameSpec, SpecError> {
    let spec = parse_config(config)?;
    spec.validate_structure()?;
    let report = validate_costs(&spec, opts.cost_samples, opts.cost_seed);
    if opts.enforce_costs && !report.all_required_pass() {
        return Err(SpecError::Costs {
            failed: report.failed_names().iter().map(|s| s.to_string()).collect(),
            report,
        });
    }
    Ok(spec)
}

// --- config file parsing ------------------------------------------------

struct RawConfig {
    // (section, key) -> (value, line)
    entries: Vec<(String, String, String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, SpecError> {
        let mut entries: Vec<(String, String, String, usize)> = Vec::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(SpecError::Parse {
                    line: line_no,
                    message: "unterminated section header".to_string(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(SpecError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            if section.is_empty() {
                return Err(SpecError::Parse {
                    line: line_no,
                    message: "key outside of any [section]".to_string(),
                });
            }
            let key = key.trim().to_string();
            if let Some((_, _, _, first)) =
                entries.iter().find(|(s, k, ..)| s == &section && k == &key)
            {
                return Err(SpecError::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}` in [{section}] (first at line {first})"),
                });
            }
            let mut value = value.trim().to_string();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = value[1..value.len() - 1].to_string();
            }
            entries.push((section.clone(), key, value, line_no));
        }
        Ok(RawConfig { entries })
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(s, k, ..)| s == section && k == key)
            .map(|(_, _, v, _)| v.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str, SpecError> {
        self.get(section, key).ok_or_else(|| SpecError::Field {
            field: format!("{section}.{key}"),
            message: "missing required key".to_string(),
        })
    }
}

fn parse_f64(field: &str, text: &str) -> Result<f64, SpecError> {
    text.trim().parse().map_err(|_| SpecError::Field {
        field: field.to_string(),
        message: format!("expected a number, got `{text}`"),
    })
}

fn parse_usize(field: &str, text: &str) -> Result<usize, SpecError> {
    text.trim().parse().map_err(|_| SpecError::Field {
        field: field.to_string(),
        message: format!("expected a nonnegative integer, got `{text}`"),
    })
}

fn parse_field_expr(field: &str, text: &str, vars: &[String]) -> Result<Expr, SpecError> {
    parse_expr(text, vars).map_err(|e| SpecError::Expr { field: field.to_string(), source: e })
}

/// Parses the flat key-value config format; does not run validation.
pub fn parse_config(text: &str) -> Result<GameSpec, SpecError> {
    let raw = RawConfig::parse(text)?;

    let dim = parse_usize("dynamics.n", raw.require("dynamics", "n")?)?;
    if dim == 0 || dim > 8 {
        return Err(SpecError::Field {
            field: "dynamics.n".to_string(),
            message: format!("state dimension must be in 1..=8, got {dim}"),
        });
    }
    let horizon = parse_f64("horizon.T", raw.require("horizon", "T")?)?;
    let vars = state_vars(dim);

    // Drift: `b` as shorthand for `b1` when n = 1, else b1..bn.
    let mut drift = Vec::with_capacity(dim);
    for i in 1..=dim {
        let key = format!("b{i}");
        let text = match raw.get("dynamics", &key) {
            Some(v) => v,
            None if dim == 1 => raw.require("dynamics", "b")?,
            None => {
                return Err(SpecError::Field {
                    field: format!("dynamics.{key}"),
                    message: "missing drift component".to_string(),
                })
            }
        };
        drift.push(parse_field_expr(&format!("dynamics.{key}"), text, &vars)?);
    }

    // Diffusion: `sigma` shorthand for the 1x1 case, else sigmaIJ keys.
    // The noise dimension is inferred from the keys of the first row.
    let mut diffusion: Vec<Vec<Expr>> = Vec::with_capacity(dim);
    let noise_dim = if raw.get("dynamics", "sigma").is_some() && dim == 1 {
        diffusion.push(vec![parse_field_expr(
            "dynamics.sigma",
            raw.require("dynamics", "sigma")?,
            &vars,
        )?]);
        1
    } else {
        let mut d = 0;
        while raw.get("dynamics", &format!("sigma1{}", d + 1)).is_some() {
            d += 1;
        }
        if d == 0 {
            return Err(SpecError::Field {
                field: "dynamics.sigma".to_string(),
                message: "missing diffusion (use sigma for the 1x1 case or sigma11.. keys)"
                    .to_string(),
            });
        }
        for i in 1..=dim {
            let mut row = Vec::with_capacity(d);
            for j in 1..=d {
                let key = format!("sigma{i}{j}");
                let text = raw.require("dynamics", &key)?;
                row.push(parse_field_expr(&format!("dynamics.{key}"), text, &vars)?);
            }
            diffusion.push(row);
        }
        d
    };

    let running_gain = parse_field_expr("gains.f", raw.require("gains", "f")?, &vars)?;
    let terminal_payoff = parse_field_expr("gains.g", raw.require("gains", "g")?, &vars)?;

    let costs = CostSpec {
        cost_i: parse_field_expr("costs.c", raw.require("costs", "c")?, &vars)?,
        cost_ii: parse_field_expr("costs.chi", raw.require("costs", "chi")?, &vars)?,
        h_min: parse_f64("costs.h_min", raw.require("costs", "h_min")?)?,
    };
    if !(costs.h_min > 0.0) {
        return Err(SpecError::Field {
            field: "costs.h_min".to_string(),
            message: format!("h_min must be strictly positive, got {}", costs.h_min),
        });
    }

    let parse_cones = |field: &str, text: &str| -> Result<Vec<ConeAxis>, SpecError> {
        let parts: Vec<&str> = text.split(',').collect();
        let cones: Result<Vec<ConeAxis>, String> =
            parts.iter().map(|p| ConeAxis::parse(p)).collect();
        let cones = cones.map_err(|m| SpecError::Field { field: field.to_string(), message: m })?;
        if cones.len() == 1 && dim > 1 {
            return Ok(vec![cones[0]; dim]);
        }
        if cones.len() != dim {
            return Err(SpecError::Field {
                field: field.to_string(),
                message: format!("expected {dim} cone descriptor(s), got {}", cones.len()),
            });
        }
        Ok(cones)
    };
    let actions = ActionSpace {
        cone_i: parse_cones("actions.U", raw.require("actions", "U")?)?,
        cone_ii: parse_cones("actions.V", raw.require("actions", "V")?)?,
        r_max: parse_f64("actions.r_max", raw.require("actions", "r_max")?)?,
        m_imp: parse_usize("actions.m_imp", raw.require("actions", "m_imp")?)?,
    };

    let parse_bounds = |field: &str, text: &str| -> Result<Vec<f64>, SpecError> {
        let vals: Result<Vec<f64>, SpecError> =
            text.split(',').map(|p| parse_f64(field, p)).collect();
        let vals = vals?;
        if vals.len() == 1 && dim > 1 {
            return Ok(vec![vals[0]; dim]);
        }
        if vals.len() != dim {
            return Err(SpecError::Field {
                field: field.to_string(),
                message: format!("expected {dim} value(s), got {}", vals.len()),
            });
        }
        Ok(vals)
    };
    let mins = parse_bounds("domain.x_min", raw.require("domain", "x_min")?)?;
    let maxs = parse_bounds("domain.x_max", raw.require("domain", "x_max")?)?;
    let domain: Vec<(f64, f64)> = mins.into_iter().zip(maxs).collect();

    Ok(GameSpec {
        dim,
        noise_dim,
        horizon,
        drift,
        diffusion,
        running_gain,
        terminal_payoff,
        costs,
        actions,
        domain,
    })
}
