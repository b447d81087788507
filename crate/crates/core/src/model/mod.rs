//! The ODE model language: declarations, rate-equation expressions, and
//! evaluation of the right-hand side f(x, θ, u, t).

mod expr;
mod lexer;
mod parser;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

pub use expr::{eval_expr, BinaryOp, CompiledExpr, Expr, Func};
pub use parser::{parse_expr, parse_model};

use crate::error::{Error, Result};

/// Reserved symbol for model time.
pub const TIME_SYMBOL: &str = "t";

#[derive(Debug, Clone, PartialEq)]
pub struct VariableDecl {
    pub name: String,
    pub initial_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDecl {
    pub name: String,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
}

/// An exogenous time series, bound to a column of an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDecl {
    pub name: String,
    pub column: String,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsDecl {
    pub variable: String,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub variables: Vec<VariableDecl>,
    pub parameters: Vec<ParameterDecl>,
    pub inputs: Vec<InputDecl>,
    /// Right-hand side of d(var)/dt, aligned with `variables`.
    pub equations: Vec<Expr>,
    pub observations: Vec<ObsDecl>,
}

/// Source line of each declaration, for error messages. Zero when unknown.
#[derive(Debug, Default)]
pub(crate) struct DeclLines {
    pub variables: Vec<usize>,
    pub parameters: Vec<usize>,
    pub inputs: Vec<usize>,
    pub equations: Vec<usize>,
    pub observations: Vec<usize>,
}

fn line_at(lines: &[usize], idx: usize) -> usize {
    lines.get(idx).copied().unwrap_or(0)
}

impl ModelSpec {
    /// Checks every structural invariant. `parse_model` already does this;
    /// call it after building or editing a spec by hand.
    pub fn validate(&self) -> Result<()> {
        self.check(&DeclLines::default())
    }

    pub(crate) fn check(&self, lines: &DeclLines) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::invalid("model", "declares no variables"));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let declared = self
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), line_at(&lines.variables, i)))
            .chain(
                self.parameters
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (p.name.as_str(), line_at(&lines.parameters, i))),
            )
            .chain(
                self.inputs
                    .iter()
                    .enumerate()
                    .map(|(i, u)| (u.name.as_str(), line_at(&lines.inputs, i))),
            );
        for (name, line) in declared {
            if name == TIME_SYMBOL || Func::from_name(name).is_some() || name == "inf" {
                return Err(Error::invalid(
                    "declaration",
                    format!("`{name}` is reserved (line {line})"),
                ));
            }
            if seen.insert(name, line).is_some() {
                return Err(Error::Duplicate {
                    name: name.to_string(),
                    line,
                });
            }
        }

        for (i, v) in self.variables.iter().enumerate() {
            if !v.initial_value.is_finite() {
                return Err(Error::invalid(
                    "variable",
                    format!(
                        "initial value of `{}` must be finite (line {})",
                        v.name,
                        line_at(&lines.variables, i)
                    ),
                ));
            }
        }
        for (i, p) in self.parameters.iter().enumerate() {
            let line = line_at(&lines.parameters, i);
            if !(p.prior_sd > 0.0 && p.prior_sd.is_finite()) || !p.prior_mean.is_finite() {
                return Err(Error::invalid(
                    "parameter",
                    format!(
                        "`{}` needs a finite mean and a positive finite sd (line {line})",
                        p.name
                    ),
                ));
            }
            if !(p.lower_bound < p.upper_bound) {
                return Err(Error::invalid(
                    "parameter",
                    format!("`{}` has empty bounds (line {line})", p.name),
                ));
            }
        }

        if self.equations.len() != self.variables.len() {
            let missing = &self.variables[self.equations.len().min(self.variables.len())..];
            return match missing.first() {
                Some(v) => Err(Error::MissingEquation(v.name.clone())),
                None => Err(Error::invalid("model", "more equations than variables")),
            };
        }
        for (i, eq) in self.equations.iter().enumerate() {
            for sym in eq.symbols() {
                if sym != TIME_SYMBOL && !seen.contains_key(sym) {
                    return Err(Error::UnresolvedSymbol {
                        name: sym.to_string(),
                        line: line_at(&lines.equations, i),
                    });
                }
            }
        }

        let mut observed = BTreeSet::new();
        for (i, obs) in self.observations.iter().enumerate() {
            let line = line_at(&lines.observations, i);
            if self.variable_index(&obs.variable).is_none() {
                return Err(Error::UnresolvedSymbol {
                    name: obs.variable.clone(),
                    line,
                });
            }
            if !(obs.noise_sd > 0.0 && obs.noise_sd.is_finite()) {
                return Err(Error::invalid(
                    "observation",
                    format!(
                        "noise sd of `{}` must be positive (line {line})",
                        obs.variable
                    ),
                ));
            }
            if !observed.insert(obs.variable.as_str()) {
                return Err(Error::Duplicate {
                    name: format!("obs {}", obs.variable),
                    line,
                });
            }
        }
        Ok(())
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn observation(&self, variable: &str) -> Option<&ObsDecl> {
        self.observations.iter().find(|o| o.variable == variable)
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.variables.iter().map(|v| v.initial_value).collect()
    }

    pub fn prior_means(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.prior_mean).collect()
    }

    /// Compiles the equations into slot programs for repeated evaluation.
    pub fn compile(&self) -> Result<RhsProgram> {
        RhsProgram::new(self)
    }
}

fn write_real(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v == f64::INFINITY {
        f.write_str("inf")
    } else if v == f64::NEG_INFINITY {
        f.write_str("-inf")
    } else {
        write!(f, "{v:?}")
    }
}

/// Prints the spec back in the model language.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {}", self.name)?;
        for v in &self.variables {
            write!(f, "var {} = ", v.name)?;
            write_real(f, v.initial_value)?;
            writeln!(f)?;
        }
        for p in &self.parameters {
            write!(f, "param {} ~ N(", p.name)?;
            write_real(f, p.prior_mean)?;
            f.write_str(", ")?;
            write_real(f, p.prior_sd)?;
            f.write_str(") in (")?;
            write_real(f, p.lower_bound)?;
            f.write_str(", ")?;
            write_real(f, p.upper_bound)?;
            writeln!(f, ")")?;
        }
        for u in &self.inputs {
            writeln!(f, "input {} from {}", u.name, u.column)?;
        }
        for (v, eq) in self.variables.iter().zip(&self.equations) {
            writeln!(f, "eq d{}/dt = {eq}", v.name)?;
        }
        for o in &self.observations {
            write!(f, "obs {} noise ", o.variable)?;
            write_real(f, o.noise_sd)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Compiled right-hand side. Slot layout is
/// `[state.., params.., inputs.., t]`.
#[derive(Debug, Clone)]
pub struct RhsProgram {
    programs: Vec<CompiledExpr>,
    variable_names: Vec<String>,
    n_params: usize,
    n_inputs: usize,
}

impl RhsProgram {
    pub fn new(m: &ModelSpec) -> Result<Self> {
        let nv = m.variables.len();
        let np = m.parameters.len();
        let ni = m.inputs.len();
        let resolve = |name: &str| -> Option<usize> {
            if name == TIME_SYMBOL {
                return Some(nv + np + ni);
            }
            m.variable_index(name)
                .or_else(|| m.parameter_index(name).map(|i| nv + i))
                .or_else(|| {
                    m.inputs
                        .iter()
                        .position(|u| u.name == name)
                        .map(|i| nv + np + i)
                })
        };
        let programs = m
            .equations
            .iter()
            .map(|eq| CompiledExpr::compile(eq, &resolve))
            .collect::<Result<Vec<_>>>()?;
        Ok(RhsProgram {
            programs,
            variable_names: m.variable_names(),
            n_params: np,
            n_inputs: ni,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.programs.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn slot_count(&self) -> usize {
        self.n_vars() + self.n_params + self.n_inputs + 1
    }

    /// Fills `slots` and writes the derivative into `out`. `slots` must hold
    /// `slot_count()` values.
    pub fn eval_into(
        &self,
        state: &[f64],
        params: &[f64],
        inputs: &[f64],
        t: f64,
        slots: &mut [f64],
        out: &mut [f64],
    ) -> Result<()> {
        let nv = self.n_vars();
        let np = self.n_params;
        debug_assert_eq!(slots.len(), self.slot_count());
        slots[..nv].copy_from_slice(state);
        slots[nv..nv + np].copy_from_slice(params);
        slots[nv + np..nv + np + self.n_inputs].copy_from_slice(inputs);
        slots[nv + np + self.n_inputs] = t;
        for (i, prog) in self.programs.iter().enumerate() {
            let value = prog.eval(slots);
            if !value.is_finite() {
                return Err(Error::Domain(format!(
                    "d{}/dt evaluated to {value} at t = {t}",
                    self.variable_names[i]
                )));
            }
            out[i] = value;
        }
        Ok(())
    }

    pub fn eval(&self, state: &[f64], params: &[f64], inputs: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_lengths(state, params, inputs)?;
        let mut slots = vec![0.0; self.slot_count()];
        let mut out = vec![0.0; self.n_vars()];
        self.eval_into(state, params, inputs, t, &mut slots, &mut out)?;
        Ok(out)
    }

    fn check_lengths(&self, state: &[f64], params: &[f64], inputs: &[f64]) -> Result<()> {
        if state.len() != self.n_vars()
            || params.len() != self.n_params
            || inputs.len() != self.n_inputs
        {
            return Err(Error::invalid(
                "argument",
                format!(
                    "expected {} state, {} parameter and {} input values, got {}, {}, {}",
                    self.n_vars(),
                    self.n_params,
                    self.n_inputs,
                    state.len(),
                    params.len(),
                    inputs.len()
                ),
            ));
        }
        Ok(())
    }
}

/// f(x, θ, u, t) for every variable in declaration order.
pub fn rhs(
    m: &ModelSpec,
    state: &[f64],
    params: &[f64],
    inputs: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    m.compile()?.eval(state, params, inputs, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOTKA: &str = "\
model lotka
var X = 5
var Y = 3
param a ~ N(2.6, 0.65) in (0, inf)
param b ~ N(1.3, 0.325) in (0, inf)
param c ~ N(5.2, 1.3) in (0, inf)
param d ~ N(1.3, 0.325) in (0, inf)
eq dX/dt = a*X - b*X*Y
eq dY/dt = -c*Y + d*X*Y
obs X noise 0.1
";

    const CASCADE: &str = "\
model stc
var S = 1
var dS = 0
var R = 1
var RS = 0
var Rpp = 0
param k1 ~ N(0.07, 0.01) in (0, inf)
param k2 ~ N(0.6, 0.1) in (0, inf)
param k3 ~ N(0.05, 0.01) in (0, inf)
param k4 ~ N(0.3, 0.05) in (0, inf)
param V ~ N(0.017, 0.004) in (0, inf)
param Km ~ N(0.3, 0.05) in (0, inf)
eq dS/dt = -k1*S - k2*S*R + k3*RS
eq ddS/dt = k1*S
eq dR/dt = -k2*S*R + k3*RS + V*Rpp/(Km + Rpp)
eq dRS/dt = k2*S*R - k3*RS - k4*RS
eq dRpp/dt = k4*RS - V*Rpp/(Km + Rpp)
obs Rpp noise 0.01
";

    fn bindings(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn minimal_model() {
        let m = parse_model(
            "model decay\nvar X = 1.0\nparam a ~ N(1, 0.5) in (0, inf)\neq dX/dt = -a*X\n",
        )
        .unwrap();
        assert_eq!(m.variables.len(), 1);
        assert_eq!(m.parameters.len(), 1);
        let expected = Expr::binary(
            BinaryOp::Mul,
            Expr::neg(Expr::symbol("a")),
            Expr::symbol("X"),
        );
        assert_eq!(m.equations[0], expected);
    }

    #[test]
    fn missing_equation() {
        let err = parse_model("model m\nvar X = 1\nvar Y = 2\neq dX/dt = -X\n").unwrap_err();
        assert!(matches!(err, Error::MissingEquation(ref v) if v == "Y"));
        assert!(err.to_string().contains("missing equation"));
    }

    #[test]
    fn lotka_rate_hand_arithmetic() {
        let m = parse_model("model m\nvar X = 1\nvar Y = 1\nparam a ~ N(1,1)\nparam b ~ N(1,1)\neq dX/dt = a*X - b*X*Y\neq dY/dt = 0\n").unwrap();
        let v = m.equations[0]
            .eval(&bindings(&[("a", 2.0), ("b", 1.0), ("X", 3.0), ("Y", 4.0)]))
            .unwrap();
        assert_eq!(v, -6.0);
    }

    #[test]
    fn unresolved_symbol_names_line() {
        let err = parse_model("model m\nvar X = 1\n\neq dX/dt = -k*X\n").unwrap_err();
        assert!(matches!(err, Error::UnresolvedSymbol { ref name, line: 4 } if name == "k"));
    }

    #[test]
    fn duplicate_across_namespaces() {
        let err = parse_model("model m\nvar a = 1\nparam a ~ N(1, 1)\neq da/dt = 0\n").unwrap_err();
        assert!(matches!(err, Error::Duplicate { ref name, line: 3 } if name == "a"));
    }

    #[test]
    fn reserved_names_rejected() {
        assert!(parse_model("model m\nvar t = 1\neq dt/dt = 0\n").is_err());
        assert!(parse_model("model m\nvar exp = 1\neq dexp/dt = 0\n").is_err());
    }

    #[test]
    fn time_symbol_resolves() {
        let m = parse_model("model m\nvar X = 0\neq dX/dt = 2*t\n").unwrap();
        assert_eq!(rhs(&m, &[0.0], &[], &[], 1.5).unwrap(), vec![3.0]);
    }

    #[test]
    fn invalid_priors_and_observations() {
        assert!(parse_model("model m\nvar X = 1\nparam a ~ N(2, 0)\neq dX/dt = a\n").is_err());
        assert!(
            parse_model("model m\nvar X = 1\nparam a ~ N(2, 1) in (1, 1)\neq dX/dt = a\n").is_err()
        );
        assert!(parse_model("model m\nvar X = 1\neq dX/dt = 0\nobs X noise 0\n").is_err());
        assert!(parse_model("model m\nvar X = 1\neq dX/dt = 0\nobs Z noise 1\n").is_err());
    }

    #[test]
    fn lotka_rhs() {
        let m = parse_model(LOTKA).unwrap();
        let d = rhs(&m, &[1.0, 1.0], &[2.0, 1.0, 4.0, 1.0], &[], 0.0).unwrap();
        assert_eq!(d, vec![1.0, -3.0]);
    }

    #[test]
    fn lotka_fixed_point_has_zero_rate() {
        let m = parse_model(LOTKA).unwrap();
        // X* = c/d, Y* = a/b
        let d = rhs(&m, &[4.0, 2.0], &[2.0, 1.0, 4.0, 1.0], &[], 0.0).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn cascade_initial_rates() {
        let m = parse_model(CASCADE).unwrap();
        let params = [0.07, 0.6, 0.05, 0.3, 0.017, 0.3];
        let d = rhs(&m, &[1.0, 0.0, 1.0, 0.0, 0.0], &params, &[], 0.0).unwrap();
        let expected = [-0.67, 0.07, -0.6, 0.6, 0.0];
        for (got, want) in d.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{d:?}");
        }
    }

    #[test]
    fn rhs_length_mismatch() {
        let m = parse_model(LOTKA).unwrap();
        assert!(rhs(&m, &[1.0], &[2.0, 1.0, 4.0, 1.0], &[], 0.0).is_err());
    }

    #[test]
    fn rhs_domain_error_names_variable() {
        let m =
            parse_model("model m\nvar X = 0\nvar Y = 1\neq dX/dt = 0\neq dY/dt = 1/X\n").unwrap();
        let err = rhs(&m, &[0.0, 1.0], &[], &[], 0.0).unwrap_err();
        assert!(matches!(err, Error::Domain(ref msg) if msg.contains("dY/dt")));
    }

    #[test]
    fn display_round_trips_shipped_forms() {
        for src in [LOTKA, CASCADE] {
            let m = parse_model(src).unwrap();
            let again = parse_model(&m.to_string()).unwrap();
            assert_eq!(m, again);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const NAMES: [&str; 4] = ["X", "Y", "a", "b"];

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (0.0f64..100.0).prop_map(Expr::Const),
                prop::sample::select(NAMES.to_vec()).prop_map(Expr::symbol),
            ];
            leaf.prop_recursive(5, 48, 2, |inner| {
                prop_oneof![
                    inner.clone().prop_map(Expr::neg),
                    (
                        prop::sample::select(vec![
                            BinaryOp::Add,
                            BinaryOp::Sub,
                            BinaryOp::Mul,
                            BinaryOp::Div,
                            BinaryOp::Pow
                        ]),
                        inner.clone(),
                        inner.clone()
                    )
                        .prop_map(|(op, l, r)| Expr::binary(op, l, r)),
                    inner.clone().prop_map(|e| Expr::Call(Func::Exp, vec![e])),
                    (inner.clone(), inner).prop_map(|(l, r)| Expr::Call(Func::Pow, vec![l, r])),
                ]
            })
        }

        fn spec_with(eq_x: Expr, eq_y: Expr) -> ModelSpec {
            ModelSpec {
                name: "prop".into(),
                variables: vec![
                    VariableDecl {
                        name: "X".into(),
                        initial_value: 1.5,
                    },
                    VariableDecl {
                        name: "Y".into(),
                        initial_value: -2.0,
                    },
                ],
                parameters: vec![
                    ParameterDecl {
                        name: "a".into(),
                        prior_mean: 1.0,
                        prior_sd: 0.1,
                        lower_bound: 0.0,
                        upper_bound: f64::INFINITY,
                    },
                    ParameterDecl {
                        name: "b".into(),
                        prior_mean: -3.0,
                        prior_sd: 2.5e-3,
                        lower_bound: f64::NEG_INFINITY,
                        upper_bound: 7.0,
                    },
                ],
                inputs: vec![],
                equations: vec![eq_x, eq_y],
                observations: vec![ObsDecl {
                    variable: "Y".into(),
                    noise_sd: 0.01,
                }],
            }
        }

        proptest! {
            #[test]
            fn print_then_parse_is_identity(x in arb_expr(), y in arb_expr()) {
                let m = spec_with(x, y);
                m.validate().unwrap();
                let reparsed = parse_model(&m.to_string()).unwrap();
                prop_assert_eq!(m, reparsed);
            }

            #[test]
            fn rhs_is_deterministic(
                x in arb_expr(),
                state in prop::array::uniform2(-5.0f64..5.0),
                params in prop::array::uniform2(-5.0f64..5.0),
            ) {
                let m = spec_with(x, Expr::Const(0.0));
                let first = rhs(&m, &state, &params, &[], 0.0);
                let second = rhs(&m, &state, &params, &[], 0.0);
                match (first, second) {
                    (Ok(a), Ok(b)) => {
                        prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
                    }
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "inconsistent outcome"),
                }
            }

            #[test]
            fn compiled_agrees_with_tree(
                x in arb_expr(),
                state in prop::array::uniform2(-5.0f64..5.0),
                params in prop::array::uniform2(-5.0f64..5.0),
            ) {
                let m = spec_with(x.clone(), Expr::Const(0.0));
                let b: HashMap<String, f64> = [("X", state[0]), ("Y", state[1]), ("a", params[0]), ("b", params[1])]
                    .iter().map(|(k, v)| (k.to_string(), *v)).collect();
                if let Ok(tree) = x.eval(&b) {
                    if let Ok(fast) = rhs(&m, &state, &params, &[], 0.0) {
                        prop_assert_eq!(tree.to_bits(), fast[0].to_bits());
                    }
                }
            }

            #[test]
            fn cascade_pools(
                state in prop::array::uniform5(0.0f64..2.0),
                params in prop::array::uniform6(0.01f64..1.0),
            ) {
                let m = parse_model(CASCADE).unwrap();
                let d = rhs(&m, &state, &params, &[], 0.0).unwrap();
                // R + RS + Rpp is conserved
                prop_assert!((d[2] + d[3] + d[4]).abs() < 1e-12);
                // S + dS + RS drains through activation at rate k4*RS
                let k4 = params[3];
                let rs = state[3];
                prop_assert!((d[0] + d[1] + d[3] + k4 * rs).abs() < 1e-12);
            }
        }
    }
}
