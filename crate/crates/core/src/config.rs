//! JSON representation of a network, with 1-based site indices.
//!
//! ```json
//! {
//!   "n_sites": 3,
//!   "omega": [5.0, 5.0, 5.0],
//!   "couplings": [[1, 2, 2.0], [1, 3, 1.0], [2, 3, 1.0]],
//!   "noise": 0.38
//! }
//! ```
//!
//! `couplings` and `noise` are sparse edge lists `[site, site, value]` and are
//! mirrored on load. `noise` may also be a single number, meaning the same
//! intensity on every pair of distinct sites. Missing sections default to zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::network::{NetworkError, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_sites: usize,
    pub omega: Vec<f64>,
    #[serde(default)]
    pub couplings: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseConfig {
    Uniform(f64),
    Edges(Vec<(usize, usize, f64)>),
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::Edges(Vec::new())
    }
}

fn fill_edges(
    n: usize,
    field: &str,
    edges: &[(usize, usize, f64)],
    target: &mut DMatrix<f64>,
) -> Result<(), NetworkError> {
    let mut seen = DMatrix::from_element(n, n, false);
    for (k, &(a, b, v)) in edges.iter().enumerate() {
        let path = format!("{field}[{k}]");
        for s in [a, b] {
            if s == 0 || s > n {
                return Err(NetworkError::Field {
                    field: path,
                    message: format!("site {s} outside 1..={n}"),
                });
            }
        }
        if a == b {
            return Err(NetworkError::Field { field: path, message: format!("self-coupling on site {a}") });
        }
        let (i, j) = (a - 1, b - 1);
        if seen[(i, j)] {
            return Err(NetworkError::Field { field: path, message: format!("duplicate edge ({a}, {b})") });
        }
        seen[(i, j)] = true;
        seen[(j, i)] = true;
        target[(i, j)] = v;
        target[(j, i)] = v;
    }
    Ok(())
}

impl NetworkConfig {
    pub fn to_spec(&self) -> Result<NetworkSpec<f64>, NetworkError> {
        let n = self.n_sites;
        if self.omega.len() != n {
            return Err(NetworkError::DimensionMismatch {
                field: "omega".into(),
                expected: n,
                found: self.omega.len(),
            });
        }
        let mut spec = NetworkSpec::uncoupled(self.omega.clone());
        fill_edges(n, "couplings", &self.couplings, &mut spec.kappa)?;
        match &self.noise {
            NoiseConfig::Uniform(g) => spec = spec.with_uniform_noise(*g),
            NoiseConfig::Edges(edges) => fill_edges(n, "noise", edges, &mut spec.gamma)?,
        }
        Ok(spec)
    }

    /// Sparse representation of `spec`; zero entries are omitted.
    pub fn from_spec(spec: &NetworkSpec<f64>) -> Self {
        let n = spec.n_sites;
        let edges = |m: &DMatrix<f64>| {
            let mut out = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if m[(i, j)] != 0.0 {
                        out.push((i + 1, j + 1, m[(i, j)]));
                    }
                }
            }
            out
        };
        Self {
            n_sites: n,
            omega: spec.omega.clone(),
            couplings: edges(&spec.kappa),
            noise: NoiseConfig::Edges(edges(&spec.gamma)),
        }
    }
}

pub fn parse_network_config(text: &str) -> Result<NetworkSpec<f64>, NetworkError> {
    let cfg: NetworkConfig = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.to_spec()
}

pub fn serialize_network_config(spec: &NetworkSpec<f64>) -> String {
    serde_json::to_string_pretty(&NetworkConfig::from_spec(spec)).expect("network config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TRIANGLE: &str = r#"{
        "n_sites": 3,
        "omega": [5, 5, 5],
        "couplings": [[1, 2, 2.0], [1, 3, 1.0], [2, 3, 1.0]],
        "noise": 0.38
    }"#;

    #[test]
    fn triangle_config_matches_builder() {
        let spec = parse_network_config(TRIANGLE).unwrap();
        let expected = NetworkSpec::from_edges(vec![5.0; 3], &[(0, 1, 2.0), (0, 2, 1.0), (1, 2, 1.0)], &[])
            .with_uniform_noise(0.38);
        assert_eq!(spec, expected);
        spec.validate().unwrap();
    }

    #[test]
    fn missing_couplings_default_to_zero() {
        let spec = parse_network_config(r#"{"n_sites": 3, "omega": [1, 2, 3], "couplings": []}"#).unwrap();
        assert!(spec.kappa.iter().all(|&k| k == 0.0));
        assert!(spec.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn omega_length_mismatch() {
        let err = parse_network_config(r#"{"n_sites": 3, "omega": [1, 2]}"#).unwrap_err();
        assert_eq!(err, NetworkError::DimensionMismatch { field: "omega".into(), expected: 3, found: 2 });
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_network_config("{\n  \"n_sites\": 3,\n  \"omega\": [1, 2, 3,]\n}").unwrap_err();
        match err {
            NetworkError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_edges_name_the_field() {
        let err = parse_network_config(r#"{"n_sites": 2, "omega": [0, 0], "couplings": [[1, 3, 1.0]]}"#).unwrap_err();
        assert!(matches!(err, NetworkError::Field { ref field, .. } if field == "couplings[0]"), "{err:?}");
    }

    fn arb_spec() -> impl Strategy<Value = NetworkSpec<f64>> {
        (2usize..6).prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], pairs),
                proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..2.0], pairs),
            )
                .prop_map(move |(omega, k, g)| {
                    let mut spec = NetworkSpec::uncoupled(omega);
                    let mut idx = 0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            spec.kappa[(i, j)] = k[idx];
                            spec.kappa[(j, i)] = k[idx];
                            spec.gamma[(i, j)] = g[idx];
                            spec.gamma[(j, i)] = g[idx];
                            idx += 1;
                        }
                    }
                    spec
                })
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(spec in arb_spec()) {
            let text = serialize_network_config(&spec);
            prop_assert_eq!(parse_network_config(&text).unwrap(), spec);
        }
    }
}
