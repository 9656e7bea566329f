//! Fixtures shared by the criterion benches.

use porous_core::config::parse_config_str;
use porous_core::Scenario;

/// The wetting-front reference problem on an `n × n` grid with `tau = 1/100`.
pub fn wetting_front(n: usize) -> Scenario {
    let text = format!(
        "\
[mesh]
nx = {n}
dirichlet = left
[coefficients]
b = logistic lo=0.05 hi=0.40
a = vg kmin=0 kmax=5 alpha=0.5 n=2
dw = vg kmin=0 kmax=100 alpha=0.5 n=2
lambda = affine c0=60 ct=0.2
rho = 1
[time]
tau = 1/100
t_end = 1
[boundary]
u = -0.5 ; w = 1 ; theta = 1
[initial]
u = -2 + 0.5*sin(pi*x)*sin(pi*y)
w = 0.6*(1 + cos(pi*y))
theta = 0.2 + 0.5*x
"
    );
    parse_config_str(&text, ".")
        .and_then(|c| c.scenario_spec())
        .and_then(|s| s.build())
        .expect("built-in bench scenario")
}

#[cfg(test)]
mod tests {
    #[test]
    fn scenario_has_expected_size() {
        let sc = super::wetting_front(8);
        assert_eq!(sc.mesh.node_count(), 81);
        assert_eq!(sc.steps(), 100);
    }
}
