//! Centralized social-welfare maximization, used as a reference for the
//! decentralized engine.
//!
//! The trade matrix is the solution of a concave QP. The saturating utility
//! is handled with one auxiliary variable per consumer, `y_j <= Σ_i e_ij`,
//! `0 <= y_j <= b_j / 2a_j`, whose quadratic utility equals the saturating
//! one at the optimum. The QP is solved with an operator-splitting (ADMM)
//! scheme on `min ½xᵀPx + qᵀx  s.t.  l <= Ax <= u`.

use nalgebra::{DMatrix, DVector};

use super::{
    consumer_utility, producer_cost, ChargeSource, ClearedTrade, ConsumerParams, GridTariff,
    MarketError, ProducerParams, Settlement,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub enforce_lower_bounds: bool,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Trades at or below this volume are dropped from the settlement.
    pub min_trade: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            enforce_lower_bounds: false,
            tolerance: 1e-9,
            max_iter: 400_000,
            min_trade: 1e-6,
        }
    }
}

/// Objective of the P2P-only program: Σ U_j − Σ C_i − Σ 2γ_ij e_ij.
pub fn trade_matrix_welfare(
    producers: &[ProducerParams],
    consumers: &[ConsumerParams],
    charges: &[Vec<f64>],
    energy: &[Vec<f64>],
) -> Result<f64, MarketError> {
    let mut w = 0.0;
    for (i, p) in producers.iter().enumerate() {
        w -= producer_cost(p, energy[i].iter().sum())?;
        for (j, _) in consumers.iter().enumerate() {
            w -= 2.0 * charges[i][j] * energy[i][j];
        }
    }
    for (j, c) in consumers.iter().enumerate() {
        w += consumer_utility(c, energy.iter().map(|row| row[j]).sum())?;
    }
    Ok(w)
}

pub fn centralized_oracle(
    producers: &[ProducerParams],
    consumers: &[ConsumerParams],
    charges: &dyn ChargeSource,
    tariff: &GridTariff,
    options: &OracleOptions,
) -> Result<Settlement, MarketError> {
    for p in producers {
        p.validate()?;
    }
    for c in consumers {
        c.validate()?;
    }
    let (np, nc) = (producers.len(), consumers.len());
    let lower = |e_min: f64| if options.enforce_lower_bounds { e_min } else { 0.0 };
    check_feasible(producers, consumers, options.enforce_lower_bounds)?;

    let mut settlement = Settlement {
        converged: true,
        ..Settlement::default()
    };
    if np == 0 || nc == 0 {
        settlement.settle_residuals(producers, consumers, tariff);
        return Ok(settlement);
    }

    let gamma: Vec<Vec<f64>> = producers
        .iter()
        .map(|p| consumers.iter().map(|c| charges.service_charge(p, c)).collect())
        .collect::<Result<_, _>>()?;

    let nx = np * nc;
    let n = nx + nc;
    let xi = |i: usize, j: usize| i * nc + j;
    let yi = |j: usize| nx + j;

    let mut p_mat = DMatrix::<f64>::zeros(n, n);
    let mut q = DVector::<f64>::zeros(n);
    for (i, p) in producers.iter().enumerate() {
        for j in 0..nc {
            for k in 0..nc {
                p_mat[(xi(i, j), xi(i, k))] += 2.0 * p.a;
            }
            q[xi(i, j)] = p.b + 2.0 * gamma[i][j];
        }
    }
    for (j, c) in consumers.iter().enumerate() {
        p_mat[(yi(j), yi(j))] = 2.0 * c.a;
        q[yi(j)] = -c.b;
    }

    let m = nx + np + nc + nc + nc;
    let mut a_mat = DMatrix::<f64>::zeros(m, n);
    let mut l = DVector::<f64>::zeros(m);
    let mut u = DVector::<f64>::zeros(m);
    let mut row = 0;
    for k in 0..nx {
        a_mat[(row, k)] = 1.0;
        l[row] = 0.0;
        u[row] = f64::INFINITY;
        row += 1;
    }
    for (i, p) in producers.iter().enumerate() {
        for j in 0..nc {
            a_mat[(row, xi(i, j))] = 1.0;
        }
        l[row] = lower(p.e_min);
        u[row] = p.e_max;
        row += 1;
    }
    for (j, c) in consumers.iter().enumerate() {
        for i in 0..np {
            a_mat[(row, xi(i, j))] = 1.0;
        }
        l[row] = lower(c.e_min);
        u[row] = c.e_max;
        row += 1;
    }
    for j in 0..nc {
        a_mat[(row, yi(j))] = 1.0;
        for i in 0..np {
            a_mat[(row, xi(i, j))] = -1.0;
        }
        l[row] = f64::NEG_INFINITY;
        u[row] = 0.0;
        row += 1;
    }
    for (j, c) in consumers.iter().enumerate() {
        a_mat[(row, yi(j))] = 1.0;
        l[row] = 0.0;
        u[row] = c.saturation();
        row += 1;
    }
    debug_assert_eq!(row, m);

    let x = solve_qp(&p_mat, &q, &a_mat, &l, &u, options)?;

    let energy: Vec<Vec<f64>> = (0..np)
        .map(|i| (0..nc).map(|j| x[xi(i, j)].max(0.0)).collect())
        .collect();
    for (i, p) in producers.iter().enumerate() {
        let sold: f64 = energy[i].iter().sum();
        for (j, c) in consumers.iter().enumerate() {
            let e = energy[i][j];
            if e > options.min_trade {
                settlement.trades.push(ClearedTrade {
                    producer: p.id,
                    consumer: c.id,
                    energy: e,
                    producer_energy: e,
                    consumer_energy: e,
                    price: tariff.clamp(p.marginal_cost(sold) + gamma[i][j]),
                    charge: gamma[i][j],
                    round: 1,
                });
            }
        }
    }
    settlement.settle_residuals(producers, consumers, tariff);
    Ok(settlement)
}

/// On a complete bipartite market the bounds are jointly satisfiable iff
/// the aggregate supply and demand intervals overlap.
fn check_feasible(
    producers: &[ProducerParams],
    consumers: &[ConsumerParams],
    with_lower: bool,
) -> Result<(), MarketError> {
    if !with_lower {
        return Ok(());
    }
    let supply_min: f64 = producers.iter().map(|p| p.e_min).sum();
    let supply_max: f64 = producers.iter().map(|p| p.e_max).sum();
    let demand_min: f64 = consumers.iter().map(|c| c.e_min).sum();
    let demand_max: f64 = consumers.iter().map(|c| c.e_max).sum();
    if supply_min > demand_max + 1e-12 || demand_min > supply_max + 1e-12 {
        return Err(MarketError::Infeasible(format!(
            "supply in [{supply_min}, {supply_max}] kWh cannot meet demand in [{demand_min}, {demand_max}] kWh"
        )));
    }
    Ok(())
}

fn solve_qp(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    options: &OracleOptions,
) -> Result<DVector<f64>, MarketError> {
    const SIGMA: f64 = 1e-6;
    const ALPHA: f64 = 1.6;
    const RHO: f64 = 0.1;
    let (m, n) = a.shape();
    let rho = DVector::from_fn(m, |i, _| if l[i] == u[i] { RHO * 1e3 } else { RHO });
    let rho_a = DMatrix::from_fn(m, n, |i, j| rho[i] * a[(i, j)]);
    let kkt = p + DMatrix::<f64>::identity(n, n) * SIGMA + a.transpose() * &rho_a;
    let chol = kkt
        .cholesky()
        .ok_or_else(|| MarketError::SolverFailed("KKT matrix is not positive definite".into()))?;

    let project = |v: &DVector<f64>| DVector::from_fn(m, |i, _| v[i].clamp(l[i], u[i]));
    let mut x = DVector::<f64>::zeros(n);
    let mut z = project(&DVector::zeros(m));
    let mut y = DVector::<f64>::zeros(m);
    let tol = options.tolerance;

    for _ in 0..options.max_iter {
        let rhs = &x * SIGMA - q + a.transpose() * (rho.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = a * &x_tilde;
        x = &x_tilde * ALPHA + &x * (1.0 - ALPHA);
        let z_relaxed = &z_tilde * ALPHA + &z * (1.0 - ALPHA);
        let z_next = project(&(&z_relaxed + y.component_div(&rho)));
        y += rho.component_mul(&(&z_relaxed - &z_next));
        z = z_next;

        let ax = a * &x;
        let prim = (&ax - &z).amax();
        let dual = (p * &x + q + a.transpose() * &y).amax();
        let scale = 1.0 + ax.amax().max(z.amax()).max(q.amax());
        if prim <= tol * scale && dual <= tol * scale {
            return Ok(x);
        }
    }
    Err(MarketError::SolverFailed(format!(
        "no convergence within {} iterations",
        options.max_iter
    )))
}
